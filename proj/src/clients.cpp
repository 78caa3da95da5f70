#include "fedsim/clients.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

std::string to_string(AttackMode mode) {
  switch (mode) {
    case AttackMode::kNone:
      return "none";
    case AttackMode::kBias:
      return "bias";
    case AttackMode::kScaling:
      return "scaling";
  }
  return "unknown";
}

AttackMode parse_attack_mode(const std::string& name) {
  if (name == "none") return AttackMode::kNone;
  if (name == "bias") return AttackMode::kBias;
  if (name == "scaling") return AttackMode::kScaling;
  throw ArgumentError("unknown attack mode '" + name + "'");
}

void validate(const AttackSpec& attack) {
  if (attack.mode == AttackMode::kBias && !(attack.magnitude >= 0.0)) {
    throw ArgumentError("bias attack magnitude must be >= 0");
  }
  if (attack.mode == AttackMode::kScaling && !(attack.magnitude > 0.0)) {
    throw ArgumentError("scaling attack magnitude must be > 0");
  }
}

ClientReturn client_update(const UserTask& task, const ParamVector& w0,
                           Rng& rng, double prox_mu,
                           const LocalStepObserver& observer) {
  const std::size_t n = task.train.size();
  if (n == 0) {
    throw ArgumentError("user " + std::to_string(task.user_id) +
                        ": empty train set");
  }
  if (task.local_epochs < 1 || task.batch_size < 1 || !(task.local_lr >= 0.0)) {
    throw ArgumentError("user " + std::to_string(task.user_id) +
                        ": invalid local solver settings");
  }
  if (!(prox_mu >= 0.0)) throw ArgumentError("prox_mu must be >= 0");
  if (w0.size() != param_dim(task.spec)) {
    throw DimensionError("user " + std::to_string(task.user_id) +
                         ": model has " + std::to_string(param_dim(task.spec)) +
                         " parameters, server sent " +
                         std::to_string(w0.size()));
  }

  const double eta = task.local_lr;
  const double scale = task.loss_scale;
  ParamVector w = w0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < task.local_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += task.batch_size) {
      const std::size_t stop = std::min(n, start + task.batch_size);
      const Batch batch = task.train.select(
          std::span<const std::size_t>(order).subspan(start, stop - start));
      const ParamVector g = grad(task.spec, w, batch);
      for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] -= eta * (scale * g[j] + prox_mu * (w[j] - w0[j]));
      }
      if (observer) observer(w);
    }
  }

  ClientReturn out;
  out.user_id = task.user_id;
  out.update = subtract(w0, w);
  out.train_loss_before =
      scale * loss(task.spec, w0, task.train) + task.loss_offset;
  out.train_loss_after =
      scale * loss(task.spec, w, task.train) + task.loss_offset;
  out.sample_count = n;
  return out;
}

ParamVector normalize_update(const ParamVector& g, double floor) {
  if (!(floor > 0.0)) throw ArgumentError("normalize_update: floor must be > 0");
  const double norm = l2_norm(g);
  if (!(norm >= floor)) return ParamVector(g.size());
  ParamVector out = g;
  for (double& v : out) v /= norm;
  return out;
}

UserTask apply_attack(const UserTask& task, const AttackSpec& attack) {
  validate(attack);
  UserTask out = task;
  if (attack.adversary_id != task.user_id) return out;
  switch (attack.mode) {
    case AttackMode::kNone:
      break;
    case AttackMode::kBias:
      out.loss_offset += attack.magnitude;
      break;
    case AttackMode::kScaling:
      out.loss_scale *= attack.magnitude;
      out.loss_offset *= attack.magnitude;
      break;
  }
  return out;
}

}  // namespace fedsim
