#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "fedsim/models.hpp"
#include "fedsim/numeric.hpp"

namespace fedsim {

/// One simulated user: local data plus the local solver settings.
///
/// `loss_offset` and `loss_scale` describe how the user's reported objective
/// relates to its true one (f -> loss_scale * f + loss_offset). They stay at
/// 0 and 1 except for an adversary; see apply_attack.
struct UserTask {
  int user_id = 0;
  ModelSpec spec;
  Batch train;
  Batch val;
  Batch test;
  double local_lr = 0.01;
  int local_epochs = 1;
  std::size_t batch_size = 10;
  double loss_offset = 0.0;
  double loss_scale = 1.0;
};

struct ClientReturn {
  int user_id = 0;
  ParamVector update;  // w0 - w after the local epochs
  double train_loss_before = 0.0;  // reported loss on the full train set at w0
  double train_loss_after = 0.0;
  std::size_t sample_count = 0;
};

enum class AttackMode { kNone, kBias, kScaling };

std::string to_string(AttackMode mode);
AttackMode parse_attack_mode(const std::string& name);

struct AttackSpec {
  AttackMode mode = AttackMode::kNone;
  double magnitude = 0.0;
  int adversary_id = 0;
  bool always_participates = false;
};

void validate(const AttackSpec& attack);

/// Called with the local iterate after every minibatch step.
using LocalStepObserver = std::function<void(const ParamVector&)>;

/// k epochs of minibatch SGD. Each epoch reshuffles the train set with `rng`
/// and walks it in ceil(n / b) batches (the last one may be short). With
/// prox_mu > 0 every step also pulls towards w0 (FedProx local objective).
ClientReturn client_update(const UserTask& task, const ParamVector& w0,
                           Rng& rng, double prox_mu,
                           const LocalStepObserver& observer = {});

/// g / ||g||, or the zero vector when ||g|| < floor.
ParamVector normalize_update(const ParamVector& g, double floor = 1e-12);

/// Returns the task an adversary would run. Bias adds `magnitude` to the
/// reported loss and leaves gradients alone; scaling multiplies both loss and
/// every local gradient by `magnitude`. Other users are returned unchanged.
UserTask apply_attack(const UserTask& task, const AttackSpec& attack);

}  // namespace fedsim
