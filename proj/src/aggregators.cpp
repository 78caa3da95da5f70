#include "fedsim/aggregators.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

// Losses enter q-FedAvg as F^(q-1); the shift keeps that finite at F = 0.
constexpr double kQFedAvgLossShift = 1e-10;

std::vector<const ClientReturn*> canonical(
    std::span<const ClientReturn> returns) {
  if (returns.empty()) throw ArgumentError("aggregate: no client returns");
  std::vector<const ClientReturn*> out;
  out.reserve(returns.size());
  for (const ClientReturn& r : returns) out.push_back(&r);
  std::stable_sort(out.begin(), out.end(),
                   [](const ClientReturn* a, const ClientReturn* b) {
                     return a->user_id < b->user_id;
                   });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i]->user_id == out[i - 1]->user_id) {
      throw ArgumentError("aggregate: duplicate return from user " +
                          std::to_string(out[i]->user_id));
    }
  }
  return out;
}

std::vector<ParamVector> columns(const std::vector<const ClientReturn*>& rs,
                                 bool normalize, double floor) {
  std::vector<ParamVector> out;
  out.reserve(rs.size());
  for (const ClientReturn* r : rs) {
    out.push_back(normalize ? normalize_update(r->update, floor) : r->update);
  }
  return out;
}

SimplexWeights reference_weights_sorted(
    const AggregatorConfig& cfg, const std::vector<const ClientReturn*>& rs) {
  switch (cfg.lambda0_mode) {
    case Lambda0Mode::kUniform:
      return SimplexWeights::uniform(rs.size());
    case Lambda0Mode::kSampleCount: {
      std::vector<double> w;
      for (const ClientReturn* r : rs) {
        w.push_back(static_cast<double>(r->sample_count));
      }
      return SimplexWeights::normalized(std::move(w));
    }
    case Lambda0Mode::kExplicit: {
      std::vector<double> w;
      for (const ClientReturn* r : rs) {
        if (r->user_id < 0 ||
            static_cast<std::size_t>(r->user_id) >= cfg.lambda0_weights.size()) {
          throw ArgumentError("lambda0 has no weight for user " +
                              std::to_string(r->user_id));
        }
        w.push_back(cfg.lambda0_weights[r->user_id]);
      }
      return SimplexWeights::normalized(std::move(w));
    }
  }
  throw ArgumentError("unknown lambda0 mode");
}

ServerState advance(const ServerState& state, const ParamVector& direction,
                    double step) {
  ServerState next = state;
  next.w = axpy(-step, direction, state.w);
  next.round = state.round + 1;
  return next;
}

void fill_info(AggregateInfo* info, const std::vector<const ClientReturn*>& rs,
               std::vector<double> weights, const ParamVector& direction,
               double step) {
  if (info == nullptr) return;
  info->participants.clear();
  for (const ClientReturn* r : rs) info->participants.push_back(r->user_id);
  info->weights = std::move(weights);
  info->direction = direction;
  info->step = step;
  info->qp_objective = 0.0;
  info->skipped = false;
}

}  // namespace

std::string to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::kFedMgdaPlus:
      return "fedmgda_plus";
    case AggregatorKind::kFedMgda:
      return "fedmgda";
    case AggregatorKind::kMgdaProx:
      return "mgda_prox";
    case AggregatorKind::kFedAvg:
      return "fedavg";
    case AggregatorKind::kFedAvgN:
      return "fedavg_n";
    case AggregatorKind::kFedProx:
      return "fedprox";
    case AggregatorKind::kQFedAvg:
      return "qfedavg";
    case AggregatorKind::kAfl:
      return "afl";
  }
  return "unknown";
}

AggregatorKind parse_aggregator_kind(const std::string& name) {
  for (auto kind :
       {AggregatorKind::kFedMgdaPlus, AggregatorKind::kFedMgda,
        AggregatorKind::kMgdaProx, AggregatorKind::kFedAvg,
        AggregatorKind::kFedAvgN, AggregatorKind::kFedProx,
        AggregatorKind::kQFedAvg, AggregatorKind::kAfl}) {
    if (to_string(kind) == name) return kind;
  }
  throw ArgumentError("unknown algorithm '" + name + "'");
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kLinear ? "linear" : "inverse_time";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::kLinear;
  if (name == "inverse_time") return ScheduleKind::kInverseTime;
  throw ArgumentError("unknown step schedule '" + name + "'");
}

double step_size(const StepSchedule& s, int t) {
  if (t < 0 || t >= s.total_rounds) {
    throw ArgumentError("step_size: round " + std::to_string(t) +
                        " outside [0, " + std::to_string(s.total_rounds) + ")");
  }
  if (s.kind == ScheduleKind::kInverseTime) {
    return 2.0 / (s.c * (t + 2.0));
  }
  if (s.decay == 0.0 || s.total_rounds == 1) return s.initial;
  const double frac = static_cast<double>(t) / (s.total_rounds - 1);
  return s.initial * (1.0 - (1.0 - s.decay) * frac);
}

bool default_normalize(AggregatorKind kind) {
  return kind == AggregatorKind::kFedMgdaPlus ||
         kind == AggregatorKind::kMgdaProx || kind == AggregatorKind::kFedAvgN;
}

double client_prox_mu(const AggregatorConfig& cfg) {
  return (cfg.kind == AggregatorKind::kMgdaProx ||
          cfg.kind == AggregatorKind::kFedProx)
             ? cfg.prox_mu
             : 0.0;
}

void validate(const AggregatorConfig& cfg) {
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon <= 1.0)) {
    throw ArgumentError("epsilon must lie in [0, 1]");
  }
  if (!(cfg.q >= 0.0)) throw ArgumentError("q must be >= 0");
  if (cfg.kind == AggregatorKind::kQFedAvg && !(cfg.lipschitz > 0.0)) {
    throw ArgumentError("q-FedAvg needs L > 0");
  }
  if (!(cfg.prox_mu >= 0.0)) throw ArgumentError("prox_mu must be >= 0");
  if (!(cfg.afl_lr_lambda >= 0.0) || !(cfg.afl_lr_w >= 0.0)) {
    throw ArgumentError("AFL step sizes must be >= 0");
  }
  if (cfg.global_lr.total_rounds < 1) {
    throw ArgumentError("step schedule needs total_rounds >= 1");
  }
  if (cfg.global_lr.kind == ScheduleKind::kLinear) {
    if (!(cfg.global_lr.initial >= 0.0)) {
      throw ArgumentError("initial step size must be >= 0");
    }
    if (!(cfg.global_lr.decay >= 0.0 && cfg.global_lr.decay <= 1.0)) {
      throw ArgumentError("decay must lie in [0, 1]");
    }
  } else if (!(cfg.global_lr.c > 0.0)) {
    throw ArgumentError("inverse_time schedule needs c > 0");
  }
  if (cfg.lambda0_mode == Lambda0Mode::kExplicit) {
    for (double w : cfg.lambda0_weights) {
      if (!(w >= 0.0)) throw ArgumentError("lambda0 weights must be >= 0");
    }
  }
  if (!(cfg.normalize_floor > 0.0) || !(cfg.qp_tol > 0.0)) {
    throw ArgumentError("normalize_floor and qp_tol must be > 0");
  }
}

ServerState initial_server_state(const AggregatorConfig& cfg, ParamVector w,
                                 std::size_t num_users) {
  ServerState s;
  s.w = std::move(w);
  if (cfg.kind == AggregatorKind::kAfl) {
    s.afl_lambda = SimplexWeights::uniform(num_users);
  }
  return s;
}

SimplexWeights reference_weights(const AggregatorConfig& cfg,
                                 std::span<const ClientReturn> returns) {
  return reference_weights_sorted(cfg, canonical(returns));
}

ServerState aggregate_fedmgda_plus(const ServerState& state,
                                   std::span<const ClientReturn> returns,
                                   const AggregatorConfig& cfg,
                                   AggregateInfo* info) {
  const auto rs = canonical(returns);
  QpProblem problem;
  problem.gradients = columns(rs, cfg.normalize, cfg.normalize_floor);
  problem.lambda0 = reference_weights_sorted(cfg, rs);
  problem.epsilon =
      cfg.kind == AggregatorKind::kFedMgda ? 1.0 : cfg.epsilon;
  const QpSolution sol = solve_min_norm(problem, cfg.qp_tol, cfg.qp_max_iters);
  const double step = step_size(cfg.global_lr, state.round);
  fill_info(info, rs, sol.lambda.values(), sol.direction, step);
  if (info != nullptr) info->qp_objective = sol.objective;
  return advance(state, sol.direction, step);
}

ServerState aggregate_fedavg(const ServerState& state,
                             std::span<const ClientReturn> returns,
                             const AggregatorConfig& cfg, AggregateInfo* info) {
  const auto rs = canonical(returns);
  const bool normalize = cfg.kind == AggregatorKind::kFedAvgN || cfg.normalize;
  const auto cols = columns(rs, normalize, cfg.normalize_floor);
  const SimplexWeights weights = reference_weights_sorted(cfg, rs);
  const ParamVector direction = weighted_sum(weights.view(), cols);
  const double step = step_size(cfg.global_lr, state.round);
  fill_info(info, rs, weights.values(), direction, step);
  return advance(state, direction, step);
}

ServerState aggregate_qfedavg(const ServerState& state,
                              std::span<const ClientReturn> returns,
                              const AggregatorConfig& cfg,
                              AggregateInfo* info) {
  const auto rs = canonical(returns);
  const auto cols = columns(rs, cfg.normalize, cfg.normalize_floor);
  const double q = cfg.q;
  const double lip = cfg.lipschitz;

  std::vector<ParamVector> deltas;
  std::vector<double> numerator_weights;
  double denominator = 0.0;
  for (std::size_t k = 0; k < rs.size(); ++k) {
    const double raw = rs[k]->train_loss_before;
    if (!(raw >= 0.0)) {
      throw ArgumentError("q-FedAvg: user " + std::to_string(rs[k]->user_id) +
                          " reported a negative loss");
    }
    const double f = raw + kQFedAvgLossShift;
    ParamVector delta = scale(lip, cols[k]);
    const double fq = std::pow(f, q);
    numerator_weights.push_back(fq);
    denominator += q * std::pow(f, q - 1.0) * squared_norm(delta) + lip * fq;
    deltas.push_back(std::move(delta));
  }
  const ParamVector numerator = weighted_sum(numerator_weights, deltas);

  if (!(denominator > 0.0) || !std::isfinite(denominator)) {
    std::fprintf(stderr,
                 "warning: q-FedAvg round %d skipped (denominator %g)\n",
                 state.round, denominator);
    fill_info(info, rs, numerator_weights, ParamVector(state.w.size()), 0.0);
    if (info != nullptr) info->skipped = true;
    ServerState next = state;
    next.round = state.round + 1;
    return next;
  }
  // w <- w - numerator / denominator, written as a unit step along the
  // direction numerator / denominator.
  std::vector<double> weights = numerator_weights;
  for (double& w : weights) w /= denominator;
  const ParamVector direction = scale(1.0 / denominator, numerator);
  fill_info(info, rs, std::move(weights), direction, 1.0);
  return advance(state, direction, 1.0);
}

ServerState aggregate_afl(const ServerState& state,
                          std::span<const ClientReturn> returns,
                          const AggregatorConfig& cfg, AggregateInfo* info) {
  const auto rs = canonical(returns);
  if (!state.afl_lambda.has_value()) {
    throw ArgumentError("AFL: server state carries no lambda");
  }
  const std::size_t n = state.afl_lambda->size();
  bool full = rs.size() == n;
  for (std::size_t k = 0; full && k < rs.size(); ++k) {
    full = rs[k]->user_id == static_cast<int>(k);
  }
  if (!full) {
    throw UnsupportedError("AFL requires every user to participate (" +
                           std::to_string(rs.size()) + " of " +
                           std::to_string(n) + " returned)");
  }

  std::vector<double> ascent(n);
  for (std::size_t k = 0; k < n; ++k) {
    ascent[k] = (*state.afl_lambda)[k] + cfg.afl_lr_lambda * rs[k]->train_loss_before;
  }
  SimplexWeights lambda =
      project_box_simplex(ascent, SimplexWeights::uniform(n), 1.0);
  const auto cols = columns(rs, cfg.normalize, cfg.normalize_floor);
  const ParamVector direction = weighted_sum(lambda.view(), cols);
  fill_info(info, rs, lambda.values(), direction, cfg.afl_lr_w);
  ServerState next = advance(state, direction, cfg.afl_lr_w);
  next.afl_lambda = std::move(lambda);
  return next;
}

ServerState aggregate(const ServerState& state,
                      std::span<const ClientReturn> returns,
                      const AggregatorConfig& cfg, AggregateInfo* info) {
  switch (cfg.kind) {
    case AggregatorKind::kFedMgdaPlus:
    case AggregatorKind::kFedMgda:
    case AggregatorKind::kMgdaProx:
      return aggregate_fedmgda_plus(state, returns, cfg, info);
    case AggregatorKind::kFedAvg:
    case AggregatorKind::kFedAvgN:
    case AggregatorKind::kFedProx:
      return aggregate_fedavg(state, returns, cfg, info);
    case AggregatorKind::kQFedAvg:
      return aggregate_qfedavg(state, returns, cfg, info);
    case AggregatorKind::kAfl:
      return aggregate_afl(state, returns, cfg, info);
  }
  throw ArgumentError("unknown algorithm");
}

}  // namespace fedsim
