#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/clients.hpp"
#include "fedsim/numeric.hpp"
#include "fedsim/qp.hpp"

namespace fedsim {

enum class AggregatorKind {
  kFedMgdaPlus,
  kFedMgda,
  kMgdaProx,
  kFedAvg,
  kFedAvgN,
  kFedProx,
  kQFedAvg,
  kAfl,
};

std::string to_string(AggregatorKind kind);
AggregatorKind parse_aggregator_kind(const std::string& name);

enum class ScheduleKind {
  kLinear,       // linear ramp from `initial` to `initial * decay`
  kInverseTime,  // 2 / (c (t + 2))
};

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

struct StepSchedule {
  ScheduleKind kind = ScheduleKind::kLinear;
  double initial = 1.0;
  /// Final multiplier of the linear ramp; 0 means no decay.
  double decay = 0.0;
  int total_rounds = 1;
  double c = 1.0;  // kInverseTime only
};

/// Global step size for round t in [0, total_rounds).
double step_size(const StepSchedule& s, int t);

/// How the reference weighting lambda0 is formed over a round's participants.
enum class Lambda0Mode { kUniform, kSampleCount, kExplicit };

struct AggregatorConfig {
  AggregatorKind kind = AggregatorKind::kFedMgdaPlus;
  double epsilon = 1.0;
  Lambda0Mode lambda0_mode = Lambda0Mode::kUniform;
  std::vector<double> lambda0_weights;  // per user id, kExplicit only
  StepSchedule global_lr;
  double prox_mu = 0.0;
  double q = 0.0;
  double lipschitz = 1.0;
  double afl_lr_lambda = 0.1;
  double afl_lr_w = 0.1;
  bool normalize = true;
  double normalize_floor = 1e-12;
  double qp_tol = kDefaultQpTol;
  int qp_max_iters = -1;  // -1: default_qp_max_iters(m)
};

/// Gradient normalization is on by default only for the algorithms that
/// include it in their definition.
bool default_normalize(AggregatorKind kind);

/// Proximal coefficient the clients must use for this configuration.
double client_prox_mu(const AggregatorConfig& cfg);

void validate(const AggregatorConfig& cfg);

struct ServerState {
  ParamVector w;
  int round = 0;
  std::optional<SimplexWeights> afl_lambda;  // over the full roster
};

ServerState initial_server_state(const AggregatorConfig& cfg, ParamVector w,
                                 std::size_t num_users);

/// What an aggregation step did, for reporting and tests.
struct AggregateInfo {
  std::vector<int> participants;  // sorted user ids
  std::vector<double> weights;    // per participant, same order
  ParamVector direction;          // w_t - w_{t+1} = step * direction
  double step = 0.0;
  double qp_objective = 0.0;  // FedMGDA family only
  bool skipped = false;
};

/// Weights lambda0 restricted to the participants (sorted by user id) and
/// renormalized to sum 1.
SimplexWeights reference_weights(const AggregatorConfig& cfg,
                                 std::span<const ClientReturn> returns);

ServerState aggregate_fedmgda_plus(const ServerState& state,
                                   std::span<const ClientReturn> returns,
                                   const AggregatorConfig& cfg,
                                   AggregateInfo* info = nullptr);
ServerState aggregate_fedavg(const ServerState& state,
                             std::span<const ClientReturn> returns,
                             const AggregatorConfig& cfg,
                             AggregateInfo* info = nullptr);
ServerState aggregate_qfedavg(const ServerState& state,
                              std::span<const ClientReturn> returns,
                              const AggregatorConfig& cfg,
                              AggregateInfo* info = nullptr);
ServerState aggregate_afl(const ServerState& state,
                          std::span<const ClientReturn> returns,
                          const AggregatorConfig& cfg,
                          AggregateInfo* info = nullptr);

/// Dispatches on cfg.kind. MGDA-Prox and FedProx share the server logic of
/// FedMGDA+ and FedAvg; their proximal term lives in client_update.
ServerState aggregate(const ServerState& state,
                      std::span<const ClientReturn> returns,
                      const AggregatorConfig& cfg,
                      AggregateInfo* info = nullptr);

}  // namespace fedsim
