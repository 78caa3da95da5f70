#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "fedsim/clients.hpp"

namespace fedsim {

struct RoundReport {
  int round = 0;
  double avg_test_acc = 0.0;
  double std_test_acc = 0.0;
  double worst5_acc = 0.0;
  double best5_acc = 0.0;
  double avg_train_loss = 0.0;
  double pct_improved = 0.0;
  double min_norm_objective = 0.0;
  std::vector<int> participants;
  std::int64_t wall_ms = 0;
};

struct AccuracyStats {
  double avg = 0.0;
  double std = 0.0;  // population standard deviation
  double worst5 = 0.0;
  double best5 = 0.0;
};

/// Mean, population std, and the means of the lowest / highest
/// ceil(0.05 m) values.
AccuracyStats user_accuracy_stats(std::span<const double> accuracies);

/// Fraction of users whose loss did not increase (after <= before).
double pct_improved(const std::map<int, double>& before,
                    const std::map<int, double>& after);

/// Min-norm objective over the convex hull of the (optionally normalized)
/// updates: zero exactly at a Pareto-stationary point.
double stationarity_residual(std::span<const ClientReturn> returns,
                             bool normalize, double floor = 1e-12);

}  // namespace fedsim
