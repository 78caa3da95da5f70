#include "fedsim/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/errors.hpp"
#include "fedsim/qp.hpp"

namespace fedsim {

AccuracyStats user_accuracy_stats(std::span<const double> accuracies) {
  const std::size_t m = accuracies.size();
  if (m == 0) throw ArgumentError("user_accuracy_stats: no users");
  AccuracyStats s;
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  s.avg = sum / m;
  double sq = 0.0;
  for (double a : accuracies) sq += (a - s.avg) * (a - s.avg);
  s.std = std::sqrt(sq / m);

  std::vector<double> sorted(accuracies.begin(), accuracies.end());
  std::sort(sorted.begin(), sorted.end());
  // ceil(0.05 m) computed in integers: (m + 19) / 20.
  const std::size_t tail = (m + 19) / 20;
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < tail; ++i) {
    lo += sorted[i];
    hi += sorted[m - 1 - i];
  }
  s.worst5 = lo / tail;
  s.best5 = hi / tail;
  // The tail means bound the mean exactly; rounding in the separate sums can
  // put it an ulp outside.
  s.avg = std::clamp(s.avg, s.worst5, s.best5);
  return s;
}

double pct_improved(const std::map<int, double>& before,
                    const std::map<int, double>& after) {
  if (before.empty()) throw ArgumentError("pct_improved: no users");
  if (before.size() != after.size()) {
    throw ArgumentError("pct_improved: user sets differ");
  }
  std::size_t improved = 0;
  for (const auto& [user, loss_before] : before) {
    const auto it = after.find(user);
    if (it == after.end()) {
      throw ArgumentError("pct_improved: user " + std::to_string(user) +
                          " missing after the round");
    }
    if (it->second <= loss_before) ++improved;
  }
  return static_cast<double>(improved) / before.size();
}

double stationarity_residual(std::span<const ClientReturn> returns,
                             bool normalize, double floor) {
  if (returns.empty()) throw ArgumentError("stationarity_residual: no users");
  std::vector<const ClientReturn*> rs;
  for (const ClientReturn& r : returns) rs.push_back(&r);
  std::stable_sort(rs.begin(), rs.end(), [](auto* a, auto* b) {
    return a->user_id < b->user_id;
  });
  QpProblem p;
  for (const ClientReturn* r : rs) {
    p.gradients.push_back(normalize ? normalize_update(r->update, floor)
                                    : r->update);
  }
  p.lambda0 = SimplexWeights::uniform(rs.size());
  p.epsilon = 1.0;
  return solve_min_norm(p).objective;
}

}  // namespace fedsim
