#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedsim/numeric.hpp"

namespace fedsim {

/// A point of the probability simplex: nonnegative, summing to 1 (+-1e-9).
class SimplexWeights {
 public:
  static constexpr double kSumTolerance = 1e-9;

  /// Throws ArgumentError if the weights are not on the simplex.
  explicit SimplexWeights(std::vector<double> weights);
  static SimplexWeights uniform(std::size_t m);
  /// Rescales nonnegative weights to sum 1.
  static SimplexWeights normalized(std::vector<double> weights);

  std::size_t size() const { return weights_.size(); }
  double operator[](std::size_t i) const { return weights_[i]; }
  std::span<const double> view() const { return weights_; }
  const std::vector<double>& values() const { return weights_; }

  friend bool operator==(const SimplexWeights&,
                         const SimplexWeights&) = default;

 private:
  std::vector<double> weights_;
};

/// min ||sum_i lambda_i g_i||^2  over  lambda in simplex,
///                                     ||lambda - lambda0||_inf <= epsilon.
struct QpProblem {
  std::vector<ParamVector> gradients;
  SimplexWeights lambda0 = SimplexWeights::uniform(1);
  double epsilon = 1.0;
};

struct QpSolution {
  SimplexWeights lambda = SimplexWeights::uniform(1);
  ParamVector direction;  // sum_i lambda_i g_i
  double objective = 0.0;  // ||direction||^2
  int iterations = 0;
  bool converged = false;
};

inline constexpr double kDefaultQpTol = 1e-10;
int default_qp_max_iters(std::size_t m);

/// Euclidean projection of v onto the simplex intersected with the box
/// [max(0, lambda0_i - eps), min(1, lambda0_i + eps)].
///
/// Bisection on the multiplier theta of the sum constraint, with
/// lambda_i = clip(v_i - theta, lo_i, hi_i), until |sum - 1| <= 1e-12; the
/// multiplier is then recomputed in closed form from the free coordinates.
SimplexWeights project_box_simplex(std::span<const double> v,
                                   const SimplexWeights& lambda0,
                                   double epsilon);

/// Gram matrix G_ij = <g_i, g_j>, row-major m x m.
std::vector<double> gram_matrix(std::span<const ParamVector> gradients);

/// Projected gradient on lambda -> lambda^T G lambda with the fixed step
/// 1 / (2 trace(G)), started at lambda0. Stops when an iteration moves lambda
/// by at most `tol` in the max norm or after `max_iters` iterations and
/// returns the best iterate seen. When `objective_trace` is given it receives
/// the objective of the start point and of every iterate.
QpSolution solve_min_norm(const QpProblem& problem, double tol = kDefaultQpTol,
                          int max_iters = -1,
                          std::vector<double>* objective_trace = nullptr);

/// True iff some convex combination of the gradients has norm <= tol.
bool is_pareto_stationary(std::span<const ParamVector> gradients, double tol);

}  // namespace fedsim
