#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedsim/numeric.hpp"

namespace fedsim::oracle {

struct GridResult {
  double objective = 0.0;
  std::vector<double> lambda;
  std::uint64_t points = 0;
};

/// Brute-force minimum of ||sum_i lambda_i g_i||^2 over the simplex cut by
/// the box |lambda_i - lambda0_i| <= epsilon. The first m-2 coordinates walk
/// the multiples of `step` inside their feasible range, together with the
/// range ends and the values where the remaining coordinates' feasible set
/// changes shape; the last two are minimized exactly along their
/// one-dimensional feasible segment.
GridResult grid_min_norm(std::span<const ParamVector> gradients,
                         std::span<const double> lambda0, double epsilon,
                         double step = 1e-3);

/// Exact minimum of the same problem by enumerating every assignment of the
/// coordinates to {lower bound, upper bound, free}, solving the stationarity
/// system on each face with an SVD and keeping the best feasible point.
/// Cost grows as 3^m, so m is limited to 12.
GridResult face_enumeration_min_norm(std::span<const ParamVector> gradients,
                                     std::span<const double> lambda0,
                                     double epsilon);

/// Closed-form minimum-norm point of the segment [g1, g2]:
/// lambda_1 = clip(<g2 - g1, g2> / ||g1 - g2||^2, 0, 1).
GridResult two_vector_min_norm(const ParamVector& g1, const ParamVector& g2);

struct QpSuiteReport {
  int instances = 0;
  int failures = 0;
  double max_abs_error = 0.0;    // solver vs grid
  double max_exact_error = 0.0;  // solver vs face enumeration
  double seconds = 0.0;
};

/// Random instances with m <= 5, d <= 4, epsilon in {0, 0.25, 0.5, 1} and a
/// random lambda0; compares solve_min_norm against both grid_min_norm and
/// face_enumeration_min_norm. An instance fails if either differs by more
/// than `tolerance`.
QpSuiteReport run_qp_oracle_suite(int instances, std::uint64_t seed,
                                  double tolerance = 1e-5,
                                  bool verbose = false);

}  // namespace fedsim::oracle
