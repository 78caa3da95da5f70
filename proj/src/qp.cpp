#include "fedsim/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

constexpr double kProjectionSumTol = 1e-12;
constexpr int kMaxBisections = 200;

double clip(double x, double lo, double hi) {
  return std::min(std::max(x, lo), hi);
}

double quadratic_form(const std::vector<double>& gram,
                      std::span<const double> lambda) {
  const std::size_t m = lambda.size();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) row += gram[i * m + j] * lambda[j];
    total += lambda[i] * row;
  }
  return total;
}

struct Box {
  std::vector<double> lo, hi;
};

Box box_bounds(const SimplexWeights& lambda0, double epsilon) {
  Box b;
  for (std::size_t i = 0; i < lambda0.size(); ++i) {
    b.lo.push_back(std::max(0.0, lambda0[i] - epsilon));
    b.hi.push_back(std::min(1.0, lambda0[i] + epsilon));
  }
  return b;
}

// Minimizes lambda^T G lambda over the free coordinates with the others held
// fixed and sum(lambda) = 1. The KKT matrix is singular whenever G restricted
// to the free set is; a complete orthogonal decomposition still returns an
// exact minimizer because the system is consistent.
std::optional<std::vector<double>> solve_face(
    const std::vector<double>& gram, const std::vector<double>& lambda,
    const std::vector<std::size_t>& free) {
  const std::size_t m = lambda.size();
  const std::size_t f = free.size();
  std::vector<bool> is_free(m, false);
  for (std::size_t i : free) is_free[i] = true;
  double mass = 1.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (!is_free[j]) mass -= lambda[j];
  }
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(f + 1, f + 1);
  Eigen::VectorXd rhs(f + 1);
  for (std::size_t a = 0; a < f; ++a) {
    double fixed_part = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!is_free[j]) fixed_part += gram[free[a] * m + j] * lambda[j];
    }
    for (std::size_t b = 0; b < f; ++b) {
      kkt(a, b) = 2.0 * gram[free[a] * m + free[b]];
    }
    kkt(a, f) = 1.0;
    kkt(f, a) = 1.0;
    rhs(a) = -2.0 * fixed_part;
  }
  rhs(f) = mass;
  const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
  if ((kkt * sol - rhs).norm() > 1e-8 * (1.0 + rhs.norm())) return std::nullopt;
  std::vector<double> out = lambda;
  for (std::size_t a = 0; a < f; ++a) out[free[a]] = sol(a);
  return out;
}

// Primal active-set method warm-started at a feasible point. Fixed-step
// projected gradient identifies the optimal face quickly but converges on it
// only linearly, with a rate set by the conditioning of G; solving each face
// exactly removes that dependence.
std::vector<double> refine_active_set(const std::vector<double>& gram,
                                      const Box& box,
                                      std::vector<double> lambda) {
  enum class Status { kFree, kLower, kUpper, kPinned };
  const std::size_t m = lambda.size();
  constexpr double kSnap = 1e-12;
  double trace = 0.0;
  for (std::size_t i = 0; i < m; ++i) trace += gram[i * m + i];
  const double kkt_tol = 1e-12 * (1.0 + trace);

  std::vector<Status> status(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (box.hi[i] - box.lo[i] <= 0.0) {
      status[i] = Status::kPinned;
      lambda[i] = box.lo[i];
    } else if (lambda[i] <= box.lo[i] + kSnap) {
      status[i] = Status::kLower;
      lambda[i] = box.lo[i];
    } else if (lambda[i] >= box.hi[i] - kSnap) {
      status[i] = Status::kUpper;
      lambda[i] = box.hi[i];
    } else {
      status[i] = Status::kFree;
    }
  }

  const int max_steps = static_cast<int>(10 * m + 50);
  for (int step = 0; step < max_steps; ++step) {
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < m; ++i) {
      if (status[i] == Status::kFree) free.push_back(i);
    }
    bool moved = false;
    if (!free.empty()) {
      const auto target = solve_face(gram, lambda, free);
      if (!target) break;
      const double now = quadratic_form(gram, lambda);
      const double then = quadratic_form(gram, *target);
      double longest = 0.0;
      for (std::size_t i : free) {
        longest = std::max(longest, std::abs((*target)[i] - lambda[i]));
      }
      // The face minimizer can tie with the current point up to rounding.
      if (longest > 1e-15 && then <= now + 1e-15 * (1.0 + std::abs(now))) {
        double alpha = 1.0;
        std::size_t blocking = m;
        for (std::size_t i : free) {
          const double p = (*target)[i] - lambda[i];
          if (p < 0.0 && lambda[i] + p < box.lo[i]) {
            const double a = (box.lo[i] - lambda[i]) / p;
            if (a < alpha) {
              alpha = a;
              blocking = i;
            }
          } else if (p > 0.0 && lambda[i] + p > box.hi[i]) {
            const double a = (box.hi[i] - lambda[i]) / p;
            if (a < alpha) {
              alpha = a;
              blocking = i;
            }
          }
        }
        for (std::size_t i : free) {
          lambda[i] += alpha * ((*target)[i] - lambda[i]);
        }
        if (blocking < m) {
          const bool lower = (*target)[blocking] < lambda[blocking] ||
                             lambda[blocking] <= box.lo[blocking] + kSnap;
          status[blocking] = lower ? Status::kLower : Status::kUpper;
          lambda[blocking] = lower ? box.lo[blocking] : box.hi[blocking];
        }
        moved = true;
      }
    }
    if (moved) continue;

    // Optimal on the current face: check the bound multipliers. With the
    // sum multiplier written as -c, a coordinate at its lower bound needs
    // grad_i >= c and one at its upper bound needs grad_i <= c.
    std::vector<double> g(m);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += gram[i * m + j] * lambda[j];
      g[i] = 2.0 * s;
    }
    double c = 0.0;
    if (!free.empty()) {
      for (std::size_t i : free) c += g[i];
      c /= static_cast<double>(free.size());
    } else {
      double upper_max = -std::numeric_limits<double>::infinity();
      double lower_min = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        if (status[i] == Status::kUpper) upper_max = std::max(upper_max, g[i]);
        if (status[i] == Status::kLower) lower_min = std::min(lower_min, g[i]);
      }
      if (std::isinf(upper_max) && std::isinf(lower_min)) break;
      c = std::isinf(upper_max)   ? lower_min
          : std::isinf(lower_min) ? upper_max
                                  : 0.5 * (upper_max + lower_min);
    }
    std::size_t worst = m;
    double worst_violation = kkt_tol;
    for (std::size_t i = 0; i < m; ++i) {
      double v = 0.0;
      if (status[i] == Status::kLower) v = c - g[i];
      if (status[i] == Status::kUpper) v = g[i] - c;
      if (v > worst_violation) {
        worst_violation = v;
        worst = i;
      }
    }
    if (worst == m) break;
    status[worst] = Status::kFree;
  }
  return lambda;
}

}  // namespace

SimplexWeights::SimplexWeights(std::vector<double> weights)
    : weights_(std::move(weights)) {
  if (weights_.empty()) throw ArgumentError("simplex weights: empty");
  double sum = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ArgumentError("simplex weights: negative or non-finite entry " +
                          std::to_string(w));
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw ArgumentError("simplex weights sum to " + std::to_string(sum));
  }
}

SimplexWeights SimplexWeights::uniform(std::size_t m) {
  if (m == 0) throw ArgumentError("simplex weights: empty");
  return SimplexWeights(
      std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

SimplexWeights SimplexWeights::normalized(std::vector<double> weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ArgumentError("simplex weights: negative entry");
    sum += w;
  }
  if (!(sum > 0.0)) throw ArgumentError("simplex weights: all zero");
  for (double& w : weights) w /= sum;
  return SimplexWeights(std::move(weights));
}

int default_qp_max_iters(std::size_t m) {
  return static_cast<int>(10 * m * m + 1000);
}

SimplexWeights project_box_simplex(std::span<const double> v,
                                   const SimplexWeights& lambda0,
                                   double epsilon) {
  const std::size_t m = v.size();
  if (m != lambda0.size()) {
    throw DimensionError("project_box_simplex: " + std::to_string(m) +
                         " values for " + std::to_string(lambda0.size()) +
                         " reference weights");
  }
  if (!(epsilon >= 0.0)) {
    throw ArgumentError("project_box_simplex: epsilon must be >= 0");
  }
  std::vector<double> lo(m), hi(m);
  double sum_lo = 0.0, sum_hi = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    lo[i] = std::max(0.0, lambda0[i] - epsilon);
    hi[i] = std::min(1.0, lambda0[i] + epsilon);
    sum_lo += lo[i];
    sum_hi += hi[i];
  }
  if (sum_lo > 1.0 + SimplexWeights::kSumTolerance ||
      sum_hi < 1.0 - SimplexWeights::kSumTolerance) {
    throw InfeasibleError("project_box_simplex: empty feasible set");
  }

  std::vector<double> out(m);
  auto fill = [&](double theta) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      out[i] = clip(v[i] - theta, lo[i], hi[i]);
      s += out[i];
    }
    return s;
  };

  // sum(theta) is nonincreasing; at theta_lo every coordinate sits at its
  // upper bound and at theta_hi at its lower bound.
  double theta_lo = v[0] - hi[0], theta_hi = v[0] - lo[0];
  for (std::size_t i = 1; i < m; ++i) {
    theta_lo = std::min(theta_lo, v[i] - hi[i]);
    theta_hi = std::max(theta_hi, v[i] - lo[i]);
  }
  double theta = 0.5 * (theta_lo + theta_hi);
  double sum = fill(theta);
  for (int it = 0; it < kMaxBisections && std::abs(sum - 1.0) > kProjectionSumTol;
       ++it) {
    if (sum > 1.0) {
      theta_lo = theta;
    } else {
      theta_hi = theta;
    }
    const double next = 0.5 * (theta_lo + theta_hi);
    if (next == theta) break;
    theta = next;
    sum = fill(theta);
  }

  // With the clamping pattern fixed, theta is determined exactly by the free
  // coordinates; keep the refinement only if it does not break the pattern.
  double free_sum = 0.0, clamped = 0.0;
  std::size_t free_count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = v[i] - theta;
    if (x > lo[i] && x < hi[i]) {
      free_sum += v[i];
      ++free_count;
    } else {
      clamped += out[i];
    }
  }
  if (free_count > 0) {
    const double refined = (free_sum - (1.0 - clamped)) / free_count;
    std::vector<double> candidate(m);
    double candidate_sum = 0.0;
    bool same_pattern = true;
    for (std::size_t i = 0; i < m; ++i) {
      const double x_old = v[i] - theta;
      const double x_new = v[i] - refined;
      const bool was_free = x_old > lo[i] && x_old < hi[i];
      // A free coordinate may land exactly on its bound.
      if (was_free ? (x_new < lo[i] || x_new > hi[i])
                   : (x_new > lo[i] && x_new < hi[i])) {
        same_pattern = false;
      }
      candidate[i] = clip(x_new, lo[i], hi[i]);
      candidate_sum += candidate[i];
    }
    if (same_pattern &&
        std::abs(candidate_sum - 1.0) <= std::abs(sum - 1.0)) {
      out = std::move(candidate);
    }
  }
  return SimplexWeights(std::move(out));
}

std::vector<double> gram_matrix(std::span<const ParamVector> gradients) {
  const std::size_t m = gradients.size();
  std::vector<double> gram(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      const double g = dot(gradients[i], gradients[j]);
      gram[i * m + j] = g;
      gram[j * m + i] = g;
    }
  }
  return gram;
}

QpSolution solve_min_norm(const QpProblem& problem, double tol, int max_iters,
                          std::vector<double>* objective_trace) {
  const std::size_t m = problem.gradients.size();
  if (m == 0) throw ArgumentError("solve_min_norm: no gradients");
  if (!(tol > 0.0)) throw ArgumentError("solve_min_norm: tol must be > 0");
  if (problem.lambda0.size() != m) {
    throw DimensionError("solve_min_norm: lambda0 has " +
                         std::to_string(problem.lambda0.size()) +
                         " entries for " + std::to_string(m) + " gradients");
  }
  if (max_iters < 0) max_iters = default_qp_max_iters(m);

  const std::vector<double> gram = gram_matrix(problem.gradients);
  double trace = 0.0;
  for (std::size_t i = 0; i < m; ++i) trace += gram[i * m + i];
  const double step = 1.0 / (2.0 * trace + 1e-12);

  std::vector<double> lambda = problem.lambda0.values();
  std::vector<double> best = lambda;
  double best_obj = quadratic_form(gram, lambda);
  if (objective_trace != nullptr) objective_trace->assign(1, best_obj);

  QpSolution sol;
  std::vector<double> v(m);
  for (int it = 1; it <= max_iters; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      double g = 0.0;
      for (std::size_t j = 0; j < m; ++j) g += gram[i * m + j] * lambda[j];
      v[i] = lambda[i] - step * 2.0 * g;
    }
    std::vector<double> next =
        project_box_simplex(v, problem.lambda0, problem.epsilon).values();
    double moved = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      moved = std::max(moved, std::abs(next[i] - lambda[i]));
    }
    lambda = std::move(next);
    const double obj = quadratic_form(gram, lambda);
    if (objective_trace != nullptr) objective_trace->push_back(obj);
    if (obj < best_obj) {
      best_obj = obj;
      best = lambda;
    }
    sol.iterations = it;
    if (moved <= tol) {
      sol.converged = true;
      break;
    }
  }

  if (problem.epsilon > 0.0 && m > 1) {
    const Box box = box_bounds(problem.lambda0, problem.epsilon);
    std::vector<double> refined = refine_active_set(gram, box, best);
    double sum = 0.0;
    bool feasible = true;
    for (std::size_t i = 0; i < m; ++i) {
      const double x = refined[i];
      sum += x;
      feasible = feasible && std::isfinite(x) && x >= 0.0 &&
                 x >= box.lo[i] - 1e-12 && x <= box.hi[i] + 1e-12;
    }
    feasible = feasible && std::abs(sum - 1.0) <= 1e-12;
    // The refined point is exact on its face; allow for rounding when it
    // ties with the projected-gradient iterate.
    if (feasible && quadratic_form(gram, refined) <=
                        best_obj + 1e-15 * (1.0 + std::abs(best_obj))) {
      best = std::move(refined);
    }
  }

  sol.lambda = SimplexWeights(best);
  sol.direction = weighted_sum(sol.lambda.view(), problem.gradients);
  sol.objective = squared_norm(sol.direction);
  return sol;
}

bool is_pareto_stationary(std::span<const ParamVector> gradients, double tol) {
  if (gradients.empty()) {
    throw ArgumentError("is_pareto_stationary: no gradients");
  }
  QpProblem p{std::vector<ParamVector>(gradients.begin(), gradients.end()),
              SimplexWeights::uniform(gradients.size()), 1.0};
  return solve_min_norm(p).objective <= tol * tol;
}

}  // namespace fedsim
