#include "qp_oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/Dense>

#include "fedsim/errors.hpp"
#include "fedsim/qp.hpp"

namespace fedsim::oracle {
namespace {

// The grid for each coordinate is the lattice of multiples of `step` plus the
// two ends of its feasible range plus every value at which the feasible set of
// the remaining coordinates changes shape (mass left equal to a sum of their
// bounds). The reduced objective is only piecewise smooth, with kinks at those
// values, and they are generally not lattice points.
struct Search {
  std::span<const ParamVector> g;
  std::vector<double> lo, hi;
  double step = 1e-3;
  std::size_t m = 0, d = 0;
  std::vector<double> current;
  std::vector<double> partial;  // (m-1) x d running combinations per level
  std::vector<double> rest_lo, rest_hi;
  std::vector<std::vector<double>> vertex_sums;  // per level, over j >= level
  std::vector<std::vector<double>> values;       // scratch per level
  GridResult best;

  void candidates(std::size_t i, double s, double from, double to) {
    std::vector<double>& out = values[i];
    out.clear();
    out.push_back(from);
    out.push_back(to);
    const auto k0 = static_cast<long long>(std::ceil(from / step));
    const auto k1 = static_cast<long long>(std::floor(to / step));
    for (long long k = k0; k <= k1; ++k) out.push_back(k * step);
    for (double v : vertex_sums[i + 1]) {
      const double x = s - v;
      if (x > from && x < to) out.push_back(x);
    }
  }

  void record(double obj, double y, double s_last) {
    ++best.points;
    if (obj < best.objective) {
      best.objective = obj;
      current[m - 2] = y;
      current[m - 1] = s_last - y;
      best.lambda = current;
    }
  }

  // Exact minimum along the segment of the last two coordinates, given the
  // partial combination `u` of the earlier ones and the mass `s` left.
  void finish(const double* u, double s) {
    const std::size_t a = m - 2, b = m - 1;
    const double y_lo = std::max(lo[a], s - hi[b]);
    const double y_hi = std::min(hi[a], s - lo[b]);
    if (y_lo > y_hi + 1e-12) return;
    double alpha = 0.0, beta = 0.0, gamma = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double base = u[j] + s * g[b][j];
      const double e = g[a][j] - g[b][j];
      alpha += e * e;
      beta += base * e;
      gamma += base * base;
    }
    double y = alpha > 0.0 ? -beta / alpha : y_lo;
    y = std::clamp(y, y_lo, std::max(y_lo, y_hi));
    record(gamma + 2.0 * beta * y + alpha * y * y, y, s);
  }

  // Level m-3 followed by the segment step, with the segment coefficients
  // written as polynomials in the level-(m-3) value so each grid point costs
  // O(1) instead of O(d).
  void last_level(std::size_t i, double s, double from, double to) {
    const std::size_t a = m - 2, b = m - 1;
    const double* u = &partial[i * d];
    double alpha = 0.0, pe = 0.0, qe = 0.0, pp = 0.0, pq = 0.0, qq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = g[a][j] - g[b][j];
      const double p = u[j] + s * g[b][j];
      const double q = g[i][j] - g[b][j];
      alpha += e * e;
      pe += p * e;
      qe += q * e;
      pp += p * p;
      pq += p * q;
      qq += q * q;
    }
    // Visits the same points as candidates() but without materializing the
    // lattice, which dominates the cost for m = 5.
    double best_obj = best.objective, best_x = 0.0, best_y = 0.0;
    bool improved = false;
    std::uint64_t visited = 0;
    const double inv_alpha = alpha > 0.0 ? 1.0 / alpha : 0.0;
    const double lo_a = lo[a], hi_a = hi[a], lo_b = lo[b], hi_b = hi[b];
    auto eval = [&](double x) {
      const double rest = s - x;
      const double y_lo = std::max(lo_a, rest - hi_b);
      const double y_hi = std::min(hi_a, rest - lo_b);
      if (y_lo > y_hi + 1e-12) return;
      ++visited;
      const double beta = pe + x * qe;
      const double gamma = pp + x * (2.0 * pq + x * qq);
      double y = alpha > 0.0 ? -beta * inv_alpha : y_lo;
      y = std::min(std::max(y, y_lo), std::max(y_lo, y_hi));
      const double obj = gamma + y * (2.0 * beta + alpha * y);
      if (obj < best_obj) {
        best_obj = obj;
        best_x = x;
        best_y = y;
        improved = true;
      }
    };
    eval(from);
    eval(to);
    const auto k0 = static_cast<long long>(std::ceil(from / step));
    const auto k1 = static_cast<long long>(std::floor(to / step));
    for (long long k = k0; k <= k1; ++k) eval(static_cast<double>(k) * step);
    for (double v : vertex_sums[i + 1]) {
      const double x = s - v;
      if (x > from && x < to) eval(x);
    }
    best.points += visited;
    if (improved) {
      best.objective = best_obj;
      current[i] = best_x;
      current[a] = best_y;
      current[b] = s - best_x - best_y;
      best.lambda = current;
    }
  }

  void walk(std::size_t i, double s) {
    const double* u = &partial[i * d];
    if (i == m - 2) {
      finish(u, s);
      return;
    }
    const double from = std::max(lo[i], s - rest_hi[i + 1]);
    const double to = std::min(hi[i], s - rest_lo[i + 1]);
    if (from > to + 1e-12) return;
    if (i == m - 3) {
      last_level(i, s, from, std::max(from, to));
      return;
    }
    candidates(i, s, from, std::max(from, to));
    double* next = &partial[(i + 1) * d];
    // Recursion reuses values[j] only for j > i, so iterating a copy-free
    // reference is safe.
    for (double x : values[i]) {
      current[i] = x;
      for (std::size_t j = 0; j < d; ++j) next[j] = u[j] + x * g[i][j];
      walk(i + 1, s - x);
    }
  }
};

}  // namespace

GridResult grid_min_norm(std::span<const ParamVector> gradients,
                         std::span<const double> lambda0, double epsilon,
                         double step) {
  const std::size_t m = gradients.size();
  if (m == 0 || lambda0.size() != m) {
    throw ArgumentError("grid_min_norm: bad instance");
  }
  Search s;
  s.g = gradients;
  s.m = m;
  s.d = gradients[0].size();
  s.step = step;
  for (std::size_t i = 0; i < m; ++i) {
    s.lo.push_back(std::max(0.0, lambda0[i] - epsilon));
    s.hi.push_back(std::min(1.0, lambda0[i] + epsilon));
  }
  s.best.objective = std::numeric_limits<double>::infinity();
  s.current.assign(m, 0.0);
  if (m == 1) {
    s.best.objective = squared_norm(gradients[0]);
    s.best.lambda = {1.0};
    s.best.points = 1;
    return s.best;
  }
  s.partial.assign((m - 1) * s.d, 0.0);
  s.rest_lo.assign(m + 1, 0.0);
  s.rest_hi.assign(m + 1, 0.0);
  for (std::size_t i = m; i-- > 0;) {
    s.rest_lo[i] = s.rest_lo[i + 1] + s.lo[i];
    s.rest_hi[i] = s.rest_hi[i + 1] + s.hi[i];
  }
  s.vertex_sums.assign(m + 1, {});
  s.vertex_sums[m] = {0.0};
  for (std::size_t i = m; i-- > 0;) {
    for (double v : s.vertex_sums[i + 1]) {
      s.vertex_sums[i].push_back(v + s.lo[i]);
      if (s.hi[i] != s.lo[i]) s.vertex_sums[i].push_back(v + s.hi[i]);
    }
  }
  s.values.assign(m, {});
  s.walk(0, 1.0);
  return s.best;
}

GridResult face_enumeration_min_norm(std::span<const ParamVector> gradients,
                                     std::span<const double> lambda0,
                                     double epsilon) {
  const std::size_t m = gradients.size();
  if (m == 0 || lambda0.size() != m || m > 12) {
    throw ArgumentError("face_enumeration_min_norm: bad instance");
  }
  const std::size_t d = gradients[0].size();
  std::vector<double> lo(m), hi(m);
  for (std::size_t i = 0; i < m; ++i) {
    lo[i] = std::max(0.0, lambda0[i] - epsilon);
    hi[i] = std::min(1.0, lambda0[i] + epsilon);
  }
  Eigen::MatrixXd gmat(d, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) gmat(j, i) = gradients[i][j];
  }
  const Eigen::MatrixXd gram = gmat.transpose() * gmat;

  GridResult best;
  best.objective = std::numeric_limits<double>::infinity();
  std::size_t patterns = 1;
  for (std::size_t i = 0; i < m; ++i) patterns *= 3;
  // Digit 0: at lower bound, 1: at upper bound, 2: free.
  std::vector<int> state(m);
  std::vector<std::size_t> free;
  for (std::size_t code = 0; code < patterns; ++code) {
    std::size_t c = code;
    free.clear();
    std::vector<double> lambda(m, 0.0);
    double mass = 1.0;
    for (std::size_t i = 0; i < m; ++i) {
      state[i] = static_cast<int>(c % 3);
      c /= 3;
      if (state[i] == 2) {
        free.push_back(i);
      } else {
        lambda[i] = state[i] == 0 ? lo[i] : hi[i];
        mass -= lambda[i];
      }
    }
    const std::size_t f = free.size();
    if (f == 0) {
      if (std::abs(mass) > 1e-12) continue;
    } else {
      // Stationarity of lambda^T G lambda on the face plus the mass
      // constraint, solved in the least-squares sense and kept only if exact.
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(f + 1, f + 1);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(f + 1);
      for (std::size_t a = 0; a < f; ++a) {
        for (std::size_t b = 0; b < f; ++b) {
          kkt(a, b) = 2.0 * gram(free[a], free[b]);
        }
        for (std::size_t j = 0; j < m; ++j) {
          if (state[j] != 2) rhs(a) -= 2.0 * gram(free[a], j) * lambda[j];
        }
        kkt(a, f) = 1.0;
        kkt(f, a) = 1.0;
      }
      rhs(f) = mass;
      const Eigen::VectorXd sol =
          kkt.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
      if ((kkt * sol - rhs).norm() > 1e-9 * (1.0 + rhs.norm())) continue;
      for (std::size_t a = 0; a < f; ++a) lambda[free[a]] = sol(a);
    }
    bool inside = true;
    for (std::size_t i = 0; i < m && inside; ++i) {
      inside = lambda[i] >= lo[i] - 1e-12 && lambda[i] <= hi[i] + 1e-12;
    }
    if (!inside) continue;
    ++best.points;
    // Objective evaluated from the gradients themselves, not the Gram matrix.
    double obj = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      for (std::size_t i = 0; i < m; ++i) v += lambda[i] * gradients[i][j];
      obj += v * v;
    }
    if (obj < best.objective) {
      best.objective = obj;
      best.lambda = lambda;
    }
  }
  return best;
}

GridResult two_vector_min_norm(const ParamVector& g1, const ParamVector& g2) {
  const ParamVector diff = subtract(g1, g2);
  const double denom = squared_norm(diff);
  double t = denom > 0.0 ? dot(subtract(g2, g1), g2) / denom : 0.5;
  t = std::clamp(t, 0.0, 1.0);
  GridResult r;
  r.lambda = {t, 1.0 - t};
  ParamVector p(g1.size());
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = t * g1[j] + (1.0 - t) * g2[j];
  }
  r.objective = squared_norm(p);
  r.points = 1;
  return r;
}

QpSuiteReport run_qp_oracle_suite(int instances, std::uint64_t seed,
                                  double tolerance, bool verbose) {
  const auto start = std::chrono::steady_clock::now();
  const double eps_choices[] = {0.0, 0.25, 0.5, 1.0};
  QpSuiteReport report;
  for (int n = 0; n < instances; ++n) {
    Rng rng(seed, static_cast<std::uint64_t>(n));
    const std::size_t m = 1 + rng.uniform_int(5);
    const std::size_t d = 1 + rng.uniform_int(4);
    const double eps = eps_choices[rng.uniform_int(4)];
    std::vector<ParamVector> g(m, ParamVector(d));
    for (auto& v : g) {
      for (double& x : v) x = rng.normal();
    }
    std::vector<double> l0(m);
    double total = 0.0;
    for (double& x : l0) {
      x = -std::log(1.0 - rng.uniform());
      total += x;
    }
    for (double& x : l0) x /= total;

    QpProblem p{g, SimplexWeights(l0), eps};
    const QpSolution sol = solve_min_norm(p);
    const GridResult grid = grid_min_norm(g, l0, eps);
    const GridResult exact = face_enumeration_min_norm(g, l0, eps);
    const double grid_err = std::abs(sol.objective - grid.objective);
    const double exact_err = std::abs(sol.objective - exact.objective);
    report.max_abs_error = std::max(report.max_abs_error, grid_err);
    report.max_exact_error = std::max(report.max_exact_error, exact_err);
    ++report.instances;
    const bool ok = grid_err <= tolerance && exact_err <= tolerance;
    if (!ok) ++report.failures;
    if (verbose || !ok) {
      std::printf("%s instance %3d m=%zu d=%zu eps=%.2f solver=%.12g "
                  "grid=%.12g exact=%.12g iters=%d\n",
                  ok ? "ok  " : "FAIL", n, m, d, eps, sol.objective,
                  grid.objective, exact.objective, sol.iterations);
    }
  }
  report.seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return report;
}

}  // namespace fedsim::oracle
