#include "fedsim/numeric.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

void check_same_size(const ParamVector& a, const ParamVector& b,
                     const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": length mismatch (" +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

bool ParamVector::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double dot(const ParamVector& a, const ParamVector& b) {
  check_same_size(a, b, "dot");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

ParamVector axpy(double alpha, const ParamVector& x, const ParamVector& y) {
  check_same_size(x, y, "axpy");
  ParamVector out = y;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += alpha * x[i];
  return out;
}

double squared_norm(const ParamVector& a) {
  double sum = 0.0;
  for (double v : a) sum += v * v;
  return sum;
}

double l2_norm(const ParamVector& a) { return std::sqrt(squared_norm(a)); }

ParamVector scale(double alpha, const ParamVector& x) {
  ParamVector out = x;
  for (double& v : out) v *= alpha;
  return out;
}

ParamVector subtract(const ParamVector& a, const ParamVector& b) {
  check_same_size(a, b, "subtract");
  ParamVector out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] -= b[i];
  return out;
}

ParamVector weighted_sum(std::span<const double> weights,
                         std::span<const ParamVector> vectors) {
  if (weights.size() != vectors.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                         " weights for " + std::to_string(vectors.size()) +
                         " vectors");
  }
  if (vectors.empty()) throw ArgumentError("weighted_sum: no vectors");
  ParamVector out(vectors.front().size());
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    check_same_size(out, vectors[k], "weighted_sum");
    const double w = weights[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * vectors[k][i];
  }
  return out;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream_id)
    : engine_(splitmix64(splitmix64(seed) ^ splitmix64(~stream_id))) {}

std::uint64_t Rng::stream_key(std::string_view tag,
                              std::initializer_list<std::uint64_t> parts) {
  // FNV-1a over the tag, then fold in each part through splitmix.
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw ArgumentError("uniform_int: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  // Box-Muller; 1 - uniform() lies in (0, 1] so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_normal_ = true;
  return r * std::cos(theta);
}

}  // namespace fedsim
