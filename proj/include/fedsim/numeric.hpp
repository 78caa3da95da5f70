#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace fedsim {

/// Flat model parameter (or gradient / update) vector.
///
/// A thin value type over std::vector<double>; all arithmetic lives in free
/// functions below so that the summation order is explicit at every call site.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> view() const { return values_; }
  std::span<double> view() { return values_; }
  const std::vector<double>& values() const { return values_; }

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }
  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }

  bool all_finite() const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

double dot(const ParamVector& a, const ParamVector& b);

/// y + alpha * x.
ParamVector axpy(double alpha, const ParamVector& x, const ParamVector& y);

double l2_norm(const ParamVector& a);
double squared_norm(const ParamVector& a);

ParamVector scale(double alpha, const ParamVector& x);
ParamVector subtract(const ParamVector& a, const ParamVector& b);

/// sum_i weights[i] * vectors[i], accumulated left to right in index order.
/// Every aggregator goes through this so that equal weights give bitwise
/// equal directions.
ParamVector weighted_sum(std::span<const double> weights,
                         std::span<const ParamVector> vectors);

/// Deterministic pseudo-random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The standard distributions are not, so uniform/normal/shuffle
/// are implemented here on top of raw engine output.
class Rng {
 public:
  static constexpr std::uint64_t kServerStream = 0xFFFF'FFFF'FFFF'FFFFull;

  Rng(std::uint64_t seed, std::uint64_t stream_id);

  /// Stream id for a tagged tuple, e.g. stream_key("client", user, round).
  static std::uint64_t stream_key(std::string_view tag,
                                  std::initializer_list<std::uint64_t> parts);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace fedsim
