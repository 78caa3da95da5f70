#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedsim/numeric.hpp"

namespace fedsim {

enum class ModelKind { kLinear, kLogistic, kMlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct ModelSpec {
  ModelKind kind = ModelKind::kLogistic;
  std::size_t input_dim = 1;
  std::size_t num_classes = 2;
  std::size_t hidden_dim = 0;  // mlp only
  double l2_reg = 0.0;

  bool is_classifier() const { return kind != ModelKind::kLinear; }
};

/// Number of parameters implied by the ModelSpec. Biases are folded in as an
/// extra column per output unit.
std::size_t param_dim(const ModelSpec& spec);

/// Throws ArgumentError on an internally inconsistent spec.
void validate(const ModelSpec& spec);

/// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data).subspan(i * cols, cols);
  }
  std::span<double> row(std::size_t i) {
    return std::span<double>(data).subspan(i * cols, cols);
  }
  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// A set of examples. For classifiers `labels` hold class ids (stored as
/// doubles); for the linear model they are regression targets.
struct Batch {
  Matrix features;
  std::vector<double> labels;

  std::size_t size() const { return labels.size(); }
  Batch select(std::span<const std::size_t> indices) const;

  friend bool operator==(const Batch&, const Batch&) = default;
};

/// Mean per-example loss over the batch plus l2_reg/2 * ||w||^2.
double loss(const ModelSpec& spec, const ParamVector& w, const Batch& batch);

ParamVector grad(const ModelSpec& spec, const ParamVector& w,
                 const Batch& batch);

/// Fraction of examples whose argmax prediction equals the label. Ties go to
/// the lowest class id.
double accuracy(const ModelSpec& spec, const ParamVector& w,
                const Batch& batch);

/// Class scores (logits) for one example; classifiers only.
std::vector<double> predict_scores(const ModelSpec& spec, const ParamVector& w,
                                   std::span<const double> x);

}  // namespace fedsim
