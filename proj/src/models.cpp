#include "fedsim/models.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/errors.hpp"

namespace fedsim {
namespace {

void check_inputs(const ModelSpec& spec, const ParamVector& w,
                  const Batch& batch) {
  if (w.size() != param_dim(spec)) {
    throw DimensionError("model expects " + std::to_string(param_dim(spec)) +
                         " parameters, got " + std::to_string(w.size()));
  }
  if (batch.size() == 0) throw ArgumentError("empty batch");
  if (batch.features.rows != batch.size() ||
      batch.features.cols != spec.input_dim) {
    throw DimensionError("batch is " + std::to_string(batch.features.rows) +
                         "x" + std::to_string(batch.features.cols) +
                         " with " + std::to_string(batch.size()) +
                         " labels; model input_dim is " +
                         std::to_string(spec.input_dim));
  }
}

std::size_t class_of(const ModelSpec& spec, double label) {
  if (!(label >= 0.0) || label >= static_cast<double>(spec.num_classes) ||
      label != std::floor(label)) {
    throw ArgumentError("label " + std::to_string(label) +
                        " outside [0, " + std::to_string(spec.num_classes) +
                        ")");
  }
  return static_cast<std::size_t>(label);
}

// Affine map out = W [x; 1] for a row-major (out_dim x (in_dim + 1)) block.
void affine(std::span<const double> weights, std::size_t out_dim,
            std::span<const double> x, std::span<double> out) {
  const std::size_t stride = x.size() + 1;
  for (std::size_t o = 0; o < out_dim; ++o) {
    const double* row = weights.data() + o * stride;
    double z = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) z += row[j] * x[j];
    out[o] = z + row[x.size()];
  }
}

// g_block += delta [x; 1]^T
void accumulate_outer(std::span<const double> delta, std::span<const double> x,
                      std::span<double> g_block) {
  const std::size_t stride = x.size() + 1;
  for (std::size_t o = 0; o < delta.size(); ++o) {
    double* row = g_block.data() + o * stride;
    const double d = delta[o];
    for (std::size_t j = 0; j < x.size(); ++j) row[j] += d * x[j];
    row[x.size()] += d;
  }
}

// Softmax probabilities in place; returns log-sum-exp of the input.
double softmax_inplace(std::span<double> z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return zmax + std::log(sum);
}

struct Evaluation {
  double loss = 0.0;
  ParamVector grad;
};

// Shared forward (and optionally backward) pass; the mean is taken at the end.
Evaluation evaluate(const ModelSpec& spec, const ParamVector& w,
                    const Batch& batch, bool want_grad) {
  check_inputs(spec, w, batch);
  const std::size_t n = batch.size();
  const std::size_t dim = param_dim(spec);
  const std::span<const double> wv = w.view();
  Evaluation ev;
  if (want_grad) ev.grad = ParamVector(dim);
  std::span<double> g = ev.grad.view();
  double total = 0.0;

  switch (spec.kind) {
    case ModelKind::kLinear: {
      double pred = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        auto x = batch.features.row(i);
        affine(wv, 1, x, std::span<double>(&pred, 1));
        const double r = pred - batch.labels[i];
        total += 0.5 * r * r;
        if (want_grad) accumulate_outer(std::span<const double>(&r, 1), x, g);
      }
      break;
    }
    case ModelKind::kLogistic: {
      std::vector<double> z(spec.num_classes);
      for (std::size_t i = 0; i < n; ++i) {
        auto x = batch.features.row(i);
        const std::size_t y = class_of(spec, batch.labels[i]);
        affine(wv, spec.num_classes, x, z);
        const double zy = z[y];
        const double lse = softmax_inplace(z);
        total += lse - zy;
        if (want_grad) {
          z[y] -= 1.0;
          accumulate_outer(z, x, g);
        }
      }
      break;
    }
    case ModelKind::kMlp: {
      const std::size_t hdim = spec.hidden_dim;
      const std::size_t first = hdim * (spec.input_dim + 1);
      const auto w1 = wv.subspan(0, first);
      const auto w2 = wv.subspan(first);
      std::vector<double> h(hdim), z(spec.num_classes), dh(hdim);
      for (std::size_t i = 0; i < n; ++i) {
        auto x = batch.features.row(i);
        const std::size_t y = class_of(spec, batch.labels[i]);
        affine(w1, hdim, x, h);
        for (double& v : h) v = std::tanh(v);
        affine(w2, spec.num_classes, h, z);
        const double zy = z[y];
        const double lse = softmax_inplace(z);
        total += lse - zy;
        if (!want_grad) continue;
        z[y] -= 1.0;
        accumulate_outer(z, h, g.subspan(first));
        for (std::size_t k = 0; k < hdim; ++k) {
          double s = 0.0;
          for (std::size_t c = 0; c < spec.num_classes; ++c) {
            s += w2[c * (hdim + 1) + k] * z[c];
          }
          dh[k] = s * (1.0 - h[k] * h[k]);
        }
        accumulate_outer(dh, x, g.subspan(0, first));
      }
      break;
    }
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  ev.loss = total * inv_n;
  if (spec.l2_reg > 0.0) ev.loss += 0.5 * spec.l2_reg * squared_norm(w);
  if (want_grad) {
    for (std::size_t j = 0; j < dim; ++j) {
      g[j] = g[j] * inv_n + spec.l2_reg * wv[j];
    }
  }
  return ev;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLinear:
      return "linear";
    case ModelKind::kLogistic:
      return "logistic";
    case ModelKind::kMlp:
      return "mlp";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "linear") return ModelKind::kLinear;
  if (name == "logistic") return ModelKind::kLogistic;
  if (name == "mlp") return ModelKind::kMlp;
  throw ArgumentError("unknown model kind '" + name + "'");
}

std::size_t param_dim(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::kLinear:
      return spec.input_dim + 1;
    case ModelKind::kLogistic:
      return spec.num_classes * (spec.input_dim + 1);
    case ModelKind::kMlp:
      return spec.hidden_dim * (spec.input_dim + 1) +
             spec.num_classes * (spec.hidden_dim + 1);
  }
  return 0;
}

void validate(const ModelSpec& spec) {
  if (spec.input_dim == 0) throw ArgumentError("model input_dim must be >= 1");
  if (spec.is_classifier() && spec.num_classes < 2) {
    throw ArgumentError("classifier needs num_classes >= 2");
  }
  if (spec.kind == ModelKind::kMlp && spec.hidden_dim == 0) {
    throw ArgumentError("mlp needs hidden_dim >= 1");
  }
  if (!(spec.l2_reg >= 0.0)) throw ArgumentError("l2_reg must be >= 0");
}

Batch Batch::select(std::span<const std::size_t> indices) const {
  Batch out;
  out.features = Matrix(indices.size(), features.cols);
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto src = features.row(indices[k]);
    std::copy(src.begin(), src.end(), out.features.row(k).begin());
    out.labels.push_back(labels[indices[k]]);
  }
  return out;
}

double loss(const ModelSpec& spec, const ParamVector& w, const Batch& batch) {
  return evaluate(spec, w, batch, false).loss;
}

ParamVector grad(const ModelSpec& spec, const ParamVector& w,
                 const Batch& batch) {
  return std::move(evaluate(spec, w, batch, true).grad);
}

std::vector<double> predict_scores(const ModelSpec& spec, const ParamVector& w,
                                   std::span<const double> x) {
  if (!spec.is_classifier()) {
    throw UnsupportedError("class scores requested from a regression model");
  }
  if (w.size() != param_dim(spec) || x.size() != spec.input_dim) {
    throw DimensionError("predict_scores: dimension mismatch");
  }
  std::vector<double> z(spec.num_classes);
  if (spec.kind == ModelKind::kLogistic) {
    affine(w.view(), spec.num_classes, x, z);
  } else {
    const std::size_t first = spec.hidden_dim * (spec.input_dim + 1);
    std::vector<double> h(spec.hidden_dim);
    affine(w.view().subspan(0, first), spec.hidden_dim, x, h);
    for (double& v : h) v = std::tanh(v);
    affine(w.view().subspan(first), spec.num_classes, h, z);
  }
  return z;
}

double accuracy(const ModelSpec& spec, const ParamVector& w,
                const Batch& batch) {
  if (!spec.is_classifier()) {
    throw UnsupportedError("accuracy is undefined for the linear model");
  }
  check_inputs(spec, w, batch);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto z = predict_scores(spec, w, batch.features.row(i));
    // max_element returns the first maximum, i.e. the lowest class id.
    const auto best = static_cast<std::size_t>(
        std::max_element(z.begin(), z.end()) - z.begin());
    if (best == class_of(spec, batch.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(batch.size());
}

}  // namespace fedsim
