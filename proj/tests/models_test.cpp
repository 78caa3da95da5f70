#include "fedsim/models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedsim/errors.hpp"
#include "test_support.hpp"

namespace fedsim {
namespace {

using testing::fd_gradient;
using testing::random_batch;
using testing::random_vector;
using testing::relative_error;

ModelSpec linear_spec(std::size_t d) {
  return ModelSpec{ModelKind::kLinear, d, 0, 0, 0.0};
}
ModelSpec logistic_spec(std::size_t d, std::size_t c, double l2 = 0.0) {
  return ModelSpec{ModelKind::kLogistic, d, c, 0, l2};
}
ModelSpec mlp_spec(std::size_t d, std::size_t h, std::size_t c, double l2 = 0.0) {
  return ModelSpec{ModelKind::kMlp, d, c, h, l2};
}

TEST(ModelSpec, ParamDim) {
  EXPECT_EQ(param_dim(linear_spec(4)), 5u);
  EXPECT_EQ(param_dim(logistic_spec(4, 3)), 15u);
  EXPECT_EQ(param_dim(mlp_spec(4, 6, 3)), 6u * 5u + 3u * 7u);
}

TEST(ModelSpec, ValidateAndParse) {
  EXPECT_NO_THROW(validate(mlp_spec(2, 3, 2)));
  EXPECT_THROW(validate(mlp_spec(2, 0, 2)), ArgumentError);
  EXPECT_THROW(validate(logistic_spec(2, 1)), ArgumentError);
  EXPECT_THROW(validate(logistic_spec(2, 2, -1.0)), ArgumentError);
  EXPECT_EQ(parse_model_kind("mlp"), ModelKind::kMlp);
  EXPECT_EQ(to_string(ModelKind::kLogistic), "logistic");
  EXPECT_THROW(parse_model_kind("cnn"), ArgumentError);
}

TEST(Loss, LogisticAtZeroIsLogC) {
  Rng rng(1, 0);
  for (std::size_t c : {2u, 3u, 10u}) {
    const ModelSpec spec = logistic_spec(5, c);
    const Batch b = random_batch(spec, 17, rng);
    EXPECT_NEAR(loss(spec, ParamVector(param_dim(spec)), b), std::log(c), 1e-14);
  }
}

TEST(Loss, LinearExactFitIsZero) {
  const ModelSpec spec = linear_spec(3);
  const ParamVector w{0.5, -1.0, 2.0, 0.25};
  Rng rng(2, 0);
  Batch b = random_batch(spec, 20, rng);
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto x = b.features.row(i);
    b.labels[i] = w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3];
  }
  EXPECT_NEAR(loss(spec, w, b), 0.0, 1e-28);
  const ParamVector g = grad(spec, w, b);
  for (double v : g) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Loss, MatchesIndependentForwardPass) {
  Rng rng(3, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelSpec spec = mlp_spec(1 + rng.uniform_int(5), 1 + rng.uniform_int(6),
                                    2 + rng.uniform_int(4), trial % 2 ? 0.1 : 0.0);
    const ParamVector w = random_vector(param_dim(spec), rng);
    const Batch b = random_batch(spec, 1 + rng.uniform_int(12), rng);
    EXPECT_NEAR(loss(spec, w, b), testing::naive_loss(spec, w, b), 1e-12);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const auto got = predict_scores(spec, w, b.features.row(i));
      const auto want =
          testing::naive_mlp_logits(spec, w, &b.features.data[i * spec.input_dim]);
      for (std::size_t c = 0; c < got.size(); ++c) {
        EXPECT_NEAR(got[c], want[c], 1e-12);
      }
    }
  }
  for (int trial = 0; trial < 10; ++trial) {
    const ModelSpec spec = trial % 2 ? logistic_spec(3, 4, 0.05) : linear_spec(3);
    const ParamVector w = random_vector(param_dim(spec), rng);
    const Batch b = random_batch(spec, 9, rng);
    EXPECT_NEAR(loss(spec, w, b), testing::naive_loss(spec, w, b), 1e-12);
  }
}

TEST(Loss, ErrorsOnBadInput) {
  const ModelSpec spec = logistic_spec(3, 2);
  Rng rng(4, 0);
  const Batch b = random_batch(spec, 4, rng);
  EXPECT_THROW(loss(spec, ParamVector(3), b), DimensionError);
  EXPECT_THROW(grad(spec, ParamVector(3), b), DimensionError);
  Batch bad = b;
  bad.labels[0] = 2;
  EXPECT_THROW(loss(spec, ParamVector(param_dim(spec)), bad), ArgumentError);
  EXPECT_THROW(loss(logistic_spec(4, 2), ParamVector(10), b), DimensionError);
}

// Every model kind, 100 random (w, batch) pairs each.
TEST(Grad, FiniteDifferenceCheck) {
  Rng rng(5, 0);
  for (ModelKind kind : {ModelKind::kLinear, ModelKind::kLogistic, ModelKind::kMlp}) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      ModelSpec spec;
      spec.kind = kind;
      spec.input_dim = 1 + rng.uniform_int(4);
      spec.num_classes = kind == ModelKind::kLinear ? 0 : 2 + rng.uniform_int(3);
      spec.hidden_dim = kind == ModelKind::kMlp ? 1 + rng.uniform_int(4) : 0;
      spec.l2_reg = trial % 3 == 0 ? 0.0 : 0.1 * rng.uniform();
      const ParamVector w = random_vector(param_dim(spec), rng, 0.5);
      const Batch b = random_batch(spec, 1 + rng.uniform_int(8), rng);
      worst = std::max(worst, relative_error(fd_gradient(spec, w, b),
                                             grad(spec, w, b)));
    }
    EXPECT_LE(worst, 1e-5) << to_string(kind);
  }
}

TEST(Grad, RegularizerAddsRhoW) {
  Rng rng(6, 0);
  const double rho = 0.3;
  const ModelSpec plain = logistic_spec(4, 3);
  const ModelSpec reg = logistic_spec(4, 3, rho);
  const ParamVector w = random_vector(param_dim(plain), rng);
  const Batch b = random_batch(plain, 11, rng);
  const ParamVector diff = subtract(grad(reg, w, b), grad(plain, w, b));
  for (std::size_t j = 0; j < w.size(); ++j) EXPECT_NEAR(diff[j], rho * w[j], 1e-15);
}

TEST(Loss, ConvexForLinearAndLogistic) {
  Rng rng(7, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const ModelSpec spec = trial % 2 ? linear_spec(3) : logistic_spec(3, 3);
    const Batch b = random_batch(spec, 10, rng);
    const ParamVector w1 = random_vector(param_dim(spec), rng, 2.0);
    const ParamVector w2 = random_vector(param_dim(spec), rng, 2.0);
    const double t = rng.uniform();
    const ParamVector mid = axpy(t, w1, scale(1 - t, w2));
    EXPECT_LE(loss(spec, mid, b),
              t * loss(spec, w1, b) + (1 - t) * loss(spec, w2, b) + 1e-10);
  }
}

TEST(Loss, LogisticWithL2IsStronglyConvex) {
  Rng rng(8, 0);
  const double rho = 0.2;
  for (int trial = 0; trial < 200; ++trial) {
    const ModelSpec spec = logistic_spec(3, 3, rho);
    const Batch b = random_batch(spec, 10, rng);
    const ParamVector w1 = random_vector(param_dim(spec), rng, 2.0);
    const ParamVector w2 = random_vector(param_dim(spec), rng, 2.0);
    const double t = rng.uniform();
    const ParamVector mid = axpy(t, w1, scale(1 - t, w2));
    const double gap =
        t * loss(spec, w1, b) + (1 - t) * loss(spec, w2, b) - loss(spec, mid, b);
    EXPECT_GE(gap, rho * t * (1 - t) / 2 * squared_norm(subtract(w1, w2)) - 1e-10);
  }
}

TEST(Accuracy, Examples) {
  const ModelSpec spec = logistic_spec(2, 3);
  Batch b;
  b.features = Matrix(3, 2);
  b.labels = {0, 0, 0};
  // w = 0: every class ties and the lowest id wins.
  EXPECT_EQ(accuracy(spec, ParamVector(param_dim(spec)), b), 1.0);

  // One-hot features with a matching identity-like weight: all correct.
  Batch c;
  c.features = Matrix(2, 2);
  c.features.at(0, 0) = 1;
  c.features.at(1, 1) = 1;
  c.labels = {0, 1};
  ParamVector w(param_dim(spec));
  w[0 * 3 + 0] = 5;  // class 0 reads x0
  w[1 * 3 + 1] = 5;  // class 1 reads x1
  EXPECT_EQ(accuracy(spec, w, c), 1.0);
}

TEST(Accuracy, MatchesPerExampleArgmax) {
  Rng rng(9, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const ModelSpec spec = trial % 2 ? mlp_spec(3, 4, 4) : logistic_spec(3, 4);
    const ParamVector w = random_vector(param_dim(spec), rng);
    const Batch b = random_batch(spec, 25, rng);
    int correct = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double* x = &b.features.data[i * 3];
      const auto z = spec.kind == ModelKind::kMlp
                         ? testing::naive_mlp_logits(spec, w, x)
                         : testing::naive_logistic_logits(spec, w, x);
      std::size_t best = 0;
      for (std::size_t k = 1; k < z.size(); ++k) {
        if (z[k] > z[best]) best = k;
      }
      if (best == static_cast<std::size_t>(b.labels[i])) ++correct;
    }
    EXPECT_EQ(accuracy(spec, w, b), correct / 25.0);
  }
}

TEST(Accuracy, RegressionUnsupported) {
  const ModelSpec spec = linear_spec(2);
  Rng rng(10, 0);
  EXPECT_THROW(accuracy(spec, ParamVector(3), random_batch(spec, 3, rng)),
               UnsupportedError);
}

TEST(Batch, SelectPicksRows) {
  Batch b;
  b.features = Matrix(3, 2);
  b.features.data = {1, 2, 3, 4, 5, 6};
  b.labels = {7, 8, 9};
  const std::vector<std::size_t> idx{2, 0};
  const Batch s = b.select(idx);
  EXPECT_EQ(s.features.data, (std::vector<double>{5, 6, 1, 2}));
  EXPECT_EQ(s.labels, (std::vector<double>{9, 7}));
}

}  // namespace
}  // namespace fedsim
