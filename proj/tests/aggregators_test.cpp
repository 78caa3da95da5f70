#include "fedsim/aggregators.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedsim/errors.hpp"
#include "qp_oracles.hpp"
#include "test_support.hpp"

namespace fedsim {
namespace {

using testing::random_batch;
using testing::random_vector;

ClientReturn ret(int id, ParamVector g, double loss = 1.0, std::size_t n = 10) {
  ClientReturn r;
  r.user_id = id;
  r.update = std::move(g);
  r.train_loss_before = loss;
  r.train_loss_after = loss;
  r.sample_count = n;
  return r;
}

AggregatorConfig config(AggregatorKind kind, double eps = 1.0) {
  AggregatorConfig c;
  c.kind = kind;
  c.epsilon = eps;
  c.normalize = default_normalize(kind);
  c.global_lr = StepSchedule{ScheduleKind::kLinear, 1.0, 0.0, 100, 1.0};
  return c;
}

ServerState state_at(ParamVector w, int round = 0) {
  ServerState s;
  s.w = std::move(w);
  s.round = round;
  return s;
}

std::vector<ClientReturn> random_returns(std::size_t m, std::size_t d, Rng& rng) {
  std::vector<ClientReturn> out;
  for (std::size_t i = 0; i < m; ++i) {
    out.push_back(ret(static_cast<int>(i), random_vector(d, rng),
                      0.1 + rng.uniform(), 5 + rng.uniform_int(20)));
  }
  return out;
}

TEST(StepSize, Examples) {
  const StepSchedule constant{ScheduleKind::kLinear, 0.7, 0.0, 50, 1.0};
  for (int t : {0, 10, 49}) EXPECT_EQ(step_size(constant, t), 0.7);
  const StepSchedule decay{ScheduleKind::kLinear, 1.0, 0.1, 1500, 1.0};
  EXPECT_EQ(step_size(decay, 0), 1.0);
  EXPECT_NEAR(step_size(decay, 1499), 0.1, 1e-15);
  EXPECT_NEAR(step_size(decay, 749), 1.0 - 0.9 * 749.0 / 1499.0, 1e-15);
  EXPECT_THROW(step_size(decay, 1500), ArgumentError);
  EXPECT_THROW(step_size(decay, -1), ArgumentError);
  const StepSchedule inv{ScheduleKind::kInverseTime, 1.0, 0.0, 10, 0.5};
  EXPECT_DOUBLE_EQ(step_size(inv, 0), 2.0);
  EXPECT_DOUBLE_EQ(step_size(inv, 6), 0.5);
}

TEST(StepSize, PositiveThroughout) {
  const StepSchedule s{ScheduleKind::kLinear, 0.3, 0.05, 200, 1.0};
  for (int t = 0; t < 200; ++t) EXPECT_GT(step_size(s, t), 0.0);
}

TEST(Names, RoundTrip) {
  for (auto kind : {AggregatorKind::kFedMgdaPlus, AggregatorKind::kFedMgda,
                    AggregatorKind::kMgdaProx, AggregatorKind::kFedAvg,
                    AggregatorKind::kFedAvgN, AggregatorKind::kFedProx,
                    AggregatorKind::kQFedAvg, AggregatorKind::kAfl}) {
    EXPECT_EQ(parse_aggregator_kind(to_string(kind)), kind);
  }
  EXPECT_THROW(parse_aggregator_kind("fedsgd"), ArgumentError);
  EXPECT_EQ(parse_schedule_kind("inverse_time"), ScheduleKind::kInverseTime);
}

TEST(Validate, RejectsBadConfigs) {
  AggregatorConfig c = config(AggregatorKind::kFedMgdaPlus);
  EXPECT_NO_THROW(validate(c));
  c.epsilon = 1.5;
  EXPECT_THROW(validate(c), ArgumentError);
  c = config(AggregatorKind::kQFedAvg);
  c.lipschitz = 0.0;
  EXPECT_THROW(validate(c), ArgumentError);
  c = config(AggregatorKind::kFedProx);
  c.prox_mu = -1;
  EXPECT_THROW(validate(c), ArgumentError);
  c = config(AggregatorKind::kFedAvg);
  c.global_lr.decay = 2;
  EXPECT_THROW(validate(c), ArgumentError);
}

TEST(FedAvg, Examples) {
  AggregatorConfig c = config(AggregatorKind::kFedAvg);
  const std::vector<ClientReturn> two{ret(0, {1, 0}), ret(1, {0, 1})};
  EXPECT_EQ(aggregate(state_at({1, 1}), two, c).w, (ParamVector{0.5, 0.5}));

  const std::vector<ClientReturn> one{ret(4, {0.25, -1})};
  c.global_lr.initial = 2.0;
  EXPECT_EQ(aggregate(state_at({1, 1}), one, c).w, (ParamVector{0.5, 3}));

  c.global_lr.initial = 1.0;
  c.lambda0_mode = Lambda0Mode::kSampleCount;
  const std::vector<ClientReturn> weighted{ret(0, {4, 0}, 1, 30), ret(1, {0, 4}, 1, 10)};
  AggregateInfo info;
  const ServerState next = aggregate(state_at({0, 0}), weighted, c, &info);
  EXPECT_EQ(next.w, (ParamVector{-3, -1}));
  EXPECT_EQ(info.direction, (ParamVector{3, 1}));
  EXPECT_EQ(next.round, 1);
}

TEST(FedAvg, ReturnOrderDoesNotMatter) {
  Rng rng(1, 0);
  auto rs = random_returns(6, 4, rng);
  const AggregatorConfig c = config(AggregatorKind::kFedAvg);
  const ParamVector a = aggregate(state_at(ParamVector(4)), rs, c).w;
  std::reverse(rs.begin(), rs.end());
  EXPECT_EQ(aggregate(state_at(ParamVector(4)), rs, c).w, a);
  rs.push_back(rs.front());
  EXPECT_THROW(aggregate(state_at(ParamVector(4)), rs, c), ArgumentError);
  EXPECT_THROW(aggregate(state_at(ParamVector(4)), std::vector<ClientReturn>{}, c),
               ArgumentError);
}

TEST(FedMgdaPlus, EpsilonZeroIsFedAvgBitwise) {
  Rng rng(2, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const auto rs = random_returns(1 + rng.uniform_int(8), 5, rng);
    AggregatorConfig mgda = config(AggregatorKind::kFedMgdaPlus, 0.0);
    mgda.normalize = false;
    const AggregatorConfig avg = config(AggregatorKind::kFedAvg);
    const ParamVector w0 = random_vector(5, rng);
    EXPECT_EQ(aggregate(state_at(w0), rs, mgda).w, aggregate(state_at(w0), rs, avg).w);
  }
}

TEST(FedMgdaPlus, EpsilonZeroIsFedAvgNBitwise) {
  Rng rng(3, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const auto rs = random_returns(1 + rng.uniform_int(8), 5, rng);
    const AggregatorConfig mgda = config(AggregatorKind::kFedMgdaPlus, 0.0);
    const AggregatorConfig avgn = config(AggregatorKind::kFedAvgN);
    ASSERT_TRUE(mgda.normalize);
    const ParamVector w0 = random_vector(5, rng);
    EXPECT_EQ(aggregate(state_at(w0), rs, mgda).w, aggregate(state_at(w0), rs, avgn).w);
  }
}

TEST(FedMgdaPlus, EpsilonOneIsFedMgda) {
  Rng rng(4, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const auto rs = random_returns(1 + rng.uniform_int(8), 5, rng);
    const AggregatorConfig plus = config(AggregatorKind::kFedMgdaPlus, 1.0);
    AggregatorConfig mgda = config(AggregatorKind::kFedMgda, 0.3);  // ignored
    mgda.normalize = true;
    const ParamVector w0 = random_vector(5, rng);
    EXPECT_EQ(aggregate(state_at(w0), rs, plus).w, aggregate(state_at(w0), rs, mgda).w);
  }
}

TEST(FedMgdaPlus, OpposingUpdatesGiveZeroStep) {
  const std::vector<ClientReturn> rs{ret(0, {2, 1}), ret(1, {-4, -2})};
  const AggregatorConfig c = config(AggregatorKind::kFedMgdaPlus, 1.0);
  AggregateInfo info;
  const ServerState next = aggregate(state_at({1, 2}), rs, c, &info);
  EXPECT_NEAR(next.w[0], 1.0, 1e-12);
  EXPECT_NEAR(next.w[1], 2.0, 1e-12);
  EXPECT_NEAR(info.qp_objective, 0.0, 1e-20);
}

TEST(FedMgdaPlus, MatchesOracleDirection) {
  Rng rng(5, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const auto rs = random_returns(2 + rng.uniform_int(3), 3, rng);
    const double eps = rng.uniform();
    const AggregatorConfig c = config(AggregatorKind::kFedMgdaPlus, eps);
    AggregateInfo info;
    aggregate(state_at(ParamVector(3)), rs, c, &info);
    std::vector<ParamVector> g;
    for (const auto& r : rs) g.push_back(normalize_update(r.update));
    const auto exact = oracle::face_enumeration_min_norm(
        g, SimplexWeights::uniform(rs.size()).values(), eps);
    EXPECT_NEAR(info.qp_objective, exact.objective, 1e-9);
    EXPECT_NEAR(squared_norm(info.direction), exact.objective, 1e-9);
  }
}

TEST(FedMgdaPlus, BiasAttackInvariant) {
  Rng rng(6, 0);
  auto rs = random_returns(5, 4, rng);
  const AggregatorConfig c = config(AggregatorKind::kFedMgdaPlus, 0.4);
  const ParamVector w0 = random_vector(4, rng);
  const ParamVector honest = aggregate(state_at(w0), rs, c).w;
  rs[2].train_loss_before += 1000.0;
  rs[2].train_loss_after += 1000.0;
  EXPECT_EQ(aggregate(state_at(w0), rs, c).w, honest);
}

TEST(FedMgdaPlus, ScalingAttackInvariantWhenNormalized) {
  Rng rng(7, 0);
  for (int trial = 0; trial < 20; ++trial) {
    auto rs = random_returns(5, 4, rng);
    const AggregatorConfig c = config(AggregatorKind::kFedMgdaPlus, rng.uniform());
    const ParamVector w0 = random_vector(4, rng);
    const ParamVector honest = aggregate(state_at(w0), rs, c).w;
    const double s = std::exp(rng.uniform(-5, 8));
    rs[trial % 5].update = scale(s, rs[trial % 5].update);
    const ParamVector attacked = aggregate(state_at(w0), rs, c).w;
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(attacked[j], honest[j], 1e-12);
  }
}

// lambda0 over a roster restricted to the participants equals the
// renormalized explicit weights; users outside the round have no influence.
TEST(FedMgdaPlus, DependsOnlyOnParticipants) {
  Rng rng(8, 0);
  const auto all = random_returns(6, 3, rng);
  const std::vector<ClientReturn> some{all[1], all[3], all[4]};
  AggregatorConfig roster = config(AggregatorKind::kFedMgdaPlus, 0.2);
  roster.lambda0_mode = Lambda0Mode::kExplicit;
  roster.lambda0_weights = {0.1, 0.3, 0.05, 0.2, 0.1, 0.25};
  AggregatorConfig bigger = roster;
  bigger.lambda0_weights.push_back(0.4);  // a seventh user who never reports
  const SimplexWeights ref = reference_weights(roster, some);
  EXPECT_NEAR(ref[0], 0.3 / 0.6, 1e-15);
  EXPECT_NEAR(ref[1], 0.2 / 0.6, 1e-15);
  EXPECT_NEAR(ref[2], 0.1 / 0.6, 1e-15);
  EXPECT_EQ(aggregate(state_at(ParamVector(3)), some, roster).w,
            aggregate(state_at(ParamVector(3)), some, bigger).w);
  AggregatorConfig missing = roster;
  missing.lambda0_weights.resize(2);
  EXPECT_THROW(aggregate(state_at(ParamVector(3)), some, missing), ArgumentError);
}

TEST(FedMgdaPlus, ProxKindsShareServerLogic) {
  Rng rng(9, 0);
  const auto rs = random_returns(4, 3, rng);
  AggregatorConfig prox = config(AggregatorKind::kMgdaProx, 0.5);
  prox.prox_mu = 0.0;
  const AggregatorConfig plus = config(AggregatorKind::kFedMgdaPlus, 0.5);
  EXPECT_EQ(aggregate(state_at(ParamVector(3)), rs, prox).w,
            aggregate(state_at(ParamVector(3)), rs, plus).w);
  AggregatorConfig fedprox = config(AggregatorKind::kFedProx);
  fedprox.prox_mu = 0.0;
  EXPECT_EQ(aggregate(state_at(ParamVector(3)), rs, fedprox).w,
            aggregate(state_at(ParamVector(3)), rs, config(AggregatorKind::kFedAvg)).w);
  fedprox.prox_mu = 0.7;
  EXPECT_EQ(client_prox_mu(fedprox), 0.7);
  EXPECT_EQ(client_prox_mu(config(AggregatorKind::kFedAvg)), 0.0);
}

// Full-batch, single-step clients on logistic tasks: with epsilon = 1 every
// participant's loss does not increase.
TEST(FedMgdaPlus, CommonDescent) {
  Rng rng(10, 0);
  const ModelSpec spec{ModelKind::kLogistic, 3, 3, 0, 0.0};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<UserTask> tasks;
    for (int u = 0; u < 5; ++u) {
      UserTask t;
      t.user_id = u;
      t.spec = spec;
      t.train = random_batch(spec, 8, rng);
      t.local_lr = 0.1;
      t.batch_size = 8;
      tasks.push_back(t);
    }
    ServerState state = state_at(random_vector(param_dim(spec), rng));
    AggregatorConfig c = config(AggregatorKind::kFedMgdaPlus, 1.0);
    c.global_lr.initial = 0.05;
    for (int round = 0; round < 5; ++round) {
      std::vector<ClientReturn> rs;
      for (const auto& t : tasks) {
        Rng local(0, static_cast<std::uint64_t>(t.user_id));
        rs.push_back(client_update(t, state.w, local, 0.0));
      }
      const ServerState next = aggregate(state, rs, c);
      for (const auto& t : tasks) {
        EXPECT_LE(loss(spec, next.w, t.train), loss(spec, state.w, t.train) + 1e-10);
      }
      state = next;
    }
  }
}

TEST(QFedAvg, QZeroIsUniformAverage) {
  Rng rng(11, 0);
  const auto rs = random_returns(5, 4, rng);
  AggregatorConfig q = config(AggregatorKind::kQFedAvg);
  q.q = 0.0;
  q.lipschitz = 4.0;
  const ParamVector w0 = random_vector(4, rng);
  const ParamVector a = aggregate(state_at(w0), rs, q).w;
  const ParamVector b = aggregate(state_at(w0), rs, config(AggregatorKind::kFedAvg)).w;
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a[j], b[j], 1e-15);
}

TEST(QFedAvg, SingleUserClosedForm) {
  const double q = 2.0, L = 3.0, F = 0.8;
  const ParamVector g{0.5, -1.0};
  const std::vector<ClientReturn> rs{ret(0, g, F)};
  AggregatorConfig c = config(AggregatorKind::kQFedAvg);
  c.q = q;
  c.lipschitz = L;
  const ParamVector w = aggregate(state_at({1, 1}), rs, c).w;
  // Delta = L g; step = F^q Delta / (q F^(q-1) ||Delta||^2 + L F^q).
  const double f = F + 1e-10;
  const double delta_sq = L * L * 1.25;
  const double factor = std::pow(f, q) / (q * std::pow(f, q - 1) * delta_sq + L * std::pow(f, q));
  EXPECT_NEAR(w[0], 1 - factor * L * 0.5, 1e-15);
  EXPECT_NEAR(w[1], 1 + factor * L * 1.0, 1e-15);
}

TEST(QFedAvg, NotInvariantToLossScaling) {
  Rng rng(12, 0);
  auto rs = random_returns(3, 3, rng);
  AggregatorConfig c = config(AggregatorKind::kQFedAvg);
  c.q = 1.0;
  const ParamVector a = aggregate(state_at(ParamVector(3)), rs, c).w;
  for (auto& r : rs) r.train_loss_before *= 2;
  EXPECT_NE(aggregate(state_at(ParamVector(3)), rs, c).w, a);
  rs[0].train_loss_before += 1000;
  EXPECT_NE(aggregate(state_at(ParamVector(3)), rs, c).w, a);
}

TEST(QFedAvg, DegenerateRoundIsSkipped) {
  const std::vector<ClientReturn> rs{ret(0, {0, 0}, 0.0)};
  AggregatorConfig c = config(AggregatorKind::kQFedAvg);
  c.q = 1.0;
  c.lipschitz = 1e-320;  // denominator underflows to zero
  AggregateInfo info;
  const ServerState next = aggregate(state_at({1, 2}, 3), rs, c, &info);
  EXPECT_TRUE(info.skipped);
  EXPECT_EQ(next.w, (ParamVector{1, 2}));
  EXPECT_EQ(next.round, 4);
  const std::vector<ClientReturn> negative{ret(0, {1, 0}, -1.0)};
  c.lipschitz = 1.0;
  EXPECT_THROW(aggregate(state_at({1, 2}), negative, c), ArgumentError);
}

TEST(Afl, LambdaAscentExample) {
  AggregatorConfig c = config(AggregatorKind::kAfl);
  c.afl_lr_lambda = 0.1;
  c.afl_lr_w = 1.0;
  ServerState s = initial_server_state(c, ParamVector{0, 0}, 2);
  const std::vector<ClientReturn> rs{ret(0, {1, 0}, 1.0), ret(1, {0, 1}, 2.0)};
  const ServerState next = aggregate(s, rs, c);
  ASSERT_TRUE(next.afl_lambda.has_value());
  EXPECT_NEAR((*next.afl_lambda)[0], 0.45, 1e-12);
  EXPECT_NEAR((*next.afl_lambda)[1], 0.55, 1e-12);
  EXPECT_NEAR(next.w[0], -0.45, 1e-12);
  EXPECT_NEAR(next.w[1], -0.55, 1e-12);
}

TEST(Afl, EqualLossesKeepLambda) {
  AggregatorConfig c = config(AggregatorKind::kAfl);
  ServerState s = initial_server_state(c, ParamVector{0}, 3);
  s.afl_lambda = SimplexWeights({0.2, 0.3, 0.5});
  const std::vector<ClientReturn> rs{ret(0, {1}, 0.7), ret(1, {1}, 0.7), ret(2, {1}, 0.7)};
  const ServerState next = aggregate(s, rs, c);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR((*next.afl_lambda)[i], (*s.afl_lambda)[i], 1e-12);
  }
}

TEST(Afl, ZeroLambdaRateIsFixedWeightAverage) {
  Rng rng(13, 0);
  const auto rs = random_returns(3, 4, rng);
  AggregatorConfig c = config(AggregatorKind::kAfl);
  c.afl_lr_lambda = 0.0;
  c.afl_lr_w = 0.3;
  ServerState s = initial_server_state(c, ParamVector(4), 3);
  s.afl_lambda = SimplexWeights({0.6, 0.3, 0.1});
  const ServerState next = aggregate(s, rs, c);
  const std::vector<double> weights{0.6, 0.3, 0.1};
  std::vector<ParamVector> g;
  for (const auto& r : rs) g.push_back(r.update);
  const ParamVector expect = scale(-0.3, weighted_sum(weights, g));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(next.w[j], expect[j], 1e-15);
}

TEST(Afl, BiasAttackChangesOutcome) {
  Rng rng(14, 0);
  auto rs = random_returns(2, 3, rng);
  AggregatorConfig c = config(AggregatorKind::kAfl);
  const ServerState s = initial_server_state(c, ParamVector(3), 2);
  const ServerState honest = aggregate(s, rs, c);
  rs[1].train_loss_before += 1000.0;
  const ServerState attacked = aggregate(s, rs, c);
  EXPECT_NE(attacked.w, honest.w);
  EXPECT_NEAR((*attacked.afl_lambda)[1], 1.0, 1e-12);
}

TEST(Afl, RequiresFullParticipation) {
  AggregatorConfig c = config(AggregatorKind::kAfl);
  const ServerState s = initial_server_state(c, ParamVector(2), 3);
  const std::vector<ClientReturn> rs{ret(0, {1, 0}), ret(2, {0, 1})};
  EXPECT_THROW(aggregate(s, rs, c), UnsupportedError);
  EXPECT_THROW(aggregate(state_at(ParamVector(2)), rs, c), ArgumentError);
}

}  // namespace
}  // namespace fedsim
