// Copyright 2026 The Contraction PPO Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "cppo/checkpoint.hpp"
#include "cppo/errors.hpp"
#include "cppo/linalg.hpp"
#include "cppo/trainer.hpp"
#include "test_util.hpp"

namespace cppo {
namespace {

using testing::fd_gradient;
using testing::rel_error;

TrainConfig tiny_config() {
  TrainConfig c;
  c.policy.policy_hidden = {16, 16};
  c.policy.value_hidden = {16};
  c.metric.hidden = {8, 8};
  c.n_envs = 4;
  c.rollout_length = 8;
  c.epochs = 2;
  c.minibatches = 2;
  c.iterations = 3;
  c.uniform_contraction_samples = 4;
  c.env.reset_fraction = 0.2;
  return c;
}

std::unique_ptr<ControlAffineSystem> trig_pendulum() {
  auto sys = make_system("pendulum");
  sys->set_observation_kind(ObservationKind::kTrig);
  return sys;
}

// Scalar xdot = a x with the PD layer switched off, so u = 0.
struct ScalarSetup {
  std::unique_ptr<LinearSystem> sys;
  PolicyStack stack;
  MetricField field = MetricField::constant(Matrix::Ones(1, 1), 0.1, 10.0);
};

ScalarSetup scalar_setup(double a) {
  ScalarSetup s;
  s.sys = testing::scalar_system(a);
  PolicyStackSpec spec;
  spec.kp = 0.0;
  spec.kd = 0.0;
  spec.policy_hidden = {4};
  spec.value_hidden = {4};
  s.stack = make_policy_stack(*s.sys, spec);
  return s;
}

TEST(ContractionLoss, ScalarSatisfiedHingeIsZero) {
  ScalarSetup s = scalar_setup(-1.0);
  const ContractionLossResult r = contraction_loss(s.field, s.stack, *s.sys, Vector::Constant(1, 2.0),
                                                   Vector::Zero(1), 1.0, 0.5);
  EXPECT_FALSE(r.skipped);
  EXPECT_DOUBLE_EQ(r.ratio, -1.0);
  EXPECT_EQ(r.loss, 0.0);
}

TEST(ContractionLoss, PositiveHingePassesThrough) {
  ScalarSetup s = scalar_setup(-0.6);
  const ContractionLossResult r = contraction_loss(s.field, s.stack, *s.sys, Vector::Constant(1, 2.0),
                                                   Vector::Zero(1), 1.0, 0.5);
  EXPECT_NEAR(r.ratio + 0.5, 0.3, 1e-12);
  EXPECT_NEAR(r.loss, 0.3, 1e-12);
}

TEST(ContractionLoss, TinyErrorIsSkipped) {
  ScalarSetup s = scalar_setup(1.0);
  const ContractionLossResult r = contraction_loss(s.field, s.stack, *s.sys, Vector::Zero(1),
                                                   Vector::Zero(1), 1.0, 0.5, true);
  EXPECT_TRUE(r.skipped);
  EXPECT_EQ(r.loss, 0.0);
}

TEST(ContractionLoss, GradientsMatchFiniteDifferences) {
  const auto sys = trig_pendulum();
  PolicyStackSpec spec;
  spec.policy_hidden = {8, 8};
  spec.value_hidden = {4};
  PolicyStack stack = make_policy_stack(*sys, spec);
  testing::jitter(stack.policy_net, 0.2, 1);
  MetricField field = testing::random_metric(2, 2);
  testing::jitter(field.mutable_net(), 0.2, 3);
  Rng rng(4);
  int checked = 0;
  for (const Vector& x : testing::uniform_states(sys->region().shrink(0.6), 60, 5)) {
    const Vector xd = build_desired_state(*sys, stack.q_ref + stack.mean_offset(sys->observe(x)));
    const ContractionLossResult r = contraction_loss(field, stack, *sys, x, xd, 0.5, 0.05, true);
    if (r.skipped || r.loss <= 1e-6) continue;
    // Skip saturated torques; the hinge is not differentiable across the clip.
    const Vector u = PdPolicyController(stack, *sys).control(sys->observe(x));
    if (std::abs(std::abs(u(0)) - sys->torque_limit()(0)) < 1e-3) continue;
    MetricField fprobe = field;
    const Vector fd_m = fd_gradient(
        [&](const Vector& p) {
          fprobe.mutable_net().set_parameters(p);
          return contraction_loss(fprobe, stack, *sys, x, xd, 0.5, 0.05).loss;
        },
        field.net().parameters());
    EXPECT_LT(rel_error(r.metric_grad.flatten(), fd_m), 1e-4);
    PolicyStack sprobe = stack;
    const Vector fd_p = fd_gradient(
        [&](const Vector& p) {
          sprobe.policy_net.set_parameters(p);
          return contraction_loss(field, sprobe, *sys, x, xd, 0.5, 0.05).loss;
        },
        stack.policy_net.parameters());
    EXPECT_LT(rel_error(r.policy_grad.flatten(), fd_p), 1e-4);
    if (++checked == 5) break;
  }
  EXPECT_GE(checked, 3);
}

TEST(TotalLoss, WeightedSum) {
  EXPECT_NEAR(total_loss(1.0, 2.0, 3.0, 0.01, 0.1), 1.32, 1e-15);
  EXPECT_EQ(total_loss(0.7, 5.0, 9.0, 0.0, 0.0), 0.7);
}

TEST(TotalLoss, NamesDivergentComponent) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss(1.0, nan, 0.0, 0.01, 0.1);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.component(), "l_contr");
  }
  try {
    total_loss(std::numeric_limits<double>::infinity(), 0.0, 0.0, 0.01, 0.1);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.component(), "l_ppo");
  }
}

TEST(TotalLoss, GradientIsLinearInComponents) {
  Rng rng(6);
  const Vector g_ppo = standard_normal(rng, 20), g_c = standard_normal(rng, 20),
               g_pd = standard_normal(rng, 20);
  const double wc = 0.01, wp = 0.1;
  const Vector combined = g_ppo + wc * g_c + wp * g_pd;
  // d total / d component weights, by finite differences on the scalar map.
  const Vector w = (Vector(3) << 1.0, wc, wp).finished();
  const Vector fd = fd_gradient(
      [&](const Vector& l) { return total_loss(l(0), l(1), l(2), wc, wp); }, Vector::Ones(3));
  EXPECT_LT((fd - w).norm(), 1e-10);
  EXPECT_LT((combined - (w(0) * g_ppo + w(1) * g_c + w(2) * g_pd)).norm(), 1e-10);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  Adam adam(3, 0.01);
  Vector p = Vector::Zero(3);
  adam.step(p, (Vector(3) << 2.0, -0.5, 1e-3).finished());
  EXPECT_NEAR(p(0), -0.01, 1e-9);
  EXPECT_NEAR(p(1), 0.01, 1e-9);
  EXPECT_NEAR(p(2), -0.01, 1e-6);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(TrainConfig, RejectsBadValues) {
  TrainConfig c;
  c.gamma = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.metric.m_max = 0.05;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.iterations = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Train, ZeroIterationsReturnsInitialState) {
  const auto sys = trig_pendulum();
  TrainConfig c = tiny_config();
  c.iterations = 0;
  const TrainResult r = train(*sys, c);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(encode_checkpoint(r.checkpoint),
            encode_checkpoint(checkpoint_of(make_initial_state(*sys, c))));
}

std::string metrics_csv(const TrainResult& r) {
  std::ostringstream os;
  write_metrics_header(os);
  for (const MetricsRow& row : r.log) write_metrics_row(os, row);
  return os.str();
}

TEST(Train, DeterministicUnderSeeds) {
  const auto sys = trig_pendulum();
  const TrainConfig c = tiny_config();
  const TrainResult a = train(*sys, c), b = train(*sys, c);
  EXPECT_EQ(metrics_csv(a), metrics_csv(b));
  EXPECT_EQ(encode_checkpoint(a.checkpoint), encode_checkpoint(b.checkpoint));
  TrainConfig other = c;
  other.seed = 9;
  EXPECT_NE(metrics_csv(train(*sys, other)), metrics_csv(a));
}

TEST(Train, MetricsHeader) {
  std::ostringstream os;
  write_metrics_header(os);
  EXPECT_EQ(os.str(), "iter,mean_reward,violation_rate,l_ppo,l_contr,l_pd,L_pi,L_M,wallclock_s\n");
}

TEST(Train, BudgetsHoldAfterEveryIteration) {
  const auto sys = trig_pendulum();
  const TrainConfig c = tiny_config();
  int seen = 0;
  train(*sys, c, [&](const MetricsRow& row, const TrainState& st) {
    ++seen;
    for (const LipschitzMlp* net : {&st.stack.policy_net, &st.field.net()}) {
      for (const DenseLayer& layer : net->layers()) {
        EXPECT_LE(spectral_norm(layer.weight), layer.budget + 1e-6);
      }
    }
    const PdPolicyController ctrl(st.stack, *sys);
    for (const Vector& x : testing::uniform_states(sys->region(), 100, 7)) {
      EXPECT_LE(spectral_norm(ctrl.control_jacobian(sys->observe(x))), row.lipschitz_pi + 1e-9);
    }
    EXPECT_LE(st.stack.log_std.maxCoeff(), c.log_std_max);
    EXPECT_GE(st.stack.log_std.minCoeff(), c.log_std_min);
  });
  EXPECT_EQ(seen, c.iterations);
}

TEST(Train, SkippedSamplesAreCounted) {
  const auto sys = trig_pendulum();
  const TrainResult r = train(*sys, tiny_config());
  long skipped = 0;
  for (const MetricsRow& row : r.log) {
    EXPECT_GT(row.contraction_samples, 0);
    EXPECT_LE(row.skipped_samples, row.contraction_samples);
    skipped += row.skipped_samples;
  }
  EXPECT_EQ(skipped, r.total_skipped);
}

TEST(Train, IdentityMetricStaysFixed) {
  const auto sys = trig_pendulum();
  TrainConfig c = tiny_config();
  c.metric.identity = true;
  const TrainResult r = train(*sys, c);
  EXPECT_EQ(r.state.field.metric_matrix(Vector::Ones(2)), Matrix::Identity(2, 2));
}

TEST(Train, ResumesFromCheckpoint) {
  const auto sys = trig_pendulum();
  const TrainConfig c = tiny_config();
  const TrainResult r = train(*sys, c);
  const TrainState back = state_from_checkpoint(*sys, c, decode_checkpoint(encode_checkpoint(r.checkpoint)));
  EXPECT_EQ(back.stack.policy_net.parameters(), r.state.stack.policy_net.parameters());
  EXPECT_EQ(back.field.net().parameters(), r.state.field.net().parameters());
  EXPECT_EQ(back.stack.log_std, r.state.stack.log_std);
}

TEST(FreshViolations, DeterministicAndBounded) {
  const auto sys = trig_pendulum();
  const TrainState st = make_initial_state(*sys, tiny_config());
  const ViolationStats a = fresh_violation_rate(st.field, st.stack, *sys, 0.5, 0.05, 300, 8);
  const ViolationStats b = fresh_violation_rate(st.field, st.stack, *sys, 0.5, 0.05, 300, 8);
  EXPECT_EQ(a.violations, b.violations);
  EXPECT_EQ(a.samples, 300);
  EXPECT_EQ(a.evaluated + a.skipped, a.samples);
  EXPECT_GE(a.rate, 0.0);
  EXPECT_LE(a.rate, 1.0);
}

TEST(EvaluateEpisodes, Deterministic) {
  const auto sys = trig_pendulum();
  const TrainState st = make_initial_state(*sys, tiny_config());
  EnvOptions env;
  env.episode_length = 40;
  env.reset_fraction = 0.2;
  const EpisodeStats a = evaluate_episodes(st.stack, *sys, env, 10, 9);
  const EpisodeStats b = evaluate_episodes(st.stack, *sys, env, 10, 9);
  EXPECT_EQ(a.episodes, 10);
  EXPECT_EQ(a.failures, b.failures);
  EXPECT_EQ(a.mean_return, b.mean_return);
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint sample_checkpoint() {
  const auto sys = trig_pendulum();
  TrainState st = make_initial_state(*sys, tiny_config());
  testing::jitter(st.stack.policy_net, 0.1, 10);
  testing::jitter(st.field.mutable_net(), 0.1, 11);
  return checkpoint_of(st);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const Checkpoint c = sample_checkpoint();
  const Checkpoint d = decode_checkpoint(encode_checkpoint(c));
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const Vector y = 3.0 * standard_normal(rng, 3);
    const Vector x = 3.0 * standard_normal(rng, 2);
    const Vector a1 = c.policy.evaluate(y), a2 = d.policy.evaluate(y);
    const Vector v1 = c.value.evaluate(y), v2 = d.value.evaluate(y);
    const Vector m1 = c.metric.evaluate(x), m2 = d.metric.evaluate(x);
    ASSERT_EQ(0, std::memcmp(a1.data(), a2.data(), sizeof(double) * a1.size()));
    ASSERT_EQ(0, std::memcmp(v1.data(), v2.data(), sizeof(double) * v1.size()));
    ASSERT_EQ(0, std::memcmp(m1.data(), m2.data(), sizeof(double) * m1.size()));
  }
  EXPECT_EQ(encode_checkpoint(d), encode_checkpoint(c));
  EXPECT_EQ(d.log_std, c.log_std);
  for (size_t l = 0; l < c.policy.num_layers(); ++l) {
    EXPECT_EQ(d.policy.layers()[l].budget, c.policy.layers()[l].budget);
    EXPECT_EQ(d.policy.layers()[l].activation, c.policy.layers()[l].activation);
  }
}

TEST(Checkpoint, RejectsBadMagic) {
  std::string bytes = encode_checkpoint(sample_checkpoint());
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, RejectsOtherVersion) {
  std::string bytes = encode_checkpoint(sample_checkpoint());
  bytes[7] = static_cast<char>(kCheckpointVersion + 1);
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, RejectsTruncationAndTrailingBytes) {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  for (size_t cut : {size_t{3}, size_t{12}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(bytes.substr(0, cut)), CheckpointError) << cut;
  }
  EXPECT_THROW(decode_checkpoint(bytes + "x"), CheckpointError);
}

TEST(Checkpoint, MissingFileRaises) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ckpt.bin"), CheckpointError);
}

}  // namespace
}  // namespace cppo
