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

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include <Eigen/LU>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "cppo/certify.hpp"
#include "cppo/errors.hpp"
#include "cppo/linalg.hpp"
#include "cppo/ppo.hpp"
#include "cppo/variational.hpp"
#include "test_util.hpp"

namespace cppo {
namespace {

Matrix b01() { return (Matrix(2, 1) << 0, 1).finished(); }

MetricField identity_metric(int n) {
  return MetricField::constant(Matrix::Identity(n, n), 0.1, 10.0);
}

TEST(RadicalInverse, BaseTwoAndThree) {
  EXPECT_EQ(radical_inverse(1, 2), 0.5);
  EXPECT_EQ(radical_inverse(2, 2), 0.25);
  EXPECT_EQ(radical_inverse(3, 2), 0.75);
  EXPECT_NEAR(radical_inverse(1, 3), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(radical_inverse(4, 3), 4.0 / 9.0, 1e-15);
}

TEST(CertificationSamples, InsideBoxWithBoundaryShare) {
  const Box box{(Vector(3) << -1, -2, 0).finished(), (Vector(3) << 1, 2, 5).finished()};
  const auto pts = certification_samples(box, 1000, 0.2, 3);
  ASSERT_EQ(pts.size(), 1000u);
  int on_face = 0;
  for (const Vector& x : pts) {
    EXPECT_TRUE(box.contains(x));
    bool face = false;
    for (int i = 0; i < 3; ++i) face |= x(i) == box.lo(i) || x(i) == box.hi(i);
    on_face += face;
  }
  EXPECT_EQ(on_face, 200);
  const auto again = certification_samples(box, 1000, 0.2, 3);
  for (size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(pts[i], again[i]);
}

TEST(Envelopes, ZeroDriftUnitInput) {
  const LinearSystem sys(Matrix::Zero(2, 2), b01(), {0}, {1});
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  const auto pts = certification_samples(sys.region(), 500, 0.2, 1);
  const Envelopes e = estimate_envelopes(sys, ctrl, pts);
  EXPECT_EQ(e.f_bar, 0.0);
  EXPECT_NEAR(e.b_bar, 1.1, 1e-15);
  EXPECT_NEAR(e.jh_bar, 1.1, 1e-15);
  EXPECT_EQ(e.u_bar, 0.0);
}

TEST(Constants, StableIdentityExample) {
  const LinearSystem sys(-Matrix::Identity(2, 2), b01(), {0}, {1});
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  const auto pts = certification_samples(sys.region(), 500, 0.2, 1);
  const TheoremConstants c = compute_constants(sys, ctrl, identity_metric(2), pts);
  EXPECT_NEAR(c.c_f, 2.2, 1e-7);
  EXPECT_EQ(c.c_bdb, 0.0);
  EXPECT_NEAR(c.c_bj, 2.2, 1e-7);
  EXPECT_EQ(c.excluded, 0);
  EXPECT_EQ(c.metric_grad_sup, 0.0);
}

TEST(Theorem1Margin, CertifiedArithmetic) {
  TheoremConstants c;
  c.c_f = 2.2;
  EXPECT_NEAR(theorem1_margin(c, 0.0, 0.0, 0.1, Envelopes{}, 3.0), -0.8, 1e-15);
}

TEST(Theorem1Margin, ZeroAlphaNeverCertifies) {
  TheoremConstants c;
  c.c_f = 0.1;
  c.c_bj = 0.3;
  EXPECT_GT(theorem1_margin(c, 2.0, 1.0, 0.1, Envelopes{0.5, 1.0, 0.2, 1.0}, 0.0), 0.0);
}

TEST(Theorem1Margin, HandAssembledTerms) {
  TheoremConstants c;
  c.c_f = 0.4;
  c.c_bdb = 0.2;
  c.c_bj = 1.5;
  const Envelopes env{2.0, 1.2, 3.0, 1.1};
  const double expected = 0.4 + 0.2 + 1.5 * 2.0 * 1.1 + (0.7 / std::sqrt(0.25)) * (2.0 + 1.2 * 3.0) - 0.9;
  EXPECT_NEAR(theorem1_margin(c, 2.0, 0.7, 0.25, env, 0.9), expected, 1e-12);
  const double linear = 0.4 + 0.2 + 1.5 * 2.0 * 1.1 + (0.7 / 0.25) * (2.0 + 1.2 * 3.0) - 0.9;
  EXPECT_NEAR(theorem1_margin_linear_mmin(c, 2.0, 0.7, 0.25, env, 0.9), linear, 1e-12);
  const double normalized = 0.4 + 0.2 + 1.5 * 2.0 * 1.1 + 0.3 * (2.0 + 1.2 * 3.0) - 0.9;
  EXPECT_NEAR(theorem1_margin_normalized(c, 2.0, 0.3, env, 0.9), normalized, 1e-12);
}

TEST(Theorem1Margin, MonotoneInPolicyLipschitz) {
  TheoremConstants c;
  c.c_f = 0.4;
  c.c_bj = 1.5;
  const Envelopes env{2.0, 1.2, 3.0, 1.1};
  double prev = -std::numeric_limits<double>::infinity();
  for (double l_pi = 0.0; l_pi <= 10.0; l_pi += 0.5) {
    const double m = theorem1_margin(c, l_pi, 0.7, 0.25, env, 0.9);
    EXPECT_GE(m, prev);
    prev = m;
  }
}

TEST(AlphaFloor, Examples) {
  EXPECT_EQ(alpha_floor(TheoremConstants{}, 0.0, 0.0, 0.1, Envelopes{}), 0.0);
  TheoremConstants c;
  c.c_f = 2.2;
  EXPECT_NEAR(alpha_floor(c, 0.0, 0.0, 0.1, Envelopes{}), 2.2, 1e-15);
}

TEST(AlphaFloor, IdentityWithMargin) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const Vector r = uniform_in(rng, Vector::Zero(12), Vector::Constant(12, 3.0));
    TheoremConstants c;
    c.c_f = r(0);
    c.c_bdb = r(1);
    c.c_bj = r(2);
    const Envelopes env{r(3), r(4), r(5), r(6)};
    const double alpha = r(7), l_pi = r(8), l_m = r(9), m_min = 0.05 + r(10);
    EXPECT_NEAR(alpha_floor(c, l_pi, l_m, m_min, env),
                alpha + theorem1_margin(c, l_pi, l_m, m_min, env, alpha), 1e-12);
  }
}

TEST(EpsilonBudget, Examples) {
  const EpsilonBudget b = epsilon_budget(-2.0, 1.0);
  EXPECT_FALSE(b.empty);
  EXPECT_EQ(b.upper, 1.0);
  EXPECT_EQ(b.literal_upper, 3.0);
  EXPECT_TRUE(epsilon_budget(-0.5, 1.0).empty);
  EXPECT_TRUE(epsilon_budget(-1.0, 1.0).empty);
}

TEST(EpsilonBudget, ScalarChain) {
  const auto sys = testing::scalar_system(-1.0);
  const LinearFeedback ctrl(Matrix::Zero(1, 1));
  const MetricField f = MetricField::constant(Matrix::Ones(1, 1), 0.1, 10.0);
  const ResidualStats st = sample_residuals(*sys, ctrl, f, 1.0, 0.5,
                                            certification_samples(sys->region(), 100, 0.2, 1));
  EXPECT_NEAR(st.worst_growth_rate, -2.0, 1e-7);
  const EpsilonBudget b = epsilon_budget(st.worst_growth_rate, 1.0);
  EXPECT_FALSE(b.empty);
  EXPECT_GE(b.upper, 0.5);
}

TEST(SampleResiduals, LinearCertifiedExample) {
  const LinearSystem sys(-Matrix::Identity(2, 2), b01(), {0}, {1});
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  const ResidualStats st = sample_residuals(sys, ctrl, identity_metric(2), 1.0, 0.05,
                                            certification_samples(sys.region(), 1000, 0.2, 2));
  EXPECT_NEAR(st.worst_lambda_max, -1.0, 1e-9);
  EXPECT_EQ(st.violations, 0);
  EXPECT_EQ(st.violation_fraction, 0.0);
}

TEST(SampleResiduals, UntrainedPendulumReportsFraction) {
  auto sys = make_system("pendulum");
  sys->set_observation_kind(ObservationKind::kTrig);
  const PolicyStack stack = make_policy_stack(*sys, PolicyStackSpec{});
  const PdPolicyController ctrl(stack, *sys);
  const ResidualStats st = sample_residuals(*sys, ctrl, testing::random_metric(2, 5), 0.5, 0.05,
                                            certification_samples(sys->region(), 500, 0.2, 3), true);
  EXPECT_EQ(st.rows.size(), 500u);
  EXPECT_GE(st.violation_fraction, 0.0);
  EXPECT_LE(st.violation_fraction, 1.0);
  std::ostringstream os;
  write_residual_csv(os, st);
  const std::string csv = os.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 501);
}

// Each proof-step norm is bounded by the constant assembled from the same
// samples.
TEST(SampleResiduals, ProofStepNormsRespectConstants) {
  for (const char* name : {"pendulum", "cartpole"}) {
    auto sys = make_system(name);
    sys->set_observation_kind(ObservationKind::kTrig);
    PolicyStack stack = make_policy_stack(*sys, PolicyStackSpec{});
    testing::jitter(stack.policy_net, 0.2, 6);
    stack.policy_net.spectral_normalize();
    const PdPolicyController ctrl(stack, *sys);
    const MetricField f = testing::random_metric(sys->state_dim(), 7);
    const auto pts = certification_samples(sys->region(), 800, 0.2, 8);
    const TheoremConstants c = compute_constants(*sys, ctrl, f, pts, 1.0);
    const Envelopes env = estimate_envelopes(*sys, ctrl, pts, 1.0);
    const ResidualStats st = sample_residuals(*sys, ctrl, f, 0.5, 0.05, pts, true);
    for (const ResidualSample& row : st.rows) {
      EXPECT_LE(row.norm_f, c.c_f + 1e-9) << name;
      EXPECT_LE(row.norm_input, c.c_bdb + 1e-9) << name;
      EXPECT_LE(row.norm_feedback, c.c_bj * ctrl.lipschitz_bound() * env.jh_bar + 1e-9) << name;
    }
  }
}

// Stabilizing linear feedback with a constant metric from the Lyapunov
// equation: zero violations and the analytic margin above every sample.
TEST(LinearOracle, LyapunovMetricCertifiesSamples) {
  Matrix a(2, 2), k(1, 2);
  a << 0, 1, 2, -0.5;
  k << -3, -1.5;
  const Matrix acl = a + b01() * k;
  const Matrix i2 = Matrix::Identity(2, 2);
  // A^T M + M A = -I solved column by column on the vectorized operator.
  Matrix op = Matrix::Zero(4, 4);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 2; ++i) {
      Matrix e = Matrix::Zero(2, 2);
      e(i, j) = 1.0;
      const Matrix img = acl.transpose() * e + e * acl;
      op.col(j * 2 + i) = Eigen::Map<const Vector>(img.data(), 4);
    }
  const Matrix rhs = -i2;
  const Vector vm = op.fullPivLu().solve(Eigen::Map<const Vector>(rhs.data(), 4));
  Matrix m = Eigen::Map<const Matrix>(vm.data(), 2, 2);
  m = sym(m);
  ASSERT_GT(symmetric_eig(m).values(0), 0.0);

  const double rate = -symmetric_eig(sym(inv_sqrt(m) * (acl.transpose() * m + m * acl) *
                                         inv_sqrt(m))).values(1);
  const double alpha = 0.5 * rate;
  const LinearSystem sys(a, b01(), {0}, {1});
  const LinearFeedback ctrl(k);
  const MetricField f = MetricField::constant(m, 0.01, 100.0);
  CertifyOptions opt;
  opt.samples = 2000;
  opt.alpha = alpha;
  opt.eps_margin = 0.1 * rate;
  const CertificationReport rep = certify(sys, ctrl, f, opt);
  EXPECT_EQ(rep.residuals.violations, 0);
  EXPECT_NEAR(rep.residuals.worst_lambda_max, -0.5 * rate, 1e-7);
  EXPECT_GE(rep.theorem1_margin, rep.residuals.worst_lambda_max);
  EXPECT_TRUE(rep.conservative);
  EXPECT_NE(rep.verdict, Verdict::kFailed);
}

TEST(Certify, StableLinearIsSampledOnly) {
  const LinearSystem sys(-Matrix::Identity(2, 2), b01(), {0}, {1});
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  CertifyOptions opt;
  opt.samples = 1000;
  opt.alpha = 1.0;
  const CertificationReport r = certify(sys, ctrl, identity_metric(2), opt);
  EXPECT_EQ(r.verdict, Verdict::kSampledOnly);
  EXPECT_NEAR(r.residuals.worst_lambda_max, -1.0, 1e-9);
  EXPECT_NEAR(r.theorem1_margin, 1.2, 1e-6);
  EXPECT_TRUE(r.conservative);
  EXPECT_NEAR(r.alpha_floor, r.alpha + r.theorem1_margin, 1e-12);
}

TEST(Certify, RefutedMarginIsNotCertified) {
  // Zero dynamics: every constant vanishes so the margin is -alpha, yet
  // R = alpha M is positive definite at every sample.
  const LinearSystem sys(Matrix::Zero(2, 2), Matrix::Zero(2, 1), {0}, {1});
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  CertifyOptions opt;
  opt.samples = 1000;
  opt.alpha = 1.0;
  const CertificationReport r = certify(sys, ctrl, identity_metric(2), opt);
  EXPECT_LT(r.theorem1_margin, 0.0);
  EXPECT_FALSE(r.conservative);
  EXPECT_EQ(r.verdict, Verdict::kFailed);
}

TEST(Certify, UntrainedPendulumFailsConservatively) {
  auto sys = make_system("pendulum");
  sys->set_observation_kind(ObservationKind::kTrig);
  const PolicyStack stack = make_policy_stack(*sys, PolicyStackSpec{});
  const PdPolicyController ctrl(stack, *sys);
  CertifyOptions opt;
  opt.samples = 2000;
  const CertificationReport r = certify(*sys, ctrl, testing::random_metric(2, 9), opt);
  EXPECT_EQ(r.verdict, Verdict::kFailed);
  EXPECT_LE(r.residuals.worst_lambda_max, r.theorem1_margin + 1e-6);
  EXPECT_TRUE(r.conservative);
}

TEST(Certify, RejectsBadOptions) {
  const LinearSystem sys(-Matrix::Identity(2, 2), b01(), {0}, {1});
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  CertifyOptions opt;
  opt.safety = 0.9;
  EXPECT_THROW(certify(sys, ctrl, identity_metric(2), opt), ConfigError);
}

TEST(Report, JsonIsStableAndComplete) {
  const LinearSystem sys(-Matrix::Identity(2, 2), b01(), {0}, {1});
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  CertifyOptions opt;
  opt.samples = 1000;
  opt.alpha = 1.0;
  const std::string a = report_to_json(certify(sys, ctrl, identity_metric(2), opt));
  const std::string b = report_to_json(certify(sys, ctrl, identity_metric(2), opt));
  EXPECT_EQ(a, b);
  const nlohmann::json j = nlohmann::json::parse(a);
  EXPECT_EQ(j["schema"], "cppo.certification.v1");
  EXPECT_EQ(j["verdict"], "sampled-only");
  for (const char* key : {"envelopes", "lipschitz", "constants", "theorem1_margin",
                          "theorem1_margin_variants", "alpha_floor", "xi", "epsilon_budget",
                          "sampled_worst_residual", "violations", "conservative"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
}

TEST(IssBound, ZeroDisturbanceIsPureDecay) {
  for (double t : {0.0, 0.5, 3.0}) {
    EXPECT_NEAR(iss_bound(2.0, 0.25, 4.0, 0.0, 0.7, t), (2.0 / 0.5) * std::exp(-0.7 * t), 1e-15);
  }
}

TEST(IssBound, LongRunLimit) {
  EXPECT_NEAR(iss_bound(2.0, 0.25, 4.0, 0.3, 0.5, 200.0), (0.3 / 0.5) * 4.0, 1e-12);
}

TEST(IssBound, IsotropicMetricHasUnitCondition) {
  EXPECT_NEAR(iss_bound(0.0, 3.0, 3.0, 0.3, 0.5, 1e3), 0.3 / 0.5, 1e-12);
}

TEST(VerifyIss, StableLinearPasses) {
  LinearSystem sys(-Matrix::Identity(2, 2), b01(), {0}, {1});
  sys.set_disturbance_bound(0.5);
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  IssOptions o;
  o.magnitudes = {0.1, 0.2, 0.3, 0.4};
  o.trajectories_per_magnitude = 5;
  o.horizon_steps = 400;
  const IssResult r = verify_iss(sys, ctrl, MetricField::constant(Matrix::Identity(2, 2), 0.5, 2.0),
                                 1.0, o, true);
  EXPECT_EQ(r.trajectories.size(), 20u);
  EXPECT_EQ(r.clean, 20);
  EXPECT_TRUE(r.pass);
  for (size_t i = 1; i < r.max_error_per_magnitude.size(); ++i) {
    EXPECT_GE(r.max_error_per_magnitude[i], r.max_error_per_magnitude[i - 1]);
  }
  EXPECT_EQ(r.trajectories.front().times.size(), r.trajectories.front().errors.size());
}

TEST(VerifyIss, RejectsMagnitudeAboveBound) {
  LinearSystem sys(-Matrix::Identity(2, 2), b01(), {0}, {1});
  sys.set_disturbance_bound(0.1);
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  IssOptions o;
  o.magnitudes = {0.2};
  EXPECT_THROW(verify_iss(sys, ctrl, identity_metric(2), 1.0, o), ConfigError);
}

TEST(FitEnvelopeRate, RecoversExponent) {
  std::vector<double> e;
  for (int k = 0; k < 400; ++k) e.push_back(3.0 * std::exp(-2.0 * 0.005 * k));
  EXPECT_NEAR(fit_envelope_rate(e, 0.005), 2.0, 1e-9);
}

TEST(VerifyDecay, StableLinearRate) {
  const LinearSystem sys(-Matrix::Identity(2, 2), b01(), {0}, {1});
  const LinearFeedback ctrl(Matrix::Zero(1, 2));
  const DecayResult d = verify_decay(sys, ctrl, 5, 0.3, 400, 0.005, 0.2, 1);
  ASSERT_EQ(d.rates.size(), 5u);
  EXPECT_NEAR(d.min_rate, 1.0, 1e-6);
}

}  // namespace
}  // namespace cppo
