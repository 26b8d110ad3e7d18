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
#include <numbers>

#include <gtest/gtest.h>

#include "cppo/dynamics.hpp"
#include "cppo/errors.hpp"
#include "test_util.hpp"

namespace cppo {
namespace {

using testing::fd_jacobian;
using testing::rel_error;

std::unique_ptr<ControlAffineSystem> pendulum() { return make_system("pendulum"); }

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

TEST(Pendulum, EquilibriumIsFixed) {
  const auto sys = pendulum();
  const Vector xdot = eval_dynamics(*sys, vec({0, 0}), vec({0}), 0.0, DisturbanceModel());
  EXPECT_EQ(xdot, vec({0, 0}));
}

TEST(Pendulum, HorizontalFalls) {
  const auto sys = pendulum();
  const Vector xdot =
      eval_dynamics(*sys, vec({std::numbers::pi / 2, 0}), vec({0}), 0.0, DisturbanceModel());
  EXPECT_NEAR(xdot(0), 0.0, 1e-15);
  EXPECT_NEAR(xdot(1), -9.81, 1e-12);
}

TEST(Pendulum, TorqueEntersSecondRow) {
  const auto sys = pendulum();
  const Vector xdot = eval_dynamics(*sys, vec({0, 0}), vec({2}), 0.0, DisturbanceModel());
  EXPECT_EQ(xdot, vec({0, 2}));
}

TEST(Pendulum, JacobianAtOrigin) {
  const auto sys = pendulum();
  const JacobianBundle jb = eval_jacobians(*sys, vec({0, 0}), vec({0}));
  Matrix expected(2, 2);
  expected << 0, 1, -9.81, -0.1;
  EXPECT_LT((jb.drift_jacobian - expected).norm(), 1e-12);
}

TEST(Pendulum, JacobianFlipsAtBottom) {
  const auto sys = pendulum();
  const JacobianBundle jb = eval_jacobians(*sys, vec({std::numbers::pi, 0}), vec({0}));
  Matrix expected(2, 2);
  expected << 0, 1, 9.81, -0.1;
  EXPECT_LT((jb.drift_jacobian - expected).norm(), 1e-12);
}

TEST(Dynamics, ConstantInputMatrixHasZeroDerivative) {
  for (const char* name : {"pendulum", "point_mass"}) {
    const auto sys = make_system(name);
    const Vector x = sys->region().center() + Vector::Constant(sys->state_dim(), 0.3);
    for (const Matrix& d : eval_jacobians(*sys, x, Vector::Zero(sys->input_dim())).input_jacobians) {
      EXPECT_TRUE(d.isZero(0.0)) << name;
    }
  }
}

TEST(Observation, IdentityMap) {
  const auto sys = pendulum();
  const Vector x = vec({0.3, -1.2});
  const Observation obs = observe(*sys, x);
  EXPECT_EQ(obs.y, x);
  EXPECT_EQ(obs.jacobian, Matrix::Identity(2, 2));
}

TEST(Observation, TrigMap) {
  auto sys = pendulum();
  sys->set_observation_kind(ObservationKind::kTrig);
  Observation obs = observe(*sys, vec({0, 0.5}));
  EXPECT_EQ(obs.y, vec({0, 1, 0.5}));
  obs = observe(*sys, vec({0, 0}));
  Matrix expected(3, 2);
  expected << 1, 0, 0, 0, 0, 1;
  EXPECT_EQ(obs.jacobian, expected);
}

TEST(Rk4, ZeroFieldLeavesStateUnchanged) {
  const LinearSystem sys(Matrix::Zero(2, 2), Matrix::Zero(2, 1), {0}, {1});
  const Vector x = vec({0.7, -0.2});
  EXPECT_EQ(step_rk4(sys, x, vec({0}), 0.01, DisturbanceModel(), 0.0), x);
}

TEST(Rk4, ScalarDecayOneStep) {
  const auto sys = testing::scalar_system(-1.0);
  const Vector x = step_rk4(*sys, vec({1}), vec({0}), 0.1, DisturbanceModel(), 0.0);
  // 1 - h + h^2/2 - h^3/6 + h^4/24 at h = 0.1
  EXPECT_NEAR(x(0), 0.9048375, 1e-7);
}

TEST(Rk4, ScalarDecayOverUnitInterval) {
  const auto sys = testing::scalar_system(-1.0);
  Vector x = vec({1});
  for (int k = 0; k < 100; ++k) x = step_rk4(*sys, x, vec({0}), 0.01, DisturbanceModel(), 0.01 * k);
  EXPECT_NEAR(x(0), std::exp(-1.0), 1e-9);
}

TEST(Rk4, PendulumEquilibrium) {
  const auto sys = pendulum();
  const Vector x = step_rk4(*sys, vec({0, 0}), vec({0}), 0.005, DisturbanceModel(), 0.0);
  EXPECT_EQ(x, vec({0, 0}));
}

TEST(Rk4, NonFiniteInputRejected) {
  const auto sys = pendulum();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(step_rk4(*sys, vec({nan, 0}), vec({0}), 0.005, DisturbanceModel(), 0.0),
               InputError);
}

TEST(Rk4, OverflowNamesStage) {
  const auto sys = testing::scalar_system(1e308);
  try {
    step_rk4(*sys, vec({10}), vec({0}), 0.005, DisturbanceModel(), 0.0);
    FAIL() << "expected IntegrationError";
  } catch (const IntegrationError& e) {
    EXPECT_EQ(e.stage(), 1);
  }
}

TEST(Rk4, Deterministic) {
  const auto sys = make_system("cartpole");
  const DisturbanceModel dist(DisturbanceKind::kPiecewiseGust, 0.2,
                              Vector::Ones(sys->state_dim()), sys->disturbance_bound(),
                              DisturbanceSchedule{0.0, 10.0, 2.0, 5});
  auto run = [&] {
    Vector x = Vector::Constant(4, 0.1);
    for (int k = 0; k < 200; ++k) x = step_rk4(*sys, x, vec({0.3}), 0.005, dist, 0.005 * k);
    return x;
  };
  const Vector a = run(), b = run();
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * 4));
}

TEST(Disturbance, NoneIsZero) {
  EXPECT_TRUE(sample_disturbance(DisturbanceModel(), vec({1, 2}), 0.3).isZero(0.0));
}

TEST(Disturbance, ConstantPush) {
  const DisturbanceModel dist(DisturbanceKind::kConstantPush, 0.5, vec({0, 1}), 1.0);
  EXPECT_EQ(sample_disturbance(dist, vec({0, 0}), 1.0), vec({0, 0.5}));
}

TEST(Disturbance, OutsideWindowIsZero) {
  const DisturbanceModel dist(DisturbanceKind::kConstantPush, 0.5, vec({0, 1}), 1.0,
                              DisturbanceSchedule{1.0, 0.5, 1.0, 0});
  EXPECT_TRUE(sample_disturbance(dist, vec({0, 0}), 0.5).isZero(0.0));
  EXPECT_EQ(sample_disturbance(dist, vec({0, 0}), 1.2), vec({0, 0.5}));
  EXPECT_TRUE(sample_disturbance(dist, vec({0, 0}), 1.6).isZero(0.0));
}

TEST(Disturbance, NormNeverExceedsBound) {
  for (DisturbanceKind kind : {DisturbanceKind::kNone, DisturbanceKind::kConstantPush,
                               DisturbanceKind::kSinusoid, DisturbanceKind::kPiecewiseGust}) {
    const double dbar = 1.0;
    const DisturbanceModel dist(kind, dbar, vec({0.6, 0.8}), dbar,
                                DisturbanceSchedule{0.0, 1e9, 3.0, 17});
    double worst = 0.0;
    for (int k = 0; k < 10000; ++k) {
      worst = std::max(worst, sample_disturbance(dist, vec({0, 0}), 0.00731 * k).norm());
    }
    EXPECT_LE(worst, dbar * (1.0 + 1e-15)) << to_string(kind);
  }
}

TEST(Disturbance, RejectsMagnitudeAboveBound) {
  EXPECT_THROW(DisturbanceModel(DisturbanceKind::kSinusoid, 2.0, vec({1, 0}), 1.0), ConfigError);
  EXPECT_THROW(DisturbanceModel(DisturbanceKind::kSinusoid, 0.5, vec({0, 0}), 1.0), ConfigError);
  EXPECT_THROW(disturbance_kind_from_string("tornado"), ConfigError);
}

TEST(Dynamics, RejectsUnknownSystem) { EXPECT_THROW(make_system("quadruped"), ConfigError); }

// Analytic Jacobians against central differences over K for every system and
// both observation maps.
class JacobianSuite : public ::testing::TestWithParam<const char*> {};

TEST_P(JacobianSuite, MatchesFiniteDifferences) {
  auto sys = make_system(GetParam());
  const int n = sys->state_dim(), m = sys->input_dim();
  const auto states = testing::uniform_states(sys->region(), 200, 42);
  for (const Vector& x : states) {
    const JacobianBundle jb = eval_jacobians(*sys, x, Vector::Zero(m));
    EXPECT_LT(rel_error(jb.drift_jacobian,
                        fd_jacobian([&](const Vector& z) { return sys->drift(z); }, x)),
              1e-5);
    for (int i = 0; i < m; ++i) {
      const Matrix fd = fd_jacobian(
          [&](const Vector& z) -> Vector { return sys->input_matrix(z).col(i); }, x);
      EXPECT_LT(rel_error(jb.input_jacobians[static_cast<size_t>(i)], fd), 1e-5);
    }
    for (ObservationKind kind : {ObservationKind::kIdentity, ObservationKind::kTrig}) {
      sys->set_observation_kind(kind);
      const Matrix fd = fd_jacobian([&](const Vector& z) { return sys->observe(z); }, x);
      EXPECT_LT(rel_error(observe(*sys, x).jacobian, fd), 1e-5);
    }
    sys->set_observation_kind(ObservationKind::kIdentity);
    EXPECT_EQ(jb.input_matrix.rows(), n);
  }
}

INSTANTIATE_TEST_SUITE_P(AllSystems, JacobianSuite,
                         ::testing::Values("pendulum", "cartpole", "point_mass"));

TEST(Region, ShrinkKeepsCenter) {
  const auto sys = pendulum();
  const Box small = sys->region().shrink(0.5);
  EXPECT_EQ(small.center(), sys->region().center());
  EXPECT_NEAR(small.hi(1) - small.lo(1), 8.0, 1e-12);
}

}  // namespace
}  // namespace cppo
