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

#include <gtest/gtest.h>

#include "cppo/errors.hpp"
#include "cppo/linalg.hpp"
#include "cppo/net.hpp"
#include "test_util.hpp"

namespace cppo {
namespace {

using testing::fd_gradient;
using testing::fd_jacobian;
using testing::rel_error;
using testing::single_layer;

Matrix diag2(double a, double b) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

LipschitzMlp random_net(std::vector<int> sizes, std::uint64_t seed,
                        Activation act = Activation::kTanh) {
  MlpSpec spec;
  spec.sizes = std::move(sizes);
  spec.hidden_activation = act;
  spec.seed = seed;
  return LipschitzMlp(spec);
}

TEST(MlpForward, IdentityLayer) {
  const LipschitzMlp net = single_layer(Matrix::Identity(3, 3), Vector::Zero(3),
                                        Activation::kIdentity);
  const Vector x = Vector::LinSpaced(3, -1.0, 2.0);
  EXPECT_EQ(net.evaluate(x), x);
}

TEST(MlpForward, ScalarTanh) {
  const LipschitzMlp net = single_layer(Matrix::Constant(1, 1, 2.0), Vector::Ones(1),
                                        Activation::kTanh);
  EXPECT_NEAR(net.evaluate(Vector::Zero(1))(0), 0.7615941559, 1e-10);
}

TEST(MlpForward, ZeroNet) {
  const LipschitzMlp net = single_layer(Matrix::Zero(2, 3), Vector::Zero(2), Activation::kTanh);
  EXPECT_TRUE(net.evaluate(Vector::Constant(3, 5.0)).isZero(0.0));
}

TEST(MlpForward, RejectsWrongInputLength) {
  const LipschitzMlp net = random_net({3, 4, 2}, 1);
  EXPECT_THROW(net.evaluate(Vector::Zero(2)), ContractError);
}

TEST(MlpBackward, LinearLayerTransposes) {
  Matrix w(2, 3);
  w << 1, -2, 0.5, 3, 0, -1;
  const LipschitzMlp net = single_layer(w, Vector::Zero(2), Activation::kIdentity);
  ForwardResult fr = net.forward(Vector::Ones(3));
  const Vector v = Vector::LinSpaced(2, 0.5, -1.5);
  EXPECT_LT((net.backward(fr.tape, v).input_grad - w.transpose() * v).norm(), 1e-15);
}

TEST(MlpBackward, ScalarTanhDerivative) {
  const LipschitzMlp net = single_layer(Matrix::Constant(1, 1, 2.0), Vector::Ones(1),
                                        Activation::kTanh);
  ForwardResult fr = net.forward(Vector::Zero(1));
  EXPECT_NEAR(net.backward(fr.tape, Vector::Ones(1)).input_grad(0), 0.8399486, 1e-7);
}

TEST(MlpBackward, TapeIsSingleUse) {
  const LipschitzMlp net = random_net({2, 4, 1}, 3);
  ForwardResult fr = net.forward(Vector::Ones(2));
  net.backward(fr.tape, Vector::Ones(1));
  EXPECT_TRUE(fr.tape.consumed());
  EXPECT_THROW(net.backward(fr.tape, Vector::Ones(1)), StaleTapeError);
}

TEST(MlpBackward, TapeRejectedAfterParameterChange) {
  LipschitzMlp net = random_net({2, 4, 1}, 3);
  ForwardResult fr = net.forward(Vector::Ones(2));
  net.mutable_layer(0).bias(0) += 1.0;
  EXPECT_THROW(net.backward(fr.tape, Vector::Ones(1)), StaleTapeError);
}

// Parameter gradients for a random scalarization c^T net(x).
void check_parameter_gradient(std::vector<int> sizes, Activation act, std::uint64_t seed) {
  LipschitzMlp net = random_net(sizes, seed, act);
  testing::jitter(net, 0.05, seed + 1);
  Rng rng(seed + 2);
  const Vector x = standard_normal(rng, sizes.front());
  const Vector c = standard_normal(rng, sizes.back());
  ForwardResult fr = net.forward(x);
  const Vector analytic = net.backward(fr.tape, c).grads.flatten();
  const Vector p0 = net.parameters();
  LipschitzMlp probe = net;
  const Vector fd = fd_gradient(
      [&](const Vector& p) {
        probe.set_parameters(p);
        return c.dot(probe.evaluate(x));
      },
      p0);
  EXPECT_LT(rel_error(analytic, fd), 1e-5);
}

TEST(MlpBackward, ParameterGradientSmall) {
  check_parameter_gradient({3, 5, 2}, Activation::kTanh, 11);
}

TEST(MlpBackward, ParameterGradientWide) {
  for (Activation act : {Activation::kTanh, Activation::kSoftplus, Activation::kElu}) {
    check_parameter_gradient({4, 64, 64, 3}, act, 12);
  }
}

TEST(MlpJacobian, LinearNet) {
  Matrix w(2, 3);
  w << 1, 2, 3, 4, 5, 6;
  const LipschitzMlp net = single_layer(w, Vector::Ones(2), Activation::kIdentity);
  EXPECT_EQ(net.input_jacobian(Vector::Zero(3)), w);
  EXPECT_EQ(net.input_jacobian(Vector::Constant(3, -4.0)), w);
}

TEST(MlpJacobian, IdentityNet) {
  const LipschitzMlp net = single_layer(Matrix::Identity(4, 4), Vector::Zero(4),
                                        Activation::kIdentity);
  EXPECT_EQ(net.input_jacobian(Vector::Ones(4)), Matrix::Identity(4, 4));
}

TEST(MlpJacobian, MatchesFiniteDifferences) {
  const LipschitzMlp net = random_net({3, 16, 2}, 21);
  Rng rng(22);
  for (int i = 0; i < 5; ++i) {
    const Vector x = standard_normal(rng, 3);
    const Matrix fd = fd_jacobian([&](const Vector& z) { return net.evaluate(z); }, x);
    EXPECT_LT(rel_error(net.input_jacobian(x), fd), 1e-5);
  }
}

TEST(MlpTangent, MatchesJacobianProduct) {
  const LipschitzMlp net = random_net({3, 8, 8, 2}, 23, Activation::kSoftplus);
  Rng rng(24);
  const Vector x = standard_normal(rng, 3), dx = standard_normal(rng, 3);
  const TangentForwardResult tr = net.forward_tangent(x, dx);
  EXPECT_LT((tr.output - net.evaluate(x)).norm(), 1e-15);
  EXPECT_LT((tr.output_tangent - net.input_jacobian(x) * dx).norm(), 1e-12);
}

TEST(MlpTangent, BackwardMatchesFiniteDifferences) {
  LipschitzMlp net = random_net({3, 6, 2}, 25);
  testing::jitter(net, 0.1, 26);
  Rng rng(27);
  const Vector x = standard_normal(rng, 3), dx = standard_normal(rng, 3);
  const Vector a = standard_normal(rng, 2), b = standard_normal(rng, 2);
  auto objective = [&](const LipschitzMlp& n, const Vector& z) {
    const TangentForwardResult t = n.forward_tangent(z, dx);
    return a.dot(t.output) + b.dot(t.output_tangent);
  };
  TangentForwardResult tr = net.forward_tangent(x, dx);
  const TangentBackwardResult back = net.backward_tangent(tr.tape, a, b);
  LipschitzMlp probe = net;
  const Vector fd_p = fd_gradient(
      [&](const Vector& p) {
        probe.set_parameters(p);
        return objective(probe, x);
      },
      net.parameters());
  EXPECT_LT(rel_error(back.grads.flatten(), fd_p), 1e-5);
  const Vector fd_x = fd_gradient([&](const Vector& z) { return objective(net, z); }, x);
  EXPECT_LT(rel_error(back.input_grad, fd_x), 1e-5);
}

TEST(SpectralNormalize, ScalesDiagonalToBudget) {
  LipschitzMlp net = single_layer(diag2(3, 4), Vector::Zero(2), Activation::kIdentity);
  net.mutable_layer(0).budget = 1.0;
  net.spectral_normalize();
  EXPECT_LT((net.layers()[0].weight - diag2(0.75, 1.0)).norm(), 1e-9);
}

TEST(SpectralNormalize, BudgetTwo) {
  LipschitzMlp net = single_layer(diag2(3, 4), Vector::Zero(2), Activation::kIdentity);
  net.mutable_layer(0).budget = 2.0;
  net.spectral_normalize();
  EXPECT_LT((net.layers()[0].weight - diag2(1.5, 2.0)).norm(), 1e-9);
}

TEST(SpectralNormalize, WithinBudgetUnchanged) {
  LipschitzMlp net = single_layer(diag2(0.3, 0.4), Vector::Zero(2), Activation::kIdentity);
  net.mutable_layer(0).budget = 1.0;
  net.spectral_normalize();
  EXPECT_EQ(net.layers()[0].weight, diag2(0.3, 0.4));
}

TEST(SpectralNormalize, Idempotent) {
  MlpSpec spec;
  spec.sizes = {5, 32, 32, 3};
  spec.budgets = {0.7};
  spec.seed = 31;
  LipschitzMlp net(spec);
  for (size_t l = 0; l < net.num_layers(); ++l) net.mutable_layer(l).weight *= 5.0;
  net.spectral_normalize();
  const Vector once = net.parameters();
  net.spectral_normalize();
  EXPECT_LT((net.parameters() - once).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(SpectralNormalize, LayerNormsRespectBudgets) {
  MlpSpec spec;
  spec.sizes = {6, 40, 40, 2};
  spec.budgets = {1.3, 0.8, 2.0};
  spec.seed = 32;
  LipschitzMlp net(spec);
  for (size_t l = 0; l < net.num_layers(); ++l) net.mutable_layer(l).weight *= 4.0;
  net.spectral_normalize();
  for (size_t l = 0; l < net.num_layers(); ++l) {
    EXPECT_LE(spectral_norm(net.layers()[l].weight), spec.budgets[l] + 1e-9);
  }
}

TEST(LipschitzBound, SingleLinearLayer) {
  LipschitzMlp net = single_layer(diag2(0.75, 0.5), Vector::Zero(2), Activation::kIdentity);
  EXPECT_NEAR(net.lipschitz_bound(), 0.75, 1e-9);
}

TEST(LipschitzBound, TwoUnitLayers) {
  DenseLayer a{Matrix::Identity(2, 2), Vector::Zero(2), Activation::kTanh, 1.0};
  DenseLayer b{Matrix::Identity(2, 2), Vector::Zero(2), Activation::kIdentity, 1.0};
  const LipschitzMlp net({a, b}, 0);
  EXPECT_NEAR(net.lipschitz_bound(), 1.0, 1e-9);
}

TEST(LipschitzBound, SaturatedBudgetsMultiply) {
  MlpSpec spec;
  spec.sizes = {4, 16, 16, 2};
  spec.budgets = {2.0, 2.0, 0.5};
  spec.seed = 33;
  LipschitzMlp net(spec);
  for (size_t l = 0; l < net.num_layers(); ++l) net.mutable_layer(l).weight *= 20.0;
  net.spectral_normalize();
  EXPECT_NEAR(net.lipschitz_bound(), 2.0, 1e-9);
}

TEST(LipschitzBound, DominatesJacobianNorm) {
  for (std::uint64_t seed : {41u, 42u, 43u}) {
    MlpSpec spec;
    spec.sizes = {3, 24, 24, 2};
    spec.budgets = {1.2};
    spec.seed = seed;
    LipschitzMlp net(spec);
    for (size_t l = 0; l < net.num_layers(); ++l) net.mutable_layer(l).weight *= 3.0;
    net.spectral_normalize();
    Rng rng(seed);
    for (int i = 0; i < 100; ++i) {
      const Matrix j = net.input_jacobian(2.0 * standard_normal(rng, 3));
      const double norm = std::sqrt(symmetric_eig(j.transpose() * j).values.maxCoeff());
      EXPECT_LE(norm, net.lipschitz_bound() + 1e-6);
    }
  }
}

TEST(MlpInit, DeterministicAndWithinBudget) {
  MlpSpec spec;
  spec.sizes = {3, 64, 64, 1};
  spec.budgets = {0.5};
  spec.seed = 7;
  const LipschitzMlp a(spec), b(spec);
  EXPECT_EQ(a.parameters(), b.parameters());
  EXPECT_EQ(a.sigma_estimates(), b.sigma_estimates());
  for (const DenseLayer& layer : a.layers()) {
    EXPECT_LE(spectral_norm(layer.weight), 0.5 + 1e-9);
  }
  spec.seed = 8;
  EXPECT_NE(LipschitzMlp(spec).parameters(), a.parameters());
}

TEST(MlpParameters, RoundTrip) {
  LipschitzMlp net = random_net({2, 5, 3}, 51);
  const Vector p = net.parameters();
  EXPECT_EQ(p.size(), net.num_parameters());
  net.set_parameters(p * 0.5);
  EXPECT_EQ(net.parameters(), p * 0.5);
  EXPECT_THROW(net.set_parameters(Vector::Zero(p.size() + 1)), ContractError);
}

TEST(Activation, DerivativesMatchFiniteDifferences) {
  for (Activation act : {Activation::kTanh, Activation::kSoftplus, Activation::kElu}) {
    for (double z : {-2.0, -0.3, 0.4, 1.7}) {
      const double h = 1e-6;
      const double d1 = (activation_value(act, z + h) - activation_value(act, z - h)) / (2 * h);
      const double d2 =
          (activation_derivative(act, z + h) - activation_derivative(act, z - h)) / (2 * h);
      EXPECT_NEAR(activation_derivative(act, z), d1, 1e-8) << to_string(act);
      EXPECT_NEAR(activation_second_derivative(act, z), d2, 1e-7) << to_string(act);
      EXPECT_LE(std::abs(activation_derivative(act, z)), 1.0);
    }
  }
}

TEST(Activation, ParsesNames) {
  EXPECT_EQ(activation_from_string("tanh"), Activation::kTanh);
  EXPECT_EQ(activation_from_string("softplus"), Activation::kSoftplus);
  EXPECT_THROW(activation_from_string("relu"), ConfigError);
}

}  // namespace
}  // namespace cppo
