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

#include "cppo/metric.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>

#include "cppo/errors.hpp"
#include "cppo/linalg.hpp"

namespace cppo {

Matrix lower_triangular_from(const Vector& entries, int n) {
  if (entries.size() != triangular_size(n)) {
    throw ContractError("lower_triangular_from: expected " +
                        std::to_string(triangular_size(n)) + " entries");
  }
  Matrix t = Matrix::Zero(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) t(i, j) = entries(k++);
  return t;
}

Vector lower_triangular_entries(const Matrix& g) {
  const int n = static_cast<int>(g.rows());
  Vector out(triangular_size(n));
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) out(k++) = g(i, j);
  return out;
}

double pd_penalty_of(const Matrix& m, double m_min, double m_max) {
  const SymmetricEigen eig = symmetric_eig(m);
  const double lo = eig.values(0);
  const double hi = eig.values(eig.values.size() - 1);
  return std::max(0.0, m_min - lo) + std::max(0.0, hi - m_max);
}

MetricField::MetricField(LipschitzMlp theta_net, int state_dim, double m_min, double m_max)
    : net_(std::move(theta_net)), n_(state_dim), m_min_(m_min), m_max_(m_max) {
  if (net_.input_dim() != n_ || net_.output_dim() != triangular_size(n_)) {
    throw ContractError("MetricField: factor network must map R^n to R^{n(n+1)/2}");
  }
  if (!(m_min > 0.0) || !(m_max > m_min)) {
    throw ConfigError("MetricField: need 0 < m_min < m_max");
  }
}

MetricField MetricField::learned(int state_dim, const std::vector<int>& hidden,
                                 Activation activation, double layer_budget,
                                 std::uint64_t seed, double m_min, double m_max) {
  MlpSpec spec;
  spec.sizes.push_back(state_dim);
  spec.sizes.insert(spec.sizes.end(), hidden.begin(), hidden.end());
  spec.sizes.push_back(triangular_size(state_dim));
  spec.hidden_activation = activation;
  spec.budgets = {layer_budget};
  spec.seed = seed;
  LipschitzMlp net(spec);
  net.mutable_layer(net.num_layers() - 1).bias =
      lower_triangular_entries(Matrix::Identity(state_dim, state_dim));
  return MetricField(std::move(net), state_dim, m_min, m_max);
}

MetricField MetricField::constant(const Matrix& m, double m_min, double m_max) {
  const int n = static_cast<int>(m.rows());
  // Theta lower triangular with Theta^T Theta = m: reverse the index order,
  // take the Cholesky factor there and reverse back.
  const Eigen::PermutationMatrix<Eigen::Dynamic> flip = [n] {
    Eigen::VectorXi idx(n);
    for (int i = 0; i < n; ++i) idx(i) = n - 1 - i;
    return Eigen::PermutationMatrix<Eigen::Dynamic>(idx);
  }();
  const Matrix flipped = flip * m * flip.transpose();
  Eigen::LLT<Matrix> llt(flipped);
  if (llt.info() != Eigen::Success) {
    throw ConfigError("MetricField::constant: matrix is not positive definite");
  }
  const Matrix l = llt.matrixL();
  const Matrix theta = flip * Matrix(l.transpose()) * flip.transpose();

  DenseLayer layer;
  layer.weight = Matrix::Zero(triangular_size(n), n);
  layer.bias = lower_triangular_entries(theta);
  layer.activation = Activation::kIdentity;
  return MetricField(LipschitzMlp({layer}, 0), n, m_min, m_max);
}

void MetricField::check_state(const Vector& x) const {
  if (x.size() != n_) throw ContractError("MetricField: state length mismatch");
}

Matrix MetricField::theta(const Vector& x) const {
  check_state(x);
  return lower_triangular_from(net_.evaluate(x), n_);
}

Matrix MetricField::metric_matrix(const Vector& x) const {
  const Matrix t = theta(x);
  Matrix m = t.transpose() * t;
  // Assemble symmetrically so M^T == M bit for bit.
  for (int i = 0; i < n_; ++i)
    for (int j = 0; j < i; ++j) m(j, i) = m(i, j);
  return m;
}

double MetricField::metric_value(const Vector& x, const ErrorVector& e) const {
  if (e.size() != n_) throw ContractError("metric_value: error length mismatch");
  return (theta(x) * e).squaredNorm();
}

Matrix MetricField::metric_time_derivative(const Vector& x, const Vector& f_cl) const {
  check_state(x);
  if (f_cl.size() != n_) throw ContractError("metric_time_derivative: f_cl length mismatch");
  const TangentForwardResult fwd = net_.forward_tangent(x, f_cl);
  const Matrix t = lower_triangular_from(fwd.output, n_);
  const Matrix dt = lower_triangular_from(fwd.output_tangent, n_);
  const Matrix half = dt.transpose() * t;
  return half + half.transpose();
}

std::vector<Matrix> MetricField::metric_gradient(const Vector& x) const {
  check_state(x);
  const Matrix t = theta(x);
  const Matrix jac = net_.input_jacobian(x);
  std::vector<Matrix> out;
  out.reserve(static_cast<size_t>(n_));
  for (int k = 0; k < n_; ++k) {
    const Matrix dt = lower_triangular_from(jac.col(k), n_);
    const Matrix half = dt.transpose() * t;
    out.push_back(half + half.transpose());
  }
  return out;
}

MetricGradNorm MetricField::metric_grad_frobenius(const Vector& x, bool normalized) const {
  const std::vector<Matrix> grads = metric_gradient(x);
  MetricGradNorm out;
  double acc = 0.0;
  for (const auto& g : grads) acc += g.squaredNorm();
  out.frobenius = std::sqrt(acc);
  if (normalized) {
    const Matrix m = metric_matrix(x) + kMetricRidge * Matrix::Identity(n_, n_);
    const SymmetricEigen eig = symmetric_eig(m);
    if (eig.values(0) < 1e-10) {
      throw SingularMetricError("metric_grad_frobenius: metric is numerically singular");
    }
    const Matrix w = inv_sqrt(m);
    double nacc = 0.0;
    for (const auto& g : grads) nacc += (w * g * w).squaredNorm();
    out.normalized = std::sqrt(nacc);
  }
  return out;
}

double MetricField::pd_penalty(const Vector& x) const {
  return pd_penalty_of(metric_matrix(x), m_min_, m_max_);
}

PdPenaltyResult MetricField::pd_penalty_with_grad(const Vector& x) const {
  const Matrix t = theta(x);
  Matrix m = t.transpose() * t;
  m = sym(m);
  const SymmetricEigen eig = symmetric_eig(m);
  const Eigen::Index n = eig.values.size();
  PdPenaltyResult r;
  r.lambda_min = eig.values(0);
  r.lambda_max = eig.values(n - 1);
  Matrix grad_m = Matrix::Zero(n_, n_);
  if (r.lambda_min < m_min_) {
    r.value += m_min_ - r.lambda_min;
    const Vector v = eig.vectors.col(0);
    grad_m -= v * v.transpose();
  }
  if (r.lambda_max > m_max_) {
    r.value += r.lambda_max - m_max_;
    const double tol = 1e-12 * std::max(1.0, std::abs(r.lambda_max));
    Eigen::Index first = n - 1;
    while (first > 0 && std::abs(eig.values(first - 1) - r.lambda_max) <= tol) --first;
    const Vector v = eig.vectors.col(first);
    grad_m += v * v.transpose();
  }
  // M = Theta^T Theta, G symmetric  =>  dL/dTheta = 2 Theta G.
  r.grad_theta = 2.0 * t * grad_m;
  return r;
}

MlpGradients MetricField::metric_value_gradient(const Vector& x, const ErrorVector& e) const {
  check_state(x);
  ForwardResult fwd = net_.forward(x);
  const Matrix t = lower_triangular_from(fwd.output, n_);
  // V = ||Theta e||^2  =>  dV/dTheta = 2 (Theta e) e^T.
  const Matrix g = 2.0 * (t * e) * e.transpose();
  return net_.backward(fwd.tape, lower_triangular_entries(g)).grads;
}

}  // namespace cppo
