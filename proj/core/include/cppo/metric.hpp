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

#ifndef CPPO_METRIC_HPP_
#define CPPO_METRIC_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include "cppo/net.hpp"
#include "cppo/types.hpp"

namespace cppo {

// Ridge added to Theta^T Theta before any inversion.
inline constexpr double kMetricRidge = 1e-8;

// Packs the n(n+1)/2 network outputs row by row into a lower-triangular
// matrix: (0,0), (1,0), (1,1), (2,0), ...
Matrix lower_triangular_from(const Vector& entries, int n);
// Adjoint of lower_triangular_from: picks the lower-triangular entries of g.
Vector lower_triangular_entries(const Matrix& g);
inline int triangular_size(int n) { return n * (n + 1) / 2; }

struct MetricGradNorm {
  double frobenius = 0.0;              // sqrt(sum_k ||dM/dx_k||_F^2)
  std::optional<double> normalized;    // same with M^-1/2 (.) M^-1/2
};

struct PdPenaltyResult {
  double value = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  Matrix grad_theta;  // d value / d Theta
};

// Contraction metric M(x) = Theta(x)^T Theta(x), Theta lower triangular and
// produced by a Lipschitz MLP on the privileged state. PSD by construction;
// the eigenvalue band [m_min, m_max] is only encouraged through pd_penalty.
class MetricField {
 public:
  MetricField(LipschitzMlp theta_net, int state_dim, double m_min, double m_max);

  // Tanh MLP of the given hidden widths whose output bias starts at the
  // identity factor, so M(x) ~ I at initialization.
  static MetricField learned(int state_dim, const std::vector<int>& hidden,
                             Activation activation, double layer_budget,
                             std::uint64_t seed, double m_min, double m_max);
  // State-independent metric equal to m (must be symmetric PD).
  static MetricField constant(const Matrix& m, double m_min, double m_max);

  int dim() const { return n_; }
  double m_min() const { return m_min_; }
  double m_max() const { return m_max_; }
  double condition_bound() const { return m_max_ / m_min_; }  // chi

  const LipschitzMlp& net() const { return net_; }
  LipschitzMlp& mutable_net() { return net_; }

  Matrix theta(const Vector& x) const;
  Matrix metric_matrix(const Vector& x) const;
  double metric_value(const Vector& x, const ErrorVector& e) const;
  // sum_k dM/dx_k (f_cl)_k, from one tangent pass of the factor network.
  Matrix metric_time_derivative(const Vector& x, const Vector& f_cl) const;
  // dM/dx_k for k = 0..n-1 via the product rule.
  std::vector<Matrix> metric_gradient(const Vector& x) const;
  // Throws SingularMetricError when normalized is requested and
  // lambda_min(M) < 1e-10.
  MetricGradNorm metric_grad_frobenius(const Vector& x, bool normalized = false) const;
  double pd_penalty(const Vector& x) const;
  // L_PD with the extremal-eigenvector subgradient. Ties pick the first
  // eigenvector in ascending-eigenvalue order.
  PdPenaltyResult pd_penalty_with_grad(const Vector& x) const;

  // Parameter gradient of V = e^T M(x) e.
  MlpGradients metric_value_gradient(const Vector& x, const ErrorVector& e) const;

 private:
  void check_state(const Vector& x) const;

  LipschitzMlp net_;
  int n_;
  double m_min_;
  double m_max_;
};

// L_PD for an explicit matrix (used by tests and the trainer).
double pd_penalty_of(const Matrix& m, double m_min, double m_max);

}  // namespace cppo

#endif  // CPPO_METRIC_HPP_
