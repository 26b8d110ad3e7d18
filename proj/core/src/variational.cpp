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

#include "cppo/variational.hpp"

#include "cppo/errors.hpp"
#include "cppo/linalg.hpp"

namespace cppo {

double LinearFeedback::lipschitz_bound() const { return spectral_norm(gain_); }

Vector closed_loop_field(const ControlAffineSystem& sys, const Controller& ctrl,
                         const Vector& x) {
  const Vector u = ctrl.control(sys.observe(x));
  return sys.drift(x) + sys.input_matrix(x) * u;
}

ClosedLoopJacobian closed_loop_jacobian(const ControlAffineSystem& sys,
                                        const Controller& ctrl, const Vector& x) {
  const Observation obs = observe(sys, x);
  ClosedLoopJacobian out;
  out.u = ctrl.control(obs.y);
  const JacobianBundle jac = eval_jacobians(sys, x, out.u);
  out.outside_region = jac.outside_region;
  out.input_matrix = jac.input_matrix;
  out.observation_jacobian = obs.jacobian;
  out.control_jacobian = ctrl.control_jacobian(obs.y);

  const Eigen::Index n = x.size();
  out.drift_part = jac.drift_jacobian;
  out.input_part = Matrix::Zero(n, n);
  for (size_t i = 0; i < jac.input_jacobians.size(); ++i) {
    out.input_part += jac.input_jacobians[i] * out.u(static_cast<Eigen::Index>(i));
  }
  out.feedback_part = jac.input_matrix * out.control_jacobian * obs.jacobian;
  out.a_cl = out.drift_part + out.input_part + out.feedback_part;
  out.f_cl = sys.drift(x) + jac.input_matrix * out.u;
  return out;
}

ResidualBundle contraction_residual(const Matrix& m, const Matrix& m_dot, const AclParts& a,
                                    double alpha) {
  const Eigen::Index n = m.rows();
  if (m.cols() != n || m_dot.rows() != n || m_dot.cols() != n || a.drift.rows() != n ||
      a.input.rows() != n || a.feedback.rows() != n) {
    throw ContractError("contraction_residual: dimension mismatch");
  }
  ResidualBundle b;
  b.a_cl = a.drift + a.input + a.feedback;
  // Ridged metric throughout, so R and its normalization agree.
  const Matrix mr = m + kMetricRidge * Matrix::Identity(n, n);
  auto lyap = [&mr](const Matrix& part) -> Matrix {
    return part.transpose() * mr + mr * part;
  };
  b.r_f = lyap(a.drift);
  b.r_input = lyap(a.input);
  b.r_feedback = lyap(a.feedback);
  b.r_mdot = m_dot;
  b.r_alpha = alpha * mr;
  Matrix growth = b.r_f;
  growth += b.r_input;
  growth += b.r_feedback;
  growth += b.r_mdot;
  b.r = growth;
  b.r += b.r_alpha;

  b.m_inv_sqrt = inv_sqrt(mr);
  b.r_hat_sym = sym(b.m_inv_sqrt * b.r * b.m_inv_sqrt);
  const SymmetricEigen eig = symmetric_eig(b.r_hat_sym);
  b.lambda_max = eig.values(n - 1);
  const SymmetricEigen geig = symmetric_eig(sym(b.m_inv_sqrt * growth * b.m_inv_sqrt));
  b.growth_rate = geig.values(n - 1);
  return b;
}

ResidualBundle contraction_residual(const Matrix& m, const Matrix& m_dot, const Matrix& a_cl,
                                    double alpha) {
  const Eigen::Index n = a_cl.rows();
  return contraction_residual(m, m_dot, AclParts{a_cl, Matrix::Zero(n, n), Matrix::Zero(n, n)},
                              alpha);
}

ResidualBundle residual_at(const ControlAffineSystem& sys, const Controller& ctrl,
                           const MetricField& field, const Vector& x, double alpha) {
  const ClosedLoopJacobian cl = closed_loop_jacobian(sys, ctrl, x);
  const Matrix m = field.metric_matrix(x);
  const Matrix m_dot = field.metric_time_derivative(x, cl.f_cl);
  return contraction_residual(m, m_dot, AclParts{cl.drift_part, cl.input_part, cl.feedback_part},
                              alpha);
}

LyapunovRate lyapunov_rate(const MetricField& field, const ControlAffineSystem& sys,
                           const Controller& ctrl, const Vector& x, const Vector& x_d,
                           double alpha) {
  if (x.size() != x_d.size()) throw ContractError("lyapunov_rate: x and x_d differ in length");
  const Vector e = x - x_d;
  LyapunovRate out;
  const Matrix m = field.metric_matrix(x);
  out.v = e.dot(m * e);
  if (e.isZero(0.0)) return out;
  const ClosedLoopJacobian cl = closed_loop_jacobian(sys, ctrl, x);
  const Matrix m_dot = field.metric_time_derivative(x, cl.f_cl);
  const Matrix s = cl.a_cl.transpose() * m + m * cl.a_cl + m_dot;
  out.v_dot = e.dot(s * e);
  if (out.v >= kMinLyapunovValue) out.ratio = (out.v_dot + alpha * out.v) / out.v;
  return out;
}

}  // namespace cppo
