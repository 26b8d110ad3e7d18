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

#ifndef CPPO_VARIATIONAL_HPP_
#define CPPO_VARIATIONAL_HPP_

#include <optional>

#include "cppo/controller.hpp"
#include "cppo/dynamics.hpp"
#include "cppo/metric.hpp"
#include "cppo/types.hpp"

namespace cppo {

// A_cl split the same way the residual bound is assembled.
struct ClosedLoopJacobian {
  Matrix drift_part;     // df/dx
  Matrix input_part;     // sum_i dB_i/dx * u_i
  Matrix feedback_part;  // B J_pi J_h
  Matrix a_cl;           // sum of the three

  Vector u;              // deployed control at x
  Vector f_cl;           // f(x) + B(x) u
  Matrix input_matrix;   // B(x)
  Matrix control_jacobian;      // J_pi(h(x)), m x p
  Matrix observation_jacobian;  // J_h(x), p x n
  bool outside_region = false;
};

// f_cl(x) = f(x) + B(x) Pi(h(x)).
Vector closed_loop_field(const ControlAffineSystem& sys, const Controller& ctrl,
                         const Vector& x);

ClosedLoopJacobian closed_loop_jacobian(const ControlAffineSystem& sys,
                                        const Controller& ctrl, const Vector& x);

// R = A^T M + M A + Mdot + alpha M split by source, plus its normalized form.
struct ResidualBundle {
  Matrix a_cl;
  // M enters with the ridge added. r is exactly f + dB + BJ + Mdot + alpha
  // parts, summed in that order.
  Matrix r;
  Matrix r_f;
  Matrix r_input;
  Matrix r_feedback;
  Matrix r_mdot;
  Matrix r_alpha;
  Matrix m_inv_sqrt;  // (M + ridge)^-1/2
  Matrix r_hat_sym;   // sym(M^-1/2 R M^-1/2)
  double lambda_max = 0.0;
  // lambda_max of the normalized residual without the alpha M term, i.e. the
  // worst-case V-dot / V at this state.
  double growth_rate = 0.0;
};

struct AclParts {
  Matrix drift;
  Matrix input;
  Matrix feedback;
};

// Throws SingularMetricError when lambda_min(M) <= 1e-10.
ResidualBundle contraction_residual(const Matrix& m, const Matrix& m_dot, const AclParts& a,
                                    double alpha);
// Convenience overload: the whole A_cl is booked as the drift part.
ResidualBundle contraction_residual(const Matrix& m, const Matrix& m_dot, const Matrix& a_cl,
                                    double alpha);

// Residual of the closed loop at x under the given metric.
ResidualBundle residual_at(const ControlAffineSystem& sys, const Controller& ctrl,
                           const MetricField& field, const Vector& x, double alpha);

struct LyapunovRate {
  double v = 0.0;
  double v_dot = 0.0;
  // (Vdot + alpha V) / V; empty when V < 1e-12.
  std::optional<double> ratio;
};

inline constexpr double kMinLyapunovValue = 1e-12;

LyapunovRate lyapunov_rate(const MetricField& field, const ControlAffineSystem& sys,
                           const Controller& ctrl, const Vector& x, const Vector& x_d,
                           double alpha);

}  // namespace cppo

#endif  // CPPO_VARIATIONAL_HPP_
