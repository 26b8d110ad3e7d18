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

#ifndef CPPO_CERTIFY_HPP_
#define CPPO_CERTIFY_HPP_

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cppo/controller.hpp"
#include "cppo/dynamics.hpp"
#include "cppo/metric.hpp"
#include "cppo/random.hpp"

namespace cppo {

// Halton points in K (bases 2, 3, 5, ...) with a fraction of the points moved
// onto a randomly chosen face of the box.
std::vector<Vector> certification_samples(const Box& region, int n, double boundary_fraction,
                                          std::uint64_t seed);

// i-th element (i >= 1) of the van der Corput sequence in the given base.
double radical_inverse(std::uint64_t i, int base);

struct Envelopes {
  double f_bar = 0.0;
  double b_bar = 0.0;
  double u_bar = 0.0;
  double jh_bar = 0.0;
};

Envelopes estimate_envelopes(const ControlAffineSystem& sys, const Controller& ctrl,
                             const std::vector<Vector>& samples, double safety = 1.1);

struct TheoremConstants {
  double c_f = 0.0;
  double c_bdb = 0.0;
  double c_bj = 0.0;
  int excluded = 0;              // singular metric samples
  double lambda_min = 0.0;       // smallest sampled eigenvalue of M
  double metric_grad_sup = 0.0;  // sampled sup ||grad M||_F
  double normalized_grad_sup = 0.0;  // sampled sup ||M^-1/2 grad M M^-1/2||_F
  double theta_sup = 0.0;        // sampled sup ||Theta||_2
};

// C_f   = sup ||sym(M^-1/2 (df^T M + M df) M^-1/2)||
// C_BdB = same with sum_i dB_i u_i
// C_BJ  = 2 sup ||M^1/2 B|| ||M^-1/2||
// each inflated by the safety factor.
TheoremConstants compute_constants(const ControlAffineSystem& sys, const Controller& ctrl,
                                   const MetricField& field, const std::vector<Vector>& samples,
                                   double safety = 1.1);

struct LipschitzBudgets {
  double l_pi = 0.0;
  double l_m = 0.0;      // 2 sqrt(n) sup||Theta|| L_theta
  double l_hat_m = 0.0;  // sampled normalized gradient bound, inflated
};

// C_f + C_BdB + C_BJ L_pi Jh + (L_M / sqrt(m_min)) (f + B u) - alpha.
double theorem1_margin(const TheoremConstants& c, double l_pi, double l_m, double m_min,
                       const Envelopes& env, double alpha);
// Same with L_M / m_min.
double theorem1_margin_linear_mmin(const TheoremConstants& c, double l_pi, double l_m,
                                   double m_min, const Envelopes& env, double alpha);
// Same with the normalized budget L_hat_M (f + B u) in place of the metric term.
double theorem1_margin_normalized(const TheoremConstants& c, double l_pi, double l_hat_m,
                                  const Envelopes& env, double alpha);
double alpha_floor(const TheoremConstants& c, double l_pi, double l_m, double m_min,
                   const Envelopes& env);

struct EpsilonBudget {
  double upper = 0.0;        // admissible eps in (0, upper] = (0, -(Xi + alpha)]
  bool empty = true;
  double literal_upper = 0.0;  // alpha - Xi
  bool literal_empty = true;
};

EpsilonBudget epsilon_budget(double xi, double alpha);

struct ResidualSample {
  Vector x;
  double lambda_max = 0.0;
  double growth_rate = 0.0;
  double norm_f = 0.0;         // ||sym(R_hat_f)||
  double norm_input = 0.0;     // ||sym(R_hat_dB)||
  double norm_feedback = 0.0;  // ||sym(R_hat_BJ)||
  double norm_mdot = 0.0;      // ||sym(M^-1/2 Mdot M^-1/2)||
  double f_cl_norm = 0.0;
  bool outside_region = false;
};

struct ResidualStats {
  int samples = 0;
  int excluded = 0;
  double worst_lambda_max = -std::numeric_limits<double>::infinity();
  double worst_growth_rate = -std::numeric_limits<double>::infinity();
  int violations = 0;            // lambda_max > -eps
  double violation_fraction = 0.0;
  std::vector<ResidualSample> rows;
};

ResidualStats sample_residuals(const ControlAffineSystem& sys, const Controller& ctrl,
                               const MetricField& field, double alpha, double eps_margin,
                               const std::vector<Vector>& samples, bool keep_rows = false);

void write_residual_csv(std::ostream& os, const ResidualStats& stats);

// ---------------------------------------------------------------------------
// ISS

// (V0 / sqrt(m_min)) e^{-alpha t} + (dbar / alpha) sqrt(chi) (1 - e^{-alpha t})
double iss_bound(double v0, double m_min, double m_max, double dbar, double alpha, double t);

struct IssOptions {
  std::vector<double> magnitudes;  // each <= system dbar
  DisturbanceKind kind = DisturbanceKind::kSinusoid;
  double frequency = 0.5;
  int trajectories_per_magnitude = 25;
  int horizon_steps = 1000;
  double dt = 0.005;
  double reset_fraction = 0.2;
  double slack = 1.05;
  int residual_stride = 1;  // residual check every k-th step
  std::uint64_t seed = 7;
};

struct IssTrajectory {
  double magnitude = 0.0;
  int index = 0;
  bool clean = false;           // residual lambda_max <= 0 at every checked state
  double max_error = 0.0;
  double max_ratio = 0.0;       // max ||e|| / bound over steps with bound > 0
  double worst_lambda_max = -std::numeric_limits<double>::infinity();
  bool within_bound = false;    // max_ratio <= slack
  std::vector<double> times;    // filled when trajectories are kept
  std::vector<double> errors;
  std::vector<double> bounds;
};

struct IssResult {
  std::vector<IssTrajectory> trajectories;
  int clean = 0;
  int clean_within_bound = 0;
  bool pass = false;  // at least one clean trajectory, and all clean ones within bound
  std::vector<double> max_error_per_magnitude;
};

// A disturbed trajectory and the undisturbed one from the same initial state,
// both under the deployed controller re-evaluated at every step. The bound
// uses V(x, 0) = V(x0, e0) with e0 = 0.
IssResult verify_iss(const ControlAffineSystem& sys, const Controller& ctrl,
                     const MetricField& field, double alpha, const IssOptions& options,
                     bool keep_trajectories = false);

struct DecayResult {
  std::vector<double> rates;  // fitted exponential rate of the upper envelope per pair
  double min_rate = 0.0;
  std::vector<std::vector<double>> errors;  // per pair, ||e|| per step
};

// Pairs of undisturbed trajectories offset by `offset` in a random direction;
// fits log of the running upper envelope of ||e(t)|| against t.
DecayResult verify_decay(const ControlAffineSystem& sys, const Controller& ctrl, int pairs,
                         double offset, int horizon_steps, double dt, double reset_fraction,
                         std::uint64_t seed);

// Least-squares slope of log(envelope) for the suffix max of the series.
double fit_envelope_rate(const std::vector<double>& errors, double dt);

// ---------------------------------------------------------------------------
// Report

enum class Verdict { kCertified, kSampledOnly, kFailed };
std::string to_string(Verdict v);

struct CertifyOptions {
  int samples = 10000;
  double boundary_fraction = 0.2;
  double safety = 1.1;
  double alpha = 0.5;
  double eps_margin = 0.05;
  std::uint64_t seed = 11;
  bool keep_rows = false;
};

struct CertificationReport {
  std::string system;
  int samples = 0;
  Box region;
  double alpha = 0.0;
  double eps_margin = 0.0;
  double m_min_config = 0.0;
  double m_min = 0.0;  // min(config m_min, sampled lambda_min)
  double m_max = 0.0;
  Envelopes envelopes;
  LipschitzBudgets budgets;
  TheoremConstants constants;
  double theorem1_margin = 0.0;
  double theorem1_margin_linear_mmin = 0.0;
  double theorem1_margin_normalized = 0.0;
  double alpha_floor = 0.0;
  double xi_certified = 0.0;
  double xi_sampled = 0.0;
  EpsilonBudget epsilon_budget;
  EpsilonBudget epsilon_budget_sampled;
  ResidualStats residuals;
  bool conservative = false;  // sampled worst <= theorem1_margin + 1e-6
  std::optional<IssResult> iss;
  Verdict verdict = Verdict::kFailed;
};

CertificationReport certify(const ControlAffineSystem& sys, const Controller& ctrl,
                            const MetricField& field, const CertifyOptions& options);

std::string report_to_json(const CertificationReport& report);

}  // namespace cppo

#endif  // CPPO_CERTIFY_HPP_
