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

#include "cppo/certify.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "cppo/errors.hpp"
#include "cppo/linalg.hpp"
#include "cppo/variational.hpp"

namespace cppo {

namespace {

constexpr int kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37};

Vector random_direction(Rng& rng, Eigen::Index n) {
  Vector d = standard_normal(rng, n);
  while (d.norm() < 1e-12) d = standard_normal(rng, n);
  return d / d.norm();
}

}  // namespace

double radical_inverse(std::uint64_t i, int base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % static_cast<std::uint64_t>(base));
    i /= static_cast<std::uint64_t>(base);
    f *= inv;
  }
  return r;
}

std::vector<Vector> certification_samples(const Box& region, int n, double boundary_fraction,
                                          std::uint64_t seed) {
  const Eigen::Index d = region.dim();
  if (d > static_cast<Eigen::Index>(std::size(kPrimes))) {
    throw ContractError("certification_samples: dimension exceeds the Halton prime table");
  }
  if (n < 1) throw ContractError("certification_samples: need at least one sample");
  if (boundary_fraction < 0.0 || boundary_fraction > 1.0) {
    throw ConfigError("certify.boundary_fraction must lie in [0, 1]");
  }
  Rng rng(seed);
  const int n_boundary = static_cast<int>(std::lround(boundary_fraction * n));
  std::vector<Vector> pts;
  pts.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    Vector x(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      const double u = radical_inverse(static_cast<std::uint64_t>(i + 1), kPrimes[k]);
      x(k) = region.lo(k) + (region.hi(k) - region.lo(k)) * u;
    }
    if (i >= n - n_boundary) {
      const auto face = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(d));
      x(face) = (rng() & 1U) ? region.hi(face) : region.lo(face);
    }
    pts.push_back(std::move(x));
  }
  return pts;
}

Envelopes estimate_envelopes(const ControlAffineSystem& sys, const Controller& ctrl,
                             const std::vector<Vector>& samples, double safety) {
  Envelopes env;
  for (const Vector& x : samples) {
    const Observation obs = observe(sys, x);
    env.f_bar = std::max(env.f_bar, sys.drift(x).norm());
    env.b_bar = std::max(env.b_bar, spectral_norm(sys.input_matrix(x)));
    env.u_bar = std::max(env.u_bar, ctrl.control(obs.y).norm());
    env.jh_bar = std::max(env.jh_bar, spectral_norm(obs.jacobian));
  }
  env.f_bar *= safety;
  env.b_bar *= safety;
  env.u_bar *= safety;
  env.jh_bar *= safety;
  return env;
}

TheoremConstants compute_constants(const ControlAffineSystem& sys, const Controller& ctrl,
                                   const MetricField& field, const std::vector<Vector>& samples,
                                   double safety) {
  TheoremConstants c;
  c.lambda_min = std::numeric_limits<double>::infinity();
  const Eigen::Index n = sys.state_dim();
  for (const Vector& x : samples) {
    const ClosedLoopJacobian cl = closed_loop_jacobian(sys, ctrl, x);
    const Matrix m = field.metric_matrix(x);
    const Matrix mr = m + kMetricRidge * Matrix::Identity(n, n);
    Matrix w;
    double lmin = 0.0;
    try {
      lmin = symmetric_eig(m).values(0);
      w = inv_sqrt(mr);
    } catch (const SingularMetricError&) {
      ++c.excluded;
      continue;
    }
    c.lambda_min = std::min(c.lambda_min, lmin);
    auto lyap = [&](const Matrix& a) {
      return symmetric_spectral_norm(sym(w * (a.transpose() * mr + mr * a) * w));
    };
    c.c_f = std::max(c.c_f, lyap(cl.drift_part));
    c.c_bdb = std::max(c.c_bdb, lyap(cl.input_part));
    c.c_bj = std::max(c.c_bj, 2.0 * spectral_norm(sqrt_psd(mr) * cl.input_matrix) *
                                  symmetric_spectral_norm(w));
    c.theta_sup = std::max(c.theta_sup, spectral_norm(field.theta(x)));
    const MetricGradNorm g = field.metric_grad_frobenius(x, lmin >= 1e-10);
    c.metric_grad_sup = std::max(c.metric_grad_sup, g.frobenius);
    if (g.normalized) c.normalized_grad_sup = std::max(c.normalized_grad_sup, *g.normalized);
  }
  if (!std::isfinite(c.lambda_min)) c.lambda_min = 0.0;
  c.c_f *= safety;
  c.c_bdb *= safety;
  c.c_bj *= safety;
  return c;
}

namespace {

double structural_terms(const TheoremConstants& c, double l_pi, const Envelopes& env) {
  return c.c_f + c.c_bdb + c.c_bj * l_pi * env.jh_bar;
}

}  // namespace

double theorem1_margin(const TheoremConstants& c, double l_pi, double l_m, double m_min,
                       const Envelopes& env, double alpha) {
  return alpha_floor(c, l_pi, l_m, m_min, env) - alpha;
}

double theorem1_margin_linear_mmin(const TheoremConstants& c, double l_pi, double l_m,
                                   double m_min, const Envelopes& env, double alpha) {
  return structural_terms(c, l_pi, env) + (l_m / m_min) * (env.f_bar + env.b_bar * env.u_bar) -
         alpha;
}

double theorem1_margin_normalized(const TheoremConstants& c, double l_pi, double l_hat_m,
                                  const Envelopes& env, double alpha) {
  return structural_terms(c, l_pi, env) + l_hat_m * (env.f_bar + env.b_bar * env.u_bar) - alpha;
}

double alpha_floor(const TheoremConstants& c, double l_pi, double l_m, double m_min,
                   const Envelopes& env) {
  return structural_terms(c, l_pi, env) +
         (l_m / std::sqrt(m_min)) * (env.f_bar + env.b_bar * env.u_bar);
}

EpsilonBudget epsilon_budget(double xi, double alpha) {
  EpsilonBudget b;
  b.upper = -(xi + alpha);
  b.empty = !(b.upper > 0.0);
  b.literal_upper = alpha - xi;
  b.literal_empty = !(b.literal_upper > 0.0);
  return b;
}

ResidualStats sample_residuals(const ControlAffineSystem& sys, const Controller& ctrl,
                               const MetricField& field, double alpha, double eps_margin,
                               const std::vector<Vector>& samples, bool keep_rows) {
  ResidualStats st;
  st.samples = static_cast<int>(samples.size());
  for (const Vector& x : samples) {
    const ClosedLoopJacobian cl = closed_loop_jacobian(sys, ctrl, x);
    ResidualBundle rb;
    try {
      const Matrix m = field.metric_matrix(x);
      const Matrix m_dot = field.metric_time_derivative(x, cl.f_cl);
      rb = contraction_residual(m, m_dot,
                                AclParts{cl.drift_part, cl.input_part, cl.feedback_part}, alpha);
    } catch (const SingularMetricError&) {
      ++st.excluded;
      continue;
    }
    st.worst_lambda_max = std::max(st.worst_lambda_max, rb.lambda_max);
    st.worst_growth_rate = std::max(st.worst_growth_rate, rb.growth_rate);
    if (rb.lambda_max > -eps_margin) ++st.violations;
    if (keep_rows) {
      const Matrix& w = rb.m_inv_sqrt;
      auto nrm = [&w](const Matrix& r) { return symmetric_spectral_norm(sym(w * r * w)); };
      ResidualSample row;
      row.x = x;
      row.lambda_max = rb.lambda_max;
      row.growth_rate = rb.growth_rate;
      row.norm_f = nrm(rb.r_f);
      row.norm_input = nrm(rb.r_input);
      row.norm_feedback = nrm(rb.r_feedback);
      row.norm_mdot = nrm(rb.r_mdot);
      row.f_cl_norm = cl.f_cl.norm();
      row.outside_region = cl.outside_region;
      st.rows.push_back(std::move(row));
    }
  }
  const int used = st.samples - st.excluded;
  st.violation_fraction = used > 0 ? static_cast<double>(st.violations) / used : 0.0;
  return st;
}

void write_residual_csv(std::ostream& os, const ResidualStats& stats) {
  if (stats.rows.empty()) {
    os << "lambda_max,growth_rate,norm_f,norm_dB,norm_BJ,norm_Mdot,f_cl_norm\n";
    return;
  }
  for (Eigen::Index i = 0; i < stats.rows.front().x.size(); ++i) os << 'x' << i << ',';
  os << "lambda_max,growth_rate,norm_f,norm_dB,norm_BJ,norm_Mdot,f_cl_norm\n";
  for (const ResidualSample& r : stats.rows) {
    for (Eigen::Index i = 0; i < r.x.size(); ++i) os << format_double(r.x(i)) << ',';
    os << format_double(r.lambda_max) << ',' << format_double(r.growth_rate) << ','
       << format_double(r.norm_f) << ',' << format_double(r.norm_input) << ','
       << format_double(r.norm_feedback) << ',' << format_double(r.norm_mdot) << ','
       << format_double(r.f_cl_norm) << '\n';
  }
}

// ---------------------------------------------------------------------------
// ISS

double iss_bound(double v0, double m_min, double m_max, double dbar, double alpha, double t) {
  const double decay = std::exp(-alpha * t);
  return (v0 / std::sqrt(m_min)) * decay +
         (dbar / alpha) * std::sqrt(m_max / m_min) * (1.0 - decay);
}

namespace {

double residual_lambda(const ControlAffineSystem& sys, const Controller& ctrl,
                       const MetricField& field, const Vector& x, double alpha) {
  try {
    return residual_at(sys, ctrl, field, x, alpha).lambda_max;
  } catch (const SingularMetricError&) {
    return std::numeric_limits<double>::infinity();
  }
}

Vector closed_loop_step(const ControlAffineSystem& sys, const Controller& ctrl, const Vector& x,
                        double dt, const DisturbanceModel& dist, double t) {
  return step_rk4(sys, x, ctrl.control(sys.observe(x)), dt, dist, t);
}

}  // namespace

IssResult verify_iss(const ControlAffineSystem& sys, const Controller& ctrl,
                     const MetricField& field, double alpha, const IssOptions& options,
                     bool keep_trajectories) {
  if (!(alpha > 0.0)) throw ContractError("verify_iss: alpha must be positive");
  if (options.horizon_steps < 1 || options.trajectories_per_magnitude < 1) {
    throw ContractError("verify_iss: need at least one step and one trajectory");
  }
  const Eigen::Index n = sys.state_dim();
  const Box start = sys.region().shrink(options.reset_fraction);
  const int stride = std::max(1, options.residual_stride);
  IssResult res;
  for (size_t mi = 0; mi < options.magnitudes.size(); ++mi) {
    const double mag = options.magnitudes[mi];
    double max_err = 0.0;
    for (int j = 0; j < options.trajectories_per_magnitude; ++j) {
      Rng rng(derive_seed(options.seed, mi * 100003U + static_cast<std::uint64_t>(j)));
      const Vector x0 = uniform_in(rng, start.lo, start.hi);
      DisturbanceSchedule sched;
      sched.frequency = options.frequency;
      sched.seed = rng();
      const DisturbanceModel dist =
          mag > 0.0 ? DisturbanceModel(options.kind, mag, random_direction(rng, n),
                                       sys.disturbance_bound(), sched)
                    : DisturbanceModel();
      IssTrajectory tr;
      tr.magnitude = mag;
      tr.index = j;
      tr.clean = true;
      Vector x = x0, xr = x0;
      const double v0 = 0.0;  // e(0) = 0
      tr.worst_lambda_max = residual_lambda(sys, ctrl, field, x0, alpha);
      double t = 0.0;
      for (int k = 1; k <= options.horizon_steps; ++k) {
        try {
          x = closed_loop_step(sys, ctrl, x, options.dt, dist, t);
          xr = closed_loop_step(sys, ctrl, xr, options.dt, DisturbanceModel(), t);
        } catch (const IntegrationError&) {
          tr.clean = false;
          tr.max_ratio = std::numeric_limits<double>::infinity();
          break;
        }
        t = k * options.dt;
        if (k % stride == 0) {
          tr.worst_lambda_max =
              std::max({tr.worst_lambda_max, residual_lambda(sys, ctrl, field, x, alpha),
                        residual_lambda(sys, ctrl, field, xr, alpha)});
        }
        const double err = (x - xr).norm();
        const double bound = iss_bound(v0, field.m_min(), field.m_max(), mag, alpha, t);
        tr.max_error = std::max(tr.max_error, err);
        if (bound > 0.0) {
          tr.max_ratio = std::max(tr.max_ratio, err / bound);
        } else if (err > 0.0) {
          tr.max_ratio = std::numeric_limits<double>::infinity();
        }
        if (keep_trajectories) {
          tr.times.push_back(t);
          tr.errors.push_back(err);
          tr.bounds.push_back(bound);
        }
      }
      tr.clean = tr.clean && tr.worst_lambda_max <= 0.0;
      tr.within_bound = tr.max_ratio <= options.slack;
      if (tr.clean) {
        ++res.clean;
        if (tr.within_bound) ++res.clean_within_bound;
      }
      max_err = std::max(max_err, tr.max_error);
      res.trajectories.push_back(std::move(tr));
    }
    res.max_error_per_magnitude.push_back(max_err);
  }
  res.pass = res.clean > 0 && res.clean_within_bound == res.clean;
  return res;
}

double fit_envelope_rate(const std::vector<double>& errors, double dt) {
  if (errors.size() < 2) return 0.0;
  std::vector<double> env(errors.size());
  double run = 0.0;
  for (size_t i = errors.size(); i-- > 0;) {
    run = std::max(run, errors[i]);
    env[i] = run;
  }
  const double floor = std::max(1e-9 * env.front(), 1e-14);
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  int cnt = 0;
  for (size_t i = 0; i < env.size(); ++i) {
    if (env[i] <= floor) break;
    const double t = static_cast<double>(i) * dt, y = std::log(env[i]);
    st += t;
    sy += y;
    stt += t * t;
    sty += t * y;
    ++cnt;
  }
  if (cnt < 2) return std::numeric_limits<double>::infinity();
  const double denom = cnt * stt - st * st;
  const double slope = (cnt * sty - st * sy) / denom;
  return -slope;
}

DecayResult verify_decay(const ControlAffineSystem& sys, const Controller& ctrl, int pairs,
                         double offset, int horizon_steps, double dt, double reset_fraction,
                         std::uint64_t seed) {
  const Eigen::Index n = sys.state_dim();
  const Box start = sys.region().shrink(reset_fraction);
  DecayResult res;
  res.min_rate = std::numeric_limits<double>::infinity();
  for (int p = 0; p < pairs; ++p) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(p)));
    Vector xa = uniform_in(rng, start.lo, start.hi);
    Vector xb = xa + offset * random_direction(rng, n);
    std::vector<double> errs;
    errs.reserve(static_cast<size_t>(horizon_steps) + 1);
    errs.push_back((xa - xb).norm());
    const DisturbanceModel none;
    double t = 0.0;
    for (int k = 1; k <= horizon_steps; ++k) {
      xa = closed_loop_step(sys, ctrl, xa, dt, none, t);
      xb = closed_loop_step(sys, ctrl, xb, dt, none, t);
      t = k * dt;
      errs.push_back((xa - xb).norm());
    }
    const double rate = fit_envelope_rate(errs, dt);
    res.rates.push_back(rate);
    res.min_rate = std::min(res.min_rate, rate);
    res.errors.push_back(std::move(errs));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Report

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kCertified: return "certified";
    case Verdict::kSampledOnly: return "sampled-only";
    case Verdict::kFailed: return "failed";
  }
  return "failed";
}

CertificationReport certify(const ControlAffineSystem& sys, const Controller& ctrl,
                            const MetricField& field, const CertifyOptions& options) {
  if (options.samples < 1) throw ConfigError("certify.samples must be >= 1");
  if (!(options.alpha > 0.0)) throw ConfigError("certify alpha must be positive");
  if (options.safety < 1.0) throw ConfigError("certify.safety must be >= 1");
  CertificationReport r;
  r.system = sys.name();
  r.samples = options.samples;
  r.region = sys.region();
  r.alpha = options.alpha;
  r.eps_margin = options.eps_margin;
  r.m_min_config = field.m_min();
  r.m_max = field.m_max();

  const std::vector<Vector> pts =
      certification_samples(sys.region(), options.samples, options.boundary_fraction,
                            options.seed);
  r.envelopes = estimate_envelopes(sys, ctrl, pts, options.safety);
  r.constants = compute_constants(sys, ctrl, field, pts, options.safety);
  r.m_min = r.constants.lambda_min > 0.0 ? std::min(field.m_min(), r.constants.lambda_min)
                                          : field.m_min();
  const double n = static_cast<double>(sys.state_dim());
  r.budgets.l_pi = ctrl.lipschitz_bound();
  r.budgets.l_m = 2.0 * std::sqrt(n) * options.safety * r.constants.theta_sup *
                  field.net().lipschitz_bound();
  r.budgets.l_hat_m = options.safety * r.constants.normalized_grad_sup;

  r.theorem1_margin = theorem1_margin(r.constants, r.budgets.l_pi, r.budgets.l_m, r.m_min,
                                      r.envelopes, r.alpha);
  r.theorem1_margin_linear_mmin = theorem1_margin_linear_mmin(
      r.constants, r.budgets.l_pi, r.budgets.l_m, r.m_min, r.envelopes, r.alpha);
  r.theorem1_margin_normalized = theorem1_margin_normalized(
      r.constants, r.budgets.l_pi, r.budgets.l_hat_m, r.envelopes, r.alpha);
  r.alpha_floor = alpha_floor(r.constants, r.budgets.l_pi, r.budgets.l_m, r.m_min, r.envelopes);

  r.residuals = sample_residuals(sys, ctrl, field, r.alpha, r.eps_margin, pts, options.keep_rows);
  r.xi_certified = r.alpha_floor;
  r.xi_sampled = r.residuals.worst_growth_rate;
  r.epsilon_budget = epsilon_budget(r.xi_certified, r.alpha);
  r.epsilon_budget_sampled = epsilon_budget(r.xi_sampled, r.alpha);
  r.conservative = r.residuals.worst_lambda_max <= r.theorem1_margin + 1e-6;

  // A sample above the analytic bound refutes it; no certificate then.
  if (r.theorem1_margin < 0.0 && r.conservative) {
    r.verdict = Verdict::kCertified;
  } else if (r.residuals.violations == 0 && r.residuals.excluded == 0) {
    r.verdict = Verdict::kSampledOnly;
  } else {
    r.verdict = Verdict::kFailed;
  }
  return r;
}

namespace {

using Json = nlohmann::ordered_json;

Json budget_json(const EpsilonBudget& b) {
  Json j;
  j["upper"] = b.upper;
  j["empty"] = b.empty;
  j["literal_upper"] = b.literal_upper;
  j["literal_empty"] = b.literal_empty;
  return j;
}

Json vec_json(const Vector& v) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

}  // namespace

std::string report_to_json(const CertificationReport& r) {
  Json j;
  j["schema"] = "cppo.certification.v1";
  j["system"] = r.system;
  j["samples"] = r.samples;
  j["region"] = {{"lo", vec_json(r.region.lo)}, {"hi", vec_json(r.region.hi)}};
  j["alpha"] = r.alpha;
  j["eps_margin"] = r.eps_margin;
  j["m_min_config"] = r.m_min_config;
  j["m_min"] = r.m_min;
  j["m_max"] = r.m_max;
  j["chi"] = r.m_max / r.m_min_config;
  j["envelopes"] = {{"f_bar", r.envelopes.f_bar},
                    {"B_bar", r.envelopes.b_bar},
                    {"u_bar", r.envelopes.u_bar},
                    {"J_h_bar", r.envelopes.jh_bar}};
  j["lipschitz"] = {{"L_pi", r.budgets.l_pi},
                    {"L_M", r.budgets.l_m},
                    {"L_M_hat", r.budgets.l_hat_m}};
  j["constants"] = {{"C_f", r.constants.c_f},
                    {"C_BdB", r.constants.c_bdb},
                    {"C_BJ", r.constants.c_bj},
                    {"excluded_samples", r.constants.excluded},
                    {"lambda_min_M", r.constants.lambda_min},
                    {"theta_sup", r.constants.theta_sup},
                    {"metric_grad_sup", r.constants.metric_grad_sup},
                    {"normalized_metric_grad_sup", r.constants.normalized_grad_sup}};
  j["theorem1_margin"] = r.theorem1_margin;
  j["theorem1_margin_variants"] = {{"sqrt_m_min", r.theorem1_margin},
                                   {"m_min", r.theorem1_margin_linear_mmin},
                                   {"normalized", r.theorem1_margin_normalized}};
  j["alpha_floor"] = r.alpha_floor;
  j["xi"] = {{"certified", r.xi_certified},
             {"sampled", r.xi_sampled},
             {"convention", "sup of Vdot/V; admissible eps in (0, -(xi + alpha)]"}};
  j["epsilon_budget"] = {{"certified", budget_json(r.epsilon_budget)},
                         {"sampled", budget_json(r.epsilon_budget_sampled)}};
  j["sampled_worst_residual"] = r.residuals.worst_lambda_max;
  j["sampled_worst_growth_rate"] = r.residuals.worst_growth_rate;
  j["violations"] = r.residuals.violations;
  j["violation_fraction"] = r.residuals.violation_fraction;
  j["excluded_samples"] = r.residuals.excluded;
  j["conservative"] = r.conservative;
  if (r.iss) {
    const IssResult& iss = *r.iss;
    Json trajs = Json::array();
    for (const IssTrajectory& t : iss.trajectories) {
      trajs.push_back({{"magnitude", t.magnitude},
                       {"index", t.index},
                       {"clean", t.clean},
                       {"max_error", t.max_error},
                       {"max_ratio", t.max_ratio},
                       {"worst_lambda_max", t.worst_lambda_max},
                       {"within_bound", t.within_bound}});
    }
    Json per_mag = Json::array();
    for (double v : iss.max_error_per_magnitude) per_mag.push_back(v);
    j["iss"] = {{"clean", iss.clean},
                {"clean_within_bound", iss.clean_within_bound},
                {"pass", iss.pass},
                {"max_error_per_magnitude", per_mag},
                {"trajectories", trajs}};
  } else {
    j["iss"] = nullptr;
  }
  j["verdict"] = to_string(r.verdict);
  return j.dump(2) + "\n";
}

}  // namespace cppo
