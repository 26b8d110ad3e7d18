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

#include "cppo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "cppo/errors.hpp"
#include "cppo/linalg.hpp"

namespace cppo {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void clip_norm(Vector& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = g.norm();
  if (norm > max_norm) g *= max_norm / norm;
}

}  // namespace

void TrainConfig::validate() const {
  require(alpha > 0.0, "train.alpha must be positive");
  require(eps_margin > 0.0, "train.eps_margin must be positive");
  require(w_contr >= 0.0, "train.w_contr must be nonnegative");
  require(w_pd >= 0.0, "train.w_pd must be nonnegative");
  require(contraction_stride >= 1, "train.contraction_stride must be >= 1");
  require(uniform_contraction_samples >= 0, "train.uniform_contraction_samples must be >= 0");
  require(lr > 0.0, "train.lr must be positive");
  require(gamma > 0.0 && gamma <= 1.0, "train.gamma must lie in (0, 1]");
  require(gae_lambda >= 0.0 && gae_lambda <= 1.0, "train.gae_lambda must lie in [0, 1]");
  require(clip_ratio > 0.0, "train.clip_ratio must be positive");
  require(entropy_coef >= 0.0, "train.entropy_coef must be nonnegative");
  require(value_coef >= 0.0, "train.value_coef must be nonnegative");
  require(max_grad_norm >= 0.0, "train.max_grad_norm must be nonnegative");
  require(log_std_min < log_std_max, "train.log_std_min must be below train.log_std_max");
  require(rollout_length >= 1, "train.rollout_length must be >= 1");
  require(epochs >= 1, "train.epochs must be >= 1");
  require(minibatches >= 1, "train.minibatches must be >= 1");
  require(n_envs >= 1, "train.n_envs must be >= 1");
  require(minibatches <= rollout_length * n_envs,
          "train.minibatches exceeds the number of rollout steps");
  require(iterations >= 0, "train.iterations must be >= 0");
  require(metric.m_min > 0.0, "metric.m_min must be positive");
  require(metric.m_max > metric.m_min, "metric.m_max must exceed metric.m_min");
}

double total_loss(double l_ppo, double l_contr, double l_pd, double w_contr, double w_pd) {
  if (!std::isfinite(l_ppo)) throw DivergenceError("non-finite PPO loss", "l_ppo");
  if (!std::isfinite(l_contr)) throw DivergenceError("non-finite contraction loss", "l_contr");
  if (!std::isfinite(l_pd)) throw DivergenceError("non-finite PD penalty", "l_pd");
  return l_ppo + w_contr * l_contr + w_pd * l_pd;
}

// ---------------------------------------------------------------------------
// Contraction hinge
//
// With a = Theta e, w = A_cl e, b = Theta w, c = Thetadot e:
//   V = a.a,  Vdot = 2 a.b + 2 a.c
//   dV/dTheta = 2 a e^T
//   dVdot/dTheta = 2 b e^T + 2 a w^T + 2 c e^T,  dVdot/dThetadot = 2 a e^T
// The policy enters through u (f_cl, the dB_i/dx terms) and through J_u g with
// g = J_h e.

ContractionLossResult contraction_loss(const MetricField& field, const PolicyStack& stack,
                                       const ControlAffineSystem& sys, const Vector& x,
                                       const Vector& x_d, double alpha, double eps_margin,
                                       bool want_grads) {
  const int n = sys.state_dim();
  if (x.size() != n || x_d.size() != n || field.dim() != n) {
    throw ContractError("contraction_loss: dimension mismatch");
  }
  ContractionLossResult out;
  if (want_grads) {
    out.metric_grad = field.net().zero_gradients();
    out.policy_grad = stack.policy_net.zero_gradients();
  }
  const Vector e = x - x_d;
  const Observation obs = observe(sys, x);
  const PdCoordinates pd = sys.pd_coordinates(obs.y);
  const Vector g = obs.jacobian * e;

  TangentForwardResult pf = stack.policy_net.forward_tangent(obs.y, g);
  const double amax = stack.action_limit;
  const bool squash = std::isfinite(amax);
  const Eigen::Index m = stack.action_dim();
  Eigen::ArrayXd tau = Eigen::ArrayXd::Zero(m), sp = Eigen::ArrayXd::Ones(m);
  Vector mu = pf.output;
  if (squash) {
    tau = (pf.output.array() / amax).tanh();
    sp = 1.0 - tau.square();
    mu = amax * tau.matrix();
  }
  const Vector mu_dot = (sp * pf.output_tangent.array()).matrix();
  const Vector u_raw = (stack.kp.array() * (stack.q_ref + mu - pd.q).array() -
                        stack.kd.array() * pd.qdot.array())
                           .matrix();
  const Vector& lim = sys.torque_limit();
  Eigen::ArrayXd active(m);
  for (Eigen::Index i = 0; i < m; ++i) active(i) = std::abs(u_raw(i)) > lim(i) ? 0.0 : 1.0;
  const Vector u = saturate(u_raw, lim);
  const Vector s = (active * (stack.kp.array() * (mu_dot - pd.dq_dy * g).array() -
                              stack.kd.array() * (pd.dqdot_dy * g).array()))
                       .matrix();

  const JacobianBundle jb = eval_jacobians(sys, x, u);
  const Vector f_cl = sys.drift(x) + jb.input_matrix * u;
  std::vector<Vector> db_e(static_cast<size_t>(m));
  Vector w = jb.drift_jacobian * e + jb.input_matrix * s;
  for (Eigen::Index i = 0; i < m; ++i) {
    db_e[static_cast<size_t>(i)] = jb.input_jacobians[static_cast<size_t>(i)] * e;
    w += db_e[static_cast<size_t>(i)] * u(i);
  }

  TangentForwardResult mf = field.net().forward_tangent(x, f_cl);
  const Matrix theta = lower_triangular_from(mf.output, n);
  const Matrix theta_dot = lower_triangular_from(mf.output_tangent, n);
  const Vector av = theta * e;
  const Vector bv = theta * w;
  const Vector cv = theta_dot * e;
  out.v = av.squaredNorm();
  out.v_dot = 2.0 * av.dot(bv) + 2.0 * av.dot(cv);
  if (out.v < kMinLyapunovValue) {
    out.skipped = true;
    return out;
  }
  out.ratio = (out.v_dot + alpha * out.v) / out.v;
  out.loss = std::max(0.0, out.ratio + eps_margin);
  if (!want_grads || out.loss <= 0.0) return out;

  const double dl_dvdot = 1.0 / out.v;
  const double dl_dv = -out.v_dot / (out.v * out.v);
  const Matrix g_theta = dl_dvdot * 2.0 * (bv * e.transpose() + av * w.transpose() +
                                           cv * e.transpose()) +
                         dl_dv * 2.0 * (av * e.transpose());
  const Matrix g_theta_dot = dl_dvdot * 2.0 * (av * e.transpose());
  TangentBackwardResult mb = field.net().backward_tangent(
      mf.tape, lower_triangular_entries(g_theta), lower_triangular_entries(g_theta_dot));
  out.metric_grad = std::move(mb.grads);

  const Vector dl_dw = dl_dvdot * 2.0 * (theta.transpose() * av);
  const Vector& dl_dfcl = mb.input_tangent_grad;
  Vector dl_du = jb.input_matrix.transpose() * dl_dfcl;
  for (Eigen::Index i = 0; i < m; ++i) dl_du(i) += dl_dw.dot(db_e[static_cast<size_t>(i)]);
  const Vector dl_ds = jb.input_matrix.transpose() * dl_dw;

  const Eigen::ArrayXd dl_dmu = stack.kp.array() * active * dl_du.array();
  const Eigen::ArrayXd dl_dmu_dot = active * stack.kp.array() * dl_ds.array();
  Vector dl_dz = (sp * dl_dmu).matrix();
  if (squash) {
    dl_dz.array() += (-2.0 * tau * sp / amax) * pf.output_tangent.array() * dl_dmu_dot;
  }
  const Vector dl_dzdot = (sp * dl_dmu_dot).matrix();
  TangentBackwardResult pb = stack.policy_net.backward_tangent(pf.tape, dl_dz, dl_dzdot);
  out.policy_grad = std::move(pb.grads);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(Eigen::Index n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Vector::Zero(n)),
      v_(Vector::Zero(n)) {}

void Adam::step(Vector& params, const Vector& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ContractError("Adam::step: size mismatch");
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

// ---------------------------------------------------------------------------
// State and checkpoints

TrainState make_initial_state(const ControlAffineSystem& sys, const TrainConfig& config) {
  config.validate();
  PolicyStack stack = make_policy_stack(sys, config.policy);
  const int n = sys.state_dim();
  const MetricSpec& ms = config.metric;
  MetricField field =
      ms.identity ? MetricField::constant(Matrix::Identity(n, n), ms.m_min, ms.m_max)
                  : MetricField::learned(n, ms.hidden, ms.activation, ms.budget, ms.seed,
                                         ms.m_min, ms.m_max);
  return TrainState{std::move(stack), std::move(field)};
}

Checkpoint checkpoint_of(const TrainState& state) {
  return Checkpoint{state.stack.policy_net, state.stack.value_net, state.field.net(),
                    state.stack.log_std};
}

TrainState state_from_checkpoint(const ControlAffineSystem& sys, const TrainConfig& config,
                                 const Checkpoint& ckpt) {
  PolicyStack stack = make_policy_stack(sys, config.policy);
  stack.policy_net = ckpt.policy;
  stack.value_net = ckpt.value;
  stack.log_std = ckpt.log_std;
  stack.validate();
  const int n = sys.state_dim();
  if (ckpt.metric.input_dim() != n || ckpt.metric.output_dim() != triangular_size(n)) {
    throw CheckpointError("checkpoint metric network does not match the system dimension");
  }
  MetricField field(ckpt.metric, n, config.metric.m_min, config.metric.m_max);
  return TrainState{std::move(stack), std::move(field)};
}

// ---------------------------------------------------------------------------
// Logging

void write_metrics_header(std::ostream& os) {
  os << "iter,mean_reward,violation_rate,l_ppo,l_contr,l_pd,L_pi,L_M,wallclock_s\n";
}

void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.iter << ',' << format_double(r.mean_reward) << ',' << format_double(r.violation_rate)
     << ',' << format_double(r.l_ppo) << ',' << format_double(r.l_contr) << ','
     << format_double(r.l_pd) << ',' << format_double(r.lipschitz_pi) << ','
     << format_double(r.lipschitz_m) << ',' << format_double(r.wallclock_s) << '\n';
}

double metric_lipschitz_bound(const MetricField& field, const std::vector<Vector>& states) {
  double sup_theta = 0.0;
  for (const Vector& x : states) sup_theta = std::max(sup_theta, spectral_norm(field.theta(x)));
  return 2.0 * std::sqrt(static_cast<double>(field.dim())) * sup_theta *
         field.net().lipschitz_bound();
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct ContractionSample {
  Vector x;
  Vector x_d;
};

}  // namespace

TrainResult train(const ControlAffineSystem& sys, const TrainConfig& config,
                  const IterationCallback& on_iteration) {
  return train(sys, config, make_initial_state(sys, config), on_iteration);
}

TrainResult train(const ControlAffineSystem& sys, const TrainConfig& config, TrainState state,
                  const IterationCallback& on_iteration) {
  config.validate();
  state.stack.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const bool train_metric = !config.metric.identity;
  PolicyStack& stack = state.stack;
  MetricField& field = state.field;

  Rng rng(derive_seed(config.seed, 100));
  VecEnv env(sys, config.env, config.n_envs, derive_seed(config.seed, 101));
  Adam policy_opt(stack.policy_net.num_parameters(), config.lr);
  Adam log_std_opt(stack.log_std.size(), config.lr);
  Adam value_opt(stack.value_net.num_parameters(), config.lr);
  Adam metric_opt(field.net().num_parameters(), config.lr);
  const PpoLossOptions ppo_opts{config.clip_ratio, config.entropy_coef, config.value_coef};

  TrainResult res{state, {}, {}, false, {}, 0};
  for (int iter = 0; iter < config.iterations; ++iter) {
    TrainState good = state;
    MetricsRow row;
    row.iter = iter;
    try {
      RolloutBatch batch = env.collect(stack, DisturbanceModel{}, config.rollout_length);
      compute_gae(batch, config.gamma, config.gae_lambda, true);
      row.mean_reward = batch.mean_reward();

      const size_t total = batch.size();
      std::vector<ContractionSample> samples;
      std::vector<int> sample_of(total, -1);
      for (size_t i = 0; i < total; ++i) {
        const int t = static_cast<int>(i) / batch.n_envs;
        if (t % config.contraction_stride != 0) continue;
        sample_of[i] = static_cast<int>(samples.size());
        samples.push_back({batch.steps[i].x, batch.steps[i].x_d});
      }
      std::vector<std::vector<int>> uniform_for(static_cast<size_t>(config.minibatches));
      for (int j = 0; j < config.uniform_contraction_samples; ++j) {
        const Vector x = uniform_in(rng, sys.region().lo, sys.region().hi);
        const Vector q_des = stack.q_ref + stack.mean_offset(sys.observe(x));
        const int mb = j % config.minibatches;
        uniform_for[static_cast<size_t>(mb)].push_back(static_cast<int>(samples.size()));
        samples.push_back({x, build_desired_state(sys, q_des)});
      }

      // Pre-update diagnostics on the whole contraction set.
      {
        int evaluated = 0, violations = 0, skipped = 0;
        double lc = 0.0, lpd = 0.0;
        std::vector<Vector> states;
        states.reserve(samples.size());
        for (const ContractionSample& cs : samples) {
          const ContractionLossResult c = contraction_loss(field, stack, sys, cs.x, cs.x_d,
                                                           config.alpha, config.eps_margin);
          if (c.skipped) {
            ++skipped;
          } else {
            ++evaluated;
            lc += c.loss;
            if (c.loss > 0.0) ++violations;
          }
          lpd += field.pd_penalty(cs.x);
          states.push_back(cs.x);
        }
        row.contraction_samples = static_cast<int>(samples.size());
        row.skipped_samples = skipped;
        res.total_skipped += skipped;
        row.violation_rate = evaluated ? static_cast<double>(violations) / evaluated : 0.0;
        row.l_contr = evaluated ? lc / evaluated : 0.0;
        row.l_pd = samples.empty() ? 0.0 : lpd / static_cast<double>(samples.size());
        row.lipschitz_m = metric_lipschitz_bound(field, states);
      }

      std::vector<size_t> perm(total);
      std::iota(perm.begin(), perm.end(), size_t{0});
      double ppo_sum = 0.0;
      int ppo_count = 0;
      for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), rng);
        for (int mb = 0; mb < config.minibatches; ++mb) {
          const size_t begin = total * static_cast<size_t>(mb) / config.minibatches;
          const size_t end = total * static_cast<size_t>(mb + 1) / config.minibatches;
          std::vector<size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                                  perm.begin() + static_cast<std::ptrdiff_t>(end));
          std::sort(idx.begin(), idx.end());
          PpoLossResult pl = ppo_loss(stack, batch, idx, ppo_opts, true);
          ppo_sum += pl.loss;
          ++ppo_count;

          std::vector<int> chosen;
          for (size_t i : idx)
            if (sample_of[i] >= 0) chosen.push_back(sample_of[i]);
          for (int j : uniform_for[static_cast<size_t>(mb)]) chosen.push_back(j);

          MlpGradients c_metric = field.net().zero_gradients();
          MlpGradients c_policy = stack.policy_net.zero_gradients();
          MlpGradients pd_metric = field.net().zero_gradients();
          double lc = 0.0, lpd = 0.0;
          int evaluated = 0;
          for (int j : chosen) {
            const ContractionSample& cs = samples[static_cast<size_t>(j)];
            ContractionLossResult c = contraction_loss(field, stack, sys, cs.x, cs.x_d,
                                                       config.alpha, config.eps_margin, true);
            if (!c.skipped) {
              ++evaluated;
              lc += c.loss;
              if (c.loss > 0.0) {
                c_metric += c.metric_grad;
                c_policy += c.policy_grad;
              }
            }
            if (train_metric) {
              PdPenaltyResult pd = field.pd_penalty_with_grad(cs.x);
              lpd += pd.value;
              if (pd.value > 0.0) {
                ForwardResult fwd = field.net().forward(cs.x);
                pd_metric += field.net()
                                 .backward(fwd.tape, lower_triangular_entries(pd.grad_theta))
                                 .grads;
              }
            }
          }
          const double inv_c = evaluated ? 1.0 / evaluated : 0.0;
          const double inv_pd = chosen.empty() ? 0.0 : 1.0 / static_cast<double>(chosen.size());
          total_loss(pl.loss, lc * inv_c, lpd * inv_pd, config.w_contr, config.w_pd);

          Vector g_policy = pl.policy_grad.flatten();
          if (config.shape_policy && config.w_contr > 0.0 && evaluated) {
            g_policy += (config.w_contr * inv_c) * c_policy.flatten();
          }
          Vector g_log_std = pl.log_std_grad;
          Vector g_value = pl.value_grad.flatten();
          if (!all_finite(g_policy)) throw DivergenceError("non-finite policy gradient", "policy");
          if (!all_finite(g_value)) throw DivergenceError("non-finite value gradient", "value");
          clip_norm(g_policy, config.max_grad_norm);
          clip_norm(g_value, config.max_grad_norm);

          Vector p = stack.policy_net.parameters();
          policy_opt.step(p, g_policy);
          stack.policy_net.set_parameters(p);
          stack.policy_net.spectral_normalize();
          log_std_opt.step(stack.log_std, g_log_std);
          stack.log_std = stack.log_std.cwiseMax(config.log_std_min).cwiseMin(config.log_std_max);
          Vector v = stack.value_net.parameters();
          value_opt.step(v, g_value);
          stack.value_net.set_parameters(v);
          stack.value_net.spectral_normalize();

          if (train_metric) {
            Vector g_metric = (config.w_contr * inv_c) * c_metric.flatten() +
                              (config.w_pd * inv_pd) * pd_metric.flatten();
            if (!all_finite(g_metric)) {
              throw DivergenceError("non-finite metric gradient", "metric");
            }
            clip_norm(g_metric, config.max_grad_norm);
            Vector q = field.net().parameters();
            metric_opt.step(q, g_metric);
            field.mutable_net().set_parameters(q);
            field.mutable_net().spectral_normalize();
          }
          if (!all_finite(stack.policy_net.parameters()) || !all_finite(stack.log_std)) {
            throw DivergenceError("non-finite policy parameters", "policy");
          }
          if (!all_finite(field.net().parameters())) {
            throw DivergenceError("non-finite metric parameters", "metric");
          }
        }
      }
      row.l_ppo = ppo_count ? ppo_sum / ppo_count : 0.0;
    } catch (const DivergenceError& e) {
      state = std::move(good);
      res.diverged = true;
      res.divergence_component = e.component();
      break;
    }
    row.lipschitz_pi = stack.deployed_lipschitz_bound();
    if (config.record_wallclock) {
      row.wallclock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    res.log.push_back(row);
    if (on_iteration) on_iteration(row, state);
  }
  res.checkpoint = checkpoint_of(state);
  res.state = std::move(state);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

ViolationStats fresh_violation_rate(const MetricField& field, const PolicyStack& stack,
                                    const ControlAffineSystem& sys, double alpha,
                                    double eps_margin, int n, std::uint64_t seed) {
  Rng rng(seed);
  ViolationStats st;
  st.samples = n;
  for (int i = 0; i < n; ++i) {
    const Vector x = uniform_in(rng, sys.region().lo, sys.region().hi);
    const Vector q_des = stack.q_ref + stack.mean_offset(sys.observe(x));
    const ContractionLossResult c = contraction_loss(field, stack, sys, x,
                                                     build_desired_state(sys, q_des), alpha,
                                                     eps_margin);
    if (c.skipped) {
      ++st.skipped;
      continue;
    }
    ++st.evaluated;
    if (c.loss > 0.0) ++st.violations;
  }
  st.rate = st.evaluated ? static_cast<double>(st.violations) / st.evaluated : 0.0;
  return st;
}

EpisodeStats evaluate_episodes(const PolicyStack& stack, const ControlAffineSystem& sys,
                               const EnvOptions& options, int episodes, std::uint64_t seed,
                               const DisturbanceModel& dist) {
  if (episodes < 1) throw ContractError("evaluate_episodes: need at least one episode");
  EnvOptions opts = options;
  opts.stochastic = false;
  VecEnv env(sys, opts, episodes, seed);
  const RolloutBatch batch = env.collect(stack, dist, opts.episode_length);
  EpisodeStats st;
  st.episodes = episodes;
  double reward_sum = 0.0;
  long reward_steps = 0;
  for (int e = 0; e < episodes; ++e) {
    double ret = 0.0;
    for (int t = 0; t < batch.horizon; ++t) {
      const RolloutStep& s = batch.at(t, e);
      ret += s.reward;
      reward_sum += s.reward;
      ++reward_steps;
      if (s.done) {
        if (s.failed) ++st.failures;
        break;
      }
    }
    st.mean_return += ret / episodes;
  }
  st.failure_rate = static_cast<double>(st.failures) / episodes;
  st.mean_step_reward = reward_steps ? reward_sum / static_cast<double>(reward_steps) : 0.0;
  return st;
}

}  // namespace cppo
