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

#include "cppo/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "cppo/errors.hpp"

namespace cppo {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

bool squashed(double a) { return std::isfinite(a); }

}  // namespace

// ---------------------------------------------------------------------------
// PolicyStack

void PolicyStack::validate() const {
  const Eigen::Index m = q_ref.size();
  if (policy_net.output_dim() != m || log_std.size() != m || kp.size() != m ||
      kd.size() != m) {
    throw ContractError("PolicyStack: action dimensions disagree");
  }
  if (value_net.output_dim() != 1 || value_net.input_dim() != policy_net.input_dim()) {
    throw ContractError("PolicyStack: value net must map the observation to a scalar");
  }
  if ((kp.array() < 0.0).any() || (kd.array() < 0.0).any()) {
    throw ContractError("PolicyStack: PD gains must be nonnegative");
  }
  if (!(action_limit > 0.0)) throw ContractError("PolicyStack: action limit must be positive");
  if (decimation < 1) throw ContractError("PolicyStack: decimation must be >= 1");
}

Vector PolicyStack::mean_offset(const Vector& y) const {
  const Vector z = policy_net.evaluate(y);
  if (!squashed(action_limit)) return z;
  return action_limit * (z.array() / action_limit).tanh().matrix();
}

void PolicyStack::mean_offset_tangent(const Vector& y, const Vector& dy, Vector& offset,
                                      Vector& offset_tangent) const {
  TangentForwardResult r = policy_net.forward_tangent(y, dy);
  if (!squashed(action_limit)) {
    offset = r.output;
    offset_tangent = r.output_tangent;
    return;
  }
  const Eigen::ArrayXd th = (r.output.array() / action_limit).tanh();
  offset = action_limit * th.matrix();
  offset_tangent = ((1.0 - th.square()) * r.output_tangent.array()).matrix();
}

Matrix PolicyStack::mean_offset_jacobian(const Vector& y) const {
  Matrix j = policy_net.input_jacobian(y);
  if (!squashed(action_limit)) return j;
  const Eigen::ArrayXd th = (policy_net.evaluate(y).array() / action_limit).tanh();
  return (1.0 - th.square()).matrix().asDiagonal() * j;
}

double PolicyStack::deployed_lipschitz_bound() const {
  const double kp_norm = kp.size() ? kp.cwiseAbs().maxCoeff() : 0.0;
  const double kd_norm = kd.size() ? kd.cwiseAbs().maxCoeff() : 0.0;
  return kp_norm * policy_net.lipschitz_bound() + kp_norm + kd_norm;
}

PolicyStack make_policy_stack(const ControlAffineSystem& sys, const PolicyStackSpec& spec) {
  const int p = sys.obs_dim();
  const int m = static_cast<int>(sys.pose_indices().size());
  if (m != sys.input_dim()) {
    throw ConfigError("make_policy_stack: PD layer needs one actuated pose per input");
  }
  PolicyStack s;
  MlpSpec pol;
  pol.sizes.push_back(p);
  pol.sizes.insert(pol.sizes.end(), spec.policy_hidden.begin(), spec.policy_hidden.end());
  pol.sizes.push_back(m);
  pol.hidden_activation = spec.policy_activation;
  pol.budgets = {spec.policy_budget};
  pol.seed = derive_seed(spec.seed, 1);
  s.policy_net = LipschitzMlp(pol);
  // Small last layer: the initial policy stays close to the bare PD law.
  {
    DenseLayer& last = s.policy_net.mutable_layer(s.policy_net.num_layers() - 1);
    last.weight *= 0.01;
    last.bias.setZero();
  }
  s.policy_net.spectral_normalize();

  MlpSpec val;
  val.sizes.push_back(p);
  val.sizes.insert(val.sizes.end(), spec.value_hidden.begin(), spec.value_hidden.end());
  val.sizes.push_back(1);
  val.hidden_activation = spec.value_activation;
  val.budgets = {spec.value_budget};
  val.seed = derive_seed(spec.seed, 2);
  s.value_net = LipschitzMlp(val);

  s.log_std = Vector::Constant(m, spec.init_log_std);
  const Vector ref = sys.reference_state();
  const auto pose = sys.pose_indices();
  s.q_ref.resize(m);
  for (int j = 0; j < m; ++j) s.q_ref(j) = ref(pose[static_cast<size_t>(j)]);
  s.kp = Vector::Constant(m, spec.kp);
  s.kd = Vector::Constant(m, spec.kd);
  s.action_limit = spec.action_limit;
  s.decimation = spec.decimation;
  s.validate();
  return s;
}

double gaussian_log_prob(const Vector& sample, const Vector& mean, const Vector& log_std) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < sample.size(); ++i) {
    const double z = (sample(i) - mean(i)) * std::exp(-log_std(i));
    lp += -0.5 * z * z - log_std(i) - kLogSqrt2Pi;
  }
  return lp;
}

PolicyAction policy_action(const PolicyStack& stack, const Vector& y, bool stochastic,
                           Rng& rng) {
  PolicyAction a;
  const Vector mean = stack.mean_offset(y);
  if (stochastic) {
    a.raw = mean + (stack.log_std.array().exp() * standard_normal(rng, mean.size()).array())
                       .matrix();
  } else {
    a.raw = mean;
  }
  a.log_prob = gaussian_log_prob(a.raw, mean, stack.log_std);
  const double lim = stack.action_limit;
  a.delta_q = squashed(lim) ? a.raw.cwiseMax(-lim).cwiseMin(lim) : a.raw;
  a.q_des = stack.q_ref + a.delta_q;
  return a;
}

Vector pd_torque(const Vector& q_des, const Vector& qdot_des, const Vector& q,
                 const Vector& qdot, const Vector& kp, const Vector& kd) {
  const Eigen::Index m = q.size();
  if (q_des.size() != m || qdot_des.size() != m || qdot.size() != m || kp.size() != m ||
      kd.size() != m) {
    throw ContractError("pd_torque: dimension mismatch");
  }
  return (kp.array() * (q_des - q).array() + kd.array() * (qdot_des - qdot).array()).matrix();
}

Vector saturate(const Vector& u, const Vector& limit) {
  return u.cwiseMax(-limit).cwiseMin(limit);
}

StateVector build_desired_state(const ControlAffineSystem& sys, const Vector& q_des) {
  StateVector xd = sys.reference_state();
  const auto pose = sys.pose_indices();
  if (static_cast<size_t>(q_des.size()) != pose.size()) {
    throw ContractError("build_desired_state: q_des length differs from the pose count");
  }
  for (size_t j = 0; j < pose.size(); ++j) xd(pose[j]) = q_des(static_cast<Eigen::Index>(j));
  for (int v : sys.velocity_indices()) xd(v) = 0.0;
  return xd;
}

// ---------------------------------------------------------------------------
// Deployed map

Vector PdPolicyController::control(const Vector& y) const {
  const PdCoordinates pd = sys_.pd_coordinates(y);
  const Vector q_des = stack_.q_ref + stack_.mean_offset(y);
  const Vector u = pd_torque(q_des, Vector::Zero(q_des.size()), pd.q, pd.qdot, stack_.kp,
                             stack_.kd);
  return saturate(u, sys_.torque_limit());
}

Matrix PdPolicyController::control_jacobian(const Vector& y) const {
  const PdCoordinates pd = sys_.pd_coordinates(y);
  const Vector q_des = stack_.q_ref + stack_.mean_offset(y);
  const Vector u = pd_torque(q_des, Vector::Zero(q_des.size()), pd.q, pd.qdot, stack_.kp,
                             stack_.kd);
  Matrix j = stack_.kp.asDiagonal() * (stack_.mean_offset_jacobian(y) - pd.dq_dy);
  j -= stack_.kd.asDiagonal() * pd.dqdot_dy;
  const Vector& lim = sys_.torque_limit();
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (std::abs(u(i)) > lim(i)) j.row(i).setZero();
  }
  return j;
}

DeployedJacobian deployed_jacobian(const PolicyStack& stack, const ControlAffineSystem& sys,
                                   const Vector& x) {
  const PdPolicyController ctrl(stack, sys);
  const Observation obs = observe(sys, x);
  DeployedJacobian d;
  d.u = ctrl.control(obs.y);
  d.du_dy = ctrl.control_jacobian(obs.y);
  d.du_dx = d.du_dy * obs.jacobian;
  return d;
}

// ---------------------------------------------------------------------------
// Rollouts

double RolloutBatch::mean_reward() const {
  if (steps.empty()) return 0.0;
  double s = 0.0;
  for (const auto& st : steps) s += st.reward;
  return s / static_cast<double>(steps.size());
}

void RolloutBatch::write_csv(std::ostream& os) const {
  if (steps.empty()) {
    os << "env,t,r\n";
    return;
  }
  const auto& s0 = steps.front();
  os << "env,t";
  for (Eigen::Index i = 0; i < s0.x.size(); ++i) os << ",x" << i;
  for (Eigen::Index i = 0; i < s0.y.size(); ++i) os << ",y" << i;
  for (Eigen::Index i = 0; i < s0.u.size(); ++i) os << ",u" << i;
  os << ",r\n";
  for (int e = 0; e < n_envs; ++e) {
    for (int t = 0; t < horizon; ++t) {
      const RolloutStep& s = at(t, e);
      os << s.env << ',' << format_double(s.t);
      for (Eigen::Index i = 0; i < s.x.size(); ++i) os << ',' << format_double(s.x(i));
      for (Eigen::Index i = 0; i < s.y.size(); ++i) os << ',' << format_double(s.y(i));
      for (Eigen::Index i = 0; i < s.u.size(); ++i) os << ',' << format_double(s.u(i));
      os << ',' << format_double(s.reward) << '\n';
    }
  }
}

double position_error(const ControlAffineSystem& sys, const Vector& x) {
  const Vector ref = sys.reference_state();
  double s = 0.0;
  for (int i : sys.pose_indices()) s += (x(i) - ref(i)) * (x(i) - ref(i));
  return std::sqrt(s);
}

VecEnv::VecEnv(const ControlAffineSystem& sys, EnvOptions options, int n_envs,
               std::uint64_t seed)
    : sys_(sys), options_(options) {
  if (n_envs < 1) throw ContractError("VecEnv: need at least one environment");
  if (!(options_.dt > 0.0)) throw ConfigError("VecEnv: dt must be positive");
  if (options_.episode_length < 1) throw ConfigError("VecEnv: episode_length must be >= 1");
  if (options_.reset_fraction < 0.0 || options_.reset_fraction > 1.0) {
    throw ConfigError("VecEnv: reset_fraction must lie in [0, 1]");
  }
  envs_.resize(static_cast<size_t>(n_envs));
  for (int e = 0; e < n_envs; ++e) {
    Env& env = envs_[static_cast<size_t>(e)];
    env.rng.seed(derive_seed(seed, static_cast<std::uint64_t>(e)));
    reset(env);
  }
}

void VecEnv::reset(Env& env) {
  const Box box = sys_.region().shrink(options_.reset_fraction);
  env.x = uniform_in(env.rng, box.lo, box.hi);
  env.t = 0.0;
  env.steps = 0;
  env.episode_return = 0.0;
}

RolloutBatch VecEnv::collect(const PolicyStack& stack, const DisturbanceModel& dist,
                             int horizon) {
  if (horizon < 1) throw ContractError("collect_rollouts: horizon must be >= 1");
  const int n = n_envs();
  RolloutBatch batch;
  batch.horizon = horizon;
  batch.n_envs = n;
  batch.steps.resize(static_cast<size_t>(horizon) * static_cast<size_t>(n));
  batch.bootstrap_values = Vector::Zero(n);
  finished_returns_.clear();
  finished_failures_ = 0;
  const Eigen::Index m = stack.action_dim();
  const Vector qdot_zero = Vector::Zero(m);

  for (int e = 0; e < n; ++e) {
    Env& env = envs_[static_cast<size_t>(e)];
    for (int t = 0; t < horizon; ++t) {
      RolloutStep& s = batch.at(t, e);
      s.env = e;
      s.t = env.t;
      s.x = env.x;
      s.y = sys_.observe(env.x);
      if (options_.obs_noise > 0.0) {
        const Vector eta = Vector::Constant(s.y.size(), options_.obs_noise);
        s.y += uniform_in(env.rng, -eta, eta);
      }
      const PolicyAction a = policy_action(stack, s.y, options_.stochastic, env.rng);
      s.action = a.delta_q;
      s.raw_action = a.raw;
      s.log_prob = a.log_prob;
      s.value = stack.value_net.evaluate(s.y)(0);
      s.x_d = build_desired_state(sys_, a.q_des);

      double u_sq = 0.0;
      bool failed = false;
      Vector u = Vector::Zero(m);
      for (int k = 0; k < stack.decimation; ++k) {
        const PdCoordinates pd = sys_.pd_coordinates(sys_.observe(env.x));
        u = saturate(pd_torque(a.q_des, qdot_zero, pd.q, pd.qdot, stack.kp, stack.kd),
                     sys_.torque_limit());
        u_sq += u.squaredNorm();
        try {
          env.x = step_rk4(sys_, env.x, u, options_.dt, dist, env.t);
        } catch (const IntegrationError&) {
          failed = true;
        }
        env.t += options_.dt;
        if (failed || position_error(sys_, env.x) > options_.r_circle) {
          failed = true;
          break;
        }
      }
      s.u = u;
      s.failed = failed;
      if (failed) {
        s.reward = options_.failure_reward;
      } else {
        s.reward = 1.0 - position_error(sys_, env.x) / options_.r_circle -
                   options_.torque_penalty * u_sq / stack.decimation;
      }
      env.steps += 1;
      env.episode_return += s.reward;
      s.done = failed || env.steps >= options_.episode_length;
      if (s.done) {
        s.terminal_value = failed ? 0.0 : stack.value_net.evaluate(sys_.observe(env.x))(0);
        finished_returns_.push_back(env.episode_return);
        if (failed) ++finished_failures_;
        reset(env);
      }
    }
    batch.bootstrap_values(e) = stack.value_net.evaluate(sys_.observe(env.x))(0);
  }
  return batch;
}

RolloutBatch collect_rollouts(const PolicyStack& stack, const ControlAffineSystem& sys,
                              const DisturbanceModel& dist, int horizon, int n_envs, Rng& rng,
                              const EnvOptions& options) {
  VecEnv env(sys, options, n_envs, rng());
  return env.collect(stack, dist, horizon);
}

// ---------------------------------------------------------------------------
// Advantages and loss

void compute_gae(RolloutBatch& batch, double gamma, double lambda, bool normalize) {
  if (batch.steps.empty()) throw InputError("compute_gae: empty batch");
  const int T = batch.horizon, E = batch.n_envs;
  if (static_cast<size_t>(T) * static_cast<size_t>(E) != batch.steps.size() ||
      batch.bootstrap_values.size() != E) {
    throw ContractError("compute_gae: batch layout is inconsistent");
  }
  batch.advantages = Vector::Zero(static_cast<Eigen::Index>(batch.steps.size()));
  batch.returns = batch.advantages;
  for (int e = 0; e < E; ++e) {
    double carry = 0.0;
    for (int t = T - 1; t >= 0; --t) {
      const RolloutStep& s = batch.at(t, e);
      double next_value;
      if (s.done) {
        next_value = s.terminal_value;
      } else if (t == T - 1) {
        next_value = batch.bootstrap_values(e);
      } else {
        next_value = batch.at(t + 1, e).value;
      }
      const double delta = s.reward + gamma * next_value - s.value;
      const double keep = s.done ? 0.0 : 1.0;
      carry = delta + gamma * lambda * keep * carry;
      const auto i = static_cast<Eigen::Index>(t * E + e);
      batch.advantages(i) = carry;
      batch.returns(i) = carry + s.value;
    }
  }
  if (normalize) {
    const double mean = batch.advantages.mean();
    const double var = (batch.advantages.array() - mean).square().mean();
    batch.advantages = ((batch.advantages.array() - mean) / (std::sqrt(var) + 1e-8)).matrix();
  }
}

PpoLossResult ppo_loss(const PolicyStack& stack, const RolloutBatch& batch,
                       const std::vector<size_t>& indices, const PpoLossOptions& options,
                       bool want_grads) {
  if (batch.advantages.size() != static_cast<Eigen::Index>(batch.steps.size())) {
    throw ContractError("ppo_loss: advantages not computed");
  }
  std::vector<size_t> all;
  const std::vector<size_t>* idx = &indices;
  if (indices.empty()) {
    all.resize(batch.steps.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    idx = &all;
  }
  const double inv_n = 1.0 / static_cast<double>(idx->size());
  const double a = stack.action_limit;
  const Eigen::Index m = stack.action_dim();
  const Vector inv_var = (-2.0 * stack.log_std.array()).exp().matrix();

  PpoLossResult r;
  if (want_grads) {
    r.policy_grad = stack.policy_net.zero_gradients();
    r.value_grad = stack.value_net.zero_gradients();
    r.log_std_grad = Vector::Zero(m);
  }
  int clipped = 0;
  for (size_t i : *idx) {
    const RolloutStep& s = batch.steps[i];
    const double adv = batch.advantages(static_cast<Eigen::Index>(i));
    const double ret = batch.returns(static_cast<Eigen::Index>(i));

    ForwardResult pf = stack.policy_net.forward(s.y);
    Vector mean = pf.output;
    Eigen::ArrayXd dmean_dz = Eigen::ArrayXd::Ones(m);
    if (squashed(a)) {
      const Eigen::ArrayXd th = (pf.output.array() / a).tanh();
      mean = a * th.matrix();
      dmean_dz = 1.0 - th.square();
    }
    const double logp = gaussian_log_prob(s.raw_action, mean, stack.log_std);
    const double ratio = std::exp(logp - s.log_prob);
    const double lo = 1.0 - options.clip_ratio, hi = 1.0 + options.clip_ratio;
    const double unclipped = ratio * adv;
    const double clipped_obj = std::clamp(ratio, lo, hi) * adv;
    const bool use_unclipped = unclipped <= clipped_obj;
    r.surrogate -= std::min(unclipped, clipped_obj) * inv_n;
    if (ratio < lo || ratio > hi) ++clipped;
    r.approx_kl += (s.log_prob - logp) * inv_n;

    ForwardResult vf = stack.value_net.forward(s.y);
    const double verr = vf.output(0) - ret;
    r.value_loss += verr * verr * inv_n;

    if (!want_grads) continue;
    // d surrogate / d logp for this sample.
    const double g_logp = use_unclipped ? -ratio * adv * inv_n : 0.0;
    const Vector diff = s.raw_action - mean;
    const Vector g_mean = g_logp * (diff.array() * inv_var.array()).matrix();
    const Vector g_z = (g_mean.array() * dmean_dz).matrix();
    r.log_std_grad +=
        g_logp * ((diff.array().square() * inv_var.array()) - 1.0).matrix();
    r.policy_grad += stack.policy_net.backward(pf.tape, g_z).grads;
    Vector g_v(1);
    g_v(0) = options.value_coef * 2.0 * verr * inv_n;
    r.value_grad += stack.value_net.backward(vf.tape, g_v).grads;
  }
  r.entropy = (stack.log_std.array() + 0.5 + kLogSqrt2Pi).sum();
  r.clip_fraction = clipped * inv_n;
  r.loss = r.surrogate + options.value_coef * r.value_loss - options.entropy_coef * r.entropy;
  if (want_grads) r.log_std_grad -= options.entropy_coef * Vector::Ones(m);
  return r;
}

}  // namespace cppo
