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

#ifndef CPPO_PPO_HPP_
#define CPPO_PPO_HPP_

#include <iosfwd>
#include <limits>
#include <vector>

#include "cppo/controller.hpp"
#include "cppo/dynamics.hpp"
#include "cppo/net.hpp"
#include "cppo/random.hpp"
#include "cppo/types.hpp"

namespace cppo {

// Policy, critic and the PD layer underneath them. The policy net outputs a
// pre-squash z; the mean pose offset is a * tanh(z / a), so it never leaves
// [-a, a].
struct PolicyStack {
  LipschitzMlp policy_net;  // y -> z, m outputs
  LipschitzMlp value_net;   // y -> scalar
  Vector log_std;           // m
  Vector q_ref;             // task reference pose q_d
  Vector kp;                // diagonal PD gains
  Vector kd;
  double action_limit = 0.5;  // a_max; +inf disables the squash
  int decimation = 4;         // PD ticks per policy action

  int action_dim() const { return static_cast<int>(q_ref.size()); }
  // Throws ContractError on inconsistent dimensions or negative gains.
  void validate() const;

  Vector mean_offset(const Vector& y) const;
  // Mean offset plus its directional derivative along dy.
  void mean_offset_tangent(const Vector& y, const Vector& dy, Vector& offset,
                           Vector& offset_tangent) const;
  Matrix mean_offset_jacobian(const Vector& y) const;  // m x p

  // ||K_p|| L_dq + ||K_p|| + ||K_d||
  double deployed_lipschitz_bound() const;
};

struct PolicyStackSpec {
  std::vector<int> policy_hidden = {64, 64};
  std::vector<int> value_hidden = {64, 64};
  Activation policy_activation = Activation::kTanh;
  Activation value_activation = Activation::kTanh;
  double policy_budget = 1.0;
  double value_budget = std::numeric_limits<double>::infinity();
  double init_log_std = -1.6;
  double kp = 30.0;
  double kd = 0.8;
  double action_limit = 0.5;
  int decimation = 4;
  std::uint64_t seed = 1;
};

// Shapes come from the system: p observations in, m actions out. q_ref is the
// pose part of the system's reference state.
PolicyStack make_policy_stack(const ControlAffineSystem& sys, const PolicyStackSpec& spec);

// Summed diagonal-Gaussian log density.
double gaussian_log_prob(const Vector& sample, const Vector& mean, const Vector& log_std);

struct PolicyAction {
  Vector delta_q;  // executed offset, clipped to [-a, a]
  Vector q_des;    // q_ref + delta_q
  Vector raw;      // pre-clip sample (the mean when deterministic)
  double log_prob = 0.0;  // of raw
};

PolicyAction policy_action(const PolicyStack& stack, const Vector& y, bool stochastic,
                           Rng& rng);

// K_p (q_des - q) + K_d (qdot_des - qdot).
Vector pd_torque(const Vector& q_des, const Vector& qdot_des, const Vector& q,
                 const Vector& qdot, const Vector& kp, const Vector& kd);
// Elementwise clip to [-limit, limit].
Vector saturate(const Vector& u, const Vector& limit);

// x_d: the system reference state with the pose entries replaced by q_des and
// the velocity entries set to zero.
StateVector build_desired_state(const ControlAffineSystem& sys, const Vector& q_des);

// The deterministic deployed map y -> u = sat(K_p (q_ref + dq(y) - q(y)) - K_d qdot(y)).
class PdPolicyController final : public Controller {
 public:
  PdPolicyController(const PolicyStack& stack, const ControlAffineSystem& sys)
      : stack_(stack), sys_(sys) {}
  Vector control(const Vector& y) const override;
  Matrix control_jacobian(const Vector& y) const override;
  double lipschitz_bound() const override { return stack_.deployed_lipschitz_bound(); }

 private:
  const PolicyStack& stack_;
  const ControlAffineSystem& sys_;
};

struct DeployedJacobian {
  Vector u;
  Matrix du_dy;  // m x p
  Matrix du_dx;  // m x n
};

DeployedJacobian deployed_jacobian(const PolicyStack& stack, const ControlAffineSystem& sys,
                                   const Vector& x);

struct RolloutStep {
  int env = 0;
  double t = 0.0;
  Vector x;        // privileged state at the decision
  Vector y;        // observation fed to the policy
  Vector x_d;
  Vector action;   // executed delta_q
  Vector raw_action;
  Vector u;        // torque of the last PD tick
  double log_prob = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
  bool failed = false;
  // Critic value used as the bootstrap when an episode is cut by the time
  // limit; zero on failures.
  double terminal_value = 0.0;
};

// Steps are stored time-major: index = t * n_envs + env.
struct RolloutBatch {
  int horizon = 0;
  int n_envs = 0;
  std::vector<RolloutStep> steps;
  Vector bootstrap_values;  // critic at the state after the last step, per env
  Vector advantages;
  Vector returns;

  size_t size() const { return steps.size(); }
  RolloutStep& at(int t, int env) { return steps[static_cast<size_t>(t * n_envs + env)]; }
  const RolloutStep& at(int t, int env) const {
    return steps[static_cast<size_t>(t * n_envs + env)];
  }
  double mean_reward() const;
  // Header: env,t,x0..,y0..,u0..,r
  void write_csv(std::ostream& os) const;
};

struct EnvOptions {
  double dt = 0.005;
  int episode_length = 250;         // policy steps before a time-limit reset
  double reset_fraction = 0.5;      // resets uniform on the central box of K
  double r_circle = 0.8;
  double failure_reward = -10.0;
  double torque_penalty = 1e-3;
  double obs_noise = 0.0;           // uniform in [-eta, eta] on the policy input
  bool stochastic = true;           // sample actions; false runs the mean policy
};

// Persistent parallel environments. Each env owns an RNG stream derived from
// (seed, env index), so results do not depend on evaluation order.
class VecEnv {
 public:
  VecEnv(const ControlAffineSystem& sys, EnvOptions options, int n_envs, std::uint64_t seed);

  RolloutBatch collect(const PolicyStack& stack, const DisturbanceModel& dist, int horizon);

  int n_envs() const { return static_cast<int>(envs_.size()); }
  const Vector& state(int env) const { return envs_[static_cast<size_t>(env)].x; }
  // Returns of episodes that finished during the last collect.
  const std::vector<double>& finished_returns() const { return finished_returns_; }
  int finished_failures() const { return finished_failures_; }

 private:
  struct Env {
    Vector x;
    double t = 0.0;
    int steps = 0;
    double episode_return = 0.0;
    Rng rng;
  };
  void reset(Env& env);

  const ControlAffineSystem& sys_;
  EnvOptions options_;
  std::vector<Env> envs_;
  std::vector<double> finished_returns_;
  int finished_failures_ = 0;
};

// One-shot collection from fresh environments seeded from rng.
RolloutBatch collect_rollouts(const PolicyStack& stack, const ControlAffineSystem& sys,
                              const DisturbanceModel& dist, int horizon, int n_envs, Rng& rng,
                              const EnvOptions& options = {});

// Per-step reward and the failure test shared by rollouts and evaluation.
double position_error(const ControlAffineSystem& sys, const Vector& x);

// Fills advantages and returns. Throws InputError on an empty batch.
void compute_gae(RolloutBatch& batch, double gamma, double lambda, bool normalize = true);

struct PpoLossOptions {
  double clip_ratio = 0.2;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
};

struct PpoLossResult {
  double loss = 0.0;
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  MlpGradients policy_grad;
  MlpGradients value_grad;
  Vector log_std_grad;
};

// Clipped surrogate + value_coef * value MSE - entropy_coef * entropy, averaged
// over the selected steps (all steps when indices is empty).
PpoLossResult ppo_loss(const PolicyStack& stack, const RolloutBatch& batch,
                       const std::vector<size_t>& indices, const PpoLossOptions& options,
                       bool want_grads = true);

}  // namespace cppo

#endif  // CPPO_PPO_HPP_
