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

#ifndef CPPO_TRAINER_HPP_
#define CPPO_TRAINER_HPP_

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cppo/checkpoint.hpp"
#include "cppo/dynamics.hpp"
#include "cppo/metric.hpp"
#include "cppo/ppo.hpp"
#include "cppo/variational.hpp"

namespace cppo {

struct MetricSpec {
  std::vector<int> hidden = {32, 32};
  Activation activation = Activation::kTanh;
  double budget = 1.5;  // per layer
  double m_min = 0.1;
  double m_max = 10.0;
  // Fixed M = I instead of a learned field (ablation).
  bool identity = false;
  std::uint64_t seed = 3;
};

struct TrainConfig {
  // Contraction terms.
  double alpha = 0.5;
  double eps_margin = 0.05;
  double w_contr = 0.01;
  double w_pd = 0.1;
  int contraction_stride = 4;   // every k-th rollout step enters the hinge loss
  bool shape_policy = true;     // contraction gradient also reaches the policy
  int uniform_contraction_samples = 0;  // extra samples drawn uniformly from K per iteration

  // PPO.
  double lr = 1e-3;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 1.0;   // per network; 0 disables
  double log_std_min = -4.0;
  double log_std_max = 0.5;
  int rollout_length = 24;
  int epochs = 5;
  int minibatches = 4;
  int n_envs = 16;
  int iterations = 2000;

  PolicyStackSpec policy;
  MetricSpec metric;
  EnvOptions env;
  std::uint64_t seed = 0;
  bool record_wallclock = false;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// L_total = L_ppo + w_contr L_contr + w_pd L_pd. Throws DivergenceError naming
// the first non-finite component.
double total_loss(double l_ppo, double l_contr, double l_pd, double w_contr, double w_pd);

struct ContractionLossResult {
  double loss = 0.0;
  bool skipped = false;          // V below the floor; no loss, no gradient
  double v = 0.0;
  double v_dot = 0.0;
  double ratio = 0.0;            // (Vdot + alpha V) / V when not skipped
  MlpGradients metric_grad;      // filled when requested and the hinge is active
  MlpGradients policy_grad;
};

// ReLU((Vdot + alpha V) / V + eps) at (x, x_d) under the deterministic
// deployed policy, optionally with parameter gradients.
ContractionLossResult contraction_loss(const MetricField& field, const PolicyStack& stack,
                                       const ControlAffineSystem& sys, const Vector& x,
                                       const Vector& x_d, double alpha, double eps_margin,
                                       bool want_grads = false);

// Bias-corrected Adam over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Vector& params, const Vector& grad);
  long steps() const { return t_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Vector m_, v_;
};

struct TrainState {
  PolicyStack stack;
  MetricField field;
};

TrainState make_initial_state(const ControlAffineSystem& sys, const TrainConfig& config);
Checkpoint checkpoint_of(const TrainState& state);
// Rebuilds gains, reference and limits from the config and the nets from ckpt.
TrainState state_from_checkpoint(const ControlAffineSystem& sys, const TrainConfig& config,
                                 const Checkpoint& ckpt);

struct MetricsRow {
  int iter = 0;
  double mean_reward = 0.0;
  double violation_rate = 0.0;
  double l_ppo = 0.0;
  double l_contr = 0.0;
  double l_pd = 0.0;
  double lipschitz_pi = 0.0;
  double lipschitz_m = 0.0;
  double wallclock_s = 0.0;
  int contraction_samples = 0;
  int skipped_samples = 0;
};

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRow& row);

struct TrainResult {
  TrainState state;        // last good parameters
  Checkpoint checkpoint;   // same, serialized form
  std::vector<MetricsRow> log;
  bool diverged = false;
  std::string divergence_component;
  long total_skipped = 0;
};

using IterationCallback = std::function<void(const MetricsRow&, const TrainState&)>;

TrainResult train(const ControlAffineSystem& sys, const TrainConfig& config,
                  const IterationCallback& on_iteration = {});
TrainResult train(const ControlAffineSystem& sys, const TrainConfig& config, TrainState state,
                  const IterationCallback& on_iteration = {});

// 2 sqrt(n) sup ||Theta||_2 L_theta over the given states: bounds the
// Frobenius norm of the metric gradient.
double metric_lipschitz_bound(const MetricField& field, const std::vector<Vector>& states);

struct ViolationStats {
  int samples = 0;
  int evaluated = 0;
  int violations = 0;
  int skipped = 0;
  double rate = 0.0;  // violations / evaluated
};

// Hinge violations at n states drawn uniformly from K, with x_d from the mean
// policy at each state.
ViolationStats fresh_violation_rate(const MetricField& field, const PolicyStack& stack,
                                    const ControlAffineSystem& sys, double alpha,
                                    double eps_margin, int n, std::uint64_t seed);

struct EpisodeStats {
  int episodes = 0;
  int failures = 0;
  double failure_rate = 0.0;
  double mean_return = 0.0;
  double mean_step_reward = 0.0;
};

// Deterministic-policy episodes of options.episode_length steps each; an
// episode fails when the position error exceeds options.r_circle.
EpisodeStats evaluate_episodes(const PolicyStack& stack, const ControlAffineSystem& sys,
                               const EnvOptions& options, int episodes, std::uint64_t seed,
                               const DisturbanceModel& dist = {});

}  // namespace cppo

#endif  // CPPO_TRAINER_HPP_
