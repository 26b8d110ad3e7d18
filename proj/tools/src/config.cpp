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

#include "config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cppo/errors.hpp"

namespace cppo::tools {

namespace {

using Json = nlohmann::json;

// Typed, path-aware access to one JSON object. Every key read is recorded so
// finish() can reject the rest.
class Reader {
 public:
  Reader(const Json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_ && j_->contains(key); }

  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    if (!has(key)) return;
    T v{};
    convert(j_->at(key), key, v);
    out = std::move(v);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    convert(j_->at(key), key, out);
  }

  template <class T>
  void require(const std::string& key, T& out) {
    if (!has(key)) throw ConfigError("missing required key '" + full(key) + "'");
    get(key, out);
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(has(key) ? &j_->at(key) : nullptr, full(key));
  }

  void finish() const {
    if (!j_) return;
    for (const auto& item : j_->items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key '" + full(item.key()) + "'");
    }
  }

  std::string full(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  void convert(const Json& v, const std::string& key, double& out) const {
    if (!v.is_number()) throw ConfigError(full(key) + ": expected a number");
    out = v.get<double>();
  }
  void convert(const Json& v, const std::string& key, int& out) const {
    if (!v.is_number_integer()) throw ConfigError(full(key) + ": expected an integer");
    out = v.get<int>();
  }
  void convert(const Json& v, const std::string& key, std::uint64_t& out) const {
    if (!v.is_number_unsigned()) {
      throw ConfigError(full(key) + ": expected a nonnegative integer");
    }
    out = v.get<std::uint64_t>();
  }
  void convert(const Json& v, const std::string& key, bool& out) const {
    if (!v.is_boolean()) throw ConfigError(full(key) + ": expected true or false");
    out = v.get<bool>();
  }
  void convert(const Json& v, const std::string& key, std::string& out) const {
    if (!v.is_string()) throw ConfigError(full(key) + ": expected a string");
    out = v.get<std::string>();
  }
  void convert(const Json& v, const std::string& key, std::vector<int>& out) const {
    if (!v.is_array()) throw ConfigError(full(key) + ": expected an array of integers");
    out.clear();
    for (const Json& e : v) {
      if (!e.is_number_integer()) throw ConfigError(full(key) + ": expected an array of integers");
      out.push_back(e.get<int>());
    }
  }
  void convert(const Json& v, const std::string& key, std::vector<double>& out) const {
    if (!v.is_array()) throw ConfigError(full(key) + ": expected an array of numbers");
    out.clear();
    for (const Json& e : v) {
      if (!e.is_number()) throw ConfigError(full(key) + ": expected an array of numbers");
      out.push_back(e.get<double>());
    }
  }
  void convert(const Json& v, const std::string& key, Vector& out) const {
    std::vector<double> tmp;
    convert(v, key, tmp);
    out = Eigen::Map<const Vector>(tmp.data(), static_cast<Eigen::Index>(tmp.size()));
  }
  void convert(const Json& v, const std::string& key, Matrix& out) const {
    if (!v.is_array() || v.empty()) throw ConfigError(full(key) + ": expected a list of rows");
    const size_t cols = v.front().is_array() ? v.front().size() : 0;
    out.resize(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
    for (size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_array() || v[i].size() != cols || cols == 0) {
        throw ConfigError(full(key) + ": rows must be nonempty and of equal length");
      }
      for (size_t k = 0; k < cols; ++k) {
        if (!v[i][k].is_number()) throw ConfigError(full(key) + ": entries must be numbers");
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[i][k].get<double>();
      }
    }
  }

  const Json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

Activation read_activation(Reader& r, const std::string& key, Activation dflt) {
  std::string s;
  r.get(key, s);
  if (s.empty()) return dflt;
  try {
    return activation_from_string(s);
  } catch (const Error&) {
    throw ConfigError(r.full(key) + ": unknown activation '" + s + "'");
  }
}

void parse_system(Reader r, SystemConfig& s) {
  r.require("name", s.name);
  std::string obs = "identity";
  r.get("observation", obs);
  if (obs == "identity") {
    s.observation = ObservationKind::kIdentity;
  } else if (obs == "trig") {
    s.observation = ObservationKind::kTrig;
  } else {
    throw ConfigError(r.full("observation") + ": expected 'identity' or 'trig'");
  }
  {
    Reader p = r.child("params");
    if (s.name == "pendulum") {
      p.get("gravity", s.pendulum.gravity);
      p.get("length", s.pendulum.length);
      p.get("mass", s.pendulum.mass);
      p.get("damping", s.pendulum.damping);
    } else if (s.name == "cartpole") {
      p.get("gravity", s.cartpole.gravity);
      p.get("cart_mass", s.cartpole.cart_mass);
      p.get("pole_mass", s.cartpole.pole_mass);
      p.get("pole_length", s.cartpole.pole_length);
      p.get("cart_damping", s.cartpole.cart_damping);
      p.get("pole_damping", s.cartpole.pole_damping);
    } else if (s.name == "point_mass") {
      p.get("mass", s.point_mass.mass);
      p.get("damping", s.point_mass.damping);
    } else if (s.name == "linear") {
      p.require("A", s.a);
      p.require("B", s.b);
      p.require("pose", s.pose);
      p.require("velocity", s.velocity);
    } else {
      throw ConfigError(r.full("name") + ": unknown system '" + s.name + "'");
    }
    p.finish();
  }
  if (r.has("region")) {
    Reader reg = r.child("region");
    Box b;
    reg.require("lo", b.lo);
    reg.require("hi", b.hi);
    reg.finish();
    s.region = b;
  }
  r.child("region");
  r.get("disturbance_bound", s.disturbance_bound);
  r.get("torque_limit", s.torque_limit);
  r.finish();
}

void parse_policy(Reader r, PolicyStackSpec& p) {
  r.get("hidden", p.policy_hidden);
  p.policy_activation = read_activation(r, "activation", p.policy_activation);
  r.get("budget", p.policy_budget);
  r.get("value_hidden", p.value_hidden);
  p.value_activation = read_activation(r, "value_activation", p.value_activation);
  r.get("init_log_std", p.init_log_std);
  r.get("kp", p.kp);
  r.get("kd", p.kd);
  r.get("action_limit", p.action_limit);
  r.get("decimation", p.decimation);
  r.finish();
  if (p.policy_activation != Activation::kTanh && p.policy_activation != Activation::kSoftplus &&
      p.policy_activation != Activation::kElu) {
    throw ConfigError("policy.activation: expected tanh, softplus or elu");
  }
  if (p.kp < 0.0 || p.kd < 0.0) throw ConfigError("policy.kp and policy.kd must be >= 0");
  if (!(p.action_limit > 0.0)) throw ConfigError("policy.action_limit must be positive");
  if (p.decimation < 1) throw ConfigError("policy.decimation must be >= 1");
  if (!(p.policy_budget > 0.0)) throw ConfigError("policy.budget must be positive");
}

void parse_metric(Reader r, MetricSpec& m) {
  r.get("hidden", m.hidden);
  m.activation = read_activation(r, "activation", m.activation);
  r.get("budget", m.budget);
  r.get("m_min", m.m_min);
  r.get("m_max", m.m_max);
  r.get("identity", m.identity);
  r.finish();
  // The metric derivative needs a second derivative through every layer.
  if (m.activation != Activation::kTanh && m.activation != Activation::kSoftplus) {
    throw ConfigError("metric.activation: expected tanh or softplus");
  }
  if (!(m.budget > 0.0)) throw ConfigError("metric.budget must be positive");
}

void parse_train(Reader r, TrainConfig& t) {
  r.get("alpha", t.alpha);
  r.get("eps_margin", t.eps_margin);
  r.get("w_contr", t.w_contr);
  r.get("w_pd", t.w_pd);
  r.get("contraction_stride", t.contraction_stride);
  r.get("shape_policy", t.shape_policy);
  r.get("uniform_contraction_samples", t.uniform_contraction_samples);
  r.get("lr", t.lr);
  r.get("gamma", t.gamma);
  r.get("gae_lambda", t.gae_lambda);
  r.get("clip_ratio", t.clip_ratio);
  r.get("entropy_coef", t.entropy_coef);
  r.get("value_coef", t.value_coef);
  r.get("max_grad_norm", t.max_grad_norm);
  r.get("log_std_min", t.log_std_min);
  r.get("log_std_max", t.log_std_max);
  r.get("rollout_length", t.rollout_length);
  r.get("epochs", t.epochs);
  r.get("minibatches", t.minibatches);
  r.get("n_envs", t.n_envs);
  r.get("iterations", t.iterations);
  r.get("record_wallclock", t.record_wallclock);
  r.finish();
}

void parse_env(Reader r, EnvOptions& e) {
  r.get("dt", e.dt);
  r.get("episode_length", e.episode_length);
  r.get("reset_fraction", e.reset_fraction);
  r.get("r_circle", e.r_circle);
  r.get("failure_reward", e.failure_reward);
  r.get("torque_penalty", e.torque_penalty);
  r.get("obs_noise", e.obs_noise);
  r.finish();
}

void parse_certify(Reader r, CertifyConfig& c) {
  r.get("samples", c.samples);
  r.get("boundary_fraction", c.boundary_fraction);
  r.get("safety", c.safety);
  r.get("dump_samples", c.dump_samples);
  r.get("iss", c.iss);
  r.finish();
  if (c.samples < 1000) throw ConfigError("certify.samples must be >= 1000");
  if (c.safety < 1.0) throw ConfigError("certify.safety must be >= 1");
}

void parse_perturb(Reader r, PerturbConfig& p) {
  r.get("magnitudes", p.magnitudes);
  std::string kind;
  r.get("kind", kind);
  if (!kind.empty()) {
    try {
      p.kind = disturbance_kind_from_string(kind);
    } catch (const Error&) {
      throw ConfigError("perturb.kind: unknown disturbance kind '" + kind + "'");
    }
  }
  r.get("frequency", p.frequency);
  r.get("trajectories_per_magnitude", p.trajectories_per_magnitude);
  r.get("horizon_steps", p.horizon_steps);
  r.get("reset_fraction", p.reset_fraction);
  r.get("slack", p.slack);
  r.get("residual_stride", p.residual_stride);
  r.get("decay_pairs", p.decay_pairs);
  r.get("decay_offset", p.decay_offset);
  r.finish();
  if (p.trajectories_per_magnitude < 1) {
    throw ConfigError("perturb.trajectories_per_magnitude must be >= 1");
  }
  if (p.horizon_steps < 1) throw ConfigError("perturb.horizon_steps must be >= 1");
}

void parse_evaluate(Reader r, EvaluateConfig& e) {
  r.get("episodes", e.episodes);
  r.get("reset_fraction", e.reset_fraction);
  r.get("violation_samples", e.violation_samples);
  r.finish();
  if (e.episodes < 1) throw ConfigError("evaluate.episodes must be >= 1");
  if (e.violation_samples < 1) throw ConfigError("evaluate.violation_samples must be >= 1");
}

void parse_seeds(Reader r, ExperimentConfig& c) {
  r.get("train", c.train.seed);
  r.get("policy", c.train.policy.seed);
  r.get("metric", c.train.metric.seed);
  r.get("certify", c.seeds.certify);
  r.get("perturb", c.seeds.perturb);
  r.get("evaluate", c.seeds.evaluate);
  r.finish();
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  ExperimentConfig c;
  Reader root(&j, "");
  parse_system(root.child("system"), c.system);
  if (!root.has("system")) throw ConfigError("missing required key 'system'");
  parse_policy(root.child("policy"), c.train.policy);
  parse_metric(root.child("metric"), c.train.metric);
  parse_train(root.child("train"), c.train);
  parse_env(root.child("env"), c.train.env);
  parse_certify(root.child("certify"), c.certify);
  parse_perturb(root.child("perturb"), c.perturb);
  parse_evaluate(root.child("evaluate"), c.evaluate);
  parse_seeds(root.child("seeds"), c);
  root.require("output_dir", c.output_dir);
  root.finish();
  c.train.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::unique_ptr<ControlAffineSystem> build_system(const SystemConfig& cfg) {
  std::unique_ptr<ControlAffineSystem> sys;
  if (cfg.name == "pendulum") {
    sys = std::make_unique<Pendulum>(cfg.pendulum);
  } else if (cfg.name == "cartpole") {
    sys = std::make_unique<CartPole>(cfg.cartpole);
  } else if (cfg.name == "point_mass") {
    sys = std::make_unique<PointMass2D>(cfg.point_mass);
  } else if (cfg.name == "linear") {
    sys = std::make_unique<LinearSystem>(cfg.a, cfg.b, cfg.pose, cfg.velocity);
  } else {
    throw ConfigError("system.name: unknown system '" + cfg.name + "'");
  }
  sys->set_observation_kind(cfg.observation);
  if (cfg.region) sys->set_region(*cfg.region);
  if (cfg.disturbance_bound) sys->set_disturbance_bound(*cfg.disturbance_bound);
  if (cfg.torque_limit) sys->set_torque_limit(*cfg.torque_limit);
  return sys;
}

std::string resolve_output_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("CPPO_OUTPUT_DIR"); env && *env) return env;
  return cfg.output_dir;
}

std::vector<double> perturb_magnitudes(const PerturbConfig& cfg, double dbar) {
  if (!cfg.magnitudes.empty()) return cfg.magnitudes;
  return {0.2 * dbar, 0.4 * dbar, 0.6 * dbar, 0.8 * dbar};
}

}  // namespace cppo::tools
