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

#ifndef CPPO_TOOLS_CONFIG_HPP_
#define CPPO_TOOLS_CONFIG_HPP_

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cppo/certify.hpp"
#include "cppo/dynamics.hpp"
#include "cppo/trainer.hpp"

namespace cppo::tools {

struct SystemConfig {
  std::string name;
  ObservationKind observation = ObservationKind::kIdentity;
  PendulumParams pendulum;
  CartPoleParams cartpole;
  PointMassParams point_mass;
  // Linear systems only.
  Matrix a;
  Matrix b;
  std::vector<int> pose;
  std::vector<int> velocity;
  // Overrides of the per-system defaults.
  std::optional<Box> region;
  std::optional<double> disturbance_bound;
  std::optional<Vector> torque_limit;
};

struct CertifyConfig {
  int samples = 10000;
  double boundary_fraction = 0.2;
  double safety = 1.1;
  bool dump_samples = false;
  bool iss = false;  // attach an ISS run to the report
};

struct PerturbConfig {
  std::vector<double> magnitudes;  // empty: 0.2, 0.4, 0.6, 0.8 of dbar
  DisturbanceKind kind = DisturbanceKind::kSinusoid;
  double frequency = 0.5;
  int trajectories_per_magnitude = 25;
  int horizon_steps = 1000;
  double reset_fraction = 0.2;
  double slack = 1.05;
  int residual_stride = 1;
  int decay_pairs = 10;
  double decay_offset = 0.3;
};

struct EvaluateConfig {
  int episodes = 100;
  double reset_fraction = 0.2;
  int violation_samples = 2000;
};

struct Seeds {
  std::uint64_t certify = 11;
  std::uint64_t perturb = 7;
  std::uint64_t evaluate = 1234;
};

struct ExperimentConfig {
  SystemConfig system;
  TrainConfig train;
  CertifyConfig certify;
  PerturbConfig perturb;
  EvaluateConfig evaluate;
  Seeds seeds;
  std::string output_dir;
};

// Strict parse: unknown keys, wrong types and missing required keys throw
// ConfigError naming the key path.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::unique_ptr<ControlAffineSystem> build_system(const SystemConfig& cfg);

// Output directory after applying the CPPO_OUTPUT_DIR override.
std::string resolve_output_dir(const ExperimentConfig& cfg);

std::vector<double> perturb_magnitudes(const PerturbConfig& cfg, double dbar);

}  // namespace cppo::tools

#endif  // CPPO_TOOLS_CONFIG_HPP_
