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

#ifndef CPPO_NET_HPP_
#define CPPO_NET_HPP_

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cppo/types.hpp"

namespace cppo {

// Tag values are part of the checkpoint format; do not renumber.
enum class Activation : std::uint8_t {
  kIdentity = 0,
  kTanh = 1,
  kSoftplus = 2,
  kElu = 3,
};

std::string to_string(Activation act);
Activation activation_from_string(const std::string& s);

// Every supported activation is C1 and 1-Lipschitz.
inline double activation_lipschitz(Activation) { return 1.0; }

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kIdentity;
  // Spectral budget; +inf leaves the layer unconstrained.
  double budget = std::numeric_limits<double>::infinity();
};

struct LayerGradient {
  Matrix weight;
  Vector bias;
};

struct MlpGradients {
  std::vector<LayerGradient> layers;

  MlpGradients& operator+=(const MlpGradients& other);
  MlpGradients& operator*=(double s);
  Vector flatten() const;
};

class LipschitzMlp;

// Activations cached by a forward pass. A tape may be consumed by exactly one
// backward call on the network (and parameter version) that produced it.
class GradientTape {
 public:
  GradientTape() = default;
  bool consumed() const { return consumed_; }

 private:
  friend class LipschitzMlp;
  std::uint64_t net_id_ = 0;
  std::uint64_t version_ = 0;
  bool consumed_ = false;
  bool has_tangent_ = false;
  std::vector<Vector> inputs_;          // a_l, input of layer l
  std::vector<Vector> pre_;             // z_l
  std::vector<Vector> tangent_inputs_;  // da_l
  std::vector<Vector> tangent_pre_;     // dz_l
};

struct ForwardResult {
  Vector output;
  GradientTape tape;
};

struct TangentForwardResult {
  Vector output;
  Vector output_tangent;  // J(x) dx
  GradientTape tape;
};

struct BackwardResult {
  MlpGradients grads;
  Vector input_grad;
};

struct TangentBackwardResult {
  MlpGradients grads;
  Vector input_grad;
  Vector input_tangent_grad;
};

struct MlpSpec {
  std::vector<int> sizes;  // input, hidden..., output
  Activation hidden_activation = Activation::kTanh;
  // One per layer, or a single value broadcast to every layer.
  std::vector<double> budgets = {std::numeric_limits<double>::infinity()};
  double init_gain = 0.7071067811865476;
  std::uint64_t seed = 0;
};

// Feed-forward network: affine then activation per hidden layer, identity on
// the output, with per-layer spectral-norm budgets kept by power iteration.
//
// Evaluation is const and thread-safe; anything that changes parameters bumps
// the version so tapes recorded earlier are rejected.
class LipschitzMlp {
 public:
  LipschitzMlp();
  // Scaled-uniform initialization followed by spectral normalization.
  explicit LipschitzMlp(const MlpSpec& spec);
  // Adopts explicit layers (checkpoint load, hand-built nets). No rescaling.
  LipschitzMlp(std::vector<DenseLayer> layers, std::uint64_t power_seed);

  LipschitzMlp(const LipschitzMlp& other);
  LipschitzMlp& operator=(const LipschitzMlp& other);
  LipschitzMlp(LipschitzMlp&&) noexcept = default;
  LipschitzMlp& operator=(LipschitzMlp&&) noexcept = default;

  int input_dim() const;
  int output_dim() const;
  size_t num_layers() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  // Mutable access bumps the version.
  DenseLayer& mutable_layer(size_t i);

  Vector evaluate(const Vector& x) const;
  ForwardResult forward(const Vector& x) const;
  // Consumes the tape.
  BackwardResult backward(GradientTape& tape, const Vector& output_cotangent) const;

  // Value and directional derivative J(x) dx in one pass.
  TangentForwardResult forward_tangent(const Vector& x, const Vector& dx) const;
  // Reverse pass through forward_tangent; cotangents for output and tangent.
  TangentBackwardResult backward_tangent(GradientTape& tape, const Vector& output_cotangent,
                                         const Vector& tangent_cotangent) const;

  // j x k Jacobian, one reverse pass per output row.
  Matrix input_jacobian(const Vector& x) const;

  // Rescales every layer whose estimated spectral norm exceeds its budget.
  // Returns the post-normalization estimates.
  std::vector<double> spectral_normalize();
  // prod_l min(sigma_l, budget_l) * prod activation Lipschitz constants.
  double lipschitz_bound() const;
  const std::vector<double>& sigma_estimates() const { return sigma_; }

  Eigen::Index num_parameters() const;
  Vector parameters() const;
  void set_parameters(const Vector& flat);
  MlpGradients zero_gradients() const;

  std::uint64_t version() const { return version_; }

 private:
  void check_tape(const GradientTape& tape, bool tangent) const;
  double power_iterate(size_t layer, int min_rounds);

  std::vector<DenseLayer> layers_;
  std::vector<Vector> power_u_;
  std::vector<double> sigma_;
  std::uint64_t id_;
  std::uint64_t version_ = 0;
};

// Second derivative of an activation; needed by the tangent reverse pass.
double activation_value(Activation act, double z);
double activation_derivative(Activation act, double z);
double activation_second_derivative(Activation act, double z);

}  // namespace cppo

#endif  // CPPO_NET_HPP_
