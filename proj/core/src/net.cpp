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

#include "cppo/net.hpp"

#include <atomic>
#include <cmath>
#include <random>

#include "cppo/errors.hpp"

namespace cppo {

namespace {

std::atomic<std::uint64_t> next_net_id{1};

std::uint64_t fresh_id() { return next_net_id.fetch_add(1); }

Vector apply(Activation act, const Vector& z) {
  return z.unaryExpr([act](double v) { return activation_value(act, v); });
}

Vector derivative(Activation act, const Vector& z) {
  return z.unaryExpr([act](double v) { return activation_derivative(act, v); });
}

Vector second_derivative(Activation act, const Vector& z) {
  return z.unaryExpr([act](double v) { return activation_second_derivative(act, v); });
}

Vector random_unit(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

}  // namespace

double activation_value(Activation act, double z) {
  switch (act) {
    case Activation::kIdentity: return z;
    case Activation::kTanh: return std::tanh(z);
    case Activation::kSoftplus: return z > 30.0 ? z : std::log1p(std::exp(z));
    case Activation::kElu: return z > 0.0 ? z : std::expm1(z);
  }
  return z;
}

double activation_derivative(Activation act, double z) {
  switch (act) {
    case Activation::kIdentity: return 1.0;
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    case Activation::kSoftplus: return 1.0 / (1.0 + std::exp(-z));
    case Activation::kElu: return z > 0.0 ? 1.0 : std::exp(z);
  }
  return 1.0;
}

double activation_second_derivative(Activation act, double z) {
  switch (act) {
    case Activation::kIdentity: return 0.0;
    case Activation::kTanh: {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::kSoftplus: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      return s * (1.0 - s);
    }
    case Activation::kElu: return z > 0.0 ? 0.0 : std::exp(z);
  }
  return 0.0;
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kTanh: return "tanh";
    case Activation::kSoftplus: return "softplus";
    case Activation::kElu: return "elu";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "tanh") return Activation::kTanh;
  if (s == "softplus") return Activation::kSoftplus;
  if (s == "elu") return Activation::kElu;
  throw ConfigError("unknown activation '" + s + "'");
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  if (other.layers.size() != layers.size()) {
    throw ContractError("MlpGradients: layer count mismatch");
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

MlpGradients& MlpGradients::operator*=(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
  return *this;
}

Vector MlpGradients::flatten() const {
  Eigen::Index n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  Vector out(n);
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out(k++) = l.weight(r, c);
    out.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return out;
}

// ---------------------------------------------------------------------------

LipschitzMlp::LipschitzMlp() : id_(fresh_id()) {}

LipschitzMlp::LipschitzMlp(const MlpSpec& spec) : id_(fresh_id()) {
  if (spec.sizes.size() < 2) throw ContractError("MlpSpec: need at least input and output size");
  for (int s : spec.sizes)
    if (s <= 0) throw ContractError("MlpSpec: layer sizes must be positive");
  const size_t n_layers = spec.sizes.size() - 1;
  if (spec.budgets.size() != 1 && spec.budgets.size() != n_layers) {
    throw ContractError("MlpSpec: budgets must have one entry or one per layer");
  }

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  layers_.resize(n_layers);
  for (size_t l = 0; l < n_layers; ++l) {
    const int in = spec.sizes[l];
    const int out = spec.sizes[l + 1];
    const double bound = spec.init_gain * std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer& layer = layers_[l];
    layer.weight.resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) layer.weight(r, c) = bound * unif(rng);
    layer.bias = Vector::Zero(out);
    layer.activation = l + 1 == n_layers ? Activation::kIdentity : spec.hidden_activation;
    layer.budget = spec.budgets.size() == 1 ? spec.budgets[0] : spec.budgets[l];
    if (!(layer.budget > 0.0)) throw ContractError("MlpSpec: budgets must be positive");
  }
  power_u_.resize(n_layers);
  for (size_t l = 0; l < n_layers; ++l) power_u_[l] = random_unit(layers_[l].weight.rows(), rng);
  sigma_.assign(n_layers, 0.0);
  spectral_normalize();
}

LipschitzMlp::LipschitzMlp(std::vector<DenseLayer> layers, std::uint64_t power_seed)
    : layers_(std::move(layers)), id_(fresh_id()) {
  for (size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.bias.size() != layer.weight.rows()) {
      throw ContractError("LipschitzMlp: bias length must match weight rows");
    }
    if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows()) {
      throw ContractError("LipschitzMlp: consecutive layer shapes do not chain");
    }
    if (!(layer.budget > 0.0)) throw ContractError("LipschitzMlp: budgets must be positive");
  }
  std::mt19937_64 rng(power_seed);
  power_u_.resize(layers_.size());
  for (size_t l = 0; l < layers_.size(); ++l) {
    power_u_[l] = random_unit(layers_[l].weight.rows(), rng);
  }
  sigma_.assign(layers_.size(), 0.0);
  for (size_t l = 0; l < layers_.size(); ++l) sigma_[l] = power_iterate(l, 5);
}

LipschitzMlp::LipschitzMlp(const LipschitzMlp& other)
    : layers_(other.layers_), power_u_(other.power_u_), sigma_(other.sigma_),
      id_(fresh_id()), version_(other.version_) {}

LipschitzMlp& LipschitzMlp::operator=(const LipschitzMlp& other) {
  if (this != &other) {
    layers_ = other.layers_;
    power_u_ = other.power_u_;
    sigma_ = other.sigma_;
    id_ = fresh_id();
    version_ = other.version_;
  }
  return *this;
}

int LipschitzMlp::input_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int LipschitzMlp::output_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

DenseLayer& LipschitzMlp::mutable_layer(size_t i) {
  ++version_;
  return layers_.at(i);
}

Vector LipschitzMlp::evaluate(const Vector& x) const {
  if (x.size() != input_dim()) {
    throw ContractError("LipschitzMlp: input length " + std::to_string(x.size()) +
                        " does not match " + std::to_string(input_dim()));
  }
  Vector a = x;
  for (const auto& layer : layers_) {
    a = apply(layer.activation, layer.weight * a + layer.bias);
  }
  return a;
}

ForwardResult LipschitzMlp::forward(const Vector& x) const {
  if (x.size() != input_dim()) {
    throw ContractError("LipschitzMlp: input length " + std::to_string(x.size()) +
                        " does not match " + std::to_string(input_dim()));
  }
  ForwardResult r;
  r.tape.net_id_ = id_;
  r.tape.version_ = version_;
  r.tape.inputs_.reserve(layers_.size());
  r.tape.pre_.reserve(layers_.size());
  Vector a = x;
  for (const auto& layer : layers_) {
    Vector z = layer.weight * a + layer.bias;
    r.tape.inputs_.push_back(std::move(a));
    a = apply(layer.activation, z);
    r.tape.pre_.push_back(std::move(z));
  }
  r.output = std::move(a);
  return r;
}

void LipschitzMlp::check_tape(const GradientTape& tape, bool tangent) const {
  if (tape.consumed_) throw StaleTapeError("gradient tape already consumed");
  if (tape.net_id_ != id_) throw StaleTapeError("gradient tape belongs to another network");
  if (tape.version_ != version_) {
    throw StaleTapeError("gradient tape predates a parameter update");
  }
  if (tangent && !tape.has_tangent_) {
    throw StaleTapeError("tape was not recorded with a tangent");
  }
}

BackwardResult LipschitzMlp::backward(GradientTape& tape, const Vector& cot) const {
  check_tape(tape, false);
  if (cot.size() != output_dim()) throw ContractError("backward: cotangent length mismatch");
  tape.consumed_ = true;

  BackwardResult r;
  r.grads.layers.resize(layers_.size());
  Vector delta = cot;
  for (size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const Vector gz = delta.cwiseProduct(derivative(layer.activation, tape.pre_[l]));
    r.grads.layers[l].weight = gz * tape.inputs_[l].transpose();
    r.grads.layers[l].bias = gz;
    delta = layer.weight.transpose() * gz;
  }
  r.input_grad = std::move(delta);
  return r;
}

TangentForwardResult LipschitzMlp::forward_tangent(const Vector& x, const Vector& dx) const {
  if (x.size() != input_dim() || dx.size() != input_dim()) {
    throw ContractError("forward_tangent: input length mismatch");
  }
  TangentForwardResult r;
  GradientTape& t = r.tape;
  t.net_id_ = id_;
  t.version_ = version_;
  t.has_tangent_ = true;
  Vector a = x;
  Vector da = dx;
  for (const auto& layer : layers_) {
    Vector z = layer.weight * a + layer.bias;
    Vector dz = layer.weight * da;
    t.inputs_.push_back(std::move(a));
    t.tangent_inputs_.push_back(std::move(da));
    a = apply(layer.activation, z);
    da = derivative(layer.activation, z).cwiseProduct(dz);
    t.pre_.push_back(std::move(z));
    t.tangent_pre_.push_back(std::move(dz));
  }
  r.output = std::move(a);
  r.output_tangent = std::move(da);
  return r;
}

TangentBackwardResult LipschitzMlp::backward_tangent(GradientTape& tape, const Vector& out_cot,
                                                     const Vector& tan_cot) const {
  check_tape(tape, true);
  if (out_cot.size() != output_dim() || tan_cot.size() != output_dim()) {
    throw ContractError("backward_tangent: cotangent length mismatch");
  }
  tape.consumed_ = true;

  TangentBackwardResult r;
  r.grads.layers.resize(layers_.size());
  Vector abar = out_cot;
  Vector dabar = tan_cot;
  for (size_t l = layers_.size(); l-- > 0;) {
    const auto& layer = layers_[l];
    const Vector& z = tape.pre_[l];
    const Vector& dz = tape.tangent_pre_[l];
    const Vector d1 = derivative(layer.activation, z);
    const Vector d2 = second_derivative(layer.activation, z);
    // a' = s(z), da' = s'(z) dz
    const Vector zbar = abar.cwiseProduct(d1) + dabar.cwiseProduct(d2).cwiseProduct(dz);
    const Vector dzbar = dabar.cwiseProduct(d1);
    r.grads.layers[l].weight =
        zbar * tape.inputs_[l].transpose() + dzbar * tape.tangent_inputs_[l].transpose();
    r.grads.layers[l].bias = zbar;
    abar = layer.weight.transpose() * zbar;
    dabar = layer.weight.transpose() * dzbar;
  }
  r.input_grad = std::move(abar);
  r.input_tangent_grad = std::move(dabar);
  return r;
}

Matrix LipschitzMlp::input_jacobian(const Vector& x) const {
  ForwardResult fwd = forward(x);
  const int j = output_dim();
  Matrix jac(j, input_dim());
  for (int row = 0; row < j; ++row) {
    Vector delta = Vector::Unit(j, row);
    for (size_t l = layers_.size(); l-- > 0;) {
      const auto& layer = layers_[l];
      const Vector gz = delta.cwiseProduct(derivative(layer.activation, fwd.tape.pre_[l]));
      delta = layer.weight.transpose() * gz;
    }
    jac.row(row) = delta.transpose();
  }
  return jac;
}

double LipschitzMlp::power_iterate(size_t l, int min_rounds) {
  const Matrix& w = layers_[l].weight;
  Vector& u = power_u_[l];
  if (w.squaredNorm() == 0.0) return 0.0;
  double sigma = 0.0;
  for (int round = 0; round < 200; ++round) {
    Vector v = w.transpose() * u;
    const double vn = v.norm();
    if (vn == 0.0) {
      // u fell into the left null space; restart from a fixed direction.
      u = Vector::Ones(w.rows()).normalized();
      continue;
    }
    v /= vn;
    Vector wu = w * v;
    const double next = wu.norm();
    u = wu / next;
    const bool converged = std::abs(next - sigma) <= 1e-13 * next;
    sigma = next;
    if (round + 1 >= min_rounds && converged) break;
  }
  return sigma;
}

std::vector<double> LipschitzMlp::spectral_normalize() {
  bool changed = false;
  for (size_t l = 0; l < layers_.size(); ++l) {
    double sigma = power_iterate(l, 5);
    const double budget = layers_[l].budget;
    if (std::isfinite(budget) && sigma > budget) {
      layers_[l].weight *= budget / sigma;
      sigma = budget;
      changed = true;
    }
    sigma_[l] = sigma;
  }
  if (changed) ++version_;
  return sigma_;
}

double LipschitzMlp::lipschitz_bound() const {
  double bound = 1.0;
  for (size_t l = 0; l < layers_.size(); ++l) {
    bound *= std::min(sigma_[l], layers_[l].budget) * activation_lipschitz(layers_[l].activation);
  }
  return bound;
}

Eigen::Index LipschitzMlp::num_parameters() const {
  Eigen::Index n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

Vector LipschitzMlp::parameters() const {
  Vector out(num_parameters());
  Eigen::Index k = 0;
  for (const auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out(k++) = l.weight(r, c);
    out.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return out;
}

void LipschitzMlp::set_parameters(const Vector& flat) {
  if (flat.size() != num_parameters()) {
    throw ContractError("set_parameters: expected " + std::to_string(num_parameters()) +
                        " values");
  }
  Eigen::Index k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(k++);
    l.bias = flat.segment(k, l.bias.size());
    k += l.bias.size();
  }
  ++version_;
}

MlpGradients LipschitzMlp::zero_gradients() const {
  MlpGradients g;
  g.layers.reserve(layers_.size());
  for (const auto& l : layers_) {
    g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()),
                        Vector::Zero(l.bias.size())});
  }
  return g;
}

}  // namespace cppo
