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

#include "cppo/dynamics.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include <Eigen/LU>

#include "cppo/errors.hpp"
#include "cppo/random.hpp"

namespace cppo {

namespace {

void require_dim(const Vector& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw ContractError(std::string(what) + ": expected length " + std::to_string(n) +
                        ", got " + std::to_string(v.size()));
  }
}

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw InputError(std::string(what) + ": non-finite input");
}

bool contains_index(const std::vector<int>& v, int i) {
  for (int k : v)
    if (k == i) return true;
  return false;
}

}  // namespace

bool Box::contains(const Vector& x) const {
  if (x.size() != lo.size()) return false;
  return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

Box Box::shrink(double fraction) const {
  const Vector c = center();
  const Vector half = 0.5 * fraction * (hi - lo);
  return Box{c - half, c + half};
}

// ---------------------------------------------------------------------------
// Observation maps

int ControlAffineSystem::obs_dim() const {
  if (observation_ == ObservationKind::kIdentity) return state_dim();
  return state_dim() + static_cast<int>(angle_indices().size());
}

Vector ControlAffineSystem::observe(const Vector& x) const {
  if (observation_ == ObservationKind::kIdentity) return x;
  const auto angles = angle_indices();
  Vector y(obs_dim());
  int r = 0;
  for (int i = 0; i < state_dim(); ++i) {
    if (contains_index(angles, i)) {
      y(r++) = std::sin(x(i));
      y(r++) = std::cos(x(i));
    } else {
      y(r++) = x(i);
    }
  }
  return y;
}

Matrix ControlAffineSystem::observation_jacobian(const Vector& x) const {
  const int n = state_dim();
  if (observation_ == ObservationKind::kIdentity) return Matrix::Identity(n, n);
  const auto angles = angle_indices();
  Matrix j = Matrix::Zero(obs_dim(), n);
  int r = 0;
  for (int i = 0; i < n; ++i) {
    if (contains_index(angles, i)) {
      j(r++, i) = std::cos(x(i));
      j(r++, i) = -std::sin(x(i));
    } else {
      j(r++, i) = 1.0;
    }
  }
  return j;
}

PdCoordinates ControlAffineSystem::pd_coordinates(const Vector& y) const {
  const auto pose = pose_indices();
  const auto vel = velocity_indices();
  const int m = static_cast<int>(pose.size());
  const int p = obs_dim();
  require_dim(y, p, "pd_coordinates");

  // Row in y where state component i starts.
  std::vector<int> row(static_cast<size_t>(state_dim()));
  std::vector<bool> trig(static_cast<size_t>(state_dim()), false);
  {
    const auto angles = angle_indices();
    int r = 0;
    for (int i = 0; i < state_dim(); ++i) {
      row[i] = r;
      trig[i] = observation_ == ObservationKind::kTrig && contains_index(angles, i);
      r += trig[i] ? 2 : 1;
    }
  }

  PdCoordinates pd{Vector(m), Vector(m), Matrix::Zero(m, p), Matrix::Zero(m, p)};
  auto extract = [&](int i, double& value, auto jac_row) {
    const int r = row[i];
    if (trig[i]) {
      const double s = y(r), c = y(r + 1);
      const double rr = s * s + c * c;
      value = std::atan2(s, c);
      jac_row(r) = c / rr;
      jac_row(r + 1) = -s / rr;
    } else {
      value = y(r);
      jac_row(r) = 1.0;
    }
  };
  for (int j = 0; j < m; ++j) {
    extract(pose[j], pd.q(j), pd.dq_dy.row(j));
    extract(vel[j], pd.qdot(j), pd.dqdot_dy.row(j));
  }
  return pd;
}

void ControlAffineSystem::set_region(Box region) {
  if (region.lo.size() != state_dim() || region.hi.size() != state_dim() ||
      (region.hi.array() < region.lo.array()).any()) {
    throw ConfigError("region: box must have lo <= hi with one entry per state");
  }
  region_ = std::move(region);
}

void ControlAffineSystem::set_disturbance_bound(double dbar) {
  if (!(dbar >= 0.0) || !std::isfinite(dbar)) {
    throw ConfigError("disturbance_bound must be finite and >= 0");
  }
  disturbance_bound_ = dbar;
}

void ControlAffineSystem::set_torque_limit(Vector limit) {
  if (limit.size() != input_dim() || (limit.array() <= 0.0).any()) {
    throw ConfigError("torque_limit: one positive entry per input required");
  }
  torque_limit_ = std::move(limit);
}

// ---------------------------------------------------------------------------
// Pendulum: x1' = x2, x2' = -(g/l) sin x1 - b/(m l^2) x2 + u/(m l^2)

Pendulum::Pendulum(PendulumParams params) : p_(params) {
  region_ = Box{Vector::Constant(2, 0.0), Vector::Constant(2, 0.0)};
  region_.lo << -std::numbers::pi, -8.0;
  region_.hi << std::numbers::pi, 8.0;
  disturbance_bound_ = 1.0;
  torque_limit_ = Vector::Constant(1, 120.0);
}

Vector Pendulum::drift(const Vector& x) const {
  const double inertia = p_.mass * p_.length * p_.length;
  Vector f(2);
  f << x(1), -(p_.gravity / p_.length) * std::sin(x(0)) - (p_.damping / inertia) * x(1);
  return f;
}

Matrix Pendulum::input_matrix(const Vector&) const {
  Matrix b(2, 1);
  b << 0.0, 1.0 / (p_.mass * p_.length * p_.length);
  return b;
}

Matrix Pendulum::drift_jacobian(const Vector& x) const {
  const double inertia = p_.mass * p_.length * p_.length;
  Matrix j(2, 2);
  j << 0.0, 1.0, -(p_.gravity / p_.length) * std::cos(x(0)), -p_.damping / inertia;
  return j;
}

std::vector<Matrix> Pendulum::input_column_jacobians(const Vector&) const {
  return {Matrix::Zero(2, 2)};
}

// ---------------------------------------------------------------------------
// Cart-pole from the Lagrangian with viscous damping:
//   H(theta) [pdd; thdd] = r(x) + [F; 0]
//   H = [[mc + mp, mp l c], [mp l c, mp l^2]]
//   r = [-bc pd + mp l thd^2 s, -bp thd - mp g l s]

CartPole::CartPole(CartPoleParams params) : p_(params) {
  region_ = Box{Vector(4), Vector(4)};
  region_.lo << -2.4, -std::numbers::pi, -5.0, -8.0;
  region_.hi << 2.4, std::numbers::pi, 5.0, 8.0;
  disturbance_bound_ = 1.0;
  torque_limit_ = Vector::Constant(1, 200.0);
}

Eigen::Matrix2d CartPole::mass_matrix(double theta) const {
  const double c = std::cos(theta);
  Eigen::Matrix2d h;
  h << p_.cart_mass + p_.pole_mass, p_.pole_mass * p_.pole_length * c,
      p_.pole_mass * p_.pole_length * c, p_.pole_mass * p_.pole_length * p_.pole_length;
  return h;
}

Vector CartPole::drift(const Vector& x) const {
  const double s = std::sin(x(1));
  const double mp = p_.pole_mass, l = p_.pole_length;
  Eigen::Vector2d r(-p_.cart_damping * x(2) + mp * l * x(3) * x(3) * s,
                    -p_.pole_damping * x(3) - mp * p_.gravity * l * s);
  const Eigen::Vector2d acc = mass_matrix(x(1)).inverse() * r;
  Vector f(4);
  f << x(2), x(3), acc(0), acc(1);
  return f;
}

Matrix CartPole::input_matrix(const Vector& x) const {
  const Eigen::Vector2d col = mass_matrix(x(1)).inverse() * Eigen::Vector2d(1.0, 0.0);
  Matrix b = Matrix::Zero(4, 1);
  b(2, 0) = col(0);
  b(3, 0) = col(1);
  return b;
}

Matrix CartPole::drift_jacobian(const Vector& x) const {
  const double s = std::sin(x(1)), c = std::cos(x(1));
  const double mp = p_.pole_mass, l = p_.pole_length, g = p_.gravity;
  const Eigen::Matrix2d hinv = mass_matrix(x(1)).inverse();
  const Eigen::Vector2d r(-p_.cart_damping * x(2) + mp * l * x(3) * x(3) * s,
                          -p_.pole_damping * x(3) - mp * g * l * s);
  const Eigen::Vector2d acc = hinv * r;

  Eigen::Matrix2d dh_dtheta;
  dh_dtheta << 0.0, -mp * l * s, -mp * l * s, 0.0;

  // d acc / d x_k = H^-1 (d r / d x_k - dH/dx_k acc); only theta moves H.
  Eigen::Matrix<double, 2, 4> dr;
  dr.col(0) = Eigen::Vector2d::Zero();
  dr.col(1) = Eigen::Vector2d(mp * l * x(3) * x(3) * c, -mp * g * l * c) - dh_dtheta * acc;
  dr.col(2) = Eigen::Vector2d(-p_.cart_damping, 0.0);
  dr.col(3) = Eigen::Vector2d(2.0 * mp * l * x(3) * s, -p_.pole_damping);

  Matrix j = Matrix::Zero(4, 4);
  j(0, 2) = 1.0;
  j(1, 3) = 1.0;
  j.bottomRows(2) = hinv * dr;
  return j;
}

std::vector<Matrix> CartPole::input_column_jacobians(const Vector& x) const {
  const double s = std::sin(x(1));
  const double mp = p_.pole_mass, l = p_.pole_length;
  const Eigen::Matrix2d hinv = mass_matrix(x(1)).inverse();
  Eigen::Matrix2d dh_dtheta;
  dh_dtheta << 0.0, -mp * l * s, -mp * l * s, 0.0;
  const Eigen::Vector2d b = hinv * Eigen::Vector2d(1.0, 0.0);
  const Eigen::Vector2d db = -hinv * dh_dtheta * b;
  Matrix j = Matrix::Zero(4, 4);
  j(2, 1) = db(0);
  j(3, 1) = db(1);
  return {j};
}

// ---------------------------------------------------------------------------
// Point mass

PointMass2D::PointMass2D(PointMassParams params) : p_(params) {
  region_ = Box{Vector(4), Vector(4)};
  region_.lo << -2.0, -2.0, -3.0, -3.0;
  region_.hi << 2.0, 2.0, 3.0, 3.0;
  disturbance_bound_ = 1.0;
  torque_limit_ = Vector::Constant(2, 100.0);
}

Vector PointMass2D::drift(const Vector& x) const {
  Vector f(4);
  const double k = p_.damping / p_.mass;
  f << x(2), x(3), -k * x(2), -k * x(3);
  return f;
}

Matrix PointMass2D::input_matrix(const Vector&) const {
  Matrix b = Matrix::Zero(4, 2);
  b(2, 0) = 1.0 / p_.mass;
  b(3, 1) = 1.0 / p_.mass;
  return b;
}

Matrix PointMass2D::drift_jacobian(const Vector&) const {
  Matrix j = Matrix::Zero(4, 4);
  const double k = p_.damping / p_.mass;
  j(0, 2) = 1.0;
  j(1, 3) = 1.0;
  j(2, 2) = -k;
  j(3, 3) = -k;
  return j;
}

std::vector<Matrix> PointMass2D::input_column_jacobians(const Vector&) const {
  return {Matrix::Zero(4, 4), Matrix::Zero(4, 4)};
}

// ---------------------------------------------------------------------------
// Linear

LinearSystem::LinearSystem(Matrix a, Matrix b, std::vector<int> pose,
                           std::vector<int> velocity)
    : a_(std::move(a)), b_(std::move(b)), pose_(std::move(pose)),
      velocity_(std::move(velocity)) {
  const auto n = a_.rows();
  if (a_.cols() != n || b_.rows() != n) {
    throw ConfigError("linear system: A must be n x n and B n x m");
  }
  if (pose_.size() != static_cast<size_t>(b_.cols()) || velocity_.size() != pose_.size()) {
    throw ConfigError("linear system: need one pose and one velocity index per input");
  }
  for (int i : pose_)
    if (i < 0 || i >= n) throw ConfigError("linear system: pose index out of range");
  for (int i : velocity_)
    if (i < 0 || i >= n) throw ConfigError("linear system: velocity index out of range");
  region_ = Box{Vector::Constant(n, -1.0), Vector::Constant(n, 1.0)};
  disturbance_bound_ = 0.0;
  torque_limit_ = Vector::Constant(b_.cols(), std::numeric_limits<double>::infinity());
}

std::vector<Matrix> LinearSystem::input_column_jacobians(const Vector&) const {
  return std::vector<Matrix>(static_cast<size_t>(b_.cols()),
                             Matrix::Zero(a_.rows(), a_.rows()));
}

// ---------------------------------------------------------------------------
// Disturbances

DisturbanceModel::DisturbanceModel(DisturbanceKind kind, double magnitude,
                                   const Vector& direction, double bound,
                                   DisturbanceSchedule schedule)
    : kind_(kind), magnitude_(magnitude), schedule_(schedule) {
  if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) {
    throw ConfigError("disturbance magnitude must be finite and >= 0");
  }
  if (magnitude > bound) {
    throw ConfigError("disturbance magnitude " + std::to_string(magnitude) +
                      " exceeds the system bound " + std::to_string(bound));
  }
  const double norm = direction.norm();
  if (kind != DisturbanceKind::kNone && (!(norm > 0.0) || !std::isfinite(norm))) {
    throw ConfigError("disturbance direction must be a nonzero finite vector");
  }
  direction_ = norm > 0.0 ? Vector(direction / norm) : direction;
  if (!(schedule.frequency > 0.0) && kind != DisturbanceKind::kNone &&
      kind != DisturbanceKind::kConstantPush) {
    throw ConfigError("disturbance frequency must be > 0");
  }
}

double DisturbanceModel::gain(double t) const {
  if (kind_ == DisturbanceKind::kNone) return 0.0;
  const double local = t - schedule_.onset;
  if (local < 0.0 || local >= schedule_.duration) return 0.0;
  switch (kind_) {
    case DisturbanceKind::kConstantPush:
      return magnitude_;
    case DisturbanceKind::kSinusoid:
      return magnitude_ * std::sin(2.0 * std::numbers::pi * schedule_.frequency * local);
    case DisturbanceKind::kPiecewiseGust: {
      const auto segment = static_cast<std::uint64_t>(std::floor(local * schedule_.frequency));
      const std::uint64_t h = splitmix64(schedule_.seed ^ splitmix64(segment));
      // 53-bit uniform in [0, 1), mapped to [-1, 1).
      const double unit = static_cast<double>(h >> 11) * 0x1.0p-53;
      return magnitude_ * (2.0 * unit - 1.0);
    }
    case DisturbanceKind::kNone:
      break;
  }
  return 0.0;
}

std::string to_string(DisturbanceKind kind) {
  switch (kind) {
    case DisturbanceKind::kNone: return "none";
    case DisturbanceKind::kConstantPush: return "constant_push";
    case DisturbanceKind::kSinusoid: return "sinusoid";
    case DisturbanceKind::kPiecewiseGust: return "piecewise_gust";
  }
  return "none";
}

DisturbanceKind disturbance_kind_from_string(const std::string& s) {
  if (s == "none") return DisturbanceKind::kNone;
  if (s == "constant_push") return DisturbanceKind::kConstantPush;
  if (s == "sinusoid") return DisturbanceKind::kSinusoid;
  if (s == "piecewise_gust") return DisturbanceKind::kPiecewiseGust;
  throw ConfigError("unknown disturbance kind '" + s + "'");
}

Vector sample_disturbance(const DisturbanceModel& dist, const Vector& x, double t) {
  if (dist.kind() == DisturbanceKind::kNone) return Vector::Zero(x.size());
  require_dim(dist.direction(), x.size(), "sample_disturbance: direction");
  return dist.gain(t) * dist.direction();
}

// ---------------------------------------------------------------------------
// Operations

Vector eval_dynamics(const ControlAffineSystem& sys, const Vector& x, const Vector& u,
                     double t, const DisturbanceModel& dist) {
  require_dim(x, sys.state_dim(), "eval_dynamics: x");
  require_dim(u, sys.input_dim(), "eval_dynamics: u");
  require_finite(x, "eval_dynamics");
  Vector xdot = sys.drift(x) + sys.input_matrix(x) * u;
  if (dist.kind() != DisturbanceKind::kNone) xdot += sample_disturbance(dist, x, t);
  return xdot;
}

JacobianBundle eval_jacobians(const ControlAffineSystem& sys, const Vector& x,
                              const Vector& u) {
  require_dim(x, sys.state_dim(), "eval_jacobians: x");
  require_dim(u, sys.input_dim(), "eval_jacobians: u");
  require_finite(x, "eval_jacobians");
  JacobianBundle out;
  out.drift_jacobian = sys.drift_jacobian(x);
  out.input_jacobians = sys.input_column_jacobians(x);
  out.input_matrix = sys.input_matrix(x);
  out.outside_region = !sys.region().contains(x);
  return out;
}

Observation observe(const ControlAffineSystem& sys, const Vector& x) {
  require_dim(x, sys.state_dim(), "observe: x");
  require_finite(x, "observe");
  return Observation{sys.observe(x), sys.observation_jacobian(x)};
}

StateVector step_rk4(const ControlAffineSystem& sys, const Vector& x, const Vector& u,
                     double dt, const DisturbanceModel& dist, double t) {
  if (!(dt > 0.0)) throw ContractError("step_rk4: dt must be positive");
  require_dim(x, sys.state_dim(), "step_rk4: x");
  require_dim(u, sys.input_dim(), "step_rk4: u");
  require_finite(x, "step_rk4");

  auto stage = [&](const Vector& xs, double ts, int index) {
    if (!xs.allFinite()) {
      throw IntegrationError("step_rk4: non-finite state entering stage " +
                                 std::to_string(index), index);
    }
    Vector k = sys.drift(xs) + sys.input_matrix(xs) * u;
    if (dist.kind() != DisturbanceKind::kNone) k += sample_disturbance(dist, xs, ts);
    if (!k.allFinite()) {
      throw IntegrationError("step_rk4: non-finite derivative in stage " +
                                 std::to_string(index), index);
    }
    return k;
  };

  const Vector k1 = stage(x, t, 1);
  const Vector k2 = stage(x + 0.5 * dt * k1, t + 0.5 * dt, 2);
  const Vector k3 = stage(x + 0.5 * dt * k2, t + 0.5 * dt, 3);
  const Vector k4 = stage(x + dt * k3, t + dt, 4);
  Vector next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw IntegrationError("step_rk4: non-finite update", 5);
  return next;
}

std::unique_ptr<ControlAffineSystem> make_system(const std::string& name) {
  if (name == "pendulum") return std::make_unique<Pendulum>();
  if (name == "cartpole") return std::make_unique<CartPole>();
  if (name == "point_mass") return std::make_unique<PointMass2D>();
  throw ConfigError("unknown system '" + name + "'");
}

}  // namespace cppo
