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

#ifndef CPPO_DYNAMICS_HPP_
#define CPPO_DYNAMICS_HPP_

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "cppo/types.hpp"

namespace cppo {

// Axis-aligned box used as the compact certification region K.
struct Box {
  Vector lo;
  Vector hi;

  Eigen::Index dim() const { return lo.size(); }
  bool contains(const Vector& x) const;
  Vector center() const { return 0.5 * (lo + hi); }
  // Central sub-box keeping `fraction` of each side's width.
  Box shrink(double fraction) const;
};

enum class ObservationKind { kIdentity, kTrig };

// Joint-space coordinates extracted from an observation, together with their
// derivatives with respect to the observation.
struct PdCoordinates {
  Vector q;
  Vector qdot;
  Matrix dq_dy;     // m x p
  Matrix dqdot_dy;  // m x p
};

// xdot = f(x) + B(x) u + d(x, t) with analytic Jacobians and an observation
// map y = h(x). Implementations are immutable after construction, so every
// method may be called concurrently.
class ControlAffineSystem {
 public:
  virtual ~ControlAffineSystem() = default;

  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;

  virtual Vector drift(const Vector& x) const = 0;
  virtual Matrix input_matrix(const Vector& x) const = 0;
  virtual Matrix drift_jacobian(const Vector& x) const = 0;
  // One n x n matrix per input column, d B_i / d x.
  virtual std::vector<Matrix> input_column_jacobians(const Vector& x) const = 0;

  // Actuated pose / velocity components of x (length m each).
  virtual std::vector<int> pose_indices() const = 0;
  virtual std::vector<int> velocity_indices() const = 0;
  // Components observed through (sin, cos) in the trig observation map.
  virtual std::vector<int> angle_indices() const { return {}; }
  // Task equilibrium; x_d is built from it.
  virtual Vector reference_state() const { return Vector::Zero(state_dim()); }

  int obs_dim() const;
  Vector observe(const Vector& x) const;
  Matrix observation_jacobian(const Vector& x) const;
  PdCoordinates pd_coordinates(const Vector& y) const;

  ObservationKind observation_kind() const { return observation_; }
  void set_observation_kind(ObservationKind kind) { observation_ = kind; }

  const Box& region() const { return region_; }
  void set_region(Box region);
  double disturbance_bound() const { return disturbance_bound_; }
  void set_disturbance_bound(double dbar);
  // Per-actuator saturation; +inf when unsaturated.
  const Vector& torque_limit() const { return torque_limit_; }
  void set_torque_limit(Vector limit);

 protected:
  Box region_;
  double disturbance_bound_ = 0.0;
  Vector torque_limit_;
  ObservationKind observation_ = ObservationKind::kIdentity;
};

struct PendulumParams {
  double gravity = 9.81;
  double length = 1.0;
  double mass = 1.0;
  double damping = 0.1;
};

// x = (angle, angular rate); angle 0 is the resting equilibrium.
class Pendulum final : public ControlAffineSystem {
 public:
  explicit Pendulum(PendulumParams params = {});
  std::string name() const override { return "pendulum"; }
  int state_dim() const override { return 2; }
  int input_dim() const override { return 1; }
  Vector drift(const Vector& x) const override;
  Matrix input_matrix(const Vector& x) const override;
  Matrix drift_jacobian(const Vector& x) const override;
  std::vector<Matrix> input_column_jacobians(const Vector& x) const override;
  std::vector<int> pose_indices() const override { return {0}; }
  std::vector<int> velocity_indices() const override { return {1}; }
  std::vector<int> angle_indices() const override { return {0}; }
  const PendulumParams& params() const { return p_; }

 private:
  PendulumParams p_;
};

struct CartPoleParams {
  double gravity = 9.81;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_length = 0.5;
  double cart_damping = 0.1;
  double pole_damping = 0.01;
};

// x = (cart position, pole angle, cart velocity, pole rate); angle 0 hangs
// down. The cart force is the only input.
class CartPole final : public ControlAffineSystem {
 public:
  explicit CartPole(CartPoleParams params = {});
  std::string name() const override { return "cartpole"; }
  int state_dim() const override { return 4; }
  int input_dim() const override { return 1; }
  Vector drift(const Vector& x) const override;
  Matrix input_matrix(const Vector& x) const override;
  Matrix drift_jacobian(const Vector& x) const override;
  std::vector<Matrix> input_column_jacobians(const Vector& x) const override;
  std::vector<int> pose_indices() const override { return {0}; }
  std::vector<int> velocity_indices() const override { return {2}; }
  std::vector<int> angle_indices() const override { return {1}; }

 private:
  Eigen::Matrix2d mass_matrix(double theta) const;
  CartPoleParams p_;
};

struct PointMassParams {
  double mass = 1.0;
  double damping = 0.2;
};

// Planar double integrator x = (px, py, vx, vy), u = force.
class PointMass2D final : public ControlAffineSystem {
 public:
  explicit PointMass2D(PointMassParams params = {});
  std::string name() const override { return "point_mass"; }
  int state_dim() const override { return 4; }
  int input_dim() const override { return 2; }
  Vector drift(const Vector& x) const override;
  Matrix input_matrix(const Vector& x) const override;
  Matrix drift_jacobian(const Vector& x) const override;
  std::vector<Matrix> input_column_jacobians(const Vector& x) const override;
  std::vector<int> pose_indices() const override { return {0, 1}; }
  std::vector<int> velocity_indices() const override { return {2, 3}; }

 private:
  PointMassParams p_;
};

// xdot = A x + B u. Used for oracle checks and hand-built certificates.
class LinearSystem final : public ControlAffineSystem {
 public:
  LinearSystem(Matrix a, Matrix b, std::vector<int> pose, std::vector<int> velocity);
  std::string name() const override { return "linear"; }
  int state_dim() const override { return static_cast<int>(a_.rows()); }
  int input_dim() const override { return static_cast<int>(b_.cols()); }
  Vector drift(const Vector& x) const override { return a_ * x; }
  Matrix input_matrix(const Vector&) const override { return b_; }
  Matrix drift_jacobian(const Vector&) const override { return a_; }
  std::vector<Matrix> input_column_jacobians(const Vector& x) const override;
  std::vector<int> pose_indices() const override { return pose_; }
  std::vector<int> velocity_indices() const override { return velocity_; }

 private:
  Matrix a_;
  Matrix b_;
  std::vector<int> pose_;
  std::vector<int> velocity_;
};

enum class DisturbanceKind { kNone, kConstantPush, kSinusoid, kPiecewiseGust };

struct DisturbanceSchedule {
  double onset = 0.0;
  double duration = std::numeric_limits<double>::infinity();
  double frequency = 1.0;  // Hz; gust segments last 1/frequency seconds
  std::uint64_t seed = 0;  // gust level sequence
};

// Bounded additive disturbance d(x, t) with ||d|| <= magnitude <= dbar.
class DisturbanceModel {
 public:
  DisturbanceModel() = default;  // kind none, zero magnitude
  // Throws ConfigError if magnitude > bound, magnitude < 0 or the direction
  // is zero / non-finite. The direction is normalized.
  DisturbanceModel(DisturbanceKind kind, double magnitude, const Vector& direction,
                   double bound, DisturbanceSchedule schedule = {});

  DisturbanceKind kind() const { return kind_; }
  double magnitude() const { return magnitude_; }
  const Vector& direction() const { return direction_; }
  const DisturbanceSchedule& schedule() const { return schedule_; }

  // Signed scalar gain in [-magnitude, magnitude] applied along direction.
  double gain(double t) const;

 private:
  DisturbanceKind kind_ = DisturbanceKind::kNone;
  double magnitude_ = 0.0;
  Vector direction_;
  DisturbanceSchedule schedule_;
};

std::string to_string(DisturbanceKind kind);
DisturbanceKind disturbance_kind_from_string(const std::string& s);

struct JacobianBundle {
  Matrix drift_jacobian;                // n x n
  std::vector<Matrix> input_jacobians;  // m matrices, n x n
  Matrix input_matrix;                  // n x m
  bool outside_region = false;
};

struct Observation {
  Vector y;
  Matrix jacobian;  // p x n
};

// f(x) + B(x) u + d(x, t).
Vector eval_dynamics(const ControlAffineSystem& sys, const Vector& x, const Vector& u,
                     double t, const DisturbanceModel& dist);

JacobianBundle eval_jacobians(const ControlAffineSystem& sys, const Vector& x,
                              const Vector& u);

Observation observe(const ControlAffineSystem& sys, const Vector& x);

// Classical RK4 with zero-order hold on u. Throws IntegrationError naming the
// stage (1..4, or 5 for the combined update) that went non-finite.
StateVector step_rk4(const ControlAffineSystem& sys, const Vector& x, const Vector& u,
                     double dt, const DisturbanceModel& dist, double t);

Vector sample_disturbance(const DisturbanceModel& dist, const Vector& x, double t);

// Names: "pendulum", "cartpole", "point_mass". Uses default parameters,
// region, disturbance bound and torque limits for that system.
std::unique_ptr<ControlAffineSystem> make_system(const std::string& name);

}  // namespace cppo

#endif  // CPPO_DYNAMICS_HPP_
