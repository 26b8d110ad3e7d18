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

#ifndef CPPO_CONTROLLER_HPP_
#define CPPO_CONTROLLER_HPP_

#include "cppo/types.hpp"

namespace cppo {

// Deployed feedback map u = Pi(y) from observations to torques, with its
// Jacobian and a global Lipschitz bound on that Jacobian.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual Vector control(const Vector& y) const = 0;
  virtual Matrix control_jacobian(const Vector& y) const = 0;  // m x p
  virtual double lipschitz_bound() const = 0;
};

// u = K y.
class LinearFeedback final : public Controller {
 public:
  explicit LinearFeedback(Matrix gain) : gain_(std::move(gain)) {}
  Vector control(const Vector& y) const override { return gain_ * y; }
  Matrix control_jacobian(const Vector&) const override { return gain_; }
  double lipschitz_bound() const override;
  const Matrix& gain() const { return gain_; }

 private:
  Matrix gain_;
};

}  // namespace cppo

#endif  // CPPO_CONTROLLER_HPP_
