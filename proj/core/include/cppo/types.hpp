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

#ifndef CPPO_TYPES_HPP_
#define CPPO_TYPES_HPP_

#include <Eigen/Core>

namespace cppo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Full privileged state x, desired state x_d and error e = x - x_d all share
// this representation; the aliases document intent at API boundaries.
using StateVector = Vector;
using ErrorVector = Vector;

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace cppo

#endif  // CPPO_TYPES_HPP_
