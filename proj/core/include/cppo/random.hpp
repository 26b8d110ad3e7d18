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

#ifndef CPPO_RANDOM_HPP_
#define CPPO_RANDOM_HPP_

#include <cstdint>
#include <random>
#include <string>

#include "cppo/types.hpp"

namespace cppo {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Independent stream seed for (base, stream index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

Vector standard_normal(Rng& rng, Eigen::Index n);
// Uniform on the box [lo, hi], per coordinate.
Vector uniform_in(Rng& rng, const Vector& lo, const Vector& hi);

// Shortest round-trip decimal form, for byte-stable text output.
std::string format_double(double v);

}  // namespace cppo

#endif  // CPPO_RANDOM_HPP_
