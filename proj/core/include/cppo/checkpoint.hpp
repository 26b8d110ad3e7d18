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

#ifndef CPPO_CHECKPOINT_HPP_
#define CPPO_CHECKPOINT_HPP_

// Binary checkpoint layout (all integers little-endian):
//
//   "CRLCKPT"                      7 bytes, no terminator
//   u32 format version             kCheckpointVersion
//   u32 network count
//   per network:
//     u32 layer count
//     per layer:
//       u32 rows, u32 cols
//       f64[rows * cols] weights, row-major
//       f64[rows] biases
//       u8 activation tag
//       f64 spectral budget
//   u32 log-std length, f64[length] policy log-std
//
// Networks are stored in the order policy, value, metric factor.

#include <cstdint>
#include <string>
#include <vector>

#include "cppo/net.hpp"

namespace cppo {

inline constexpr char kCheckpointMagic[] = "CRLCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  LipschitzMlp policy;
  LipschitzMlp value;
  LipschitzMlp metric;
  Vector log_std;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cppo

#endif  // CPPO_CHECKPOINT_HPP_
