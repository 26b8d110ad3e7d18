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

#ifndef CPPO_ERRORS_HPP_
#define CPPO_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace cppo {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (dimension mismatch, bad shape).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Numerically invalid input, e.g. a non-finite state.
class InputError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration detected at construction or parse time.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A metric whose smallest eigenvalue is below the inversion floor.
class SingularMetricError : public Error {
 public:
  using Error::Error;
};

// RK4 produced a non-finite intermediate state.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, int stage)
      : Error(what), stage_(stage) {}
  int stage() const { return stage_; }

 private:
  int stage_;
};

// Malformed, truncated or version-mismatched checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Tape reused or applied to a different network.
class StaleTapeError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss component.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string component)
      : Error(what), component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

}  // namespace cppo

#endif  // CPPO_ERRORS_HPP_
