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

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Contraction-certified PPO: train, certify, perturb, ablate"};
  app.require_subcommand(1);

  std::string config, checkpoint;

  auto* train = app.add_subcommand("train", "train a policy and metric from a config");
  train->add_option("config", config, "experiment config (JSON)")->required();

  auto* certify = app.add_subcommand("certify", "certify a checkpoint over the region");
  certify->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  certify->add_option("config", config, "experiment config (JSON)")->required();

  auto* perturb = app.add_subcommand("perturb", "disturbed rollouts against the ISS bound");
  perturb->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  perturb->add_option("config", config, "experiment config (JSON)")->required();

  auto* ablate = app.add_subcommand("ablate", "learned metric vs fixed identity metric");
  ablate->add_option("config", config, "experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cppo::tools::kExitConfig;
  }

  using namespace cppo::tools;
  if (*train) return cmd_train(config, std::cout, std::cerr);
  if (*certify) return cmd_certify(checkpoint, config, std::cout, std::cerr);
  if (*perturb) return cmd_perturb(checkpoint, config, std::cout, std::cerr);
  return cmd_ablate(config, std::cout, std::cerr);
}
