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

#ifndef CPPO_TOOLS_COMMANDS_HPP_
#define CPPO_TOOLS_COMMANDS_HPP_

#include <iosfwd>
#include <string>

#include "cppo/trainer.hpp"

namespace cppo::tools {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,  // bad config, unreadable or mismatched checkpoint, IO failure
  kExitDiverged = 2,
  kExitCertificationFailed = 3,
};

// Each command writes its artifacts under the resolved output directory and
// progress lines to `log`; diagnostics go to `err`.

// checkpoint.bin, metrics.csv, train_summary.json
int cmd_train(const std::string& config_path, std::ostream& log, std::ostream& err);
// Same, also handing every iteration's row and state to `observe`.
int cmd_train(const std::string& config_path, std::ostream& log, std::ostream& err,
              const IterationCallback& observe);

// certification.json, plus residuals.csv when certify.dump_samples is set
int cmd_certify(const std::string& checkpoint_path, const std::string& config_path,
                std::ostream& log, std::ostream& err);

// perturb/traj_m<i>_s<j>.csv, perturb/decay.csv, perturb_summary.json
int cmd_perturb(const std::string& checkpoint_path, const std::string& config_path,
                std::ostream& log, std::ostream& err);

// ablate/{learned,identity}/checkpoint.bin (reused when present), ablation.csv
int cmd_ablate(const std::string& config_path, std::ostream& log, std::ostream& err);

}  // namespace cppo::tools

#endif  // CPPO_TOOLS_COMMANDS_HPP_
