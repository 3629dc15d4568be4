// Copyright 2026 The NCO Lab Authors
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

#ifndef NCO_CHECKPOINT_H_
#define NCO_CHECKPOINT_H_

#include <string>

#include <nlohmann/json.hpp>

#include "nco/config.h"
#include "nco/training.h"

namespace nco {

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  std::string stage = "pretrain";  // or "finetune"
  int diffusion_steps = 50;
  BetaSpec beta;
  TrainConfig train;
  RewardConfig reward;
  std::string dataset_hash;
  TrainState state;
};

nlohmann::json MatrixToJson(const Eigen::MatrixXd& m);
Eigen::MatrixXd MatrixFromJson(const nlohmann::json& j, const std::string& where);

nlohmann::json PolicyToJson(const Policy& policy);
Policy PolicyFromJson(const nlohmann::json& j);

std::string SerializeCheckpoint(const Checkpoint& ckpt);
Checkpoint ParseCheckpoint(const std::string& text, const std::string& source);
// Temp file + rename.
void SaveCheckpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint LoadCheckpoint(const std::string& path);

// Throws ConfigError describing the first field that differs.
void RequireCompatible(const Checkpoint& ckpt, const std::string& stage,
                       const GnnConfig& gnn, int diffusion_steps,
                       const BetaSpec& beta, const TrainConfig& train,
                       const RewardConfig& reward,
                       const std::string& dataset_hash);

}  // namespace nco

#endif  // NCO_CHECKPOINT_H_
