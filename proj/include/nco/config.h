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

#ifndef NCO_CONFIG_H_
#define NCO_CONFIG_H_

#include <string>

#include <nlohmann/json.hpp>

#include "nco/analysis.h"
#include "nco/training.h"

namespace nco {

// Where datasets come from and how they are labelled.
struct DataSpec {
  ProblemKind kind = ProblemKind::kTsp;
  int n = 10;
  double er_p = 0.15;  // MIS edge probability
  int train_count = 200;
  int heldout_count = 64;
  uint64_t seed = 1;
  uint64_t heldout_seed = 2;
  int oracle_tsp_max_n = 16;
  int oracle_mis_max_n = 40;
  // Budget-capped 2-opt labels instead of exact ones.
  bool suboptimal = false;
  int64_t suboptimal_budget = 1000;
  int suboptimal_restarts = 1;
  friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct EvalSpec {
  DecoderKind decoder = DecoderKind::kGreedy;
  Refinement::Kind refinement = Refinement::Kind::kNone;
  int64_t two_opt_budget = 1000;
  int rewrite_iterations = 3;
  int rewrite_steps = 10;
  int rewrite_noise_t = -1;
  int steps = 20;
  uint64_t seed = 7;
  friend bool operator==(const EvalSpec&, const EvalSpec&) = default;

  EvalOptions ToOptions() const;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DataSpec data;
  int diffusion_steps = 50;
  BetaSpec beta;
  GnnConfig gnn;
  TrainConfig pretrain;
  TrainConfig finetune;
  RewardConfig reward;
  EvalSpec eval;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) =
      default;

  DiffusionSchedule Schedule() const {
    return DiffusionSchedule::Make(diffusion_steps, beta);
  }
  void Validate() const;
};

nlohmann::json ToJson(const GnnConfig& c);
nlohmann::json ToJson(const TrainConfig& c);
nlohmann::json ToJson(const RewardConfig& c);
nlohmann::json ToJson(const BetaSpec& c);
nlohmann::json ToJson(const DataSpec& c);
nlohmann::json ToJson(const EvalSpec& c);
nlohmann::json ToJson(const ExperimentConfig& c);

// Missing keys keep their defaults; unknown keys and wrong types throw
// ConfigError naming the offending path.
void FromJson(const nlohmann::json& j, GnnConfig& c, const std::string& path = "gnn");
void FromJson(const nlohmann::json& j, TrainConfig& c, const std::string& path = "train");
void FromJson(const nlohmann::json& j, RewardConfig& c, const std::string& path = "reward");
void FromJson(const nlohmann::json& j, BetaSpec& c, const std::string& path = "beta");
void FromJson(const nlohmann::json& j, DataSpec& c, const std::string& path = "data");
void FromJson(const nlohmann::json& j, EvalSpec& c, const std::string& path = "eval");
void FromJson(const nlohmann::json& j, ExperimentConfig& c, const std::string& path = "");

ExperimentConfig ParseExperimentConfig(const std::string& text);
std::string SerializeExperimentConfig(const ExperimentConfig& c);
ExperimentConfig LoadExperimentConfig(const std::string& path);

// Generates `count` instances from `seed` and labels them exactly within the
// configured oracle limits.
LabeledDataset GenerateSplit(const DataSpec& spec, int count, uint64_t seed);
// Budget-capped 2-opt labels for the training split of `spec`.
LabeledDataset DegradeLabels(const DataSpec& spec, const LabeledDataset& exact,
                             SuboptimalReport* report = nullptr);

// Named presets; throws ConfigError listing the known names otherwise.
ExperimentConfig Preset(const std::string& name);
std::vector<std::string> PresetNames();

}  // namespace nco

#endif  // NCO_CONFIG_H_
