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

#ifndef NCO_TRAINING_H_
#define NCO_TRAINING_H_

#include <functional>
#include <string>
#include <vector>

#include "nco/analysis.h"
#include "nco/diffusion.h"
#include "nco/gnn.h"

namespace nco {

enum class RewardMode { kStandard, kLabelCentered };
std::string_view RewardModeName(RewardMode m);
RewardMode ParseRewardMode(std::string_view name);

struct RewardConfig {
  RewardMode mode = RewardMode::kLabelCentered;
  double sr_epsilon = 1e-8;
  friend bool operator==(const RewardConfig&, const RewardConfig&) = default;
};

enum class FinetuneMode { kHybrid, kFull, kFrozen };
std::string_view FinetuneModeName(FinetuneMode m);
FinetuneMode ParseFinetuneMode(std::string_view name);

struct TrainConfig {
  int epochs = 10;
  int samples_per_epoch = 512;  // RL only; SL sweeps the whole dataset
  int batch_size = 64;
  double lr = 1e-5;      // RL learning rate (constant)
  double sl_lr = 2e-4;   // SL peak, cosine-annealed to zero
  int rollout_steps = 10;
  DecoderKind decoder = DecoderKind::kGreedy;
  uint64_t seed = 0;
  FinetuneMode finetune = FinetuneMode::kHybrid;
  int lora_rank = 2;
  double lora_alpha = 2.0;
  int selective_layers = 1;
  double bn_momentum = 0.1;
  double max_grad_norm = 0.0;  // 0 disables clipping
  int eval_steps = 10;
  uint64_t eval_seed = 1234;
  int sl_log_samples = 64;
  int eval_limit = 0;  // held-out instances scored per epoch, 0 = all

  void Validate(ProblemKind kind) const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// One row of the training log.
struct EpochLog {
  int epoch = 0;
  double mean_cost = 0.0;
  double mean_drop = 0.0;
  double sl_loss = 0.0;
  double wallclock_seconds = 0.0;
  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

std::string TrainingLogCsv(const std::vector<EpochLog>& log);

// Cosine schedule from `peak` at step 0 to zero at `total_steps`.
double CosineLr(double peak, int64_t step, int64_t total_steps);

// Fixed (t, x_t) probes over the first `count` labels, so SL-loss readings
// are comparable across epochs and runs.
struct SlProbe {
  std::vector<int> instance;
  std::vector<NoisyState> states;
};
SlProbe MakeSlProbe(const LabeledDataset& dataset,
                    const DiffusionSchedule& sched, int count);
double ProbeSlLoss(const Policy& policy, const std::vector<GraphInput>& graphs,
                   const LabeledDataset& dataset, const SlProbe& probe);

struct MdpStep {
  int t = 0;
  int s = 0;
  std::vector<uint8_t> xt;
  std::vector<uint8_t> next;
  double logprob = 0.0;
};

struct MdpTrajectory {
  std::string instance_id;
  uint64_t policy_version = 0;
  std::vector<MdpStep> steps;
  std::vector<uint8_t> x0;
  std::vector<double> final_prob;  // x0 prediction of the last step
  Solution solution;
  double cost = 0.0;
};

// Heatmap handed to the decoder at the end of a rollout: variables sampled
// into x0 rank above all others, ties ordered by the final prediction.
Heatmap RolloutHeatmap(const GraphInput& graph, std::span<const uint8_t> x0,
                       std::span<const double> final_prob);

MdpTrajectory Rollout(const Policy& policy, const Instance& instance,
                      const GraphInput& graph, int rollout_steps,
                      const DiffusionSchedule& sched, DecoderKind decoder,
                      Rng& rng);

// `baselines` holds the label cost per trajectory and is required for LCR.
std::vector<double> ComputeRewards(const std::vector<double>& costs,
                                   const std::vector<double>* baselines,
                                   const RewardConfig& rcfg);

// Gradient of the surrogate loss -(1/B) sum_b R_b sum_t log pi(step) with
// every step's forward replayed. Throws ConfigError for trajectories made by
// another policy version.
Gradients ReinforceGradient(const Policy& policy,
                            const std::vector<MdpTrajectory>& trajectories,
                            const std::vector<const GraphInput*>& graphs,
                            const std::vector<double>& rewards,
                            const DiffusionSchedule& sched);

// Applies the mask and adapters of `config` to an SL policy.
Policy PrepareFinetunePolicy(const Policy& pretrained, const TrainConfig& config);

struct TrainState {
  Policy policy;
  AdamState adam;
  int epochs_completed = 0;
  std::vector<EpochLog> log;
  double wallclock_offset = 0.0;
};

struct TrainHooks {
  // Held-out set for per-epoch drop; the training set is used when null.
  const LabeledDataset* heldout = nullptr;
  // Called after every epoch (and once for the starting point).
  std::function<void(const TrainState&)> on_epoch;
};

TrainState PretrainSl(const TrainConfig& config, const LabeledDataset& dataset,
                      const DiffusionSchedule& sched, TrainState start,
                      const TrainHooks& hooks = {});

TrainState FinetuneRl(const TrainConfig& config, const LabeledDataset& dataset,
                      const RewardConfig& rcfg, const DiffusionSchedule& sched,
                      TrainState start, const TrainHooks& hooks = {});

// Fresh state for a run: SL from initialization or RL from a pretrained
// policy (mask and adapters applied).
TrainState InitialSlState(const GnnConfig& gnn, uint64_t seed);
TrainState InitialRlState(const Policy& pretrained, const TrainConfig& config);

}  // namespace nco

#endif  // NCO_TRAINING_H_
