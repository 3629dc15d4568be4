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

#include "nco/training.h"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace nco {
namespace {

constexpr uint64_t kProbeSeed = 0x51A7E5ULL;

std::vector<GraphInput> BuildGraphs(const LabeledDataset& dataset,
                                    const GnnConfig& config) {
  std::vector<GraphInput> graphs(dataset.size());
  ParallelFor(dataset.size(), [&](int k) {
    graphs[k] = BuildGraph(dataset.instances[k], config);
  });
  return graphs;
}

void ClipGradients(Gradients& g, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = std::sqrt(g.SquaredNorm());
  if (norm > max_norm) g.Scale(max_norm / norm);
}

LabeledDataset EvalSubset(const LabeledDataset& train, const TrainHooks& hooks,
                          int limit) {
  LabeledDataset d = hooks.heldout != nullptr ? *hooks.heldout : train;
  if (limit > 0 && limit < d.size()) {
    d.instances.resize(limit);
    d.labels.resize(limit);
    d.label_costs.resize(limit);
  }
  return d;
}

class EpochRecorder {
 public:
  EpochRecorder(const TrainConfig& config, const LabeledDataset& train,
                const std::vector<GraphInput>& graphs,
                const DiffusionSchedule& sched, const TrainHooks& hooks,
                double offset)
      : config_(config),
        train_(train),
        graphs_(graphs),
        sched_(sched),
        hooks_(hooks),
        eval_(EvalSubset(train, hooks, config.eval_limit)),
        probe_(MakeSlProbe(train, sched, config.sl_log_samples)),
        offset_(offset),
        start_(std::chrono::steady_clock::now()) {}

  void Record(TrainState& st, int epoch) {
    EvalOptions opts;
    opts.decoder = config_.decoder;
    opts.steps = config_.eval_steps;
    opts.seed = config_.eval_seed;
    const EvalReport report = Evaluate(st.policy, eval_, sched_, opts);
    EpochLog row;
    row.epoch = epoch;
    row.mean_cost = report.mean_cost;
    row.mean_drop = report.mean_drop;
    row.sl_loss = ProbeSlLoss(st.policy, graphs_, train_, probe_);
    row.wallclock_seconds =
        offset_ + std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - start_)
                      .count();
    st.log.push_back(row);
    st.epochs_completed = epoch;
    st.wallclock_offset = row.wallclock_seconds;
    if (hooks_.on_epoch) hooks_.on_epoch(st);
  }

 private:
  const TrainConfig& config_;
  const LabeledDataset& train_;
  const std::vector<GraphInput>& graphs_;
  const DiffusionSchedule& sched_;
  const TrainHooks& hooks_;
  LabeledDataset eval_;
  SlProbe probe_;
  double offset_;
  std::chrono::steady_clock::time_point start_;
};

std::vector<int> Shuffled(int count, Rng& rng) {
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  for (int i = count - 1; i > 0; --i) {
    std::swap(order[i], order[rng.Below(i + 1)]);
  }
  return order;
}

void CheckRun(const TrainConfig& config, const LabeledDataset& dataset,
              const Policy& policy, const DiffusionSchedule& sched) {
  config.Validate(dataset.kind);
  if (policy.params.config.kind != dataset.kind) {
    throw ConfigError("policy and dataset problem kinds differ");
  }
  if (dataset.size() == 0) throw DataError("training dataset is empty");
  if (config.rollout_steps > sched.T() || config.eval_steps > sched.T()) {
    throw ConfigError("rollout_steps and eval_steps must not exceed T = " +
                      std::to_string(sched.T()));
  }
}

}  // namespace

std::string_view RewardModeName(RewardMode m) {
  return m == RewardMode::kStandard ? "sr" : "lcr";
}

RewardMode ParseRewardMode(std::string_view name) {
  if (name == "sr") return RewardMode::kStandard;
  if (name == "lcr") return RewardMode::kLabelCentered;
  throw ConfigError("unknown reward mode '" + std::string(name) +
                    "' (expected sr or lcr)");
}

std::string_view FinetuneModeName(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::kHybrid:
      return "hybrid";
    case FinetuneMode::kFull:
      return "full";
    case FinetuneMode::kFrozen:
      return "frozen";
  }
  return "hybrid";
}

FinetuneMode ParseFinetuneMode(std::string_view name) {
  if (name == "hybrid") return FinetuneMode::kHybrid;
  if (name == "full") return FinetuneMode::kFull;
  if (name == "frozen") return FinetuneMode::kFrozen;
  throw ConfigError("unknown finetune mode '" + std::string(name) +
                    "' (expected hybrid, full or frozen)");
}

void TrainConfig::Validate(ProblemKind kind) const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(epochs >= 0, "epochs must be >= 0");
  require(samples_per_epoch >= 1, "samples_per_epoch must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr > 0.0 && sl_lr > 0.0, "learning rates must be positive");
  require(rollout_steps >= 1, "rollout_steps must be >= 1");
  require(lora_rank >= 1, "lora_rank must be >= 1");
  require(lora_alpha > 0.0, "lora_alpha must be positive");
  require(selective_layers >= 0, "selective_layers must be >= 0");
  require(bn_momentum > 0.0 && bn_momentum <= 1.0,
          "bn_momentum must lie in (0, 1]");
  require(max_grad_norm >= 0.0, "max_grad_norm must be >= 0");
  require(eval_steps >= 1, "eval_steps must be >= 1");
  require(sl_log_samples >= 0, "sl_log_samples must be >= 0");
  require(eval_limit >= 0, "eval_limit must be >= 0");
  require(kind == ProblemKind::kTsp || decoder == DecoderKind::kGreedy,
          "mis supports only the greedy decoder");
}

std::string TrainingLogCsv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,mean_cost,mean_drop,sl_loss,wallclock_seconds\n";
  for (const EpochLog& r : log) {
    os << r.epoch << ',' << r.mean_cost << ',' << r.mean_drop << ','
       << r.sl_loss << ',' << r.wallclock_seconds << '\n';
  }
  return os.str();
}

double CosineLr(double peak, int64_t step, int64_t total_steps) {
  if (total_steps <= 0) return peak;
  const double frac =
      static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * frac));
}

SlProbe MakeSlProbe(const LabeledDataset& dataset,
                    const DiffusionSchedule& sched, int count) {
  SlProbe probe;
  const Rng root(kProbeSeed);
  for (int k = 0; k < std::min(count, dataset.size()); ++k) {
    Rng rng = root.Fork(IdOf(dataset.instances[k]));
    const int t = 1 + static_cast<int>(rng.Below(sched.T()));
    probe.instance.push_back(k);
    probe.states.push_back(
        ForwardSample(dataset.labels[k].ToVariables(), t, sched, rng));
  }
  return probe;
}

double ProbeSlLoss(const Policy& policy, const std::vector<GraphInput>& graphs,
                   const LabeledDataset& dataset, const SlProbe& probe) {
  const int count = static_cast<int>(probe.instance.size());
  if (count == 0) return 0.0;
  std::vector<double> losses(count);
  ParallelFor(count, [&](int j) {
    const int k = probe.instance[j];
    losses[j] = SlLossAt(policy, graphs[k], dataset.labels[k].ToVariables(),
                         probe.states[j], NormMode::kRunning);
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / count;
}

Heatmap RolloutHeatmap(const GraphInput& graph, std::span<const uint8_t> x0,
                       std::span<const double> final_prob) {
  std::vector<double> vars(x0.size());
  for (size_t k = 0; k < vars.size(); ++k) {
    vars[k] = 0.5 * x0[k] + 0.5 * final_prob[k];
  }
  return Heatmap::FromVariables(graph.kind, graph.n, vars);
}

MdpTrajectory Rollout(const Policy& policy, const Instance& instance,
                      const GraphInput& graph, int rollout_steps,
                      const DiffusionSchedule& sched, DecoderKind decoder,
                      Rng& rng) {
  const std::vector<int> grid = InferenceGrid(sched.T(), rollout_steps);
  MdpTrajectory traj;
  traj.instance_id = IdOf(instance);
  traj.policy_version = policy.version;
  NoisyState state{sched.T(), std::vector<uint8_t>(graph.num_variables())};
  for (uint8_t& b : state.bits) b = rng.Bernoulli(0.5) ? 1 : 0;
  for (int k = 0; k < rollout_steps; ++k) {
    ReverseStepResult r =
        ReverseStep(policy, graph, state, grid[k + 1], sched, rng);
    MdpStep step;
    step.t = state.t;
    step.s = grid[k + 1];
    step.xt = std::move(state.bits);
    step.next = r.next.bits;
    step.logprob = r.logprob;
    traj.steps.push_back(std::move(step));
    if (k + 1 == rollout_steps) traj.final_prob = std::move(r.prediction.x0);
    state = std::move(r.next);
  }
  traj.x0 = std::move(state.bits);
  traj.solution =
      Decode(decoder, RolloutHeatmap(graph, traj.x0, traj.final_prob), instance);
  traj.cost = Cost(instance, traj.solution);
  return traj;
}

std::vector<double> ComputeRewards(const std::vector<double>& costs,
                                   const std::vector<double>* baselines,
                                   const RewardConfig& rcfg) {
  std::vector<double> rewards(costs.size());
  if (rcfg.mode == RewardMode::kLabelCentered) {
    if (baselines == nullptr || baselines->size() != costs.size()) {
      throw ConfigError("label-centered reward needs one label cost per sample");
    }
    for (size_t k = 0; k < costs.size(); ++k) {
      rewards[k] = -(costs[k] - (*baselines)[k]);
    }
    return rewards;
  }
  if (costs.size() < 2) {
    throw ConfigError("standard reward needs a batch of at least 2");
  }
  const double n = static_cast<double>(costs.size());
  double mean = 0.0;
  for (double c : costs) mean -= c;
  mean /= n;
  double var = 0.0;
  for (double c : costs) var += (-c - mean) * (-c - mean);
  const double sd = std::sqrt(var / n);
  for (size_t k = 0; k < costs.size(); ++k) {
    rewards[k] = (-costs[k] - mean) / (sd + rcfg.sr_epsilon);
  }
  return rewards;
}

Gradients ReinforceGradient(const Policy& policy,
                            const std::vector<MdpTrajectory>& trajectories,
                            const std::vector<const GraphInput*>& graphs,
                            const std::vector<double>& rewards,
                            const DiffusionSchedule& sched) {
  const int batch = static_cast<int>(trajectories.size());
  if (static_cast<int>(rewards.size()) != batch ||
      static_cast<int>(graphs.size()) != batch) {
    throw ConfigError("reinforce needs one reward and graph per trajectory");
  }
  for (const MdpTrajectory& tr : trajectories) {
    if (tr.policy_version != policy.version) {
      throw ConfigError("stale trajectory for " + tr.instance_id +
                        ": made by policy version " +
                        std::to_string(tr.policy_version) + ", current is " +
                        std::to_string(policy.version));
    }
  }
  std::vector<Gradients> parts(batch);
  ParallelFor(batch, [&](int b) {
    parts[b] = Gradients::ZerosLike(policy);
    if (rewards[b] == 0.0) return;
    const GraphInput& graph = *graphs[b];
    const double weight = -rewards[b] / batch;
    for (const MdpStep& step : trajectories[b].steps) {
      GnnTape tape;
      const GnnOutput out = Forward(policy, graph, step.xt, step.t,
                                    NormMode::kRunning, &tape);
      const double lp = TransitionLogProb(sched, step.t, step.s, step.xt,
                                          step.next, out.x0);
      if (std::abs(lp - step.logprob) > 1e-9 * std::max(1.0, std::abs(lp))) {
        throw NumericalError("replayed log-prob of " +
                             trajectories[b].instance_id +
                             " differs from the recorded value");
      }
      std::vector<double> dprob = TransitionLogProbGrad(
          sched, step.t, step.s, step.xt, step.next, out.x0);
      for (double& d : dprob) d *= weight;
      Backward(policy, tape, ProbGradToLogitGrad(graph, out, dprob), parts[b]);
    }
  });
  Gradients total = Gradients::ZerosLike(policy);
  for (const Gradients& g : parts) total.Add(g);
  return total;
}

Policy PrepareFinetunePolicy(const Policy& pretrained,
                             const TrainConfig& config) {
  Policy p;
  p.params = MergeLora(pretrained.params, pretrained.lora);
  p.version = pretrained.version;
  const GnnConfig& g = p.params.config;
  switch (config.finetune) {
    case FinetuneMode::kHybrid:
      p.mask = FinetuneMask::Hybrid(g, config.selective_layers);
      p.lora = MakeLora(p.params, p.mask, config.lora_rank, config.lora_alpha,
                        MixSeed(config.seed, HashString("lora")));
      break;
    case FinetuneMode::kFull:
      p.mask = FinetuneMask::AllFull(g);
      break;
    case FinetuneMode::kFrozen:
      p.mask = FinetuneMask::AllFrozen(g);
      break;
  }
  return p;
}

TrainState InitialSlState(const GnnConfig& gnn, uint64_t seed) {
  TrainState st;
  st.policy = MakePolicy(gnn, seed);
  return st;
}

TrainState InitialRlState(const Policy& pretrained, const TrainConfig& config) {
  TrainState st;
  st.policy = config.epochs == 0 ? pretrained
                                 : PrepareFinetunePolicy(pretrained, config);
  return st;
}

TrainState PretrainSl(const TrainConfig& config, const LabeledDataset& dataset,
                      const DiffusionSchedule& sched, TrainState start,
                      const TrainHooks& hooks) {
  CheckRun(config, dataset, start.policy, sched);
  TrainState st = std::move(start);
  const std::vector<GraphInput> graphs =
      BuildGraphs(dataset, st.policy.params.config);
  std::vector<std::vector<uint8_t>> targets(dataset.size());
  for (int k = 0; k < dataset.size(); ++k) {
    targets[k] = dataset.labels[k].ToVariables();
  }
  EpochRecorder recorder(config, dataset, graphs, sched, hooks,
                         st.wallclock_offset);
  if (st.log.empty()) recorder.Record(st, 0);

  const int n = dataset.size();
  const int64_t batches = (n + config.batch_size - 1) / config.batch_size;
  const int64_t total = batches * config.epochs;
  const Rng root(config.seed);
  for (int epoch = st.epochs_completed + 1; epoch <= config.epochs; ++epoch) {
    Rng er = root.Fork(MixSeed(HashString("sl"), epoch));
    const std::vector<int> order = Shuffled(n, er);
    for (int64_t b = 0; b < batches; ++b) {
      const int lo = static_cast<int>(b * config.batch_size);
      const int size = std::min(config.batch_size, n - lo);
      std::vector<const GraphInput*> members(size);
      std::vector<int> ts(size);
      std::vector<uint8_t> x0, xt;
      for (int j = 0; j < size; ++j) {
        const int k = order[lo + j];
        Rng rng = er.Fork(static_cast<uint64_t>(lo + j));
        ts[j] = 1 + static_cast<int>(rng.Below(sched.T()));
        const NoisyState noisy = ForwardSample(targets[k], ts[j], sched, rng);
        members[j] = &graphs[k];
        x0.insert(x0.end(), targets[k].begin(), targets[k].end());
        xt.insert(xt.end(), noisy.bits.begin(), noisy.bits.end());
      }
      const GraphInput batch = BatchGraphs(members);
      Gradients grad = Gradients::ZerosLike(st.policy);
      GnnTape tape;
      SlLossBatch(st.policy, batch, x0, xt, ts, NormMode::kBatch, &grad, &tape);
      const NormBatchStats stats = ExtractNormStats(tape);
      ClipGradients(grad, config.max_grad_norm);
      const int64_t step = (epoch - 1) * batches + b;
      ApplyUpdate(st.policy, grad, st.adam,
                  CosineLr(config.sl_lr, step, total));
      UpdateRunningStats(st.policy, stats, config.bn_momentum);
    }
    recorder.Record(st, epoch);
  }
  return st;
}

TrainState FinetuneRl(const TrainConfig& config, const LabeledDataset& dataset,
                      const RewardConfig& rcfg, const DiffusionSchedule& sched,
                      TrainState start, const TrainHooks& hooks) {
  CheckRun(config, dataset, start.policy, sched);
  if (rcfg.mode == RewardMode::kStandard && config.batch_size < 2) {
    throw ConfigError("standard reward needs batch_size >= 2");
  }
  TrainState st = std::move(start);
  const std::vector<GraphInput> graphs =
      BuildGraphs(dataset, st.policy.params.config);
  EpochRecorder recorder(config, dataset, graphs, sched, hooks,
                         st.wallclock_offset);
  if (st.log.empty()) recorder.Record(st, 0);

  const int n = dataset.size();
  const Rng root(config.seed);
  for (int epoch = st.epochs_completed + 1; epoch <= config.epochs; ++epoch) {
    Rng er = root.Fork(MixSeed(HashString("rl"), epoch));
    std::vector<int> order;
    while (static_cast<int>(order.size()) < config.samples_per_epoch) {
      const std::vector<int> pass = Shuffled(n, er);
      order.insert(order.end(), pass.begin(), pass.end());
    }
    for (int lo = 0; lo < config.samples_per_epoch; lo += config.batch_size) {
      const int size = std::min(config.batch_size, config.samples_per_epoch - lo);
      if (rcfg.mode == RewardMode::kStandard && size < 2) break;
      std::vector<MdpTrajectory> trajs(size);
      ParallelFor(size, [&](int j) {
        const int k = order[lo + j];
        Rng rng = er.Fork(static_cast<uint64_t>(lo + j));
        trajs[j] = Rollout(st.policy, dataset.instances[k], graphs[k],
                           config.rollout_steps, sched, config.decoder, rng);
      });
      std::vector<double> costs(size), baselines(size);
      std::vector<const GraphInput*> gptr(size);
      for (int j = 0; j < size; ++j) {
        const int k = order[lo + j];
        costs[j] = trajs[j].cost;
        baselines[j] = dataset.label_costs[k];
        gptr[j] = &graphs[k];
      }
      const std::vector<double> rewards =
          ComputeRewards(costs, &baselines, rcfg);
      Gradients grad = ReinforceGradient(st.policy, trajs, gptr, rewards, sched);
      ClipGradients(grad, config.max_grad_norm);
      ApplyUpdate(st.policy, grad, st.adam, config.lr);
    }
    recorder.Record(st, epoch);
  }
  return st;
}

}  // namespace nco
