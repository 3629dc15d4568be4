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

#include "nco/config.h"

#include <set>

namespace nco {
namespace {

using nlohmann::json;

// Reads keys of one JSON object and rejects the ones nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(Where("") + " must be an object");
  }

  template <typename T>
  void Get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError("expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError("expected a string");
      }
      out = it->get<T>();
    } catch (const std::exception& e) {
      throw ConfigError(Where(key) + ": " + e.what());
    }
  }

  // Enum stored as a name; `parse` throws ConfigError on unknown names.
  template <typename E, typename Parse>
  void GetEnum(const std::string& key, E& out, Parse parse) {
    std::string name;
    bool present = j_.contains(key);
    Get(key, name);
    if (!present) return;
    try {
      out = parse(name);
    } catch (const ConfigError& e) {
      throw ConfigError(Where(key) + ": " + e.what());
    }
  }

  template <typename T>
  void GetObject(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    FromJson(*it, out, Where(key));
  }

  void Finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError("unknown config key '" + Where(it.key()) + "'");
      }
    }
  }

 private:
  std::string Where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

EvalOptions EvalSpec::ToOptions() const {
  EvalOptions o;
  o.decoder = decoder;
  o.refinement.kind = refinement;
  o.refinement.two_opt.max_exchanges = two_opt_budget;
  o.refinement.rewrite.iterations = rewrite_iterations;
  o.refinement.rewrite.steps = rewrite_steps;
  o.refinement.rewrite.noise_t = rewrite_noise_t;
  o.steps = steps;
  o.seed = seed;
  return o;
}

json ToJson(const GnnConfig& c) {
  return {{"kind", KindName(c.kind)},
          {"depth", c.depth},
          {"hidden", c.hidden},
          {"time_embed_dim", c.time_embed_dim},
          {"node_pos_dim", c.node_pos_dim},
          {"mlp_hidden", c.mlp_hidden}};
}

void FromJson(const json& j, GnnConfig& c, const std::string& path) {
  Reader r(j, path);
  r.GetEnum("kind", c.kind, ParseKind);
  r.Get("depth", c.depth);
  r.Get("hidden", c.hidden);
  r.Get("time_embed_dim", c.time_embed_dim);
  r.Get("node_pos_dim", c.node_pos_dim);
  r.Get("mlp_hidden", c.mlp_hidden);
  r.Finish();
}

json ToJson(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"samples_per_epoch", c.samples_per_epoch},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"sl_lr", c.sl_lr},
          {"rollout_steps", c.rollout_steps},
          {"decoder", DecoderName(c.decoder)},
          {"seed", c.seed},
          {"finetune", FinetuneModeName(c.finetune)},
          {"lora_rank", c.lora_rank},
          {"lora_alpha", c.lora_alpha},
          {"selective_layers", c.selective_layers},
          {"bn_momentum", c.bn_momentum},
          {"max_grad_norm", c.max_grad_norm},
          {"eval_steps", c.eval_steps},
          {"eval_seed", c.eval_seed},
          {"sl_log_samples", c.sl_log_samples},
          {"eval_limit", c.eval_limit}};
}

void FromJson(const json& j, TrainConfig& c, const std::string& path) {
  Reader r(j, path);
  r.Get("epochs", c.epochs);
  r.Get("samples_per_epoch", c.samples_per_epoch);
  r.Get("batch_size", c.batch_size);
  r.Get("lr", c.lr);
  r.Get("sl_lr", c.sl_lr);
  r.Get("rollout_steps", c.rollout_steps);
  r.GetEnum("decoder", c.decoder, ParseDecoder);
  r.Get("seed", c.seed);
  r.GetEnum("finetune", c.finetune, ParseFinetuneMode);
  r.Get("lora_rank", c.lora_rank);
  r.Get("lora_alpha", c.lora_alpha);
  r.Get("selective_layers", c.selective_layers);
  r.Get("bn_momentum", c.bn_momentum);
  r.Get("max_grad_norm", c.max_grad_norm);
  r.Get("eval_steps", c.eval_steps);
  r.Get("eval_seed", c.eval_seed);
  r.Get("sl_log_samples", c.sl_log_samples);
  r.Get("eval_limit", c.eval_limit);
  r.Finish();
}

json ToJson(const RewardConfig& c) {
  return {{"mode", RewardModeName(c.mode)}, {"sr_epsilon", c.sr_epsilon}};
}

void FromJson(const json& j, RewardConfig& c, const std::string& path) {
  Reader r(j, path);
  r.GetEnum("mode", c.mode, ParseRewardMode);
  r.Get("sr_epsilon", c.sr_epsilon);
  r.Finish();
}

json ToJson(const BetaSpec& c) {
  return {{"shape", c.shape == BetaSpec::Shape::kLinear ? "linear" : "cosine"},
          {"beta_min", c.beta_min},
          {"beta_max", c.beta_max}};
}

void FromJson(const json& j, BetaSpec& c, const std::string& path) {
  Reader r(j, path);
  r.GetEnum("shape", c.shape, [](std::string_view s) {
    if (s == "linear") return BetaSpec::Shape::kLinear;
    if (s == "cosine") return BetaSpec::Shape::kCosine;
    throw ConfigError("unknown beta shape '" + std::string(s) +
                      "' (expected linear or cosine)");
  });
  r.Get("beta_min", c.beta_min);
  r.Get("beta_max", c.beta_max);
  r.Finish();
}

json ToJson(const DataSpec& c) {
  return {{"kind", KindName(c.kind)},
          {"n", c.n},
          {"er_p", c.er_p},
          {"train_count", c.train_count},
          {"heldout_count", c.heldout_count},
          {"seed", c.seed},
          {"heldout_seed", c.heldout_seed},
          {"oracle_tsp_max_n", c.oracle_tsp_max_n},
          {"oracle_mis_max_n", c.oracle_mis_max_n},
          {"suboptimal", c.suboptimal},
          {"suboptimal_budget", c.suboptimal_budget},
          {"suboptimal_restarts", c.suboptimal_restarts}};
}

void FromJson(const json& j, DataSpec& c, const std::string& path) {
  Reader r(j, path);
  r.GetEnum("kind", c.kind, ParseKind);
  r.Get("n", c.n);
  r.Get("er_p", c.er_p);
  r.Get("train_count", c.train_count);
  r.Get("heldout_count", c.heldout_count);
  r.Get("seed", c.seed);
  r.Get("heldout_seed", c.heldout_seed);
  r.Get("oracle_tsp_max_n", c.oracle_tsp_max_n);
  r.Get("oracle_mis_max_n", c.oracle_mis_max_n);
  r.Get("suboptimal", c.suboptimal);
  r.Get("suboptimal_budget", c.suboptimal_budget);
  r.Get("suboptimal_restarts", c.suboptimal_restarts);
  r.Finish();
}

json ToJson(const EvalSpec& c) {
  return {{"decoder", DecoderName(c.decoder)},
          {"refinement", RefinementName(c.refinement)},
          {"two_opt_budget", c.two_opt_budget},
          {"rewrite_iterations", c.rewrite_iterations},
          {"rewrite_steps", c.rewrite_steps},
          {"rewrite_noise_t", c.rewrite_noise_t},
          {"steps", c.steps},
          {"seed", c.seed}};
}

void FromJson(const json& j, EvalSpec& c, const std::string& path) {
  Reader r(j, path);
  r.GetEnum("decoder", c.decoder, ParseDecoder);
  r.GetEnum("refinement", c.refinement, ParseRefinement);
  r.Get("two_opt_budget", c.two_opt_budget);
  r.Get("rewrite_iterations", c.rewrite_iterations);
  r.Get("rewrite_steps", c.rewrite_steps);
  r.Get("rewrite_noise_t", c.rewrite_noise_t);
  r.Get("steps", c.steps);
  r.Get("seed", c.seed);
  r.Finish();
}

json ToJson(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"data", ToJson(c.data)},
          {"diffusion_steps", c.diffusion_steps},
          {"beta", ToJson(c.beta)},
          {"gnn", ToJson(c.gnn)},
          {"pretrain", ToJson(c.pretrain)},
          {"finetune", ToJson(c.finetune)},
          {"reward", ToJson(c.reward)},
          {"eval", ToJson(c.eval)}};
}

void FromJson(const json& j, ExperimentConfig& c, const std::string& path) {
  Reader r(j, path);
  r.Get("name", c.name);
  r.GetObject("data", c.data);
  r.Get("diffusion_steps", c.diffusion_steps);
  r.GetObject("beta", c.beta);
  r.GetObject("gnn", c.gnn);
  r.GetObject("pretrain", c.pretrain);
  r.GetObject("finetune", c.finetune);
  r.GetObject("reward", c.reward);
  r.GetObject("eval", c.eval);
  r.Finish();
}

void ExperimentConfig::Validate() const {
  if (name.empty()) throw ConfigError("name must not be empty");
  if (gnn.kind != data.kind) {
    throw ConfigError("gnn.kind must match data.kind");
  }
  gnn.Validate();
  const DiffusionSchedule sched = Schedule();
  pretrain.Validate(data.kind);
  finetune.Validate(data.kind);
  if (data.kind == ProblemKind::kTsp && data.n < 3) {
    throw ConfigError("data.n must be >= 3 for tsp");
  }
  if (data.n < 1) throw ConfigError("data.n must be >= 1");
  if (data.er_p < 0.0 || data.er_p > 1.0) {
    throw ConfigError("data.er_p must lie in [0, 1]");
  }
  if (data.train_count < 1 || data.heldout_count < 0) {
    throw ConfigError("data counts must be positive");
  }
  if (data.suboptimal && data.kind != ProblemKind::kTsp) {
    throw ConfigError("suboptimal labels are only supported for tsp");
  }
  if (data.suboptimal_restarts < 1) {
    throw ConfigError("data.suboptimal_restarts must be >= 1");
  }
  if (data.kind == ProblemKind::kMis && eval.decoder != DecoderKind::kGreedy) {
    throw ConfigError("eval.decoder must be greedy for mis");
  }
  if (data.kind == ProblemKind::kMis &&
      eval.refinement == Refinement::Kind::kTwoOpt) {
    throw ConfigError("two_opt refinement applies to tsp only");
  }
  if (eval.steps < 1 || eval.steps > sched.T()) {
    throw ConfigError("eval.steps must lie in [1, diffusion_steps]");
  }
  if (pretrain.eval_steps > sched.T() || finetune.eval_steps > sched.T() ||
      finetune.rollout_steps > sched.T()) {
    throw ConfigError("step counts must not exceed diffusion_steps");
  }
  if (eval.rewrite_noise_t > sched.T()) {
    throw ConfigError("eval.rewrite_noise_t must not exceed diffusion_steps");
  }
  if (reward.sr_epsilon < 0.0) throw ConfigError("reward.sr_epsilon must be >= 0");
}

ExperimentConfig ParseExperimentConfig(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid json: ") + e.what());
  }
  ExperimentConfig c;
  FromJson(j, c);
  c.Validate();
  return c;
}

std::string SerializeExperimentConfig(const ExperimentConfig& c) {
  return ToJson(c).dump(2) + "\n";
}

ExperimentConfig LoadExperimentConfig(const std::string& path) {
  std::string text;
  try {
    text = ReadFile(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return ParseExperimentConfig(text);
}

LabeledDataset GenerateSplit(const DataSpec& spec, int count, uint64_t seed) {
  std::vector<Instance> v;
  v.reserve(count);
  if (spec.kind == ProblemKind::kTsp) {
    for (TspInstance& t : GenTsp(spec.n, count, seed)) v.emplace_back(std::move(t));
  } else {
    for (MisInstance& m : GenEr(spec.n, spec.er_p, count, seed)) {
      v.emplace_back(std::move(m));
    }
  }
  OracleLimits limits;
  limits.tsp_max_n = spec.oracle_tsp_max_n;
  limits.mis_max_n = spec.oracle_mis_max_n;
  return LabelExactly(std::move(v), seed, limits);
}

LabeledDataset DegradeLabels(const DataSpec& spec, const LabeledDataset& exact,
                             SuboptimalReport* report) {
  return MakeSuboptimalLabels(exact, spec.suboptimal_budget,
                              MixSeed(spec.seed, HashString("suboptimal")),
                              report, spec.suboptimal_restarts);
}

namespace {

ExperimentConfig Tsp20Base(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.data.kind = ProblemKind::kTsp;
  c.data.n = 20;
  c.data.train_count = 2000;
  c.data.heldout_count = 512;
  c.data.seed = 11;
  c.data.heldout_seed = 12;
  c.data.oracle_tsp_max_n = 20;
  c.gnn.kind = ProblemKind::kTsp;
  c.gnn.hidden = 32;
  c.gnn.depth = 4;
  c.gnn.time_embed_dim = 16;
  c.gnn.node_pos_dim = 16;
  c.pretrain.epochs = 15;
  c.pretrain.batch_size = 16;
  c.pretrain.sl_lr = 2e-3;
  c.pretrain.eval_steps = 10;
  c.pretrain.eval_limit = 64;
  c.finetune.epochs = 40;
  c.finetune.samples_per_epoch = 256;
  c.finetune.batch_size = 16;
  c.finetune.lr = 5e-4;
  c.finetune.max_grad_norm = 1.0;
  c.finetune.rollout_steps = 10;
  c.finetune.eval_steps = 10;
  c.finetune.eval_limit = 64;
  c.eval.steps = 10;
  return c;
}

}  // namespace

std::vector<std::string> PresetNames() {
  return {"tsp10-sl", "tsp20-cado-sr", "tsp20-cado-lcr", "mis-er-small",
          "tsp20-suboptimal-labels"};
}

ExperimentConfig Preset(const std::string& name) {
  if (name == "tsp10-sl") {
    ExperimentConfig c = Tsp20Base(name);
    c.data.n = 10;
    c.data.train_count = 200;
    c.data.heldout_count = 64;
    c.data.oracle_tsp_max_n = 16;
    c.pretrain.epochs = 10;
    c.finetune.epochs = 2;
    c.finetune.samples_per_epoch = 64;
    return c;
  }
  if (name == "tsp20-cado-sr" || name == "tsp20-cado-lcr") {
    ExperimentConfig c = Tsp20Base(name);
    c.reward.mode = name == "tsp20-cado-sr" ? RewardMode::kStandard
                                            : RewardMode::kLabelCentered;
    return c;
  }
  if (name == "tsp20-suboptimal-labels") {
    ExperimentConfig c = Tsp20Base(name);
    c.data.suboptimal = true;
    c.data.suboptimal_budget = 40;
    c.data.suboptimal_restarts = 3;
    return c;
  }
  if (name == "mis-er-small") {
    ExperimentConfig c;
    c.name = name;
    c.data.kind = ProblemKind::kMis;
    c.data.n = 24;
    c.data.er_p = 0.15;
    c.data.train_count = 1000;
    c.data.heldout_count = 128;
    c.gnn.kind = ProblemKind::kMis;
    c.gnn.hidden = 32;
    c.gnn.depth = 4;
    c.gnn.time_embed_dim = 16;
    c.pretrain.epochs = 10;
    c.pretrain.batch_size = 16;
    c.pretrain.sl_lr = 2e-3;
    c.finetune.epochs = 10;
    c.finetune.samples_per_epoch = 128;
    c.finetune.batch_size = 32;
    c.finetune.lr = 1e-3;
    c.eval.steps = 10;
    return c;
  }
  std::string known;
  for (const std::string& n : PresetNames()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

}  // namespace nco
