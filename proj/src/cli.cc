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


#include "nco/cli.h"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nco/analysis.h"
#include "nco/checkpoint.h"
#include "nco/common.h"
#include "nco/config.h"
#include "nco/instances.h"
#include "nco/training.h"

namespace nco {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonArgs {
  std::string config;
  std::optional<uint64_t> seed;
  int workers = 0;
  std::string out = ".";
  std::string data;  // dataset directory, defaults to `out`
};

struct Layout {
  fs::path out;
  fs::path data;

  std::string Train() const { return (data / "train.jsonl").string(); }
  std::string Heldout() const { return (data / "heldout.jsonl").string(); }
  std::string File(const std::string& name) const {
    return (out / name).string();
  }
};

ExperimentConfig ResolveConfig(const std::string& ref) {
  if (ref.empty()) throw ConfigError("--config is required");
  if (fs::is_regular_file(ref)) return LoadExperimentConfig(ref);
  const std::vector<std::string> names = PresetNames();
  if (std::find(names.begin(), names.end(), ref) != names.end()) {
    return Preset(ref);
  }
  std::string known;
  for (const std::string& n : names) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("--config '" + ref +
                    "' is neither a readable file nor a preset (" + known +
                    ")");
}

Layout MakeLayout(const CommonArgs& args) {
  Layout l;
  l.out = args.out;
  l.data = args.data.empty() ? l.out : fs::path(args.data);
  std::error_code ec;
  fs::create_directories(l.out, ec);
  if (ec) throw ConfigError("cannot create '" + args.out + "': " + ec.message());
  return l;
}

void WriteJson(const std::string& path, const json& j) {
  WriteFileAtomic(path, j.dump(2) + "\n");
}

double Seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

double MeanLabelCost(const LabeledDataset& d) {
  double s = 0.0;
  for (double c : d.label_costs) s += c;
  return d.size() > 0 ? s / d.size() : 0.0;
}

json SplitSummary(const LabeledDataset& d) {
  return {{"count", d.size()},
          {"mean_label_cost", MeanLabelCost(d)},
          {"provenance", ProvenanceName(d.provenance)},
          {"hash", DatasetHash(d)}};
}

json LogJson(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"mean_cost", e.mean_cost},
          {"mean_drop", e.mean_drop},
          {"sl_loss", e.sl_loss},
          {"wallclock_seconds", e.wallclock_seconds}};
}

LabeledDataset LoadSplit(const std::string& path, ProblemKind kind) {
  LabeledDataset d = LoadDataset(path);
  if (d.kind != kind) {
    throw DataError("'" + path + "' holds " +
                    std::string(KindName(d.kind)) +
                    " instances but the config asks for " +
                    std::string(KindName(kind)));
  }
  return d;
}

int CmdGenData(ExperimentConfig cfg, const CommonArgs& args, std::ostream& out) {
  if (args.seed) cfg.data.seed = *args.seed;
  cfg.Validate();
  const Layout l = MakeLayout(args);
  const auto start = std::chrono::steady_clock::now();
  const DataSpec& spec = cfg.data;
  LabeledDataset train = GenerateSplit(spec, spec.train_count, spec.seed);
  const LabeledDataset held =
      GenerateSplit(spec, spec.heldout_count, spec.heldout_seed);
  json summary = {{"config", ToJson(cfg)}};
  if (spec.suboptimal) {
    SuboptimalReport rep;
    train = DegradeLabels(spec, train, &rep);
    summary["label_drop"] = {{"mean_percent", rep.mean_drop_percent},
                             {"max_percent", rep.max_drop_percent}};
    out << "suboptimal labels: realized mean drop " << rep.mean_drop_percent
        << "% (max " << rep.max_drop_percent << "%)\n";
  }
  SaveDataset(train, l.Train());
  SaveDataset(held, l.Heldout());
  summary["train"] = SplitSummary(train);
  summary["heldout"] = SplitSummary(held);
  summary["wallclock_seconds"] = Seconds(start);
  WriteJson(l.File("data_summary.json"), summary);
  for (const auto& [name, d] :
       {std::pair<std::string, const LabeledDataset*>{"train", &train},
        {"heldout", &held}}) {
    out << name << ": " << d->size() << " instances, mean label cost "
        << MeanLabelCost(*d) << ", provenance " << ProvenanceName(d->provenance)
        << ", hash " << DatasetHash(*d) << "\n";
  }
  return 0;
}

struct StopRequested {};

// Shared driver of pretrain and finetune: resume handling, per-epoch
// checkpoints and logs, final metadata.
template <typename RunFn>
int RunStage(const ExperimentConfig& cfg, const CommonArgs& args,
             const std::string& stage, const TrainConfig& tc, bool resume,
             int stop_after, const TrainState& fresh, json meta_extra,
             RunFn run, std::ostream& out) {
  const Layout l = MakeLayout(args);
  const LabeledDataset train = LoadSplit(l.Train(), cfg.data.kind);
  const LabeledDataset held = LoadSplit(l.Heldout(), cfg.data.kind);
  const std::string hash = DatasetHash(train);
  const std::string ckpt_path = l.File(stage + ".ckpt.json");
  const std::string log_path = l.File(stage + "_log.csv");

  Checkpoint base;
  base.stage = stage;
  base.diffusion_steps = cfg.diffusion_steps;
  base.beta = cfg.beta;
  base.train = tc;
  base.reward = cfg.reward;
  base.dataset_hash = hash;

  TrainState start = fresh;
  if (resume && fs::exists(ckpt_path)) {
    Checkpoint c = LoadCheckpoint(ckpt_path);
    RequireCompatible(c, stage, cfg.gnn, cfg.diffusion_steps, cfg.beta, tc,
                      cfg.reward, hash);
    start = std::move(c.state);
    out << "resuming " << stage << " after epoch " << start.epochs_completed
        << "\n";
  }

  const int first_epoch = start.epochs_completed;
  TrainHooks hooks;
  hooks.heldout = &held;
  hooks.on_epoch = [&](const TrainState& s) {
    base.state = s;
    SaveCheckpoint(base, ckpt_path);
    WriteFileAtomic(log_path, TrainingLogCsv(s.log));
    const EpochLog& e = s.log.back();
    out << stage << " epoch " << e.epoch << ": drop " << e.mean_drop
        << "% cost " << e.mean_cost << " sl_loss " << e.sl_loss << "\n";
    out.flush();
    if (stop_after > 0 && s.epochs_completed < tc.epochs &&
        s.epochs_completed - first_epoch >= stop_after) {
      throw StopRequested{};
    }
  };
  TrainState final_state;
  try {
    final_state = run(cfg, train, cfg.Schedule(), std::move(start), hooks);
  } catch (const StopRequested&) {
    out << stage << " stopped after epoch " << base.state.epochs_completed
        << "; continue with --resume\n";
    return 0;
  }
  base.state = final_state;
  SaveCheckpoint(base, ckpt_path);
  WriteFileAtomic(log_path, TrainingLogCsv(final_state.log));

  json meta = {{"command", stage},
               {"config", ToJson(cfg)},
               {"dataset_hash", hash},
               {"heldout_hash", DatasetHash(held)},
               {"checkpoint", fs::path(ckpt_path).filename().string()},
               {"log", fs::path(log_path).filename().string()},
               {"epochs_completed", final_state.epochs_completed},
               {"policy_version", final_state.policy.version}};
  if (!final_state.log.empty()) meta["final"] = LogJson(final_state.log.back());
  meta["wallclock_seconds"] = final_state.wallclock_offset;
  for (auto& [k, v] : meta_extra.items()) meta[k] = v;
  WriteJson(l.File(stage + "_meta.json"), meta);
  return 0;
}

int CmdPretrain(ExperimentConfig cfg, const CommonArgs& args, bool resume,
                int stop_after, std::ostream& out) {
  if (args.seed) cfg.pretrain.seed = *args.seed;
  cfg.Validate();
  return RunStage(
      cfg, args, "pretrain", cfg.pretrain, resume, stop_after,
      InitialSlState(cfg.gnn, cfg.pretrain.seed), json::object(),
      [](const ExperimentConfig& c, const LabeledDataset& train,
         const DiffusionSchedule& sched, TrainState st, const TrainHooks& h) {
        return PretrainSl(c.pretrain, train, sched, std::move(st), h);
      },
      out);
}

int CmdFinetune(ExperimentConfig cfg, const CommonArgs& args, bool resume,
                int stop_after, const std::string& pretrained_path,
                std::ostream& out) {
  if (args.seed) cfg.finetune.seed = *args.seed;
  cfg.Validate();
  const Layout l = MakeLayout(args);
  const std::string src =
      pretrained_path.empty() ? l.File("pretrain.ckpt.json") : pretrained_path;
  const Checkpoint pre = LoadCheckpoint(src);
  if (pre.stage != "pretrain") {
    throw ConfigError("'" + src + "' is a " + pre.stage +
                      " checkpoint, expected pretrain");
  }
  if (!(pre.state.policy.params.config == cfg.gnn)) {
    throw ConfigError("'" + src + "' was trained with a different gnn config");
  }
  if (pre.diffusion_steps != cfg.diffusion_steps || !(pre.beta == cfg.beta)) {
    throw ConfigError("'" + src +
                      "' was trained with a different diffusion schedule");
  }
  json extra = {{"pretrained", {{"path", src}, {"hash", HashHex(ReadFile(src))}}}};
  return RunStage(
      cfg, args, "finetune", cfg.finetune, resume, stop_after,
      InitialRlState(pre.state.policy, cfg.finetune), extra,
      [](const ExperimentConfig& c, const LabeledDataset& train,
         const DiffusionSchedule& sched, TrainState st, const TrainHooks& h) {
        return FinetuneRl(c.finetune, train, c.reward, sched, std::move(st), h);
      },
      out);
}

std::string DefaultCheckpoint(const Layout& l) {
  const std::string ft = l.File("finetune.ckpt.json");
  return fs::exists(ft) ? ft : l.File("pretrain.ckpt.json");
}

const LabeledDataset& PickSplit(const Layout& l, const std::string& split,
                                ProblemKind kind,
                                std::optional<LabeledDataset>& slot) {
  if (split != "heldout" && split != "train") {
    throw ConfigError("--split must be heldout or train");
  }
  slot = LoadSplit(split == "train" ? l.Train() : l.Heldout(), kind);
  return *slot;
}

Checkpoint LoadForEval(const std::string& path, const ExperimentConfig& cfg) {
  Checkpoint c = LoadCheckpoint(path);
  if (c.state.policy.params.config.kind != cfg.data.kind) {
    throw ConfigError("'" + path + "' holds a policy for a different problem");
  }
  return c;
}

DiffusionSchedule ScheduleOf(const Checkpoint& c) {
  return DiffusionSchedule::Make(c.diffusion_steps, c.beta);
}

struct EvalArgs {
  std::string checkpoint;
  std::string split = "heldout";
  std::string name = "eval";
  bool oracle = false;
};

int CmdEval(ExperimentConfig cfg, const CommonArgs& args, const EvalArgs& ea,
            std::ostream& out) {
  if (args.seed) cfg.eval.seed = *args.seed;
  cfg.Validate();
  const Layout l = MakeLayout(args);
  std::optional<LabeledDataset> slot;
  const LabeledDataset& data = PickSplit(l, ea.split, cfg.data.kind, slot);
  const EvalOptions opts = cfg.eval.ToOptions();
  EvalReport report;
  json meta = {{"command", "eval"},
               {"config", ToJson(cfg)},
               {"split", ea.split},
               {"dataset_hash", DatasetHash(data)}};
  if (ea.oracle) {
    report = EvaluateLabelHeatmaps(data, opts);
    meta["policy"] = "label_indicator";
  } else {
    const std::string path =
        ea.checkpoint.empty() ? DefaultCheckpoint(l) : ea.checkpoint;
    const Checkpoint c = LoadForEval(path, cfg);
    report = Evaluate(c.state.policy, data, ScheduleOf(c), opts);
    meta["policy"] = {{"checkpoint", path}, {"stage", c.stage}};
  }
  WriteFileAtomic(l.File(ea.name + ".json"), report.ToJson());
  WriteFileAtomic(l.File(ea.name + ".csv"), report.ToCsv());
  meta["mean_drop"] = report.mean_drop;
  meta["mean_cost"] = report.mean_cost;
  meta["wallclock_seconds"] = report.total_seconds;
  WriteJson(l.File(ea.name + "_meta.json"), meta);
  out << "evaluated " << report.records.size() << " instances: mean drop "
      << report.mean_drop << "% mean cost " << report.mean_cost << "\n";
  return 0;
}

struct AnalyzeArgs {
  std::string checkpoint;
  bool oracle = false;
  std::string greedy_checkpoint;
  std::string nn_checkpoint;
  std::vector<std::string> logs;
};

std::string CorrText(const std::optional<double>& v) {
  return v ? std::to_string(*v) : std::string("undefined");
}

int CmdAnalyze(ExperimentConfig cfg, const CommonArgs& args,
               const AnalyzeArgs& aa, std::ostream& out) {
  if (args.seed) cfg.eval.seed = *args.seed;
  cfg.Validate();
  const Layout l = MakeLayout(args);
  const bool pair =
      !aa.greedy_checkpoint.empty() || !aa.nn_checkpoint.empty();
  if (pair && (aa.greedy_checkpoint.empty() || aa.nn_checkpoint.empty())) {
    throw ConfigError(
        "--greedy-checkpoint and --nn-checkpoint must be given together");
  }
  const bool study = aa.oracle || !aa.checkpoint.empty();
  if (!study && !pair && aa.logs.empty()) {
    throw ConfigError(
        "nothing to analyze: pass --checkpoint, --oracle-policy, "
        "--greedy-checkpoint/--nn-checkpoint or --logs");
  }
  std::optional<LabeledDataset> held;
  if (study || pair) held = LoadSplit(l.Heldout(), cfg.data.kind);

  if (study) {
    MismatchStudy ms;
    if (aa.oracle) {
      EvalOptions opts = cfg.eval.ToOptions();
      opts.refinement = {};
      ms = MismatchFromReport(EvaluateLabelHeatmaps(*held, opts));
    } else {
      const Checkpoint c = LoadForEval(aa.checkpoint, cfg);
      ms = RunMismatchStudy(c.state.policy, *held, ScheduleOf(c),
                            cfg.eval.decoder, cfg.eval.steps, cfg.eval.seed);
    }
    WriteFileAtomic(l.File("mismatch.json"), ms.ToJson());
    WriteFileAtomic(l.File("mismatch.csv"), ms.ToCsv());
    out << "mismatch over " << ms.records.size()
        << " instances: spearman(sl_loss, hamming) "
        << CorrText(ms.loss_vs_hamming.spearman)
        << ", spearman(hamming, drop) " << CorrText(ms.hamming_vs_drop.spearman)
        << "\n";
  }
  if (pair) {
    const Checkpoint g = LoadForEval(aa.greedy_checkpoint, cfg);
    const Checkpoint nn = LoadForEval(aa.nn_checkpoint, cfg);
    const DropMatrix m =
        DecoderMismatchExperiment(g.state.policy, nn.state.policy, *held,
                                  ScheduleOf(g), cfg.eval.steps, cfg.eval.seed);
    json j = {{"trained_with", {"greedy", "nearest_neighbor"}},
              {"decoded_with", {"greedy", "nearest_neighbor"}},
              {"drop", {{m[0][0], m[0][1]}, {m[1][0], m[1][1]}}}};
    WriteJson(l.File("decoder_mismatch.json"), j);
    out << "decoder mismatch drop (rows trained, cols decoded; greedy, nn):\n"
        << "  greedy-trained " << m[0][0] << " " << m[0][1] << "\n"
        << "  nn-trained     " << m[1][0] << " " << m[1][1] << "\n";
  }
  if (!aa.logs.empty()) {
    const CurveSet cs = ExtractCurves(aa.logs);
    WriteFileAtomic(l.File("curves.csv"), cs.ToCsv());
    WriteFileAtomic(l.File("curves.json"), cs.ToJson());
    out << cs.curves.size() << " curves, " << cs.divergent_count
        << " divergent\n";
  }
  return 0;
}

void AddCommon(CLI::App* cmd, CommonArgs& a, bool with_data) {
  cmd->add_option("--config", a.config, "config file or preset name")
      ->required();
  cmd->add_option("--seed", a.seed, "override the seed of this stage");
  cmd->add_option("--workers", a.workers, "worker threads (0 = default)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", a.out, "output directory");
  if (with_data) {
    cmd->add_option("--data", a.data, "dataset directory (default: --out)");
  }
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"Cost-aware fine-tuning lab for diffusion heatmap solvers", "nco"};
  app.require_subcommand(1);
  CommonArgs common;
  bool resume = false;
  int stop_after = 0;
  std::string pretrained;
  EvalArgs ea;
  AnalyzeArgs aa;

  CLI::App* gen = app.add_subcommand("gen-data", "generate and label datasets");
  AddCommon(gen, common, false);

  CLI::App* pre = app.add_subcommand("pretrain", "supervised pretraining");
  AddCommon(pre, common, true);
  pre->add_flag("--resume", resume, "continue from the checkpoint in --out");
  pre->add_option("--stop-after", stop_after, "halt after this many epochs")
      ->check(CLI::NonNegativeNumber);

  CLI::App* fine = app.add_subcommand("finetune", "RL fine-tuning");
  AddCommon(fine, common, true);
  fine->add_flag("--resume", resume, "continue from the checkpoint in --out");
  fine->add_option("--stop-after", stop_after, "halt after this many epochs")
      ->check(CLI::NonNegativeNumber);
  fine->add_option("--pretrained", pretrained,
                   "pretrain checkpoint (default: <out>/pretrain.ckpt.json)");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  AddCommon(ev, common, true);
  ev->add_option("--checkpoint", ea.checkpoint,
                 "checkpoint (default: finetune, else pretrain, in --out)");
  ev->add_option("--split", ea.split, "heldout or train");
  ev->add_option("--name", ea.name, "report file stem");
  ev->add_flag("--oracle-policy", ea.oracle, "use label indicators as heatmaps");

  CLI::App* an = app.add_subcommand("analyze", "mismatch and curve analyses");
  AddCommon(an, common, true);
  an->add_option("--checkpoint", aa.checkpoint, "policy for the mismatch study");
  an->add_flag("--oracle-policy", aa.oracle,
               "mismatch study with label-indicator heatmaps");
  an->add_option("--greedy-checkpoint", aa.greedy_checkpoint,
                 "greedy-trained policy for the decoder matrix");
  an->add_option("--nn-checkpoint", aa.nn_checkpoint,
                 "nearest-neighbor-trained policy for the decoder matrix");
  an->add_option("--logs", aa.logs, "training log CSVs for curve extraction");

  std::string show;
  CLI::App* cfgcmd = app.add_subcommand("config", "print a resolved config");
  cfgcmd->add_option("name", show, "config file or preset name")->required();
  cfgcmd->add_flag_callback("--list", [&] {
    for (const std::string& n : PresetNames()) out << n << "\n";
    throw CLI::Success();
  }, "list presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (common.workers > 0) omp_set_num_threads(common.workers);
    if (cfgcmd->parsed()) {
      out << SerializeExperimentConfig(ResolveConfig(show));
      return 0;
    }
    ExperimentConfig cfg = ResolveConfig(common.config);
    if (gen->parsed()) return CmdGenData(cfg, common, out);
    if (pre->parsed()) return CmdPretrain(cfg, common, resume, stop_after, out);
    if (fine->parsed()) return CmdFinetune(cfg, common, resume, stop_after, pretrained, out);
    if (ev->parsed()) return CmdEval(cfg, common, ea, out);
    return CmdAnalyze(cfg, common, aa, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace nco
