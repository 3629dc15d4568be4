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

#include "nco/analysis.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace nco {
namespace {

using nlohmann::json;

json OptionalJson(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

double Mean(const std::vector<double>& v) {
  return v.empty() ? 0.0
                   : std::accumulate(v.begin(), v.end(), 0.0) /
                         static_cast<double>(v.size());
}

}  // namespace

std::string_view RefinementName(Refinement::Kind kind) {
  switch (kind) {
    case Refinement::Kind::kNone:
      return "none";
    case Refinement::Kind::kTwoOpt:
      return "two_opt";
    case Refinement::Kind::kLocalRewrite:
      return "local_rewrite";
  }
  return "none";
}

Refinement::Kind ParseRefinement(std::string_view name) {
  if (name == "none") return Refinement::Kind::kNone;
  if (name == "two_opt") return Refinement::Kind::kTwoOpt;
  if (name == "local_rewrite") return Refinement::Kind::kLocalRewrite;
  throw ConfigError("unknown refinement '" + std::string(name) +
                    "' (expected none, two_opt or local_rewrite)");
}

double DropPercent(ProblemKind kind, double cost, double reference_cost) {
  if (kind == ProblemKind::kTsp) {
    return (cost - reference_cost) / std::abs(reference_cost) * 100.0;
  }
  const double best = -reference_cost;
  const double size = -cost;
  if (best <= 0.0) return 0.0;
  return (best - size) / best * 100.0;
}

void EvalReport::Recompute() {
  mean_cost = 0.0;
  mean_drop = 0.0;
  total_seconds = 0.0;
  for (const EvalRecord& r : records) {
    mean_cost += r.cost;
    mean_drop += r.drop;
    total_seconds += r.seconds;
  }
  if (!records.empty()) {
    mean_cost /= static_cast<double>(records.size());
    mean_drop /= static_cast<double>(records.size());
  }
}

std::string EvalReport::ToJson() const {
  json out;
  out["mean_cost"] = mean_cost;
  out["mean_drop"] = mean_drop;
  out["total_seconds"] = total_seconds;
  out["reference_is_optimal"] = reference_is_optimal;
  json rows = json::array();
  for (const EvalRecord& r : records) {
    rows.push_back({{"id", r.id},
                    {"cost", r.cost},
                    {"optimal_cost", r.optimal_cost},
                    {"drop", r.drop},
                    {"hamming", r.hamming},
                    {"sl_loss", r.sl_loss},
                    {"seconds", r.seconds}});
  }
  out["records"] = std::move(rows);
  return out.dump(2) + "\n";
}

std::string EvalReport::ToCsv() const {
  std::ostringstream os;
  os.precision(17);
  os << "id,cost,optimal_cost,drop,hamming,sl_loss,seconds\n";
  for (const EvalRecord& r : records) {
    os << r.id << ',' << r.cost << ',' << r.optimal_cost << ',' << r.drop
       << ',' << r.hamming << ',' << r.sl_loss << ',' << r.seconds << '\n';
  }
  return os.str();
}

namespace {

// policy == nullptr selects the label-indicator heatmaps.
EvalReport EvaluateImpl(const Policy* policy, const LabeledDataset& dataset,
                        const DiffusionSchedule* sched,
                        const EvalOptions& options) {
  if (policy != nullptr && policy->params.config.kind != dataset.kind) {
    throw ConfigError("policy and dataset problem kinds differ");
  }
  if (dataset.kind == ProblemKind::kMis) {
    if (options.decoder != DecoderKind::kGreedy) {
      throw ConfigError("mis supports only the greedy decoder");
    }
    if (options.refinement.kind == Refinement::Kind::kTwoOpt) {
      throw ConfigError("two_opt refinement applies to tsp only");
    }
  }
  if (policy == nullptr &&
      options.refinement.kind == Refinement::Kind::kLocalRewrite) {
    throw ConfigError("local_rewrite needs a policy");
  }
  EvalReport report;
  report.reference_is_optimal =
      dataset.provenance == LabelProvenance::kExact;
  report.records.resize(dataset.size());
  const Rng root(options.seed);
  ParallelFor(dataset.size(), [&](int k) {
    const Instance& inst = dataset.instances[k];
    const auto start = std::chrono::steady_clock::now();
    Rng rng = root.Fork(IdOf(inst));
    GraphInput graph;
    Heatmap heat;
    if (policy != nullptr) {
      graph = BuildGraph(inst, policy->params.config);
      heat = SampleHeatmap(*policy, graph, options.steps, *sched, rng);
    } else {
      heat = Heatmap::FromSolution(dataset.labels[k]);
    }
    Solution sol;
    switch (options.refinement.kind) {
      case Refinement::Kind::kNone:
        sol = Decode(options.decoder, heat, inst);
        break;
      case Refinement::Kind::kTwoOpt:
        sol = TwoOpt(std::get<TspInstance>(inst),
                     Decode(options.decoder, heat, inst),
                     options.refinement.two_opt);
        break;
      case Refinement::Kind::kLocalRewrite: {
        LocalRewriteResult lr =
            LocalRewrite(*policy, inst, graph, heat, options.decoder, *sched,
                         options.refinement.rewrite, rng);
        sol = std::move(lr.best);
        heat = std::move(lr.best_heatmap);
        break;
      }
    }
    EvalRecord& r = report.records[k];
    r.id = IdOf(inst);
    r.cost = Cost(inst, sol);
    r.optimal_cost = dataset.label_costs[k];
    r.drop = DropPercent(dataset.kind, r.cost, r.optimal_cost);
    r.hamming = Hamming(sol, dataset.labels[k]);
    r.sl_loss = CrossEntropy(heat.ToVariables(), dataset.labels[k].ToVariables());
    r.seconds = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - start)
                    .count();
  });
  report.Recompute();
  return report;
}

}  // namespace

EvalReport Evaluate(const Policy& policy, const LabeledDataset& dataset,
                    const DiffusionSchedule& sched, const EvalOptions& options) {
  return EvaluateImpl(&policy, dataset, &sched, options);
}

EvalReport EvaluateLabelHeatmaps(const LabeledDataset& dataset,
                                 const EvalOptions& options) {
  return EvaluateImpl(nullptr, dataset, nullptr, options);
}

std::optional<double> Pearson(const std::vector<double>& x,
                              const std::vector<double>& y) {
  if (x.size() != y.size()) throw DataError("correlation columns differ in length");
  if (x.size() < 2) return std::nullopt;
  const double mx = Mean(x);
  const double my = Mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> AverageRanks(const std::vector<double>& x) {
  std::vector<size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> Spearman(const std::vector<double>& x,
                               const std::vector<double>& y) {
  return Pearson(AverageRanks(x), AverageRanks(y));
}

std::string MismatchStudy::ToJson() const {
  json out;
  out["loss_vs_hamming"] = {{"pearson", OptionalJson(loss_vs_hamming.pearson)},
                            {"spearman", OptionalJson(loss_vs_hamming.spearman)}};
  out["hamming_vs_drop"] = {{"pearson", OptionalJson(hamming_vs_drop.pearson)},
                            {"spearman", OptionalJson(hamming_vs_drop.spearman)}};
  json rows = json::array();
  for (const MismatchRecord& r : records) {
    rows.push_back({{"id", r.id},
                    {"sl_loss", r.sl_loss},
                    {"hamming", r.hamming},
                    {"drop", r.drop}});
  }
  out["records"] = std::move(rows);
  return out.dump(2) + "\n";
}

std::string MismatchStudy::ToCsv() const {
  std::ostringstream os;
  os.precision(17);
  os << "id,sl_loss,hamming,drop\n";
  for (const MismatchRecord& r : records) {
    os << r.id << ',' << r.sl_loss << ',' << r.hamming << ',' << r.drop << '\n';
  }
  return os.str();
}

MismatchStudy MismatchFromReport(const EvalReport& report) {
  MismatchStudy study;
  std::vector<double> loss, ham, drop;
  for (const EvalRecord& r : report.records) {
    study.records.push_back({r.id, r.sl_loss, r.hamming, r.drop});
    loss.push_back(r.sl_loss);
    ham.push_back(r.hamming);
    drop.push_back(r.drop);
  }
  study.loss_vs_hamming = {Pearson(loss, ham), Spearman(loss, ham)};
  study.hamming_vs_drop = {Pearson(ham, drop), Spearman(ham, drop)};
  return study;
}

MismatchStudy RunMismatchStudy(const Policy& policy,
                               const LabeledDataset& dataset,
                               const DiffusionSchedule& sched,
                               DecoderKind decoder, int steps, uint64_t seed) {
  if (dataset.provenance != LabelProvenance::kExact) {
    throw ConfigError("mismatch study requires exact labels");
  }
  EvalOptions opts;
  opts.decoder = decoder;
  opts.steps = steps;
  opts.seed = seed;
  return MismatchFromReport(Evaluate(policy, dataset, sched, opts));
}

DropMatrix DecoderMismatchExperiment(const Policy& policy_greedy,
                                     const Policy& policy_nn,
                                     const LabeledDataset& dataset,
                                     const DiffusionSchedule& sched, int steps,
                                     uint64_t seed) {
  if (dataset.kind != ProblemKind::kTsp) {
    throw ConfigError("decoder mismatch experiment needs a tsp dataset");
  }
  const Policy* policies[2] = {&policy_greedy, &policy_nn};
  const DecoderKind decoders[2] = {DecoderKind::kGreedy,
                                   DecoderKind::kNearestNeighbor};
  DropMatrix m{};
  for (int p = 0; p < 2; ++p) {
    for (int d = 0; d < 2; ++d) {
      EvalOptions opts;
      opts.decoder = decoders[d];
      opts.steps = steps;
      opts.seed = seed;
      m[p][d] = Evaluate(*policies[p], dataset, sched, opts).mean_drop;
    }
  }
  return m;
}

bool IsDivergent(const std::vector<CurvePoint>& points) {
  if (points.size() < 2) return false;
  const CurvePoint& first = points.front();
  const CurvePoint& last = points.back();
  return last.mean_drop < first.mean_drop && last.sl_loss >= first.sl_loss;
}

Curve ParseTrainingLog(const std::string& text, const std::string& source) {
  static constexpr const char* kHeader =
      "epoch,mean_cost,mean_drop,sl_loss,wallclock_seconds";
  Curve curve;
  curve.source = source;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kHeader) {
        throw DataError(source + " line 1: expected header '" + kHeader + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 5) {
      throw DataError(source + " line " + std::to_string(line_no) +
                      ": expected 5 fields, got " +
                      std::to_string(fields.size()));
    }
    CurvePoint p;
    try {
      size_t used = 0;
      p.epoch = std::stoi(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("epoch");
      double* targets[4] = {&p.mean_cost, &p.mean_drop, &p.sl_loss,
                            &p.wallclock_seconds};
      for (int k = 0; k < 4; ++k) {
        *targets[k] = std::stod(fields[k + 1], &used);
        if (used != fields[k + 1].size()) throw std::invalid_argument("field");
      }
    } catch (const std::logic_error&) {
      throw DataError(source + " line " + std::to_string(line_no) +
                      ": malformed number");
    }
    curve.points.push_back(p);
  }
  if (line_no == 0) throw DataError(source + ": empty training log");
  curve.divergent = IsDivergent(curve.points);
  return curve;
}

CurveSet ExtractCurves(const std::vector<std::string>& log_paths) {
  CurveSet set;
  for (const std::string& path : log_paths) {
    set.curves.push_back(ParseTrainingLog(ReadFile(path), path));
    if (set.curves.back().divergent) ++set.divergent_count;
  }
  return set;
}

std::string CurveSet::ToCsv() const {
  std::ostringstream os;
  os.precision(17);
  os << "source,epoch,mean_cost,mean_drop,sl_loss,wallclock_seconds\n";
  for (const Curve& c : curves) {
    for (const CurvePoint& p : c.points) {
      os << c.source << ',' << p.epoch << ',' << p.mean_cost << ','
         << p.mean_drop << ',' << p.sl_loss << ',' << p.wallclock_seconds
         << '\n';
    }
  }
  return os.str();
}

std::string CurveSet::ToJson() const {
  json out;
  json arr = json::array();
  for (const Curve& c : curves) {
    json pts = json::array();
    for (const CurvePoint& p : c.points) {
      pts.push_back({{"epoch", p.epoch},
                     {"mean_drop", p.mean_drop},
                     {"sl_loss", p.sl_loss}});
    }
    arr.push_back({{"source", c.source},
                   {"divergent", c.divergent},
                   {"points", std::move(pts)}});
  }
  out["curves"] = std::move(arr);
  out["divergent_count"] = divergent_count;
  out["total"] = curves.size();
  return out.dump(2) + "\n";
}

}  // namespace nco
