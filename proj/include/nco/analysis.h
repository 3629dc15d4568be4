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

#ifndef NCO_ANALYSIS_H_
#define NCO_ANALYSIS_H_

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "nco/decoders.h"
#include "nco/diffusion.h"
#include "nco/instances.h"

namespace nco {

struct Refinement {
  enum class Kind { kNone, kTwoOpt, kLocalRewrite };
  Kind kind = Kind::kNone;
  TwoOptOptions two_opt;
  LocalRewriteOptions rewrite;
};

std::string_view RefinementName(Refinement::Kind kind);
Refinement::Kind ParseRefinement(std::string_view name);

struct EvalOptions {
  DecoderKind decoder = DecoderKind::kGreedy;
  Refinement refinement;
  int steps = 10;  // denoising steps for the initial heatmap
  uint64_t seed = 0;
};

// Percentage gap to the reference. TSP uses costs, MIS uses set sizes.
double DropPercent(ProblemKind kind, double cost, double reference_cost);

struct EvalRecord {
  std::string id;
  double cost = 0.0;
  double optimal_cost = 0.0;
  double drop = 0.0;
  int hamming = 0;
  double sl_loss = 0.0;  // cross-entropy of the final heatmap vs the label
  double seconds = 0.0;
};

struct EvalReport {
  std::vector<EvalRecord> records;
  double mean_cost = 0.0;
  double mean_drop = 0.0;
  double total_seconds = 0.0;
  // False when the reference costs come from suboptimal labels.
  bool reference_is_optimal = true;

  void Recompute();
  std::string ToJson() const;
  std::string ToCsv() const;
};

EvalReport Evaluate(const Policy& policy, const LabeledDataset& dataset,
                    const DiffusionSchedule& sched, const EvalOptions& options);
// Same pipeline with each label's indicator as the heatmap (an oracle
// policy). Local Rewrite is rejected since it needs a network.
EvalReport EvaluateLabelHeatmaps(const LabeledDataset& dataset,
                                 const EvalOptions& options);

// Undefined (nullopt) when either column has zero variance.
std::optional<double> Pearson(const std::vector<double>& x,
                              const std::vector<double>& y);
// Pearson on average ranks.
std::optional<double> Spearman(const std::vector<double>& x,
                               const std::vector<double>& y);
std::vector<double> AverageRanks(const std::vector<double>& x);

struct MismatchRecord {
  std::string id;
  double sl_loss = 0.0;
  int hamming = 0;
  double drop = 0.0;
};

struct Correlation {
  std::optional<double> pearson;
  std::optional<double> spearman;
};

struct MismatchStudy {
  std::vector<MismatchRecord> records;
  Correlation loss_vs_hamming;
  Correlation hamming_vs_drop;

  std::string ToJson() const;
  std::string ToCsv() const;
};

MismatchStudy MismatchFromReport(const EvalReport& report);
MismatchStudy RunMismatchStudy(const Policy& policy,
                               const LabeledDataset& dataset,
                               const DiffusionSchedule& sched,
                               DecoderKind decoder, int steps, uint64_t seed);

// drop[policy][test decoder]; index 0 = greedy, 1 = nearest neighbour.
using DropMatrix = std::array<std::array<double, 2>, 2>;

DropMatrix DecoderMismatchExperiment(const Policy& policy_greedy,
                                     const Policy& policy_nn,
                                     const LabeledDataset& dataset,
                                     const DiffusionSchedule& sched, int steps,
                                     uint64_t seed);

struct CurvePoint {
  int epoch = 0;
  double mean_cost = 0.0;
  double mean_drop = 0.0;
  double sl_loss = 0.0;
  double wallclock_seconds = 0.0;
};

struct Curve {
  std::string source;
  std::vector<CurvePoint> points;
  // Drop fell from the first to the last row while the SL loss did not.
  bool divergent = false;
};

Curve ParseTrainingLog(const std::string& text, const std::string& source);
bool IsDivergent(const std::vector<CurvePoint>& points);

struct CurveSet {
  std::vector<Curve> curves;
  int divergent_count = 0;

  std::string ToCsv() const;
  std::string ToJson() const;
};

CurveSet ExtractCurves(const std::vector<std::string>& log_paths);

}  // namespace nco

#endif  // NCO_ANALYSIS_H_
