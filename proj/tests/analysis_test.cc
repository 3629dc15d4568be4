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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "nco/training.h"
#include "test_util.h"

namespace nco {
namespace {

double NaivePearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) /
         std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

// Ranks by counting: rank = 1 + #smaller + (#equal - 1) / 2.
std::vector<double> NaiveRanks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = 1 + less + (equal - 1) / 2;
  }
  return r;
}

TEST(Correlation, MatchesNaiveFormulas) {
  Rng rng(3);
  for (int it = 0; it < 50; ++it) {
    const int n = 3 + static_cast<int>(rng.Below(40));
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = std::floor(rng.Uniform() * 6);  // ties
      y[i] = x[i] * (rng.Uniform() - 0.3) + rng.Uniform();
    }
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) {
      continue;
    }
    EXPECT_EQ(AverageRanks(x), NaiveRanks(x));
    EXPECT_NEAR(*Pearson(x, y), NaivePearson(x, y), 1e-9);
    EXPECT_NEAR(*Spearman(x, y), NaivePearson(NaiveRanks(x), NaiveRanks(y)),
                1e-9);
  }
}

TEST(Correlation, KnownValuesAndUndefinedCases) {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> sq = {1, 4, 9, 16, 25};
  EXPECT_NEAR(*Pearson(a, a), 1.0, 1e-15);
  EXPECT_NEAR(*Spearman(a, sq), 1.0, 1e-15);
  EXPECT_LT(*Pearson(a, sq), 1.0);
  const std::vector<double> rev = {5, 4, 3, 2, 1};
  EXPECT_NEAR(*Spearman(a, rev), -1.0, 1e-15);
  EXPECT_FALSE(Pearson(a, {2, 2, 2, 2, 2}).has_value());
  EXPECT_FALSE(Spearman({1}, {2}).has_value());
  EXPECT_THROW(Pearson(a, {1, 2}), DataError);
}

TEST(Drop, TspAndMisConventions) {
  EXPECT_DOUBLE_EQ(DropPercent(ProblemKind::kTsp, 11.0, 10.0), 10.0);
  EXPECT_DOUBLE_EQ(DropPercent(ProblemKind::kTsp, 10.0, 10.0), 0.0);
  // MIS costs are negated sizes: size 9 against optimum 10 is a 10% drop.
  EXPECT_DOUBLE_EQ(DropPercent(ProblemKind::kMis, -9.0, -10.0), 10.0);
}

LabeledDataset TspSet(int n, int count, uint64_t seed) {
  std::vector<Instance> v;
  for (TspInstance& t : GenTsp(n, count, seed)) v.emplace_back(std::move(t));
  return LabelExactly(std::move(v), seed);
}

TEST(Evaluate, LabelHeatmapsGiveZeroDrop) {
  const LabeledDataset d = TspSet(8, 10, 3);
  for (DecoderKind dec : {DecoderKind::kGreedy, DecoderKind::kNearestNeighbor}) {
    EvalOptions o;
    o.decoder = dec;
    const EvalReport r = EvaluateLabelHeatmaps(d, o);
    EXPECT_EQ(r.mean_drop, 0.0);
    for (const EvalRecord& rec : r.records) {
      EXPECT_EQ(rec.hamming, 0);
      EXPECT_EQ(rec.drop, 0.0);
    }
  }
  std::vector<Instance> v;
  for (MisInstance& m : GenEr(12, 0.3, 6, 2)) v.emplace_back(std::move(m));
  const EvalReport mr = EvaluateLabelHeatmaps(LabelExactly(v, 2), {});
  EXPECT_EQ(mr.mean_drop, 0.0);
  const MismatchStudy ms = MismatchFromReport(EvaluateLabelHeatmaps(d, {}));
  EXPECT_FALSE(ms.loss_vs_hamming.spearman.has_value());
  EXPECT_FALSE(ms.hamming_vs_drop.pearson.has_value());
}

TEST(Evaluate, DeterministicAndConsistent) {
  const LabeledDataset d = TspSet(7, 6, 1);
  const GnnConfig cfg = testing::SmallGnn(ProblemKind::kTsp);
  const Policy p = MakePolicy(cfg, 2);
  const DiffusionSchedule s = DiffusionSchedule::Make(10);
  EvalOptions o;
  o.steps = 5;
  o.seed = 9;
  const EvalReport a = Evaluate(p, d, s, o);
  const EvalReport b = Evaluate(p, d, s, o);
  ASSERT_EQ(a.records.size(), 6u);
  double mean = 0.0;
  for (size_t k = 0; k < a.records.size(); ++k) {
    EXPECT_EQ(a.records[k].cost, b.records[k].cost);
    EXPECT_EQ(a.records[k].sl_loss, b.records[k].sl_loss);
    EXPECT_GE(a.records[k].drop, -1e-9);
    mean += a.records[k].drop / 6;
  }
  EXPECT_NEAR(a.mean_drop, mean, 1e-12);
  o.refinement.kind = Refinement::Kind::kTwoOpt;
  const EvalReport two = Evaluate(p, d, s, o);
  for (size_t k = 0; k < two.records.size(); ++k) {
    EXPECT_LE(two.records[k].cost, a.records[k].cost + 1e-12);
  }
  const auto j = nlohmann::json::parse(a.ToJson());
  EXPECT_EQ(j["records"].size(), 6u);
  const std::string csv = a.ToCsv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Evaluate, RejectsInconsistentOptions) {
  std::vector<Instance> v;
  for (MisInstance& m : GenEr(8, 0.3, 2, 2)) v.emplace_back(std::move(m));
  const LabeledDataset mis = LabelExactly(v, 2);
  EvalOptions nn;
  nn.decoder = DecoderKind::kNearestNeighbor;
  EXPECT_THROW(EvaluateLabelHeatmaps(mis, nn), ConfigError);
  EvalOptions two;
  two.refinement.kind = Refinement::Kind::kTwoOpt;
  EXPECT_THROW(EvaluateLabelHeatmaps(mis, two), ConfigError);
  const Policy tsp_policy = MakePolicy(testing::SmallGnn(ProblemKind::kTsp), 1);
  EXPECT_THROW(Evaluate(tsp_policy, mis, DiffusionSchedule::Make(5), {}),
               ConfigError);
}

TEST(Mismatch, RequiresExactLabels) {
  const LabeledDataset exact = TspSet(7, 4, 1);
  const LabeledDataset sub = MakeSuboptimalLabels(exact, 1, 1);
  const Policy p = MakePolicy(testing::SmallGnn(ProblemKind::kTsp), 1);
  EXPECT_THROW(RunMismatchStudy(p, sub, DiffusionSchedule::Make(5),
                                DecoderKind::kGreedy, 5, 1),
               ConfigError);
  const MismatchStudy ms = RunMismatchStudy(p, exact, DiffusionSchedule::Make(5),
                                            DecoderKind::kGreedy, 5, 1);
  EXPECT_EQ(ms.records.size(), 4u);
  EXPECT_NO_THROW(nlohmann::json::parse(ms.ToJson()));
}

const char* kDivergentLog =
    "epoch,mean_cost,mean_drop,sl_loss,wallclock_seconds\n"
    "0,4.2,10.0,0.08,1.0\n"
    "1,4.1,8.0,0.20,2.0\n"
    "2,4.0,6.0,0.35,3.0\n";
const char* kConvergentLog =
    "epoch,mean_cost,mean_drop,sl_loss,wallclock_seconds\n"
    "0,4.2,10.0,0.30,1.0\n"
    "1,4.1,8.0,0.20,2.0\n";

TEST(Curves, ParseAndClassify) {
  const Curve a = ParseTrainingLog(kDivergentLog, "a");
  ASSERT_EQ(a.points.size(), 3u);
  EXPECT_EQ(a.points[2].epoch, 2);
  EXPECT_DOUBLE_EQ(a.points[1].sl_loss, 0.20);
  EXPECT_TRUE(a.divergent);
  EXPECT_FALSE(ParseTrainingLog(kConvergentLog, "b").divergent);
  // Written logs parse back to the same numbers.
  std::vector<EpochLog> log = {{0, 4.5, 12.25, 0.125, 0.5}, {1, 4.25, 9.5, 0.25, 1.5}};
  const Curve back = ParseTrainingLog(TrainingLogCsv(log), "w");
  EXPECT_DOUBLE_EQ(back.points[1].mean_drop, 9.5);
  EXPECT_TRUE(back.divergent);
}

TEST(Curves, MalformedLogsNameTheLine) {
  try {
    ParseTrainingLog(
        "epoch,mean_cost,mean_drop,sl_loss,wallclock_seconds\n0,1,2,3,4\n1,x,2,3,4\n",
        "bad.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(ParseTrainingLog("a,b\n1,2\n", "h"), DataError);
}

TEST(Curves, ExtractIsDeterministic) {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string pa = (dir / "nco_curve_a.csv").string();
  const std::string pb = (dir / "nco_curve_b.csv").string();
  std::ofstream(pa) << kDivergentLog;
  std::ofstream(pb) << kConvergentLog;
  const CurveSet s1 = ExtractCurves({pa, pb});
  const CurveSet s2 = ExtractCurves({pa, pb});
  EXPECT_EQ(s1.divergent_count, 1);
  EXPECT_EQ(s1.ToCsv(), s2.ToCsv());
  EXPECT_EQ(s1.ToJson(), s2.ToJson());
  EXPECT_THROW(ExtractCurves({pa + ".missing"}), DataError);
  std::filesystem::remove(pa);
  std::filesystem::remove(pb);
}

}  // namespace
}  // namespace nco
