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


#include "nco/gnn.h"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "test_util.h"

namespace nco {
namespace {

using testing::FiniteDifferenceCheck;
using testing::Mis;
using testing::RandomBits;
using testing::RandomizeNorms;
using testing::SmallGnn;
using testing::Tsp;

struct FdCase {
  ProblemKind kind;
  NormMode mode;
};

class GnnGradientTest : public ::testing::TestWithParam<FdCase> {};

TEST_P(GnnGradientTest, BackwardMatchesCentralDifferences) {
  const FdCase c = GetParam();
  int checked = 0;
  for (uint64_t seed = 0; seed < 100 && checked < 20; ++seed) {
    const Instance inst = c.kind == ProblemKind::kTsp ? Tsp(4, seed)
                                                      : Mis(5, 0.5, seed);
    const GnnConfig cfg = SmallGnn(c.kind);
    Policy policy = MakePolicy(cfg, seed);
    Rng rng(seed + 100);
    RandomizeNorms(policy, rng);
    const GraphInput g = BuildGraph(inst, cfg);
    const std::vector<uint8_t> xt = RandomBits(g.num_variables(), rng);
    const int t[] = {1 + static_cast<int>(rng.Below(50))};
    const testing::FdResult r =
        FiniteDifferenceCheck(policy, g, xt, t, c.mode, seed);
    if (!r.smooth) continue;
    ++checked;
    EXPECT_LT(r.worst, 1e-4) << "seed " << seed << " tensor " << r.worst_name
                             << " diff " << r.worst_diff;
    EXPECT_GT(r.groups, 10);
  }
  EXPECT_EQ(checked, 20);
}

INSTANTIATE_TEST_SUITE_P(
    KindsAndModes, GnnGradientTest,
    ::testing::Values(FdCase{ProblemKind::kTsp, NormMode::kBatch},
                      FdCase{ProblemKind::kTsp, NormMode::kRunning},
                      FdCase{ProblemKind::kMis, NormMode::kBatch},
                      FdCase{ProblemKind::kMis, NormMode::kRunning}));

TEST(GnnGradient, LoraFactorsAndHybridMask) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kTsp, 6, 3);
  int checked = 0;
  for (uint64_t seed = 0; seed < 100 && checked < 20; ++seed) {
    Policy policy = MakePolicy(cfg, seed);
    policy.mask = FinetuneMask::Hybrid(cfg, 1);
    policy.lora = MakeLora(policy.params, policy.mask, 2, 2.0, seed);
    Rng rng(seed);
    for (LoraFactor& f : policy.lora) {
      for (int k = 0; k < f.b.size(); ++k) f.b(k) = rng.Uniform() - 0.5;
    }
    const GraphInput g = BuildGraph(Tsp(5, seed), cfg);
    const std::vector<uint8_t> xt = RandomBits(g.num_variables(), rng);
    const int t[] = {7};
    const testing::FdResult r =
        FiniteDifferenceCheck(policy, g, xt, t, NormMode::kRunning, seed);
    if (!r.smooth) continue;
    ++checked;
    EXPECT_LT(r.worst, 1e-4) << r.worst_name << " diff " << r.worst_diff;
  }
  EXPECT_EQ(checked, 20);
}

TEST(GnnGradient, BatchedGraphsWithPerGraphTimesteps) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kTsp);
  const GraphInput a = BuildGraph(Tsp(4, 1), cfg);
  const GraphInput b = BuildGraph(Tsp(5, 2), cfg);
  const GraphInput batch = BatchGraphs({&a, &b});
  const int ts[] = {3, 40};
  for (NormMode mode : {NormMode::kBatch, NormMode::kRunning}) {
    int checked = 0;
    for (uint64_t seed = 0; seed < 100 && checked < 5; ++seed) {
      const Policy policy = MakePolicy(cfg, seed);
      Rng rng(seed + 9);
      const std::vector<uint8_t> xt = RandomBits(batch.num_variables(), rng);
      const testing::FdResult r =
          FiniteDifferenceCheck(policy, batch, xt, ts, mode, seed);
      if (!r.smooth) continue;
      ++checked;
      EXPECT_LT(r.worst, 1e-4) << r.worst_name << " diff " << r.worst_diff;
    }
    EXPECT_EQ(checked, 5);
  }
}

TEST(Gnn, BatchedRunningForwardEqualsSeparateForwards) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kMis);
  Policy policy = MakePolicy(cfg, 5);
  Rng rng(1);
  RandomizeNorms(policy, rng);
  const GraphInput a = BuildGraph(Mis(6, 0.4, 1), cfg);
  const GraphInput b = BuildGraph(Mis(4, 0.6, 2), cfg);
  const GraphInput batch = BatchGraphs({&a, &b});
  ASSERT_EQ(batch.num_graphs, 2);
  ASSERT_EQ(batch.var_offsets, (std::vector<int>{0, 6, 10}));
  const std::vector<uint8_t> xa = RandomBits(6, rng), xb = RandomBits(4, rng);
  std::vector<uint8_t> xt = xa;
  xt.insert(xt.end(), xb.begin(), xb.end());
  const int ts[] = {2, 30};
  const GnnOutput joint = Forward(policy, batch, xt, ts, NormMode::kRunning);
  const GnnOutput oa = Forward(policy, a, xa, 2, NormMode::kRunning);
  const GnnOutput ob = Forward(policy, b, xb, 30, NormMode::kRunning);
  for (int v = 0; v < 6; ++v) EXPECT_NEAR(joint.x0[v], oa.x0[v], 1e-12);
  for (int v = 0; v < 4; ++v) EXPECT_NEAR(joint.x0[6 + v], ob.x0[v], 1e-12);
}

TEST(Gnn, TspPredictionIsSymmetricAverageOfDirections) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kTsp);
  const Policy policy = MakePolicy(cfg, 2);
  const Instance inst = Tsp(5, 3);
  const GraphInput g = BuildGraph(inst, cfg);
  ASSERT_EQ(g.num_variables(), 10);
  Rng rng(2);
  const std::vector<uint8_t> xt = RandomBits(10, rng);
  const GnnOutput out = Forward(policy, g, xt, 5, NormMode::kRunning);
  ASSERT_EQ(out.logits.rows(), g.index.num_edges());
  std::vector<double> sum(10, 0.0);
  for (int e = 0; e < g.index.num_edges(); ++e) {
    const double z0 = out.logits(e, 0), z1 = out.logits(e, 1);
    sum[g.edge_var[e]] += 0.5 / (1.0 + std::exp(z0 - z1));
  }
  for (int v = 0; v < 10; ++v) EXPECT_NEAR(out.x0[v], sum[v], 1e-12);
}

TEST(Gnn, ProbGradToLogitGradMatchesFiniteDifferences) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kTsp);
  const Policy policy = MakePolicy(cfg, 1);
  const GraphInput g = BuildGraph(Tsp(4, 8), cfg);
  Rng rng(3);
  const std::vector<uint8_t> xt = RandomBits(g.num_variables(), rng);
  const GnnOutput out = Forward(policy, g, xt, 9, NormMode::kRunning);
  std::vector<double> dprob(g.num_variables());
  for (double& d : dprob) d = rng.Uniform() - 0.5;
  const RowMatrix dl = ProbGradToLogitGrad(g, out, dprob);
  auto objective = [&](const RowMatrix& logits) {
    std::vector<double> p(g.num_variables(), 0.0);
    for (int e = 0; e < logits.rows(); ++e) {
      p[g.edge_var[e]] +=
          0.5 / (1.0 + std::exp(logits(e, 0) - logits(e, 1)));
    }
    double s = 0.0;
    for (int v = 0; v < g.num_variables(); ++v) s += dprob[v] * p[v];
    return s;
  };
  const double h = 1e-6;
  for (int e = 0; e < out.logits.rows(); ++e) {
    for (int c = 0; c < 2; ++c) {
      RowMatrix up = out.logits, down = out.logits;
      up(e, c) += h;
      down(e, c) -= h;
      EXPECT_NEAR(dl(e, c), (objective(up) - objective(down)) / (2 * h), 1e-8);
    }
  }
}

TEST(Gnn, ZeroInitializedLoraLeavesOutputsUnchanged) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kTsp, 6, 3);
  Policy base = MakePolicy(cfg, 4);
  Policy lora = base;
  lora.mask = FinetuneMask::Hybrid(cfg, 1);
  lora.lora = MakeLora(lora.params, lora.mask, 2, 2.0, 11);
  const GraphInput g = BuildGraph(Tsp(6, 1), cfg);
  Rng rng(5);
  const std::vector<uint8_t> xt = RandomBits(g.num_variables(), rng);
  const GnnOutput a = Forward(base, g, xt, 10, NormMode::kRunning);
  const GnnOutput b = Forward(lora, g, xt, 10, NormMode::kRunning);
  EXPECT_EQ(a.x0, b.x0);
}

TEST(Gnn, MergedLoraMatchesFactoredForward) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kMis, 6, 3);
  Policy p = MakePolicy(cfg, 4);
  p.mask = FinetuneMask::Hybrid(cfg, 1);
  p.lora = MakeLora(p.params, p.mask, 2, 2.0, 11);
  Rng rng(6);
  for (LoraFactor& f : p.lora) {
    for (int k = 0; k < f.b.size(); ++k) f.b(k) = rng.Uniform() - 0.5;
  }
  Policy merged = p;
  merged.params = MergeLora(p.params, p.lora);
  merged.lora.clear();
  merged.mask = FinetuneMask::AllFull(cfg);
  const GraphInput g = BuildGraph(Mis(8, 0.3, 2), cfg);
  const std::vector<uint8_t> xt = RandomBits(8, rng);
  const GnnOutput a = Forward(p, g, xt, 4, NormMode::kRunning);
  const GnnOutput b = Forward(merged, g, xt, 4, NormMode::kRunning);
  for (int v = 0; v < 8; ++v) EXPECT_NEAR(a.x0[v], b.x0[v], 1e-12);
}

TEST(Gnn, HybridMaskLayout) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kTsp, 6, 4);
  const FinetuneMask m = FinetuneMask::Hybrid(cfg, 1);
  ASSERT_EQ(m.modes.size(), 6u);
  for (int b = 0; b < 4; ++b) EXPECT_EQ(m.modes[b], BlockMode::kLora) << b;
  EXPECT_EQ(m.modes[4], BlockMode::kFull);
  EXPECT_EQ(m.modes[5], BlockMode::kFull);
}

TEST(Gnn, FrozenTensorsReceiveNoUpdate) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kTsp, 6, 3);
  Policy p = MakePolicy(cfg, 4);
  p.mask = FinetuneMask::Hybrid(cfg, 1);
  p.lora = MakeLora(p.params, p.mask, 2, 2.0, 11);
  const GnnParams before = p.params;
  const GraphInput g = BuildGraph(Tsp(5, 1), cfg);
  Rng rng(1);
  GnnTape tape;
  const std::vector<uint8_t> xt = RandomBits(g.num_variables(), rng);
  const GnnOutput out = Forward(p, g, xt, 3, NormMode::kRunning, &tape);
  Gradients grads = Gradients::ZerosLike(p);
  Backward(p, tape, testing::RandomMatrix(out.logits.rows(), 2, rng), grads);
  AdamState adam;
  ApplyUpdate(p, grads, adam, 1e-2);
  EXPECT_EQ(p.version, 1u);
  std::vector<const Eigen::MatrixXd*> old;
  ForEachTensor(before, [&](const TensorInfo&, const Eigen::MatrixXd& t) {
    old.push_back(&t);
  });
  size_t k = 0;
  int changed_full = 0;
  ForEachTensor(p.params, [&](const TensorInfo& info, const Eigen::MatrixXd& t) {
    const bool same = t == *old[k++];
    if (p.mask.modes[info.block] != BlockMode::kFull ||
        info.role == TensorRole::kNormStatistic) {
      EXPECT_TRUE(same) << info.name;
    } else if (!same) {
      ++changed_full;
    }
  });
  EXPECT_GT(changed_full, 0);
}

TEST(Gnn, ApplyUpdateRejectsNonFiniteGradients) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kMis);
  Policy p = MakePolicy(cfg, 1);
  const Policy before = p;
  Gradients g = Gradients::ZerosLike(p);
  g.params.head.w(0, 0) = std::nan("");
  AdamState adam;
  EXPECT_THROW(ApplyUpdate(p, g, adam, 1e-3), NumericalError);
  EXPECT_EQ(p.version, before.version);
  EXPECT_EQ(p.params.head.w, before.params.head.w);
}

TEST(Gnn, RunningStatsFollowExponentialAverage) {
  const GnnConfig cfg = SmallGnn(ProblemKind::kMis);
  Policy p = MakePolicy(cfg, 2);
  const GraphInput g = BuildGraph(Mis(7, 0.4, 3), cfg);
  Rng rng(4);
  GnnTape tape;
  Forward(p, g, RandomBits(7, rng), 5, NormMode::kBatch, &tape);
  const NormBatchStats stats = ExtractNormStats(tape);
  const Eigen::MatrixXd old_mean = p.params.layers[0].node_norm.running_mean;
  const Eigen::MatrixXd old_var = p.params.layers[0].node_norm.running_var;
  UpdateRunningStats(p, stats, 0.25);
  const NormBatchStats::Entry& e = stats.node[0];
  const double rows = e.rows;
  ASSERT_TRUE(e.batch);
  for (int d = 0; d < cfg.hidden; ++d) {
    EXPECT_NEAR(p.params.layers[0].node_norm.running_mean(d),
                0.75 * old_mean(d) + 0.25 * e.mean(d), 1e-12);
    const double unbiased = e.var(d) * rows / (rows - 1.0);
    EXPECT_NEAR(p.params.layers[0].node_norm.running_var(d),
                0.75 * old_var(d) + 0.25 * unbiased, 1e-12);
  }
}

TEST(Gnn, TimestepEmbeddingValues) {
  const std::vector<double> e = TimestepEmbed(3, 4);
  ASSERT_EQ(e.size(), 4u);
  EXPECT_NEAR(e[0], std::sin(3.0), 1e-12);
  EXPECT_NEAR(e[1], std::cos(3.0), 1e-12);
  EXPECT_NEAR(e[2], std::sin(3.0 * std::pow(10000.0, -0.5)), 1e-12);
  EXPECT_NEAR(e[3], std::cos(3.0 * std::pow(10000.0, -0.5)), 1e-12);
}

TEST(Gnn, InvalidConfigIsRejected) {
  GnnConfig c = SmallGnn(ProblemKind::kTsp);
  c.depth = -1;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = SmallGnn(ProblemKind::kTsp);
  c.time_embed_dim = 3;
  EXPECT_THROW(c.Validate(), ConfigError);
  c = SmallGnn(ProblemKind::kTsp);
  c.hidden = -1;
  EXPECT_THROW(c.Validate(), ConfigError);
}

TEST(Gnn, ZeroDepthAppliesHeadToEmbeddings) {
  for (ProblemKind kind : {ProblemKind::kTsp, ProblemKind::kMis}) {
    const GnnConfig cfg = SmallGnn(kind, 6, 0);
    const Policy policy = MakePolicy(cfg, 1);
    const Instance inst = kind == ProblemKind::kTsp ? Tsp(5, 1) : Mis(6, 0.4, 1);
    const GraphInput g = BuildGraph(inst, cfg);
    Rng rng(1);
    const std::vector<uint8_t> xt = RandomBits(g.num_variables(), rng);
    const GnnOutput out = Forward(policy, g, xt, 4, NormMode::kRunning);
    EXPECT_EQ(static_cast<int>(out.x0.size()), g.num_variables());
    EXPECT_TRUE(out.logits.allFinite());
  }
}

}  // namespace
}  // namespace nco
