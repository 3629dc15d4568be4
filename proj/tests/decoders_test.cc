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


#include "nco/decoders.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "oracles.h"
#include "test_util.h"

namespace nco {
namespace {

// Quantized probabilities make ties common, exercising tie-breaking.
Heatmap RandomHeatmap(ProblemKind kind, int n, Rng& rng, bool quantize) {
  const int vars = kind == ProblemKind::kTsp ? n * (n - 1) / 2 : n;
  std::vector<double> p(vars);
  for (double& x : p) {
    x = rng.Uniform();
    if (quantize) x = std::floor(x * 4) / 4;
  }
  return Heatmap::FromVariables(kind, n, p);
}

// Repeatedly takes the highest remaining edge (lowest (i, j) on ties) that
// keeps degrees <= 2 and closes no premature cycle.
Solution NaiveGreedyTsp(const Heatmap& h, int n) {
  Solution s = Solution::EmptyTsp(n);
  std::vector<std::vector<uint8_t>> used(n, std::vector<uint8_t>(n, 0));
  std::vector<int> deg(n, 0);
  auto connected = [&](int a, int b) {
    std::vector<uint8_t> seen(n, 0);
    std::vector<int> stack{a};
    seen[a] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      if (u == b) return true;
      for (int w = 0; w < n; ++w) {
        if (s.Edge(u, w) && !seen[w]) {
          seen[w] = 1;
          stack.push_back(w);
        }
      }
    }
    return false;
  };
  for (int added = 0; added < n;) {
    int bi = -1, bj = -1;
    double bp = -1.0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (used[i][j] || deg[i] >= 2 || deg[j] >= 2) continue;
        if (connected(i, j) && added < n - 1) continue;
        if (h.At(i, j) > bp) {
          bp = h.At(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    used[bi][bj] = 1;
    s.SetEdge(bi, bj, true);
    ++deg[bi];
    ++deg[bj];
    ++added;
  }
  return s;
}

Solution NaiveNearestNeighbor(const Heatmap& h, int n) {
  std::vector<int> order{0};
  std::vector<uint8_t> seen(n, 0);
  seen[0] = 1;
  while (static_cast<int>(order.size()) < n) {
    int best = -1;
    for (int j = 0; j < n; ++j) {
      if (!seen[j] && (best < 0 || h.At(order.back(), j) > h.At(order.back(), best))) {
        best = j;
      }
    }
    seen[best] = 1;
    order.push_back(best);
  }
  return Solution::FromTour(order);
}

Solution NaiveGreedyMis(const Heatmap& h, const MisInstance& m) {
  const auto adj = m.Adjacency();
  std::vector<uint8_t> done(m.n, 0);
  Solution s = Solution::EmptyMis(m.n);
  for (int round = 0; round < m.n; ++round) {
    int best = -1;
    for (int v = 0; v < m.n; ++v) {
      if (!done[v] && (best < 0 || h.probs[v] > h.probs[best])) best = v;
    }
    done[best] = 1;
    bool free = true;
    for (int u : adj[best]) free = free && !s.Selected(u);
    if (free) s.bits[best] = 1;
  }
  return s;
}

TEST(Decoders, MatchNaiveReferencesOnRandomHeatmaps) {
  Rng rng(1);
  for (int it = 0; it < 300; ++it) {
    const int n = 3 + static_cast<int>(rng.Below(10));
    const bool q = it % 2 == 0;
    const TspInstance t = GenTsp(n, 1, it)[0];
    const Heatmap h = RandomHeatmap(ProblemKind::kTsp, n, rng, q);
    EXPECT_EQ(GreedyTspDecode(h, t), NaiveGreedyTsp(h, n));
    EXPECT_EQ(NearestNeighborTspDecode(h, t), NaiveNearestNeighbor(h, n));
    const MisInstance m = GenEr(n, 0.3, 1, it)[0];
    const Heatmap hm = RandomHeatmap(ProblemKind::kMis, n, rng, q);
    EXPECT_EQ(GreedyMisDecode(hm, m), NaiveGreedyMis(hm, m));
  }
}

TEST(Decoders, FeasibleAndDeterministicFuzz) {
  Rng rng(2);
  for (int it = 0; it < 1000; ++it) {
    const int n = 3 + static_cast<int>(rng.Below(30));
    const bool q = rng.Bernoulli(0.5);
    const Instance t = GenTsp(n, 1, it)[0];
    const Heatmap h = RandomHeatmap(ProblemKind::kTsp, n, rng, q);
    for (DecoderKind d : {DecoderKind::kGreedy, DecoderKind::kNearestNeighbor}) {
      const Solution s = Decode(d, h, t);
      ASSERT_TRUE(CheckFeasible(t, s)) << CheckFeasible(t, s).violation;
      EXPECT_EQ(s, Decode(d, h, t));
    }
    const Instance m = GenEr(n, rng.Uniform(), 1, it)[0];
    const Heatmap hm = RandomHeatmap(ProblemKind::kMis, n, rng, q);
    const Solution sm = Decode(DecoderKind::kGreedy, hm, m);
    ASSERT_TRUE(CheckFeasible(m, sm));
    // Greedy selection is maximal: every unselected vertex has a selected
    // neighbour.
    const auto adj = std::get<MisInstance>(m).Adjacency();
    for (int v = 0; v < n; ++v) {
      if (sm.Selected(v)) continue;
      bool covered = false;
      for (int u : adj[v]) covered = covered || sm.Selected(u);
      EXPECT_TRUE(covered);
    }
  }
}

TEST(Decoders, IndicatorHeatmapRecoversSolution) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const TspInstance t = GenTsp(9, 1, seed)[0];
    const Solution opt = HeldKarp(t);
    const Heatmap h = Heatmap::FromSolution(opt);
    EXPECT_EQ(GreedyTspDecode(h, t), opt);
    EXPECT_EQ(NearestNeighborTspDecode(h, t), opt);
    const MisInstance m = GenEr(12, 0.3, 1, seed)[0];
    const Solution best = MaxIndependentSet(m);
    EXPECT_EQ(GreedyMisDecode(Heatmap::FromSolution(best), m), best);
  }
}

TEST(Decoders, TraceRecordsEveryDecision) {
  const TspInstance t = GenTsp(6, 1, 3)[0];
  Rng rng(4);
  const Heatmap h = RandomHeatmap(ProblemKind::kTsp, 6, rng, false);
  std::vector<DecodeStep> trace;
  const Solution s = GreedyTspDecode(h, t, &trace);
  int accepted = 0;
  for (size_t k = 0; k < trace.size(); ++k) {
    if (k > 0) EXPECT_GE(trace[k - 1].prob, trace[k].prob);
    if (trace[k].accepted) {
      ++accepted;
      EXPECT_TRUE(s.Edge(trace[k].i, trace[k].j));
    }
  }
  EXPECT_EQ(accepted, 6);
  EXPECT_FALSE(DecodeTraceJson(trace).empty());
}

TEST(Decoders, RejectInvalidInput) {
  const Instance t = GenTsp(5, 1, 1)[0];
  const Instance m = GenEr(5, 0.3, 1, 1)[0];
  Rng rng(1);
  const Heatmap h4 = RandomHeatmap(ProblemKind::kTsp, 4, rng, false);
  EXPECT_THROW(Decode(DecoderKind::kGreedy, h4, t), DataError);
  const Heatmap hm = RandomHeatmap(ProblemKind::kMis, 5, rng, false);
  EXPECT_THROW(Decode(DecoderKind::kNearestNeighbor, hm, m), ConfigError);
  Heatmap nan = RandomHeatmap(ProblemKind::kTsp, 5, rng, false);
  nan.probs[1] = nan.probs[5] = std::nan("");
  EXPECT_THROW(nan.Validate(), DataError);
  EXPECT_THROW(ParseDecoder("beam"), ConfigError);
}

TEST(Decoders, UniformHeatmapTieBreaking) {
  const int n = 7;
  const TspInstance t = GenTsp(n, 1, 2)[0];
  const Heatmap h =
      Heatmap::FromVariables(ProblemKind::kTsp, n, std::vector<double>(21, 0.5));
  std::vector<int> ident(n);
  std::iota(ident.begin(), ident.end(), 0);
  EXPECT_EQ(NearestNeighborTspDecode(h, t), Solution::FromTour(ident));
  // Lexicographic scan: 01, 02 are taken, then 0 is saturated; 13 joins,
  // 2 and 3 get their second edges via 24 and 35, and so on.
  const Solution g = GreedyTspDecode(h, t);
  EXPECT_EQ(g, NaiveGreedyTsp(h, n));
  EXPECT_TRUE(g.Edge(0, 1));
  EXPECT_TRUE(g.Edge(0, 2));
  EXPECT_TRUE(g.Edge(1, 3));
  const MisInstance m = GenEr(n, 0.4, 1, 2)[0];
  const Heatmap hm =
      Heatmap::FromVariables(ProblemKind::kMis, n, std::vector<double>(n, 0.5));
  EXPECT_TRUE(GreedyMisDecode(hm, m).Selected(0));
}

// No pair of positions admits an improving exchange.
bool TwoOptLocalOptimum(const TspInstance& t, const std::vector<int>& order) {
  const int n = static_cast<int>(order.size());
  for (int a = 0; a < n - 1; ++a) {
    for (int b = a + 2; b < n; ++b) {
      if (a == 0 && b == n - 1) continue;
      const int p = order[a], q = order[a + 1], r = order[b], s = order[(b + 1) % n];
      const double gain = oracle::Dist(t, p, q) + oracle::Dist(t, r, s) -
                          oracle::Dist(t, p, r) - oracle::Dist(t, q, s);
      if (gain > 1e-9) return false;
    }
  }
  return true;
}

TEST(TwoOpt, MonotoneConvergentDeterministic) {
  Rng rng(5);
  for (int it = 0; it < 200; ++it) {
    const int n = 4 + static_cast<int>(rng.Below(25));
    const TspInstance t = GenTsp(n, 1, it)[0];
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const Solution start = Solution::FromTour(order);
    TwoOptOptions capped;
    capped.max_exchanges = 2;
    TwoOptStats cs;
    const Solution partial = TwoOpt(t, start, capped, &cs);
    EXPECT_LE(cs.exchanges, 2);
    EXPECT_LE(Cost(t, partial), Cost(t, start) + 1e-12);
    TwoOptOptions full;
    full.max_exchanges = -1;
    TwoOptStats fs;
    const Solution done = TwoOpt(t, start, full, &fs);
    ASSERT_TRUE(CheckFeasible(t, done));
    EXPECT_TRUE(fs.converged);
    EXPECT_LE(Cost(t, done), Cost(t, partial) + 1e-12);
    EXPECT_TRUE(TwoOptLocalOptimum(t, done.TourOrder()));
    EXPECT_EQ(done, TwoOpt(t, start, full));
    EXPECT_EQ(TwoOpt(t, done, full), done);
  }
}

TEST(Hamming, CountsStructuralDisagreements) {
  const Solution a = Solution::FromTour(std::vector<int>{0, 1, 2, 3, 4, 5});
  const Solution b = Solution::FromTour(std::vector<int>{0, 1, 2, 3, 5, 4});
  EXPECT_EQ(Hamming(a, a), 0);
  // b keeps 01, 12, 23, 45 and swaps 34, 50 for 35, 40.
  EXPECT_EQ(Hamming(a, b), 2);
  const int x[] = {0, 2}, y[] = {2, 3, 4};
  EXPECT_EQ(Hamming(Solution::FromSelection(5, x), Solution::FromSelection(5, y)),
            3);
}

}  // namespace
}  // namespace nco
