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

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace nco {

Heatmap Heatmap::FromVariables(ProblemKind kind, int n,
                               std::span<const double> vars) {
  Heatmap h{kind, n, {}};
  if (kind == ProblemKind::kMis) {
    h.probs.assign(vars.begin(), vars.end());
    return h;
  }
  h.probs.assign(static_cast<size_t>(n) * n, 0.0);
  int var = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j, ++var) {
      h.probs[i * n + j] = vars[var];
      h.probs[j * n + i] = vars[var];
    }
  }
  return h;
}

Heatmap Heatmap::FromSolution(const Solution& s) {
  Heatmap h{s.kind, s.n, {}};
  h.probs.assign(s.bits.begin(), s.bits.end());
  return h;
}

std::vector<double> Heatmap::ToVariables() const {
  if (kind == ProblemKind::kMis) return probs;
  std::vector<double> vars;
  vars.reserve(n * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) vars.push_back(probs[i * n + j]);
  }
  return vars;
}

void Heatmap::Validate() const {
  const size_t expected =
      kind == ProblemKind::kTsp ? static_cast<size_t>(n) * n : n;
  if (probs.size() != expected) throw DataError("heatmap has wrong size");
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DataError("heatmap entry outside [0,1]");
    }
  }
  if (kind == ProblemKind::kTsp) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < i; ++j) {
        if (std::abs(At(i, j) - At(j, i)) > 1e-12) {
          throw DataError("tsp heatmap is not symmetric");
        }
      }
    }
  }
}

std::string_view DecoderName(DecoderKind d) {
  return d == DecoderKind::kGreedy ? "greedy" : "nn";
}

DecoderKind ParseDecoder(std::string_view name) {
  if (name == "greedy" || name == "grdy") return DecoderKind::kGreedy;
  if (name == "nn" || name == "nearest_neighbor") {
    return DecoderKind::kNearestNeighbor;
  }
  throw ConfigError("unknown decoder '" + std::string(name) + "'");
}

namespace {

void CheckDims(const Heatmap& h, ProblemKind kind, int n) {
  const size_t expected =
      kind == ProblemKind::kTsp ? static_cast<size_t>(n) * n : n;
  if (h.kind != kind || h.n != n || h.probs.size() != expected) {
    throw DataError("heatmap dimensions do not match instance");
  }
}

int Find(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace

Solution GreedyTspDecode(const Heatmap& heatmap, const TspInstance& instance,
                         std::vector<DecodeStep>* trace) {
  const int n = instance.n();
  CheckDims(heatmap, ProblemKind::kTsp, n);
  struct Candidate {
    double prob;
    int i;
    int j;
  };
  std::vector<Candidate> edges;
  edges.reserve(n * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) edges.push_back({heatmap.At(i, j), i, j});
  }
  std::stable_sort(edges.begin(), edges.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return a.prob > b.prob;
                   });
  Solution tour = Solution::EmptyTsp(n);
  std::vector<int> degree(n, 0);
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  int accepted = 0;
  for (const Candidate& c : edges) {
    if (accepted == n) break;
    bool ok = degree[c.i] < 2 && degree[c.j] < 2;
    if (ok) {
      const int ri = Find(parent, c.i);
      const int rj = Find(parent, c.j);
      // Closing a cycle is allowed only for the final, Hamiltonian one.
      if (ri == rj) {
        ok = accepted == n - 1;
      } else {
        parent[ri] = rj;
      }
    }
    if (trace != nullptr) trace->push_back({c.i, c.j, c.prob, ok});
    if (!ok) continue;
    tour.SetEdge(c.i, c.j, true);
    ++degree[c.i];
    ++degree[c.j];
    ++accepted;
  }
  return tour;
}

Solution NearestNeighborTspDecode(const Heatmap& heatmap,
                                  const TspInstance& instance) {
  const int n = instance.n();
  CheckDims(heatmap, ProblemKind::kTsp, n);
  std::vector<uint8_t> visited(n, 0);
  std::vector<int> order{0};
  visited[0] = 1;
  int cur = 0;
  for (int step = 1; step < n; ++step) {
    int best = -1;
    double best_prob = -1.0;
    for (int j = 0; j < n; ++j) {
      if (visited[j]) continue;
      if (heatmap.At(cur, j) > best_prob) {
        best_prob = heatmap.At(cur, j);
        best = j;
      }
    }
    visited[best] = 1;
    order.push_back(best);
    cur = best;
  }
  return Solution::FromTour(order);
}

Solution GreedyMisDecode(const Heatmap& heatmap, const MisInstance& instance,
                         std::vector<DecodeStep>* trace) {
  const int n = instance.n;
  CheckDims(heatmap, ProblemKind::kMis, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return heatmap.probs[a] > heatmap.probs[b];
  });
  const auto adj = instance.Adjacency();
  Solution s = Solution::EmptyMis(n);
  std::vector<uint8_t> blocked(n, 0);
  for (int v : order) {
    const bool ok = !blocked[v];
    if (trace != nullptr) trace->push_back({v, -1, heatmap.probs[v], ok});
    if (!ok) continue;
    s.bits[v] = 1;
    blocked[v] = 1;
    for (int u : adj[v]) blocked[u] = 1;
  }
  return s;
}

Solution Decode(DecoderKind decoder, const Heatmap& heatmap,
                const Instance& instance) {
  if (const auto* tsp = std::get_if<TspInstance>(&instance)) {
    return decoder == DecoderKind::kGreedy
               ? GreedyTspDecode(heatmap, *tsp)
               : NearestNeighborTspDecode(heatmap, *tsp);
  }
  if (decoder != DecoderKind::kGreedy) {
    throw ConfigError("mis supports only the greedy decoder");
  }
  return GreedyMisDecode(heatmap, std::get<MisInstance>(instance));
}

std::string DecodeTraceJson(const std::vector<DecodeStep>& trace) {
  nlohmann::json out = nlohmann::json::array();
  for (const DecodeStep& s : trace) {
    nlohmann::json row = {{"prob", s.prob}, {"accepted", s.accepted}};
    if (s.j < 0) {
      row["vertex"] = s.i;
    } else {
      row["edge"] = {s.i, s.j};
    }
    out.push_back(std::move(row));
  }
  return out.dump();
}

Solution TwoOpt(const TspInstance& instance, const Solution& tour,
                const TwoOptOptions& options, TwoOptStats* stats) {
  const Feasibility verdict = CheckFeasible(instance, tour);
  if (!verdict) {
    throw DataError("two_opt requires a feasible tour: " + verdict.violation);
  }
  const int n = instance.n();
  std::vector<int> order = tour.TourOrder();
  TwoOptStats local;
  while (options.max_exchanges < 0 || local.exchanges < options.max_exchanges) {
    bool improved = false;
    // Reversing order[a+1..b] replaces edges (a,a+1),(b,b+1) with
    // (a,b),(a+1,b+1).
    for (int a = 0; a < n - 1 && !improved; ++a) {
      const int pa = order[a];
      const int pa1 = order[a + 1];
      for (int b = a + 2; b < n; ++b) {
        const int pb = order[b];
        const int pb1 = order[(b + 1) % n];
        if (pb1 == pa) continue;
        const double gain = instance.Distance(pa, pa1) +
                            instance.Distance(pb, pb1) -
                            instance.Distance(pa, pb) -
                            instance.Distance(pa1, pb1);
        if (gain > options.min_gain) {
          std::reverse(order.begin() + a + 1, order.begin() + b + 1);
          ++local.exchanges;
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      local.converged = true;
      break;
    }
  }
  if (stats != nullptr) *stats = local;
  return Solution::FromTour(order);
}

int Hamming(const Solution& a, const Solution& b) {
  if (a.kind != b.kind || a.n != b.n || a.bits.size() != b.bits.size()) {
    throw DataError("hamming requires solutions of the same kind and size");
  }
  int diff = 0;
  for (size_t k = 0; k < a.bits.size(); ++k) diff += a.bits[k] != b.bits[k];
  // Each undirected edge appears twice in the symmetric matrix, and the
  // symmetric difference of two tours is halved once more.
  return a.kind == ProblemKind::kTsp ? diff / 4 : diff;
}

}  // namespace nco
