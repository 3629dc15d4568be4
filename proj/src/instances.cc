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

#include "nco/instances.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "nco/decoders.h"

namespace nco {

std::string_view KindName(ProblemKind kind) {
  return kind == ProblemKind::kTsp ? "tsp" : "mis";
}

ProblemKind ParseKind(std::string_view name) {
  if (name == "tsp") return ProblemKind::kTsp;
  if (name == "mis") return ProblemKind::kMis;
  throw ConfigError("unknown problem kind '" + std::string(name) + "'");
}

double TspInstance::Distance(int i, int j) const {
  return std::hypot(coords[i].x - coords[j].x, coords[i].y - coords[j].y);
}

void TspInstance::Validate() const {
  if (n() < 3) throw DataError("tsp instance '" + id + "' has fewer than 3 nodes");
  for (const Point& p : coords) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0.0 || p.x > 1.0 ||
        p.y < 0.0 || p.y > 1.0) {
      throw DataError("tsp instance '" + id +
                      "' has a coordinate outside the unit square");
    }
  }
}

std::vector<std::vector<int>> MisInstance::Adjacency() const {
  std::vector<std::vector<int>> adj(n);
  for (const auto& [u, v] : edges) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());
  return adj;
}

void MisInstance::Validate() const {
  if (n < 1) throw DataError("mis instance '" + id + "' has no vertices");
  for (size_t k = 0; k < edges.size(); ++k) {
    const auto [u, v] = edges[k];
    if (u < 0 || v < 0 || u >= n || v >= n) {
      throw DataError("mis instance '" + id + "' has an out-of-range vertex");
    }
    if (u == v) throw DataError("mis instance '" + id + "' has a self-loop");
    if (u > v) throw DataError("mis instance '" + id + "' has an unsorted edge");
    if (k > 0 && edges[k - 1] >= edges[k]) {
      throw DataError("mis instance '" + id +
                      "' has duplicate or unsorted edges");
    }
  }
}

ProblemKind KindOf(const Instance& instance) {
  return std::holds_alternative<TspInstance>(instance) ? ProblemKind::kTsp
                                                       : ProblemKind::kMis;
}

const std::string& IdOf(const Instance& instance) {
  return std::visit([](const auto& g) -> const std::string& { return g.id; },
                    instance);
}

int NodeCount(const Instance& instance) {
  if (const auto* tsp = std::get_if<TspInstance>(&instance)) return tsp->n();
  return std::get<MisInstance>(instance).n;
}

int NumVariables(const Instance& instance) {
  const int n = NodeCount(instance);
  return KindOf(instance) == ProblemKind::kTsp ? n * (n - 1) / 2 : n;
}

std::pair<int, int> VarEdge(int n, int var) {
  int i = 0;
  while (var >= n - 1 - i) {
    var -= n - 1 - i;
    ++i;
  }
  return {i, i + 1 + var};
}

Solution Solution::EmptyTsp(int n) {
  return Solution{ProblemKind::kTsp, n, std::vector<uint8_t>(n * n, 0)};
}

Solution Solution::EmptyMis(int n) {
  return Solution{ProblemKind::kMis, n, std::vector<uint8_t>(n, 0)};
}

Solution Solution::FromTour(std::span<const int> order) {
  const int n = static_cast<int>(order.size());
  Solution s = EmptyTsp(n);
  for (int k = 0; k < n; ++k) s.SetEdge(order[k], order[(k + 1) % n], true);
  return s;
}

Solution Solution::FromSelection(int n, std::span<const int> selected) {
  Solution s = EmptyMis(n);
  for (int v : selected) s.bits[v] = 1;
  return s;
}

Solution Solution::FromVariables(ProblemKind kind, int n,
                                 std::span<const uint8_t> vars) {
  if (kind == ProblemKind::kMis) {
    if (static_cast<int>(vars.size()) != n) {
      throw DataError("variable vector length does not match vertex count");
    }
    return Solution{kind, n, std::vector<uint8_t>(vars.begin(), vars.end())};
  }
  if (static_cast<int>(vars.size()) != n * (n - 1) / 2) {
    throw DataError("variable vector length does not match n(n-1)/2");
  }
  Solution s = EmptyTsp(n);
  int var = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j, ++var) s.SetEdge(i, j, vars[var] != 0);
  }
  return s;
}

void Solution::SetEdge(int i, int j, bool on) {
  bits[i * n + j] = on ? 1 : 0;
  bits[j * n + i] = on ? 1 : 0;
}

std::vector<uint8_t> Solution::ToVariables() const {
  if (kind == ProblemKind::kMis) return bits;
  std::vector<uint8_t> vars;
  vars.reserve(n * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) vars.push_back(bits[i * n + j]);
  }
  return vars;
}

std::vector<int> Solution::TourOrder() const {
  std::vector<int> order;
  order.reserve(n);
  int prev = -1;
  int cur = 0;
  for (int step = 0; step < n; ++step) {
    order.push_back(cur);
    int next = -1;
    for (int j = 0; j < n; ++j) {
      if (j != prev && j != cur && Edge(cur, j)) {
        next = j;
        break;
      }
    }
    if (next < 0 || next == 0) break;
    prev = cur;
    cur = next;
  }
  return order;
}

std::vector<int> Solution::SelectedVertices() const {
  std::vector<int> out;
  for (int v = 0; v < n; ++v) {
    if (bits[v]) out.push_back(v);
  }
  return out;
}

namespace {

Feasibility Violation(std::string message) {
  return Feasibility{false, std::move(message)};
}

Feasibility CheckTour(const TspInstance& g, const Solution& s) {
  const int n = g.n();
  for (int i = 0; i < n; ++i) {
    if (s.bits[i * n + i]) {
      return Violation("self-loop at vertex " + std::to_string(i));
    }
    int degree = 0;
    for (int j = 0; j < n; ++j) {
      const uint8_t b = s.bits[i * n + j];
      if (b > 1) return Violation("non-binary entry");
      if (b != s.bits[j * n + i]) {
        return Violation("asymmetric entry (" + std::to_string(i) + "," +
                         std::to_string(j) + ")");
      }
      degree += b;
    }
    if (degree != 2) {
      return Violation("vertex " + std::to_string(i) + " has degree " +
                       std::to_string(degree));
    }
  }
  const std::vector<int> order = s.TourOrder();
  if (static_cast<int>(order.size()) != n ||
      !s.Edge(order.back(), order.front())) {
    return Violation("subtour: cycle through vertex 0 has length " +
                     std::to_string(order.size()));
  }
  return {};
}

Feasibility CheckIndependent(const MisInstance& g, const Solution& s) {
  for (uint8_t b : s.bits) {
    if (b > 1) return Violation("non-binary entry");
  }
  for (const auto& [u, v] : g.edges) {
    if (s.bits[u] && s.bits[v]) {
      return Violation("edge (" + std::to_string(u) + "," + std::to_string(v) +
                       ") inside selected set");
    }
  }
  return {};
}

}  // namespace

Feasibility CheckFeasible(const Instance& instance, const Solution& solution) {
  const int n = NodeCount(instance);
  const ProblemKind kind = KindOf(instance);
  const size_t expected =
      kind == ProblemKind::kTsp ? static_cast<size_t>(n) * n : n;
  if (solution.kind != kind || solution.n != n ||
      solution.bits.size() != expected) {
    throw DataError("solution dimensions do not match instance '" +
                    IdOf(instance) + "'");
  }
  if (kind == ProblemKind::kTsp) {
    return CheckTour(std::get<TspInstance>(instance), solution);
  }
  return CheckIndependent(std::get<MisInstance>(instance), solution);
}

double TourLength(const TspInstance& instance, const Solution& tour) {
  const int n = instance.n();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (tour.bits[i * n + j]) total += instance.Distance(i, j);
    }
  }
  return total;
}

double TourLength(const TspInstance& instance, std::span<const int> order) {
  const int n = static_cast<int>(order.size());
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    total += instance.Distance(order[k], order[(k + 1) % n]);
  }
  return total;
}

double Cost(const Instance& instance, const Solution& solution) {
  const Feasibility verdict = CheckFeasible(instance, solution);
  if (!verdict) {
    throw DataError("infeasible solution for '" + IdOf(instance) +
                    "': " + verdict.violation);
  }
  if (const auto* tsp = std::get_if<TspInstance>(&instance)) {
    return TourLength(*tsp, solution);
  }
  double selected = 0.0;
  for (uint8_t b : solution.bits) selected += b;
  return -selected;
}

std::vector<TspInstance> GenTsp(int n, int count, uint64_t seed) {
  if (n < 3) throw ConfigError("gen_tsp requires n >= 3");
  if (count < 1) throw ConfigError("gen_tsp requires count >= 1");
  Rng rng(seed);
  std::vector<TspInstance> out(count);
  for (int k = 0; k < count; ++k) {
    out[k].id = "tsp" + std::to_string(n) + "-" + std::to_string(seed) + "-" +
                std::to_string(k);
    out[k].coords.resize(n);
    for (Point& p : out[k].coords) {
      p.x = rng.Uniform();
      p.y = rng.Uniform();
    }
  }
  return out;
}

std::vector<MisInstance> GenEr(int n, double p, int count, uint64_t seed) {
  if (n < 1) throw ConfigError("gen_er requires n >= 1");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("gen_er requires p in [0,1]");
  if (count < 1) throw ConfigError("gen_er requires count >= 1");
  Rng rng(seed);
  std::vector<MisInstance> out(count);
  for (int k = 0; k < count; ++k) {
    out[k].id = "er" + std::to_string(n) + "-" + std::to_string(seed) + "-" +
                std::to_string(k);
    out[k].n = n;
    for (int u = 0; u < n; ++u) {
      for (int v = u + 1; v < n; ++v) {
        if (rng.Bernoulli(p)) out[k].edges.emplace_back(u, v);
      }
    }
  }
  return out;
}

Solution HeldKarp(const TspInstance& g) {
  const int n = g.n();
  if (n < 3) throw DataError("held-karp requires n >= 3");
  if (n > kHeldKarpHardLimit) {
    throw OracleLimitError("oracle limit exceeded: held-karp supports n <= " +
                           std::to_string(kHeldKarpHardLimit));
  }
  // Vertex 0 is the fixed start; subsets range over vertices 1..n-1, which
  // are bit positions 0..k-1.
  const int k = n - 1;
  const uint32_t full = (1u << k) - 1;
  std::vector<double> dist(n * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) dist[i * n + j] = g.Distance(i, j);
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> dp(static_cast<size_t>(full + 1) * k, kInf);
  for (int j = 0; j < k; ++j) dp[(1u << j) * k + j] = dist[j + 1];
  for (uint32_t mask = 1; mask <= full; ++mask) {
    if (std::has_single_bit(mask)) continue;
    for (uint32_t js = mask; js; js &= js - 1) {
      const int j = std::countr_zero(js);
      const uint32_t prev = mask ^ (1u << j);
      const double* row = &dp[static_cast<size_t>(prev) * k];
      const double* dj = &dist[j + 1];
      double best = kInf;
      for (uint32_t is = prev; is; is &= is - 1) {
        const int i = std::countr_zero(is);
        const double c = row[i] + dj[(i + 1) * n];
        if (c < best) best = c;
      }
      dp[static_cast<size_t>(mask) * k + j] = best;
    }
  }
  double best = kInf;
  int last = -1;
  for (int j = 0; j < k; ++j) {
    const double c = dp[static_cast<size_t>(full) * k + j] + dist[j + 1];
    if (c < best) {
      best = c;
      last = j;
    }
  }
  // Backtrack by matching the stored values; the additions are replayed in
  // the same order so equality is exact.
  std::vector<int> order{0};
  std::vector<int> reversed;
  uint32_t mask = full;
  int j = last;
  while (true) {
    reversed.push_back(j + 1);
    const uint32_t prev = mask ^ (1u << j);
    if (prev == 0) break;
    const double target = dp[static_cast<size_t>(mask) * k + j];
    int pick = -1;
    for (uint32_t is = prev; is; is &= is - 1) {
      const int i = std::countr_zero(is);
      if (dp[static_cast<size_t>(prev) * k + i] + dist[(i + 1) * n + j + 1] ==
          target) {
        pick = i;
        break;
      }
    }
    mask = prev;
    j = pick;
  }
  order.insert(order.end(), reversed.rbegin(), reversed.rend());
  return Solution::FromTour(order);
}

namespace {

// Maximum clique on the complement graph with greedy-colouring bounds.
class CliqueSearch {
 public:
  explicit CliqueSearch(const MisInstance& g) : n_(g.n), comp_(g.n) {
    const uint64_t all = n_ == 64 ? ~0ULL : (1ULL << n_) - 1;
    std::vector<uint64_t> adj(n_, 0);
    for (const auto& [u, v] : g.edges) {
      adj[u] |= 1ULL << v;
      adj[v] |= 1ULL << u;
    }
    for (int v = 0; v < n_; ++v) comp_[v] = all & ~adj[v] & ~(1ULL << v);
    all_ = all;
  }

  uint64_t Run() {
    Expand(0, 0, all_);
    return best_set_;
  }

 private:
  void Expand(int size, uint64_t current, uint64_t candidates) {
    if (candidates == 0) {
      if (size > best_size_) {
        best_size_ = size;
        best_set_ = current;
      }
      return;
    }
    // Greedy colouring of the candidates; a vertex with colour c bounds the
    // clique reachable from it by size + c.
    std::vector<int> order;
    std::vector<int> colour;
    uint64_t uncoloured = candidates;
    int c = 0;
    while (uncoloured) {
      ++c;
      uint64_t q = uncoloured;
      while (q) {
        const int v = std::countr_zero(q);
        q &= ~(1ULL << v);
        q &= ~comp_[v];
        uncoloured &= ~(1ULL << v);
        order.push_back(v);
        colour.push_back(c);
      }
    }
    for (int idx = static_cast<int>(order.size()) - 1; idx >= 0; --idx) {
      if (size + colour[idx] <= best_size_) return;
      const int v = order[idx];
      Expand(size + 1, current | (1ULL << v), candidates & comp_[v]);
      candidates &= ~(1ULL << v);
    }
  }

  int n_;
  std::vector<uint64_t> comp_;
  uint64_t all_ = 0;
  int best_size_ = -1;
  uint64_t best_set_ = 0;
};

}  // namespace

Solution MaxIndependentSet(const MisInstance& g) {
  if (g.n > 64) {
    throw OracleLimitError("oracle limit exceeded: bitset search supports n <= 64");
  }
  const uint64_t set = CliqueSearch(g).Run();
  Solution s = Solution::EmptyMis(g.n);
  for (int v = 0; v < g.n; ++v) s.bits[v] = (set >> v) & 1;
  return s;
}

Solution ExactSolve(const Instance& instance, const OracleLimits& limits) {
  if (const auto* tsp = std::get_if<TspInstance>(&instance)) {
    if (tsp->n() > limits.tsp_max_n) {
      throw OracleLimitError("oracle limit exceeded: tsp n=" +
                             std::to_string(tsp->n()) + " > " +
                             std::to_string(limits.tsp_max_n));
    }
    return HeldKarp(*tsp);
  }
  const auto& mis = std::get<MisInstance>(instance);
  if (mis.n > limits.mis_max_n) {
    throw OracleLimitError("oracle limit exceeded: mis n=" +
                           std::to_string(mis.n) + " > " +
                           std::to_string(limits.mis_max_n));
  }
  return MaxIndependentSet(mis);
}

std::string_view ProvenanceName(LabelProvenance p) {
  return p == LabelProvenance::kExact ? "exact" : "suboptimal-budgeted";
}

LabelProvenance ParseProvenance(std::string_view name) {
  if (name == "exact") return LabelProvenance::kExact;
  if (name == "suboptimal-budgeted") return LabelProvenance::kSuboptimalBudgeted;
  throw DataError("unknown label provenance '" + std::string(name) + "'");
}

void LabeledDataset::Validate() const {
  if (labels.size() != instances.size() ||
      label_costs.size() != instances.size()) {
    throw DataError("dataset has mismatched instance/label counts");
  }
  for (size_t k = 0; k < instances.size(); ++k) {
    if (KindOf(instances[k]) != kind) {
      throw DataError("dataset mixes problem kinds");
    }
    const double c = Cost(instances[k], labels[k]);
    if (c != label_costs[k]) {
      throw DataError("label cost of '" + IdOf(instances[k]) +
                      "' disagrees with its recomputed cost");
    }
  }
}

LabeledDataset LabelExactly(std::vector<Instance> instances, uint64_t seed,
                            const OracleLimits& limits) {
  LabeledDataset d;
  d.kind = instances.empty() ? ProblemKind::kTsp : KindOf(instances.front());
  d.seed = seed;
  d.provenance = LabelProvenance::kExact;
  const int count = static_cast<int>(instances.size());
  d.labels.resize(count);
  d.label_costs.resize(count);
  std::vector<std::string> errors(count);
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < count; ++k) {
    try {
      d.labels[k] = ExactSolve(instances[k], limits);
      d.label_costs[k] = Cost(instances[k], d.labels[k]);
    } catch (const std::exception& e) {
      errors[k] = IdOf(instances[k]) + ": " + e.what();
    }
  }
  for (const std::string& e : errors) {
    if (!e.empty()) throw OracleLimitError(e);
  }
  d.instances = std::move(instances);
  return d;
}

LabeledDataset MakeSuboptimalLabels(const LabeledDataset& dataset,
                                    int64_t max_exchanges, uint64_t seed,
                                    SuboptimalReport* report, int restarts) {
  if (dataset.kind != ProblemKind::kTsp) {
    throw ConfigError("suboptimal labels are only supported for tsp datasets");
  }
  if (restarts < 1) throw ConfigError("suboptimal label restarts must be >= 1");
  LabeledDataset out = dataset;
  out.provenance = LabelProvenance::kSuboptimalBudgeted;
  const int count = dataset.size();
  std::vector<double> drops(count, 0.0);
  const Rng root(seed);
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < count; ++k) {
    const auto& g = std::get<TspInstance>(dataset.instances[k]);
    Rng rng = root.Fork(g.id);
    TwoOptOptions opts;
    opts.max_exchanges = max_exchanges;
    for (int r = 0; r < restarts; ++r) {
      std::vector<int> order(g.n());
      std::iota(order.begin(), order.end(), 0);
      for (int i = g.n() - 1; i > 0; --i) {
        std::swap(order[i], order[rng.Below(i + 1)]);
      }
      Solution tour = TwoOpt(g, Solution::FromTour(order), opts);
      const double c = Cost(dataset.instances[k], tour);
      if (r == 0 || c < out.label_costs[k]) {
        out.labels[k] = std::move(tour);
        out.label_costs[k] = c;
      }
    }
    drops[k] = (out.label_costs[k] - dataset.label_costs[k]) /
               std::abs(dataset.label_costs[k]) * 100.0;
  }
  if (report != nullptr) {
    report->mean_drop_percent =
        count ? std::accumulate(drops.begin(), drops.end(), 0.0) / count : 0.0;
    report->max_drop_percent =
        count ? *std::max_element(drops.begin(), drops.end()) : 0.0;
  }
  return out;
}

}  // namespace nco
