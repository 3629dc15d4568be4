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

#ifndef NCO_INSTANCES_H_
#define NCO_INSTANCES_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nco/common.h"

namespace nco {

enum class ProblemKind { kTsp, kMis };

std::string_view KindName(ProblemKind kind);
ProblemKind ParseKind(std::string_view name);

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

// Euclidean TSP on the unit square. Distances are never rounded.
struct TspInstance {
  std::string id;
  std::vector<Point> coords;

  int n() const { return static_cast<int>(coords.size()); }
  double Distance(int i, int j) const;
  void Validate() const;
  friend bool operator==(const TspInstance&, const TspInstance&) = default;
};

struct MisInstance {
  std::string id;
  int n = 0;
  // Unordered pairs stored with first < second, sorted.
  std::vector<std::pair<int, int>> edges;

  // Adjacency lists derived from `edges`.
  std::vector<std::vector<int>> Adjacency() const;
  void Validate() const;
  friend bool operator==(const MisInstance&, const MisInstance&) = default;
};

using Instance = std::variant<TspInstance, MisInstance>;

ProblemKind KindOf(const Instance& instance);
const std::string& IdOf(const Instance& instance);
int NodeCount(const Instance& instance);

// Number of binary decision variables. TSP uses the strict upper triangle of
// the edge-indicator matrix, so N = n(n-1)/2; MIS uses one bit per vertex.
int NumVariables(const Instance& instance);

// Index of the undirected edge {i, j}, i != j, in the upper-triangle layout.
inline int EdgeVar(int n, int i, int j) {
  if (i > j) std::swap(i, j);
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}
// Inverse of EdgeVar.
std::pair<int, int> VarEdge(int n, int var);

// A binary assignment. TSP bits are the full symmetric n x n indicator with a
// zero diagonal; MIS bits are a length-n vertex indicator.
struct Solution {
  ProblemKind kind = ProblemKind::kTsp;
  int n = 0;
  std::vector<uint8_t> bits;

  static Solution EmptyTsp(int n);
  static Solution EmptyMis(int n);
  static Solution FromTour(std::span<const int> order);
  static Solution FromSelection(int n, std::span<const int> selected);
  // Build from the variable layout used by the diffusion process.
  static Solution FromVariables(ProblemKind kind, int n,
                                std::span<const uint8_t> vars);

  bool Edge(int i, int j) const { return bits[i * n + j] != 0; }
  void SetEdge(int i, int j, bool on);
  bool Selected(int v) const { return bits[v] != 0; }

  std::vector<uint8_t> ToVariables() const;
  // Vertex order of a feasible tour, starting at 0 and moving to the smaller
  // of vertex 0's two neighbours first.
  std::vector<int> TourOrder() const;
  std::vector<int> SelectedVertices() const;

  friend bool operator==(const Solution&, const Solution&) = default;
};

struct Feasibility {
  bool feasible = true;
  std::string violation;  // first violated constraint, empty when feasible
  explicit operator bool() const { return feasible; }
};

Feasibility CheckFeasible(const Instance& instance, const Solution& solution);

// TSP: tour length. MIS: minus the number of selected vertices.
// Throws DataError naming the violation when the solution is infeasible.
double Cost(const Instance& instance, const Solution& solution);
// Cost without the feasibility check, for hot loops over known-feasible
// tours.
double TourLength(const TspInstance& instance, const Solution& tour);
double TourLength(const TspInstance& instance, std::span<const int> order);

std::vector<TspInstance> GenTsp(int n, int count, uint64_t seed);
std::vector<MisInstance> GenEr(int n, double p, int count, uint64_t seed);

struct OracleLimits {
  int tsp_max_n = 16;
  int mis_max_n = 40;
};
// Held-Karp cannot exceed this without blowing past a few hundred MB.
inline constexpr int kHeldKarpHardLimit = 20;

// Provably optimal solution; throws OracleLimitError above the limits.
Solution ExactSolve(const Instance& instance, const OracleLimits& limits = {});
Solution HeldKarp(const TspInstance& instance);
Solution MaxIndependentSet(const MisInstance& instance);

enum class LabelProvenance { kExact, kSuboptimalBudgeted };
std::string_view ProvenanceName(LabelProvenance p);
LabelProvenance ParseProvenance(std::string_view name);

struct LabeledDataset {
  ProblemKind kind = ProblemKind::kTsp;
  std::vector<Instance> instances;
  std::vector<Solution> labels;
  std::vector<double> label_costs;
  uint64_t seed = 0;
  LabelProvenance provenance = LabelProvenance::kExact;

  int size() const { return static_cast<int>(instances.size()); }
  // Checks feasibility of every label and exact agreement of label_costs.
  void Validate() const;
  friend bool operator==(const LabeledDataset&, const LabeledDataset&) =
      default;
};

// Labels every instance with ExactSolve. Parallel across instances.
LabeledDataset LabelExactly(std::vector<Instance> instances, uint64_t seed,
                            const OracleLimits& limits = {});

struct SuboptimalReport {
  double mean_drop_percent = 0.0;  // relative to the replaced labels
  double max_drop_percent = 0.0;
};

// Replaces the labels of an exact TSP dataset with budget-capped 2-opt tours
// started from random permutations. `max_exchanges` < 0 means unbounded.
// With restarts > 1 the cheapest of that many independent runs is kept.
LabeledDataset MakeSuboptimalLabels(const LabeledDataset& dataset,
                                    int64_t max_exchanges, uint64_t seed,
                                    SuboptimalReport* report = nullptr,
                                    int restarts = 1);

inline constexpr int kDatasetSchemaVersion = 1;

std::string SerializeDataset(const LabeledDataset& dataset);
void SaveDataset(const LabeledDataset& dataset, const std::string& path);
// FNV-1a of the serialized form, as 16 hex digits.
std::string DatasetHash(const LabeledDataset& dataset);
LabeledDataset LoadDataset(const std::string& path);

// Writes `contents` to a sibling temp file and renames it over `path`.
void WriteFileAtomic(const std::string& path, std::string_view contents);
std::string ReadFile(const std::string& path);

}  // namespace nco

#endif  // NCO_INSTANCES_H_
