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

#ifndef NCO_DECODERS_H_
#define NCO_DECODERS_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nco/instances.h"

namespace nco {

// Per-variable selection probabilities. TSP heatmaps are the full symmetric
// n x n matrix with a zero diagonal; MIS heatmaps have one entry per vertex.
struct Heatmap {
  ProblemKind kind = ProblemKind::kTsp;
  int n = 0;
  std::vector<double> probs;

  double At(int i, int j) const { return probs[i * n + j]; }

  // Builds a heatmap from probabilities in the variable layout.
  static Heatmap FromVariables(ProblemKind kind, int n,
                               std::span<const double> vars);
  // Indicator heatmap of a solution.
  static Heatmap FromSolution(const Solution& s);
  std::vector<double> ToVariables() const;
  void Validate() const;
};

enum class DecoderKind { kGreedy, kNearestNeighbor };

std::string_view DecoderName(DecoderKind d);
DecoderKind ParseDecoder(std::string_view name);

// One accept/reject decision, recorded when a trace is requested.
struct DecodeStep {
  int i = 0;
  int j = 0;  // -1 for vertex decisions
  double prob = 0.0;
  bool accepted = false;
};

Solution GreedyTspDecode(const Heatmap& heatmap, const TspInstance& instance,
                         std::vector<DecodeStep>* trace = nullptr);
Solution NearestNeighborTspDecode(const Heatmap& heatmap,
                                  const TspInstance& instance);
Solution GreedyMisDecode(const Heatmap& heatmap, const MisInstance& instance,
                         std::vector<DecodeStep>* trace = nullptr);

// Dispatches on instance kind; MIS accepts only the greedy decoder.
Solution Decode(DecoderKind decoder, const Heatmap& heatmap,
                const Instance& instance);

std::string DecodeTraceJson(const std::vector<DecodeStep>& trace);

struct TwoOptOptions {
  // Cap on improving exchanges; negative means run to convergence.
  int64_t max_exchanges = 1000;
  // Exchanges must shorten the tour by more than this.
  double min_gain = 1e-12;
};

struct TwoOptStats {
  int64_t exchanges = 0;
  bool converged = false;
};

// First-improvement 2-opt. The scan runs over tour positions (a, b), a < b,
// in lexicographic order and restarts after every applied exchange.
Solution TwoOpt(const TspInstance& instance, const Solution& tour,
                const TwoOptOptions& options = {},
                TwoOptStats* stats = nullptr);

// TSP: |E(a) xor E(b)| / 2, i.e. n minus the shared undirected edges.
// MIS: number of differing vertex indicators.
int Hamming(const Solution& a, const Solution& b);

}  // namespace nco

#endif  // NCO_DECODERS_H_
