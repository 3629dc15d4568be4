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

#ifndef NCO_KERNELS_H_
#define NCO_KERNELS_H_

#include <vector>

#include <Eigen/Dense>

namespace nco {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Directed edge list grouped by source vertex (CSR). Every edge (i, j) has
// its reverse (j, i) in the list, so per-destination reductions can be run
// as per-source reductions over `reverse`.
struct EdgeIndex {
  int n = 0;
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<int> offsets;  // size n + 1
  std::vector<int> reverse;

  int num_edges() const { return static_cast<int>(src.size()); }
  // Builds the index from symmetric adjacency lists.
  static EdgeIndex FromAdjacency(const std::vector<std::vector<int>>& adj);
  static EdgeIndex Complete(int n);
};

// Hot loops of the message-passing layer. The default namespace holds the
// OpenMP kernels; `reference` holds serial versions used as test oracles and
// benchmark baselines. Both produce bitwise-identical results because each
// output row is reduced by exactly one thread in a fixed order.
namespace kernels {

// edges[e] += qh[src[e]] + rh[dst[e]]
void GatherAddEndpoints(const EdgeIndex& index, const RowMatrix& qh,
                        const RowMatrix& rh, RowMatrix& edges);

// agg[i] = sum over edges (i, j) of gate[e] * vh[j]
void GatedAggregate(const EdgeIndex& index, const RowMatrix& gate,
                    const RowMatrix& vh, RowMatrix& agg);

// Adjoint of GatedAggregate: dgate[e] = dagg[i] * vh[j] and
// dvh[j] = sum over edges (i, j) of dagg[i] * gate[e].
void GatedAggregateBackward(const EdgeIndex& index, const RowMatrix& gate,
                            const RowMatrix& vh, const RowMatrix& dagg,
                            RowMatrix& dgate, RowMatrix& dvh);

// Adjoint of GatherAddEndpoints: dqh[i] = sum of dedges over edges leaving i,
// drh[j] = sum over edges entering j.
void ScatterEndpoints(const EdgeIndex& index, const RowMatrix& dedges,
                      RowMatrix& dqh, RowMatrix& drh);

namespace reference {
void GatherAddEndpoints(const EdgeIndex& index, const RowMatrix& qh,
                        const RowMatrix& rh, RowMatrix& edges);
void GatedAggregate(const EdgeIndex& index, const RowMatrix& gate,
                    const RowMatrix& vh, RowMatrix& agg);
void GatedAggregateBackward(const EdgeIndex& index, const RowMatrix& gate,
                            const RowMatrix& vh, const RowMatrix& dagg,
                            RowMatrix& dgate, RowMatrix& dvh);
void ScatterEndpoints(const EdgeIndex& index, const RowMatrix& dedges,
                      RowMatrix& dqh, RowMatrix& drh);
}  // namespace reference

}  // namespace kernels
}  // namespace nco

#endif  // NCO_KERNELS_H_
