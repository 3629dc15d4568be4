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

#include "nco/kernels.h"

#include <numeric>
#include <stdexcept>

namespace nco {

EdgeIndex EdgeIndex::FromAdjacency(const std::vector<std::vector<int>>& adj) {
  EdgeIndex index;
  index.n = static_cast<int>(adj.size());
  index.offsets.assign(index.n + 1, 0);
  for (int i = 0; i < index.n; ++i) {
    index.offsets[i + 1] = index.offsets[i] + static_cast<int>(adj[i].size());
    for (int j : adj[i]) {
      index.src.push_back(i);
      index.dst.push_back(j);
    }
  }
  index.reverse.assign(index.src.size(), -1);
  for (int e = 0; e < index.num_edges(); ++e) {
    const int j = index.dst[e];
    for (int f = index.offsets[j]; f < index.offsets[j + 1]; ++f) {
      if (index.dst[f] == index.src[e]) {
        index.reverse[e] = f;
        break;
      }
    }
    if (index.reverse[e] < 0) {
      throw std::invalid_argument("edge index requires symmetric adjacency");
    }
  }
  return index;
}

EdgeIndex EdgeIndex::Complete(int n) {
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) adj[i].push_back(j);
    }
  }
  return FromAdjacency(adj);
}

namespace kernels {
namespace {
// Below this many edges the fork/join cost dominates.
constexpr int kParallelThreshold = 4096;
}  // namespace

void GatherAddEndpoints(const EdgeIndex& index, const RowMatrix& qh,
                        const RowMatrix& rh, RowMatrix& edges) {
  const int m = index.num_edges();
#pragma omp parallel for schedule(static) if (m > kParallelThreshold)
  for (int e = 0; e < m; ++e) {
    edges.row(e) += qh.row(index.src[e]) + rh.row(index.dst[e]);
  }
}

void GatedAggregate(const EdgeIndex& index, const RowMatrix& gate,
                    const RowMatrix& vh, RowMatrix& agg) {
  agg.setZero(index.n, vh.cols());
#pragma omp parallel for schedule(static) if (index.num_edges() > kParallelThreshold)
  for (int i = 0; i < index.n; ++i) {
    for (int e = index.offsets[i]; e < index.offsets[i + 1]; ++e) {
      agg.row(i) += gate.row(e).cwiseProduct(vh.row(index.dst[e]));
    }
  }
}

void GatedAggregateBackward(const EdgeIndex& index, const RowMatrix& gate,
                            const RowMatrix& vh, const RowMatrix& dagg,
                            RowMatrix& dgate, RowMatrix& dvh) {
  const int m = index.num_edges();
  dgate.resize(m, vh.cols());
  dvh.setZero(index.n, vh.cols());
#pragma omp parallel for schedule(static) if (m > kParallelThreshold)
  for (int j = 0; j < index.n; ++j) {
    for (int e = index.offsets[j]; e < index.offsets[j + 1]; ++e) {
      // e = (j, i); its reverse r = (i, j) carries the gate on j's message.
      const int r = index.reverse[e];
      const int i = index.dst[e];
      dgate.row(e) = dagg.row(j).cwiseProduct(vh.row(i));
      dvh.row(j) += dagg.row(i).cwiseProduct(gate.row(r));
    }
  }
}

void ScatterEndpoints(const EdgeIndex& index, const RowMatrix& dedges,
                      RowMatrix& dqh, RowMatrix& drh) {
  dqh.setZero(index.n, dedges.cols());
  drh.setZero(index.n, dedges.cols());
#pragma omp parallel for schedule(static) if (index.num_edges() > kParallelThreshold)
  for (int i = 0; i < index.n; ++i) {
    for (int e = index.offsets[i]; e < index.offsets[i + 1]; ++e) {
      dqh.row(i) += dedges.row(e);
      drh.row(i) += dedges.row(index.reverse[e]);
    }
  }
}

namespace reference {

void GatherAddEndpoints(const EdgeIndex& index, const RowMatrix& qh,
                        const RowMatrix& rh, RowMatrix& edges) {
  const int d = static_cast<int>(edges.cols());
  for (int e = 0; e < index.num_edges(); ++e) {
    for (int c = 0; c < d; ++c) {
      edges(e, c) += qh(index.src[e], c) + rh(index.dst[e], c);
    }
  }
}

void GatedAggregate(const EdgeIndex& index, const RowMatrix& gate,
                    const RowMatrix& vh, RowMatrix& agg) {
  const int d = static_cast<int>(vh.cols());
  agg.setZero(index.n, d);
  for (int e = 0; e < index.num_edges(); ++e) {
    for (int c = 0; c < d; ++c) {
      agg(index.src[e], c) += gate(e, c) * vh(index.dst[e], c);
    }
  }
}

void GatedAggregateBackward(const EdgeIndex& index, const RowMatrix& gate,
                            const RowMatrix& vh, const RowMatrix& dagg,
                            RowMatrix& dgate, RowMatrix& dvh) {
  const int d = static_cast<int>(vh.cols());
  dgate.resize(index.num_edges(), d);
  dvh.setZero(index.n, d);
  // Visit contributions to dvh[j] in the same order as the parallel kernel:
  // grouped by j, then by the position of (j, i) in j's adjacency.
  for (int j = 0; j < index.n; ++j) {
    for (int e = index.offsets[j]; e < index.offsets[j + 1]; ++e) {
      const int i = index.dst[e];
      const int r = index.reverse[e];
      for (int c = 0; c < d; ++c) {
        dgate(e, c) = dagg(j, c) * vh(i, c);
        dvh(j, c) += dagg(i, c) * gate(r, c);
      }
    }
  }
}

void ScatterEndpoints(const EdgeIndex& index, const RowMatrix& dedges,
                      RowMatrix& dqh, RowMatrix& drh) {
  const int d = static_cast<int>(dedges.cols());
  dqh.setZero(index.n, d);
  drh.setZero(index.n, d);
  for (int e = 0; e < index.num_edges(); ++e) {
    for (int c = 0; c < d; ++c) dqh(index.src[e], c) += dedges(e, c);
  }
  for (int j = 0; j < index.n; ++j) {
    for (int e = index.offsets[j]; e < index.offsets[j + 1]; ++e) {
      for (int c = 0; c < d; ++c) drh(j, c) += dedges(index.reverse[e], c);
    }
  }
}

}  // namespace reference
}  // namespace kernels
}  // namespace nco
