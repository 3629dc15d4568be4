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

#include <gtest/gtest.h>

#include <omp.h>

#include "nco/instances.h"
#include "test_util.h"

namespace nco {
namespace {

using testing::RandomMatrix;

class KernelTest : public ::testing::TestWithParam<int> {
 protected:
  EdgeIndex Index() const {
    const int n = 40;
    if (GetParam() == 0) return EdgeIndex::Complete(n);
    return EdgeIndex::FromAdjacency(GenEr(n, 0.2, 1, 3)[0].Adjacency());
  }
};

TEST_P(KernelTest, ParallelMatchesReferenceBitwise) {
  const EdgeIndex idx = Index();
  const int n = idx.n, m = idx.num_edges(), d = 5;
  Rng rng(GetParam());
  const RowMatrix qh = RandomMatrix(n, d, rng), rh = RandomMatrix(n, d, rng);
  const RowMatrix gate = RandomMatrix(m, d, rng), vh = RandomMatrix(n, d, rng);
  const RowMatrix dagg = RandomMatrix(n, d, rng), de = RandomMatrix(m, d, rng);
  const RowMatrix e0 = RandomMatrix(m, d, rng);
  for (int threads : {1, 3}) {
    omp_set_num_threads(threads);
    RowMatrix e1 = e0, e2 = e0;
    kernels::GatherAddEndpoints(idx, qh, rh, e1);
    kernels::reference::GatherAddEndpoints(idx, qh, rh, e2);
    EXPECT_EQ(e1, e2);

    RowMatrix a1(n, d), a2(n, d);
    kernels::GatedAggregate(idx, gate, vh, a1);
    kernels::reference::GatedAggregate(idx, gate, vh, a2);
    EXPECT_EQ(a1, a2);

    RowMatrix g1 = RowMatrix::Zero(m, d), g2 = g1, v1 = RowMatrix::Zero(n, d),
              v2 = v1;
    kernels::GatedAggregateBackward(idx, gate, vh, dagg, g1, v1);
    kernels::reference::GatedAggregateBackward(idx, gate, vh, dagg, g2, v2);
    EXPECT_EQ(g1, g2);
    EXPECT_EQ(v1, v2);

    RowMatrix q1 = RowMatrix::Zero(n, d), q2 = q1, r1 = q1, r2 = q1;
    kernels::ScatterEndpoints(idx, de, q1, r1);
    kernels::reference::ScatterEndpoints(idx, de, q2, r2);
    EXPECT_EQ(q1, q2);
    EXPECT_EQ(r1, r2);
  }
  omp_set_num_threads(omp_get_num_procs());
}

TEST_P(KernelTest, ReferenceMatchesDefinition) {
  const EdgeIndex idx = Index();
  const int n = idx.n, m = idx.num_edges(), d = 3;
  Rng rng(7);
  const RowMatrix gate = RandomMatrix(m, d, rng), vh = RandomMatrix(n, d, rng);
  RowMatrix agg(n, d);
  kernels::reference::GatedAggregate(idx, gate, vh, agg);
  RowMatrix expect = RowMatrix::Zero(n, d);
  for (int e = 0; e < m; ++e) {
    expect.row(idx.src[e]) += gate.row(e).cwiseProduct(vh.row(idx.dst[e]));
  }
  EXPECT_LT((agg - expect).cwiseAbs().maxCoeff(), 1e-12);
  for (int e = 0; e < m; ++e) {
    EXPECT_EQ(idx.src[idx.reverse[e]], idx.dst[e]);
    EXPECT_EQ(idx.dst[idx.reverse[e]], idx.src[e]);
  }
}

INSTANTIATE_TEST_SUITE_P(Graphs, KernelTest, ::testing::Values(0, 1));

}  // namespace
}  // namespace nco
