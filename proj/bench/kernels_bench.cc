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


// Message-passing kernels: OpenMP versions against the serial reference.

#include <benchmark/benchmark.h>

#include "nco/common.h"
#include "nco/gnn.h"
#include "nco/instances.h"
#include "nco/kernels.h"

namespace nco {
namespace {

constexpr int kHidden = 64;

RowMatrix Random(int rows, int cols, Rng& rng) {
  RowMatrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.Uniform() - 0.5;
  return m;
}

struct Inputs {
  EdgeIndex index;
  RowMatrix node_a, node_b, edge_a, edge_b;

  explicit Inputs(int n) : index(EdgeIndex::Complete(n)) {
    Rng rng(static_cast<uint64_t>(n));
    const int m = index.num_edges();
    node_a = Random(n, kHidden, rng);
    node_b = Random(n, kHidden, rng);
    edge_a = Random(m, kHidden, rng);
    edge_b = Random(m, kHidden, rng);
  }
};

template <bool kParallel>
void BM_GatherAddEndpoints(benchmark::State& state) {
  const Inputs in(static_cast<int>(state.range(0)));
  RowMatrix edges = in.edge_a;
  for (auto _ : state) {
    if constexpr (kParallel) {
      kernels::GatherAddEndpoints(in.index, in.node_a, in.node_b, edges);
    } else {
      kernels::reference::GatherAddEndpoints(in.index, in.node_a, in.node_b, edges);
    }
    benchmark::DoNotOptimize(edges.data());
  }
  state.SetItemsProcessed(state.iterations() * in.index.num_edges());
}

template <bool kParallel>
void BM_GatedAggregate(benchmark::State& state) {
  const Inputs in(static_cast<int>(state.range(0)));
  RowMatrix agg;
  for (auto _ : state) {
    if constexpr (kParallel) {
      kernels::GatedAggregate(in.index, in.edge_a, in.node_a, agg);
    } else {
      kernels::reference::GatedAggregate(in.index, in.edge_a, in.node_a, agg);
    }
    benchmark::DoNotOptimize(agg.data());
  }
  state.SetItemsProcessed(state.iterations() * in.index.num_edges());
}

template <bool kParallel>
void BM_GatedAggregateBackward(benchmark::State& state) {
  const Inputs in(static_cast<int>(state.range(0)));
  RowMatrix dgate, dvh;
  for (auto _ : state) {
    if constexpr (kParallel) {
      kernels::GatedAggregateBackward(in.index, in.edge_a, in.node_a, in.node_b,
                                      dgate, dvh);
    } else {
      kernels::reference::GatedAggregateBackward(in.index, in.edge_a, in.node_a,
                                                 in.node_b, dgate, dvh);
    }
    benchmark::DoNotOptimize(dgate.data());
    benchmark::DoNotOptimize(dvh.data());
  }
  state.SetItemsProcessed(state.iterations() * in.index.num_edges());
}

template <bool kParallel>
void BM_ScatterEndpoints(benchmark::State& state) {
  const Inputs in(static_cast<int>(state.range(0)));
  RowMatrix dq, dr;
  for (auto _ : state) {
    if constexpr (kParallel) {
      kernels::ScatterEndpoints(in.index, in.edge_b, dq, dr);
    } else {
      kernels::reference::ScatterEndpoints(in.index, in.edge_b, dq, dr);
    }
    benchmark::DoNotOptimize(dq.data());
    benchmark::DoNotOptimize(dr.data());
  }
  state.SetItemsProcessed(state.iterations() * in.index.num_edges());
}

void BM_ForwardTsp(benchmark::State& state) {
  GnnConfig cfg;
  cfg.hidden = 32;
  cfg.time_embed_dim = 16;
  cfg.node_pos_dim = 16;
  const Policy policy = MakePolicy(cfg, 1);
  const Instance inst = GenTsp(static_cast<int>(state.range(0)), 1, 3)[0];
  const GraphInput g = BuildGraph(inst, cfg);
  std::vector<uint8_t> xt(g.num_variables(), 0);
  for (auto _ : state) {
    GnnOutput out = Forward(policy, g, xt, 10, NormMode::kRunning);
    benchmark::DoNotOptimize(out.x0.data());
  }
}

#define NCO_PAIR(fn)                                              \
  BENCHMARK(fn<false>)->Name(#fn "/reference")->Arg(20)->Arg(100); \
  BENCHMARK(fn<true>)->Name(#fn "/openmp")->Arg(20)->Arg(100)

NCO_PAIR(BM_GatherAddEndpoints);
NCO_PAIR(BM_GatedAggregate);
NCO_PAIR(BM_GatedAggregateBackward);
NCO_PAIR(BM_ScatterEndpoints);
BENCHMARK(BM_ForwardTsp)->Arg(20)->Arg(50);

}  // namespace
}  // namespace nco

BENCHMARK_MAIN();
