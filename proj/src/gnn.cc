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

#include <cmath>
#include <numbers>

namespace nco {
namespace {

constexpr double kNormEps = 1e-5;
// Linear slots inside a message-passing layer, in visiting order.
constexpr int kLinearsPerLayer = 9;
enum Slot { kU, kV, kP, kQ, kR, kEdgeMlp1, kEdgeMlp2, kTimeMlp1, kTimeMlp2 };

int InputLinears(const GnnConfig& c) {
  return c.kind == ProblemKind::kTsp ? 2 : 1;
}

int LayerLinear(const GnnConfig& c, int layer, int slot) {
  return InputLinears(c) + layer * kLinearsPerLayer + slot;
}

int HeadLinear(const GnnConfig& c) {
  return InputLinears(c) + c.depth * kLinearsPerLayer;
}

template <typename Params, typename Matrix, typename Fn>
void VisitTensors(Params& p, Fn&& fn) {
  const GnnConfig& c = p.config;
  int linear = 0;
  auto visit_linear = [&](const std::string& name, int block, auto& lin) {
    fn(TensorInfo{name + ".w", block, TensorRole::kWeight, linear++},
       static_cast<Matrix&>(lin.w));
    fn(TensorInfo{name + ".b", block, TensorRole::kBias, -1},
       static_cast<Matrix&>(lin.b));
  };
  auto visit_norm = [&](const std::string& name, int block, auto& bn) {
    fn(TensorInfo{name + ".scale", block, TensorRole::kNormAffine, -1},
       static_cast<Matrix&>(bn.scale));
    fn(TensorInfo{name + ".shift", block, TensorRole::kNormAffine, -1},
       static_cast<Matrix&>(bn.shift));
    fn(TensorInfo{name + ".running_mean", block, TensorRole::kNormStatistic, -1},
       static_cast<Matrix&>(bn.running_mean));
    fn(TensorInfo{name + ".running_var", block, TensorRole::kNormStatistic, -1},
       static_cast<Matrix&>(bn.running_var));
  };
  visit_linear("input.node", 0, p.node_in);
  if (c.kind == ProblemKind::kTsp) visit_linear("input.edge", 0, p.edge_in);
  for (size_t l = 0; l < p.layers.size(); ++l) {
    auto& layer = p.layers[l];
    const int block = static_cast<int>(l) + 1;
    const std::string prefix = "layer" + std::to_string(l) + ".";
    visit_linear(prefix + "u", block, layer.u);
    visit_linear(prefix + "v", block, layer.v);
    visit_linear(prefix + "p", block, layer.p);
    visit_linear(prefix + "q", block, layer.q);
    visit_linear(prefix + "r", block, layer.r);
    visit_linear(prefix + "edge_mlp1", block, layer.edge_mlp1);
    visit_linear(prefix + "edge_mlp2", block, layer.edge_mlp2);
    visit_linear(prefix + "time_mlp1", block, layer.time_mlp1);
    visit_linear(prefix + "time_mlp2", block, layer.time_mlp2);
    visit_norm(prefix + "edge_norm", block, layer.edge_norm);
    visit_norm(prefix + "node_norm", block, layer.node_norm);
  }
  visit_linear("head", static_cast<int>(p.layers.size()) + 1, p.head);
}

double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void GnnConfig::Validate() const {
  if (depth < 0) throw ConfigError("gnn depth must be >= 0");
  if (hidden < 2) throw ConfigError("gnn hidden width must be >= 2");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
    throw ConfigError("time_embed_dim must be even and >= 2");
  }
  if (kind == ProblemKind::kTsp && (node_pos_dim < 4 || node_pos_dim % 4 != 0)) {
    throw ConfigError("node_pos_dim must be a positive multiple of 4");
  }
  if (mlp_hidden < 0) throw ConfigError("mlp_hidden must be >= 0");
}

void ForEachTensor(
    GnnParams& params,
    const std::function<void(const TensorInfo&, Eigen::MatrixXd&)>& fn) {
  VisitTensors<GnnParams, Eigen::MatrixXd>(params, fn);
}

void ForEachTensor(
    const GnnParams& params,
    const std::function<void(const TensorInfo&, const Eigen::MatrixXd&)>& fn) {
  VisitTensors<const GnnParams, const Eigen::MatrixXd>(params, fn);
}

int NumLinears(const GnnParams& params) {
  return HeadLinear(params.config) + 1;
}

std::string_view BlockModeName(BlockMode m) {
  switch (m) {
    case BlockMode::kFrozen:
      return "frozen";
    case BlockMode::kLora:
      return "lora";
    case BlockMode::kFull:
      return "full";
  }
  return "?";
}

BlockMode ParseBlockMode(std::string_view name) {
  if (name == "frozen") return BlockMode::kFrozen;
  if (name == "lora") return BlockMode::kLora;
  if (name == "full") return BlockMode::kFull;
  throw ConfigError("unknown block mode '" + std::string(name) + "'");
}

FinetuneMask FinetuneMask::AllFull(const GnnConfig& config) {
  return {std::vector<BlockMode>(config.depth + 2, BlockMode::kFull)};
}

FinetuneMask FinetuneMask::AllFrozen(const GnnConfig& config) {
  return {std::vector<BlockMode>(config.depth + 2, BlockMode::kFrozen)};
}

FinetuneMask FinetuneMask::Hybrid(const GnnConfig& config,
                                  int selective_layers) {
  if (selective_layers < 0 || selective_layers > config.depth) {
    throw ConfigError("selective layer count must lie in [0, depth]");
  }
  FinetuneMask mask;
  mask.modes.assign(config.depth + 2, BlockMode::kLora);
  for (int l = config.depth - selective_layers; l < config.depth; ++l) {
    mask.modes[l + 1] = BlockMode::kFull;
  }
  mask.modes.back() = BlockMode::kFull;
  return mask;
}

GnnParams InitParams(const GnnConfig& config, uint64_t seed) {
  config.Validate();
  GnnParams p;
  p.config = config;
  const int d = config.hidden;
  const int w = config.MlpWidth();
  auto shape = [](Linear& lin, int out, int in) {
    lin.w.setZero(out, in);
    lin.b.setZero(out, 1);
  };
  auto norm = [d](BatchNorm& bn) {
    bn.scale.setOnes(d, 1);
    bn.shift.setZero(d, 1);
    bn.running_mean.setZero(d, 1);
    bn.running_var.setOnes(d, 1);
  };
  if (config.kind == ProblemKind::kTsp) {
    shape(p.node_in, d, config.node_pos_dim);
    shape(p.edge_in, d, 2);
  } else {
    shape(p.node_in, d, 1);
  }
  p.layers.resize(config.depth);
  for (GnnLayer& layer : p.layers) {
    for (Linear* lin : {&layer.u, &layer.v, &layer.p, &layer.q, &layer.r}) {
      shape(*lin, d, d);
    }
    shape(layer.edge_mlp1, w, d);
    shape(layer.edge_mlp2, d, w);
    shape(layer.time_mlp1, w, config.time_embed_dim);
    shape(layer.time_mlp2, d, w);
    norm(layer.edge_norm);
    norm(layer.node_norm);
  }
  shape(p.head, 2, d);
  Rng rng(seed);
  ForEachTensor(p, [&](const TensorInfo& info, Eigen::MatrixXd& t) {
    if (info.role != TensorRole::kWeight) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols()));
    for (Eigen::Index k = 0; k < t.size(); ++k) {
      t.data()[k] = (2.0 * rng.Uniform() - 1.0) * bound;
    }
  });
  return p;
}

Policy MakePolicy(const GnnConfig& config, uint64_t seed) {
  Policy policy;
  policy.params = InitParams(config, seed);
  policy.mask = FinetuneMask::AllFull(config);
  return policy;
}

LoraSet MakeLora(const GnnParams& params, const FinetuneMask& mask, int rank,
                 double alpha, uint64_t seed) {
  if (rank < 1) throw ConfigError("lora rank must be >= 1");
  if (static_cast<int>(mask.modes.size()) != params.num_blocks()) {
    throw ConfigError("finetune mask does not match network depth");
  }
  LoraSet lora(NumLinears(params));
  Rng rng(seed);
  ForEachTensor(params, [&](const TensorInfo& info, const Eigen::MatrixXd& w) {
    if (info.role != TensorRole::kWeight) return;
    if (mask.modes[info.block] != BlockMode::kLora) return;
    LoraFactor& f = lora[info.linear_index];
    f.a.resize(w.rows(), rank);
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Eigen::Index k = 0; k < f.a.size(); ++k) {
      f.a.data()[k] = (2.0 * rng.Uniform() - 1.0) * bound;
    }
    f.b.setZero(rank, w.cols());
    f.scale = alpha / rank;
  });
  return lora;
}

GnnParams MergeLora(const GnnParams& params, const LoraSet& lora) {
  GnnParams merged = params;
  ForEachTensor(merged, [&](const TensorInfo& info, Eigen::MatrixXd& w) {
    if (info.role != TensorRole::kWeight) return;
    if (info.linear_index >= static_cast<int>(lora.size())) return;
    const LoraFactor& f = lora[info.linear_index];
    if (f.active()) w += f.scale * f.a * f.b;
  });
  return merged;
}

std::vector<double> TimestepEmbed(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw ConfigError("timestep embedding dimension must be even");
  }
  if (t < 0) throw ConfigError("timestep must be >= 0");
  std::vector<double> out(dim);
  for (int k = 0; k < dim / 2; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / dim);
    out[2 * k] = std::sin(t * freq);
    out[2 * k + 1] = std::cos(t * freq);
  }
  return out;
}

GraphInput BuildGraph(const Instance& instance, const GnnConfig& config) {
  GraphInput g;
  g.kind = KindOf(instance);
  g.n = NodeCount(instance);
  if (g.kind != config.kind) {
    throw ConfigError("network configured for " +
                      std::string(KindName(config.kind)) + " but instance is " +
                      std::string(KindName(g.kind)));
  }
  if (const auto* tsp = std::get_if<TspInstance>(&instance)) {
    const int n = g.n;
    g.index = EdgeIndex::Complete(n);
    const int m = g.index.num_edges();
    g.edge_var.resize(m);
    g.edge_dist.resize(m);
    for (int e = 0; e < m; ++e) {
      g.edge_var[e] = EdgeVar(n, g.index.src[e], g.index.dst[e]);
      g.edge_dist[e] = tsp->Distance(g.index.src[e], g.index.dst[e]);
    }
    // Per coordinate: interleaved sin/cos at frequencies 2*pi / 100^(2k/F).
    const int per_coord = config.node_pos_dim / 2;
    g.node_pos.resize(n, config.node_pos_dim);
    for (int i = 0; i < n; ++i) {
      const double xy[2] = {tsp->coords[i].x, tsp->coords[i].y};
      for (int c = 0; c < 2; ++c) {
        for (int k = 0; k < per_coord / 2; ++k) {
          const double freq =
              2.0 * std::numbers::pi * std::pow(100.0, -2.0 * k / per_coord);
          g.node_pos(i, c * per_coord + 2 * k) = std::sin(xy[c] * freq);
          g.node_pos(i, c * per_coord + 2 * k + 1) = std::cos(xy[c] * freq);
        }
      }
    }
  } else {
    g.index = EdgeIndex::FromAdjacency(std::get<MisInstance>(instance).Adjacency());
  }
  g.num_vars = NumVariables(instance);
  g.var_offsets = {0, g.num_vars};
  return g;
}

GraphInput BatchGraphs(const std::vector<const GraphInput*>& graphs) {
  if (graphs.empty()) throw DataError("cannot batch zero graphs");
  GraphInput b;
  b.kind = graphs[0]->kind;
  b.num_graphs = static_cast<int>(graphs.size());
  b.var_offsets = {0};
  int pos_cols = static_cast<int>(graphs[0]->node_pos.cols());
  int total_edges = 0;
  for (const GraphInput* g : graphs) {
    if (g->kind != b.kind || g->num_graphs != 1 ||
        g->node_pos.cols() != pos_cols) {
      throw DataError("batched graphs must be single graphs of one kind");
    }
    b.n += g->n;
    total_edges += g->index.num_edges();
  }
  b.index.n = b.n;
  b.index.offsets.assign(1, 0);
  b.edge_dist.resize(b.kind == ProblemKind::kTsp ? total_edges : 0);
  b.node_pos.resize(b.kind == ProblemKind::kTsp ? b.n : 0, pos_cols);
  int node_base = 0, edge_base = 0;
  for (int gi = 0; gi < b.num_graphs; ++gi) {
    const GraphInput& g = *graphs[gi];
    const int m = g.index.num_edges();
    for (int e = 0; e < m; ++e) {
      b.index.src.push_back(g.index.src[e] + node_base);
      b.index.dst.push_back(g.index.dst[e] + node_base);
      b.index.reverse.push_back(g.index.reverse[e] + edge_base);
      b.edge_graph.push_back(gi);
      if (b.kind == ProblemKind::kTsp) {
        b.edge_var.push_back(g.edge_var[e] + b.num_vars);
        b.edge_dist[edge_base + e] = g.edge_dist[e];
      }
    }
    for (int i = 1; i <= g.n; ++i) {
      b.index.offsets.push_back(g.index.offsets[i] + edge_base);
    }
    if (b.kind == ProblemKind::kTsp) b.node_pos.middleRows(node_base, g.n) = g.node_pos;
    node_base += g.n;
    edge_base += m;
    b.num_vars += g.num_vars;
    b.var_offsets.push_back(b.num_vars);
  }
  return b;
}

namespace {

// Effective weights with LoRA factors folded in, computed once per call.
class WeightView {
 public:
  WeightView(const GnnParams& params, const LoraSet& lora) {
    effective_.resize(NumLinears(params));
    ForEachTensor(params, [&](const TensorInfo& info, const Eigen::MatrixXd& w) {
      if (info.role != TensorRole::kWeight) return;
      const int li = info.linear_index;
      if (li < static_cast<int>(lora.size()) && lora[li].active()) {
        effective_[li] = w + lora[li].scale * lora[li].a * lora[li].b;
        ptr_.push_back(&effective_[li]);
      } else {
        ptr_.push_back(&w);
      }
    });
  }

  const Eigen::MatrixXd& operator[](int li) const { return *ptr_[li]; }

 private:
  std::vector<Eigen::MatrixXd> effective_;
  std::vector<const Eigen::MatrixXd*> ptr_;
};

RowMatrix Affine(const RowMatrix& x, const Eigen::MatrixXd& w,
                 const Eigen::MatrixXd& b) {
  RowMatrix y = x * w.transpose();
  y.rowwise() += b.col(0).transpose();
  return y;
}

RowMatrix Relu(const RowMatrix& x) { return x.cwiseMax(0.0); }

void NormForward(const RowMatrix& x, const BatchNorm& bn, NormMode mode,
                 NormCache& cache, RowMatrix& out) {
  const Eigen::Index rows = x.rows();
  cache.batch = mode == NormMode::kBatch && rows >= 2;
  if (cache.batch) {
    cache.mean = x.colwise().mean();
    cache.var = (x.rowwise() - cache.mean).array().square().colwise().mean();
  } else {
    cache.mean = bn.running_mean.col(0).transpose();
    cache.var = bn.running_var.col(0).transpose();
  }
  cache.inv_std = (cache.var.array() + kNormEps).rsqrt().matrix();
  cache.normalized = ((x.rowwise() - cache.mean).array().rowwise() *
                      cache.inv_std.array())
                         .matrix();
  out = (cache.normalized.array().rowwise() *
         bn.scale.col(0).transpose().array())
            .matrix();
  out.rowwise() += bn.shift.col(0).transpose();
}

void CheckFinite(const RowMatrix& x, const char* what, int layer) {
  if (!x.allFinite()) {
    throw NumericalError("non-finite " + std::string(what) + " at layer " +
                         std::to_string(layer));
  }
}

}  // namespace

GnnOutput Forward(const Policy& policy, const GraphInput& graph,
                  std::span<const uint8_t> xt, int t, NormMode mode,
                  GnnTape* tape) {
  const int ts[1] = {t};
  return Forward(policy, graph, xt, ts, mode, tape);
}

GnnOutput Forward(const Policy& policy, const GraphInput& graph,
                  std::span<const uint8_t> xt, std::span<const int> ts,
                  NormMode mode, GnnTape* tape) {
  const GnnParams& p = policy.params;
  const GnnConfig& c = p.config;
  if (graph.kind != c.kind) throw ConfigError("graph kind does not match network");
  if (static_cast<int>(xt.size()) != graph.num_variables()) {
    throw DataError("noisy state has " + std::to_string(xt.size()) +
                    " variables, instance has " +
                    std::to_string(graph.num_variables()));
  }
  const WeightView w(p, policy.lora);
  const int n = graph.n;
  const int m = graph.index.num_edges();
  const int d = c.hidden;
  GnnTape local;
  GnnTape& tp = tape != nullptr ? *tape : local;
  tp = GnnTape{};
  tp.policy_version = policy.version;
  tp.graph = &graph;
  tp.mode = mode;
  if (static_cast<int>(ts.size()) != graph.num_graphs) {
    throw DataError("expected one timestep per batched graph");
  }
  tp.time_embed.resize(graph.num_graphs, c.time_embed_dim);
  for (int gi = 0; gi < graph.num_graphs; ++gi) {
    const std::vector<double> temb = TimestepEmbed(ts[gi], c.time_embed_dim);
    tp.time_embed.row(gi) =
        Eigen::Map<const Eigen::RowVectorXd>(temb.data(), temb.size());
  }

  RowMatrix e, h;
  if (c.kind == ProblemKind::kTsp) {
    tp.edge_input.resize(m, 2);
    for (int k = 0; k < m; ++k) {
      tp.edge_input(k, 0) = 2.0 * xt[graph.edge_var[k]] - 1.0;
      tp.edge_input(k, 1) = graph.edge_dist[k];
    }
    tp.node_input = graph.node_pos;
    e = Affine(tp.edge_input, w[1], p.edge_in.b);
  } else {
    tp.node_input.resize(n, 1);
    for (int i = 0; i < n; ++i) tp.node_input(i, 0) = 2.0 * xt[i] - 1.0;
    e.setZero(m, d);
  }
  h = Affine(tp.node_input, w[0], p.node_in.b);

  tp.layers.resize(c.depth);
  for (int l = 0; l < c.depth; ++l) {
    const GnnLayer& layer = p.layers[l];
    LayerCache& lc = tp.layers[l];
    auto W = [&](int slot) -> const Eigen::MatrixXd& {
      return w[LayerLinear(c, l, slot)];
    };
    lc.e_in = e;
    lc.h_in = h;
    const RowMatrix qh = h * W(kQ).transpose();
    const RowMatrix rh = h * W(kR).transpose();
    lc.e_hat = e * W(kP).transpose();
    lc.e_hat.rowwise() +=
        (layer.p.b + layer.q.b + layer.r.b).col(0).transpose();
    kernels::GatherAddEndpoints(graph.index, qh, rh, lc.e_hat);
    lc.gate = (1.0 + (-lc.e_hat.array()).exp()).inverse().matrix();

    NormForward(lc.e_hat, layer.edge_norm, mode, lc.edge_norm, lc.edge_z);
    lc.mlp_pre = Affine(lc.edge_z, W(kEdgeMlp1), layer.edge_mlp1.b);
    lc.mlp_act = Relu(lc.mlp_pre);
    const RowMatrix mlp_out = Affine(lc.mlp_act, W(kEdgeMlp2), layer.edge_mlp2.b);

    lc.time_pre = Affine(tp.time_embed, W(kTimeMlp1), layer.time_mlp1.b);
    lc.time_act = Relu(lc.time_pre);
    const RowMatrix time_out =
        Affine(lc.time_act, W(kTimeMlp2), layer.time_mlp2.b);

    RowMatrix e_next = e + mlp_out;
    if (graph.num_graphs == 1) {
      e_next.rowwise() += time_out.row(0);
    } else {
      for (int k = 0; k < m; ++k) e_next.row(k) += time_out.row(graph.edge_graph[k]);
    }

    lc.vh = Affine(h, W(kV), layer.v.b);
    RowMatrix agg;
    kernels::GatedAggregate(graph.index, lc.gate, lc.vh, agg);
    lc.agg_pre = Affine(h, W(kU), layer.u.b) + agg;
    NormForward(lc.agg_pre, layer.node_norm, mode, lc.node_norm, lc.node_z);
    h = h + Relu(lc.node_z);
    e = std::move(e_next);
    CheckFinite(e, "edge features", l);
    CheckFinite(h, "node features", l);
  }
  tp.e_out = e;
  tp.h_out = h;

  GnnOutput out;
  const Eigen::MatrixXd& wo = w[HeadLinear(c)];
  out.logits = Affine(c.kind == ProblemKind::kTsp ? e : h, wo, p.head.b);
  if (!out.logits.allFinite()) {
    throw NumericalError("non-finite logits at the output head");
  }
  out.x0.assign(graph.num_variables(), 0.0);
  if (c.kind == ProblemKind::kTsp) {
    for (int k = 0; k < m; ++k) {
      out.x0[graph.edge_var[k]] +=
          0.5 * Sigmoid(out.logits(k, 1) - out.logits(k, 0));
    }
  } else {
    for (int i = 0; i < n; ++i) {
      out.x0[i] = Sigmoid(out.logits(i, 1) - out.logits(i, 0));
    }
  }
  return out;
}

RowMatrix ProbGradToLogitGrad(const GraphInput& graph, const GnnOutput& out,
                              std::span<const double> dprob) {
  RowMatrix g(out.logits.rows(), 2);
  for (Eigen::Index k = 0; k < out.logits.rows(); ++k) {
    const double s = Sigmoid(out.logits(k, 1) - out.logits(k, 0));
    const double weight = graph.kind == ProblemKind::kTsp ? 0.5 : 1.0;
    const int var = graph.kind == ProblemKind::kTsp
                        ? graph.edge_var[k]
                        : static_cast<int>(k);
    const double dz = dprob[var] * weight * s * (1.0 - s);
    g(k, 1) = dz;
    g(k, 0) = -dz;
  }
  return g;
}

Gradients Gradients::ZerosLike(const Policy& policy) {
  Gradients g;
  g.params = policy.params;
  ForEachTensor(g.params,
                [](const TensorInfo&, Eigen::MatrixXd& t) { t.setZero(); });
  g.lora = policy.lora;
  for (LoraFactor& f : g.lora) {
    f.a.setZero();
    f.b.setZero();
  }
  return g;
}

void Gradients::Add(const Gradients& other, double weight) {
  std::vector<const Eigen::MatrixXd*> src;
  ForEachTensor(other.params, [&](const TensorInfo&, const Eigen::MatrixXd& t) {
    src.push_back(&t);
  });
  size_t k = 0;
  ForEachTensor(params, [&](const TensorInfo&, Eigen::MatrixXd& t) {
    t += weight * *src[k++];
  });
  for (size_t i = 0; i < lora.size(); ++i) {
    if (!lora[i].active()) continue;
    lora[i].a += weight * other.lora[i].a;
    lora[i].b += weight * other.lora[i].b;
  }
}

void Gradients::Scale(double factor) {
  ForEachTensor(params,
                [&](const TensorInfo&, Eigen::MatrixXd& t) { t *= factor; });
  for (LoraFactor& f : lora) {
    f.a *= factor;
    f.b *= factor;
  }
}

double Gradients::SquaredNorm() const {
  double total = 0.0;
  ForEachTensor(params, [&](const TensorInfo&, const Eigen::MatrixXd& t) {
    total += t.squaredNorm();
  });
  for (const LoraFactor& f : lora) total += f.a.squaredNorm() + f.b.squaredNorm();
  return total;
}

namespace {

// Routes d(loss)/d(effective weight) to whatever the mask trains.
class GradientSink {
 public:
  GradientSink(const Policy& policy, Gradients& grads) : policy_(policy) {
    ForEachTensor(grads.params, [&](const TensorInfo& info, Eigen::MatrixXd& t) {
      if (info.role == TensorRole::kWeight) {
        weight_.push_back(&t);
        block_.push_back(info.block);
      } else if (info.role == TensorRole::kBias) {
        bias_.push_back(&t);
      }
    });
    lora_ = &grads.lora;
  }

  BlockMode Mode(int block) const { return policy_.mask.modes[block]; }

  // Adds dy^T x to the weight gradient and colsum(dy) to the bias gradient.
  template <typename DY, typename X>
  void Linear(int li, const DY& dy, const X& x) {
    const BlockMode mode = Mode(block_[li]);
    if (mode == BlockMode::kFrozen) return;
    const Eigen::MatrixXd dw = dy.transpose() * x;
    if (mode == BlockMode::kFull) {
      *weight_[li] += dw;
      *bias_[li] += dy.colwise().sum().transpose();
      return;
    }
    const LoraFactor& f = policy_.lora[li];
    if (!f.active()) return;
    LoraFactor& g = (*lora_)[li];
    g.a += f.scale * dw * f.b.transpose();
    g.b += f.scale * f.a.transpose() * dw;
  }

 private:
  const Policy& policy_;
  std::vector<Eigen::MatrixXd*> weight_;
  std::vector<Eigen::MatrixXd*> bias_;
  std::vector<int> block_;
  LoraSet* lora_;
};

// Returns d(loss)/d(x) and accumulates scale/shift gradients when trained.
RowMatrix NormBackward(const RowMatrix& dz, const BatchNorm& bn,
                       const NormCache& cache, bool train_affine,
                       BatchNorm* grad) {
  if (train_affine) {
    grad->scale += (dz.array() * cache.normalized.array())
                       .colwise()
                       .sum()
                       .transpose()
                       .matrix();
    grad->shift += dz.colwise().sum().transpose();
  }
  const Eigen::RowVectorXd gamma_inv =
      bn.scale.col(0).transpose().cwiseProduct(cache.inv_std);
  if (!cache.batch) return (dz.array().rowwise() * gamma_inv.array()).matrix();
  const double rows = static_cast<double>(dz.rows());
  const Eigen::RowVectorXd sum_dz = dz.colwise().sum();
  const Eigen::RowVectorXd sum_dz_xhat =
      (dz.array() * cache.normalized.array()).colwise().sum();
  RowMatrix dx = (dz * rows).rowwise() - sum_dz;
  dx -= (cache.normalized.array().rowwise() * sum_dz_xhat.array()).matrix();
  dx = (dx.array().rowwise() * (gamma_inv.array() / rows)).matrix();
  return dx;
}

}  // namespace

void Backward(const Policy& policy, const GnnTape& tape,
              const RowMatrix& upstream_logits, Gradients& grads) {
  if (tape.policy_version != policy.version || tape.graph == nullptr) {
    throw ConfigError("stale tape: produced by a different policy version");
  }
  const GnnParams& p = policy.params;
  const GnnConfig& c = p.config;
  const GraphInput& graph = *tape.graph;
  if (static_cast<int>(policy.mask.modes.size()) != p.num_blocks()) {
    throw ConfigError("finetune mask does not match network depth");
  }
  // Nothing below the lowest trainable block needs gradients.
  int lowest = p.num_blocks();
  for (int b = 0; b < p.num_blocks(); ++b) {
    if (policy.mask.modes[b] != BlockMode::kFrozen) {
      lowest = b;
      break;
    }
  }
  if (lowest == p.num_blocks()) return;

  const WeightView w(p, policy.lora);
  GradientSink sink(policy, grads);
  const int head_block = c.depth + 1;

  const RowMatrix& head_in = c.kind == ProblemKind::kTsp ? tape.e_out : tape.h_out;
  sink.Linear(HeadLinear(c), upstream_logits, head_in);
  if (lowest == head_block) return;
  RowMatrix de, dh;
  const RowMatrix dhead = upstream_logits * w[HeadLinear(c)];
  if (c.kind == ProblemKind::kTsp) {
    de = dhead;
    dh.setZero(graph.n, c.hidden);
  } else {
    dh = dhead;
    de.setZero(graph.index.num_edges(), c.hidden);
  }

  for (int l = c.depth - 1; l >= 0; --l) {
    const int block = l + 1;
    if (block < lowest) break;
    const GnnLayer& layer = p.layers[l];
    GnnLayer& glayer = grads.params.layers[l];
    const LayerCache& lc = tape.layers[l];
    const bool full = policy.mask.modes[block] == BlockMode::kFull;
    auto W = [&](int slot) -> const Eigen::MatrixXd& {
      return w[LayerLinear(c, l, slot)];
    };
    auto li = [&](int slot) { return LayerLinear(c, l, slot); };

    // Node path: h' = h + relu(BN(U h + agg)).
    RowMatrix dh_in = dh;
    const RowMatrix dnode_z =
        dh.array() * (lc.node_z.array() > 0.0).cast<double>();
    const RowMatrix dagg_pre = NormBackward(dnode_z, layer.node_norm,
                                            lc.node_norm, full, &glayer.node_norm);
    sink.Linear(li(kU), dagg_pre, lc.h_in);
    dh_in += dagg_pre * W(kU);
    RowMatrix dgate, dvh;
    kernels::GatedAggregateBackward(graph.index, lc.gate, lc.vh, dagg_pre,
                                    dgate, dvh);
    sink.Linear(li(kV), dvh, lc.h_in);
    dh_in += dvh * W(kV);
    RowMatrix de_hat =
        dgate.array() * lc.gate.array() * (1.0 - lc.gate.array());

    // Edge path: e' = e + MLP_e(BN(e_hat)) + MLP_t(t).
    RowMatrix de_in = de;
    RowMatrix dtime;
    if (graph.num_graphs == 1) {
      dtime = de.colwise().sum();
    } else {
      dtime.setZero(graph.num_graphs, c.hidden);
      for (Eigen::Index k = 0; k < de.rows(); ++k) {
        dtime.row(graph.edge_graph[k]) += de.row(k);
      }
    }
    sink.Linear(li(kTimeMlp2), dtime, lc.time_act);
    const RowMatrix dtime_pre = (dtime * W(kTimeMlp2)).array() *
                                (lc.time_pre.array() > 0.0).cast<double>();
    sink.Linear(li(kTimeMlp1), dtime_pre, tape.time_embed);

    sink.Linear(li(kEdgeMlp2), de, lc.mlp_act);
    const RowMatrix dmlp_pre = (de * W(kEdgeMlp2)).array() *
                               (lc.mlp_pre.array() > 0.0).cast<double>();
    sink.Linear(li(kEdgeMlp1), dmlp_pre, lc.edge_z);
    const RowMatrix dedge_z = dmlp_pre * W(kEdgeMlp1);
    de_hat += NormBackward(dedge_z, layer.edge_norm, lc.edge_norm, full,
                           &glayer.edge_norm);

    // e_hat = P e + Q h_i + R h_j; each bias sees the column sum of de_hat,
    // which is also the column sum of dqh and drh.
    sink.Linear(li(kP), de_hat, lc.e_in);
    de_in += de_hat * W(kP);
    RowMatrix dqh, drh;
    kernels::ScatterEndpoints(graph.index, de_hat, dqh, drh);
    sink.Linear(li(kQ), dqh, lc.h_in);
    sink.Linear(li(kR), drh, lc.h_in);
    dh_in += dqh * W(kQ) + drh * W(kR);

    de = std::move(de_in);
    dh = std::move(dh_in);
  }
  if (lowest > 0) return;
  sink.Linear(0, dh, tape.node_input);
  if (c.kind == ProblemKind::kTsp) sink.Linear(1, de, tape.edge_input);
}

std::vector<TrainableRef> TrainableTensors(Policy& policy,
                                           const Gradients& grads) {
  std::vector<const Eigen::MatrixXd*> g;
  ForEachTensor(grads.params, [&](const TensorInfo&, const Eigen::MatrixXd& t) {
    g.push_back(&t);
  });
  std::vector<TrainableRef> out;
  size_t k = 0;
  ForEachTensor(policy.params, [&](const TensorInfo& info, Eigen::MatrixXd& t) {
    const Eigen::MatrixXd* grad = g[k++];
    if (info.role == TensorRole::kNormStatistic) return;
    if (policy.mask.modes[info.block] != BlockMode::kFull) return;
    out.push_back({info.name, &t, grad});
  });
  for (size_t i = 0; i < policy.lora.size(); ++i) {
    if (!policy.lora[i].active()) continue;
    const std::string name = "lora" + std::to_string(i);
    out.push_back({name + ".a", &policy.lora[i].a, &grads.lora[i].a});
    out.push_back({name + ".b", &policy.lora[i].b, &grads.lora[i].b});
  }
  return out;
}

int NumTrainableScalars(const Policy& policy) {
  Policy copy = policy;
  const Gradients g = Gradients::ZerosLike(policy);
  int total = 0;
  for (const TrainableRef& t : TrainableTensors(copy, g)) {
    total += static_cast<int>(t.value->size());
  }
  return total;
}

void ApplyUpdate(Policy& policy, const Gradients& grads, AdamState& state,
                 double lr) {
  std::vector<TrainableRef> refs = TrainableTensors(policy, grads);
  for (const TrainableRef& r : refs) {
    if (!r.grad->allFinite()) {
      throw NumericalError("non-finite gradient in '" + r.name + "'");
    }
  }
  if (state.m.empty()) {
    for (const TrainableRef& r : refs) {
      state.m.push_back(Eigen::MatrixXd::Zero(r.value->rows(), r.value->cols()));
      state.v.push_back(Eigen::MatrixXd::Zero(r.value->rows(), r.value->cols()));
    }
  }
  if (state.m.size() != refs.size()) {
    throw ConfigError("optimizer state does not match trainable tensors");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < refs.size(); ++k) {
    const Eigen::MatrixXd& g = *refs[k].grad;
    state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g;
    state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g.cwiseAbs2();
    *refs[k].value -= (lr * (state.m[k].array() / c1) /
                       ((state.v[k].array() / c2).sqrt() + state.eps))
                          .matrix();
  }
  ++policy.version;
}

NormBatchStats ExtractNormStats(const GnnTape& tape) {
  NormBatchStats stats;
  auto entry = [](const NormCache& c) {
    return NormBatchStats::Entry{c.mean, c.var,
                                 static_cast<double>(c.normalized.rows()),
                                 c.batch};
  };
  for (const LayerCache& lc : tape.layers) {
    stats.edge.push_back(entry(lc.edge_norm));
    stats.node.push_back(entry(lc.node_norm));
  }
  return stats;
}

void UpdateRunningStats(Policy& policy, const NormBatchStats& stats,
                        double momentum) {
  auto update = [momentum](BatchNorm& bn, const NormBatchStats::Entry& e) {
    if (!e.batch) return;
    bn.running_mean =
        (1.0 - momentum) * bn.running_mean + momentum * e.mean.transpose();
    bn.running_var = (1.0 - momentum) * bn.running_var +
                     momentum * e.var.transpose() * (e.rows / (e.rows - 1.0));
  };
  for (size_t l = 0; l < stats.edge.size(); ++l) {
    update(policy.params.layers[l].edge_norm, stats.edge[l]);
    update(policy.params.layers[l].node_norm, stats.node[l]);
  }
}

void UpdateRunningStats(Policy& policy, const GnnTape& tape, double momentum) {
  UpdateRunningStats(policy, ExtractNormStats(tape), momentum);
}

}  // namespace nco
