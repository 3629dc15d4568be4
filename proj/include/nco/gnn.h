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

#ifndef NCO_GNN_H_
#define NCO_GNN_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nco/instances.h"
#include "nco/kernels.h"

namespace nco {

struct GnnConfig {
  ProblemKind kind = ProblemKind::kTsp;
  int depth = 4;
  int hidden = 64;
  int time_embed_dim = 32;
  // Sinusoidal position features per TSP node (two coordinates).
  int node_pos_dim = 32;
  // Width of the two-layer edge and time MLPs; 0 means `hidden`.
  int mlp_hidden = 0;

  int MlpWidth() const { return mlp_hidden > 0 ? mlp_hidden : hidden; }
  void Validate() const;
  friend bool operator==(const GnnConfig&, const GnnConfig&) = default;
};

// y = x W^T + b, rows of x are samples.
struct Linear {
  Eigen::MatrixXd w;  // out x in
  Eigen::MatrixXd b;  // out x 1
};

struct BatchNorm {
  Eigen::MatrixXd scale;  // d x 1
  Eigen::MatrixXd shift;
  Eigen::MatrixXd running_mean;
  Eigen::MatrixXd running_var;
};

// One anisotropic edge-gated message-passing layer.
struct GnnLayer {
  Linear u, v, p, q, r;
  BatchNorm edge_norm, node_norm;
  Linear edge_mlp1, edge_mlp2;
  Linear time_mlp1, time_mlp2;
};

struct GnnParams {
  GnnConfig config;
  Linear node_in;
  Linear edge_in;  // empty for MIS, whose edge features start at zero
  std::vector<GnnLayer> layers;
  Linear head;  // 2 logits per variable

  int num_blocks() const { return static_cast<int>(layers.size()) + 2; }
};

enum class TensorRole { kWeight, kBias, kNormAffine, kNormStatistic };

// Blocks: 0 = input layer, 1..depth = message-passing layers, depth+1 = head.
struct TensorInfo {
  std::string name;
  int block = 0;
  TensorRole role = TensorRole::kWeight;
  int linear_index = -1;  // for weights: position among all Linear weights
};

// Visits every tensor in a fixed order.
void ForEachTensor(GnnParams& params,
                   const std::function<void(const TensorInfo&, Eigen::MatrixXd&)>& fn);
void ForEachTensor(const GnnParams& params,
                   const std::function<void(const TensorInfo&, const Eigen::MatrixXd&)>& fn);
int NumLinears(const GnnParams& params);

enum class BlockMode { kFrozen, kLora, kFull };
std::string_view BlockModeName(BlockMode m);
BlockMode ParseBlockMode(std::string_view name);

struct FinetuneMask {
  std::vector<BlockMode> modes;  // one per block

  static FinetuneMask AllFull(const GnnConfig& config);
  static FinetuneMask AllFrozen(const GnnConfig& config);
  // LoRA on the input layer and all but the last `selective_layers`
  // message-passing layers; full training of the rest and the head.
  static FinetuneMask Hybrid(const GnnConfig& config, int selective_layers);
  friend bool operator==(const FinetuneMask&, const FinetuneMask&) = default;
};

// Low-rank update W + scale * A B of one Linear weight.
struct LoraFactor {
  Eigen::MatrixXd a;  // out x r
  Eigen::MatrixXd b;  // r x in
  double scale = 1.0;

  bool active() const { return a.size() > 0; }
  int rank() const { return static_cast<int>(a.cols()); }
};

// Indexed by TensorInfo::linear_index; inactive entries are empty.
using LoraSet = std::vector<LoraFactor>;

// Adds rank-`rank` factors to every Linear in blocks whose mode is kLora.
// A is fan-in scaled uniform, B is zero, so the effective weights start equal
// to the base weights.
LoraSet MakeLora(const GnnParams& params, const FinetuneMask& mask, int rank,
                 double alpha, uint64_t seed);

// Folds every active factor into its base weight.
GnnParams MergeLora(const GnnParams& params, const LoraSet& lora);

struct Policy {
  GnnParams params;
  LoraSet lora;
  FinetuneMask mask;
  // Bumped on every parameter update; rollouts record it to enforce the
  // on-policy contract.
  uint64_t version = 0;
};

GnnParams InitParams(const GnnConfig& config, uint64_t seed);
Policy MakePolicy(const GnnConfig& config, uint64_t seed);

// Interleaved sin/cos of t at geometric frequencies 10000^(-2k/dim).
std::vector<double> TimestepEmbed(int t, int dim);

// Static network input for one instance, or for several instances merged
// into one disjoint graph by BatchGraphs.
struct GraphInput {
  ProblemKind kind = ProblemKind::kTsp;
  int n = 0;  // total vertices
  EdgeIndex index;
  std::vector<int> edge_var;     // variable of each directed edge (TSP)
  Eigen::VectorXd edge_dist;     // TSP only
  RowMatrix node_pos;            // TSP sinusoidal features, n x node_pos_dim
  int num_vars = 0;
  // Batches only: graph of each directed edge and per-graph variable ranges.
  int num_graphs = 1;
  std::vector<int> edge_graph;
  std::vector<int> var_offsets{0};

  int num_variables() const { return num_vars; }
};

GraphInput BuildGraph(const Instance& instance, const GnnConfig& config);
// Disjoint union; variables of graph g occupy
// [var_offsets[g], var_offsets[g + 1]).
GraphInput BatchGraphs(const std::vector<const GraphInput*>& graphs);

enum class NormMode {
  kBatch,    // statistics of the current forward (training)
  kRunning,  // running averages (inference, RL fine-tuning)
};

struct NormCache {
  Eigen::RowVectorXd mean, var, inv_std;
  RowMatrix normalized;  // x-hat
  bool batch = false;
};

struct LayerCache {
  RowMatrix e_in, h_in;
  RowMatrix e_hat, gate, vh, agg_pre;
  NormCache edge_norm, node_norm;
  RowMatrix edge_z, mlp_pre, mlp_act;
  RowMatrix node_z;
  RowMatrix time_pre, time_act;  // one row per graph
};

// Everything Backward needs. Tied to the policy version it was made from.
struct GnnTape {
  uint64_t policy_version = 0;
  const GraphInput* graph = nullptr;
  NormMode mode = NormMode::kRunning;
  RowMatrix time_embed;  // one row per graph
  RowMatrix edge_input, node_input;
  std::vector<LayerCache> layers;
  RowMatrix e_out, h_out;
};

struct GnnOutput {
  RowMatrix logits;        // one row of 2 logits per output unit
  std::vector<double> x0;  // per-variable probability of class 1
};

// Runs the network on noisy variables `xt` at timestep `t`. TSP output
// units are directed edges and a variable's probability averages the
// class-1 probabilities of its two directions; MIS units are vertices.
GnnOutput Forward(const Policy& policy, const GraphInput& graph,
                  std::span<const uint8_t> xt, int t, NormMode mode,
                  GnnTape* tape = nullptr);
// Batched form with one timestep per graph of a BatchGraphs input.
GnnOutput Forward(const Policy& policy, const GraphInput& graph,
                  std::span<const uint8_t> xt, std::span<const int> ts,
                  NormMode mode, GnnTape* tape = nullptr);

// Parameter gradients shaped like the policy. Entries for tensors that the
// mask does not train stay zero and are not listed by TrainableTensors.
struct Gradients {
  GnnParams params;
  LoraSet lora;

  static Gradients ZerosLike(const Policy& policy);
  void Add(const Gradients& other, double weight = 1.0);
  void Scale(double factor);
  double SquaredNorm() const;
};

// Reverse-mode pass: accumulates d(sum upstream . logits)/d(theta) into
// `grads`.
void Backward(const Policy& policy, const GnnTape& tape,
              const RowMatrix& upstream_logits, Gradients& grads);

// Converts d(loss)/d(x0 probability) per variable into per-logit gradients.
RowMatrix ProbGradToLogitGrad(const GraphInput& graph, const GnnOutput& out,
                              std::span<const double> dprob);

// A trainable tensor and its gradient, in a fixed order.
struct TrainableRef {
  std::string name;
  Eigen::MatrixXd* value;
  const Eigen::MatrixXd* grad;
};
std::vector<TrainableRef> TrainableTensors(Policy& policy, const Gradients& grads);
int NumTrainableScalars(const Policy& policy);

struct AdamState {
  std::vector<Eigen::MatrixXd> m, v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam step on the trainable tensors. Throws NumericalError
// naming the first non-finite gradient without touching the parameters.
void ApplyUpdate(Policy& policy, const Gradients& grads, AdamState& state,
                 double lr);

// Batch statistics of every normalization in one forward, without the
// activations.
struct NormBatchStats {
  struct Entry {
    Eigen::RowVectorXd mean, var;
    double rows = 0.0;
    bool batch = false;
  };
  std::vector<Entry> edge, node;  // one per layer
};
NormBatchStats ExtractNormStats(const GnnTape& tape);

// Exponential moving update of the running statistics from a batch-mode tape.
void UpdateRunningStats(Policy& policy, const GnnTape& tape, double momentum);
void UpdateRunningStats(Policy& policy, const NormBatchStats& stats,
                        double momentum);

}  // namespace nco

#endif  // NCO_GNN_H_
