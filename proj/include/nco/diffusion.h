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

#ifndef NCO_DIFFUSION_H_
#define NCO_DIFFUSION_H_

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nco/decoders.h"
#include "nco/gnn.h"

namespace nco {

struct BetaSpec {
  enum class Shape { kLinear, kCosine };
  Shape shape = Shape::kLinear;
  double beta_min = 1e-4;
  double beta_max = 0.5;
  friend bool operator==(const BetaSpec&, const BetaSpec&) = default;
};

// Symmetric two-state (Bernoulli) corruption process.
class DiffusionSchedule {
 public:
  static DiffusionSchedule Make(int steps, const BetaSpec& spec = {});
  // From explicit per-step noise levels beta_1..beta_T.
  static DiffusionSchedule FromBetas(std::vector<double> betas);

  int T() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(t - 1); }
  const std::vector<double>& betas() const { return betas_; }
  const BetaSpec& spec() const { return spec_; }
  // Q_t, 1 <= t <= T.
  Eigen::Matrix2d Q(int t) const;
  // Qbar_t = Q_1 ... Q_t with Qbar_0 = I.
  const Eigen::Matrix2d& Qbar(int t) const { return qbar_.at(t); }
  // Q_{s+1} ... Q_t for s < t.
  Eigen::Matrix2d Transition(int s, int t) const;

 private:
  BetaSpec spec_;
  std::vector<double> betas_;
  std::vector<Eigen::Matrix2d> qbar_;
};

struct NoisyState {
  int t = 0;
  std::vector<uint8_t> bits;  // variable layout
};

// Draws x_t ~ q(x_t | x_0) bit by bit.
NoisyState ForwardSample(std::span<const uint8_t> x0, int t,
                         const DiffusionSchedule& sched, Rng& rng);

// Probability that x_s = 1 under q(x_s | x_t, x0) with x0 replaced by its
// predicted distribution, for one bit. `s` defaults to t - 1; s = 0 returns
// the prediction itself.
double PosteriorOne(const DiffusionSchedule& sched, int t, int s, uint8_t xt,
                    double x0_prob);
// d PosteriorOne / d x0_prob (constant in x0_prob).
double PosteriorSlope(const DiffusionSchedule& sched, int t, int s,
                      uint8_t xt);

// Per-bit P(x_{t-1} = 1).
std::vector<double> Posterior(const NoisyState& xt,
                              std::span<const double> x0_prob,
                              const DiffusionSchedule& sched);
std::vector<double> Posterior(const NoisyState& xt,
                              std::span<const double> x0_prob,
                              const DiffusionSchedule& sched, int s);

// Probabilities are clamped to [eps, 1 - eps] before every log.
inline constexpr double kProbEpsilon = 1e-6;

// Descending timestep grid T = tau_0 > tau_1 > ... > tau_steps = 0 with
// uniform stride.
std::vector<int> InferenceGrid(int from_t, int steps);

struct ReverseStepResult {
  NoisyState next;
  double logprob = 0.0;
  GnnOutput prediction;
};

// One denoising action: predicts x0, samples x_s from the posterior, and
// returns the summed log-probability of the sampled bits.
ReverseStepResult ReverseStep(const Policy& policy, const GraphInput& graph,
                              const NoisyState& state, int s,
                              const DiffusionSchedule& sched, Rng& rng,
                              NormMode mode = NormMode::kRunning,
                              GnnTape* tape = nullptr);

// Log-probability of a recorded transition state -> next under x0_prob.
double TransitionLogProb(const DiffusionSchedule& sched, int t, int s,
                         std::span<const uint8_t> xt,
                         std::span<const uint8_t> next,
                         std::span<const double> x0_prob);
// d TransitionLogProb / d x0_prob per bit (zero where clamped).
std::vector<double> TransitionLogProbGrad(const DiffusionSchedule& sched,
                                          int t, int s,
                                          std::span<const uint8_t> xt,
                                          std::span<const uint8_t> next,
                                          std::span<const double> x0_prob);

// Mean per-bit binary cross-entropy of predicted x0 probabilities.
double CrossEntropy(std::span<const double> x0_prob,
                    std::span<const uint8_t> target);

struct SlLossResult {
  double loss = 0.0;
  int t = 0;
};

// Denoising loss at a uniformly drawn t. When `grads` is given, adds the
// loss gradient to it; `tape` receives the forward tape (for running stats).
SlLossResult SlLoss(const Policy& policy, const GraphInput& graph,
                    std::span<const uint8_t> x0, const DiffusionSchedule& sched,
                    Rng& rng, NormMode mode, Gradients* grads = nullptr,
                    GnnTape* tape = nullptr);
// Same loss at a given (t, x_t), no sampling.
double SlLossAt(const Policy& policy, const GraphInput& graph,
                std::span<const uint8_t> x0, const NoisyState& xt,
                NormMode mode, Gradients* grads = nullptr);
// Mean over the graphs of a BatchGraphs input of each graph's loss, with
// concatenated targets and noisy states and one timestep per graph.
double SlLossBatch(const Policy& policy, const GraphInput& batch,
                   std::span<const uint8_t> x0, std::span<const uint8_t> xt,
                   std::span<const int> ts, NormMode mode,
                   Gradients* grads = nullptr, GnnTape* tape = nullptr);

// Starts from x_T ~ Bern(0.5), denoises along InferenceGrid(T, steps), and
// returns the last x0 prediction as a heatmap.
Heatmap SampleHeatmap(const Policy& policy, const GraphInput& graph,
                      int steps, const DiffusionSchedule& sched, Rng& rng);
// Denoises an explicit start state down to t = 0 over `steps` steps.
Heatmap DenoiseFrom(const Policy& policy, const GraphInput& graph,
                    const NoisyState& start, int steps,
                    const DiffusionSchedule& sched, Rng& rng);

struct LocalRewriteOptions {
  int iterations = 3;
  int steps = 10;
  int noise_t = -1;  // -1: half of the schedule length
};

struct LocalRewriteResult {
  Solution best;
  Heatmap best_heatmap;
  double best_cost = 0.0;
  int improvements = 0;
};

// Decodes `start`, then repeatedly re-noises the best solution to noise_t,
// denoises it, decodes, and keeps strictly cheaper candidates.
LocalRewriteResult LocalRewrite(const Policy& policy, const Instance& instance,
                                const GraphInput& graph, const Heatmap& start,
                                DecoderKind decoder,
                                const DiffusionSchedule& sched,
                                const LocalRewriteOptions& options, Rng& rng);

}  // namespace nco

#endif  // NCO_DIFFUSION_H_
