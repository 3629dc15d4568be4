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

#include "nco/diffusion.h"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace nco {
namespace {

struct PosteriorCoef {
  // P(x_s = 1) = base[xt] + x0_prob * slope[xt]
  double base[2];
  double slope[2];
};

PosteriorCoef Coefficients(const DiffusionSchedule& sched, int t, int s) {
  if (t < 1 || t > sched.T()) throw ConfigError("posterior timestep out of range");
  if (s < 0 || s >= t) throw ConfigError("posterior target must satisfy 0 <= s < t");
  const Eigen::Matrix2d k = sched.Transition(s, t);
  const Eigen::Matrix2d& qs = sched.Qbar(s);
  const Eigen::Matrix2d& qt = sched.Qbar(t);
  PosteriorCoef coef{};
  for (int xt = 0; xt < 2; ++xt) {
    // Bayes: q(x_s = 1 | x_t, x0 = c) = K[1, x_t] Qbar_s[c, 1] / Qbar_t[c, x_t]
    const double given0 = k(1, xt) * qs(0, 1) / qt(0, xt);
    const double given1 = k(1, xt) * qs(1, 1) / qt(1, xt);
    coef.base[xt] = given0;
    coef.slope[xt] = given1 - given0;
  }
  return coef;
}

double Clamp(double p) {
  return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
}

}  // namespace

DiffusionSchedule DiffusionSchedule::Make(int steps, const BetaSpec& spec) {
  if (steps < 1) throw ConfigError("diffusion schedule needs T >= 1");
  std::vector<double> betas(steps);
  if (spec.shape == BetaSpec::Shape::kLinear) {
    for (int t = 1; t <= steps; ++t) {
      betas[t - 1] = steps == 1 ? spec.beta_max
                                : std::lerp(spec.beta_min, spec.beta_max,
                                            (t - 1) / (steps - 1.0));
    }
  } else {
    // The signal fraction 2*Qbar_t[0,0] - 1 follows a cosine decay.
    constexpr double kOffset = 0.008;
    auto f = [&](int t) {
      const double x = (static_cast<double>(t) / steps + kOffset) /
                       (1.0 + kOffset) * std::numbers::pi / 2.0;
      return std::cos(x) * std::cos(x);
    };
    for (int t = 1; t <= steps; ++t) {
      const double ratio = std::max(f(t) / f(t - 1), 0.0);
      betas[t - 1] = std::clamp(0.5 * (1.0 - ratio), 1e-6, 0.5);
    }
  }
  DiffusionSchedule s = FromBetas(std::move(betas));
  s.spec_ = spec;
  return s;
}

DiffusionSchedule DiffusionSchedule::FromBetas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("diffusion schedule needs T >= 1");
  for (double b : betas) {
    if (!(b > 0.0 && b <= 0.5)) {
      throw ConfigError("every beta must lie in (0, 0.5]");
    }
  }
  DiffusionSchedule s;
  s.betas_ = std::move(betas);
  s.qbar_.reserve(s.betas_.size() + 1);
  s.qbar_.push_back(Eigen::Matrix2d::Identity());
  for (int t = 1; t <= s.T(); ++t) s.qbar_.push_back(s.qbar_.back() * s.Q(t));
  return s;
}

Eigen::Matrix2d DiffusionSchedule::Q(int t) const {
  const double b = beta(t);
  Eigen::Matrix2d q;
  q << 1.0 - b, b, b, 1.0 - b;
  return q;
}

Eigen::Matrix2d DiffusionSchedule::Transition(int s, int t) const {
  Eigen::Matrix2d k = Eigen::Matrix2d::Identity();
  for (int u = s + 1; u <= t; ++u) k = k * Q(u);
  return k;
}

NoisyState ForwardSample(std::span<const uint8_t> x0, int t,
                         const DiffusionSchedule& sched, Rng& rng) {
  if (t < 1 || t > sched.T()) throw ConfigError("forward_sample t out of range");
  const double flip = sched.Qbar(t)(0, 1);
  NoisyState out{t, std::vector<uint8_t>(x0.begin(), x0.end())};
  for (uint8_t& b : out.bits) {
    if (rng.Bernoulli(flip)) b ^= 1;
  }
  return out;
}

double PosteriorOne(const DiffusionSchedule& sched, int t, int s, uint8_t xt,
                    double x0_prob) {
  const PosteriorCoef c = Coefficients(sched, t, s);
  return c.base[xt] + x0_prob * c.slope[xt];
}

double PosteriorSlope(const DiffusionSchedule& sched, int t, int s,
                      uint8_t xt) {
  return Coefficients(sched, t, s).slope[xt];
}

std::vector<double> Posterior(const NoisyState& xt,
                              std::span<const double> x0_prob,
                              const DiffusionSchedule& sched) {
  return Posterior(xt, x0_prob, sched, xt.t - 1);
}

std::vector<double> Posterior(const NoisyState& xt,
                              std::span<const double> x0_prob,
                              const DiffusionSchedule& sched, int s) {
  if (xt.t < 1) throw ConfigError("posterior requires t >= 1");
  const PosteriorCoef c = Coefficients(sched, xt.t, s);
  std::vector<double> out(xt.bits.size());
  for (size_t k = 0; k < out.size(); ++k) {
    out[k] = c.base[xt.bits[k]] + x0_prob[k] * c.slope[xt.bits[k]];
  }
  return out;
}

std::vector<int> InferenceGrid(int from_t, int steps) {
  if (steps < 1 || steps > from_t) {
    throw ConfigError("inference steps must lie in [1, " +
                      std::to_string(from_t) + "]");
  }
  std::vector<int> grid(steps + 1);
  for (int k = 0; k <= steps; ++k) {
    grid[k] = static_cast<int>(
        std::llround(static_cast<double>(from_t) * (steps - k) / steps));
  }
  return grid;
}

ReverseStepResult ReverseStep(const Policy& policy, const GraphInput& graph,
                              const NoisyState& state, int s,
                              const DiffusionSchedule& sched, Rng& rng,
                              NormMode mode, GnnTape* tape) {
  if (state.t < 1) throw ConfigError("reverse_step requires t >= 1");
  ReverseStepResult r;
  r.prediction = Forward(policy, graph, state.bits, state.t, mode, tape);
  for (double p : r.prediction.x0) {
    if (!std::isfinite(p)) throw NumericalError("non-finite x0 prediction");
  }
  const std::vector<double> post = Posterior(state, r.prediction.x0, sched, s);
  r.next.t = s;
  r.next.bits.resize(post.size());
  for (size_t k = 0; k < post.size(); ++k) {
    const bool one = rng.Bernoulli(post[k]);
    r.next.bits[k] = one ? 1 : 0;
    r.logprob += std::log(Clamp(one ? post[k] : 1.0 - post[k]));
  }
  return r;
}

double TransitionLogProb(const DiffusionSchedule& sched, int t, int s,
                         std::span<const uint8_t> xt,
                         std::span<const uint8_t> next,
                         std::span<const double> x0_prob) {
  const PosteriorCoef c = Coefficients(sched, t, s);
  double total = 0.0;
  for (size_t k = 0; k < xt.size(); ++k) {
    const double p1 = c.base[xt[k]] + x0_prob[k] * c.slope[xt[k]];
    total += std::log(Clamp(next[k] ? p1 : 1.0 - p1));
  }
  return total;
}

std::vector<double> TransitionLogProbGrad(const DiffusionSchedule& sched,
                                          int t, int s,
                                          std::span<const uint8_t> xt,
                                          std::span<const uint8_t> next,
                                          std::span<const double> x0_prob) {
  const PosteriorCoef c = Coefficients(sched, t, s);
  std::vector<double> grad(xt.size(), 0.0);
  for (size_t k = 0; k < xt.size(); ++k) {
    const double p1 = c.base[xt[k]] + x0_prob[k] * c.slope[xt[k]];
    const double q = next[k] ? p1 : 1.0 - p1;
    if (q < kProbEpsilon || q > 1.0 - kProbEpsilon) continue;
    const double dq = next[k] ? c.slope[xt[k]] : -c.slope[xt[k]];
    grad[k] = dq / q;
  }
  return grad;
}

double CrossEntropy(std::span<const double> x0_prob,
                    std::span<const uint8_t> target) {
  double total = 0.0;
  for (size_t k = 0; k < target.size(); ++k) {
    total -= std::log(Clamp(target[k] ? x0_prob[k] : 1.0 - x0_prob[k]));
  }
  return target.empty() ? 0.0 : total / static_cast<double>(target.size());
}

double SlLossBatch(const Policy& policy, const GraphInput& batch,
                   std::span<const uint8_t> x0, std::span<const uint8_t> xt,
                   std::span<const int> ts, NormMode mode, Gradients* grads,
                   GnnTape* tape) {
  if (x0.size() != xt.size()) throw DataError("target and state sizes differ");
  GnnTape local;
  GnnTape* tp = tape != nullptr ? tape : (grads != nullptr ? &local : nullptr);
  const GnnOutput out = Forward(policy, batch, xt, ts, mode, tp);
  const double graphs = static_cast<double>(batch.num_graphs);
  double loss = 0.0;
  std::vector<double> dprob(x0.size(), 0.0);
  for (int g = 0; g < batch.num_graphs; ++g) {
    const int lo = batch.var_offsets[g];
    const int hi = batch.var_offsets[g + 1];
    const double n = static_cast<double>(hi - lo);
    loss += CrossEntropy(std::span(out.x0).subspan(lo, hi - lo),
                         x0.subspan(lo, hi - lo)) /
            graphs;
    for (int k = lo; k < hi; ++k) {
      const double q = x0[k] ? out.x0[k] : 1.0 - out.x0[k];
      if (q < kProbEpsilon || q > 1.0 - kProbEpsilon) continue;
      dprob[k] = (x0[k] ? -1.0 : 1.0) / (q * n * graphs);
    }
  }
  if (!std::isfinite(loss)) throw NumericalError("non-finite sl loss");
  if (grads != nullptr) {
    Backward(policy, *tp, ProbGradToLogitGrad(batch, out, dprob), *grads);
  }
  return loss;
}

double SlLossAt(const Policy& policy, const GraphInput& graph,
                std::span<const uint8_t> x0, const NoisyState& xt,
                NormMode mode, Gradients* grads) {
  const int ts[1] = {xt.t};
  return SlLossBatch(policy, graph, x0, xt.bits, ts, mode, grads);
}

SlLossResult SlLoss(const Policy& policy, const GraphInput& graph,
                    std::span<const uint8_t> x0, const DiffusionSchedule& sched,
                    Rng& rng, NormMode mode, Gradients* grads, GnnTape* tape) {
  SlLossResult r;
  r.t = 1 + static_cast<int>(rng.Below(sched.T()));
  const NoisyState xt = ForwardSample(x0, r.t, sched, rng);
  const int ts[1] = {r.t};
  r.loss = SlLossBatch(policy, graph, x0, xt.bits, ts, mode, grads, tape);
  return r;
}

Heatmap DenoiseFrom(const Policy& policy, const GraphInput& graph,
                    const NoisyState& start, int steps,
                    const DiffusionSchedule& sched, Rng& rng) {
  const std::vector<int> grid = InferenceGrid(start.t, steps);
  NoisyState state = start;
  GnnOutput last;
  for (int k = 0; k < steps; ++k) {
    if (k + 1 < steps) {
      ReverseStepResult r =
          ReverseStep(policy, graph, state, grid[k + 1], sched, rng);
      state = std::move(r.next);
    } else {
      last = Forward(policy, graph, state.bits, state.t, NormMode::kRunning);
    }
  }
  return Heatmap::FromVariables(graph.kind, graph.n, last.x0);
}

Heatmap SampleHeatmap(const Policy& policy, const GraphInput& graph,
                      int steps, const DiffusionSchedule& sched, Rng& rng) {
  NoisyState start{sched.T(), std::vector<uint8_t>(graph.num_variables())};
  for (uint8_t& b : start.bits) b = rng.Bernoulli(0.5) ? 1 : 0;
  return DenoiseFrom(policy, graph, start, steps, sched, rng);
}

LocalRewriteResult LocalRewrite(const Policy& policy, const Instance& instance,
                                const GraphInput& graph, const Heatmap& start,
                                DecoderKind decoder,
                                const DiffusionSchedule& sched,
                                const LocalRewriteOptions& options, Rng& rng) {
  if (options.iterations < 0) throw ConfigError("rewrite iterations must be >= 0");
  const int noise_t =
      options.noise_t > 0 ? options.noise_t : std::max(1, sched.T() / 2);
  if (noise_t > sched.T()) throw ConfigError("rewrite noise_t exceeds T");
  LocalRewriteResult r;
  r.best = Decode(decoder, start, instance);
  r.best_cost = Cost(instance, r.best);
  r.best_heatmap = start;
  const int steps = std::min(options.steps, noise_t);
  for (int it = 0; it < options.iterations; ++it) {
    const std::vector<uint8_t> x0 = r.best.ToVariables();
    const NoisyState noisy = ForwardSample(x0, noise_t, sched, rng);
    Heatmap heat = DenoiseFrom(policy, graph, noisy, steps, sched, rng);
    Solution candidate = Decode(decoder, heat, instance);
    const double c = Cost(instance, candidate);
    if (c < r.best_cost) {
      r.best = std::move(candidate);
      r.best_cost = c;
      r.best_heatmap = std::move(heat);
      ++r.improvements;
    }
  }
  return r;
}

}  // namespace nco
