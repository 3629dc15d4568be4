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


// Slow, independent reference computations used as test oracles. Nothing
// here calls into the library beyond its plain data types.

#ifndef NCO_TESTS_ORACLES_H_
#define NCO_TESTS_ORACLES_H_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include "nco/instances.h"

namespace nco::oracle {

inline double Dist(const TspInstance& t, int i, int j) {
  const double dx = t.coords[i].x - t.coords[j].x;
  const double dy = t.coords[i].y - t.coords[j].y;
  return std::sqrt(dx * dx + dy * dy);
}

inline double TourLen(const TspInstance& t, const std::vector<int>& order) {
  double s = 0.0;
  for (size_t k = 0; k < order.size(); ++k) {
    s += Dist(t, order[k], order[(k + 1) % order.size()]);
  }
  return s;
}

// Shortest tour by enumerating all (n-1)! orders with vertex 0 fixed.
inline double BruteForceTsp(const TspInstance& t) {
  const int n = t.n();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  double best = TourLen(t, order);
  while (std::next_permutation(order.begin() + 1, order.end())) {
    best = std::min(best, TourLen(t, order));
  }
  return best;
}

// Largest independent set size by subset enumeration.
inline int BruteForceMis(const MisInstance& m) {
  int best = 0;
  for (uint32_t s = 0; s < (1u << m.n); ++s) {
    bool ok = true;
    for (const auto& [a, b] : m.edges) {
      if ((s >> a & 1u) && (s >> b & 1u)) {
        ok = false;
        break;
      }
    }
    if (ok) best = std::max(best, __builtin_popcount(s));
  }
  return best;
}

// Distribution of x_k given x_0 = c, propagated one flip step at a time.
inline std::array<double, 2> ChainMarginal(const std::vector<double>& betas,
                                           int k, int c) {
  std::array<double, 2> d{c == 0 ? 1.0 : 0.0, c == 1 ? 1.0 : 0.0};
  for (int step = 1; step <= k; ++step) {
    const double b = betas[step - 1];
    d = {d[0] * (1 - b) + d[1] * b, d[0] * b + d[1] * (1 - b)};
  }
  return d;
}

// P(x_{t-1} = 1 | x_t, x_0 ~ Bern(p)) as the p-weighted mixture of exact
// Bayes posteriors q(x_t | x_{t-1}) q(x_{t-1} | x_0) / q(x_t | x_0).
inline double BayesPosteriorOne(const std::vector<double>& betas, int t,
                                int xt, double p) {
  const double bt = betas[t - 1];
  double out = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double weight = c == 1 ? p : 1.0 - p;
    const std::array<double, 2> prior = ChainMarginal(betas, t - 1, c);
    double joint[2];
    for (int s = 0; s < 2; ++s) {
      joint[s] = prior[s] * (s == xt ? 1.0 - bt : bt);
    }
    out += weight * joint[1] / (joint[0] + joint[1]);
  }
  return out;
}

// P(x_t = to | x_s = from), propagated one step at a time.
inline double StepTransition(const std::vector<double>& betas, int s, int t,
                             int from, int to) {
  std::array<double, 2> d{from == 0 ? 1.0 : 0.0, from == 1 ? 1.0 : 0.0};
  for (int step = s + 1; step <= t; ++step) {
    const double b = betas[step - 1];
    d = {d[0] * (1 - b) + d[1] * b, d[0] * b + d[1] * (1 - b)};
  }
  return d[to];
}

// P(x_s = 1 | x_t, x_0 ~ Bern(p)) for any 0 <= s < t.
inline double BayesSkipPosteriorOne(const std::vector<double>& betas, int t,
                                    int s, int xt, double p) {
  if (s == 0) return p;
  double out = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double weight = c == 1 ? p : 1.0 - p;
    const std::array<double, 2> prior = ChainMarginal(betas, s, c);
    double joint[2];
    for (int v = 0; v < 2; ++v) {
      joint[v] = prior[v] * StepTransition(betas, s, t, v, xt);
    }
    out += weight * joint[1] / (joint[0] + joint[1]);
  }
  return out;
}

// Marginal flip probability P(x_t != x_0).
inline double FlipProbability(const std::vector<double>& betas, int t) {
  return ChainMarginal(betas, t, 0)[1];
}

}  // namespace nco::oracle

#endif  // NCO_TESTS_ORACLES_H_
