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

#ifndef NCO_COMMON_H_
#define NCO_COMMON_H_

#include <cstdint>
#include <exception>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nco {

// Error categories map onto CLI exit codes: config 2, data 3, numerical 4.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OracleLimitError : public DataError {
 public:
  using DataError::DataError;
};

class SchemaVersionError : public DataError {
 public:
  using DataError::DataError;
};

// Counter-based generator: splitmix64 seeding of a xoshiro256** core.
// Streams are portable across compilers, unlike std:: distributions.
class Rng {
 public:
  using result_type = uint64_t;

  explicit Rng(uint64_t seed = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()();

  // Uniform in [0, 1) with 53 random bits.
  double Uniform();
  // Uniform integer in [0, bound).
  uint64_t Below(uint64_t bound);
  bool Bernoulli(double p) { return Uniform() < p; }

  // Independent substream keyed by a label, e.g. (seed, instance id).
  Rng Fork(uint64_t key) const;
  Rng Fork(std::string_view key) const;

 private:
  uint64_t state_[4];
};

uint64_t HashString(std::string_view s);
// HashString as 16 lowercase hex digits.
std::string HashHex(std::string_view s);

// Runs fn(0..count-1) across OpenMP threads. The exception of the lowest
// failing index is rethrown with its original type once the loop ends.
template <typename Fn>
void ParallelFor(int count, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < count; ++k) {
    try {
      fn(k);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}
uint64_t MixSeed(uint64_t a, uint64_t b);

}  // namespace nco

#endif  // NCO_COMMON_H_
