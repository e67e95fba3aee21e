// Copyright (c) 2026 nartts authors
//
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

#pragma once

#include <cmath>
#include <cstdint>

namespace nartts {

// Counter-based random stream (splitmix64 finalizer). Draw i is a pure
// function of (seed, stream id, i), so identical (seed, counter) always
// yields identical values and streams with distinct ids never collide.
class RngStream {
 public:
  // Fixed stream ids. Parameter init, dropout and data generation each get
  // their own stream so changing one consumer never perturbs the others.
  enum class Stream : std::uint64_t { kParams = 1, kDropout = 2, kData = 3 };

  RngStream(std::uint64_t seed, Stream stream)
      : base_(mix(seed ^ mix(static_cast<std::uint64_t>(stream) * 0x9E3779B97F4A7C15ULL))) {}

  std::uint64_t seed_base() const { return base_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  std::uint64_t next_u64() { return mix(base_ + (++counter_) * 0x9E3779B97F4A7C15ULL); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive range. Modulo bias is negligible against 2^64 for the small
  // ranges used here.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Box-Muller; consumes exactly two draws per call (no cached spare, so the
  // counter mapping stays reproducible).
  double normal(double mean, double stddev) {
    const double u1 = 1.0 - uniform();  // (0, 1]: keeps log() finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586 * u2);
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t base_;
  std::uint64_t counter_ = 0;
};

}  // namespace nartts
