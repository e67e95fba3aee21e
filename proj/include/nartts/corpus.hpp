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

#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nartts/rng.hpp"
#include "nartts/tensor.hpp"

namespace nartts {

constexpr int kFeatDim = 20;  // 18 cepstral slots + 2 pitch slots per frame

struct CorpusSpec {
  int vocab_size = 16;
  int n_utterances = 64;
  int min_tokens = 4;
  int max_tokens = 10;
  double noise_sigma = 0.01;
  std::uint64_t seed = 7;

  void validate() const {
    if (vocab_size < 2) throw ConfigError("corpus: vocab_size must be >= 2");
    if (min_tokens < 1) throw ConfigError("corpus: min_tokens must be >= 1");
    if (max_tokens < min_tokens) throw ConfigError("corpus: max_tokens must be >= min_tokens");
    if (n_utterances < 1) throw ConfigError("corpus: need at least one utterance");
    if (noise_sigma < 0.0) throw ConfigError("corpus: noise_sigma must be >= 0");
  }
};

struct ToyCorpusExample {
  std::string id;
  std::vector<int> tokens;
  std::vector<int> true_durations;  // partitions the frame count by design
  Tensor frames;                    // [T_frames x kFeatDim]
};

// Ground-truth duration of a token: deterministic, covers 1..4 frames.
inline int toy_token_duration(int token) { return 1 + (token % 4); }

// Deterministic synthetic corpus. Token v emits toy_token_duration(v) frames;
// frame dimension d carries sin(2*pi*(v+1)*(d+1)/(vocab*20)) plus a 0.1*p
// within-token ramp (p is the 0-based frame index inside the token, which
// makes position recoverable and actually exercises decoder state) plus
// Normal(0, noise_sigma) noise from the data stream.
inline std::vector<ToyCorpusExample> generate_toy_corpus(const CorpusSpec& spec) {
  spec.validate();
  RngStream rng(spec.seed, RngStream::Stream::kData);
  std::vector<ToyCorpusExample> corpus;
  corpus.reserve(static_cast<std::size_t>(spec.n_utterances));
  for (int u = 0; u < spec.n_utterances; ++u) {
    ToyCorpusExample ex;
    std::ostringstream name;
    name << "utt" << std::setw(4) << std::setfill('0') << u;
    ex.id = name.str();
    const int n_tokens = rng.uniform_int(spec.min_tokens, spec.max_tokens);
    ex.tokens.resize(static_cast<std::size_t>(n_tokens));
    for (int& t : ex.tokens) t = rng.uniform_int(0, spec.vocab_size - 1);
    ex.true_durations.resize(ex.tokens.size());
    int t_frames = 0;
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      ex.true_durations[i] = toy_token_duration(ex.tokens[i]);
      t_frames += ex.true_durations[i];
    }
    std::vector<double> values(static_cast<std::size_t>(t_frames) * kFeatDim);
    std::size_t row = 0;
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      const int v = ex.tokens[i];
      for (int p = 0; p < ex.true_durations[i]; ++p, ++row) {
        for (int d = 0; d < kFeatDim; ++d) {
          const double base =
              std::sin(2.0 * 3.141592653589793 * (v + 1) * (d + 1) /
                       (static_cast<double>(spec.vocab_size) * kFeatDim)) +
              0.1 * p;
          values[row * kFeatDim + d] = base + rng.normal(0.0, spec.noise_sigma);
        }
      }
    }
    ex.frames = Tensor::from({t_frames, kFeatDim}, std::move(values));
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

// Expected mean |noise| of the generator: sigma * sqrt(2/pi). Acceptance
// thresholds are sanity-checked against this floor.
inline double toy_noise_floor(double noise_sigma) { return noise_sigma * std::sqrt(2.0 / 3.141592653589793); }

}  // namespace nartts
