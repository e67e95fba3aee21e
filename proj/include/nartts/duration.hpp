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
#include <numeric>
#include <string>
#include <vector>

#include "nartts/encoder.hpp"
#include "nartts/nn.hpp"

namespace nartts {

// Per-token frame counts: raw real-valued predictions plus rounded
// non-negative integers.
struct DurationSeq {
  std::vector<double> raw;
  std::vector<int> frames;

  int total() const { return std::accumulate(frames.begin(), frames.end(), 0); }
};

struct DurationPredictorConfig {
  int conv_layers = 3;
  int conv_dim = 256;
  int kernel = 3;
  int rnn_dim = 64;  // per direction
  double dropout_p = 0.1;
};

// Rounds half-up, clamps at zero, and forces at least one frame in total so
// the length regulator always has something to emit.
inline std::vector<int> round_durations(const std::vector<double>& raw) {
  if (raw.empty()) throw ContractError("round_durations: empty input");
  std::vector<int> frames(raw.size());
  int total = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    frames[i] = std::max(0, static_cast<int>(std::floor(raw[i] + 0.5)));
    total += frames[i];
  }
  if (total == 0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < raw.size(); ++i)
      if (raw[i] > raw[best]) best = i;
    frames[best] = 1;
  }
  return frames;
}

// Repeats token encoding i frames[i] times; output has exactly sum(frames)
// rows.
inline Tensor length_regulate(const Tensor& hidden, const std::vector<int>& frames) {
  return repeat_rows(hidden, frames);
}

// Convolutional stack + bidirectional recurrence + scalar head on top of the
// detached text encoding. The detach is a hard contract: duration training
// must never push gradients into the encoder.
class DurationPredictor {
 public:
  DurationPredictor() = default;
  DurationPredictor(int d_model, const DurationPredictorConfig& cfg, RngStream& rng)
      : cfg_(cfg) {
    int in = d_model;
    for (int i = 0; i < cfg.conv_layers; ++i) {
      convs_.emplace_back(cfg.kernel, in, cfg.conv_dim, rng);
      norms_.emplace_back(cfg.conv_dim);
      in = cfg.conv_dim;
    }
    rnn_ = BiGru(in, cfg.rnn_dim, rng);
    head_ = Linear(2 * cfg.rnn_dim, 1, rng);
  }

  // Raw per-token durations [T_text]; unconstrained during training, rounded
  // only at inference.
  Tensor predict(const HiddenTextRepr& hidden, RngStream& drop, bool training) const {
    Tensor h = stop_gradient(hidden.matrix);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = dropout(norms_[i].forward(relu(convs_[i].forward(h))), cfg_.dropout_p, drop, training);
    }
    h = rnn_.forward(h);
    Tensor out = head_.forward(h);  // [T x 1]
    return reshape(out, {out.dim(0)});
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect_params(prefix + ".conv" + std::to_string(i), pm);
      norms_[i].collect_params(prefix + ".ln" + std::to_string(i), pm);
    }
    rnn_.collect_params(prefix + ".rnn", pm);
    head_.collect_params(prefix + ".head", pm);
  }

 private:
  DurationPredictorConfig cfg_;
  std::vector<Conv1dSame> convs_;
  std::vector<LayerNorm> norms_;
  BiGru rnn_;
  Linear head_;
};

}  // namespace nartts
