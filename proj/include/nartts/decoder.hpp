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

#include <optional>
#include <string>

#include "nartts/nn.hpp"

namespace nartts {

enum class DecoderMode { kNonAutoregressive, kAutoregressive };

struct DecoderConfig {
  int rnn_dim = 512;
  int d_feat = 20;
  int d_model = 256;  // width of the length-regulated text representation
  DecoderMode mode = DecoderMode::kNonAutoregressive;
  int prenet_dim = 128;      // autoregressive ablation only
  double prenet_dropout = 0.5;
};

// Single-layer recurrent decoder over the expanded text representation.
//
// Non-autoregressive mode: the recurrence consumes only the expanded rows (no
// predicted or real frame is ever fed back), and the output head maps
// concat(rnn output, expanded row) to a frame. Autoregressive mode is the
// ablation: the step input gains a prenet-encoded previous frame, teacher
// forced in training and self-fed at inference.
class AcousticDecoder {
 public:
  struct Counters {
    std::int64_t recurrence_evals = 0;
    std::int64_t prenet_evals = 0;
    std::int64_t feedback_reads = 0;  // previous-frame reads (teacher or own)
  };

  AcousticDecoder() = default;
  AcousticDecoder(const DecoderConfig& cfg, RngStream& rng) : cfg_(cfg) {
    if (cfg.mode == DecoderMode::kNonAutoregressive) {
      gru_ = GruLayer(cfg.d_model, cfg.rnn_dim, rng);
    } else {
      prenet_ = Prenet(cfg.d_feat, cfg.prenet_dim, cfg.prenet_dropout, rng);
      cell_ = GruCell(cfg.d_model + cfg.prenet_dim, cfg.rnn_dim, rng);
    }
    head_ = Linear(cfg.rnn_dim + cfg.d_model, cfg.d_feat, rng);
  }

  const DecoderConfig& config() const { return cfg_; }
  const Counters& counters() const { return counters_; }
  void reset_counters() { counters_ = Counters{}; }

  // Non-autoregressive decode; targets never enter this path.
  Tensor decode(const Tensor& expanded) const {
    if (cfg_.mode != DecoderMode::kNonAutoregressive)
      throw ContractError("decode: decoder built in autoregressive mode");
    if (expanded.dim(0) < 1) throw ContractError("decode: empty input");
    Tensor h = gru_.forward(expanded);
    counters_.recurrence_evals += expanded.dim(0);
    return head_.forward(concat_cols(h, expanded));
  }

  // Autoregressive ablation. teacher is required in training (exact length
  // match) and must be absent at inference.
  Tensor decode_autoregressive(const Tensor& expanded, const std::optional<Tensor>& teacher,
                               RngStream& drop, bool training) const {
    if (cfg_.mode != DecoderMode::kAutoregressive)
      throw ContractError("decode_autoregressive: decoder built in non-autoregressive mode");
    const int t_len = expanded.dim(0);
    if (training) {
      if (!teacher.has_value()) throw ContractError("autoregressive training needs teacher frames");
      if (teacher->dim(0) != t_len)
        throw ContractError("teacher length " + std::to_string(teacher->dim(0)) +
                            " != expanded length " + std::to_string(t_len));
    }
    Tensor h = cell_.initial_state();
    Tensor prev = Tensor::zeros({1, cfg_.d_feat});
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(t_len));
    for (int t = 0; t < t_len; ++t) {
      Tensor pin = prenet_.forward(prev, drop, training);
      counters_.prenet_evals += 1;
      Tensor xt = slice_rows(expanded, t, t + 1);
      h = cell_.step(concat_cols(xt, pin), h);
      counters_.recurrence_evals += 1;
      Tensor frame = head_.forward(concat_cols(h, xt));
      rows.push_back(frame);
      if (t + 1 < t_len) {
        prev = training ? slice_rows(*teacher, t, t + 1) : frame;
        counters_.feedback_reads += 1;
      }
    }
    return concat_rows(rows);
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    if (cfg_.mode == DecoderMode::kNonAutoregressive) {
      gru_.collect_params(prefix + ".gru", pm);
    } else {
      prenet_.collect_params(prefix + ".prenet", pm);
      cell_.collect_params(prefix + ".gru", pm);
    }
    head_.collect_params(prefix + ".head", pm);
  }

  Linear& head() { return head_; }

 private:
  DecoderConfig cfg_;
  GruLayer gru_;
  GruCell cell_;
  Prenet prenet_;
  Linear head_;
  mutable Counters counters_;
};

}  // namespace nartts
