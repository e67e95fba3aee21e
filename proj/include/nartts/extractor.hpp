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
#include <string>
#include <vector>

#include "nartts/cbhg.hpp"
#include "nartts/config.hpp"
#include "nartts/duration.hpp"
#include "nartts/encoder.hpp"
#include "nartts/gmm_attention.hpp"

namespace nartts {

struct ExtractorConfig {
  EncoderConfig encoder;
  CbhgConfig postnet;
  int d_feat = 20;
  int lstm_dim = 256;
  int prenet_dim = 128;
  double prenet_dropout = 0.5;
  int mixtures = 5;
  double sigma_min = 0.05;
  std::uint64_t seed = 1;
};

inline ConfigMap extractor_config_to_map(const ExtractorConfig& c) {
  ConfigMap m;
  m["kind"] = "extractor";
  m["seed"] = std::to_string(c.seed);
  m["encoder.vocab_size"] = std::to_string(c.encoder.vocab_size);
  m["encoder.d_model"] = std::to_string(c.encoder.d_model);
  m["encoder.n_blocks"] = std::to_string(c.encoder.n_blocks);
  m["encoder.n_heads_block"] = std::to_string(c.encoder.n_heads_block);
  m["encoder.n_heads_fusion"] = std::to_string(c.encoder.n_heads_fusion);
  m["encoder.conv_layers"] = std::to_string(c.encoder.conv_layers);
  m["encoder.kernel"] = std::to_string(c.encoder.kernel);
  m["encoder.d_ff"] = std::to_string(c.encoder.d_ff);
  m["encoder.dropout_p"] = std::to_string(c.encoder.dropout_p);
  m["encoder.fusion_enabled"] = c.encoder.fusion_enabled ? "true" : "false";
  m["extractor.d_feat"] = std::to_string(c.d_feat);
  m["extractor.lstm_dim"] = std::to_string(c.lstm_dim);
  m["extractor.prenet_dim"] = std::to_string(c.prenet_dim);
  m["extractor.prenet_dropout"] = std::to_string(c.prenet_dropout);
  m["extractor.mixtures"] = std::to_string(c.mixtures);
  m["extractor.sigma_min"] = std::to_string(c.sigma_min);
  m["postnet.bank_k"] = std::to_string(c.postnet.bank_k);
  m["postnet.bank_channels"] = std::to_string(c.postnet.bank_channels);
  m["postnet.proj_dim"] = std::to_string(c.postnet.proj_dim);
  m["postnet.highway_dim"] = std::to_string(c.postnet.highway_dim);
  m["postnet.highway_layers"] = std::to_string(c.postnet.highway_layers);
  m["postnet.rnn_dim"] = std::to_string(c.postnet.rnn_dim);
  return m;
}

inline ExtractorConfig extractor_config_from_map(const ConfigMap& m) {
  ExtractorConfig c;
  c.seed = cfg::get_u64(m, "seed", c.seed);
  c.encoder.vocab_size = cfg::get_int(m, "encoder.vocab_size", c.encoder.vocab_size);
  c.encoder.d_model = cfg::get_int(m, "encoder.d_model", c.encoder.d_model);
  c.encoder.n_blocks = cfg::get_int(m, "encoder.n_blocks", c.encoder.n_blocks);
  c.encoder.n_heads_block = cfg::get_int(m, "encoder.n_heads_block", c.encoder.n_heads_block);
  c.encoder.n_heads_fusion = cfg::get_int(m, "encoder.n_heads_fusion", c.encoder.n_heads_fusion);
  c.encoder.conv_layers = cfg::get_int(m, "encoder.conv_layers", c.encoder.conv_layers);
  c.encoder.kernel = cfg::get_int(m, "encoder.kernel", c.encoder.kernel);
  c.encoder.d_ff = cfg::get_int(m, "encoder.d_ff", c.encoder.d_ff);
  c.encoder.dropout_p = cfg::get_double(m, "encoder.dropout_p", c.encoder.dropout_p);
  c.encoder.fusion_enabled = cfg::get_bool(m, "encoder.fusion_enabled", c.encoder.fusion_enabled);
  c.d_feat = cfg::get_int(m, "extractor.d_feat", c.d_feat);
  c.lstm_dim = cfg::get_int(m, "extractor.lstm_dim", c.lstm_dim);
  c.prenet_dim = cfg::get_int(m, "extractor.prenet_dim", c.prenet_dim);
  c.prenet_dropout = cfg::get_double(m, "extractor.prenet_dropout", c.prenet_dropout);
  c.mixtures = cfg::get_int(m, "extractor.mixtures", c.mixtures);
  c.sigma_min = cfg::get_double(m, "extractor.sigma_min", c.sigma_min);
  c.postnet.bank_k = cfg::get_int(m, "postnet.bank_k", c.postnet.bank_k);
  c.postnet.bank_channels = cfg::get_int(m, "postnet.bank_channels", c.postnet.bank_channels);
  c.postnet.proj_dim = cfg::get_int(m, "postnet.proj_dim", c.postnet.proj_dim);
  c.postnet.highway_dim = cfg::get_int(m, "postnet.highway_dim", c.postnet.highway_dim);
  c.postnet.highway_layers = cfg::get_int(m, "postnet.highway_layers", c.postnet.highway_layers);
  c.postnet.rnn_dim = cfg::get_int(m, "postnet.rnn_dim", c.postnet.rnn_dim);
  c.postnet.d_feat = c.d_feat;
  return c;
}

// Attention weights per decoder step plus the argmax path through tokens.
struct AlignmentMatrix {
  Tensor weights;             // [T_dec x T_text]
  std::vector<int> argmax;    // T_dec token indices, ties to the lower index

  static AlignmentMatrix from_weights(Tensor w) {
    AlignmentMatrix a;
    a.argmax.resize(static_cast<std::size_t>(w.dim(0)));
    for (int t = 0; t < w.dim(0); ++t) a.argmax[static_cast<std::size_t>(t)] = argmax_row(w, t);
    a.weights = std::move(w);
    return a;
  }
};

// Partitions the decoder steps among tokens by attention argmax; the counts
// always sum to the number of decoder steps.
inline DurationSeq durations_from_alignment(const AlignmentMatrix& alignment, int t_text) {
  DurationSeq seq;
  seq.frames.assign(static_cast<std::size_t>(t_text), 0);
  for (int idx : alignment.argmax) {
    if (idx < 0 || idx >= t_text) throw ContractError("alignment argmax outside token range");
    seq.frames[static_cast<std::size_t>(idx)] += 1;
  }
  seq.raw.assign(seq.frames.begin(), seq.frames.end());
  return seq;
}

// Teacher-forced sequence-to-sequence aligner: Dense-fuse encoder, GMM
// attention, two stacked LSTM layers, CBHG postnet. It exists only to be
// trained on (tokens, frames) pairs and then queried in ground-truth-aligned
// mode for per-token durations; it never predicts a stop token because the
// target length is always known.
class DurationExtractor {
 public:
  struct ForwardOut {
    Tensor before;  // [T_frames x d_feat]
    Tensor after;   // postnet-refined
    AlignmentMatrix alignment;
  };

  DurationExtractor() = default;
  DurationExtractor(const ExtractorConfig& cfg, RngStream& rng)
      : cfg_(cfg),
        encoder_(cfg.encoder, rng),
        prenet_(cfg.d_feat, cfg.prenet_dim, cfg.prenet_dropout, rng),
        lstm1_(cfg.prenet_dim + cfg.encoder.d_model, cfg.lstm_dim, rng),
        lstm2_(cfg.lstm_dim, cfg.lstm_dim, rng),
        attention_(cfg.lstm_dim, cfg.mixtures, cfg.sigma_min, rng),
        head_(cfg.lstm_dim + cfg.encoder.d_model, cfg.d_feat, rng),
        postnet_(cfg.postnet, rng) {}

  const ExtractorConfig& config() const { return cfg_; }

  // Runs exactly T_frames decoder steps against the teacher frames: step t
  // consumes the prenet-encoded frame t-1 (zeros at t = 0) and the previous
  // attention context.
  ForwardOut forward_teacher_forced(const std::vector<int>& ids, const Tensor& target,
                                    RngStream& drop, bool training) const {
    if (target.rank() != 2 || target.dim(0) < 1)
      throw ContractError("extractor: target must have at least one frame");
    if (target.dim(1) != cfg_.d_feat)
      throw ShapeError("extractor: target width " + std::to_string(target.dim(1)) +
                       " != d_feat " + std::to_string(cfg_.d_feat));
    const int t_frames = target.dim(0);

    HiddenTextRepr hidden = encoder_.encode(ids, drop, training);
    const Tensor& enc = hidden.matrix;

    Tensor h1 = lstm1_.initial_state(), c1 = lstm1_.initial_state();
    Tensor h2 = lstm2_.initial_state(), c2 = lstm2_.initial_state();
    Tensor context = Tensor::zeros({1, cfg_.encoder.d_model});
    GmmAttentionState att = GmmAttentionState::initial(cfg_.mixtures);

    std::vector<Tensor> frames, weight_rows;
    frames.reserve(static_cast<std::size_t>(t_frames));
    weight_rows.reserve(static_cast<std::size_t>(t_frames));
    for (int t = 0; t < t_frames; ++t) {
      Tensor prev = t == 0 ? Tensor::zeros({1, cfg_.d_feat}) : slice_rows(target, t - 1, t);
      Tensor pin = prenet_.forward(prev, drop, training);
      Tensor x = concat_cols(pin, context);
      std::tie(h1, c1) = lstm1_.step(x, h1, c1);
      std::tie(h2, c2) = lstm2_.step(h1, h2, c2);
      auto [weights, ctx, att_next] = attention_.step(h2, enc, att);
      context = ctx;
      att = att_next;
      frames.push_back(head_.forward(concat_cols(h2, context)));
      weight_rows.push_back(weights);
    }
    ForwardOut out;
    out.before = concat_rows(frames);
    out.after = postnet_.forward(out.before);
    out.alignment = AlignmentMatrix::from_weights(concat_rows(weight_rows));
    return out;
  }

  // Ground-truth-aligned extraction: frames[i] counts the decoder steps whose
  // attention argmax lands on token i, so the counts always partition
  // T_frames. Runs in eval mode with no tape.
  DurationSeq extract_durations(const std::vector<int>& ids, const Tensor& target) const {
    RngStream drop(0, RngStream::Stream::kDropout);  // eval: dropout never draws
    ForwardOut out = forward_teacher_forced(ids, target, drop, /*training=*/false);
    return durations_from_alignment(out.alignment, static_cast<int>(ids.size()));
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    encoder_.collect_params(prefix + ".encoder", pm);
    prenet_.collect_params(prefix + ".prenet", pm);
    lstm1_.collect_params(prefix + ".lstm1", pm);
    lstm2_.collect_params(prefix + ".lstm2", pm);
    attention_.collect_params(prefix + ".attention", pm);
    head_.collect_params(prefix + ".head", pm);
    postnet_.collect_params(prefix + ".postnet", pm);
  }

  ParamMap parameters() const {
    ParamMap pm;
    collect_params("extractor", pm);
    return pm;
  }

  const GmmAttention& attention() const { return attention_; }

 private:
  ExtractorConfig cfg_;
  DenseFuseEncoder encoder_;
  Prenet prenet_;
  LstmCell lstm1_, lstm2_;
  GmmAttention attention_;
  Linear head_;
  CbhgPostnet postnet_;
};

// Fraction of consecutive decoder steps whose argmax does not move backwards.
inline double alignment_monotonicity_rate(const AlignmentMatrix& a) {
  if (a.argmax.size() < 2) return 1.0;
  int ok = 0;
  for (std::size_t t = 1; t < a.argmax.size(); ++t)
    if (a.argmax[t] >= a.argmax[t - 1]) ++ok;
  return static_cast<double>(ok) / static_cast<double>(a.argmax.size() - 1);
}

// Mean per-step entropy of the (renormalized) attention rows, in nats.
inline double alignment_entropy(const AlignmentMatrix& a) {
  const int rows = a.weights.dim(0), cols = a.weights.dim(1);
  double total = 0.0;
  for (int t = 0; t < rows; ++t) {
    double mass = 0.0;
    for (int j = 0; j < cols; ++j) mass += a.weights(t, j);
    if (mass <= 0.0) continue;
    double h = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double p = a.weights(t, j) / mass;
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / rows;
}

}  // namespace nartts
