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
#include <vector>

#include "nartts/cbhg.hpp"
#include "nartts/config.hpp"
#include "nartts/decoder.hpp"
#include "nartts/duration.hpp"
#include "nartts/encoder.hpp"

namespace nartts {

struct ModelConfig {
  EncoderConfig encoder;
  DurationPredictorConfig duration;
  DecoderConfig decoder;
  CbhgConfig postnet;
  std::uint64_t seed = 1;
};

inline ConfigMap model_config_to_map(const ModelConfig& c) {
  ConfigMap m;
  m["kind"] = "acoustic";
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
  m["duration.conv_layers"] = std::to_string(c.duration.conv_layers);
  m["duration.conv_dim"] = std::to_string(c.duration.conv_dim);
  m["duration.kernel"] = std::to_string(c.duration.kernel);
  m["duration.rnn_dim"] = std::to_string(c.duration.rnn_dim);
  m["duration.dropout_p"] = std::to_string(c.duration.dropout_p);
  m["decoder.rnn_dim"] = std::to_string(c.decoder.rnn_dim);
  m["decoder.d_feat"] = std::to_string(c.decoder.d_feat);
  m["decoder.mode"] =
      c.decoder.mode == DecoderMode::kNonAutoregressive ? "non-autoregressive" : "autoregressive";
  m["decoder.prenet_dim"] = std::to_string(c.decoder.prenet_dim);
  m["decoder.prenet_dropout"] = std::to_string(c.decoder.prenet_dropout);
  m["postnet.bank_k"] = std::to_string(c.postnet.bank_k);
  m["postnet.bank_channels"] = std::to_string(c.postnet.bank_channels);
  m["postnet.proj_dim"] = std::to_string(c.postnet.proj_dim);
  m["postnet.highway_dim"] = std::to_string(c.postnet.highway_dim);
  m["postnet.highway_layers"] = std::to_string(c.postnet.highway_layers);
  m["postnet.rnn_dim"] = std::to_string(c.postnet.rnn_dim);
  return m;
}

inline ModelConfig model_config_from_map(const ConfigMap& m) {
  ModelConfig c;
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
  c.duration.conv_layers = cfg::get_int(m, "duration.conv_layers", c.duration.conv_layers);
  c.duration.conv_dim = cfg::get_int(m, "duration.conv_dim", c.duration.conv_dim);
  c.duration.kernel = cfg::get_int(m, "duration.kernel", c.duration.kernel);
  c.duration.rnn_dim = cfg::get_int(m, "duration.rnn_dim", c.duration.rnn_dim);
  c.duration.dropout_p = cfg::get_double(m, "duration.dropout_p", c.duration.dropout_p);
  c.decoder.rnn_dim = cfg::get_int(m, "decoder.rnn_dim", c.decoder.rnn_dim);
  c.decoder.d_feat = cfg::get_int(m, "decoder.d_feat", c.decoder.d_feat);
  const std::string mode = cfg::get_str(m, "decoder.mode", "non-autoregressive");
  if (mode == "non-autoregressive") {
    c.decoder.mode = DecoderMode::kNonAutoregressive;
  } else if (mode == "autoregressive") {
    c.decoder.mode = DecoderMode::kAutoregressive;
  } else {
    throw ParseError("decoder.mode: unknown value " + mode);
  }
  c.decoder.prenet_dim = cfg::get_int(m, "decoder.prenet_dim", c.decoder.prenet_dim);
  c.decoder.prenet_dropout = cfg::get_double(m, "decoder.prenet_dropout", c.decoder.prenet_dropout);
  c.postnet.bank_k = cfg::get_int(m, "postnet.bank_k", c.postnet.bank_k);
  c.postnet.bank_channels = cfg::get_int(m, "postnet.bank_channels", c.postnet.bank_channels);
  c.postnet.proj_dim = cfg::get_int(m, "postnet.proj_dim", c.postnet.proj_dim);
  c.postnet.highway_dim = cfg::get_int(m, "postnet.highway_dim", c.postnet.highway_dim);
  c.postnet.highway_layers = cfg::get_int(m, "postnet.highway_layers", c.postnet.highway_layers);
  c.postnet.rnn_dim = cfg::get_int(m, "postnet.rnn_dim", c.postnet.rnn_dim);
  c.postnet.d_feat = c.decoder.d_feat;
  return c;
}

// The acoustic model: Dense-fuse encoder, jointly trained duration predictor
// (detached from the encoder), length regulator, single-layer recurrent
// decoder, CBHG postnet.
//
// Training regulates with the teacher durations; inference regulates with the
// rounded predictions. last_regulate_source() exposes which path ran last.
class AcousticModel {
 public:
  enum class RegulateSource { kNone, kTeacher, kPredicted };

  struct TeacherOut {
    Tensor before;   // [T_frames x d_feat]
    Tensor after;    // postnet-refined
    Tensor dur_raw;  // [T_text]
    HiddenTextRepr hidden;
  };

  struct Synthesis {
    std::vector<double> raw;
    std::vector<int> frames;
    Tensor before;
    Tensor after;
  };

  explicit AcousticModel(const ModelConfig& cfg)
      : cfg_(cfg), dropout_rng_(cfg.seed, RngStream::Stream::kDropout) {
    cfg_.decoder.d_model = cfg_.encoder.d_model;
    cfg_.postnet.d_feat = cfg_.decoder.d_feat;
    RngStream init(cfg.seed, RngStream::Stream::kParams);
    encoder_ = DenseFuseEncoder(cfg_.encoder, init);
    duration_ = DurationPredictor(cfg_.encoder.d_model, cfg_.duration, init);
    decoder_ = AcousticDecoder(cfg_.decoder, init);
    postnet_ = CbhgPostnet(cfg_.postnet, init);
  }

  const ModelConfig& config() const { return cfg_; }
  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }
  RngStream& dropout_rng() { return dropout_rng_; }
  RegulateSource last_regulate_source() const { return last_source_; }

  const DenseFuseEncoder& encoder() const { return encoder_; }
  DenseFuseEncoder& encoder() { return encoder_; }
  const AcousticDecoder& decoder() const { return decoder_; }
  AcousticDecoder& decoder() { return decoder_; }
  CbhgPostnet& postnet() { return postnet_; }

  HiddenTextRepr encode(const std::vector<int>& ids) const {
    return encoder_.encode(ids, dropout_rng_, training_);
  }

  Tensor predict_durations(const HiddenTextRepr& hidden) const {
    return duration_.predict(hidden, dropout_rng_, training_);
  }

  // Teacher-forced training forward. The acoustic target is only consumed by
  // the autoregressive ablation decoder; the non-autoregressive path never
  // reads it.
  TeacherOut forward_teacher(const std::vector<int>& ids, const std::vector<int>& teacher_frames,
                             const std::optional<Tensor>& target = std::nullopt) const {
    TeacherOut out;
    out.hidden = encode(ids);
    out.dur_raw = predict_durations(out.hidden);
    Tensor expanded = length_regulate(out.hidden.matrix, teacher_frames);
    last_source_ = RegulateSource::kTeacher;
    if (cfg_.decoder.mode == DecoderMode::kNonAutoregressive) {
      out.before = decoder_.decode(expanded);
    } else {
      out.before = decoder_.decode_autoregressive(expanded, target, dropout_rng_, training_);
    }
    out.after = postnet_.forward(out.before);
    return out;
  }

  // Inference: predicted durations drive the length regulator. Always runs in
  // eval mode, so it is bitwise reproducible.
  Synthesis synthesize(const std::vector<int>& ids) const {
    const bool was_training = training_;
    training_ = false;
    HiddenTextRepr hidden = encode(ids);
    Tensor raw = predict_durations(hidden);
    Synthesis out;
    out.raw = raw.values();
    out.frames = round_durations(out.raw);
    Tensor expanded = length_regulate(hidden.matrix, out.frames);
    last_source_ = RegulateSource::kPredicted;
    if (cfg_.decoder.mode == DecoderMode::kNonAutoregressive) {
      out.before = decoder_.decode(expanded);
    } else {
      out.before = decoder_.decode_autoregressive(expanded, std::nullopt, dropout_rng_, false);
    }
    out.after = postnet_.forward(out.before);
    training_ = was_training;
    return out;
  }

  ParamMap parameters() const {
    ParamMap pm;
    encoder_.collect_params("encoder", pm);
    duration_.collect_params("duration", pm);
    decoder_.collect_params("decoder", pm);
    postnet_.collect_params("postnet", pm);
    return pm;
  }

  // Parameter names prefixed "encoder." — the stop-gradient contract is
  // asserted against exactly this set.
  ParamMap encoder_parameters() const {
    ParamMap pm;
    encoder_.collect_params("encoder", pm);
    return pm;
  }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
  }

 private:
  ModelConfig cfg_;
  DenseFuseEncoder encoder_;
  DurationPredictor duration_;
  AcousticDecoder decoder_;
  CbhgPostnet postnet_;
  mutable RngStream dropout_rng_;
  mutable bool training_ = false;
  mutable RegulateSource last_source_ = RegulateSource::kNone;
};

}  // namespace nartts
