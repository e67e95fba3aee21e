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

#include <map>
#include <string>
#include <vector>

#include "nartts/decoder.hpp"
#include "nartts/duration.hpp"
#include "nartts/encoder.hpp"
#include "nartts/extractor.hpp"
#include "nartts/gradcheck.hpp"

namespace nartts {

// Finite-difference audits of every module's backward pass, run on micro
// dimensioned instances so the whole sweep stays within the CLI's runtime
// budget. Dimensions are irrelevant to the chain rule; the rules under test
// are the same code paths the full-size model uses.

struct GroupReport {
  std::string group;
  double max_rel_err = 0.0;
};

struct ModuleReport {
  std::string module;
  std::vector<GroupReport> groups;  // every parameter group exactly once
  double worst = 0.0;
};

namespace gradcheck_detail {

// Group key: module plus the next path segment ("encoder.block0", ...).
inline std::string group_of(const std::string& param_name) {
  const auto first = param_name.find('.');
  if (first == std::string::npos) return param_name;
  const auto second = param_name.find('.', first + 1);
  return second == std::string::npos ? param_name : param_name.substr(0, second);
}

// Biases initialize to zero, which would park ReLU (and the t=0 zero frame)
// exactly on its kink where central differences disagree with any one-sided
// rule. Small nonzero biases keep the check away from measure-zero corners.
inline void jitter_biases(ParamMap& pm, std::uint64_t seed) {
  RngStream rng(seed, RngStream::Stream::kParams);
  for (auto& [name, t] : pm) {
    bool all_zero = true;
    for (double v : t.values()) all_zero = all_zero && v == 0.0;
    if (all_zero)
      for (double& v : t.mutable_values()) v = rng.uniform(-0.05, 0.05);
  }
}

inline ModuleReport run_module(const std::string& module, ParamMap& pm,
                               const std::function<Tensor()>& loss_fn, double step) {
  for (auto& [name, t] : pm) t.zero_grad();
  {
    Tape tape;
    tape.backward(loss_fn());
  }
  std::map<std::string, double> groups;
  ModuleReport rep;
  rep.module = module;
  for (auto& [name, t] : pm) {
    std::vector<double> analytic(t.values().size());
    for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = t.grad_at(i);
    auto& values = t.mutable_values();
    double worst = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + step;
      const double up = loss_fn().value();
      values[i] = keep - step;
      const double down = loss_fn().value();
      values[i] = keep;
      worst = std::max(worst, grad_rel_err(analytic[i], (up - down) / (2.0 * step)));
    }
    auto [it, inserted] = groups.emplace(group_of(name), worst);
    if (!inserted) it->second = std::max(it->second, worst);
  }
  for (const auto& [g, e] : groups) {
    rep.groups.push_back({g, e});
    rep.worst = std::max(rep.worst, e);
  }
  return rep;
}

}  // namespace gradcheck_detail

inline ModuleReport check_encoder_module(std::uint64_t seed, double step = 1e-5) {
  EncoderConfig cfg;
  cfg.vocab_size = 11;
  cfg.d_model = 8;
  cfg.n_blocks = 2;
  cfg.n_heads_block = 2;
  cfg.n_heads_fusion = 2;
  cfg.conv_layers = 2;
  cfg.d_ff = 16;
  cfg.dropout_p = 0.0;
  RngStream init(seed, RngStream::Stream::kParams);
  DenseFuseEncoder enc(cfg, init);
  ParamMap pm;
  enc.collect_params("encoder", pm);
  gradcheck_detail::jitter_biases(pm, seed + 1);
  std::vector<int> ids{1, 9, 4};
  auto loss = [&enc, ids] {
    RngStream drop(1, RngStream::Stream::kDropout);
    return random_projection_loss(enc.encode(ids, drop, false).matrix);
  };
  return gradcheck_detail::run_module("encoder", pm, loss, step);
}

inline ModuleReport check_duration_module(std::uint64_t seed, double step = 1e-5) {
  EncoderConfig ecfg;
  ecfg.vocab_size = 11;
  ecfg.d_model = 8;
  ecfg.n_blocks = 2;
  ecfg.n_heads_block = 2;
  ecfg.n_heads_fusion = 2;
  ecfg.conv_layers = 1;
  ecfg.d_ff = 16;
  ecfg.dropout_p = 0.0;
  RngStream init(seed, RngStream::Stream::kParams);
  DenseFuseEncoder enc(ecfg, init);
  DurationPredictorConfig dcfg;
  dcfg.conv_layers = 2;
  dcfg.conv_dim = 8;
  dcfg.rnn_dim = 4;
  dcfg.dropout_p = 0.0;
  DurationPredictor pred(ecfg.d_model, dcfg, init);
  RngStream drop(seed, RngStream::Stream::kDropout);
  HiddenTextRepr hidden = enc.encode({2, 5, 7, 1}, drop, false);
  ParamMap pm;
  pred.collect_params("duration", pm);
  gradcheck_detail::jitter_biases(pm, seed + 1);
  auto loss = [&pred, hidden] {
    RngStream d2(1, RngStream::Stream::kDropout);
    return random_projection_loss(pred.predict(hidden, d2, false));
  };
  return gradcheck_detail::run_module("duration", pm, loss, step);
}

inline ModuleReport check_gmm_attention_module(std::uint64_t seed, double step = 1e-5) {
  RngStream init(seed, RngStream::Stream::kParams);
  GmmAttention att(6, 3, 0.05, init);
  RngStream data(seed + 2, RngStream::Stream::kData);
  std::vector<double> ev(5 * 8);
  for (double& v : ev) v = data.uniform(-1, 1);
  Tensor enc_outs = Tensor::from({5, 8}, std::move(ev));
  Tensor ds = Tensor::from({1, 6}, {0.3, -0.4, 0.8, 0.1, -0.2, 0.6});
  ds.set_requires_grad(true);
  ParamMap pm{{"gmm-attention.decoder_state", ds}};
  att.collect_params("gmm-attention", pm);
  gradcheck_detail::jitter_biases(pm, seed + 1);
  auto loss = [&att, &ds, enc_outs] {
    // two chained steps exercise the monotone-mean recurrence
    auto [w1, c1, s1] = att.step(ds, enc_outs, GmmAttentionState::initial(3));
    auto [w2, c2, s2] = att.step(ds, enc_outs, s1);
    return random_projection_loss(concat_cols({w1, c1, w2, c2}), 1);
  };
  return gradcheck_detail::run_module("gmm-attention", pm, loss, step);
}

inline ModuleReport check_decoder_module(std::uint64_t seed, double step = 1e-5) {
  DecoderConfig cfg;
  cfg.rnn_dim = 6;
  cfg.d_feat = 4;
  cfg.d_model = 5;
  RngStream init(seed, RngStream::Stream::kParams);
  AcousticDecoder dec(cfg, init);

  DecoderConfig acfg = cfg;
  acfg.mode = DecoderMode::kAutoregressive;
  acfg.prenet_dim = 3;
  acfg.prenet_dropout = 0.0;
  AcousticDecoder ar(acfg, init);

  RngStream data(seed + 2, RngStream::Stream::kData);
  std::vector<double> ev(5 * 5);
  for (double& v : ev) v = data.uniform(-1, 1);
  Tensor expanded = Tensor::from({5, 5}, std::move(ev));
  std::vector<double> tv(5 * 4);
  for (double& v : tv) v = data.uniform(-1, 1);
  Tensor teacher = Tensor::from({5, 4}, std::move(tv));

  ParamMap pm;
  dec.collect_params("decoder.nar", pm);
  ar.collect_params("decoder.ar", pm);
  gradcheck_detail::jitter_biases(pm, seed + 1);
  auto loss = [&dec, &ar, expanded, teacher] {
    RngStream drop(1, RngStream::Stream::kDropout);
    Tensor a = dec.decode(expanded);
    Tensor b = ar.decode_autoregressive(expanded, teacher, drop, true);
    return add(random_projection_loss(a, 2), random_projection_loss(b, 3));
  };
  return gradcheck_detail::run_module("decoder", pm, loss, step);
}

inline ModuleReport check_postnet_module(std::uint64_t seed, double step = 1e-5) {
  CbhgConfig cfg;
  cfg.d_feat = 4;
  cfg.bank_k = 3;
  cfg.bank_channels = 5;
  cfg.proj_dim = 6;
  cfg.highway_dim = 5;
  cfg.highway_layers = 2;
  cfg.rnn_dim = 4;
  RngStream init(seed, RngStream::Stream::kParams);
  CbhgPostnet post(cfg, init);
  RngStream data(seed + 2, RngStream::Stream::kData);
  std::vector<double> bv(4 * 4);
  for (double& v : bv) v = data.uniform(-1, 1);
  Tensor before = Tensor::from({4, 4}, std::move(bv));
  ParamMap pm;
  post.collect_params("postnet", pm);
  gradcheck_detail::jitter_biases(pm, seed + 1);
  auto loss = [&post, before] { return random_projection_loss(post.forward(before), 4); };
  return gradcheck_detail::run_module("postnet", pm, loss, step);
}

inline std::vector<ModuleReport> run_gradcheck_suites(const std::string& module,
                                                      std::uint64_t seed, double step = 1e-5) {
  std::vector<ModuleReport> reports;
  const bool all = module == "all";
  if (all || module == "encoder") reports.push_back(check_encoder_module(seed, step));
  if (all || module == "duration") {
    reports.push_back(check_duration_module(seed, step));
    reports.push_back(check_gmm_attention_module(seed, step));
  }
  if (all || module == "decoder") reports.push_back(check_decoder_module(seed, step));
  if (all || module == "postnet") reports.push_back(check_postnet_module(seed, step));
  if (reports.empty()) throw ConfigError("gradcheck: unknown module " + module);
  return reports;
}

}  // namespace nartts
