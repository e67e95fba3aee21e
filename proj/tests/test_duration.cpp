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

#include <catch2/catch_amalgamated.hpp>
#include <numeric>

#include "nartts/extractor.hpp"
#include "nartts/gradcheck.hpp"

using namespace nartts;

namespace {

EncoderConfig micro_encoder() {
  EncoderConfig cfg;
  cfg.vocab_size = 11;
  cfg.d_model = 8;
  cfg.n_blocks = 2;
  cfg.n_heads_block = 2;
  cfg.n_heads_fusion = 2;
  cfg.conv_layers = 1;
  cfg.d_ff = 16;
  cfg.dropout_p = 0.0;
  return cfg;
}

ExtractorConfig micro_extractor() {
  ExtractorConfig cfg;
  cfg.encoder = micro_encoder();
  cfg.d_feat = 4;
  cfg.lstm_dim = 6;
  cfg.prenet_dim = 5;
  cfg.prenet_dropout = 0.0;
  cfg.mixtures = 3;
  cfg.postnet.d_feat = 4;
  cfg.postnet.bank_k = 3;
  cfg.postnet.bank_channels = 5;
  cfg.postnet.proj_dim = 6;
  cfg.postnet.highway_dim = 5;
  cfg.postnet.highway_layers = 2;
  cfg.postnet.rnn_dim = 4;
  return cfg;
}

}  // namespace

TEST_CASE("round_durations examples") {
  REQUIRE(round_durations({1.4, 2.6}) == std::vector<int>{1, 3});
  REQUIRE(round_durations({-0.3}) == std::vector<int>{1});  // clamp then forced minimum
  REQUIRE(round_durations({2.5}) == std::vector<int>{3});   // half-up
  REQUIRE(round_durations({-0.4, -0.2, -0.9}) == std::vector<int>{0, 1, 0});
  REQUIRE_THROWS_AS(round_durations({}), ContractError);
}

TEST_CASE("round_durations total is always at least one") {
  RngStream rng(1, RngStream::Stream::kData);
  for (int it = 0; it < 200; ++it) {
    const int n = rng.uniform_int(1, 12);
    std::vector<double> raw(static_cast<std::size_t>(n));
    for (double& r : raw) r = rng.uniform(-3.0, 3.0);
    const auto frames = round_durations(raw);
    REQUIRE(std::accumulate(frames.begin(), frames.end(), 0) >= 1);
    for (int f : frames) REQUIRE(f >= 0);
  }
}

TEST_CASE("length_regulate semantics") {
  Tensor h = Tensor::from({3, 2}, {1, 1, 2, 2, 3, 3});

  SECTION("repetition in order") {
    Tensor out = length_regulate(h, {2, 1, 3});
    REQUIRE(out.shape() == Shape{6, 2});
    const std::vector<double> expect{1, 1, 1, 1, 2, 2, 3, 3, 3, 3, 3, 3};
    REQUIRE(out.values() == expect);
  }

  SECTION("zero-duration token dropped") {
    Tensor two = Tensor::from({2, 2}, {1, 1, 2, 2});
    Tensor out = length_regulate(two, {0, 2});
    REQUIRE(out.values() == std::vector<double>{2, 2, 2, 2});
  }

  SECTION("identity when all ones") {
    Tensor out = length_regulate(h, {1, 1, 1});
    REQUIRE(out.values() == h.values());
  }

  SECTION("zero total is a contract error") {
    REQUIRE_THROWS_AS(length_regulate(h, {0, 0, 0}), ContractError);
  }

  SECTION("property: output length equals the frame total") {
    RngStream rng(2, RngStream::Stream::kData);
    for (int it = 0; it < 100; ++it) {
      const int n = rng.uniform_int(1, 8);
      std::vector<int> frames(static_cast<std::size_t>(n));
      int total = 0;
      for (int& f : frames) {
        f = rng.uniform_int(0, 5);
        total += f;
      }
      if (total == 0) frames[0] = total = 1;
      Tensor hh = Tensor::full({n, 3}, 1.0);
      REQUIRE(length_regulate(hh, frames).dim(0) == total);
    }
  }
}

TEST_CASE("duration predictor: constant head and shape") {
  EncoderConfig ecfg = micro_encoder();
  RngStream rng(3, RngStream::Stream::kParams);
  DenseFuseEncoder enc(ecfg, rng);
  DurationPredictorConfig dcfg;
  dcfg.conv_dim = 8;
  dcfg.rnn_dim = 4;
  dcfg.dropout_p = 0.0;
  DurationPredictor pred(ecfg.d_model, dcfg, rng);

  RngStream drop(3, RngStream::Stream::kDropout);
  HiddenTextRepr h = enc.encode({1, 2, 3, 4, 5}, drop, false);
  Tensor raw = pred.predict(h, drop, false);
  REQUIRE(raw.shape() == Shape{5});

  // zero final weights, bias b -> every raw duration is b
  ParamMap pm;
  pred.collect_params("dur", pm);
  for (auto& [name, t] : pm) {
    if (name == "dur.head.w") std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
    if (name == "dur.head.b") t.mutable_values()[0] = 2.5;
  }
  Tensor raw2 = pred.predict(h, drop, false);
  for (double v : raw2.values()) REQUIRE(v == Catch::Approx(2.5).margin(1e-12));
}

TEST_CASE("duration loss never reaches encoder parameters") {
  EncoderConfig ecfg = micro_encoder();
  RngStream rng(4, RngStream::Stream::kParams);
  DenseFuseEncoder enc(ecfg, rng);
  DurationPredictorConfig dcfg;
  dcfg.conv_dim = 8;
  dcfg.rnn_dim = 4;
  DurationPredictor pred(ecfg.d_model, dcfg, rng);

  ParamMap enc_params;
  enc.collect_params("encoder", enc_params);
  ParamMap pred_params;
  pred.collect_params("duration", pred_params);

  RngStream drop(4, RngStream::Stream::kDropout);
  Tape tape;
  HiddenTextRepr h = enc.encode({1, 2, 3}, drop, true);
  Tensor raw = pred.predict(h, drop, true);
  Tensor target = Tensor::from({3}, {1.0, 2.0, 3.0});
  tape.backward(l1_loss(raw, target));

  // exactly zero: the buffers were never even allocated
  for (auto& [name, t] : enc_params) {
    CAPTURE(name);
    REQUIRE(t.grad().empty());
  }
  double pred_norm = 0.0;
  for (auto& [name, t] : pred_params)
    for (std::size_t i = 0; i < t.grad().size(); ++i) pred_norm += std::abs(t.grad()[i]);
  REQUIRE(pred_norm > 0.0);
}

TEST_CASE("gmm attention step: rigged projection pins the mixture") {
  // zero weights; biases chosen so w = 1, mu' = 2, sigma small
  RngStream rng(5, RngStream::Stream::kParams);
  GmmAttention att(4, /*mixtures=*/1, /*sigma_min=*/0.05, rng);
  ParamMap pm;
  att.collect_params("att", pm);
  for (auto& [name, t] : pm) {
    if (name == "att.proj.w") std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
    if (name == "att.proj.b") {
      // [omega_hat, delta_hat, sigma_hat]
      t.mutable_values()[0] = 0.0;
      t.mutable_values()[1] = std::log(std::exp(2.0) - 1.0);   // softplus -> 2.0
      t.mutable_values()[2] = std::log(std::exp(0.01) - 1.0);  // softplus -> 0.01
    }
  }
  Tensor enc_outs = Tensor::from({5, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 0, 0, 1, 1});
  Tensor state_in = Tensor::zeros({1, 4});
  auto [w, ctx, st] = att.step(state_in, enc_outs, GmmAttentionState::initial(1));
  REQUIRE(argmax_row(w, 0) == 2);
  REQUIRE(st.mu(0, 0) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("gmm attention means strictly increase every step") {
  RngStream rng(6, RngStream::Stream::kParams);
  GmmAttention att(4, 3, 0.05, rng);
  RngStream data(7, RngStream::Stream::kData);
  Tensor enc_outs = Tensor::from({6, 3}, [&] {
    std::vector<double> v(18);
    for (double& x : v) x = data.uniform(-1, 1);
    return v;
  }());
  GmmAttentionState st = GmmAttentionState::initial(3);
  for (int step = 0; step < 100; ++step) {
    Tensor ds = Tensor::from({1, 4}, {data.uniform(-5, 5), data.uniform(-5, 5),
                                      data.uniform(-5, 5), data.uniform(-5, 5)});
    auto [w, ctx, next] = att.step(ds, enc_outs, st);
    for (int m = 0; m < 3; ++m) REQUIRE(next.mu(0, m) > st.mu(0, m));
    st = next;
  }
}

TEST_CASE("gmm attention context is linear in the encoder rows") {
  RngStream rng(8, RngStream::Stream::kParams);
  GmmAttention att(4, 2, 0.05, rng);
  std::vector<double> row{0.4, -0.3, 0.8};
  std::vector<double> rep;
  for (int i = 0; i < 5; ++i) rep.insert(rep.end(), row.begin(), row.end());
  Tensor enc_outs = Tensor::from({5, 3}, rep);
  RngStream data(9, RngStream::Stream::kData);
  Tensor ds = Tensor::from({1, 4}, {data.uniform(-1, 1), data.uniform(-1, 1),
                                    data.uniform(-1, 1), data.uniform(-1, 1)});
  auto [w, ctx, st] = att.step(ds, enc_outs, GmmAttentionState::initial(2));
  double mass = 0.0;
  for (int j = 0; j < 5; ++j) mass += w(0, j);
  for (int j = 0; j < 3; ++j)
    REQUIRE(ctx(0, j) == Catch::Approx(mass * row[static_cast<std::size_t>(j)]).margin(1e-12));
}

TEST_CASE("extractor teacher-forced forward shapes and contracts") {
  ExtractorConfig cfg = micro_extractor();
  RngStream rng(10, RngStream::Stream::kParams);
  DurationExtractor ext(cfg, rng);
  RngStream drop(10, RngStream::Stream::kDropout);
  RngStream data(11, RngStream::Stream::kData);

  std::vector<int> ids{1, 4, 2};
  const int t_frames = 7;
  std::vector<double> fv(static_cast<std::size_t>(t_frames) * 4);
  for (double& v : fv) v = data.uniform(-1, 1);
  Tensor target = Tensor::from({t_frames, 4}, fv);

  auto out = ext.forward_teacher_forced(ids, target, drop, false);
  REQUIRE(out.before.shape() == target.shape());
  REQUIRE(out.after.shape() == target.shape());
  REQUIRE(out.alignment.weights.shape() == Shape{t_frames, 3});
  for (double w : out.alignment.weights.values()) REQUIRE(w >= 0.0);

  // zero output projection -> all predicted frames zero (pre-postnet)
  ParamMap pm;
  ext.collect_params("ext", pm);
  for (auto& [name, t] : pm) {
    if (name == "ext.head.w" || name == "ext.head.b")
      std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  }
  auto out2 = ext.forward_teacher_forced(ids, target, drop, false);
  for (double v : out2.before.values()) REQUIRE(v == 0.0);

  Tensor empty_like = Tensor::zeros({1, 3});
  REQUIRE_THROWS_AS(ext.forward_teacher_forced(ids, empty_like, drop, false), ShapeError);
}

TEST_CASE("durations_from_alignment partitions the decoder steps") {
  // perfectly diagonal alignment: every token gets exactly one frame
  Tensor diag = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto a = AlignmentMatrix::from_weights(diag);
  auto seq = durations_from_alignment(a, 3);
  REQUIRE(seq.frames == std::vector<int>{1, 1, 1});

  // ties break toward the lower index
  Tensor tie = Tensor::from({1, 3}, {0.4, 0.4, 0.2});
  auto at = AlignmentMatrix::from_weights(tie);
  REQUIRE(at.argmax == std::vector<int>{0});
}

TEST_CASE("extracted durations always sum to the frame count, even untrained") {
  ExtractorConfig cfg = micro_extractor();
  RngStream rng(12, RngStream::Stream::kParams);
  DurationExtractor ext(cfg, rng);
  RngStream data(13, RngStream::Stream::kData);
  for (int it = 0; it < 10; ++it) {
    const int t_text = data.uniform_int(1, 6);
    const int t_frames = data.uniform_int(1, 12);
    std::vector<int> ids(static_cast<std::size_t>(t_text));
    for (int& id : ids) id = data.uniform_int(0, 10);
    std::vector<double> fv(static_cast<std::size_t>(t_frames) * 4);
    for (double& v : fv) v = data.uniform(-1, 1);
    DurationSeq seq = ext.extract_durations(ids, Tensor::from({t_frames, 4}, fv));
    REQUIRE(std::accumulate(seq.frames.begin(), seq.frames.end(), 0) == t_frames);
    for (int f : seq.frames) REQUIRE(f >= 0);
  }
}

TEST_CASE("micro duration predictor and gmm step gradcheck at 1e-4") {
  EncoderConfig ecfg = micro_encoder();
  RngStream rng(14, RngStream::Stream::kParams);
  DenseFuseEncoder enc(ecfg, rng);
  DurationPredictorConfig dcfg;
  dcfg.conv_dim = 8;
  dcfg.rnn_dim = 4;
  dcfg.dropout_p = 0.0;
  DurationPredictor pred(ecfg.d_model, dcfg, rng);
  RngStream drop(14, RngStream::Stream::kDropout);
  HiddenTextRepr h = enc.encode({2, 5, 7}, drop, false);

  ParamMap pm;
  pred.collect_params("dur", pm);
  auto res = gradcheck(
      [&] {
        RngStream d2(1, RngStream::Stream::kDropout);
        return random_projection_loss(pred.predict(h, d2, false));
      },
      pm);
  CAPTURE(res.worst_param);
  REQUIRE(res.max_rel_err <= 1e-4);

  GmmAttention att(5, 2, 0.05, rng);
  RngStream data(15, RngStream::Stream::kData);
  Tensor enc_outs = Tensor::from({4, 8}, [&] {
    std::vector<double> v(32);
    for (double& x : v) x = data.uniform(-1, 1);
    return v;
  }());
  Tensor ds = Tensor::from({1, 5}, {0.3, -0.4, 0.8, 0.1, -0.2});
  ds.set_requires_grad(true);
  ParamMap pm2{{"decoder_state", ds}};
  att.collect_params("att", pm2);
  auto res2 = gradcheck(
      [&] {
        auto [w, ctx, st] = att.step(ds, enc_outs, GmmAttentionState::initial(2));
        return random_projection_loss(concat_cols(w, ctx), 1);
      },
      pm2);
  CAPTURE(res2.worst_param);
  REQUIRE(res2.max_rel_err <= 1e-4);
}
