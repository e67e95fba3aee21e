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

#include "nartts/cbhg.hpp"
#include "nartts/decoder.hpp"
#include "nartts/gradcheck.hpp"

using namespace nartts;

namespace {

DecoderConfig micro_nar() {
  DecoderConfig cfg;
  cfg.rnn_dim = 6;
  cfg.d_feat = 4;
  cfg.d_model = 5;
  cfg.mode = DecoderMode::kNonAutoregressive;
  return cfg;
}

DecoderConfig micro_ar() {
  DecoderConfig cfg = micro_nar();
  cfg.mode = DecoderMode::kAutoregressive;
  cfg.prenet_dim = 3;
  cfg.prenet_dropout = 0.0;
  return cfg;
}

CbhgConfig micro_postnet() {
  CbhgConfig cfg;
  cfg.d_feat = 4;
  cfg.bank_k = 3;
  cfg.bank_channels = 5;
  cfg.proj_dim = 6;
  cfg.highway_dim = 5;
  cfg.highway_layers = 2;
  cfg.rnn_dim = 4;
  return cfg;
}

Tensor random_tensor(Shape shape, RngStream& rng) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("non-autoregressive decode: shape, counters, no target anywhere") {
  RngStream rng(1, RngStream::Stream::kParams);
  AcousticDecoder dec(micro_nar(), rng);
  RngStream data(2, RngStream::Stream::kData);
  Tensor expanded = random_tensor({7, 5}, data);

  dec.reset_counters();
  Tensor out = dec.decode(expanded);
  REQUIRE(out.shape() == Shape{7, 4});
  REQUIRE(dec.counters().recurrence_evals == 7);
  REQUIRE(dec.counters().prenet_evals == 0);
  REQUIRE(dec.counters().feedback_reads == 0);

  // decode is a function of expanded alone: rerunning gives bitwise equality
  Tensor out2 = dec.decode(expanded);
  REQUIRE(out.values() == out2.values());
}

TEST_CASE("decode is stateful across positions") {
  RngStream rng(3, RngStream::Stream::kParams);
  AcousticDecoder dec(micro_nar(), rng);
  RngStream data(4, RngStream::Stream::kData);
  Tensor a = random_tensor({3, 5}, data);
  auto v = a.values();
  v[1 * 5 + 2] += 0.5;  // perturb position 1 only
  Tensor b = Tensor::from({3, 5}, v);
  Tensor ya = dec.decode(a);
  Tensor yb = dec.decode(b);
  bool pos2_differs = false;
  for (int j = 0; j < 4; ++j) pos2_differs = pos2_differs || (ya(2, j) != yb(2, j));
  REQUIRE(pos2_differs);
  // position 0 precedes the edit and must be identical
  for (int j = 0; j < 4; ++j) REQUIRE(ya(0, j) == yb(0, j));
}

TEST_CASE("autoregressive ablation: teacher forcing vs self-feeding diverge") {
  RngStream rng(5, RngStream::Stream::kParams);
  AcousticDecoder dec(micro_ar(), rng);
  RngStream data(6, RngStream::Stream::kData);
  Tensor expanded = random_tensor({6, 5}, data);
  Tensor teacher = random_tensor({6, 4}, data);
  RngStream drop(7, RngStream::Stream::kDropout);

  Tensor train_out = dec.decode_autoregressive(expanded, teacher, drop, true);
  Tensor infer_out = dec.decode_autoregressive(expanded, std::nullopt, drop, false);
  REQUIRE(train_out.shape() == infer_out.shape());
  bool differs = false;
  for (std::size_t i = 0; i < train_out.values().size(); ++i)
    differs = differs || (train_out.values()[i] != infer_out.values()[i]);
  REQUIRE(differs);

  // contract errors
  REQUIRE_THROWS_AS(dec.decode_autoregressive(expanded, std::nullopt, drop, true), ContractError);
  Tensor short_teacher = random_tensor({3, 4}, data);
  REQUIRE_THROWS_AS(dec.decode_autoregressive(expanded, short_teacher, drop, true), ContractError);
  REQUIRE_THROWS_AS(dec.decode(expanded), ContractError);  // wrong mode
}

TEST_CASE("autoregressive counters account for the feedback path") {
  RngStream rng(8, RngStream::Stream::kParams);
  AcousticDecoder dec(micro_ar(), rng);
  RngStream data(9, RngStream::Stream::kData);
  Tensor expanded = random_tensor({5, 5}, data);
  RngStream drop(10, RngStream::Stream::kDropout);
  dec.reset_counters();
  dec.decode_autoregressive(expanded, std::nullopt, drop, false);
  REQUIRE(dec.counters().recurrence_evals == 5);
  REQUIRE(dec.counters().prenet_evals == 5);
  REQUIRE(dec.counters().feedback_reads == 4);  // frames 0..T-2 feed back
}

TEST_CASE("autoregressive decoder with zero weights emits the head bias") {
  RngStream rng(11, RngStream::Stream::kParams);
  AcousticDecoder dec(micro_ar(), rng);
  ParamMap pm;
  dec.collect_params("dec", pm);
  for (auto& [name, t] : pm)
    std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  for (auto& [name, t] : pm) {
    if (name == "dec.head.b") t.mutable_values() = {1.5, -0.5, 0.25, 2.0};
  }
  RngStream data(12, RngStream::Stream::kData);
  Tensor expanded = random_tensor({4, 5}, data);
  RngStream drop(13, RngStream::Stream::kDropout);
  Tensor out = dec.decode_autoregressive(expanded, std::nullopt, drop, false);
  for (int t = 0; t < 4; ++t) {
    REQUIRE(out(t, 0) == 1.5);
    REQUIRE(out(t, 1) == -0.5);
    REQUIRE(out(t, 2) == 0.25);
    REQUIRE(out(t, 3) == 2.0);
  }
}

TEST_CASE("cbhg postnet: residual identity and shape") {
  RngStream rng(14, RngStream::Stream::kParams);
  CbhgPostnet post(micro_postnet(), rng);
  RngStream data(15, RngStream::Stream::kData);
  Tensor before = random_tensor({6, 4}, data);

  Tensor after = post.forward(before);
  REQUIRE(after.shape() == before.shape());

  // zero final linear -> after == before exactly
  ParamMap pm;
  post.collect_params("post", pm);
  for (auto& [name, t] : pm) {
    if (name == "post.out.w" || name == "post.out.b")
      std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  }
  Tensor same = post.forward(before);
  REQUIRE(same.values() == before.values());

  // any length works
  Tensor one = random_tensor({1, 4}, data);
  REQUIRE(post.forward(one).shape() == Shape{1, 4});
}

TEST_CASE("cbhg postnet gradcheck at 1e-4") {
  RngStream rng(16, RngStream::Stream::kParams);
  CbhgPostnet post(micro_postnet(), rng);
  RngStream data(17, RngStream::Stream::kData);
  Tensor before = random_tensor({4, 4}, data);
  before.set_requires_grad(true);
  ParamMap pm{{"before", before}};
  post.collect_params("post", pm);
  auto res = gradcheck([&] { return random_projection_loss(post.forward(before)); }, pm);
  CAPTURE(res.worst_param, res.worst_index);
  REQUIRE(res.max_rel_err <= 1e-4);
}

TEST_CASE("micro decoder gradcheck at 1e-4") {
  RngStream rng(18, RngStream::Stream::kParams);
  AcousticDecoder dec(micro_nar(), rng);
  RngStream data(19, RngStream::Stream::kData);
  Tensor expanded = random_tensor({5, 5}, data);
  expanded.set_requires_grad(true);
  ParamMap pm{{"expanded", expanded}};
  dec.collect_params("dec", pm);
  auto res = gradcheck([&] { return random_projection_loss(dec.decode(expanded)); }, pm);
  CAPTURE(res.worst_param);
  REQUIRE(res.max_rel_err <= 1e-4);

  RngStream rng2(20, RngStream::Stream::kParams);
  AcousticDecoder ar(micro_ar(), rng2);
  Tensor teacher = random_tensor({5, 4}, data);
  ParamMap pm2;
  ar.collect_params("ar", pm2);
  // nudge the zero-initialized biases: the t=0 zero frame would otherwise put
  // the prenet ReLU exactly on its kink, where finite differences are wrong
  for (auto& [name, t] : pm2)
    if (name.ends_with(".b"))
      for (double& v : t.mutable_values()) v = data.uniform(-0.05, 0.05);
  auto res2 = gradcheck(
      [&] {
        RngStream drop(1, RngStream::Stream::kDropout);
        return random_projection_loss(ar.decode_autoregressive(expanded, teacher, drop, true));
      },
      pm2);
  CAPTURE(res2.worst_param);
  REQUIRE(res2.max_rel_err <= 1e-4);
}
