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

#include "nartts/gradcheck.hpp"
#include "nartts/nn.hpp"

using namespace nartts;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, double scl = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (double& x : v) x = rng.uniform(-scl, scl);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("linear layer forward and gradient") {
  RngStream init(1, RngStream::Stream::kParams);
  Linear lin(4, 3, init);
  RngStream data(2, RngStream::Stream::kData);
  Tensor x = random_tensor({5, 4}, data);
  x.set_requires_grad(true);
  ParamMap pm{{"x", x}};
  lin.collect_params("lin", pm);
  auto res = gradcheck([&] { return random_projection_loss(lin.forward(x)); }, pm);
  CAPTURE(res.worst_param);
  REQUIRE(res.max_rel_err <= 1e-6);
}

TEST_CASE("gru layer: hand-unrolled recurrence oracle") {
  // Two steps with rigged weights, checked against a direct scalar unroll of
  //   z/r = sigmoid(. ), n = tanh(x Wxn + (r.h) Whn), h = (1-z) n + z h.
  RngStream init(3, RngStream::Stream::kParams);
  GruLayer gru(1, 1, init);
  ParamMap pm;
  gru.collect_params("gru", pm);
  const double wxz = 0.3, wxr = -0.2, wxn = 0.5;
  const double whz = 0.4, whr = 0.1, whn = -0.6;
  pm[0].second.mutable_values() = {wxz, wxr, wxn};  // w_x [1 x 3]
  pm[1].second.mutable_values() = {whz, whr};       // w_h_zr [1 x 2]
  pm[2].second.mutable_values() = {whn};            // w_h_n [1 x 1]

  const double x0 = 0.7, x1 = -0.4;
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double h = 0.0;
  std::vector<double> expect;
  for (double xt : {x0, x1}) {
    const double z = sig(xt * wxz + h * whz);
    const double r = sig(xt * wxr + h * whr);
    const double n = std::tanh(xt * wxn + r * h * whn);
    h = (1.0 - z) * n + z * h;
    expect.push_back(h);
  }

  Tensor x = Tensor::from({2, 1}, {x0, x1});
  Tensor y = gru.forward(x);
  REQUIRE(y(0, 0) == Catch::Approx(expect[0]).margin(1e-15));
  REQUIRE(y(1, 0) == Catch::Approx(expect[1]).margin(1e-15));

  // statefulness: changing x0 changes the second output
  Tensor x2 = Tensor::from({2, 1}, {x0 + 1.0, x1});
  REQUIRE(gru.forward(x2)(1, 0) != y(1, 0));
}

TEST_CASE("gru layer gradient matches finite differences") {
  RngStream init(5, RngStream::Stream::kParams);
  GruLayer gru(3, 4, init);
  RngStream data(6, RngStream::Stream::kData);
  Tensor x = random_tensor({6, 3}, data);
  x.set_requires_grad(true);
  ParamMap pm{{"x", x}};
  gru.collect_params("gru", pm);
  auto res = gradcheck([&] { return random_projection_loss(gru.forward(x)); }, pm);
  CAPTURE(res.worst_param, res.worst_index);
  REQUIRE(res.max_rel_err <= 1e-6);
}

TEST_CASE("bidirectional gru sees both directions") {
  RngStream init(7, RngStream::Stream::kParams);
  BiGru bi(2, 3, init);
  RngStream data(8, RngStream::Stream::kData);
  Tensor x = random_tensor({5, 2}, data);
  Tensor y = bi.forward(x);
  REQUIRE(y.dim(0) == 5);
  REQUIRE(y.dim(1) == 6);

  // last token influences the first output row through the reversed pass
  auto xv = x.values();
  xv[4 * 2] += 1.0;
  Tensor x2 = Tensor::from({5, 2}, xv);
  Tensor y2 = bi.forward(x2);
  bool first_row_changed = false;
  for (int j = 0; j < 6; ++j) first_row_changed = first_row_changed || (y2(0, j) != y(0, j));
  REQUIRE(first_row_changed);

  x.set_requires_grad(true);
  ParamMap pm{{"x", x}};
  bi.collect_params("bi", pm);
  auto res = gradcheck([&] { return random_projection_loss(bi.forward(x)); }, pm);
  CAPTURE(res.worst_param);
  REQUIRE(res.max_rel_err <= 1e-6);
}

TEST_CASE("lstm cell gradient matches finite differences") {
  RngStream init(9, RngStream::Stream::kParams);
  LstmCell cell(3, 4, init);
  RngStream data(10, RngStream::Stream::kData);
  Tensor x0 = random_tensor({1, 3}, data);
  Tensor x1 = random_tensor({1, 3}, data);
  x0.set_requires_grad(true);
  x1.set_requires_grad(true);
  ParamMap pm{{"x0", x0}, {"x1", x1}};
  cell.collect_params("cell", pm);
  auto res = gradcheck(
      [&] {
        auto [h1, c1] = cell.step(x0, cell.initial_state(), cell.initial_state());
        auto [h2, c2] = cell.step(x1, h1, c1);
        return random_projection_loss(concat_cols(h2, c2));
      },
      pm);
  CAPTURE(res.worst_param);
  REQUIRE(res.max_rel_err <= 1e-6);
}

TEST_CASE("multi-head self-attention shape and gradient") {
  RngStream init(11, RngStream::Stream::kParams);
  MultiHeadSelfAttention mha(8, 2, init);
  RngStream data(12, RngStream::Stream::kData);
  Tensor x = random_tensor({4, 8}, data);
  REQUIRE(mha.forward(x).shape() == Shape{4, 8});

  x.set_requires_grad(true);
  ParamMap pm{{"x", x}};
  mha.collect_params("mha", pm);
  auto res = gradcheck([&] { return random_projection_loss(mha.forward(x)); }, pm);
  CAPTURE(res.worst_param);
  REQUIRE(res.max_rel_err <= 1e-6);

  REQUIRE_THROWS_AS(MultiHeadSelfAttention(8, 3, init), ConfigError);
}

TEST_CASE("highway layer gradient and pass-through behaviour") {
  RngStream init(13, RngStream::Stream::kParams);
  Highway hw(4, init);
  RngStream data(14, RngStream::Stream::kData);
  Tensor x = random_tensor({3, 4}, data);
  x.set_requires_grad(true);
  ParamMap pm{{"x", x}};
  hw.collect_params("hw", pm);
  auto res = gradcheck([&] { return random_projection_loss(hw.forward(x)); }, pm);
  REQUIRE(res.max_rel_err <= 1e-6);

  // zeroed gates: T(x) = 0.5, H(x) = relu(0) = 0 -> y = x/2
  Highway hz(4, init);
  ParamMap pz;
  hz.collect_params("hz", pz);
  for (auto& [name, t] : pz) std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
  Tensor y = hz.forward(x);
  for (std::size_t i = 0; i < y.values().size(); ++i)
    REQUIRE(y.values()[i] == Catch::Approx(x.values()[i] * 0.5));
}

TEST_CASE("deep composite graph gradcheck at 1e-4") {
  // micro-net: embedding -> conv -> attention block-ish -> gru -> linear
  RngStream init(15, RngStream::Stream::kParams);
  Embedding emb(6, 8, init);
  Conv1dSame conv(3, 8, 8, init);
  MultiHeadSelfAttention mha(8, 2, init);
  LayerNorm ln(8);
  GruLayer gru(8, 5, init);
  Linear head(5, 2, init);
  std::vector<int> ids{1, 4, 2};

  ParamMap pm;
  emb.collect_params("emb", pm);
  conv.collect_params("conv", pm);
  mha.collect_params("mha", pm);
  ln.collect_params("ln", pm);
  gru.collect_params("gru", pm);
  head.collect_params("head", pm);

  auto res = gradcheck(
      [&] {
        Tensor h = emb.forward(ids);
        h = relu(conv.forward(h));
        h = ln.forward(add(h, mha.forward(h)));
        h = gru.forward(h);
        return random_projection_loss(head.forward(h));
      },
      pm);
  CAPTURE(res.worst_param, res.worst_index);
  REQUIRE(res.max_rel_err <= 1e-4);
}
