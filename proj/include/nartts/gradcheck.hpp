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
#include <functional>
#include <string>
#include <vector>

#include "nartts/nn.hpp"
#include "nartts/tensor.hpp"

namespace nartts {

// Central finite differences against the recorded backward pass. The check
// only ever calls the forward closure, so it is independent of every
// backward rule it verifies.

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Relative error with an absolute floor: |a - n| / max(|a|, |n|, 1).
inline double grad_rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1.0});
  return std::abs(analytic - numeric) / denom;
}

// loss_fn must be a pure function of the checked tensors' current values.
// Analytic gradients are taken from one tape pass; each element is then
// perturbed by +-step and re-evaluated without a tape.
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, ParamMap& checked,
                                 double step = 1e-5) {
  for (auto& [name, t] : checked) t.zero_grad();
  {
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(checked.size());
  for (auto& [name, t] : checked) {
    std::vector<double> g(t.values().size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = t.grad_at(i);
    analytic.push_back(std::move(g));
  }

  GradCheckResult res;
  for (std::size_t p = 0; p < checked.size(); ++p) {
    Tensor& t = checked[p].second;
    auto& values = t.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + step;
      const double up = loss_fn().value();
      values[i] = keep - step;
      const double down = loss_fn().value();
      values[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double rel = grad_rel_err(analytic[p][i], numeric);
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = checked[p].first;
        res.worst_index = i;
      }
    }
  }
  return res;
}

// Deterministic pseudo-random projection used to turn a tensor-valued output
// into a scalar with a generic gradient (a plain sum would make ops that
// preserve row sums look gradient-free).
inline Tensor random_projection_loss(const Tensor& out, std::uint64_t salt = 0) {
  RngStream rng(0xC0FFEE ^ salt, RngStream::Stream::kData);
  std::vector<double> w(out.values().size());
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul(out, Tensor::from(out.shape(), std::move(w))));
}

}  // namespace nartts
