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

#include "nartts/error.hpp"
#include "nartts/nn.hpp"
#include "nartts/tensor.hpp"

namespace nartts {

struct AdamState {
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-4;
  // Zero-initialized moment buffers, one pair per parameter, in ParamMap order.
  std::vector<std::vector<double>> m, v;
};

// Bias-corrected Adam update over every parameter in the map. Parameters with
// an untouched (empty) grad buffer see a zero gradient. A non-finite gradient
// aborts with the offending parameter's name.
inline void adam_step(ParamMap& params, AdamState& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
      state.m[p].assign(params[p].second.values().size(), 0.0);
      state.v[p].assign(params[p].second.values().size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  state.step += 1;
  const double inv_bc1 = 1.0 / (1.0 - std::pow(state.beta1, static_cast<double>(state.step)));
  const double inv_bc2 = 1.0 / (1.0 - std::pow(state.beta2, static_cast<double>(state.step)));
  const double b1 = state.beta1, b2 = state.beta2, lr = state.lr, eps = state.eps;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].second;
    auto& values = t.mutable_values();
    const auto& grad = t.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != values.size()) {
      throw ContractError("adam_step: moment shape drifted for " + params[p].first);
    }
    if (!grad.empty() && !detail::all_finite(grad)) {
      throw NumericError("adam_step: non-finite gradient in parameter " + params[p].first);
    }
    const double* g = grad.empty() ? nullptr : grad.data();
    double* mv = m.data();
    double* vv = v.data();
    double* pv = values.data();
    const std::int64_t count = static_cast<std::int64_t>(values.size());
    // Elementwise and branch-free: vectorizes, and parallel chunks cannot
    // change any element's result.
#pragma omp parallel for schedule(static) if (count > 16384)
    for (std::int64_t i = 0; i < count; ++i) {
      const double gi = g ? g[i] : 0.0;
      mv[i] = b1 * mv[i] + (1.0 - b1) * gi;
      vv[i] = b2 * vv[i] + (1.0 - b2) * gi * gi;
      pv[i] -= lr * (mv[i] * inv_bc1) / (std::sqrt(vv[i] * inv_bc2) + eps);
    }
  }
}

inline void zero_grads(ParamMap& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

// Global-norm gradient clipping; returns the pre-clip norm.
inline double clip_grad_norm(ParamMap& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : params)
    for (std::size_t i = 0; i < t.grad().size(); ++i) sq += t.grad()[i] * t.grad()[i];
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, t] : params) {
      auto& g = t.data()->grad;
      for (double& x : g) x *= s;
    }
  }
  return norm;
}

}  // namespace nartts
