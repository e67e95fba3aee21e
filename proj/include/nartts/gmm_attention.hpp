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

#include <string>
#include <tuple>

#include "nartts/nn.hpp"

namespace nartts {

// Location-based attention: weights over token positions are a mixture of
// normalized Gaussians whose means only ever move forward. Mixture
// parameters come from the decoder state through one linear projection:
//   w     = softmax(omega_hat)
//   delta = softplus(delta_hat)        (> 0, so means advance monotonically)
//   sigma = softplus(sigma_hat) + sigma_min
//   mu'   = mu + delta
struct GmmAttentionState {
  Tensor mu;    // [1 x M], starts at zero
  int step = 0;

  static GmmAttentionState initial(int mixtures) {
    GmmAttentionState s;
    s.mu = Tensor::zeros({1, mixtures});
    return s;
  }
};

class GmmAttention {
 public:
  GmmAttention() = default;
  GmmAttention(int state_dim, int mixtures, double sigma_min, RngStream& rng)
      : mixtures_(mixtures), sigma_min_(sigma_min), proj_(state_dim, 3 * mixtures, rng) {}

  int mixtures() const { return mixtures_; }

  // Returns (weights [1 x T_text], context [1 x d_model], next state).
  std::tuple<Tensor, Tensor, GmmAttentionState> step(const Tensor& decoder_state,
                                                     const Tensor& encoder_outs,
                                                     const GmmAttentionState& state) const {
    const int t_text = encoder_outs.dim(0);
    Tensor p = proj_.forward(decoder_state);
    Tensor w = softmax_rows(slice_cols(p, 0, mixtures_));
    Tensor delta = softplus(slice_cols(p, mixtures_, 2 * mixtures_));
    Tensor sigma = add(softplus(slice_cols(p, 2 * mixtures_, 3 * mixtures_)),
                       Tensor::full({1, mixtures_}, sigma_min_));
    Tensor mu_next = add(state.mu, delta);
    for (int m = 0; m < mixtures_; ++m) {
      if (!std::isfinite(w(0, m)) || !std::isfinite(mu_next(0, m)) || !std::isfinite(sigma(0, m)))
        throw NumericError("gmm attention: non-finite mixture parameter at step " +
                           std::to_string(state.step));
    }
    Tensor weights = gaussian_mixture_weights(w, mu_next, sigma, t_text);
    Tensor context = matmul(weights, encoder_outs);
    GmmAttentionState next;
    next.mu = mu_next;
    next.step = state.step + 1;
    return {weights, context, next};
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    proj_.collect_params(prefix + ".proj", pm);
  }

 private:
  int mixtures_ = 5;
  double sigma_min_ = 0.05;
  Linear proj_;
};

}  // namespace nartts
