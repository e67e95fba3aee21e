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

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nartts/ops.hpp"
#include "nartts/rng.hpp"
#include "nartts/tensor.hpp"

namespace nartts {

// Named parameter registry. Order is construction order; the checkpoint
// writer canonicalizes by name.
using ParamMap = std::vector<std::pair<std::string, Tensor>>;

namespace init {

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, int fan_in, int fan_out, RngStream& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  const auto n = shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.uniform(-a, a);
  Tensor t = Tensor::from(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

inline Tensor zeros_param(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

inline Tensor ones_param(Shape shape) {
  Tensor t = Tensor::full(std::move(shape), 1.0);
  t.set_requires_grad(true);
  return t;
}

}  // namespace init

// ---------------------------------------------------------------------------

class Linear {
 public:
  Linear() = default;
  Linear(int in_dim, int out_dim, RngStream& rng, bool bias = true)
      : w_(init::glorot_uniform({in_dim, out_dim}, in_dim, out_dim, rng)),
        has_bias_(bias) {
    if (bias) b_ = init::zeros_param({out_dim});
  }

  Tensor forward(const Tensor& x) const {
    Tensor y = matmul(x, w_);
    return has_bias_ ? add_bias(y, b_) : y;
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    pm.emplace_back(prefix + ".w", w_);
    if (has_bias_) pm.emplace_back(prefix + ".b", b_);
  }

  Tensor& weight() { return w_; }
  Tensor& bias() { return b_; }

 private:
  Tensor w_, b_;
  bool has_bias_ = true;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int dim, double eps = 1e-5)
      : gamma_(init::ones_param({dim})), beta_(init::zeros_param({dim})), eps_(eps) {}

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma_, beta_, eps_); }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    pm.emplace_back(prefix + ".gamma", gamma_);
    pm.emplace_back(prefix + ".beta", beta_);
  }

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }

 private:
  Tensor gamma_, beta_;
  double eps_ = 1e-5;
};

class Conv1dSame {
 public:
  Conv1dSame() = default;
  Conv1dSame(int kernel, int c_in, int c_out, RngStream& rng)
      : w_(init::glorot_uniform({kernel, c_in, c_out}, kernel * c_in, kernel * c_out, rng)),
        b_(init::zeros_param({c_out})) {}

  Tensor forward(const Tensor& x) const { return conv1d_same(x, w_, b_); }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    pm.emplace_back(prefix + ".w", w_);
    pm.emplace_back(prefix + ".b", b_);
  }

  Tensor& weight() { return w_; }
  Tensor& bias() { return b_; }

 private:
  Tensor w_, b_;
};

// 1-D conv with possibly even kernel; pads like a framework 'same' conv
// (extra zero on the right when the kernel is even). Used by the conv bank.
class Conv1dBank {
 public:
  Conv1dBank() = default;
  Conv1dBank(int kernel, int c_in, int c_out, RngStream& rng)
      : kernel_(kernel),
        w_(init::glorot_uniform({kernel, c_in, c_out}, kernel * c_in, kernel * c_out, rng)),
        b_(init::zeros_param({c_out})) {}

  Tensor forward(const Tensor& x) const {
    const int pad_left = (kernel_ - 1) / 2;
    const int pad_right = kernel_ - 1 - pad_left;
    return conv1d_padded(x, w_, b_, pad_left, pad_right);
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    pm.emplace_back(prefix + ".w", w_);
    pm.emplace_back(prefix + ".b", b_);
  }

 private:
  int kernel_ = 1;
  Tensor w_, b_;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(int vocab, int dim, RngStream& rng)
      : table_(init::glorot_uniform({vocab, dim}, vocab, dim, rng)) {}

  Tensor forward(const std::vector<int>& ids) const { return embedding_lookup(table_, ids); }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    pm.emplace_back(prefix + ".table", table_);
  }

  Tensor& table() { return table_; }

 private:
  Tensor table_;
};

// ---------------------------------------------------------------------------
// Multi-head self-attention (scaled dot product, heads split by column).
// ---------------------------------------------------------------------------

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(int d_model, int n_heads, RngStream& rng)
      : d_model_(d_model), n_heads_(n_heads) {
    if (d_model % n_heads != 0)
      throw ConfigError("attention: d_model " + std::to_string(d_model) +
                        " not divisible by heads " + std::to_string(n_heads));
    wq_ = Linear(d_model, d_model, rng);
    wk_ = Linear(d_model, d_model, rng);
    wv_ = Linear(d_model, d_model, rng);
    wo_ = Linear(d_model, d_model, rng);
  }

  Tensor forward(const Tensor& x) const {
    const int dh = d_model_ / n_heads_;
    Tensor q = wq_.forward(x), k = wk_.forward(x), v = wv_.forward(x);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads_));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < n_heads_; ++h) {
      Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
      Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
      Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
      Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
      heads.push_back(matmul(attn, vh));
    }
    return wo_.forward(concat_cols(heads));
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    wq_.collect_params(prefix + ".wq", pm);
    wk_.collect_params(prefix + ".wk", pm);
    wv_.collect_params(prefix + ".wv", pm);
    wo_.collect_params(prefix + ".wo", pm);
  }

 private:
  int d_model_ = 0, n_heads_ = 0;
  Linear wq_, wk_, wv_, wo_;
};

// ---------------------------------------------------------------------------
// Fused GRU over a whole sequence
// ---------------------------------------------------------------------------

// Update/reset-gate recurrence, zero initial state:
//   z_t = sigmoid(x_t Wx[:,0:H]   + h_{t-1} Whzr[:,0:H]   + b[0:H])
//   r_t = sigmoid(x_t Wx[:,H:2H]  + h_{t-1} Whzr[:,H:2H]  + b[H:2H])
//   n_t = tanh(  x_t Wx[:,2H:3H] + (r_t . h_{t-1}) Whn    + b[2H:3H])
//   h_t = (1 - z_t) . n_t + z_t . h_{t-1}
//
// The input projection runs as one GEMM over all steps and the weight
// gradients are accumulated as single GEMMs over the cached step buffers,
// which keeps long sequences off the per-step memory cliff.
class GruLayer {
 public:
  GruLayer() = default;
  GruLayer(int in_dim, int hidden, RngStream& rng)
      : in_dim_(in_dim),
        hidden_(hidden),
        w_x_(init::glorot_uniform({in_dim, 3 * hidden}, in_dim, 3 * hidden, rng)),
        w_h_zr_(init::glorot_uniform({hidden, 2 * hidden}, hidden, 2 * hidden, rng)),
        w_h_n_(init::glorot_uniform({hidden, hidden}, hidden, hidden, rng)),
        b_(init::zeros_param({3 * hidden})) {}

  int hidden() const { return hidden_; }

  Tensor forward(const Tensor& x) const {
    ops_detail::check_rank2(x, "gru");
    if (x.dim(1) != in_dim_)
      throw ShapeError("gru: input width " + std::to_string(x.dim(1)) + " vs expected " +
                       std::to_string(in_dim_));
    const int t_len = x.dim(0), h = hidden_;
    const std::size_t hs = static_cast<std::size_t>(h);

    // Batched input projection plus bias.
    std::vector<double> gx(static_cast<std::size_t>(t_len) * 3 * hs);
    for (int t = 0; t < t_len; ++t)
      for (int j = 0; j < 3 * h; ++j)
        gx[static_cast<std::size_t>(t) * 3 * hs + j] = b_.values()[static_cast<std::size_t>(j)];
    detail::gemm_acc(x.values().data(), w_x_.values().data(), gx.data(), t_len, in_dim_, 3 * h);

    auto cache = std::make_shared<Cache>();
    cache->z.resize(static_cast<std::size_t>(t_len) * hs);
    cache->r.resize(static_cast<std::size_t>(t_len) * hs);
    cache->n.resize(static_cast<std::size_t>(t_len) * hs);

    std::vector<double> out(static_cast<std::size_t>(t_len) * hs);
    std::vector<double> hprev(hs, 0.0), gz(2 * hs), an(hs), rh(hs);
    for (int t = 0; t < t_len; ++t) {
      const double* gxt = gx.data() + static_cast<std::size_t>(t) * 3 * hs;
      std::copy(gxt, gxt + 2 * hs, gz.begin());
      detail::gemm_acc(hprev.data(), w_h_zr_.values().data(), gz.data(), 1, h, 2 * h);
      double* zt = cache->z.data() + static_cast<std::size_t>(t) * hs;
      double* rt = cache->r.data() + static_cast<std::size_t>(t) * hs;
      for (int j = 0; j < h; ++j) {
        zt[j] = 1.0 / (1.0 + std::exp(-gz[static_cast<std::size_t>(j)]));
        rt[j] = 1.0 / (1.0 + std::exp(-gz[hs + static_cast<std::size_t>(j)]));
        rh[static_cast<std::size_t>(j)] = rt[j] * hprev[static_cast<std::size_t>(j)];
      }
      std::copy(gxt + 2 * hs, gxt + 3 * hs, an.begin());
      detail::gemm_acc(rh.data(), w_h_n_.values().data(), an.data(), 1, h, h);
      double* nt = cache->n.data() + static_cast<std::size_t>(t) * hs;
      double* ht = out.data() + static_cast<std::size_t>(t) * hs;
      for (int j = 0; j < h; ++j) {
        nt[j] = std::tanh(an[static_cast<std::size_t>(j)]);
        ht[j] = (1.0 - zt[j]) * nt[j] + zt[j] * hprev[static_cast<std::size_t>(j)];
      }
      std::copy(ht, ht + hs, hprev.begin());
    }
    Tensor y = Tensor::from({t_len, h}, std::move(out));

    if (ops_detail::grad_enabled({&x, &w_x_, &w_h_zr_, &w_h_n_, &b_})) {
      y.set_requires_grad(true);
      auto xd = x.data(), wxd = w_x_.data(), wzrd = w_h_zr_.data(), wnd = w_h_n_.data(),
           bd = b_.data(), od = y.data();
      const int in_dim = in_dim_;
      od->graph_node = Tape::active()->record([xd, wxd, wzrd, wnd, bd, od, cache, t_len, h,
                                               in_dim] {
        if (od->grad.empty()) return;
        const std::size_t hs2 = static_cast<std::size_t>(h);
        // Transposed recurrent weights, once per call, so the per-step
        // back-propagation through h stays a streaming GEMV.
        std::vector<double> wzr_t(static_cast<std::size_t>(2 * h) * hs2);
        detail::transpose_into(wzrd->values.data(), wzr_t.data(), h, 2 * h);
        std::vector<double> wn_t(hs2 * hs2);
        detail::transpose_into(wnd->values.data(), wn_t.data(), h, h);

        std::vector<double> dgx(static_cast<std::size_t>(t_len) * 3 * hs2, 0.0);
        std::vector<double> dh(hs2, 0.0), dzr(2 * hs2), drh(hs2), dnext(hs2);
        for (int t = t_len - 1; t >= 0; --t) {
          const double* g = od->grad.data() + static_cast<std::size_t>(t) * hs2;
          for (int j = 0; j < h; ++j) dh[static_cast<std::size_t>(j)] += g[j];
          const double* zt = cache->z.data() + static_cast<std::size_t>(t) * hs2;
          const double* rt = cache->r.data() + static_cast<std::size_t>(t) * hs2;
          const double* nt = cache->n.data() + static_cast<std::size_t>(t) * hs2;
          const double* hp =
              t > 0 ? od->values.data() + static_cast<std::size_t>(t - 1) * hs2 : nullptr;
          double* dgxt = dgx.data() + static_cast<std::size_t>(t) * 3 * hs2;
          std::fill(drh.begin(), drh.end(), 0.0);
          for (int j = 0; j < h; ++j) {
            const double dhj = dh[static_cast<std::size_t>(j)];
            const double dn = dhj * (1.0 - zt[j]);
            dgxt[2 * h + j] = dn * (1.0 - nt[j] * nt[j]);
            dnext[static_cast<std::size_t>(j)] = dhj * zt[j];
          }
          detail::gemm_acc(dgxt + 2 * h, wn_t.data(), drh.data(), 1, h, h);
          std::fill(dzr.begin(), dzr.end(), 0.0);
          for (int j = 0; j < h; ++j) {
            const double hpj = hp ? hp[j] : 0.0;
            const double dhj = dh[static_cast<std::size_t>(j)];
            const double dz = dhj * (hpj - nt[j]);
            const double dr = drh[static_cast<std::size_t>(j)] * hpj;
            dzr[static_cast<std::size_t>(j)] = dz * zt[j] * (1.0 - zt[j]);
            dzr[hs2 + static_cast<std::size_t>(j)] = dr * rt[j] * (1.0 - rt[j]);
            dnext[static_cast<std::size_t>(j)] += drh[static_cast<std::size_t>(j)] * rt[j];
          }
          std::copy(dzr.begin(), dzr.end(), dgxt);
          detail::gemm_acc(dgxt, wzr_t.data(), dnext.data(), 1, 2 * h, h);
          std::copy(dnext.begin(), dnext.end(), dh.begin());
        }

        if (bd->requires_grad) {
          bd->ensure_grad();
          for (int t = 0; t < t_len; ++t)
            for (int j = 0; j < 3 * h; ++j)
              bd->grad[static_cast<std::size_t>(j)] +=
                  dgx[static_cast<std::size_t>(t) * 3 * hs2 + j];
        }
        if (wxd->requires_grad) {
          wxd->ensure_grad();
          detail::gemm_tn_acc(xd->values.data(), dgx.data(), wxd->grad.data(), t_len, in_dim,
                              3 * h);
        }
        if (xd->requires_grad) {
          xd->ensure_grad();
          detail::gemm_nt_acc(dgx.data(), wxd->values.data(), xd->grad.data(), t_len, in_dim,
                              3 * h);
        }
        // Step-major buffers for the recurrent weight gradients. Row t holds
        // h_{t-1} (zeros at t = 0) and r_t . h_{t-1} respectively.
        if (wzrd->requires_grad || wnd->requires_grad) {
          std::vector<double> hprev_mat(static_cast<std::size_t>(t_len) * hs2, 0.0);
          std::vector<double> rh_mat(static_cast<std::size_t>(t_len) * hs2, 0.0);
          for (int t = 1; t < t_len; ++t) {
            const double* hp = od->values.data() + static_cast<std::size_t>(t - 1) * hs2;
            const double* rt = cache->r.data() + static_cast<std::size_t>(t) * hs2;
            double* hm = hprev_mat.data() + static_cast<std::size_t>(t) * hs2;
            double* rm = rh_mat.data() + static_cast<std::size_t>(t) * hs2;
            for (int j = 0; j < h; ++j) {
              hm[j] = hp[j];
              rm[j] = rt[j] * hp[j];
            }
          }
          std::vector<double> dzr_mat(static_cast<std::size_t>(t_len) * 2 * hs2);
          std::vector<double> dn_mat(static_cast<std::size_t>(t_len) * hs2);
          for (int t = 0; t < t_len; ++t) {
            const double* src = dgx.data() + static_cast<std::size_t>(t) * 3 * hs2;
            std::copy(src, src + 2 * hs2, dzr_mat.data() + static_cast<std::size_t>(t) * 2 * hs2);
            std::copy(src + 2 * hs2, src + 3 * hs2,
                      dn_mat.data() + static_cast<std::size_t>(t) * hs2);
          }
          if (wzrd->requires_grad) {
            wzrd->ensure_grad();
            detail::gemm_tn_acc(hprev_mat.data(), dzr_mat.data(), wzrd->grad.data(), t_len, h,
                                2 * h);
          }
          if (wnd->requires_grad) {
            wnd->ensure_grad();
            detail::gemm_tn_acc(rh_mat.data(), dn_mat.data(), wnd->grad.data(), t_len, h, h);
          }
        }
      });
    }
    return y;
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    pm.emplace_back(prefix + ".w_x", w_x_);
    pm.emplace_back(prefix + ".w_h_zr", w_h_zr_);
    pm.emplace_back(prefix + ".w_h_n", w_h_n_);
    pm.emplace_back(prefix + ".b", b_);
  }

 private:
  struct Cache {
    std::vector<double> z, r, n;
  };

  int in_dim_ = 0, hidden_ = 0;
  Tensor w_x_, w_h_zr_, w_h_n_, b_;
};

// Forward and reversed GRU passes concatenated per step.
class BiGru {
 public:
  BiGru() = default;
  BiGru(int in_dim, int hidden, RngStream& rng)
      : fw_(in_dim, hidden, rng), bw_(in_dim, hidden, rng) {}

  Tensor forward(const Tensor& x) const {
    Tensor f = fw_.forward(x);
    Tensor b = reverse_rows(bw_.forward(reverse_rows(x)));
    return concat_cols(f, b);
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    fw_.collect_params(prefix + ".fw", pm);
    bw_.collect_params(prefix + ".bw", pm);
  }

 private:
  GruLayer fw_, bw_;
};

// Stepwise GRU cell with the same gate math as GruLayer; used where the next
// input depends on the previous output (autoregressive feedback).
class GruCell {
 public:
  GruCell() = default;
  GruCell(int in_dim, int hidden, RngStream& rng)
      : hidden_(hidden),
        w_x_(init::glorot_uniform({in_dim, 3 * hidden}, in_dim, 3 * hidden, rng)),
        w_h_zr_(init::glorot_uniform({hidden, 2 * hidden}, hidden, 2 * hidden, rng)),
        w_h_n_(init::glorot_uniform({hidden, hidden}, hidden, hidden, rng)),
        b_(init::zeros_param({3 * hidden})) {}

  int hidden() const { return hidden_; }
  Tensor initial_state() const { return Tensor::zeros({1, hidden_}); }

  Tensor step(const Tensor& x, const Tensor& h) const {
    Tensor gx = add_bias(matmul(x, w_x_), b_);
    Tensor zr = add(slice_cols(gx, 0, 2 * hidden_), matmul(h, w_h_zr_));
    Tensor z = sigmoid(slice_cols(zr, 0, hidden_));
    Tensor r = sigmoid(slice_cols(zr, hidden_, 2 * hidden_));
    Tensor n = tanh(add(slice_cols(gx, 2 * hidden_, 3 * hidden_), matmul(mul(r, h), w_h_n_)));
    Tensor ones = Tensor::full({1, hidden_}, 1.0);
    return add(mul(sub(ones, z), n), mul(z, h));
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    pm.emplace_back(prefix + ".w_x", w_x_);
    pm.emplace_back(prefix + ".w_h_zr", w_h_zr_);
    pm.emplace_back(prefix + ".w_h_n", w_h_n_);
    pm.emplace_back(prefix + ".b", b_);
  }

 private:
  int hidden_ = 0;
  Tensor w_x_, w_h_zr_, w_h_n_, b_;
};

// ---------------------------------------------------------------------------
// LSTM cell (stepwise; used where attention interleaves with the recurrence)
// ---------------------------------------------------------------------------

class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(int in_dim, int hidden, RngStream& rng)
      : hidden_(hidden),
        w_(init::glorot_uniform({in_dim + hidden, 4 * hidden}, in_dim + hidden, 4 * hidden, rng)),
        b_(init::zeros_param({4 * hidden})) {}

  int hidden() const { return hidden_; }

  Tensor initial_state() const { return Tensor::zeros({1, hidden_}); }

  // Returns (h', c'); gate order [input | forget | candidate | output].
  std::pair<Tensor, Tensor> step(const Tensor& x, const Tensor& h, const Tensor& c) const {
    Tensor gates = add_bias(matmul(concat_cols(x, h), w_), b_);
    Tensor gi = sigmoid(slice_cols(gates, 0, hidden_));
    Tensor gf = sigmoid(slice_cols(gates, hidden_, 2 * hidden_));
    Tensor gg = tanh(slice_cols(gates, 2 * hidden_, 3 * hidden_));
    Tensor go = sigmoid(slice_cols(gates, 3 * hidden_, 4 * hidden_));
    Tensor c_next = add(mul(gf, c), mul(gi, gg));
    Tensor h_next = mul(go, tanh(c_next));
    return {h_next, c_next};
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    pm.emplace_back(prefix + ".w", w_);
    pm.emplace_back(prefix + ".b", b_);
  }

 private:
  int hidden_ = 0;
  Tensor w_, b_;
};

// ---------------------------------------------------------------------------
// Highway layer: y = H(x) . T(x) + x . (1 - T(x))
// ---------------------------------------------------------------------------

class Highway {
 public:
  Highway() = default;
  Highway(int dim, RngStream& rng) : h_(dim, dim, rng), t_(dim, dim, rng) {}

  Tensor forward(const Tensor& x) const {
    Tensor hx = relu(h_.forward(x));
    Tensor tx = sigmoid(t_.forward(x));
    Tensor ones = Tensor::full(x.shape(), 1.0);
    return add(mul(hx, tx), mul(x, sub(ones, tx)));
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    h_.collect_params(prefix + ".h", pm);
    t_.collect_params(prefix + ".t", pm);
  }

 private:
  Linear h_, t_;
};

// ---------------------------------------------------------------------------
// Prenet: per-frame linear + ReLU + dropout. The heavy dropout is the point:
// it keeps a teacher-forced decoder from leaning on the previous frame alone.
// ---------------------------------------------------------------------------

class Prenet {
 public:
  Prenet() = default;
  Prenet(int in_dim, int out_dim, double dropout_p, RngStream& rng)
      : lin_(in_dim, out_dim, rng), p_(dropout_p) {}

  Tensor forward(const Tensor& x, RngStream& dropout_rng, bool training) const {
    return dropout(relu(lin_.forward(x)), p_, dropout_rng, training);
  }

  void collect_params(const std::string& prefix, ParamMap& pm) const {
    lin_.collect_params(prefix + ".lin", pm);
  }

 private:
  Linear lin_;
  double p_ = 0.5;
};

}  // namespace nartts
