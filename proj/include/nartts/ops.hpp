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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#ifdef NARTTS_USE_OPENBLAS
#include <cblas.h>
#include <cstdlib>
#endif

#include "nartts/error.hpp"
#include "nartts/rng.hpp"
#include "nartts/tensor.hpp"

namespace nartts {

namespace testing_hooks {
// Scales one backward accumulation when set; exists so the gradient checker
// can be exercised against a known-bad backward rule.
inline bool corrupt_matmul_backward = false;
}  // namespace testing_hooks

namespace detail {

// Matrix kernels. Accumulation order per output element is fixed (the hand
// kernels go left-to-right over the contraction index; the BLAS paths use the
// library's fixed blocked order for a given shape), so every run of the same
// build produces bitwise-identical results. Threads always own disjoint
// output ranges.

constexpr std::int64_t kOmpMacThreshold = 1 << 15;

#ifdef NARTTS_USE_OPENBLAS
// Pin the BLAS thread count before its first use; honours a pre-set
// environment value. Calling openblas_set_num_threads here is not an option
// (it crashes under this kernel), hence the env route.
inline void blas_init() {
  static const bool once = [] {
    ::setenv("OPENBLAS_NUM_THREADS", "1", /*overwrite=*/0);
    return true;
  }();
  (void)once;
}
#endif

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_acc_hand(const double* A, const double* B, double* C, int m, int k, int n) {
  const bool par = static_cast<std::int64_t>(m) * k * n > kOmpMacThreshold && n >= 64;
#pragma omp parallel if (par)
  {
#ifdef _OPENMP
    const int nth = par ? omp_get_num_threads() : 1;
    const int tid = par ? omp_get_thread_num() : 0;
#else
    const int nth = 1, tid = 0;
#endif
    const int chunk = (n + nth - 1) / nth;
    const int j0 = std::min(n, tid * chunk);
    const int j1 = std::min(n, j0 + chunk);
    for (int kk = 0; kk < k; ++kk) {
      const double* brow = B + static_cast<std::size_t>(kk) * n;
      for (int i = 0; i < m; ++i) {
        const double a = A[static_cast<std::size_t>(i) * k + kk];
        if (a == 0.0) continue;
        double* crow = C + static_cast<std::size_t>(i) * n;
        for (int j = j0; j < j1; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

inline void gemm_acc(const double* A, const double* B, double* C, int m, int k, int n) {
#ifdef NARTTS_USE_OPENBLAS
  // Row-per-thread streaming beats a BLAS GEMV on the memory-bound m == 1
  // case; everything else goes to the tuned kernels.
  if (m > 1 && static_cast<std::int64_t>(m) * k * n > kOmpMacThreshold) {
    blas_init();
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, A, k, B, n, 1.0, C, n);
    return;
  }
#endif
  gemm_acc_hand(A, B, C, m, k, n);
}

// C[k x n] += A[m x k]^T * B[m x n]; per element the m index ascends.
inline void gemm_tn_acc_hand(const double* A, const double* B, double* C, int m, int k, int n) {
  const bool par = static_cast<std::int64_t>(m) * k * n > kOmpMacThreshold && k >= 2;
#pragma omp parallel if (par)
  {
#ifdef _OPENMP
    const int nth = par ? omp_get_num_threads() : 1;
    const int tid = par ? omp_get_thread_num() : 0;
#else
    const int nth = 1, tid = 0;
#endif
    const int chunk = (k + nth - 1) / nth;
    const int p0 = std::min(k, tid * chunk);
    const int p1 = std::min(k, p0 + chunk);
    for (int p = p0; p < p1; ++p) {
      double* crow = C + static_cast<std::size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        const double a = A[static_cast<std::size_t>(i) * k + p];
        if (a == 0.0) continue;
        const double* brow = B + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

inline void gemm_tn_acc(const double* A, const double* B, double* C, int m, int k, int n) {
#ifdef NARTTS_USE_OPENBLAS
  if (static_cast<std::int64_t>(m) * k * n > kOmpMacThreshold) {
    blas_init();
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, n, m, 1.0, A, k, B, n, 1.0, C, n);
    return;
  }
#endif
  gemm_tn_acc_hand(A, B, C, m, k, n);
}

// Tiled so neither side degenerates into one-element-per-page strides.
inline void transpose_into(const double* src, double* dst, int rows, int cols) {
  constexpr int kTile = 32;
  for (int i0 = 0; i0 < rows; i0 += kTile) {
    const int i1 = std::min(rows, i0 + kTile);
    for (int j0 = 0; j0 < cols; j0 += kTile) {
      const int j1 = std::min(cols, j0 + kTile);
      for (int i = i0; i < i1; ++i)
        for (int j = j0; j < j1; ++j)
          dst[static_cast<std::size_t>(j) * rows + i] =
              src[static_cast<std::size_t>(i) * cols + j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T.
inline void gemm_nt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
#ifdef NARTTS_USE_OPENBLAS
  if (static_cast<std::int64_t>(m) * k * n > kOmpMacThreshold) {
    blas_init();
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, k, n, 1.0, A, n, B, n, 1.0, C, k);
    return;
  }
#endif
  // B is transposed into scratch so the hand kernel still accumulates with
  // the contraction index (n) ascending.
  std::vector<double> bt(static_cast<std::size_t>(n) * k);
  transpose_into(B, bt.data(), k, n);
  gemm_acc_hand(A, bt.data(), C, m, n, k);
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

namespace ops_detail {

inline bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

inline void check_rank2(const Tensor& x, const char* op) {
  if (x.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2, got " + shape_str(x.shape()));
}

}  // namespace ops_detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  ops_detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (ops_detail::grad_enabled({&a, &b})) {
    out.set_requires_grad(true);
    auto ad = a.data(), bd = b.data(), od = out.data();
    od->graph_node = Tape::active()->record([ad, bd, od] {
      if (od->grad.empty()) return;
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  ops_detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (ops_detail::grad_enabled({&a, &b})) {
    out.set_requires_grad(true);
    auto ad = a.data(), bd = b.data(), od = out.data();
    od->graph_node = Tape::active()->record([ad, bd, od] {
      if (od->grad.empty()) return;
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] -= od->grad[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  ops_detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (ops_detail::grad_enabled({&a, &b})) {
    out.set_requires_grad(true);
    auto ad = a.data(), bd = b.data(), od = out.data();
    od->graph_node = Tape::active()->record([ad, bd, od] {
      if (od->grad.empty()) return;
      if (ad->requires_grad) {
        ad->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i] * bd->values[i];
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i] * ad->values[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.values());
  for (double& x : v) x *= c;
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (ops_detail::grad_enabled({&a})) {
    out.set_requires_grad(true);
    auto ad = a.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([ad, od, c] {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += c * od->grad[i];
    });
  }
  return out;
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = x > 0.0 ? x : 0.0;
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (ops_detail::grad_enabled({&a})) {
    out.set_requires_grad(true);
    auto ad = a.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([ad, od] {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      for (std::size_t i = 0; i < od->grad.size(); ++i)
        if (ad->values[i] > 0.0) ad->grad[i] += od->grad[i];
    });
  }
  return out;
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = std::tanh(x);
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (ops_detail::grad_enabled({&a})) {
    out.set_requires_grad(true);
    auto ad = a.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([ad, od] {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        const double y = od->values[i];
        ad->grad[i] += od->grad[i] * (1.0 - y * y);
      }
    });
  }
  return out;
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (ops_detail::grad_enabled({&a})) {
    out.set_requires_grad(true);
    auto ad = a.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([ad, od] {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        const double y = od->values[i];
        ad->grad[i] += od->grad[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

inline double softplus_scalar(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Tensor softplus(const Tensor& a) {
  std::vector<double> v(a.values());
  for (double& x : v) x = softplus_scalar(x);
  Tensor out = Tensor::from(a.shape(), std::move(v));
  if (ops_detail::grad_enabled({&a})) {
    out.set_requires_grad(true);
    auto ad = a.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([ad, od] {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      for (std::size_t i = 0; i < od->grad.size(); ++i)
        ad->grad[i] += od->grad[i] / (1.0 + std::exp(-ad->values[i]));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  ops_detail::check_rank2(a, "matmul");
  ops_detail::check_rank2(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents of " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not match");
  }
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  detail::gemm_acc(a.values().data(), b.values().data(), v.data(), m, k, n);
  Tensor out = Tensor::from({m, n}, std::move(v));
  if (ops_detail::grad_enabled({&a, &b})) {
    out.set_requires_grad(true);
    auto ad = a.data(), bd = b.data(), od = out.data();
    od->graph_node = Tape::active()->record([ad, bd, od, m, k, n] {
      if (od->grad.empty()) return;
      if (ad->requires_grad) {
        ad->ensure_grad();
        detail::gemm_nt_acc(od->grad.data(), bd->values.data(), ad->grad.data(), m, k, n);
        if (testing_hooks::corrupt_matmul_backward)
          for (double& g : ad->grad) g *= 1.001;
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        detail::gemm_tn_acc(ad->values.data(), od->grad.data(), bd->grad.data(), m, k, n);
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  ops_detail::check_rank2(a, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  detail::transpose_into(a.values().data(), v.data(), m, n);
  Tensor out = Tensor::from({n, m}, std::move(v));
  if (ops_detail::grad_enabled({&a})) {
    out.set_requires_grad(true);
    auto ad = a.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([ad, od, m, n] {
      if (od->grad.empty()) return;
      ad->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
          ad->grad[static_cast<std::size_t>(j) * n + i] +=
              od->grad[static_cast<std::size_t>(i) * m + j];
    });
  }
  return out;
}

// x [m x n] plus a per-column bias b [n].
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  ops_detail::check_rank2(x, "add_bias");
  if (b.rank() != 1 || b.dim(0) != x.dim(1)) {
    throw ShapeError("add_bias: bias " + shape_str(b.shape()) + " does not match columns of " +
                     shape_str(x.shape()));
  }
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> v(x.values());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] += b.values()[j];
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (ops_detail::grad_enabled({&x, &b})) {
    out.set_requires_grad(true);
    auto xd = x.data(), bd = b.data(), od = out.data();
    od->graph_node = Tape::active()->record([xd, bd, od, m, n] {
      if (od->grad.empty()) return;
      if (xd->requires_grad) {
        xd->ensure_grad();
        for (std::size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i];
      }
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            bd->grad[j] += od->grad[static_cast<std::size_t>(i) * n + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row-structured ops
// ---------------------------------------------------------------------------

inline Tensor softmax_rows(const Tensor& x) {
  ops_detail::check_rank2(x, "softmax_rows");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const double* row = x.values().data() + static_cast<std::size_t>(i) * n;
    double mx = row[0];
    for (int j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input at row " + std::to_string(i));
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    double* orow = v.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (ops_detail::grad_enabled({&x})) {
    out.set_requires_grad(true);
    auto xd = x.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([xd, od, m, n] {
      if (od->grad.empty()) return;
      xd->ensure_grad();
      for (int i = 0; i < m; ++i) {
        const double* y = od->values.data() + static_cast<std::size_t>(i) * n;
        const double* g = od->grad.data() + static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += g[j] * y[j];
        double* dx = xd->grad.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) dx[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  ops_detail::check_rank2(x, "layer_norm");
  const int m = x.dim(0), n = x.dim(1);
  if (gamma.rank() != 1 || gamma.dim(0) != n || beta.rank() != 1 || beta.dim(0) != n) {
    throw ShapeError("layer_norm: gamma/beta must be rank-1 of width " + std::to_string(n));
  }
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  auto mean = std::make_shared<std::vector<double>>(m);
  auto rstd = std::make_shared<std::vector<double>>(m);
  for (int i = 0; i < m; ++i) {
    const double* row = x.values().data() + static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    const double rs = 1.0 / std::sqrt(var + eps);
    (*mean)[i] = mu;
    (*rstd)[i] = rs;
    double* orow = v.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = (row[j] - mu) * rs * gamma.values()[j] + beta.values()[j];
  }
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (ops_detail::grad_enabled({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xd = x.data(), gd = gamma.data(), bd = beta.data(), od = out.data();
    od->graph_node = Tape::active()->record([xd, gd, bd, od, mean, rstd, m, n] {
      if (od->grad.empty()) return;
      std::vector<double> xhat(static_cast<std::size_t>(n));
      for (int i = 0; i < m; ++i) {
        const double* row = xd->values.data() + static_cast<std::size_t>(i) * n;
        const double* g = od->grad.data() + static_cast<std::size_t>(i) * n;
        const double mu = (*mean)[i], rs = (*rstd)[i];
        for (int j = 0; j < n; ++j) xhat[static_cast<std::size_t>(j)] = (row[j] - mu) * rs;
        if (bd->requires_grad) {
          bd->ensure_grad();
          for (int j = 0; j < n; ++j) bd->grad[j] += g[j];
        }
        if (gd->requires_grad) {
          gd->ensure_grad();
          for (int j = 0; j < n; ++j) gd->grad[j] += g[j] * xhat[static_cast<std::size_t>(j)];
        }
        if (xd->requires_grad) {
          xd->ensure_grad();
          double m1 = 0.0, m2 = 0.0;
          std::vector<double> h(static_cast<std::size_t>(n));
          for (int j = 0; j < n; ++j) {
            h[static_cast<std::size_t>(j)] = g[j] * gd->values[j];
            m1 += h[static_cast<std::size_t>(j)];
            m2 += h[static_cast<std::size_t>(j)] * xhat[static_cast<std::size_t>(j)];
          }
          m1 /= n;
          m2 /= n;
          double* dx = xd->grad.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j)
            dx[j] += rs * (h[static_cast<std::size_t>(j)] - m1 -
                           xhat[static_cast<std::size_t>(j)] * m2);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution over the time axis
// ---------------------------------------------------------------------------

// 1-D convolution of x [T x C_in] with w [k x C_in x C_out] and bias [C_out],
// explicit zero padding. Positions beyond the sequence count as zeros.
inline Tensor conv1d_padded(const Tensor& x, const Tensor& w, const Tensor& b, int pad_left,
                            int pad_right) {
  ops_detail::check_rank2(x, "conv1d");
  if (w.rank() != 3) throw ShapeError("conv1d: weights must be rank-3 [k x C_in x C_out]");
  const int t_len = x.dim(0), c_in = x.dim(1);
  const int k = w.dim(0), c_out = w.dim(2);
  if (w.dim(1) != c_in) {
    throw ShapeError("conv1d: weight C_in " + std::to_string(w.dim(1)) + " vs input " +
                     std::to_string(c_in));
  }
  if (b.rank() != 1 || b.dim(0) != c_out) throw ShapeError("conv1d: bias must be [C_out]");
  const int t_out = t_len + pad_left + pad_right - k + 1;
  if (t_out < 1) throw ShapeError("conv1d: output length would be < 1");

  // im2col: rows are output positions, columns (tap, channel) pairs. The
  // flattened weight [k*C_in x C_out] matches this layout directly.
  const int kc = k * c_in;
  auto patches = std::make_shared<std::vector<double>>(static_cast<std::size_t>(t_out) * kc, 0.0);
  for (int t = 0; t < t_out; ++t) {
    double* prow = patches->data() + static_cast<std::size_t>(t) * kc;
    for (int tap = 0; tap < k; ++tap) {
      const int src = t + tap - pad_left;
      if (src < 0 || src >= t_len) continue;
      const double* xrow = x.values().data() + static_cast<std::size_t>(src) * c_in;
      for (int c = 0; c < c_in; ++c) prow[tap * c_in + c] = xrow[c];
    }
  }
  std::vector<double> v(static_cast<std::size_t>(t_out) * c_out);
  for (int t = 0; t < t_out; ++t)
    for (int j = 0; j < c_out; ++j) v[static_cast<std::size_t>(t) * c_out + j] = b.values()[j];
  detail::gemm_acc(patches->data(), w.values().data(), v.data(), t_out, kc, c_out);
  Tensor out = Tensor::from({t_out, c_out}, std::move(v));

  if (ops_detail::grad_enabled({&x, &w, &b})) {
    out.set_requires_grad(true);
    auto xd = x.data(), wd = w.data(), bd = b.data(), od = out.data();
    od->graph_node = Tape::active()->record([xd, wd, bd, od, patches, t_out, t_len, c_in, c_out, k,
                                             kc, pad_left] {
      if (od->grad.empty()) return;
      if (bd->requires_grad) {
        bd->ensure_grad();
        for (int t = 0; t < t_out; ++t)
          for (int j = 0; j < c_out; ++j)
            bd->grad[j] += od->grad[static_cast<std::size_t>(t) * c_out + j];
      }
      if (wd->requires_grad) {
        wd->ensure_grad();
        detail::gemm_tn_acc(patches->data(), od->grad.data(), wd->grad.data(), t_out, kc, c_out);
      }
      if (xd->requires_grad) {
        xd->ensure_grad();
        std::vector<double> dpatch(static_cast<std::size_t>(t_out) * kc, 0.0);
        detail::gemm_nt_acc(od->grad.data(), wd->values.data(), dpatch.data(), t_out, kc, c_out);
        for (int t = 0; t < t_out; ++t) {
          const double* prow = dpatch.data() + static_cast<std::size_t>(t) * kc;
          for (int tap = 0; tap < k; ++tap) {
            const int src = t + tap - pad_left;
            if (src < 0 || src >= t_len) continue;
            double* dx = xd->grad.data() + static_cast<std::size_t>(src) * c_in;
            for (int c = 0; c < c_in; ++c) dx[c] += prow[tap * c_in + c];
          }
        }
      }
    });
  }
  return out;
}

// Same-length convolution; requires an odd kernel so the padding is symmetric.
inline Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 3) throw ShapeError("conv1d_same: weights must be rank-3 [k x C_in x C_out]");
  const int k = w.dim(0);
  if (k % 2 == 0) {
    throw ConfigError("conv1d_same: kernel size " + std::to_string(k) + " must be odd");
  }
  return conv1d_padded(x, w, b, (k - 1) / 2, (k - 1) / 2);
}

// Max over {t, t+1} per position (width 2, stride 1, same length; the last
// position sees only itself).
inline Tensor maxpool_time2(const Tensor& x) {
  ops_detail::check_rank2(x, "maxpool_time2");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  auto pick = std::make_shared<std::vector<int>>(static_cast<std::size_t>(m) * n);
  for (int t = 0; t < m; ++t) {
    const int t2 = std::min(t + 1, m - 1);
    for (int j = 0; j < n; ++j) {
      const double a = x(t, j), c = x(t2, j);
      const bool first = a >= c;  // ties keep the earlier frame
      v[static_cast<std::size_t>(t) * n + j] = first ? a : c;
      (*pick)[static_cast<std::size_t>(t) * n + j] = first ? t : t2;
    }
  }
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (ops_detail::grad_enabled({&x})) {
    out.set_requires_grad(true);
    auto xd = x.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([xd, od, pick, m, n] {
      if (od->grad.empty()) return;
      xd->ensure_grad();
      for (int t = 0; t < m; ++t)
        for (int j = 0; j < n; ++j)
          xd->grad[static_cast<std::size_t>((*pick)[static_cast<std::size_t>(t) * n + j]) * n + j] +=
              od->grad[static_cast<std::size_t>(t) * n + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const int m = parts[0].dim(0);
  int n = 0;
  for (const Tensor& p : parts) {
    ops_detail::check_rank2(p, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row counts differ");
    n += p.dim(1);
  }
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  int off = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        v[static_cast<std::size_t>(i) * n + off + j] = p(i, j);
    off += w;
  }
  Tensor out = Tensor::from({m, n}, std::move(v));
  bool needs = Tape::active() != nullptr;
  bool any = false;
  if (needs)
    for (const Tensor& p : parts) any = any || p.requires_grad();
  if (needs && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData>> pd;
    pd.reserve(parts.size());
    for (const Tensor& p : parts) pd.push_back(p.data());
    auto od = out.data();
    od->graph_node = Tape::active()->record([pd, od, m, n] {
      if (od->grad.empty()) return;
      int off2 = 0;
      for (const auto& p : pd) {
        const int w = p->shape[1];
        if (p->requires_grad) {
          p->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              p->grad[static_cast<std::size_t>(i) * w + j] +=
                  od->grad[static_cast<std::size_t>(i) * n + off2 + j];
        }
        off2 += w;
      }
    });
  }
  return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) { return concat_cols({a, b}); }

inline Tensor slice_cols(const Tensor& x, int c0, int c1) {
  ops_detail::check_rank2(x, "slice_cols");
  const int m = x.dim(0), n = x.dim(1);
  if (c0 < 0 || c1 > n || c0 >= c1) throw ShapeError("slice_cols: bad range");
  const int w = c1 - c0;
  std::vector<double> v(static_cast<std::size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) v[static_cast<std::size_t>(i) * w + j] = x(i, c0 + j);
  Tensor out = Tensor::from({m, w}, std::move(v));
  if (ops_detail::grad_enabled({&x})) {
    out.set_requires_grad(true);
    auto xd = x.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([xd, od, m, n, w, c0] {
      if (od->grad.empty()) return;
      xd->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          xd->grad[static_cast<std::size_t>(i) * n + c0 + j] +=
              od->grad[static_cast<std::size_t>(i) * w + j];
    });
  }
  return out;
}

inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
  ops_detail::check_rank2(x, "slice_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (r0 < 0 || r1 > m || r0 >= r1) throw ShapeError("slice_rows: bad range");
  const int h = r1 - r0;
  std::vector<double> v(x.values().begin() + static_cast<std::ptrdiff_t>(r0) * n,
                        x.values().begin() + static_cast<std::ptrdiff_t>(r1) * n);
  Tensor out = Tensor::from({h, n}, std::move(v));
  if (ops_detail::grad_enabled({&x})) {
    out.set_requires_grad(true);
    auto xd = x.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([xd, od, r0, n, h] {
      if (od->grad.empty()) return;
      xd->ensure_grad();
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < n; ++j)
          xd->grad[static_cast<std::size_t>(r0 + i) * n + j] +=
              od->grad[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

// Stacks rank-2 pieces with equal widths along the row axis.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const int n = parts[0].dim(1);
  int m = 0;
  for (const Tensor& p : parts) {
    ops_detail::check_rank2(p, "concat_rows");
    if (p.dim(1) != n) throw ShapeError("concat_rows: column counts differ");
    m += p.dim(0);
  }
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m) * n);
  for (const Tensor& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
  Tensor out = Tensor::from({m, n}, std::move(v));
  bool any = false;
  if (Tape::active() != nullptr)
    for (const Tensor& p : parts) any = any || p.requires_grad();
  if (any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData>> pd;
    pd.reserve(parts.size());
    for (const Tensor& p : parts) pd.push_back(p.data());
    auto od = out.data();
    od->graph_node = Tape::active()->record([pd, od] {
      if (od->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& p : pd) {
        const std::size_t cnt = p->values.size();
        if (p->requires_grad) {
          p->ensure_grad();
          for (std::size_t i = 0; i < cnt; ++i) p->grad[i] += od->grad[off + i];
        }
        off += cnt;
      }
    });
  }
  return out;
}

// Same storage, new shape (element count must match).
inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor out = Tensor::from(std::move(shape), x.values());
  if (ops_detail::grad_enabled({&x})) {
    out.set_requires_grad(true);
    auto xd = x.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([xd, od] {
      if (od->grad.empty()) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i];
    });
  }
  return out;
}

inline Tensor reverse_rows(const Tensor& x) {
  ops_detail::check_rank2(x, "reverse_rows");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> v(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] = x(m - 1 - i, j);
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (ops_detail::grad_enabled({&x})) {
    out.set_requires_grad(true);
    auto xd = x.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([xd, od, m, n] {
      if (od->grad.empty()) return;
      xd->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          xd->grad[static_cast<std::size_t>(m - 1 - i) * n + j] +=
              od->grad[static_cast<std::size_t>(i) * n + j];
    });
  }
  return out;
}

// Embedding lookup: row i of the output is table[ids[i]].
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  ops_detail::check_rank2(table, "embedding_lookup");
  if (ids.empty()) throw ContractError("embedding_lookup: empty id sequence");
  const int vocab = table.dim(0), d = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw VocabError("token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                       " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  const int t_len = static_cast<int>(ids.size());
  std::vector<double> v(static_cast<std::size_t>(t_len) * d);
  for (int t = 0; t < t_len; ++t) {
    const double* row = table.values().data() + static_cast<std::size_t>(ids[t]) * d;
    std::copy(row, row + d, v.data() + static_cast<std::size_t>(t) * d);
  }
  Tensor out = Tensor::from({t_len, d}, std::move(v));
  if (ops_detail::grad_enabled({&table})) {
    out.set_requires_grad(true);
    auto td = table.data();
    auto od = out.data();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    od->graph_node = Tape::active()->record([td, od, ids_copy, d] {
      if (od->grad.empty()) return;
      td->ensure_grad();
      for (std::size_t t = 0; t < ids_copy->size(); ++t) {
        double* drow = td->grad.data() + static_cast<std::size_t>((*ids_copy)[t]) * d;
        const double* g = od->grad.data() + t * d;
        for (int j = 0; j < d; ++j) drow[j] += g[j];
      }
    });
  }
  return out;
}

// Repeats row i counts[i] times, in order. The backbone of the length
// regulator; rows with count 0 are dropped.
inline Tensor repeat_rows(const Tensor& x, const std::vector<int>& counts) {
  ops_detail::check_rank2(x, "repeat_rows");
  if (static_cast<int>(counts.size()) != x.dim(0)) {
    throw ShapeError("repeat_rows: counts length " + std::to_string(counts.size()) +
                     " vs rows " + std::to_string(x.dim(0)));
  }
  std::int64_t total = 0;
  for (int c : counts) {
    if (c < 0) throw ContractError("repeat_rows: negative count");
    total += c;
  }
  if (total < 1) throw ContractError("repeat_rows: total repeat count is zero");
  const int n = x.dim(1);
  std::vector<double> v(static_cast<std::size_t>(total) * n);
  std::size_t r = 0;
  for (int i = 0; i < x.dim(0); ++i) {
    const double* row = x.values().data() + static_cast<std::size_t>(i) * n;
    for (int c = 0; c < counts[static_cast<std::size_t>(i)]; ++c, ++r)
      std::copy(row, row + n, v.data() + r * n);
  }
  Tensor out = Tensor::from({static_cast<int>(total), n}, std::move(v));
  if (ops_detail::grad_enabled({&x})) {
    out.set_requires_grad(true);
    auto xd = x.data();
    auto od = out.data();
    auto counts_copy = std::make_shared<std::vector<int>>(counts);
    od->graph_node = Tape::active()->record([xd, od, counts_copy, n] {
      if (od->grad.empty()) return;
      xd->ensure_grad();
      std::size_t r2 = 0;
      for (std::size_t i = 0; i < counts_copy->size(); ++i) {
        double* dx = xd->grad.data() + i * n;
        for (int c = 0; c < (*counts_copy)[i]; ++c, ++r2) {
          const double* g = od->grad.data() + r2 * n;
          for (int j = 0; j < n; ++j) dx[j] += g[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (ops_detail::grad_enabled({&x})) {
    out.set_requires_grad(true);
    auto xd = x.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([xd, od] {
      if (od->grad.empty()) return;
      xd->ensure_grad();
      const double g = od->grad[0];
      for (double& d : xd->grad) d += g;
    });
  }
  return out;
}

// Mean absolute difference over all elements. The subgradient at zero is 0.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  ops_detail::check_same_shape(pred, target, "l1_loss");
  const std::size_t n = pred.values().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(pred.values()[i] - target.values()[i]);
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  if (ops_detail::grad_enabled({&pred, &target})) {
    out.set_requires_grad(true);
    auto pd = pred.data(), td = target.data(), od = out.data();
    od->graph_node = Tape::active()->record([pd, td, od, n] {
      if (od->grad.empty()) return;
      const double g = od->grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double diff = pd->values[i] - td->values[i];
        const double s2 = diff > 0.0 ? g : (diff < 0.0 ? -g : 0.0);
        if (pd->requires_grad) {
          pd->ensure_grad();
          pd->grad[i] += s2;
        }
        if (td->requires_grad) {
          td->ensure_grad();
          td->grad[i] -= s2;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

// Inverted dropout: in training, elements are zeroed with probability p and
// survivors scaled by 1/(1-p). In eval mode (or p == 0) the input is returned
// unchanged and the stream is not advanced.
inline Tensor dropout(const Tensor& x, double p, RngStream& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const std::size_t n = x.values().size();
  auto mask = std::make_shared<std::vector<double>>(n);
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < n; ++i) (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = x.values()[i] * (*mask)[i];
  Tensor out = Tensor::from(x.shape(), std::move(v));
  if (ops_detail::grad_enabled({&x})) {
    out.set_requires_grad(true);
    auto xd = x.data();
    auto od = out.data();
    od->graph_node = Tape::active()->record([xd, od, mask] {
      if (od->grad.empty()) return;
      xd->ensure_grad();
      for (std::size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian mixture over token positions
// ---------------------------------------------------------------------------

// weights[j] = sum_m w[m] * N(j; mu[m], sigma[m]) for j = 0..n_pos-1, with
// normalized Gaussian densities. All inputs are [1 x M] rows.
inline Tensor gaussian_mixture_weights(const Tensor& w, const Tensor& mu, const Tensor& sigma,
                                       int n_pos) {
  ops_detail::check_rank2(w, "gaussian_mixture_weights");
  ops_detail::check_same_shape(w, mu, "gaussian_mixture_weights");
  ops_detail::check_same_shape(w, sigma, "gaussian_mixture_weights");
  if (w.dim(0) != 1) throw ShapeError("gaussian_mixture_weights: inputs must be [1 x M] rows");
  if (n_pos < 1) throw ContractError("gaussian_mixture_weights: need at least one position");
  const int m_mix = w.dim(1);
  constexpr double inv_sqrt_2pi = 0.3989422804014327;
  for (int m = 0; m < m_mix; ++m) {
    if (!(sigma(0, m) > 0.0)) throw NumericError("gaussian_mixture_weights: sigma must be positive");
  }
  std::vector<double> v(static_cast<std::size_t>(n_pos), 0.0);
  for (int j = 0; j < n_pos; ++j) {
    double acc = 0.0;
    for (int m = 0; m < m_mix; ++m) {
      const double z = (static_cast<double>(j) - mu(0, m)) / sigma(0, m);
      acc += w(0, m) * inv_sqrt_2pi / sigma(0, m) * std::exp(-0.5 * z * z);
    }
    v[static_cast<std::size_t>(j)] = acc;
  }
  Tensor out = Tensor::from({1, n_pos}, std::move(v));
  if (ops_detail::grad_enabled({&w, &mu, &sigma})) {
    out.set_requires_grad(true);
    auto wd = w.data(), md = mu.data(), sd = sigma.data(), od = out.data();
    od->graph_node = Tape::active()->record([wd, md, sd, od, n_pos, m_mix] {
      if (od->grad.empty()) return;
      if (wd->requires_grad) wd->ensure_grad();
      if (md->requires_grad) md->ensure_grad();
      if (sd->requires_grad) sd->ensure_grad();
      for (int m = 0; m < m_mix; ++m) {
        const double wm = wd->values[static_cast<std::size_t>(m)];
        const double mum = md->values[static_cast<std::size_t>(m)];
        const double sm = sd->values[static_cast<std::size_t>(m)];
        double dw = 0.0, dmu = 0.0, dsig = 0.0;
        for (int j = 0; j < n_pos; ++j) {
          const double g = od->grad[static_cast<std::size_t>(j)];
          if (g == 0.0) continue;
          const double diff = static_cast<double>(j) - mum;
          const double z = diff / sm;
          const double phi = inv_sqrt_2pi / sm * std::exp(-0.5 * z * z);
          dw += g * phi;
          dmu += g * wm * phi * diff / (sm * sm);
          dsig += g * wm * phi * (diff * diff / (sm * sm * sm) - 1.0 / sm);
        }
        if (wd->requires_grad) wd->grad[static_cast<std::size_t>(m)] += dw;
        if (md->requires_grad) md->grad[static_cast<std::size_t>(m)] += dmu;
        if (sd->requires_grad) sd->grad[static_cast<std::size_t>(m)] += dsig;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Non-differentiable helpers
// ---------------------------------------------------------------------------

// First index of the row maximum (ties resolve to the lower index).
inline int argmax_row(const Tensor& x, int row) {
  const int n = x.dim(1);
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (x(row, j) > x(row, best)) best = j;
  return best;
}

}  // namespace nartts
