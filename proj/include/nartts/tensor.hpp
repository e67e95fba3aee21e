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

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nartts/error.hpp"

namespace nartts {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Shared payload of a Tensor. Values are row-major doubles; grad stays empty
// until the first accumulation reaches it.
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  int graph_node = -1;  // index of the producing tape entry; -1 for leaves

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

// Value-semantic handle onto a shared payload. Copying a Tensor aliases the
// underlying buffer; parameters rely on this so the optimizer and the layers
// see the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    for (int d : shape) {
      if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    }
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    return Tensor(std::move(d));
  }

  static Tensor zeros(Shape shape) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  static Tensor full(Shape shape, double v) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return d_->numel(); }

  const std::vector<double>& values() const { return d_->values; }
  std::vector<double>& mutable_values() { return d_->values; }

  double operator()(int i) const { return d_->values[static_cast<std::size_t>(i)]; }
  double operator()(int i, int j) const {
    return d_->values[static_cast<std::size_t>(i) * dim(1) + j];
  }

  // Scalar accessor; backward() and the losses go through this.
  double value() const {
    if (numel() != 1) throw ContractError("value() on non-scalar tensor " + shape_str(shape()));
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  // May be empty if no gradient ever reached this tensor.
  const std::vector<double>& grad() const { return d_->grad; }
  double grad_at(std::size_t i) const { return d_->grad.empty() ? 0.0 : d_->grad[i]; }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }

  const std::shared_ptr<TensorData>& data() const { return d_; }

  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

 private:
  std::shared_ptr<TensorData> d_;
};

// Records one backward closure per differentiable operation, in forward
// (topological) order. One tape per forward/backward pass; entries are
// dropped once backward has run. A tape must never be shared across threads.
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  int record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
    return static_cast<int>(entries_.size()) - 1;
  }

  std::size_t node_count() const { return entries_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays the recorded closures in reverse.
  // Gradients accumulate into leaf buffers; they are not reset here, so
  // successive forward/backward passes add up until zero_grad(). Entries are
  // freed afterwards.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    }
    loss.data()->ensure_grad();
    loss.data()->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  std::vector<std::function<void()>> entries_;
  Tape* prev_;
  inline static thread_local Tape* active_ = nullptr;
};

inline void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (t == nullptr) throw ContractError("backward() called with no active tape");
  t->backward(loss);
}

// Copies the values and severs the graph edge: the result is a leaf with
// requires_grad == false, so no gradient ever crosses it.
inline Tensor stop_gradient(const Tensor& x) {
  return Tensor::from(x.shape(), x.values());
}

}  // namespace nartts
