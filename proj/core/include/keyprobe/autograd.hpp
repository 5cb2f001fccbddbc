// Copyright 2026 The keyprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "keyprobe/tensor.hpp"

namespace keyprobe {

// A trainable tensor and its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    grad.fill(T(0));
    has_grad = false;
  }
};

template <typename T>
class Tape;

// Handle to a node recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Tensor<T>& grad() const { return tape->grad(id); }
};

// Records forward operations and replays them in reverse for gradients.
// A tape is single-use: backward() consumes it.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Input that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  // Read-only view of a tensor owned elsewhere; never receives a gradient.
  Var<T> constant_view(const Tensor<T>& value);
  // Input whose gradient is kept on the tape (readable via Var::grad).
  Var<T> variable(Tensor<T> value);
  // Parameter leaf; backward() adds into p.grad. The parameter must outlive
  // the tape and must not be modified while it is in use.
  Var<T> parameter(Parameter<T>& p);

  // Gradients of a scalar loss with respect to every recorded input.
  void backward(Var<T> loss);

  const Tensor<T>& value(std::size_t id) const;
  const Tensor<T>& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  // Op plumbing. `record` rejects non-finite outputs, naming the op.
  Var<T> record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs,
                BackwardFn backward);
  // Gradient buffer of node `id`, zero-initialised on first use.
  Tensor<T>& grad_buffer(std::size_t id);
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  void check_open() const;

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// Forward ops. Rank-1 tensors act as 1 x n row vectors.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
// Same shape, or `b` a single row broadcast over the rows of `a`.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> gelu(Var<T> a);
// axis 1 normalises each row, axis 0 each column.
template <typename T> Var<T> softmax(Var<T> a, int axis = 1);
// Per-row normalisation without affine terms.
template <typename T> Var<T> layer_norm(Var<T> a, T eps = T(1e-5));
template <typename T> Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, T eps = T(1e-5));
// Inverted dropout: survivors are scaled by 1 / (1 - p). Identity when
// `training` is false or p == 0. The mask is a pure function of `seed`.
template <typename T> Var<T> dropout(Var<T> a, double p, std::uint64_t seed, bool training);
// Mean over rows (axis 0 -> 1 x cols) or over columns (axis 1 -> rows x 1).
template <typename T> Var<T> mean_pool(Var<T> a, int axis = 0);
// Row means of consecutive row blocks; offsets = {0, e1, e2, ..., rows}.
template <typename T> Var<T> segment_mean(Var<T> a, const std::vector<std::size_t>& offsets);
// Multi-head softmax(QK^T / sqrt(d_head)) V, restricted to row blocks given
// by `offsets` (empty = one block). Q, K, V are [rows x dim].
template <typename T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v, int heads = 1,
                            const std::vector<std::size_t>& offsets = {});
// Mean over rows of -sum_c target_c * log softmax(logits)_c.
template <typename T> Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& targets);
// Contrastive loss over 2N rows paired as (0,1), (2,3), ...
template <typename T> Var<T> ntxent(Var<T> z, T temperature);

// x W + b, with W [in x out] and b [out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  return add(matmul(x, weight), bias);
}

}  // namespace keyprobe
