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

#include "keyprobe/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace keyprobe {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b, const char* op) {
  require(a.tape != nullptr && a.tape == b.tape,
          std::string(op) + ": operands live on different tapes");
  return *a.tape;
}

// Counter-based uniform in [0, 1) so dropout masks need no RNG state.
double hash_uniform(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * (1.0 / 9007199254740992.0);
}

std::vector<std::size_t> normalise_offsets(const std::vector<std::size_t>& offsets,
                                           std::size_t rows, const char* op) {
  if (offsets.empty()) return {0, rows};
  require(offsets.size() >= 2 && offsets.front() == 0 && offsets.back() == rows,
          std::string(op) + ": offsets must start at 0 and end at the row count");
  for (std::size_t i = 1; i < offsets.size(); ++i) {
    require(offsets[i] > offsets[i - 1], std::string(op) + ": empty or decreasing segment");
  }
  return offsets;
}

}  // namespace

template <typename T>
void Tape<T>::check_open() const {
  if (consumed_) throw UsageError("tape already consumed by backward(); record a new one");
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::vector<std::size_t> inputs,
                       BackwardFn backward) {
  check_open();
  if (!value.all_finite()) {
    throw NumericalError("op '" + std::string(op) + "' produced a non-finite value");
  }
  Node node;
  node.op = std::string(op);
  node.value = std::move(value);
  node.inputs = std::move(inputs);
  for (std::size_t in : node.inputs) node.requires_grad |= nodes_.at(in).requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return record("constant", std::move(value), {}, nullptr);
}

template <typename T>
Var<T> Tape<T>::constant_view(const Tensor<T>& value) {
  check_open();
  Node node;
  node.op = "constant_view";
  node.external = &value;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Var<T> v = record("variable", std::move(value), {}, nullptr);
  nodes_.back().requires_grad = true;
  return v;
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  check_open();
  if (!p.value.all_finite()) {
    throw NumericalError("parameter '" + p.name + "' holds a non-finite value");
  }
  Node node;
  node.op = "parameter:" + p.name;
  node.external = &p.value;
  node.param = &p;
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(std::size_t id) const {
  return nodes_.at(id).grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty() && !value(id).empty()) n.grad = Tensor<T>(value(id).shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  check_open();
  require(loss.tape == this, "backward: loss belongs to another tape");
  const Tensor<T>& lv = value(loss.id);
  if (lv.size() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + lv.shape_string());
  }
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = T(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      n.param->grad.mat() += n.grad.mat();
      n.param->has_grad = true;
    }
  }
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b, "matmul");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.cols() == bv.rows(), "matmul: inner dimensions " + av.shape_string() + " x " +
                                      bv.shape_string() + " do not match");
  Tensor<T> out = Tensor<T>::matrix(av.rows(), bv.cols());
  out.mat().noalias() = av.mat() * bv.mat();
  return t.record("matmul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& tp, std::size_t self) {
    const auto g = tp.grad(self).mat();
    if (tp.requires_grad(ia)) tp.grad_buffer(ia).mat().noalias() += g * tp.value(ib).mat().transpose();
    if (tp.requires_grad(ib)) tp.grad_buffer(ib).mat().noalias() += tp.value(ia).mat().transpose() * g;
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b, "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const bool same = av.rows() == bv.rows() && av.cols() == bv.cols();
  const bool row_broadcast = bv.rows() == 1 && bv.cols() == av.cols();
  require(same || row_broadcast,
          "add: cannot add " + bv.shape_string() + " to " + av.shape_string());
  Tensor<T> out = av;
  if (same) {
    out.mat() += bv.mat();
  } else {
    out.mat().rowwise() += bv.mat().row(0);
  }
  return t.record("add", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, same](Tape<T>& tp, std::size_t self) {
    const auto g = tp.grad(self).mat();
    if (tp.requires_grad(ia)) tp.grad_buffer(ia).mat() += g;
    if (tp.requires_grad(ib)) {
      if (same) {
        tp.grad_buffer(ib).mat() += g;
      } else {
        tp.grad_buffer(ib).mat().row(0) += g.colwise().sum();
      }
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b, "mul");
  require(a.value().size() == b.value().size() && a.value().rows() == b.value().rows(),
          "mul: shape mismatch " + a.value().shape_string() + " vs " + b.value().shape_string());
  Tensor<T> out = a.value();
  out.mat().array() *= b.value().mat().array();
  return t.record("mul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape<T>& tp, std::size_t self) {
    const auto g = tp.grad(self).mat().array();
    if (tp.requires_grad(ia)) tp.grad_buffer(ia).mat().array() += g * tp.value(ib).mat().array();
    if (tp.requires_grad(ib)) tp.grad_buffer(ib).mat().array() += g * tp.value(ia).mat().array();
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  out.mat() *= factor;
  return a.tape->record("scale", std::move(out), {a.id}, [ia = a.id, factor](Tape<T>& tp, std::size_t self) {
    tp.grad_buffer(ia).mat() += factor * tp.grad(self).mat();
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  Tensor<T> out = Tensor<T>::scalar(a.value().mat().sum());
  return a.tape->record("sum", std::move(out), {a.id}, [ia = a.id](Tape<T>& tp, std::size_t self) {
    tp.grad_buffer(ia).mat().array() += tp.grad(self)[0];
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  out.mat() = out.mat().cwiseMax(T(0));
  return a.tape->record("relu", std::move(out), {a.id}, [ia = a.id](Tape<T>& tp, std::size_t self) {
    const auto x = tp.value(ia).mat().array();
    tp.grad_buffer(ia).mat().array() += (x > T(0)).select(tp.grad(self).mat().array(), T(0));
  });
}

template <typename T>
Var<T> gelu(Var<T> a) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Tensor<T> out = a.value();
  for (T& x : out.values()) x = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  return a.tape->record("gelu", std::move(out), {a.id}, [ia = a.id, inv_sqrt2](Tape<T>& tp, std::size_t self) {
    const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    const auto& x = tp.value(ia);
    const auto& g = tp.grad(self);
    auto& dx = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T v = x[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      dx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> softmax(Var<T> a, int axis) {
  require(axis == 0 || axis == 1, "softmax: axis must be 0 or 1");
  Tensor<T> out = a.value();
  auto m = out.mat();
  if (axis == 1) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      m.row(r).array() = (m.row(r).array() - m.row(r).maxCoeff()).exp();
      m.row(r) /= m.row(r).sum();
    }
  } else {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m.col(c).array() = (m.col(c).array() - m.col(c).maxCoeff()).exp();
      m.col(c) /= m.col(c).sum();
    }
  }
  return a.tape->record("softmax", std::move(out), {a.id}, [ia = a.id, axis](Tape<T>& tp, std::size_t self) {
    const auto y = tp.value(self).mat();
    const auto g = tp.grad(self).mat();
    auto dx = tp.grad_buffer(ia).mat();
    if (axis == 1) {
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const T dot = g.row(r).dot(y.row(r));
        dx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
      }
    } else {
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const T dot = g.col(c).dot(y.col(c));
        dx.col(c).array() += y.col(c).array() * (g.col(c).array() - dot);
      }
    }
  });
}

namespace {

// Row-wise standardisation; returns x_hat and fills 1/sigma per row.
template <typename T>
Tensor<T> standardise_rows(const Tensor<T>& x, T eps, std::vector<T>& inv_std) {
  Tensor<T> out = x;
  auto m = out.mat();
  inv_std.resize(static_cast<std::size_t>(m.rows()));
  const T n = static_cast<T>(m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const T mean = m.row(r).sum() / n;
    m.row(r).array() -= mean;
    const T var = m.row(r).squaredNorm() / n;
    const T is = T(1) / std::sqrt(var + eps);
    m.row(r) *= is;
    inv_std[static_cast<std::size_t>(r)] = is;
  }
  return out;
}

// dx from d(x_hat) for row-wise standardisation.
template <typename T, typename G, typename XH, typename DX>
void standardise_backward(const G& dxhat, const XH& xhat, const std::vector<T>& inv_std, DX&& dx) {
  const T n = static_cast<T>(xhat.cols());
  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
    const T mean_d = dxhat.row(r).sum() / n;
    const T mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
    dx.row(r).array() += inv_std[static_cast<std::size_t>(r)] *
                         (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
  }
}

}  // namespace

template <typename T>
Var<T> layer_norm(Var<T> a, T eps) {
  std::vector<T> inv_std;
  Tensor<T> out = standardise_rows(a.value(), eps, inv_std);
  return a.tape->record("layer_norm", std::move(out), {a.id},
                        [ia = a.id, inv_std = std::move(inv_std)](Tape<T>& tp, std::size_t self) {
                          standardise_backward(tp.grad(self).mat(), tp.value(self).mat(), inv_std,
                                               tp.grad_buffer(ia).mat());
                        });
}

template <typename T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, T eps) {
  Tape<T>& t = same_tape(a, gain, "layer_norm");
  same_tape(a, bias, "layer_norm");
  const std::size_t cols = a.value().cols();
  require(gain.value().size() == cols && bias.value().size() == cols,
          "layer_norm: gain/bias must have " + std::to_string(cols) + " entries");
  std::vector<T> inv_std;
  Tensor<T> xhat = standardise_rows(a.value(), eps, inv_std);
  Tensor<T> out = xhat;
  {
    auto m = out.mat();
    const auto g = gain.value().mat();
    const auto b = bias.value().mat();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      m.row(r).array() = m.row(r).array() * g.row(0).array() + b.row(0).array();
    }
  }
  return t.record("layer_norm", std::move(out), {a.id, gain.id, bias.id},
                  [ia = a.id, ig = gain.id, ib = bias.id, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](Tape<T>& tp, std::size_t self) {
                    const auto g = tp.grad(self).mat();
                    const auto xh = xhat.mat();
                    if (tp.requires_grad(ig)) {
                      tp.grad_buffer(ig).mat().row(0) += (g.array() * xh.array()).colwise().sum().matrix();
                    }
                    if (tp.requires_grad(ib)) tp.grad_buffer(ib).mat().row(0) += g.colwise().sum();
                    if (tp.requires_grad(ia)) {
                      Mat<T> dxhat = g;
                      const auto gain_row = tp.value(ig).mat().row(0);
                      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                        dxhat.row(r).array() *= gain_row.array();
                      }
                      standardise_backward(dxhat, xh, inv_std, tp.grad_buffer(ia).mat());
                    }
                  });
}

template <typename T>
Var<T> dropout(Var<T> a, double p, std::uint64_t seed, bool training) {
  require(p >= 0.0 && p < 1.0, "dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return a;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(a.value().shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = hash_uniform(seed, i) >= p ? keep_scale : T(0);
  }
  Tensor<T> out = a.value();
  out.mat().array() *= mask.mat().array();
  return a.tape->record("dropout", std::move(out), {a.id},
                        [ia = a.id, mask = std::move(mask)](Tape<T>& tp, std::size_t self) {
                          tp.grad_buffer(ia).mat().array() += tp.grad(self).mat().array() * mask.mat().array();
                        });
}

template <typename T>
Var<T> mean_pool(Var<T> a, int axis) {
  require(axis == 0 || axis == 1, "mean_pool: axis must be 0 or 1");
  const auto m = a.value().mat();
  Tensor<T> out;
  if (axis == 0) {
    out = Tensor<T>::matrix(1, static_cast<std::size_t>(m.cols()));
    out.mat() = m.colwise().mean();
  } else {
    out = Tensor<T>::matrix(static_cast<std::size_t>(m.rows()), 1);
    out.mat() = m.rowwise().mean();
  }
  return a.tape->record("mean_pool", std::move(out), {a.id}, [ia = a.id, axis](Tape<T>& tp, std::size_t self) {
    const auto g = tp.grad(self).mat();
    auto dx = tp.grad_buffer(ia).mat();
    if (axis == 0) {
      dx.rowwise() += g.row(0) / static_cast<T>(dx.rows());
    } else {
      dx.colwise() += g.col(0) / static_cast<T>(dx.cols());
    }
  });
}

template <typename T>
Var<T> segment_mean(Var<T> a, const std::vector<std::size_t>& offsets) {
  const auto m = a.value().mat();
  auto segs = normalise_offsets(offsets, static_cast<std::size_t>(m.rows()), "segment_mean");
  const std::size_t n_seg = segs.size() - 1;
  Tensor<T> out = Tensor<T>::matrix(n_seg, static_cast<std::size_t>(m.cols()));
  for (std::size_t s = 0; s < n_seg; ++s) {
    const auto len = static_cast<Eigen::Index>(segs[s + 1] - segs[s]);
    out.mat().row(static_cast<Eigen::Index>(s)) =
        m.middleRows(static_cast<Eigen::Index>(segs[s]), len).colwise().mean();
  }
  return a.tape->record("segment_mean", std::move(out), {a.id},
                        [ia = a.id, segs = std::move(segs)](Tape<T>& tp, std::size_t self) {
                          const auto g = tp.grad(self).mat();
                          auto dx = tp.grad_buffer(ia).mat();
                          for (std::size_t s = 0; s + 1 < segs.size(); ++s) {
                            const auto len = static_cast<Eigen::Index>(segs[s + 1] - segs[s]);
                            dx.middleRows(static_cast<Eigen::Index>(segs[s]), len).rowwise() +=
                                g.row(static_cast<Eigen::Index>(s)) / static_cast<T>(len);
                          }
                        });
}

template <typename T>
Var<T> scaled_dot_attention(Var<T> q, Var<T> k, Var<T> v, int heads,
                            const std::vector<std::size_t>& offsets) {
  Tape<T>& t = same_tape(q, k, "scaled_dot_attention");
  same_tape(q, v, "scaled_dot_attention");
  const auto Q = q.value().mat();
  const auto K = k.value().mat();
  const auto V = v.value().mat();
  require(Q.rows() == K.rows() && Q.rows() == V.rows() && Q.cols() == K.cols() &&
              Q.cols() == V.cols(),
          "scaled_dot_attention: Q, K, V must share one shape");
  require(heads >= 1 && Q.cols() % heads == 0,
          "scaled_dot_attention: dim " + std::to_string(Q.cols()) + " not divisible by " +
              std::to_string(heads) + " heads");
  auto segs = normalise_offsets(offsets, static_cast<std::size_t>(Q.rows()), "scaled_dot_attention");
  const Eigen::Index dh = Q.cols() / heads;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));

  Tensor<T> out = Tensor<T>::matrix(static_cast<std::size_t>(Q.rows()), static_cast<std::size_t>(Q.cols()));
  auto O = out.mat();
  std::vector<Mat<T>> probs;
  probs.reserve((segs.size() - 1) * static_cast<std::size_t>(heads));
  for (std::size_t s = 0; s + 1 < segs.size(); ++s) {
    const auto r0 = static_cast<Eigen::Index>(segs[s]);
    const auto len = static_cast<Eigen::Index>(segs[s + 1] - segs[s]);
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = h * dh;
      Mat<T> P = Q.block(r0, c0, len, dh) * K.block(r0, c0, len, dh).transpose();
      P *= scale_factor;
      for (Eigen::Index r = 0; r < len; ++r) {
        P.row(r).array() = (P.row(r).array() - P.row(r).maxCoeff()).exp();
        P.row(r) /= P.row(r).sum();
      }
      O.block(r0, c0, len, dh).noalias() = P * V.block(r0, c0, len, dh);
      probs.push_back(std::move(P));
    }
  }
  return t.record(
      "scaled_dot_attention", std::move(out), {q.id, k.id, v.id},
      [iq = q.id, ik = k.id, iv = v.id, heads, dh, scale_factor, segs = std::move(segs),
       probs = std::move(probs)](Tape<T>& tp, std::size_t self) {
        const auto G = tp.grad(self).mat();
        const auto Q = tp.value(iq).mat();
        const auto K = tp.value(ik).mat();
        const auto V = tp.value(iv).mat();
        const bool gq = tp.requires_grad(iq), gk = tp.requires_grad(ik), gv = tp.requires_grad(iv);
        for (std::size_t s = 0; s + 1 < segs.size(); ++s) {
          const auto r0 = static_cast<Eigen::Index>(segs[s]);
          const auto len = static_cast<Eigen::Index>(segs[s + 1] - segs[s]);
          for (int h = 0; h < heads; ++h) {
            const Eigen::Index c0 = h * dh;
            const Mat<T>& P = probs[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
            const auto dO = G.block(r0, c0, len, dh);
            if (gv) tp.grad_buffer(iv).mat().block(r0, c0, len, dh).noalias() += P.transpose() * dO;
            if (!gq && !gk) continue;
            Mat<T> dS = dO * V.block(r0, c0, len, dh).transpose();
            for (Eigen::Index r = 0; r < len; ++r) {
              const T dot = dS.row(r).dot(P.row(r));
              dS.row(r).array() = P.row(r).array() * (dS.row(r).array() - dot);
            }
            dS *= scale_factor;
            if (gq) tp.grad_buffer(iq).mat().block(r0, c0, len, dh).noalias() += dS * K.block(r0, c0, len, dh);
            if (gk) tp.grad_buffer(ik).mat().block(r0, c0, len, dh).noalias() += dS.transpose() * Q.block(r0, c0, len, dh);
          }
        }
      });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& targets) {
  const auto L = logits.value().mat();
  require(targets.rows() == static_cast<std::size_t>(L.rows()) &&
              targets.cols() == static_cast<std::size_t>(L.cols()),
          "softmax_cross_entropy: targets " + targets.shape_string() + " vs logits " +
              logits.value().shape_string());
  require(L.rows() > 0, "softmax_cross_entropy: empty batch");
  Mat<T> probs(L.rows(), L.cols());
  T total = 0;
  const auto Y = targets.mat();
  for (Eigen::Index r = 0; r < L.rows(); ++r) {
    const T mx = L.row(r).maxCoeff();
    const T lse = mx + std::log((L.row(r).array() - mx).exp().sum());
    probs.row(r).array() = (L.row(r).array() - lse).exp();
    total -= (Y.row(r).array() * (L.row(r).array() - lse)).sum();
  }
  const T n = static_cast<T>(L.rows());
  return logits.tape->record(
      "softmax_cross_entropy", Tensor<T>::scalar(total / n), {logits.id},
      [il = logits.id, probs = std::move(probs), targets, n](Tape<T>& tp, std::size_t self) {
        const T g = tp.grad(self)[0];
        const auto Y = targets.mat();
        auto dx = tp.grad_buffer(il).mat();
        for (Eigen::Index r = 0; r < probs.rows(); ++r) {
          dx.row(r) += (g / n) * (probs.row(r) * Y.row(r).sum() - Y.row(r));
        }
      });
}

template <typename T>
Var<T> ntxent(Var<T> z, T temperature) {
  require(temperature > T(0), "ntxent: temperature must be positive");
  const auto Z = z.value().mat();
  const Eigen::Index m = Z.rows();
  require(m >= 2 && m % 2 == 0, "ntxent: need an even number (>= 2) of embeddings");
  Mat<T> U = Z;
  std::vector<T> inv_norm(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    const T norm = U.row(i).norm();
    if (!(norm > T(0))) throw NumericalError("ntxent: zero-norm embedding in row " + std::to_string(i));
    inv_norm[static_cast<std::size_t>(i)] = T(1) / norm;
    U.row(i) /= norm;
  }
  Mat<T> S = (U * U.transpose()) / temperature;
  Mat<T> P = Mat<T>::Zero(m, m);
  T total = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::Index j = i ^ 1;
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != i) mx = std::max(mx, S(i, k));
    }
    T acc = 0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != i) acc += std::exp(S(i, k) - mx);
    }
    const T lse = mx + std::log(acc);
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != i) P(i, k) = std::exp(S(i, k) - lse);
    }
    total += lse - S(i, j);
  }
  return z.tape->record(
      "ntxent", Tensor<T>::scalar(total / static_cast<T>(m)), {z.id},
      [iz = z.id, U = std::move(U), P = std::move(P), inv_norm = std::move(inv_norm),
       temperature](Tape<T>& tp, std::size_t self) {
        const Eigen::Index m = U.rows();
        const T g = tp.grad(self)[0] / static_cast<T>(m);
        Mat<T> dS = P * g;
        for (Eigen::Index i = 0; i < m; ++i) dS(i, i ^ 1) -= g;
        Mat<T> dU = ((dS + dS.transpose()) * U) / temperature;
        auto dz = tp.grad_buffer(iz).mat();
        for (Eigen::Index i = 0; i < m; ++i) {
          const T radial = U.row(i).dot(dU.row(i));
          dz.row(i) += inv_norm[static_cast<std::size_t>(i)] * (dU.row(i) - radial * U.row(i));
        }
      });
}

#define KEYPROBE_INSTANTIATE(T)                                                              \
  template class Tape<T>;                                                                    \
  template Var<T> matmul(Var<T>, Var<T>);                                                    \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                       \
  template Var<T> scale(Var<T>, T);                                                          \
  template Var<T> sum(Var<T>);                                                               \
  template Var<T> relu(Var<T>);                                                              \
  template Var<T> gelu(Var<T>);                                                              \
  template Var<T> softmax(Var<T>, int);                                                      \
  template Var<T> layer_norm(Var<T>, T);                                                     \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                     \
  template Var<T> dropout(Var<T>, double, std::uint64_t, bool);                              \
  template Var<T> mean_pool(Var<T>, int);                                                    \
  template Var<T> segment_mean(Var<T>, const std::vector<std::size_t>&);                     \
  template Var<T> scaled_dot_attention(Var<T>, Var<T>, Var<T>, int,                          \
                                       const std::vector<std::size_t>&);                     \
  template Var<T> softmax_cross_entropy(Var<T>, const Tensor<T>&);                           \
  template Var<T> ntxent(Var<T>, T);

KEYPROBE_INSTANTIATE(float)
KEYPROBE_INSTANTIATE(double)

#undef KEYPROBE_INSTANTIATE

}  // namespace keyprobe
