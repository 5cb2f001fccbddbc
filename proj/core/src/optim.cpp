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

#include "keyprobe/optim.hpp"

#include <algorithm>
#include <cmath>

namespace keyprobe {

template <typename T>
AdamW<T>::AdamW(std::vector<Parameter<T>*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (cfg_.weight_decay < 0.0) throw UsageError("weight decay must be non-negative");
  for (Parameter<T>* p : params_) {
    state_.first_moment.emplace_back(p->value.shape());
    state_.second_moment.emplace_back(p->value.shape());
  }
}

template <typename T>
double AdamW<T>::current_learning_rate() const {
  if (cfg_.warmup_steps <= 0) return cfg_.learning_rate;
  const double ramp = std::min(1.0, static_cast<double>(state_.step + 1) / cfg_.warmup_steps);
  return cfg_.learning_rate * ramp;
}

template <typename T>
void AdamW<T>::step() {
  const bool any = std::any_of(params_.begin(), params_.end(),
                               [](const Parameter<T>* p) { return p->has_grad; });
  if (!any) throw UsageError("optimizer step before backward(): no gradients accumulated");

  const double lr = current_learning_rate();
  ++state_.step;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.step));
  const T b1 = static_cast<T>(cfg_.beta1);
  const T b2 = static_cast<T>(cfg_.beta2);
  const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg_.eps);

  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter<T>& p = *params_[i];
    auto theta = p.value.mat().array();
    const auto g = p.grad.mat().array();
    auto m = state_.first_moment[i].mat().array();
    auto v = state_.second_moment[i].mat().array();
    theta *= decay;
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.square();
    theta -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + eps);
    if (!p.value.all_finite()) {
      throw NumericalError("optimizer produced a non-finite value in '" + p.name + "'");
    }
  }
  zero_grad();
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (Parameter<T>* p : params_) p->zero_grad();
}

template <typename T>
void init_truncated_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (T& v : t.values()) {
    double x;
    do {
      x = normal(rng);
    } while (std::abs(x) > 2.0);
    v = static_cast<T>(x * stddev);
  }
}

template class AdamW<float>;
template class AdamW<double>;
template void init_truncated_normal(Tensor<float>&, double, std::mt19937_64&);
template void init_truncated_normal(Tensor<double>&, double, std::mt19937_64&);

}  // namespace keyprobe
