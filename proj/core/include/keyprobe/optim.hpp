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
#include <random>
#include <vector>

#include "keyprobe/autograd.hpp"

namespace keyprobe {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;  // decoupled
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 0;  // linear ramp of the learning rate; 0 = constant
};

template <typename T>
struct OptimState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::int64_t step = 0;
};

// Adam with decoupled weight decay:
//   theta <- theta - lr * wd * theta, then the bias-corrected Adam update.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Parameter<T>*> params, AdamWConfig cfg);

  // Applies one update from the accumulated gradients, then clears them.
  // Throws UsageError if no gradient was accumulated since the last step.
  void step();
  void zero_grad();

  double current_learning_rate() const;
  const AdamWConfig& config() const { return cfg_; }
  const OptimState<T>& state() const { return state_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamWConfig cfg_;
  OptimState<T> state_;
};

// Truncated normal (+-2 sigma) initialisation.
template <typename T>
void init_truncated_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng);

}  // namespace keyprobe
