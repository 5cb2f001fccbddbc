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

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "keyprobe/autograd.hpp"
#include "keyprobe/contrastive.hpp"
#include "keyprobe/probe.hpp"

namespace {

using namespace keyprobe;

Tensor<float> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  Tensor<float> t = Tensor<float>::matrix(rows, cols);
  for (auto& v : t.storage()) v = g(rng);
  return t;
}

void BM_NtxentForwardBackward(benchmark::State& state) {
  const Tensor<float> z = random_matrix(2 * static_cast<std::size_t>(state.range(0)), 128, 1);
  for (auto _ : state) {
    Tape<float> tape;
    const Var<float> x = tape.variable(z);
    tape.backward(ntxent(x, 0.1f));
    benchmark::DoNotOptimize(x.grad().data());
  }
}
BENCHMARK(BM_NtxentForwardBackward)->Arg(16)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_NtxentReference(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> batch(2 * static_cast<std::size_t>(state.range(0)), std::vector<double>(128));
  for (auto& r : batch) {
    for (double& v : r) v = g(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(ntxent_loss(batch, 0.1));
}
BENCHMARK(BM_NtxentReference)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_ProbeTrainingStep(benchmark::State& state) {
  const ProbeArch arch = state.range(0) == 0 ? ProbeArch::linear_probe() : ProbeArch::billboard_reference();
  Probe<float> probe(arch, 1);
  const Tensor<float> x = random_matrix(64, 384, 3);
  Tensor<float> y = Tensor<float>::matrix(64, kNumKeyClasses);
  for (std::size_t i = 0; i < 64; ++i) y.at(i, i % kNumKeyClasses) = 1.0f;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    for (auto* p : probe.parameters()) p->zero_grad();
    Tape<float> tape;
    tape.backward(softmax_cross_entropy(probe.forward(tape, tape.constant(x), true, ++seed), y));
  }
}
BENCHMARK(BM_ProbeTrainingStep)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

}  // namespace
