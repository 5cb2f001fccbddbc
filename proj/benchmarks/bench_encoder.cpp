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
#include "keyprobe/encoder.hpp"

namespace {

using namespace keyprobe;

EncoderConfig encoder_config(int depth) {
  EncoderConfig c;
  c.depth = depth;
  return c;
}

TokenSequence random_tokens(std::size_t n, int token_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  TokenSequence ts;
  ts.tokens = Tensor<float>::matrix(n, static_cast<std::size_t>(token_dim));
  for (auto& v : ts.tokens.storage()) v = g(rng);
  ts.positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) ts.positions[i] = static_cast<int>(i);
  return ts;
}

void BM_EncodeWindow(benchmark::State& state) {
  const EncoderConfig cfg = encoder_config(static_cast<int>(state.range(1)));
  const Encoder<float> net(cfg, 1);
  const TokenSequence ts = random_tokens(static_cast<std::size_t>(state.range(0)), cfg.token_dim(), 2);
  for (auto _ : state) benchmark::DoNotOptimize(net.encode(ts));
}
BENCHMARK(BM_EncodeWindow)->Args({98, 2})->Args({98, 4})->Args({10, 4})->Unit(benchmark::kMillisecond);

// One forward and backward pass over 2N masked views, as in a pretraining step.
void BM_MaskedTrainingPass(benchmark::State& state) {
  const EncoderConfig cfg = encoder_config(2);
  Encoder<float> net(cfg, 1);
  std::vector<TokenSequence> batch;
  for (int i = 0; i < 32; ++i) batch.push_back(random_tokens(static_cast<std::size_t>(state.range(0)), cfg.token_dim(), 10 + i));
  for (auto _ : state) {
    for (auto* p : net.parameters()) p->zero_grad();
    Tape<float> tape;
    const Var<float> z = net.forward(tape, batch);
    tape.backward(ntxent(z, 0.1f));
  }
}
BENCHMARK(BM_MaskedTrainingPass)->Arg(10)->Arg(98)->Unit(benchmark::kMillisecond);

}  // namespace
