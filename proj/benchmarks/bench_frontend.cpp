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

#include <benchmark/benchmark.h>

#include "keyprobe/audio.hpp"
#include "keyprobe/augmap.hpp"
#include "keyprobe/key.hpp"
#include "keyprobe/synth.hpp"

namespace {

using namespace keyprobe;

Waveform clip(double seconds) {
  SynthSpec s;
  s.key = parse_key("E minor");
  s.duration_s = seconds;
  s.seed = 3;
  return synth_clip(s);
}

void BM_MelSpectrogram(benchmark::State& state) {
  const Waveform w = clip(static_cast<double>(state.range(0)));
  const MelExtractor mel;
  for (auto _ : state) benchmark::DoNotOptimize(mel.compute(w));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.size()));
}
BENCHMARK(BM_MelSpectrogram)->Arg(2)->Arg(7)->Arg(30)->Unit(benchmark::kMillisecond);

void BM_SynthClip(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(clip(6.5));
}
BENCHMARK(BM_SynthClip)->Unit(benchmark::kMillisecond);

void BM_PitchShift(benchmark::State& state) {
  const Waveform w = clip(6.5);
  for (auto _ : state) benchmark::DoNotOptimize(pitch_shift(w, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_PitchShift)->Arg(-2)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_Lowpass(benchmark::State& state) {
  const Waveform w = clip(6.5);
  for (auto _ : state) benchmark::DoNotOptimize(first_order_lowpass(w, 1000.0));
}
BENCHMARK(BM_Lowpass)->Unit(benchmark::kMicrosecond);

}  // namespace
