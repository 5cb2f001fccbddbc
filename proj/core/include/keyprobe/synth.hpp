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
#include <limits>
#include <span>
#include <utility>

#include "keyprobe/audio.hpp"
#include "keyprobe/key.hpp"

namespace keyprobe {

// Parameters of a synthetic tonal clip. Every clip is a pure function of
// these fields.
struct SynthSpec {
  Key key;
  double duration_s = 6.5;
  int harmonics = 4;
  std::uint64_t seed = 0;
  double tempo_bpm = 120.0;
  // Noise RMS relative to the signal RMS; -infinity disables noise.
  double noise_db = -30.0;
  int sample_rate = kDefaultSampleRate;
};

// Scale intervals used by the synthesizer. Minor keys use the harmonic minor
// scale so that the leading tone separates them from their relative major.
std::span<const int> scale_intervals(Mode mode);

// Renders a tonic pedal in the bass, one I/IV/V triad per bar and a melody
// of scale tones, each note a decaying harmonic series. Peak amplitude 0.9.
// Throws UsageError for invalid specs or a duration shorter than one beat.
Waveform synth_clip(const SynthSpec& spec);

// Same clip with every fundamental scaled by 2^(semitones / 12); the returned
// label is the transposed key.
std::pair<Waveform, Key> synth_shifted(const SynthSpec& spec, int semitones);

}  // namespace keyprobe
