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

#include "keyprobe/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "keyprobe/error.hpp"

namespace keyprobe {
namespace {

constexpr std::array<int, 7> kMajorScale = {0, 2, 4, 5, 7, 9, 11};
constexpr std::array<int, 7> kHarmonicMinorScale = {0, 2, 3, 5, 7, 8, 11};

constexpr int kBassMidi = 48;    // C3
constexpr int kChordMidi = 60;   // C4
constexpr int kMelodyMidi = 72;  // C5
constexpr int kBeatsPerBar = 4;

struct Note {
  double start_s;
  double length_s;
  int midi;  // before transposition
  double amplitude;
  double decay_per_s;
  double phase;
};

// Triad as offsets from the tonic: scale degrees 1-3-5 built on `root_degree`.
std::array<int, 3> triad(Mode mode, int root_degree) {
  const auto scale = scale_intervals(mode);
  std::array<int, 3> out{};
  for (int i = 0; i < 3; ++i) {
    const int deg = root_degree + 2 * i;
    out[static_cast<std::size_t>(i)] = scale[static_cast<std::size_t>(deg % 7)] + 12 * (deg / 7);
  }
  return out;
}

std::vector<Note> compose(const SynthSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto scale = scale_intervals(spec.key.mode);
  const double beat = 60.0 / spec.tempo_bpm;

  std::vector<Note> notes;
  const auto add = [&](double start, double length, int midi, double amp) {
    notes.push_back({start, length, midi, amp * (0.6 + 0.4 * unit(rng)),
                     1.5 + 2.5 * unit(rng), 2.0 * std::numbers::pi * unit(rng)});
  };

  double t = 0.0;
  int bar = 0;
  while (t < spec.duration_s) {
    // Degrees 0 (I), 3 (IV), 4 (V); even bars are always the tonic.
    int root = 0;
    if (bar % 2 == 1) root = unit(rng) < 0.5 ? 3 : 4;
    std::array<double, kBeatsPerBar> beats{};
    double bar_len = 0.0;
    for (double& b : beats) {
      b = beat * (1.0 + 0.08 * (unit(rng) - 0.5));
      bar_len += b;
    }
    add(t, bar_len, kBassMidi + spec.key.tonic, 0.8);
    for (int off : triad(spec.key.mode, root)) {
      add(t, bar_len, kChordMidi + spec.key.tonic + off, 0.5);
    }
    const auto tonic_triad = triad(spec.key.mode, 0);
    double bt = t;
    for (double b : beats) {
      int off;
      if (unit(rng) < 0.6) {
        off = tonic_triad[static_cast<std::size_t>(rng() % 3)] % 12;
      } else {
        off = scale[static_cast<std::size_t>(rng() % scale.size())];
      }
      add(bt, b, kMelodyMidi + spec.key.tonic + off, 0.35);
      bt += b;
    }
    t += bar_len;
    ++bar;
  }
  return notes;
}

Waveform render(const SynthSpec& spec, int semitones) {
  if (!(spec.duration_s > 0.0)) throw UsageError("synth: duration must be positive");
  if (spec.harmonics < 1) throw UsageError("synth: need at least one harmonic");
  if (!(spec.tempo_bpm > 0.0)) throw UsageError("synth: tempo must be positive");
  if (spec.sample_rate <= 0) throw UsageError("synth: sample rate must be positive");
  const double beat = 60.0 / spec.tempo_bpm;
  if (spec.duration_s < beat) {
    throw UsageError("synth: duration " + std::to_string(spec.duration_s) +
                     " s is shorter than one note (" + std::to_string(beat) + " s at " +
                     std::to_string(spec.tempo_bpm) + " bpm)");
  }

  const auto notes = compose(spec);
  const double sr = spec.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * sr));
  std::vector<double> mix(n, 0.0);
  const double nyquist_guard = 0.475 * sr;
  const double attack_s = 0.01;
  const double release_s = 0.02;

  for (const Note& note : notes) {
    const auto first = static_cast<std::size_t>(std::llround(note.start_s * sr));
    if (first >= n) continue;
    const auto count = std::min(n - first, static_cast<std::size_t>(std::llround(note.length_s * sr)));
    const double f0 = 440.0 * std::pow(2.0, (note.midi + semitones - 69) / 12.0);
    const double env_step = std::exp(-note.decay_per_s / sr);
    for (int h = 1; h <= spec.harmonics; ++h) {
      const double f = f0 * h;
      if (f >= nyquist_guard) break;
      const double amp = note.amplitude / h;
      const std::complex<double> rot = std::polar(1.0, 2.0 * std::numbers::pi * f / sr);
      std::complex<double> osc = std::polar(1.0, note.phase * h);
      double env = amp;
      for (std::size_t i = 0; i < count; ++i) {
        const double ts = static_cast<double>(i) / sr;
        const double tail = static_cast<double>(count - i) / sr;
        double gate = 1.0;
        if (ts < attack_s) gate = ts / attack_s;
        if (tail < release_s) gate = std::min(gate, tail / release_s);
        mix[first + i] += env * gate * osc.imag();
        osc *= rot;
        env *= env_step;
      }
    }
  }

  if (std::isfinite(spec.noise_db)) {
    double energy = 0.0;
    for (double v : mix) energy += v * v;
    const double rms = std::sqrt(energy / static_cast<double>(std::max<std::size_t>(n, 1)));
    const double sigma = rms * std::pow(10.0, spec.noise_db / 20.0);
    std::mt19937_64 noise_rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (double& v : mix) v += sigma * gauss(noise_rng);
  }

  double peak = 0.0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  const double gain = peak > 0.0 ? 0.9 / peak : 0.0;
  Waveform w;
  w.sample_rate = spec.sample_rate;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(mix[i] * gain);
  return w;
}

}  // namespace

std::span<const int> scale_intervals(Mode mode) {
  if (mode == Mode::kMajor) return kMajorScale;
  return kHarmonicMinorScale;
}

Waveform synth_clip(const SynthSpec& spec) { return render(spec, 0); }

std::pair<Waveform, Key> synth_shifted(const SynthSpec& spec, int semitones) {
  return {render(spec, semitones), transpose_key(spec.key, semitones)};
}

}  // namespace keyprobe
