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

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace keyprobe {

inline constexpr int kDefaultSampleRate = 16000;

// Mono audio, samples nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kDefaultSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Throws DataError if the rate is not positive or a sample is not finite.
void validate(const Waveform& w);

struct MelConfig {
  int sample_rate = kDefaultSampleRate;
  int n_mels = 128;
  int window = 2048;  // also the FFT size
  int hop = 512;
  double fmin = 0.0;
  double fmax = 0.0;  // <= 0 means sample_rate / 2
  double log_eps = 1e-5;

  double effective_fmax() const {
    return fmax > 0.0 ? fmax : 0.5 * sample_rate;
  }
};

// Log-Mel energies. Logically an [n_mels x n_frames] matrix; stored one
// contiguous n_mels vector per frame so that frame ranges slice cheaply.
struct MelSpectrogram {
  int n_mels = 0;
  int n_frames = 0;
  int sample_rate = kDefaultSampleRate;
  int hop = 0;
  int window = 0;
  std::vector<float> data;

  float at(int mel, int frame) const {
    return data[static_cast<std::size_t>(frame) * n_mels + mel];
  }
  float& at(int mel, int frame) {
    return data[static_cast<std::size_t>(frame) * n_mels + mel];
  }
  std::span<const float> frame(int t) const {
    return {data.data() + static_cast<std::size_t>(t) * n_mels,
            static_cast<std::size_t>(n_mels)};
  }

  // Frames [first, first + count). Equals the spectrogram of the waveform
  // cropped at sample first * hop.
  MelSpectrogram slice_frames(int first, int count) const;
};

// floor((length - window) / hop) + 1; throws DataError when length < window.
int frame_count(std::size_t length, int window, int hop);

// Smallest sample count that yields `frames` frames.
std::size_t samples_for_frames(int frames, int window, int hop);

// HTK Mel scale: 2595 * log10(1 + f / 700).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters on the one-sided power spectrum of a window-length FFT.
struct MelFilterbank {
  int n_mels = 0;
  int n_bins = 0;
  std::vector<double> center_hz;  // n_mels
  std::vector<double> weights;    // [n_mels x n_bins], row-major
};

MelFilterbank mel_filterbank(const MelConfig& cfg);

// Hann-windowed STFT (no centre padding) -> power -> Mel -> log(eps + x).
// One instance owns its FFT buffers; use one per thread.
class MelExtractor {
 public:
  explicit MelExtractor(const MelConfig& cfg = {});
  ~MelExtractor();
  MelExtractor(const MelExtractor&) = delete;
  MelExtractor& operator=(const MelExtractor&) = delete;
  MelExtractor(MelExtractor&&) noexcept;
  MelExtractor& operator=(MelExtractor&&) noexcept;

  const MelConfig& config() const { return cfg_; }
  const MelFilterbank& filterbank() const { return bank_; }

  MelSpectrogram compute(const Waveform& w) const;

 private:
  struct Impl;
  MelConfig cfg_;
  MelFilterbank bank_;
  std::unique_ptr<Impl> impl_;
};

MelSpectrogram mel_spectrogram(const Waveform& w, const MelConfig& cfg = {});

// Linear-interpolation resampling.
Waveform resample_linear(const Waveform& w, int target_rate);

// Generic pitch shift: resample by 2^(n/12), then phase-vocoder time-stretch
// back to the original length. Output length equals input length exactly.
// |semitones| must not exceed max_abs_semitones.
Waveform pitch_shift(const Waveform& w, int semitones, int max_abs_semitones = 6);

}  // namespace keyprobe
