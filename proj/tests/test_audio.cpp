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

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "keyprobe/audio.hpp"
#include "keyprobe/error.hpp"
#include "keyprobe/wav.hpp"
#include "test_support.hpp"

namespace keyprobe {
namespace {

Waveform sine(double hz, double seconds, int rate = kDefaultSampleRate, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / rate));
  }
  return w;
}

// Frequency with the largest DFT magnitude on a 0.25 Hz grid in [lo, hi].
double dominant_hz(const Waveform& w, std::size_t begin, std::size_t count, double lo, double hi) {
  double best_f = lo, best = -1.0;
  for (double f = lo; f <= hi; f += 0.25) {
    double re = 0.0, im = 0.0;
    const double step = 2.0 * std::numbers::pi * f / w.sample_rate;
    for (std::size_t i = 0; i < count; ++i) {
      const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / count);
      const double x = hann * w.samples[begin + i];
      re += x * std::cos(step * i);
      im -= x * std::sin(step * i);
    }
    const double mag = re * re + im * im;
    if (mag > best) {
      best = mag;
      best_f = f;
    }
  }
  return best_f;
}

TEST(FrameCount, Examples) {
  EXPECT_EQ(frame_count(2048, 2048, 512), 1);
  EXPECT_EQ(frame_count(2559, 2048, 512), 1);
  EXPECT_EQ(frame_count(2560, 2048, 512), 2);
  EXPECT_EQ(frame_count(16000, 2048, 512), 28);
  EXPECT_THROW(frame_count(2047, 2048, 512), DataError);
}

TEST(FrameCount, FormulaAndInverse) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 1000; ++t) {
    const int window = 2 + static_cast<int>(rng() % 4096);
    const int hop = 1 + static_cast<int>(rng() % 1024);
    const std::size_t len = static_cast<std::size_t>(window) + rng() % 100000;
    const int n = frame_count(len, window, hop);
    EXPECT_EQ(n, static_cast<int>((len - window) / hop) + 1);
    // the last frame fits, one more would not
    EXPECT_LE(static_cast<std::size_t>(n - 1) * hop + window, len);
    EXPECT_GT(static_cast<std::size_t>(n) * hop + window, len);
    const std::size_t need = samples_for_frames(n, window, hop);
    EXPECT_EQ(frame_count(need, window, hop), n);
    if (need > static_cast<std::size_t>(window)) EXPECT_EQ(frame_count(need - 1, window, hop), n - 1);
  }
}

TEST(MelScale, RoundTripAndMonotone) {
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-9);
  double prev = -1.0;
  for (double hz = 0.0; hz <= 8000.0; hz += 37.0) {
    EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-7);
    EXPECT_GT(hz_to_mel(hz), prev);
    prev = hz_to_mel(hz);
  }
}

TEST(MelFilterbank, CentresIncreaseAndRowsPeakNearCentre) {
  const MelConfig cfg;
  const MelFilterbank bank = mel_filterbank(cfg);
  ASSERT_EQ(bank.n_mels, 128);
  ASSERT_EQ(bank.n_bins, 1025);
  for (int m = 1; m < bank.n_mels; ++m) EXPECT_GT(bank.center_hz[m], bank.center_hz[m - 1]);
  for (int m = 0; m < bank.n_mels; ++m) {
    double mx = 0.0;
    for (int k = 0; k < bank.n_bins; ++k) {
      const double w = bank.weights[static_cast<std::size_t>(m) * bank.n_bins + k];
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
      mx = std::max(mx, w);
    }
    EXPECT_GT(mx, 0.0);
  }
}

TEST(MelFilterbank, RejectsEmptyFilters) {
  MelConfig cfg;
  cfg.window = 64;
  cfg.n_mels = 128;
  EXPECT_THROW(mel_filterbank(cfg), UsageError);
  MelConfig bad;
  bad.fmax = 9000.0;
  EXPECT_THROW(mel_filterbank(bad), UsageError);
}

TEST(MelSpectrogram, MatchesNaiveDftOracle) {
  MelConfig cfg;
  cfg.window = 256;
  cfg.hop = 96;
  cfg.n_mels = 12;
  cfg.fmin = 60.0;
  cfg.fmax = 7000.0;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  Waveform w;
  w.samples.resize(1000);
  for (auto& s : w.samples) s = static_cast<float>(u(rng));
  const MelSpectrogram mel = mel_spectrogram(w, cfg);
  ASSERT_EQ(mel.n_frames, (1000 - 256) / 96 + 1);
  ASSERT_EQ(mel.n_mels, 12);

  // Triangular filters from their definition: equally spaced HTK Mel edges.
  const auto to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  const auto to_hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> edges;
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges.push_back(to_hz(to_mel(60.0) + (to_mel(7000.0) - to_mel(60.0)) * i / (cfg.n_mels + 1)));
  }
  const int n = cfg.window;
  for (int t = 0; t < mel.n_frames; ++t) {
    std::vector<double> power(n / 2 + 1);
    for (int k = 0; k <= n / 2; ++k) {
      double re = 0.0, im = 0.0;
      for (int i = 0; i < n; ++i) {
        const double x = w.samples[static_cast<std::size_t>(t * cfg.hop + i)] *
                         (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n));
        re += x * std::cos(2.0 * std::numbers::pi * k * i / n);
        im -= x * std::sin(2.0 * std::numbers::pi * k * i / n);
      }
      power[static_cast<std::size_t>(k)] = re * re + im * im;
    }
    for (int m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (int k = 0; k <= n / 2; ++k) {
        const double f = k * static_cast<double>(cfg.sample_rate) / n;
        double tri = 0.0;
        if (f > edges[m] && f <= edges[m + 1]) tri = (f - edges[m]) / (edges[m + 1] - edges[m]);
        if (f > edges[m + 1] && f < edges[m + 2]) tri = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
        e += tri * power[static_cast<std::size_t>(k)];
      }
      EXPECT_NEAR(mel.at(m, t), std::log(1e-5 + e), 1e-4) << "frame " << t << " band " << m;
    }
  }
}

TEST(MelSpectrogram, PureToneLandsInExpectedBand) {
  const MelSpectrogram mel = mel_spectrogram(sine(440.0, 1.0));
  for (int t = 0; t < mel.n_frames; ++t) {
    int best = 0;
    for (int m = 1; m < mel.n_mels; ++m) {
      if (mel.at(m, t) > mel.at(best, t)) best = m;
    }
    EXPECT_NEAR(best, 24, 1) << "frame " << t;
  }
}

TEST(MelSpectrogram, LouderInputNeverLowersEnergy) {
  const Waveform quiet = sine(1000.0, 0.5, kDefaultSampleRate, 0.1);
  const Waveform loud = sine(1000.0, 0.5, kDefaultSampleRate, 0.4);
  const MelSpectrogram a = mel_spectrogram(quiet), b = mel_spectrogram(loud);
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_GE(b.data[i], a.data[i] - 1e-5f);
}

TEST(MelSpectrogram, SliceEqualsCroppedInput) {
  const Waveform w = sine(300.0, 1.0);
  const MelSpectrogram full = mel_spectrogram(w);
  Waveform cropped = w;
  cropped.samples.erase(cropped.samples.begin(), cropped.samples.begin() + 5 * 512);
  cropped.samples.resize(samples_for_frames(10, 2048, 512));
  const MelSpectrogram part = mel_spectrogram(cropped);
  const MelSpectrogram slice = full.slice_frames(5, 10);
  ASSERT_EQ(part.data.size(), slice.data.size());
  for (std::size_t i = 0; i < part.data.size(); ++i) EXPECT_FLOAT_EQ(part.data[i], slice.data[i]);
  EXPECT_THROW(full.slice_frames(full.n_frames - 2, 5), DataError);
}

TEST(MelSpectrogram, Errors) {
  Waveform short_clip;
  short_clip.samples.assign(100, 0.0f);
  EXPECT_THROW(mel_spectrogram(short_clip), DataError);
  Waveform other_rate = sine(440.0, 1.0, 22050);
  EXPECT_THROW(mel_spectrogram(other_rate), DataError);
}

TEST(Validate, RejectsNonFinite) {
  Waveform w = sine(440.0, 0.1);
  EXPECT_NO_THROW(validate(w));
  w.samples[3] = std::nanf("");
  EXPECT_THROW(validate(w), DataError);
}

TEST(PitchShift, ZeroIsIdentity) {
  const Waveform w = sine(440.0, 1.0);
  EXPECT_EQ(pitch_shift(w, 0).samples, w.samples);
}

TEST(PitchShift, PreservesLengthAndMovesPeak) {
  const Waveform w = sine(440.0, 2.0);
  const struct {
    int n;
    double hz;
  } cases[] = {{12, 880.0}, {1, 466.16}, {-2, 392.0}, {5, 587.33}};
  for (const auto& c : cases) {
    if (std::abs(c.n) > 6) {
      const Waveform s = pitch_shift(w, c.n, 12);
      ASSERT_EQ(s.size(), w.size());
      EXPECT_NEAR(dominant_hz(s, 8000, 8192, 800.0, 960.0), c.hz, c.hz * 0.005);
    } else {
      const Waveform s = pitch_shift(w, c.n);
      ASSERT_EQ(s.size(), w.size());
      double e_in = 0.0, e_out = 0.0;
      for (std::size_t i = 4000; i < 28000; ++i) {
        e_in += w.samples[i] * w.samples[i];
        e_out += s.samples[i] * s.samples[i];
      }
      EXPECT_NEAR(std::sqrt(e_out / e_in), 1.0, 0.1);
      EXPECT_NEAR(dominant_hz(s, 8000, 8192, c.hz - 40.0, c.hz + 40.0), c.hz, c.hz * 0.005);
    }
  }
  EXPECT_NEAR(dominant_hz(w, 8000, 8192, 400.0, 480.0), 440.0, 1.0);
}

TEST(PitchShift, BoundsAndErrors) {
  const Waveform w = sine(440.0, 0.5);
  EXPECT_THROW(pitch_shift(w, 7), UsageError);
  EXPECT_THROW(pitch_shift(w, -7), UsageError);
  EXPECT_NO_THROW(pitch_shift(w, 6));
  EXPECT_THROW(pitch_shift(Waveform{}, 1), DataError);
}

TEST(Resample, LengthAndFrequency) {
  const Waveform w = sine(440.0, 1.0, 22050);
  const Waveform r = resample_linear(w, 16000);
  EXPECT_EQ(r.sample_rate, 16000);
  EXPECT_NEAR(static_cast<double>(r.size()), 16000.0, 2.0);
  EXPECT_NEAR(dominant_hz(r, 2000, 8192, 400.0, 480.0), 440.0, 1.0);
}

TEST(Wav, Pcm16RoundTrip) {
  testing::TempDir dir;
  const Waveform w = sine(523.25, 0.3);
  write_wav(dir / "a.wav", w);
  const Waveform r = read_wav(dir / "a.wav");
  ASSERT_EQ(r.size(), w.size());
  EXPECT_EQ(r.sample_rate, w.sample_rate);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 1.0 / 32767.0);
}

TEST(Wav, Float32RoundTripIsExact) {
  testing::TempDir dir;
  const Waveform w = sine(523.25, 0.3);
  write_wav(dir / "a.wav", w, WavEncoding::kFloat32);
  EXPECT_EQ(read_wav(dir / "a.wav").samples, w.samples);
}

void put_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u16(std::ofstream& f, std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); }

TEST(Wav, StereoIsAveraged) {
  testing::TempDir dir;
  const std::vector<std::int16_t> frames = {1000, 3000, -2000, 2000, 0, 0, 16000, -16000};
  {
    std::ofstream f(dir / "s.wav", std::ios::binary);
    f.write("RIFF", 4);
    put_u32(f, 36 + static_cast<std::uint32_t>(frames.size() * 2));
    f.write("WAVEfmt ", 8);
    put_u32(f, 16);
    put_u16(f, 1);
    put_u16(f, 2);
    put_u32(f, 16000);
    put_u32(f, 16000 * 4);
    put_u16(f, 4);
    put_u16(f, 16);
    f.write("data", 4);
    put_u32(f, static_cast<std::uint32_t>(frames.size() * 2));
    f.write(reinterpret_cast<const char*>(frames.data()), static_cast<std::streamsize>(frames.size() * 2));
  }
  const Waveform r = read_wav(dir / "s.wav");
  ASSERT_EQ(r.size(), 4u);
  EXPECT_NEAR(r.samples[0], 2000.0 / 32768.0, 1e-4);
  EXPECT_NEAR(r.samples[1], 0.0, 1e-6);
  EXPECT_NEAR(r.samples[3], 0.0, 1e-6);
}

TEST(Wav, ResamplesToTarget) {
  testing::TempDir dir;
  write_wav(dir / "a.wav", sine(440.0, 1.0, 44100));
  const Waveform r = read_wav(dir / "a.wav");
  EXPECT_EQ(r.sample_rate, 16000);
  EXPECT_NEAR(static_cast<double>(r.size()), 16000.0, 2.0);
  EXPECT_EQ(read_wav(dir / "a.wav", 0).sample_rate, 44100);
}

TEST(Wav, MissingAndCorruptFiles) {
  testing::TempDir dir;
  EXPECT_THROW(read_wav(dir / "missing.wav"), DataError);
  std::ofstream(dir / "junk.wav") << "not a wav file at all";
  EXPECT_THROW(read_wav(dir / "junk.wav"), DataError);
}

}  // namespace
}  // namespace keyprobe
