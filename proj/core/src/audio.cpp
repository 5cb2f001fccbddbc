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

#include "keyprobe/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <string>

#include "keyprobe/error.hpp"

namespace keyprobe {
namespace {

// The FFTW planner is not reentrant; execution on distinct buffers is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<double> hann_periodic(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

void validate_config(const MelConfig& cfg) {
  if (cfg.sample_rate <= 0 || cfg.n_mels <= 0 || cfg.window <= 1 || cfg.hop <= 0) {
    throw UsageError("invalid Mel configuration");
  }
  if (cfg.fmin < 0.0 || cfg.effective_fmax() <= cfg.fmin ||
      cfg.effective_fmax() > 0.5 * cfg.sample_rate + 1e-9) {
    throw UsageError("invalid Mel frequency range");
  }
  if (!(cfg.log_eps > 0.0)) throw UsageError("log_eps must be positive");
}

}  // namespace

void validate(const Waveform& w) {
  if (w.sample_rate <= 0) throw DataError("sample rate must be positive");
  for (float s : w.samples) {
    if (!std::isfinite(s)) throw DataError("waveform contains non-finite samples");
  }
}

MelSpectrogram MelSpectrogram::slice_frames(int first, int count) const {
  if (first < 0 || count < 0 || first + count > n_frames) {
    throw DataError("frame slice [" + std::to_string(first) + ", " +
                    std::to_string(first + count) + ") outside " +
                    std::to_string(n_frames) + " frames");
  }
  MelSpectrogram out = *this;
  out.n_frames = count;
  const auto begin = data.begin() + static_cast<std::ptrdiff_t>(first) * n_mels;
  out.data.assign(begin, begin + static_cast<std::ptrdiff_t>(count) * n_mels);
  return out;
}

int frame_count(std::size_t length, int window, int hop) {
  if (length < static_cast<std::size_t>(window)) {
    throw DataError("input of " + std::to_string(length) +
                    " samples is shorter than the analysis window; need at least " +
                    std::to_string(window));
  }
  return static_cast<int>((length - static_cast<std::size_t>(window)) /
                          static_cast<std::size_t>(hop)) + 1;
}

std::size_t samples_for_frames(int frames, int window, int hop) {
  if (frames < 1) throw UsageError("frame count must be positive");
  return static_cast<std::size_t>(frames - 1) * static_cast<std::size_t>(hop) +
         static_cast<std::size_t>(window);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank mel_filterbank(const MelConfig& cfg) {
  validate_config(cfg);
  MelFilterbank bank;
  bank.n_mels = cfg.n_mels;
  bank.n_bins = cfg.window / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.effective_fmax());
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(cfg.n_mels + 1));
  }
  bank.center_hz.assign(edges.begin() + 1, edges.end() - 1);
  bank.weights.assign(static_cast<std::size_t>(bank.n_mels) * bank.n_bins, 0.0);
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.window;
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    double total = 0.0;
    for (int k = 0; k < bank.n_bins; ++k) {
      const double f = k * bin_hz;
      const double w = std::max(0.0, std::min((f - lo) / (mid - lo), (hi - f) / (hi - mid)));
      bank.weights[static_cast<std::size_t>(m) * bank.n_bins + k] = w;
      total += w;
    }
    if (total <= 0.0) {
      throw UsageError("Mel filter " + std::to_string(m) +
                       " covers no FFT bin; reduce n_mels or enlarge the window");
    }
  }
  return bank;
}

struct MelExtractor::Impl {
  int n = 0;
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;
  std::vector<double> window;
  // Sparse filterbank rows: first nonzero bin and the weights from there.
  std::vector<int> first_bin;
  std::vector<std::vector<double>> rows;

  explicit Impl(const MelConfig& cfg, const MelFilterbank& bank) : n(cfg.window) {
    in = fftw_alloc_real(static_cast<std::size_t>(n));
    out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    {
      std::lock_guard lock(fftw_planner_mutex());
      plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    }
    window = hann_periodic(n);
    for (int m = 0; m < bank.n_mels; ++m) {
      const double* row = bank.weights.data() + static_cast<std::size_t>(m) * bank.n_bins;
      int b = 0;
      while (b < bank.n_bins && row[b] == 0.0) ++b;
      int e = bank.n_bins;
      while (e > b && row[e - 1] == 0.0) --e;
      first_bin.push_back(b);
      rows.emplace_back(row + b, row + e);
    }
  }

  ~Impl() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(in);
    fftw_free(out);
  }
};

MelExtractor::MelExtractor(const MelConfig& cfg)
    : cfg_(cfg), bank_(mel_filterbank(cfg)), impl_(std::make_unique<Impl>(cfg, bank_)) {}

MelExtractor::~MelExtractor() = default;
MelExtractor::MelExtractor(MelExtractor&&) noexcept = default;
MelExtractor& MelExtractor::operator=(MelExtractor&&) noexcept = default;

MelSpectrogram MelExtractor::compute(const Waveform& w) const {
  if (w.sample_rate != cfg_.sample_rate) {
    throw DataError("waveform sample rate " + std::to_string(w.sample_rate) +
                    " does not match frontend rate " + std::to_string(cfg_.sample_rate));
  }
  const int frames = frame_count(w.size(), cfg_.window, cfg_.hop);
  MelSpectrogram mel;
  mel.n_mels = cfg_.n_mels;
  mel.n_frames = frames;
  mel.sample_rate = cfg_.sample_rate;
  mel.hop = cfg_.hop;
  mel.window = cfg_.window;
  mel.data.resize(static_cast<std::size_t>(frames) * cfg_.n_mels);

  Impl& im = *impl_;
  const int n_bins = cfg_.window / 2 + 1;
  std::vector<double> power(static_cast<std::size_t>(n_bins));
  for (int t = 0; t < frames; ++t) {
    const float* src = w.samples.data() + static_cast<std::size_t>(t) * cfg_.hop;
    for (int i = 0; i < im.n; ++i) im.in[i] = src[i] * im.window[static_cast<std::size_t>(i)];
    fftw_execute_dft_r2c(im.plan, im.in, im.out);
    for (int k = 0; k < n_bins; ++k) {
      power[static_cast<std::size_t>(k)] = im.out[k][0] * im.out[k][0] + im.out[k][1] * im.out[k][1];
    }
    float* dst = mel.data.data() + static_cast<std::size_t>(t) * cfg_.n_mels;
    for (int m = 0; m < cfg_.n_mels; ++m) {
      const auto& row = im.rows[static_cast<std::size_t>(m)];
      const double* p = power.data() + im.first_bin[static_cast<std::size_t>(m)];
      double acc = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * p[j];
      dst[m] = static_cast<float>(std::log(cfg_.log_eps + acc));
    }
  }
  return mel;
}

MelSpectrogram mel_spectrogram(const Waveform& w, const MelConfig& cfg) {
  return MelExtractor(cfg).compute(w);
}

Waveform resample_linear(const Waveform& w, int target_rate) {
  if (target_rate <= 0 || w.sample_rate <= 0) throw UsageError("invalid sample rate");
  if (target_rate == w.sample_rate || w.samples.empty()) {
    Waveform out = w;
    out.sample_rate = target_rate;
    return out;
  }
  const double step = static_cast<double>(w.sample_rate) / target_rate;
  const auto n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(w.size() - 1) / step)) + 1;
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto j = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(j);
    const float a = w.samples[j];
    const float b = j + 1 < w.size() ? w.samples[j + 1] : a;
    out.samples[i] = static_cast<float>(a + frac * (b - a));
  }
  return out;
}

Waveform pitch_shift(const Waveform& w, int semitones, int max_abs_semitones) {
  if (std::abs(semitones) > max_abs_semitones) {
    throw UsageError("pitch shift of " + std::to_string(semitones) +
                     " semitones exceeds the bound of " + std::to_string(max_abs_semitones));
  }
  if (w.samples.empty()) throw DataError("pitch_shift: empty waveform");
  if (semitones == 0) return w;
  const double ratio = std::pow(2.0, semitones / 12.0);
  const std::size_t length = w.size();

  // Reading the input at `ratio` samples per output sample multiplies every
  // frequency by `ratio` and shortens the signal by the same factor. The
  // phase vocoder below stretches that signal back to `length`, reading
  // analysis frames at hop kHop / ratio and writing them at hop kHop.
  constexpr int kN = 2048;
  constexpr int kHop = kN / 4;
  constexpr int kBins = kN / 2 + 1;
  const double n_fast = static_cast<double>(length - 1) / ratio + 1.0;
  const auto fast_at = [&](double pos) -> double {
    if (pos < 0.0 || pos > n_fast - 1.0) return 0.0;
    const double src = pos * ratio;
    const auto j = static_cast<std::size_t>(src);
    const double frac = src - static_cast<double>(j);
    const double a = w.samples[std::min(j, length - 1)];
    const double b = j + 1 < length ? w.samples[j + 1] : a;
    return a + frac * (b - a);
  };

  double* buf = fftw_alloc_real(kN);
  fftw_complex* spec = fftw_alloc_complex(kBins);
  fftw_plan forward = nullptr, inverse = nullptr;
  {
    std::lock_guard lock(fftw_planner_mutex());
    forward = fftw_plan_dft_r2c_1d(kN, buf, spec, FFTW_ESTIMATE);
    inverse = fftw_plan_dft_c2r_1d(kN, spec, buf, FFTW_ESTIMATE);
  }
  const auto window = hann_periodic(kN);
  const double analysis_hop = kHop / ratio;
  std::vector<double> prev_phase(kBins, 0.0), out_phase(kBins, 0.0);
  std::vector<double> acc(length, 0.0), wsum(length, 0.0);
  const auto n_frames = length / kHop + 2;
  for (std::size_t m = 0; m < n_frames; ++m) {
    const double in_start = static_cast<double>(m) * analysis_hop - kN / 2;
    for (int k = 0; k < kN; ++k) buf[k] = window[static_cast<std::size_t>(k)] * fast_at(in_start + k);
    fftw_execute_dft_r2c(forward, buf, spec);
    for (int b = 0; b < kBins; ++b) {
      const double mag = std::hypot(spec[b][0], spec[b][1]);
      const double phase = std::atan2(spec[b][1], spec[b][0]);
      const auto bi = static_cast<std::size_t>(b);
      if (m == 0) {
        out_phase[bi] = phase;
      } else {
        const double omega = 2.0 * std::numbers::pi * b / kN;
        double dev = phase - prev_phase[bi] - omega * analysis_hop;
        dev -= 2.0 * std::numbers::pi * std::round(dev / (2.0 * std::numbers::pi));
        out_phase[bi] += (omega + dev / analysis_hop) * kHop;
      }
      prev_phase[bi] = phase;
      spec[b][0] = mag * std::cos(out_phase[bi]);
      spec[b][1] = mag * std::sin(out_phase[bi]);
    }
    fftw_execute_dft_c2r(inverse, spec, buf);
    const auto out_start = static_cast<std::ptrdiff_t>(m * kHop) - kN / 2;
    for (int k = 0; k < kN; ++k) {
      const std::ptrdiff_t t = out_start + k;
      if (t < 0 || t >= static_cast<std::ptrdiff_t>(length)) continue;
      const double g = window[static_cast<std::size_t>(k)];
      acc[static_cast<std::size_t>(t)] += g * buf[k] / kN;
      wsum[static_cast<std::size_t>(t)] += g * g;
    }
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(forward);
    fftw_destroy_plan(inverse);
  }
  fftw_free(buf);
  fftw_free(spec);

  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(length);
  for (std::size_t t = 0; t < length; ++t) {
    const double v = wsum[t] > 1e-3 ? acc[t] / wsum[t] : 0.0;
    out.samples[t] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return out;
}

}  // namespace keyprobe
