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
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyprobe/encoder.hpp"
#include "keyprobe/error.hpp"

namespace keyprobe {

// Cosine similarity; throws DataError on size mismatch or a zero vector.
double cosine_sim(std::span<const double> a, std::span<const double> b);

// Mean NT-Xent loss over 2N embeddings ordered (view a of clip 1, view b of
// clip 1, view a of clip 2, ...). Uses max-subtracted log-sum-exp. A size-2
// batch is accepted and yields 0, since the positive is the only candidate.
double ntxent_loss(std::span<const std::vector<double>> batch, double temperature);

struct PretrainConfig {
  double temperature = 0.1;
  double mask_ratio = 0.9;
  int batch_size = 16;  // clips per step; the loss sees 2N views
  int steps = 1000;
  std::size_t clip_length = 100000;
  int projector_dim = 128;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int warmup_steps = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

struct ViewPair {
  TokenSequence a;
  TokenSequence b;
};

// One random hop-aligned crop of cfg.clip_length samples, its standardised
// log-Mel, then two independently masked copies of the patch tokens.
ViewPair make_views(const Waveform& clip, const PretrainConfig& cfg, const MelExtractor& mel,
                    const MelNorm& norm, int patch_frames, std::uint64_t seed);

// Same views as make_views, taken from the standardised spectrogram of the
// whole clip instead of recomputing the crop's spectrogram.
ViewPair make_views_from_mel(const MelSpectrogram& clip_mel, const PretrainConfig& cfg,
                             int patch_frames, std::uint64_t seed);

struct LossRecord {
  int step = 0;
  double loss = 0.0;
  double positive_cosine = 0.0;  // mean cosine between paired projections
};

void write_loss_csv(std::ostream& os, std::span<const LossRecord> curve);
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> curve);

struct PretrainResult {
  EncoderModel model;
  std::vector<LossRecord> curve;
};

// Thrown when a step produces NaN/Inf; carries the weights after the last
// completed step.
class PretrainDiverged : public NumericalError {
 public:
  PretrainDiverged(const std::string& what, EncoderModel last_good, std::vector<LossRecord> curve)
      : NumericalError(what), last_good_(std::move(last_good)), curve_(std::move(curve)) {}
  const EncoderModel& last_good() const { return last_good_; }
  const std::vector<LossRecord>& curve() const { return curve_; }

 private:
  EncoderModel last_good_;
  std::vector<LossRecord> curve_;
};

using PretrainProgress = std::function<void(const LossRecord&)>;

// Siamese contrastive pretraining: both views pass through the same encoder
// and projector; the projector is dropped from the returned model. `corpus`
// holds raw log-Mel spectrograms of whole clips; normalisation statistics are
// fitted on it and stored with the encoder.
PretrainResult pretrain(std::vector<MelSpectrogram> corpus, const PretrainConfig& cfg,
                        const EncoderConfig& enc_cfg, const MelConfig& mel_cfg,
                        const PretrainProgress& progress = {});

// Reads every WAV in `paths`, then pretrains as above.
PretrainResult pretrain_from_files(std::span<const std::filesystem::path> paths,
                                   const PretrainConfig& cfg, const EncoderConfig& enc_cfg,
                                   const MelConfig& mel_cfg, const PretrainProgress& progress = {});

}  // namespace keyprobe
