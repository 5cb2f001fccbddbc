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
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "keyprobe/audio.hpp"
#include "keyprobe/encoder.hpp"

namespace keyprobe {

// Clean embeddings X and the embeddings Y of their augmented counterparts,
// row-aligned by clip.
struct PairedEmbeddings {
  Eigen::MatrixXd X;
  Eigen::MatrixXd Y;
  std::string augmentation;
  std::string params;
  std::vector<std::string> clip_ids;
};

// y = x W + b
struct LinearMap {
  Eigen::MatrixXd W;
  Eigen::RowVectorXd b;
  double lambda = 0.0;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
};

struct AugMapReport {
  std::string augmentation;
  std::string params;
  double lambda = 0.0;
  std::size_t n_train = 0;
  std::size_t n_heldout = 0;
  double train_mse = 0.0;
  double heldout_mse = 0.0;
  double heldout_cosine = 0.0;  // mean cosine distance
  double identity_train_mse = 0.0;
  double identity_heldout_mse = 0.0;
  double identity_heldout_cosine = 0.0;
};

// 1e-3 * trace(X^T X) / dim
double default_ridge(const Eigen::MatrixXd& X);

// Minimises |X W + b - Y|^2 + lambda |W|^2 with an unpenalised bias, via the
// normal equations on centred data. lambda == 0 with a singular system
// throws DataError.
LinearMap solve_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda);

// Mean squared error per element, and mean of (1 - cosine) per row.
double mean_squared_error(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
double mean_cosine_distance(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

struct LinearMapFit {
  LinearMap map;
  AugMapReport report;
};

// Shuffled 80/20 split of rows, ridge fit on the first part, residuals of the
// fit and of the identity map on both parts. lambda defaults to
// default_ridge of the training rows.
LinearMapFit fit_linear_map(const PairedEmbeddings& pairs, std::optional<double> lambda = {},
                            std::uint64_t seed = 0, double train_fraction = 0.8);

enum class AugKind { kPitch, kGain, kNoise, kLowpass, kHighpass };

struct Augmentation {
  AugKind kind = AugKind::kGain;
  double amount = 0.0;  // semitones, dB, noise dB re signal RMS, or cutoff Hz

  std::string name() const;
  std::string params() const;
  // `seed` only matters for noise.
  Waveform apply(const Waveform& w, std::uint64_t seed) const;
};

// "pitch:+2", "gain:-6", "noise:-20", "lowpass:1000", "highpass:500"
Augmentation parse_augmentation(const std::string& text);
std::vector<Augmentation> default_augmentations();

// Bilinear-transform one-pole filters, -3 dB at the cutoff.
Waveform first_order_lowpass(const Waveform& w, double cutoff_hz);
Waveform first_order_highpass(const Waveform& w, double cutoff_hz);
Waveform apply_gain_db(const Waveform& w, double db);
Waveform add_noise(const Waveform& w, double noise_db, std::uint64_t seed);

struct AugAnalysisOptions {
  std::size_t context_len = 100000;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct AugAnalysis {
  std::vector<AugMapReport> reports;
  std::vector<PairedEmbeddings> pairs;
};

// Clip embedding = mean of its window embeddings. One report per augmentation,
// in request order.
AugAnalysis aug_linearity_report(std::span<const Waveform> clips,
                                 std::span<const std::string> clip_ids,
                                 const EncoderModel& encoder,
                                 std::span<const Augmentation> augmentations,
                                 const AugAnalysisOptions& options = {});

void write_aug_report_csv(std::ostream& os, std::span<const AugMapReport> reports);
void write_aug_report_csv(const std::filesystem::path& path, std::span<const AugMapReport> reports);

// First two principal components of the stacked clean and augmented rows:
// clip_id,pc1,pc2,is_augmented
void write_pca_coordinates(std::ostream& os, const PairedEmbeddings& pairs);

}  // namespace keyprobe
