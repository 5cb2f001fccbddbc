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
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyprobe/autograd.hpp"
#include "keyprobe/checkpoint.hpp"
#include "keyprobe/encoder.hpp"
#include "keyprobe/key.hpp"
#include "keyprobe/keyeval.hpp"

namespace keyprobe {

// Probe head on frozen embeddings. hidden_layers == 0 is a linear probe;
// otherwise input -> hidden, ReLU, dropout, [hidden -> hidden, ReLU] -> classes.
struct ProbeArch {
  int hidden_layers = 1;
  int hidden_dim = 2048;
  double dropout = 0.75;
  int input_dim = 384;
  int classes = kNumKeyClasses;

  static ProbeArch linear_probe();
  static ProbeArch billboard_reference();   // 384 -> 2048, dropout 0.75 -> 24
  static ProbeArch giantsteps_reference();  // 384 -> 4096, dropout 0.99 -> 4096 -> 24

  // Two hidden layers of width 8192 are left out of the search space.
  bool excluded() const { return hidden_layers == 2 && hidden_dim == 8192; }
  void validate() const;
  std::string name() const;
};

void to_json(nlohmann::json& j, const ProbeArch& a);
void from_json(const nlohmann::json& j, ProbeArch& a);

// Closed-form count of weights and biases.
std::size_t probe_parameter_count(const ProbeArch& arch);

struct MixUpConfig {
  bool enabled = false;
  double alpha = 2.0;
  double beta = 5.0;
};

struct TrainConfig {
  int batch_size = 64;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  MixUpConfig mixup;
  int epochs = 200;
  int patience = 20;
  std::uint64_t seed = 0;

  void validate() const;
  std::string name() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Search spaces: 5 batch sizes x 4 learning rates x 4 weight decays x
// MixUp {off, Beta(2, 5)} = 160; {1, 2} hidden layers x 4 widths x 4 dropout
// rates minus (2, 8192) = 28. Optimizer grid entries inherit epochs, patience
// and seed from `base`.
std::vector<TrainConfig> optimizer_grid(const TrainConfig& base = {});
std::vector<ProbeArch> architecture_grid();

struct LabeledFeature {
  Embedding embedding;
  int label = 0;  // key class index
  std::string track_id;
  int window = 0;
  int shift = 0;  // semitones applied to the audio
};

template <typename T>
class Probe {
 public:
  Probe(const ProbeArch& arch, std::uint64_t seed);

  const ProbeArch& arch() const { return arch_; }
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;

  // [batch x input_dim] -> [batch x classes] logits.
  Var<T> forward(Tape<T>& tape, Var<T> x, bool training, std::uint64_t dropout_seed);

  // Eval-mode logits, one row per embedding.
  std::vector<std::vector<double>> logits(std::span<const Embedding> xs) const;

  std::vector<NamedTensor> export_tensors() const;
  void import_tensors(const Checkpoint& ckpt);

 private:
  template <typename Leaf>
  Var<T> forward_with(Tape<T>& tape, Var<T> x, bool training, std::uint64_t dropout_seed,
                      Leaf&& leaf) const;

  ProbeArch arch_;
  std::vector<Parameter<T>> weights_;  // per layer
  std::vector<Parameter<T>> biases_;
};

void save_probe(const std::filesystem::path& dir, const Probe<float>& probe,
                const nlohmann::json& extra = nlohmann::json::object());
Probe<float> load_probe(const std::filesystem::path& dir);

// Beta(alpha, beta) via the ratio of two gamma variates.
double sample_beta(double alpha, double beta, std::mt19937_64& rng);

struct MixedBatch {
  Tensor<float> features;  // [n x d]
  Tensor<float> targets;   // [n x classes], rows sum to 1
};

// Row i becomes lambda_i * row i + (1 - lambda_i) * row partner[i], on both
// features and targets.
MixedBatch mixup_with(const Tensor<float>& features, const Tensor<float>& targets,
                      std::span<const std::size_t> partner, std::span<const double> lambdas);

// Draws a random partner permutation and lambda_i ~ Beta(alpha, beta).
MixedBatch mixup_batch(const Tensor<float>& features, const Tensor<float>& targets,
                       const MixUpConfig& cfg, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_weighted = 0.0;
  double val_correct = 0.0;
};

struct TrainedProbe {
  Probe<float> probe;
  int best_epoch = -1;
  EvalReport best_val;
  std::vector<EpochRecord> history;
};

// Throws DataError when a track id appears in more than one split.
void check_track_disjoint(std::span<const LabeledFeature> a, std::span<const LabeledFeature> b);

// Window-averaged prediction per (track, shift) group; returns predicted and
// reference keys in group order.
struct TrackPredictions {
  std::vector<std::string> track_ids;
  std::vector<int> shifts;
  std::vector<Key> predicted;
  std::vector<Key> reference;
};
TrackPredictions predict_tracks(const Probe<float>& probe, std::span<const LabeledFeature> features);
Key predict_track(const Probe<float>& probe, std::span<const Embedding> windows);

// Cross-entropy training (soft targets under MixUp) with per-epoch validation
// on window-averaged track predictions. Returns the weights of the epoch with
// the best validation weighted score; stops after `patience` epochs without
// improvement.
TrainedProbe train_probe(std::span<const LabeledFeature> train, std::span<const LabeledFeature> val,
                         const ProbeArch& arch, const TrainConfig& cfg);

struct GridOptions {
  std::string dataset = "dataset";
  TrainConfig base;            // epochs, patience and seed for every cell
  std::size_t max_archs = 0;   // 0 = all 28
  std::size_t max_configs = 0; // 0 = all 160
  int threads = 1;
};

struct GridRow {
  ProbeArch arch;
  TrainConfig config;
  bool ok = false;
  std::string error;
  int best_epoch = -1;
  double val_weighted = 0.0;
  double val_correct = 0.0;
};

// Evenly spaced subset of `n` items of `all` (all of them when n == 0).
template <typename V>
std::vector<V> strided_subset(const std::vector<V>& all, std::size_t n) {
  if (n == 0 || n >= all.size()) return all;
  std::vector<V> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(all[i * all.size() / n]);
  return out;
}

// Trains every (architecture, optimizer config) cell and returns rows ranked
// by validation weighted score; failed cells are kept and ranked last.
std::vector<GridRow> grid_search(std::span<const LabeledFeature> train,
                                 std::span<const LabeledFeature> val, const GridOptions& options,
                                 const std::function<void(const GridRow&)>& on_row = {});

void write_grid_csv(std::ostream& os, std::span<const GridRow> rows, const std::string& dataset);
void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows,
                    const std::string& dataset);

struct TrackRef {
  std::string track_id;
  Key key;
};

// Audio of track `index` transposed by `shift` semitones. Must be safe to
// call concurrently.
using VariantSource = std::function<Waveform(std::size_t index, int shift)>;

// Featurises every (track, shift) variant with the frozen encoder and labels
// it with the transposed key. Output is ordered by track, then shift, then
// window, independent of `threads`.
std::vector<LabeledFeature> expand_with_shifts(std::span<const TrackRef> tracks,
                                               std::span<const int> shifts,
                                               const VariantSource& audio,
                                               const EncoderModel& encoder,
                                               std::size_t context_len, int threads = 1);

// Shifts lo..hi inclusive.
std::vector<int> shift_range(int lo, int hi);

// Deterministic track-level split: roughly `val_fraction` of the distinct
// track ids go to the second set.
std::pair<std::vector<std::string>, std::vector<std::string>> split_track_ids(
    std::vector<std::string> track_ids, double val_fraction, std::uint64_t seed);

}  // namespace keyprobe
