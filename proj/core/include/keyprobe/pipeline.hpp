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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyprobe/audio.hpp"
#include "keyprobe/augmap.hpp"
#include "keyprobe/contrastive.hpp"
#include "keyprobe/encoder.hpp"
#include "keyprobe/key.hpp"
#include "keyprobe/keyeval.hpp"
#include "keyprobe/probe.hpp"

namespace keyprobe {

struct SynthSettings {
  double duration_s = 6.5;
  int harmonics = 4;
  double tempo_bpm = 120.0;
  double noise_db = -30.0;
};

// Every setting of a run. Stage seeds are derived from `seed` by name when
// the pipeline runs, so one root seed fixes all randomness.
struct PipelineConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  std::size_t context_len = 100000;
  double val_fraction = 0.1;
  int shift_min = -6;
  int shift_max = 6;
  std::filesystem::path cache_dir;  // empty: KEYPROBE_CACHE_DIR or default
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;
  std::filesystem::path unlabeled_manifest;

  MelConfig mel;
  EncoderConfig encoder;
  PretrainConfig pretrain;
  ProbeArch probe = ProbeArch::billboard_reference();
  TrainConfig train;
  SynthSettings synth;

  // Range and consistency checks; no filesystem access.
  void validate() const;
  std::filesystem::path resolved_cache_dir() const;
};

// INI-style text: [section] headers and key = value lines. Unknown sections
// or keys and malformed values throw UsageError naming the key.
PipelineConfig parse_config(std::istream& is, const std::string& source = "<config>");
PipelineConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& os, const PipelineConfig& cfg);

// "section.key=value"
void apply_override(PipelineConfig& cfg, const std::string& assignment);
// Every "section.key" the parser accepts, in file order.
std::vector<std::string> config_keys();

nlohmann::json config_snapshot(const PipelineConfig& cfg);

// Provenance of one command invocation.
struct RunRecord {
  std::string command;
  nlohmann::json config;
  std::string started;
  std::string finished;
  std::vector<std::string> artifacts;
  std::map<std::string, std::string> input_hashes;  // path -> git-style blob hash
  nlohmann::json results = nlohmann::json::object();
};

void write_run_record(const std::filesystem::path& path, const RunRecord& record);
RunRecord read_run_record(const std::filesystem::path& path);
std::string utc_timestamp();

using Logger = std::function<void(const std::string&)>;

// ---- synth-data

struct SynthDataOptions {
  std::filesystem::path out_dir;
  std::vector<Key> keys;  // empty: all 24
  int clips_per_key = 10;
  std::string prefix = "clip";
};

// Writes WAVs and manifest.csv (paths relative to out_dir). Returns the
// manifest path.
std::filesystem::path cmd_synth_data(const PipelineConfig& cfg, const SynthDataOptions& options,
                                     const Logger& log = {});

// Seed of clip k of `key` in a synth-data run.
std::uint64_t synth_clip_seed(std::uint64_t root, const std::string& prefix, const Key& key, int k);
std::string synth_clip_name(const std::string& prefix, const Key& key, int k);

// ---- pretrain

struct PretrainOptions {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
};

// Checkpoint plus loss.csv and run.json inside out_dir.
PretrainResult cmd_pretrain(const PipelineConfig& cfg, const PretrainOptions& options,
                            const Logger& log = {});

// ---- extract

struct ExtractOptions {
  std::filesystem::path manifest;
  std::filesystem::path checkpoint;
  std::vector<int> shifts{0};
};

struct ExtractSummary {
  std::size_t entries = 0;
  std::size_t cache_hits = 0;
  std::size_t computed = 0;
  std::string checkpoint_hash;
  std::vector<LabeledFeature> features;
};

// Resolves manifest entries against the manifest's directory.
std::vector<ManifestEntry> load_resolved_manifest(const std::filesystem::path& manifest);

// Unlabeled clip list: one path per line, or a `path,key` manifest whose key
// column is ignored. Blank lines and lines starting with '#' are skipped.
// Relative paths resolve against the list's directory.
std::vector<std::filesystem::path> load_clip_list(const std::filesystem::path& list);

// Throws DataError if the checkpoint frontend differs from the configured one
// in sample rate or Mel bands.
void check_frontend(const EncoderModel& model, const MelConfig& configured);

ExtractSummary cmd_extract(const PipelineConfig& cfg, const ExtractOptions& options,
                           const Logger& log = {});

// ---- train-probe

struct TrainProbeOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
};

TrainedProbe cmd_train_probe(const PipelineConfig& cfg, const TrainProbeOptions& options,
                             const Logger& log = {});

// ---- grid-search

struct GridSearchOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path out_csv;
  std::string dataset = "dataset";
  std::size_t max_archs = 0;
  std::size_t max_configs = 0;
  bool dry_run = false;
};

// Dry run writes the enumeration to `out` and trains nothing.
std::vector<GridRow> cmd_grid_search(const PipelineConfig& cfg, const GridSearchOptions& options,
                                     std::ostream& out, const Logger& log = {});

// ---- evaluate

struct EvaluateOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path probe_dir;
  std::filesystem::path predictions;  // alternative: path,key estimates
  std::filesystem::path out_csv;
  std::string label = "model";
  FifthRule fifth_rule = FifthRule::kAscending;
};

EvalReport cmd_evaluate(const PipelineConfig& cfg, const EvaluateOptions& options,
                        std::ostream& out, const Logger& log = {});

// Pairs estimates with references by path; throws DataError on a missing or
// duplicated path.
EvalReport evaluate_manifests(std::span<const ManifestEntry> references,
                              std::span<const ManifestEntry> estimates,
                              FifthRule rule = FifthRule::kAscending);

// ---- analyze-aug

struct AnalyzeAugOptions {
  std::filesystem::path manifest;
  std::filesystem::path checkpoint;
  std::vector<Augmentation> augmentations = default_augmentations();
  std::filesystem::path out_csv;
  std::filesystem::path pca_dir;  // optional coordinate dumps
  std::size_t max_clips = 0;      // 0: all
};

std::vector<AugMapReport> cmd_analyze_aug(const PipelineConfig& cfg, const AnalyzeAugOptions& options,
                                          const Logger& log = {});

}  // namespace keyprobe
