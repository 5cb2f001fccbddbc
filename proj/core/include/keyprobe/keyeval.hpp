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

#include <array>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "keyprobe/key.hpp"

namespace keyprobe {

enum class Relation { kCorrect = 0, kFifth, kRelative, kParallel, kOther };

inline constexpr std::size_t kNumRelations = 5;

std::string_view relation_name(Relation r);

enum class FifthRule {
  kAscending,       // estimate a perfect fifth above the reference
  kBothDirections,  // above or below
};

// MIREX-style relationship of an estimate to a reference key. Categories are
// checked in the order correct > fifth > relative > parallel > other.
Relation classify_relation(const Key& reference, const Key& estimate,
                           FifthRule rule = FifthRule::kAscending);

// Percentages in, weighted percentage out:
// correct + 0.5 * fifth + 0.3 * relative + 0.2 * parallel.
double weighted_score(double correct, double fifth, double relative,
                      double parallel);

struct EvalReport {
  std::array<std::size_t, kNumRelations> counts{};
  std::array<double, kNumRelations> percent{};
  double weighted = 0.0;
  std::size_t n_tracks = 0;

  double correct() const { return percent[0]; }
};

EvalReport evaluate(std::span<const Key> predictions,
                    std::span<const Key> references,
                    FifthRule rule = FifthRule::kAscending);

// CSV with a header row mirroring the results table columns.
void write_report_csv(std::ostream& os, const EvalReport& report,
                      const std::string& label);
void write_report_csv(const std::filesystem::path& path,
                      const EvalReport& report, const std::string& label);
std::string format_report_table(const EvalReport& report,
                                const std::string& label);

// Softmax per window, average of the probability vectors, argmax with ties
// going to the lowest class index. Each row of `window_logits` holds 24 values.
int predict_class(std::span<const std::vector<double>> window_logits);
Key predict_track(std::span<const std::vector<double>> window_logits);

// GiantSteps-style annotation: a text file holding a single key string.
Key load_key_file(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;
  Key key;
};

// `path,key` CSV (header row optional). Relative paths are returned as written.
std::vector<ManifestEntry> load_key_manifest(const std::filesystem::path& path);
void write_key_manifest(const std::filesystem::path& path,
                        std::span<const ManifestEntry> entries);

}  // namespace keyprobe
