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

#include "keyprobe/keyeval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "keyprobe/error.hpp"

namespace keyprobe {
namespace {

int mod12(int v) { return ((v % 12) + 12) % 12; }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::kCorrect: return "correct";
    case Relation::kFifth: return "fifth";
    case Relation::kRelative: return "relative";
    case Relation::kParallel: return "parallel";
    case Relation::kOther: return "other";
  }
  return "other";
}

Relation classify_relation(const Key& reference, const Key& estimate,
                           FifthRule rule) {
  if (reference == estimate) return Relation::kCorrect;
  const int interval = mod12(estimate.tonic - reference.tonic);
  if (reference.mode == estimate.mode) {
    if (interval == 7 || (rule == FifthRule::kBothDirections && interval == 5)) {
      return Relation::kFifth;
    }
    return Relation::kOther;
  }
  // Modes differ from here on.
  if (reference.mode == Mode::kMajor && interval == 9) return Relation::kRelative;
  if (reference.mode == Mode::kMinor && interval == 3) return Relation::kRelative;
  if (interval == 0) return Relation::kParallel;
  return Relation::kOther;
}

double weighted_score(double correct, double fifth, double relative,
                      double parallel) {
  return correct + 0.5 * fifth + 0.3 * relative + 0.2 * parallel;
}

EvalReport evaluate(std::span<const Key> predictions,
                    std::span<const Key> references, FifthRule rule) {
  if (predictions.size() != references.size()) {
    throw DataError("evaluate: " + std::to_string(predictions.size()) +
                    " predictions for " + std::to_string(references.size()) +
                    " references");
  }
  if (references.empty()) throw DataError("evaluate: no tracks");
  EvalReport report;
  report.n_tracks = references.size();
  for (std::size_t i = 0; i < references.size(); ++i) {
    ++report.counts[static_cast<std::size_t>(
        classify_relation(references[i], predictions[i], rule))];
  }
  for (std::size_t c = 0; c < kNumRelations; ++c) {
    report.percent[c] = 100.0 * static_cast<double>(report.counts[c]) /
                        static_cast<double>(report.n_tracks);
  }
  report.weighted = weighted_score(report.percent[0], report.percent[1],
                                   report.percent[2], report.percent[3]);
  return report;
}

void write_report_csv(std::ostream& os, const EvalReport& report,
                      const std::string& label) {
  os << "model,n_tracks,weighted,correct,fifth,relative,parallel,other\n";
  os << label << ',' << report.n_tracks << std::fixed << std::setprecision(2)
     << ',' << report.weighted;
  for (double p : report.percent) os << ',' << p;
  os << '\n';
  os.unsetf(std::ios::floatfield);
}

void write_report_csv(const std::filesystem::path& path,
                      const EvalReport& report, const std::string& label) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_report_csv(out, report, label);
}

std::string format_report_table(const EvalReport& report,
                                const std::string& label) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "Model" << std::right;
  for (const char* h : {"Weighted", "Correct", "Fifth", "Relative", "Parallel", "Other"}) {
    os << std::setw(10) << h;
  }
  os << "\n" << std::left << std::setw(20) << label << std::right << std::fixed
     << std::setprecision(2) << std::setw(10) << report.weighted;
  for (double p : report.percent) os << std::setw(10) << p;
  os << "\n(" << report.n_tracks << " tracks)\n";
  return os.str();
}

int predict_class(std::span<const std::vector<double>> window_logits) {
  if (window_logits.empty()) throw DataError("predict_track: no windows");
  std::vector<double> mean(kNumKeyClasses, 0.0);
  for (const auto& logits : window_logits) {
    if (logits.size() != static_cast<std::size_t>(kNumKeyClasses)) {
      throw DataError("predict_track: expected 24 logits per window");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    for (std::size_t c = 0; c < logits.size(); ++c) {
      mean[c] += std::exp(logits[c] - mx) / z;
    }
  }
  for (double& v : mean) v /= static_cast<double>(window_logits.size());
  return static_cast<int>(std::max_element(mean.begin(), mean.end()) - mean.begin());
}

Key predict_track(std::span<const std::vector<double>> window_logits) {
  return key_from_class(predict_class(window_logits));
}

Key load_key_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read key file " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (!line.empty()) return parse_key(line);
  }
  throw DataError("key file " + path.string() + " is empty");
}

std::vector<ManifestEntry> load_key_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected 'path,key'");
    }
    std::string file = trim(line.substr(0, comma));
    std::string key = trim(line.substr(comma + 1));
    if (lineno == 1 && file == "path" && key == "key") continue;
    try {
      entries.push_back({file, parse_key(key)});
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return entries;
}

void write_key_manifest(const std::filesystem::path& path,
                        std::span<const ManifestEntry> entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "path,key\n";
  for (const auto& e : entries) out << e.path << ',' << format_key(e.key) << '\n';
  if (!out) throw DataError("failed writing manifest " + path.string());
}

}  // namespace keyprobe
