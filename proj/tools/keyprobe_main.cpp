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

#include <charconv>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "keyprobe/error.hpp"
#include "keyprobe/pipeline.hpp"

namespace {

using namespace keyprobe;

int parse_int(const std::string& s, const std::string& what) {
  int v = 0;
  const char* b = s.data();
  if (!s.empty() && s.front() == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw UsageError("bad " + what + " '" + s + "'");
  }
  return v;
}

// "-6..6", "0..0", "3" or "-2,0,2"
std::vector<int> parse_shifts(const std::string& text) {
  std::vector<int> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    out = shift_range(parse_int(text.substr(0, dots), "shift"), parse_int(text.substr(dots + 2), "shift"));
  } else {
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_int(item, "shift"));
  }
  if (out.empty()) throw UsageError("empty shift list");
  for (int s : out) {
    if (s < -6 || s > 6) throw UsageError("shift " + std::to_string(s) + " outside [-6, 6]");
  }
  return out;
}

std::vector<Key> parse_keys(const std::string& text) {
  if (text == "all") return {};
  std::vector<Key> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      out.push_back(parse_key(item));
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }
  return out;
}

struct Globals {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool quiet = false;

  PipelineConfig resolve() const {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    cfg.validate();
    return cfg;
  }

  Logger logger() const {
    if (quiet) return {};
    return [](const std::string& msg) { std::cerr << "[keyprobe] " << msg << '\n'; };
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Key estimation probes on contrastively pretrained audio embeddings", "keyprobe"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config_path, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a setting: section.key=value");
  app.add_option("--seed", g.seed, "Root seed");
  app.add_option("--threads", g.threads, "Worker threads");
  app.add_flag("-q,--quiet", g.quiet, "No progress output");

  auto* config = app.add_subcommand("config", "Print the resolved configuration");

  auto* synth = app.add_subcommand("synth-data", "Render labeled synthetic clips and a manifest");
  SynthDataOptions so;
  std::string keys_text = "all";
  synth->add_option("--out", so.out_dir, "Output directory")->required();
  synth->add_option("--keys", keys_text, "\"all\" or a comma-separated key list");
  synth->add_option("--clips-per-key", so.clips_per_key, "Clips per key")->check(CLI::PositiveNumber);
  synth->add_option("--prefix", so.prefix, "File name prefix");

  auto* pre = app.add_subcommand("pretrain", "Contrastive pretraining of the encoder");
  PretrainOptions po;
  pre->add_option("--manifest", po.manifest, "Manifest of unlabeled clips (default data.unlabeled_manifest)");
  pre->add_option("--out", po.out_dir, "Checkpoint directory")->required();

  auto* ext = app.add_subcommand("extract", "Cache frozen features per track variant");
  ExtractOptions eo;
  std::string shifts_text = "0..0";
  ext->add_option("--manifest", eo.manifest, "Labeled manifest")->required();
  ext->add_option("--ckpt", eo.checkpoint, "Encoder checkpoint")->required();
  ext->add_option("--context", "Context length in samples (run.context_len)")->each([&](const std::string& v) {
    g.overrides.push_back("run.context_len=" + v);
  });
  ext->add_option("--shifts", shifts_text, "Shift range lo..hi or list");
  ext->add_option("--out", "Cache root (run.cache_dir)")->each([&](const std::string& v) {
    g.overrides.push_back("run.cache_dir=" + v);
  });

  auto* tp = app.add_subcommand("train-probe", "Train the configured probe on data.train_manifest");
  TrainProbeOptions to;
  tp->add_option("--ckpt", to.checkpoint, "Encoder checkpoint")->required();
  tp->add_option("--out", to.out_dir, "Probe directory")->required();

  auto* gs = app.add_subcommand("grid-search", "Search probe architectures and optimizer settings");
  GridSearchOptions go;
  gs->add_option("--ckpt", go.checkpoint, "Encoder checkpoint");
  gs->add_option("--out", go.out_csv, "Results CSV");
  gs->add_option("--dataset", go.dataset, "Dataset name in the results");
  gs->add_option("--max-archs", go.max_archs, "Evenly spaced subset of architectures (0 = all)");
  gs->add_option("--max-configs", go.max_configs, "Evenly spaced subset of optimizer settings (0 = all)");
  gs->add_flag("--dry-run", go.dry_run, "Print the enumeration only");

  auto* ev = app.add_subcommand("evaluate", "Score predictions on data.test_manifest");
  EvaluateOptions vo;
  bool both_fifths = false;
  ev->add_option("--ckpt", vo.checkpoint, "Encoder checkpoint");
  ev->add_option("--probe", vo.probe_dir, "Probe directory");
  ev->add_option("--predictions", vo.predictions, "path,key estimates instead of a probe");
  ev->add_option("--out", vo.out_csv, "Report CSV");
  ev->add_option("--label", vo.label, "Row label");
  ev->add_flag("--fifths-both-ways", both_fifths, "Count descending fifths as fifth errors");

  auto* aa = app.add_subcommand("analyze-aug", "Fit linear maps from clean to augmented embeddings");
  AnalyzeAugOptions ao;
  std::vector<std::string> aug_texts;
  aa->add_option("--manifest", ao.manifest, "Clips to analyse")->required();
  aa->add_option("--ckpt", ao.checkpoint, "Encoder checkpoint")->required();
  aa->add_option("--aug", aug_texts, "Augmentation, e.g. pitch:+2 gain:-6 lowpass:1000 (repeatable)");
  aa->add_option("--out", ao.out_csv, "Report CSV")->required();
  aa->add_option("--pca-dir", ao.pca_dir, "Directory for principal-component coordinates");
  aa->add_option("--max-clips", ao.max_clips, "Use at most this many clips");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  const PipelineConfig cfg = g.resolve();
  const Logger log = g.logger();

  if (*config) {
    write_config(std::cout, cfg);
  } else if (*synth) {
    so.keys = parse_keys(keys_text);
    std::cout << cmd_synth_data(cfg, so, log).string() << '\n';
  } else if (*pre) {
    cmd_pretrain(cfg, po, log);
  } else if (*ext) {
    eo.shifts = parse_shifts(shifts_text);
    const ExtractSummary s = cmd_extract(cfg, eo, log);
    std::cout << s.entries << " entries, " << s.cache_hits << " cache hits, " << s.computed << " computed\n";
  } else if (*tp) {
    cmd_train_probe(cfg, to, log);
  } else if (*gs) {
    if (!go.dry_run && (go.checkpoint.empty() || go.out_csv.empty())) {
      throw UsageError("grid-search needs --ckpt and --out unless --dry-run is given");
    }
    cmd_grid_search(cfg, go, std::cout, log);
  } else if (*ev) {
    vo.fifth_rule = both_fifths ? FifthRule::kBothDirections : FifthRule::kAscending;
    cmd_evaluate(cfg, vo, std::cout, log);
  } else if (*aa) {
    if (!aug_texts.empty()) {
      ao.augmentations.clear();
      for (const auto& t : aug_texts) ao.augmentations.push_back(parse_augmentation(t));
    }
    for (const auto& r : cmd_analyze_aug(cfg, ao, log)) {
      std::cout << r.augmentation << ' ' << r.params << ": train mse " << r.train_mse << " (identity "
                << r.identity_train_mse << "), held-out mse " << r.heldout_mse << " (identity "
                << r.identity_heldout_mse << ")\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const keyprobe::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const keyprobe::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const keyprobe::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
