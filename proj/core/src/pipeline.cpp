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

#include "keyprobe/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <type_traits>
#include <utility>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "keyprobe/checkpoint.hpp"
#include "keyprobe/error.hpp"
#include "keyprobe/feature_cache.hpp"
#include "keyprobe/hash.hpp"
#include "keyprobe/parallel.hpp"
#include "keyprobe/synth.hpp"
#include "keyprobe/wav.hpp"

namespace keyprobe {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename V>
V parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<V, bool>) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw UsageError("config " + key + ": expected a boolean, got '" + text + "'");
  } else if constexpr (std::is_same_v<V, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<V, std::filesystem::path>) {
    return std::filesystem::path(text);
  } else {
    V v{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (text.empty() || ec != std::errc() || ptr != end) {
      throw UsageError("config " + key + ": cannot parse '" + text + "'");
    }
    if constexpr (std::is_floating_point_v<V>) {
      if (!std::isfinite(v)) throw UsageError("config " + key + ": value must be finite");
    }
    return v;
  }
}

template <typename V>
std::string format_value(const V& v) {
  if constexpr (std::is_same_v<V, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<V, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<V, std::filesystem::path>) {
    return v.string();
  } else if constexpr (std::is_floating_point_v<V>) {
    return format_double(v);
  } else {
    return std::to_string(v);
  }
}

struct ConfigEntry {
  std::string section;
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;

  std::string full() const { return section + "." + key; }
};

template <typename Access>
ConfigEntry entry(std::string section, std::string key, Access access) {
  using V = std::remove_reference_t<decltype(access(std::declval<PipelineConfig&>()))>;
  const std::string full = section + "." + key;
  return {std::move(section), std::move(key),
          [access](const PipelineConfig& c) {
            return format_value<V>(access(const_cast<PipelineConfig&>(c)));
          },
          [access, full](PipelineConfig& c, const std::string& text) {
            access(c) = parse_value<V>(full, text);
          }};
}

const std::vector<ConfigEntry>& entries() {
  using C = PipelineConfig;
  static const std::vector<ConfigEntry> table = {
      entry("run", "seed", [](C& c) -> std::uint64_t& { return c.seed; }),
      entry("run", "threads", [](C& c) -> int& { return c.threads; }),
      entry("run", "context_len", [](C& c) -> std::size_t& { return c.context_len; }),
      entry("run", "val_fraction", [](C& c) -> double& { return c.val_fraction; }),
      entry("run", "shift_min", [](C& c) -> int& { return c.shift_min; }),
      entry("run", "shift_max", [](C& c) -> int& { return c.shift_max; }),
      entry("run", "cache_dir", [](C& c) -> std::filesystem::path& { return c.cache_dir; }),
      entry("data", "train_manifest", [](C& c) -> std::filesystem::path& { return c.train_manifest; }),
      entry("data", "test_manifest", [](C& c) -> std::filesystem::path& { return c.test_manifest; }),
      entry("data", "unlabeled_manifest",
            [](C& c) -> std::filesystem::path& { return c.unlabeled_manifest; }),
      entry("frontend", "sample_rate", [](C& c) -> int& { return c.mel.sample_rate; }),
      entry("frontend", "n_mels", [](C& c) -> int& { return c.mel.n_mels; }),
      entry("frontend", "window", [](C& c) -> int& { return c.mel.window; }),
      entry("frontend", "hop", [](C& c) -> int& { return c.mel.hop; }),
      entry("frontend", "fmin", [](C& c) -> double& { return c.mel.fmin; }),
      entry("frontend", "fmax", [](C& c) -> double& { return c.mel.fmax; }),
      entry("frontend", "log_eps", [](C& c) -> double& { return c.mel.log_eps; }),
      entry("encoder", "embed_dim", [](C& c) -> int& { return c.encoder.embed_dim; }),
      entry("encoder", "depth", [](C& c) -> int& { return c.encoder.depth; }),
      entry("encoder", "heads", [](C& c) -> int& { return c.encoder.heads; }),
      entry("encoder", "mlp_dim", [](C& c) -> int& { return c.encoder.mlp_dim; }),
      entry("encoder", "n_mels", [](C& c) -> int& { return c.encoder.n_mels; }),
      entry("encoder", "patch_frames", [](C& c) -> int& { return c.encoder.patch_frames; }),
      entry("pretrain", "temperature", [](C& c) -> double& { return c.pretrain.temperature; }),
      entry("pretrain", "mask_ratio", [](C& c) -> double& { return c.pretrain.mask_ratio; }),
      entry("pretrain", "batch_size", [](C& c) -> int& { return c.pretrain.batch_size; }),
      entry("pretrain", "steps", [](C& c) -> int& { return c.pretrain.steps; }),
      entry("pretrain", "clip_length", [](C& c) -> std::size_t& { return c.pretrain.clip_length; }),
      entry("pretrain", "projector_dim", [](C& c) -> int& { return c.pretrain.projector_dim; }),
      entry("pretrain", "learning_rate", [](C& c) -> double& { return c.pretrain.learning_rate; }),
      entry("pretrain", "weight_decay", [](C& c) -> double& { return c.pretrain.weight_decay; }),
      entry("pretrain", "warmup_steps", [](C& c) -> int& { return c.pretrain.warmup_steps; }),
      entry("probe", "hidden_layers", [](C& c) -> int& { return c.probe.hidden_layers; }),
      entry("probe", "hidden_dim", [](C& c) -> int& { return c.probe.hidden_dim; }),
      entry("probe", "dropout", [](C& c) -> double& { return c.probe.dropout; }),
      entry("train", "batch_size", [](C& c) -> int& { return c.train.batch_size; }),
      entry("train", "learning_rate", [](C& c) -> double& { return c.train.learning_rate; }),
      entry("train", "weight_decay", [](C& c) -> double& { return c.train.weight_decay; }),
      entry("train", "mixup", [](C& c) -> bool& { return c.train.mixup.enabled; }),
      entry("train", "mixup_alpha", [](C& c) -> double& { return c.train.mixup.alpha; }),
      entry("train", "mixup_beta", [](C& c) -> double& { return c.train.mixup.beta; }),
      entry("train", "epochs", [](C& c) -> int& { return c.train.epochs; }),
      entry("train", "patience", [](C& c) -> int& { return c.train.patience; }),
      entry("synth", "duration_s", [](C& c) -> double& { return c.synth.duration_s; }),
      entry("synth", "harmonics", [](C& c) -> int& { return c.synth.harmonics; }),
      entry("synth", "tempo_bpm", [](C& c) -> double& { return c.synth.tempo_bpm; }),
      entry("synth", "noise_db", [](C& c) -> double& { return c.synth.noise_db; }),
  };
  return table;
}

const ConfigEntry& find_entry(const std::string& full) {
  for (const auto& e : entries()) {
    if (e.full() == full) return e;
  }
  throw UsageError("unknown config key '" + full + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

void emit(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

}  // namespace

void PipelineConfig::validate() const {
  if (threads < 1) throw UsageError("run.threads must be at least 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw UsageError("run.val_fraction must lie in (0, 1)");
  if (shift_min > shift_max) throw UsageError("run.shift_min exceeds run.shift_max");
  if (shift_min < -6 || shift_max > 6) throw UsageError("run shifts must lie in [-6, 6]");
  if (mel.sample_rate <= 0 || mel.n_mels <= 0 || mel.window <= 0 || mel.hop <= 0) {
    throw UsageError("frontend: sample_rate, n_mels, window and hop must be positive");
  }
  if (mel.fmin < 0.0 || (mel.fmax != 0.0 && mel.fmax <= mel.fmin) || mel.fmax > mel.sample_rate / 2.0) {
    throw UsageError("frontend: need 0 <= fmin < fmax <= sample_rate / 2 (fmax 0 means Nyquist)");
  }
  if (!(mel.log_eps > 0.0)) throw UsageError("frontend.log_eps must be positive");
  encoder.validate();
  if (encoder.n_mels != mel.n_mels) throw UsageError("encoder.n_mels must equal frontend.n_mels");
  pretrain.validate();
  probe.validate();
  if (probe.input_dim != encoder.embed_dim) throw UsageError("probe input width must equal encoder.embed_dim");
  train.validate();
  if (context_len < static_cast<std::size_t>(mel.window)) {
    throw UsageError("run.context_len must be at least one analysis window");
  }
  if (!(synth.duration_s > 0.0) || synth.harmonics < 1 || !(synth.tempo_bpm > 0.0)) {
    throw UsageError("synth: duration, harmonics and tempo must be positive");
  }
}

std::filesystem::path PipelineConfig::resolved_cache_dir() const {
  return cache_dir.empty() ? default_cache_root() : cache_dir;
}

PipelineConfig parse_config(std::istream& is, const std::string& source) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  PipelineConfig cfg;
  cfg.probe.input_dim = cfg.encoder.embed_dim;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw UsageError(source + ": key '" + section + "' outside any section");
    }
    for (const auto& [key, value] : body) {
      try {
        find_entry(section + "." + key).set(cfg, trim(value.data()));
      } catch (const UsageError& e) {
        throw UsageError(source + ": " + e.what());
      }
    }
  }
  cfg.probe.input_dim = cfg.encoder.embed_dim;
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  return parse_config(in, path.string());
}

void write_config(std::ostream& os, const PipelineConfig& cfg) {
  std::string section;
  for (const auto& e : entries()) {
    if (e.section != section) {
      if (!section.empty()) os << '\n';
      section = e.section;
      os << '[' << section << "]\n";
    }
    os << e.key << " = " << e.get(cfg) << '\n';
  }
}

void apply_override(PipelineConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("override '" + assignment + "' must look like section.key=value");
  find_entry(trim(assignment.substr(0, eq))).set(cfg, trim(assignment.substr(eq + 1)));
  cfg.probe.input_dim = cfg.encoder.embed_dim;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.push_back(e.full());
  return out;
}

nlohmann::json config_snapshot(const PipelineConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& e : entries()) j[e.section][e.key] = e.get(cfg);
  return j;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_run_record(const std::filesystem::path& path, const RunRecord& r) {
  const nlohmann::json j = {{"command", r.command},         {"config", r.config},
                            {"started", r.started},         {"finished", r.finished},
                            {"artifacts", r.artifacts},     {"input_hashes", r.input_hashes},
                            {"results", r.results}};
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

RunRecord read_run_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    RunRecord r;
    r.command = j.at("command").get<std::string>();
    r.config = j.at("config");
    r.started = j.at("started").get<std::string>();
    r.finished = j.at("finished").get<std::string>();
    r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    r.input_hashes = j.at("input_hashes").get<std::map<std::string, std::string>>();
    r.results = j.value("results", nlohmann::json::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed run record: " + e.what());
  }
}

namespace {

RunRecord start_record(const std::string& command, const PipelineConfig& cfg) {
  RunRecord r;
  r.command = command;
  r.config = config_snapshot(cfg);
  r.started = utc_timestamp();
  return r;
}

}  // namespace

// ---- synth-data

std::string synth_clip_name(const std::string& prefix, const Key& key, int k) {
  std::string name = format_key(key);
  for (char& c : name) {
    if (c == '#') c = 's';
    if (c == ' ') c = '_';
  }
  std::ostringstream os;
  os << prefix << '_' << name << '_' << std::setw(4) << std::setfill('0') << k << ".wav";
  return os.str();
}

std::uint64_t synth_clip_seed(std::uint64_t root, const std::string& prefix, const Key& key, int k) {
  return derive_seed(root, "synth/" + prefix + "/" + std::to_string(class_index(key)) + "/" +
                               std::to_string(k));
}

std::filesystem::path cmd_synth_data(const PipelineConfig& cfg, const SynthDataOptions& options,
                                     const Logger& log) {
  cfg.validate();
  if (options.clips_per_key < 1) throw UsageError("clips per key must be at least 1");
  if (options.out_dir.empty()) throw UsageError("synth-data needs an output directory");
  RunRecord record = start_record("synth-data", cfg);
  std::vector<Key> keys = options.keys;
  if (keys.empty()) {
    for (int c = 0; c < kNumKeyClasses; ++c) keys.push_back(key_from_class(c));
  }
  std::error_code ec;
  std::filesystem::create_directories(options.out_dir, ec);
  if (ec) throw DataError("cannot create " + options.out_dir.string() + ": " + ec.message());

  std::vector<ManifestEntry> manifest(keys.size() * static_cast<std::size_t>(options.clips_per_key));
  parallel_for(manifest.size(), cfg.threads, [&](std::size_t i) {
    const Key& key = keys[i / static_cast<std::size_t>(options.clips_per_key)];
    const int k = static_cast<int>(i % static_cast<std::size_t>(options.clips_per_key));
    SynthSpec spec{.key = key,
                   .duration_s = cfg.synth.duration_s,
                   .harmonics = cfg.synth.harmonics,
                   .seed = synth_clip_seed(cfg.seed, options.prefix, key, k),
                   .tempo_bpm = cfg.synth.tempo_bpm,
                   .noise_db = cfg.synth.noise_db,
                   .sample_rate = cfg.mel.sample_rate};
    const std::string name = synth_clip_name(options.prefix, key, k);
    write_wav(options.out_dir / name, synth_clip(spec));
    manifest[i] = {name, key};
  });
  const auto manifest_path = options.out_dir / "manifest.csv";
  write_key_manifest(manifest_path, manifest);
  emit(log, "wrote " + std::to_string(manifest.size()) + " clips to " + options.out_dir.string());
  record.finished = utc_timestamp();
  record.artifacts = {manifest_path.string()};
  record.results = {{"clips", manifest.size()}, {"prefix", options.prefix}};
  write_run_record(options.out_dir / "run.json", record);
  return manifest_path;
}

// ---- shared helpers

std::vector<ManifestEntry> load_resolved_manifest(const std::filesystem::path& manifest) {
  auto entries = load_key_manifest(manifest);
  const auto base = manifest.parent_path();
  for (auto& e : entries) {
    const std::filesystem::path p(e.path);
    if (p.is_relative()) e.path = (base / p).string();
  }
  return entries;
}

std::vector<std::filesystem::path> load_clip_list(const std::filesystem::path& list) {
  std::ifstream in(list);
  if (!in) throw DataError("cannot read clip list " + list.string());
  std::vector<std::filesystem::path> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    if (const auto comma = line.rfind(','); comma != std::string::npos) line = trim(line.substr(0, comma));
    if (std::exchange(first, false) && line == "path") continue;
    std::filesystem::path p(line);
    out.push_back(p.is_relative() ? list.parent_path() / p : p);
  }
  if (out.empty()) throw DataError("clip list " + list.string() + " is empty");
  return out;
}

void check_frontend(const EncoderModel& model, const MelConfig& configured) {
  if (model.mel.sample_rate != configured.sample_rate) {
    throw DataError("checkpoint frontend sample rate " + std::to_string(model.mel.sample_rate) +
                    " differs from configured " + std::to_string(configured.sample_rate));
  }
  if (model.mel.n_mels != configured.n_mels) {
    throw DataError("checkpoint frontend has " + std::to_string(model.mel.n_mels) +
                    " Mel bands, configuration has " + std::to_string(configured.n_mels));
  }
}

namespace {

struct Track {
  std::string id;  // manifest path as written
  std::filesystem::path path;
  Key key;
};

std::vector<Track> load_tracks(const std::filesystem::path& manifest) {
  if (manifest.empty()) throw UsageError("no manifest given");
  if (!std::filesystem::exists(manifest)) throw DataError("manifest " + manifest.string() + " does not exist");
  const auto raw = load_key_manifest(manifest);
  const auto resolved = load_resolved_manifest(manifest);
  std::vector<Track> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!seen.insert(raw[i].path).second) {
      throw DataError(manifest.string() + ": duplicate entry " + raw[i].path);
    }
    out.push_back({raw[i].path, resolved[i].path, raw[i].key});
  }
  if (out.empty()) throw DataError("manifest " + manifest.string() + " is empty");
  return out;
}

struct Featurizer {
  const PipelineConfig& cfg;
  const EncoderModel& model;
  std::string hash;
  FeatureCache cache;
  const Logger& log;
  std::size_t hits = 0;
  std::size_t computed = 0;

  // Features of every (track, shift) pair, ordered by track then shift.
  std::vector<LabeledFeature> run(std::span<const Track> tracks, std::span<const int> shifts) {
    const LockFile lock = cache.lock();
    const std::size_t jobs = tracks.size() * shifts.size();
    std::vector<CachedFeatures> results(jobs);
    std::vector<char> hit(jobs, 0);
    std::mutex log_mutex;
    parallel_for(jobs, cfg.threads, [&](std::size_t j) {
      const Track& t = tracks[j / shifts.size()];
      const int shift = shifts[j % shifts.size()];
      if (auto cached = cache.load(hash, cfg.context_len, shift, t.id)) {
        results[j] = std::move(*cached);
        hit[j] = 1;
        std::lock_guard guard(log_mutex);
        emit(log, "cache hit: " + t.id + " shift " + std::to_string(shift));
        return;
      }
      Waveform w = read_wav(t.path, model.mel.sample_rate);
      if (shift != 0) w = pitch_shift(w, shift);
      const MelExtractor mel(model.mel);
      CachedFeatures f{.track_id = t.id,
                       .context_len = cfg.context_len,
                       .checkpoint_hash = hash,
                       .shift = shift,
                       .label = class_index(transpose_key(t.key, shift)),
                       .windows = extract_features(w, cfg.context_len, model, mel)};
      cache.store(f);
      results[j] = std::move(f);
    });
    std::vector<LabeledFeature> out;
    for (std::size_t j = 0; j < jobs; ++j) {
      hits += hit[j] != 0;
      computed += hit[j] == 0;
      const CachedFeatures& f = results[j];
      const int label = class_index(transpose_key(tracks[j / shifts.size()].key, f.shift));
      if (f.label != label) throw DataError("cache entry for " + f.track_id + " carries a stale label");
      for (std::size_t w = 0; w < f.windows.size(); ++w) {
        out.push_back({f.windows[w], label, f.track_id, static_cast<int>(w), f.shift});
      }
    }
    return out;
  }
};

struct LoadedEncoder {
  EncoderModel model;
  std::string hash;
};

LoadedEncoder load_checked_encoder(const PipelineConfig& cfg, const std::filesystem::path& ckpt) {
  if (ckpt.empty()) throw UsageError("no checkpoint given");
  LoadedEncoder out{load_encoder(ckpt), checkpoint_hash(ckpt)};
  check_frontend(out.model, cfg.mel);
  if (out.model.encoder.embed_dim != cfg.probe.input_dim) {
    throw DataError("checkpoint embedding width " + std::to_string(out.model.encoder.embed_dim) +
                    " differs from the probe input width " + std::to_string(cfg.probe.input_dim));
  }
  return out;
}

struct ProbeData {
  std::vector<LabeledFeature> train;
  std::vector<LabeledFeature> val;
  std::size_t train_tracks = 0;
  std::size_t val_tracks = 0;
};

// Track-level split of the training manifest; shifted variants for the
// training part, shift 0 only for validation.
ProbeData probe_data(const PipelineConfig& cfg, Featurizer& fz) {
  const auto tracks = load_tracks(cfg.train_manifest);
  std::vector<std::string> ids;
  for (const auto& t : tracks) ids.push_back(t.id);
  const auto [train_ids, val_ids] = split_track_ids(ids, cfg.val_fraction, derive_seed(cfg.seed, "val-split"));
  const std::set<std::string> val_set(val_ids.begin(), val_ids.end());
  std::vector<Track> tr, va;
  for (const auto& t : tracks) (val_set.count(t.id) ? va : tr).push_back(t);
  if (tr.empty() || va.empty()) throw DataError("training manifest is too small to hold out validation tracks");
  ProbeData d;
  d.train_tracks = tr.size();
  d.val_tracks = va.size();
  const auto shifts = shift_range(cfg.shift_min, cfg.shift_max);
  const std::vector<int> zero{0};
  d.train = fz.run(tr, shifts);
  d.val = fz.run(va, zero);
  return d;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "epoch,train_loss,val_weighted,val_correct\n" << std::setprecision(8);
  for (const auto& e : history) {
    os << e.epoch << ',' << e.train_loss << ',' << e.val_weighted << ',' << e.val_correct << '\n';
  }
}

TrainConfig stage_train_config(const PipelineConfig& cfg) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(cfg.seed, "train-probe");
  return t;
}

}  // namespace

// ---- pretrain

PretrainResult cmd_pretrain(const PipelineConfig& cfg, const PretrainOptions& options,
                            const Logger& log) {
  cfg.validate();
  if (options.out_dir.empty()) throw UsageError("pretrain needs an output directory");
  const auto manifest = options.manifest.empty() ? cfg.unlabeled_manifest : options.manifest;
  RunRecord record = start_record("pretrain", cfg);
  if (manifest.empty()) throw UsageError("pretrain needs a clip list");
  const auto paths = load_clip_list(manifest);
  record.input_hashes[manifest.string()] = git_blob_hash_file(manifest);
  for (const auto& p : paths) record.input_hashes[p.string()] = git_blob_hash_file(p);
  PretrainConfig pc = cfg.pretrain;
  pc.seed = derive_seed(cfg.seed, "pretrain");
  emit(log, "pretraining on " + std::to_string(paths.size()) + " clips for " + std::to_string(pc.steps) + " steps");
  const auto progress = [&](const LossRecord& r) {
    if (r.step % 50 == 0 || r.step + 1 == pc.steps) {
      std::ostringstream os;
      os << "step " << r.step << " loss " << std::setprecision(5) << r.loss << " pos-cos " << r.positive_cosine;
      emit(log, os.str());
    }
  };

  std::filesystem::create_directories(options.out_dir);
  const auto save = [&](EncoderModel model, std::span<const LossRecord> curve) {
    model.extra["config"] = config_snapshot(cfg);
    save_encoder(options.out_dir, model);
    write_loss_csv(options.out_dir / "loss.csv", curve);
  };
  try {
    PretrainResult result = pretrain_from_files(paths, pc, cfg.encoder, cfg.mel, progress);
    save(result.model, result.curve);
    result.model.extra["config"] = config_snapshot(cfg);
    record.finished = utc_timestamp();
    record.artifacts = {options.out_dir.string(), (options.out_dir / "loss.csv").string()};
    record.results = {{"checkpoint_hash", checkpoint_hash(options.out_dir)},
                      {"final_loss", result.curve.empty() ? 0.0 : result.curve.back().loss}};
    write_run_record(options.out_dir / "run.json", record);
    return result;
  } catch (const PretrainDiverged& e) {
    save(e.last_good(), e.curve());
    emit(log, "pretraining diverged; last good weights saved to " + options.out_dir.string());
    throw;
  }
}

// ---- extract

ExtractSummary cmd_extract(const PipelineConfig& cfg, const ExtractOptions& options, const Logger& log) {
  cfg.validate();
  RunRecord record = start_record("extract", cfg);
  const auto tracks = load_tracks(options.manifest);
  const LoadedEncoder enc = load_checked_encoder(cfg, options.checkpoint);
  Featurizer fz{cfg, enc.model, enc.hash, FeatureCache(cfg.resolved_cache_dir()), log};
  ExtractSummary s;
  s.checkpoint_hash = enc.hash;
  s.features = fz.run(tracks, options.shifts);
  s.entries = tracks.size() * options.shifts.size();
  s.cache_hits = fz.hits;
  s.computed = fz.computed;
  emit(log, std::to_string(s.entries) + " cache entries (" + std::to_string(s.cache_hits) + " hits, " +
                std::to_string(s.computed) + " computed)");
  record.finished = utc_timestamp();
  record.input_hashes[options.manifest.string()] = git_blob_hash_file(options.manifest);
  record.input_hashes[options.checkpoint.string()] = enc.hash;
  record.artifacts = {fz.cache.root().string()};
  record.results = {{"entries", s.entries}, {"cache_hits", s.cache_hits}, {"computed", s.computed},
                    {"shifts", options.shifts}};
  write_run_record(fz.cache.root() / "runs" /
                       ("extract-" + git_blob_hash(options.manifest.string() + enc.hash).substr(0, 12) + ".json"),
                   record);
  return s;
}

// ---- train-probe

TrainedProbe cmd_train_probe(const PipelineConfig& cfg, const TrainProbeOptions& options,
                             const Logger& log) {
  cfg.validate();
  if (options.out_dir.empty()) throw UsageError("train-probe needs an output directory");
  RunRecord record = start_record("train-probe", cfg);
  const LoadedEncoder enc = load_checked_encoder(cfg, options.checkpoint);
  Featurizer fz{cfg, enc.model, enc.hash, FeatureCache(cfg.resolved_cache_dir()), log};
  const ProbeData data = probe_data(cfg, fz);
  emit(log, "training " + cfg.probe.name() + " on " + std::to_string(data.train_tracks) + " tracks (" +
                std::to_string(data.train.size()) + " windows), validating on " +
                std::to_string(data.val_tracks));
  TrainedProbe t = train_probe(data.train, data.val, cfg.probe, stage_train_config(cfg));
  std::ostringstream os;
  os << "best epoch " << t.best_epoch << ": val weighted " << std::fixed << std::setprecision(2)
     << t.best_val.weighted << ", correct " << t.best_val.correct();
  emit(log, os.str());

  save_probe(options.out_dir, t.probe,
             {{"checkpoint_hash", enc.hash}, {"context_len", cfg.context_len}, {"train", stage_train_config(cfg)}});
  write_history_csv(options.out_dir / "history.csv", t.history);
  record.finished = utc_timestamp();
  record.input_hashes[cfg.train_manifest.string()] = git_blob_hash_file(cfg.train_manifest);
  record.input_hashes[options.checkpoint.string()] = enc.hash;
  record.artifacts = {options.out_dir.string(), (options.out_dir / "history.csv").string()};
  record.results = {{"best_epoch", t.best_epoch},
                    {"val_weighted", t.best_val.weighted},
                    {"val_correct", t.best_val.correct()}};
  write_run_record(options.out_dir / "run.json", record);
  return t;
}

// ---- grid-search

std::vector<GridRow> cmd_grid_search(const PipelineConfig& cfg, const GridSearchOptions& options,
                                     std::ostream& out, const Logger& log) {
  cfg.validate();
  const auto configs = optimizer_grid();
  const auto archs = architecture_grid();
  if (options.dry_run) {
    const auto a = strided_subset(archs, options.max_archs);
    const auto c = strided_subset(configs, options.max_configs);
    out << "optimizer configurations: " << configs.size() << '\n'
        << "architectures: " << archs.size() << '\n'
        << "cells: " << configs.size() * archs.size() << '\n'
        << "selected: " << a.size() << " x " << c.size() << " = " << a.size() * c.size() << '\n';
    out << "\n[architectures]\n";
    for (const auto& x : archs) {
      out << x.hidden_layers << " layer(s), width " << x.hidden_dim << ", dropout " << x.dropout << '\n';
    }
    out << "\n[optimizer]\n";
    for (const auto& x : configs) {
      out << "batch " << x.batch_size << ", lr " << x.learning_rate << ", wd " << x.weight_decay
          << ", mixup " << (x.mixup.enabled ? "beta(2,5)" : "none") << '\n';
    }
    return {};
  }
  if (options.out_csv.empty()) throw UsageError("grid-search needs an output CSV");
  RunRecord record = start_record("grid-search", cfg);
  const LoadedEncoder enc = load_checked_encoder(cfg, options.checkpoint);
  Featurizer fz{cfg, enc.model, enc.hash, FeatureCache(cfg.resolved_cache_dir()), log};
  const ProbeData data = probe_data(cfg, fz);
  GridOptions go{.dataset = options.dataset,
                 .base = stage_train_config(cfg),
                 .max_archs = options.max_archs,
                 .max_configs = options.max_configs,
                 .threads = cfg.threads};
  std::size_t done = 0;
  auto rows = grid_search(data.train, data.val, go, [&](const GridRow& r) {
    std::ostringstream os;
    os << '[' << ++done << "] " << r.arch.name() << ' ' << r.config.name() << ": ";
    if (r.ok) {
      os << std::fixed << std::setprecision(2) << r.val_weighted;
    } else {
      os << "failed (" << r.error << ')';
    }
    emit(log, os.str());
  });
  write_grid_csv(options.out_csv, rows, options.dataset);
  record.finished = utc_timestamp();
  record.input_hashes[cfg.train_manifest.string()] = git_blob_hash_file(cfg.train_manifest);
  record.input_hashes[options.checkpoint.string()] = enc.hash;
  record.artifacts = {options.out_csv.string()};
  record.results = {{"cells", rows.size()}};
  auto run_path = options.out_csv;
  run_path += ".run.json";
  write_run_record(run_path, record);
  return rows;
}

// ---- evaluate

EvalReport evaluate_manifests(std::span<const ManifestEntry> references,
                              std::span<const ManifestEntry> estimates, FifthRule rule) {
  std::map<std::string, Key> est;
  for (const auto& e : estimates) {
    if (!est.emplace(e.path, e.key).second) throw DataError("duplicate estimate for " + e.path);
  }
  std::vector<Key> pred, ref;
  for (const auto& r : references) {
    const auto it = est.find(r.path);
    if (it == est.end()) throw DataError("no estimate for " + r.path);
    pred.push_back(it->second);
    ref.push_back(r.key);
  }
  return evaluate(pred, ref, rule);
}

EvalReport cmd_evaluate(const PipelineConfig& cfg, const EvaluateOptions& options, std::ostream& out,
                        const Logger& log) {
  cfg.validate();
  if (cfg.test_manifest.empty()) throw UsageError("evaluate needs data.test_manifest");
  RunRecord record = start_record("evaluate", cfg);
  record.input_hashes[cfg.test_manifest.string()] = git_blob_hash_file(cfg.test_manifest);
  EvalReport report;
  if (!options.predictions.empty()) {
    const auto refs = load_key_manifest(cfg.test_manifest);
    const auto ests = load_key_manifest(options.predictions);
    report = evaluate_manifests(refs, ests, options.fifth_rule);
    record.input_hashes[options.predictions.string()] = git_blob_hash_file(options.predictions);
  } else {
    if (options.probe_dir.empty()) throw UsageError("evaluate needs a probe or a predictions file");
    const LoadedEncoder enc = load_checked_encoder(cfg, options.checkpoint);
    const Probe<float> probe = load_probe(options.probe_dir);
    Featurizer fz{cfg, enc.model, enc.hash, FeatureCache(cfg.resolved_cache_dir()), log};
    const auto tracks = load_tracks(cfg.test_manifest);
    const std::vector<int> zero{0};
    const auto feats = fz.run(tracks, zero);
    const TrackPredictions p = predict_tracks(probe, feats);
    report = evaluate(p.predicted, p.reference, options.fifth_rule);
    record.input_hashes[options.checkpoint.string()] = enc.hash;
    record.input_hashes[options.probe_dir.string()] = checkpoint_hash(options.probe_dir);
  }
  out << format_report_table(report, options.label);
  if (!options.out_csv.empty()) {
    write_report_csv(options.out_csv, report, options.label);
    record.artifacts = {options.out_csv.string()};
    auto run_path = options.out_csv;
    run_path += ".run.json";
    record.finished = utc_timestamp();
    record.results = {{"weighted", report.weighted}, {"correct", report.correct()}, {"n_tracks", report.n_tracks}};
    write_run_record(run_path, record);
  }
  return report;
}

// ---- analyze-aug

std::vector<AugMapReport> cmd_analyze_aug(const PipelineConfig& cfg, const AnalyzeAugOptions& options,
                                          const Logger& log) {
  cfg.validate();
  if (options.out_csv.empty()) throw UsageError("analyze-aug needs an output CSV");
  RunRecord record = start_record("analyze-aug", cfg);
  auto tracks = load_tracks(options.manifest);
  if (options.max_clips > 0 && tracks.size() > options.max_clips) tracks.resize(options.max_clips);
  const LoadedEncoder enc = load_checked_encoder(cfg, options.checkpoint);
  std::vector<Waveform> clips;
  std::vector<std::string> ids;
  for (const auto& t : tracks) {
    clips.push_back(read_wav(t.path, enc.model.mel.sample_rate));
    ids.push_back(t.id);
  }
  emit(log, "analysing " + std::to_string(options.augmentations.size()) + " augmentations on " +
                std::to_string(clips.size()) + " clips");
  AugAnalysisOptions ao;
  ao.context_len = cfg.context_len;
  ao.seed = derive_seed(cfg.seed, "analyze-aug");
  ao.threads = cfg.threads;
  const AugAnalysis a = aug_linearity_report(clips, ids, enc.model, options.augmentations, ao);
  write_aug_report_csv(options.out_csv, a.reports);
  record.artifacts = {options.out_csv.string()};
  if (!options.pca_dir.empty()) {
    std::filesystem::create_directories(options.pca_dir);
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
      const auto path = options.pca_dir / ("pca_" + std::to_string(i) + "_" + a.pairs[i].augmentation + ".csv");
      std::ofstream os(path);
      if (!os) throw DataError("cannot write " + path.string());
      write_pca_coordinates(os, a.pairs[i]);
      record.artifacts.push_back(path.string());
    }
  }
  record.finished = utc_timestamp();
  record.input_hashes[options.manifest.string()] = git_blob_hash_file(options.manifest);
  record.input_hashes[options.checkpoint.string()] = enc.hash;
  record.results = {{"rows", a.reports.size()}};
  auto run_path = options.out_csv;
  run_path += ".run.json";
  write_run_record(run_path, record);
  return a.reports;
}

}  // namespace keyprobe
