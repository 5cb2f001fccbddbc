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

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "keyprobe/error.hpp"
#include "keyprobe/hash.hpp"
#include "keyprobe/pipeline.hpp"
#include "test_support.hpp"

namespace keyprobe {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(KEYPROBE_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Small enough for a unit test to run every stage.
PipelineConfig tiny_config(const std::filesystem::path& root) {
  PipelineConfig cfg;
  for (const char* o : {"frontend.n_mels=16", "frontend.window=512", "frontend.hop=256", "encoder.n_mels=16",
                        "encoder.embed_dim=16", "encoder.depth=1", "encoder.heads=2", "encoder.mlp_dim=32",
                        "pretrain.batch_size=4", "pretrain.steps=4", "pretrain.clip_length=16000",
                        "pretrain.projector_dim=8", "pretrain.warmup_steps=1", "probe.hidden_dim=16",
                        "probe.dropout=0.1", "train.epochs=3", "train.patience=3", "train.batch_size=8",
                        "run.context_len=16000", "run.shift_min=0", "run.shift_max=0", "synth.duration_s=2"}) {
    apply_override(cfg, o);
  }
  cfg.cache_dir = root / "cache";
  cfg.validate();
  return cfg;
}

TEST(Config, DefaultsRoundTripThroughText) {
  const PipelineConfig cfg;
  std::ostringstream os;
  write_config(os, cfg);
  std::istringstream is(os.str());
  const PipelineConfig back = parse_config(is);
  EXPECT_EQ(config_snapshot(back), config_snapshot(cfg));
  EXPECT_DOUBLE_EQ(back.pretrain.temperature, 0.1);
  EXPECT_DOUBLE_EQ(back.pretrain.mask_ratio, 0.9);
  EXPECT_EQ(back.probe.input_dim, back.encoder.embed_dim);
}

TEST(Config, EveryKeyAppearsInOutput) {
  std::ostringstream os;
  write_config(os, PipelineConfig{});
  const std::string text = os.str();
  const auto keys = config_keys();
  EXPECT_GT(keys.size(), 40u);
  for (const auto& k : keys) {
    const std::string key = k.substr(k.find('.') + 1);
    EXPECT_NE(text.find("\n" + key + " = "), std::string::npos) << k;
  }
}

TEST(Config, ParsesValuesAndOverrides) {
  std::istringstream is("[run]\nseed = 42\n[encoder]\nembed_dim = 96\ndepth = 2\n[train]\nmixup = true\n");
  PipelineConfig cfg = parse_config(is);
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_EQ(cfg.encoder.embed_dim, 96u);
  EXPECT_EQ(cfg.probe.input_dim, 96u);
  EXPECT_TRUE(cfg.train.mixup.enabled);
  apply_override(cfg, "encoder.embed_dim = 48");
  EXPECT_EQ(cfg.probe.input_dim, 48u);
  apply_override(cfg, "pretrain.temperature=0.5");
  EXPECT_DOUBLE_EQ(cfg.pretrain.temperature, 0.5);
}

TEST(Config, RejectsUnknownAndMalformed) {
  const auto parse = [](const std::string& s) {
    std::istringstream is(s);
    return parse_config(is, "t.ini");
  };
  EXPECT_THROW(parse("[run]\nbogus = 1\n"), UsageError);
  EXPECT_THROW(parse("[nowhere]\nseed = 1\n"), UsageError);
  EXPECT_THROW(parse("[run]\nseed = many\n"), UsageError);
  EXPECT_THROW(parse("[train]\nmixup = maybe\n"), UsageError);
  try {
    parse("[run]\nbogus = 1\n");
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("run.bogus"), std::string::npos) << e.what();
  }
  PipelineConfig cfg;
  EXPECT_THROW(apply_override(cfg, "run.seed"), UsageError);
  EXPECT_THROW(apply_override(cfg, "encoder.nothing=3"), UsageError);
}

TEST(Config, ValidateCatchesInconsistency) {
  PipelineConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  PipelineConfig a = cfg;
  apply_override(a, "encoder.n_mels=64");
  EXPECT_THROW(a.validate(), UsageError);
  PipelineConfig b = cfg;
  apply_override(b, "run.val_fraction=1.5");
  EXPECT_THROW(b.validate(), UsageError);
  PipelineConfig c = cfg;
  apply_override(c, "run.shift_min=2");
  apply_override(c, "run.shift_max=1");
  EXPECT_THROW(c.validate(), UsageError);
  PipelineConfig d = cfg;
  apply_override(d, "encoder.heads=5");
  EXPECT_THROW(d.validate(), UsageError);
}

TEST(RunRecord, RoundTrip) {
  testing::TempDir dir;
  RunRecord r;
  r.command = "pretrain";
  r.config = config_snapshot(PipelineConfig{});
  r.started = utc_timestamp();
  r.finished = utc_timestamp();
  r.artifacts = {"a", "b"};
  r.input_hashes = {{"m.csv", "abc"}};
  r.results = {{"loss", 1.5}};
  write_run_record(dir / "run.json", r);
  const RunRecord b = read_run_record(dir / "run.json");
  EXPECT_EQ(b.command, r.command);
  EXPECT_EQ(b.config, r.config);
  EXPECT_EQ(b.artifacts, r.artifacts);
  EXPECT_EQ(b.input_hashes, r.input_hashes);
  EXPECT_EQ(b.results, r.results);
  EXPECT_EQ(r.started.size(), 20u);
  EXPECT_EQ(r.started.back(), 'Z');
  std::ofstream(dir / "bad.json") << "{";
  EXPECT_THROW(read_run_record(dir / "bad.json"), DataError);
}

TEST(SynthData, ManifestAndDeterminism) {
  testing::TempDir dir;
  PipelineConfig cfg;
  cfg.synth.duration_s = 1.0;
  SynthDataOptions o{.out_dir = dir / "a", .keys = {parse_key("C major"), parse_key("F# minor")}, .clips_per_key = 2};
  const auto manifest = cmd_synth_data(cfg, o);
  const auto entries = load_key_manifest(manifest);
  ASSERT_EQ(entries.size(), 4u);
  EXPECT_EQ(entries[0].key, parse_key("C major"));
  EXPECT_EQ(entries[3].key, parse_key("F# minor"));
  for (const auto& e : entries) {
    EXPECT_TRUE(std::filesystem::path(e.path).is_relative());
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / e.path));
  }
  o.out_dir = dir / "b";
  cmd_synth_data(cfg, o);
  EXPECT_EQ(slurp(dir / "a" / "manifest.csv"), slurp(dir / "b" / "manifest.csv"));
  for (const auto& e : entries) EXPECT_EQ(slurp(dir / "a" / e.path), slurp(dir / "b" / e.path)) << e.path;

  cfg.seed = 1;
  o.out_dir = dir / "c";
  cmd_synth_data(cfg, o);
  EXPECT_NE(slurp(dir / "a" / entries[0].path), slurp(dir / "c" / entries[0].path));
}

TEST(SynthData, SeedsAreDistinctPerClip) {
  const Key c = parse_key("C major");
  const Key a = parse_key("A minor");
  EXPECT_NE(synth_clip_seed(0, "clip", c, 0), synth_clip_seed(0, "clip", c, 1));
  EXPECT_NE(synth_clip_seed(0, "clip", c, 0), synth_clip_seed(0, "clip", a, 0));
  EXPECT_NE(synth_clip_seed(0, "clip", c, 0), synth_clip_seed(1, "clip", c, 0));
  EXPECT_NE(synth_clip_seed(0, "clip", c, 0), synth_clip_seed(0, "other", c, 0));
  EXPECT_EQ(synth_clip_seed(3, "clip", c, 2), synth_clip_seed(3, "clip", c, 2));
  EXPECT_NE(synth_clip_name("clip", c, 0), synth_clip_name("clip", a, 0));
}

TEST(GridSearch, DryRunEnumerates) {
  std::ostringstream os;
  GridSearchOptions o;
  o.dry_run = true;
  o.max_archs = 4;
  o.max_configs = 3;
  EXPECT_TRUE(cmd_grid_search(PipelineConfig{}, o, os).empty());
  const std::string text = os.str();
  EXPECT_NE(text.find("optimizer configurations: 160\n"), std::string::npos);
  EXPECT_NE(text.find("architectures: 28\n"), std::string::npos);
  EXPECT_NE(text.find("cells: 4480\n"), std::string::npos);
  EXPECT_NE(text.find("selected: 4 x 3 = 12\n"), std::string::npos);
  EXPECT_EQ(text.find("2 layer(s), width 8192"), std::string::npos);
}

TEST(Evaluate, PredictionsFile) {
  testing::TempDir dir;
  const std::vector<ManifestEntry> refs{{"a.wav", parse_key("C major")},
                                        {"b.wav", parse_key("A minor")},
                                        {"c.wav", parse_key("E major")}};
  write_key_manifest(dir / "test.csv", refs);
  PipelineConfig cfg;
  cfg.test_manifest = dir / "test.csv";

  write_key_manifest(dir / "perfect.csv", refs);
  std::ostringstream os;
  EvaluateOptions o{.predictions = dir / "perfect.csv", .out_csv = dir / "report.csv", .label = "oracle"};
  const EvalReport r = cmd_evaluate(cfg, o, os);
  EXPECT_DOUBLE_EQ(r.weighted, 100.0);
  EXPECT_DOUBLE_EQ(r.correct(), 100.0);
  EXPECT_NE(os.str().find("oracle"), std::string::npos);
  EXPECT_NE(slurp(dir / "report.csv").find("oracle,3,100.00"), std::string::npos);
  const RunRecord rec = read_run_record(dir / "report.csv.run.json");
  EXPECT_EQ(rec.command, "evaluate");
  EXPECT_EQ(rec.input_hashes.at((dir / "perfect.csv").string()), git_blob_hash_file(dir / "perfect.csv"));

  // b.wav as its relative major, c.wav a fifth up: 1 + 0.3 + 0.5 over 3 tracks.
  const std::vector<ManifestEntry> est{{"c.wav", parse_key("B major")},
                                       {"a.wav", parse_key("C major")},
                                       {"b.wav", parse_key("C major")}};
  write_key_manifest(dir / "est.csv", est);
  o.predictions = dir / "est.csv";
  o.out_csv.clear();
  EXPECT_NEAR(cmd_evaluate(cfg, o, os).weighted, 100.0 * 1.8 / 3.0, 1e-9);

  write_key_manifest(dir / "short.csv", std::vector<ManifestEntry>(est.begin(), est.begin() + 2));
  o.predictions = dir / "short.csv";
  EXPECT_THROW(cmd_evaluate(cfg, o, os), DataError);
  o.predictions.clear();
  EXPECT_THROW(cmd_evaluate(cfg, o, os), UsageError);
}

TEST(ClipList, PlainAndManifestForms) {
  testing::TempDir dir;
  std::ofstream(dir / "list.txt") << "# unlabeled\none.wav\n\n/abs/two.wav\n";
  const auto plain = load_clip_list(dir / "list.txt");
  ASSERT_EQ(plain.size(), 2u);
  EXPECT_EQ(plain[0], dir / "one.wav");
  EXPECT_EQ(plain[1], std::filesystem::path("/abs/two.wav"));
  std::ofstream(dir / "m.csv") << "path,key\nx.wav,C major\n";
  const auto from_manifest = load_clip_list(dir / "m.csv");
  ASSERT_EQ(from_manifest.size(), 1u);
  EXPECT_EQ(from_manifest[0], dir / "x.wav");
}

TEST(Pipeline, EveryStageRunsOnATinyModel) {
  testing::TempDir dir;
  PipelineConfig cfg = tiny_config(dir.path());
  const auto train = cmd_synth_data(cfg, {.out_dir = dir / "train", .keys = {}, .clips_per_key = 1, .prefix = "tr"});
  const auto test = cmd_synth_data(
      cfg, {.out_dir = dir / "test", .keys = {parse_key("C major"), parse_key("D minor")}, .clips_per_key = 1,
            .prefix = "te"});
  cfg.train_manifest = train;
  cfg.test_manifest = test;
  cfg.unlabeled_manifest = train;

  const PretrainResult pre = cmd_pretrain(cfg, {.manifest = {}, .out_dir = dir / "ckpt"});
  EXPECT_EQ(pre.curve.size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt" / "loss.csv"));
  EXPECT_EQ(read_run_record(dir / "ckpt" / "run.json").command, "pretrain");

  const ExtractSummary first = cmd_extract(cfg, {.manifest = test, .checkpoint = dir / "ckpt", .shifts = {0, 2}});
  EXPECT_EQ(first.entries, 4u);
  EXPECT_EQ(first.computed, 4u);
  EXPECT_EQ(first.cache_hits, 0u);
  const ExtractSummary again = cmd_extract(cfg, {.manifest = test, .checkpoint = dir / "ckpt", .shifts = {0, 2}});
  EXPECT_EQ(again.cache_hits, 4u);
  ASSERT_EQ(again.features.size(), first.features.size());
  for (std::size_t i = 0; i < first.features.size(); ++i) {
    EXPECT_EQ(again.features[i].embedding, first.features[i].embedding);
  }

  const TrainedProbe probe = cmd_train_probe(cfg, {.checkpoint = dir / "ckpt", .out_dir = dir / "probe"});
  EXPECT_GE(probe.best_epoch, 0);

  std::ostringstream os;
  const EvalReport report =
      cmd_evaluate(cfg, {.checkpoint = dir / "ckpt", .probe_dir = dir / "probe", .out_csv = dir / "r.csv"}, os);
  EXPECT_EQ(report.n_tracks, 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "r.csv"));

  PipelineConfig other = cfg;
  apply_override(other, "frontend.n_mels=32");
  apply_override(other, "encoder.n_mels=32");
  EXPECT_THROW(cmd_extract(other, {.manifest = test, .checkpoint = dir / "ckpt"}), DataError);
}

class Cli : public ::testing::Test {
 protected:
  testing::TempDir dir;
  std::filesystem::path log() const { return dir / "log.txt"; }
};

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("--help", log()), 0);
  EXPECT_EQ(run_cli("config", log()), 0);
  EXPECT_NE(slurp(log()).find("temperature = 0.1"), std::string::npos);
  EXPECT_EQ(run_cli("no-such-command", log()), 1);
  EXPECT_EQ(run_cli("--set run.nothing=1 config", log()), 1);
  EXPECT_NE(slurp(log()).find("usage error"), std::string::npos);
  EXPECT_EQ(run_cli("grid-search", log()), 1);
  EXPECT_EQ(run_cli("extract --manifest " + (dir / "missing.csv").string() + " --ckpt " + (dir / "none").string() +
                        " --shifts 0..9",
                    log()),
            1);
  EXPECT_EQ(run_cli("-q extract --manifest " + (dir / "missing.csv").string() + " --ckpt " +
                        (dir / "none").string(),
                    log()),
            2);
  EXPECT_NE(slurp(log()).find("data error"), std::string::npos);
}

TEST_F(Cli, DryRunAndSynth) {
  EXPECT_EQ(run_cli("grid-search --dry-run", log()), 0);
  EXPECT_NE(slurp(log()).find("cells: 4480"), std::string::npos);
  EXPECT_EQ(run_cli("-q --set synth.duration_s=0.5 synth-data --keys \"C major,a minor\" --clips-per-key 1 --out " +
                        (dir / "s").string(),
                    log()),
            0);
  EXPECT_EQ(load_key_manifest(dir / "s" / "manifest.csv").size(), 2u);
  EXPECT_EQ(run_cli("synth-data --keys \"H major\" --out " + (dir / "t").string(), log()), 1);
}

TEST_F(Cli, EvaluatePredictions) {
  const std::vector<ManifestEntry> refs{{"a.wav", parse_key("C major")}, {"b.wav", parse_key("A minor")}};
  write_key_manifest(dir / "ref.csv", refs);
  EXPECT_EQ(run_cli("--set data.test_manifest=" + (dir / "ref.csv").string() + " evaluate --predictions " +
                        (dir / "ref.csv").string() + " --label perfect",
                    log()),
            0);
  EXPECT_NE(slurp(log()).find("perfect"), std::string::npos);
  EXPECT_NE(slurp(log()).find("100.00"), std::string::npos);
}

}  // namespace
}  // namespace keyprobe
