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

#include "keyprobe/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>

#include "keyprobe/hash.hpp"
#include "keyprobe/optim.hpp"
#include "keyprobe/wav.hpp"

namespace keyprobe {

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw DataError("cosine_sim: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DataError("cosine_sim: zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double ntxent_loss(std::span<const std::vector<double>> batch, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("ntxent_loss: temperature must be positive");
  const std::size_t m = batch.size();
  if (m < 2 || m % 2 != 0) throw DataError("ntxent_loss: need an even number (>= 2) of embeddings");
  std::vector<std::vector<double>> sim(m, std::vector<double>(m));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < m; ++k) sim[i][k] = cosine_sim(batch[i], batch[k]) / temperature;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) mx = std::max(mx, sim[i][k]);
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) acc += std::exp(sim[i][k] - mx);
    }
    total += mx + std::log(acc) - sim[i][i ^ 1];
  }
  return total / static_cast<double>(m);
}

void PretrainConfig::validate() const {
  if (!(temperature > 0.0)) throw UsageError("pretrain: temperature must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw UsageError("pretrain: mask_ratio must lie in [0, 1)");
  if (batch_size < 2) throw UsageError("pretrain: batch_size must be at least 2");
  if (steps < 1) throw UsageError("pretrain: steps must be positive");
  if (clip_length == 0) throw UsageError("pretrain: clip_length must be positive");
  if (projector_dim < 1) throw UsageError("pretrain: projector_dim must be positive");
  if (!(learning_rate > 0.0) || weight_decay < 0.0 || warmup_steps < 0) {
    throw UsageError("pretrain: invalid optimizer settings");
  }
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"temperature", c.temperature},     {"mask_ratio", c.mask_ratio},
       {"batch_size", c.batch_size},       {"steps", c.steps},
       {"clip_length", c.clip_length},     {"projector_dim", c.projector_dim},
       {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
       {"warmup_steps", c.warmup_steps},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  c.temperature = j.at("temperature").get<double>();
  c.mask_ratio = j.at("mask_ratio").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.steps = j.at("steps").get<int>();
  c.clip_length = j.at("clip_length").get<std::size_t>();
  c.projector_dim = j.at("projector_dim").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.warmup_steps = j.at("warmup_steps").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

namespace {

struct ViewSeeds {
  int crop_frame = 0;
  std::uint64_t seed_a = 0;
  std::uint64_t seed_b = 0;
};

ViewSeeds draw_view_seeds(int max_crop_frame, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ViewSeeds s;
  s.crop_frame = std::uniform_int_distribution<int>(0, max_crop_frame)(rng);
  s.seed_a = rng();
  s.seed_b = rng();
  return s;
}

ViewPair mask_pair(const TokenSequence& tokens, double ratio, const ViewSeeds& s) {
  return {mask_tokens(tokens, ratio, s.seed_a), mask_tokens(tokens, ratio, s.seed_b)};
}

}  // namespace

ViewPair make_views(const Waveform& clip, const PretrainConfig& cfg, const MelExtractor& mel,
                    const MelNorm& norm, int patch_frames, std::uint64_t seed) {
  if (clip.size() < cfg.clip_length) {
    throw DataError("make_views: clip of " + std::to_string(clip.size()) +
                    " samples is shorter than clip_length " + std::to_string(cfg.clip_length));
  }
  const MelConfig& mc = mel.config();
  // Crop offsets are whole hops; the admissible range is the one that keeps
  // every frame of the crop inside the clip's own frames.
  const int max_crop = frame_count(clip.size(), mc.window, mc.hop) -
                       frame_count(cfg.clip_length, mc.window, mc.hop);
  const ViewSeeds s = draw_view_seeds(max_crop, seed);
  Waveform crop;
  crop.sample_rate = clip.sample_rate;
  const std::size_t first = static_cast<std::size_t>(s.crop_frame) * static_cast<std::size_t>(mc.hop);
  const std::size_t last = std::min(clip.size(), first + cfg.clip_length);
  crop.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(first),
                      clip.samples.begin() + static_cast<std::ptrdiff_t>(last));
  // Samples past the clip end fall after the crop's last frame.
  crop.samples.resize(cfg.clip_length, 0.0f);
  return mask_pair(patchify(norm.apply(mel.compute(crop)), patch_frames), cfg.mask_ratio, s);
}

ViewPair make_views_from_mel(const MelSpectrogram& clip_mel, const PretrainConfig& cfg,
                             int patch_frames, std::uint64_t seed) {
  const int crop_frames = frame_count(cfg.clip_length, clip_mel.window, clip_mel.hop);
  const int max_crop = clip_mel.n_frames - crop_frames;
  if (max_crop < 0) {
    throw DataError("make_views: clip has " + std::to_string(clip_mel.n_frames) +
                    " frames, clip_length needs " + std::to_string(crop_frames));
  }
  const ViewSeeds s = draw_view_seeds(max_crop, seed);
  return mask_pair(patchify(clip_mel.slice_frames(s.crop_frame, crop_frames), patch_frames),
                   cfg.mask_ratio, s);
}

void write_loss_csv(std::ostream& os, std::span<const LossRecord> curve) {
  os << "step,loss,positive_cosine\n";
  os << std::setprecision(9);
  for (const auto& r : curve) os << r.step << ',' << r.loss << ',' << r.positive_cosine << '\n';
}

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_loss_csv(out, curve);
}

PretrainResult pretrain(std::vector<MelSpectrogram> corpus, const PretrainConfig& cfg,
                        const EncoderConfig& enc_cfg, const MelConfig& mel_cfg,
                        const PretrainProgress& progress) {
  cfg.validate();
  enc_cfg.validate();
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  if (static_cast<int>(corpus.size()) < cfg.batch_size) {
    throw DataError("pretrain: corpus of " + std::to_string(corpus.size()) +
                    " clips is smaller than the batch size " + std::to_string(cfg.batch_size));
  }
  if (mel_cfg.n_mels != enc_cfg.n_mels) throw UsageError("pretrain: n_mels differs between frontend and encoder");
  const int crop_frames = frame_count(cfg.clip_length, mel_cfg.window, mel_cfg.hop);
  for (const auto& m : corpus) {
    if (m.n_frames < crop_frames) {
      throw DataError("pretrain: a corpus clip is shorter than clip_length");
    }
  }

  PretrainResult result;
  EncoderModel& model = result.model;
  model.encoder = enc_cfg;
  model.encoder.mask_ratio = cfg.mask_ratio;
  model.mel = mel_cfg;
  model.norm = MelNorm::fit(corpus);
  for (auto& m : corpus) m = model.norm.apply(m);
  model.net = Encoder<float>(model.encoder, derive_seed(cfg.seed, "encoder-init"));
  model.extra = {{"pretrain", cfg}};

  std::mt19937_64 init_rng(derive_seed(cfg.seed, "projector-init"));
  Parameter<float> proj_w("projector.weight",
                          Tensor<float>::matrix(static_cast<std::size_t>(enc_cfg.embed_dim),
                                                static_cast<std::size_t>(cfg.projector_dim)));
  init_truncated_normal(proj_w.value, 0.02, init_rng);
  Parameter<float> proj_b("projector.bias", Tensor<float>({static_cast<std::size_t>(cfg.projector_dim)}));

  auto params = model.net.parameters();
  params.push_back(&proj_w);
  params.push_back(&proj_b);
  AdamW<float> opt(params, {.learning_rate = cfg.learning_rate,
                            .weight_decay = cfg.weight_decay,
                            .warmup_steps = cfg.warmup_steps});

  std::vector<std::size_t> order(corpus.size());
  const auto n = static_cast<std::size_t>(cfg.batch_size);
  Encoder<float> last_good = model.net;
  for (int step = 0; step < cfg.steps; ++step) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "pretrain-step-" + std::to_string(step)));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    std::vector<TokenSequence> views;
    views.reserve(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      ViewPair vp = make_views_from_mel(corpus[order[i]], cfg, enc_cfg.patch_frames, rng());
      views.push_back(std::move(vp.a));
      views.push_back(std::move(vp.b));
    }

    try {
      Tape<float> tape;
      Var<float> z = linear(model.net.forward(tape, views), tape.parameter(proj_w), tape.parameter(proj_b));
      Var<float> loss = ntxent(z, static_cast<float>(cfg.temperature));
      LossRecord rec;
      rec.step = step;
      rec.loss = loss.value()[0];
      const auto zm = z.value().mat();
      for (std::size_t i = 0; i < n; ++i) {
        const auto a = zm.row(static_cast<Eigen::Index>(2 * i)).template cast<double>();
        const auto b = zm.row(static_cast<Eigen::Index>(2 * i + 1)).template cast<double>();
        rec.positive_cosine += a.dot(b) / (a.norm() * b.norm());
      }
      rec.positive_cosine /= static_cast<double>(n);
      tape.backward(loss);
      opt.step();
      result.curve.push_back(rec);
      if (progress) progress(rec);
      last_good = model.net;
    } catch (const NumericalError& e) {
      EncoderModel good = model;
      good.net = std::move(last_good);
      throw PretrainDiverged("pretraining diverged at step " + std::to_string(step) + ": " + e.what(),
                             std::move(good), std::move(result.curve));
    }
  }
  return result;
}

PretrainResult pretrain_from_files(std::span<const std::filesystem::path> paths,
                                   const PretrainConfig& cfg, const EncoderConfig& enc_cfg,
                                   const MelConfig& mel_cfg, const PretrainProgress& progress) {
  const MelExtractor mel(mel_cfg);
  std::vector<MelSpectrogram> corpus;
  corpus.reserve(paths.size());
  for (const auto& p : paths) corpus.push_back(mel.compute(read_wav(p, mel_cfg.sample_rate)));
  return pretrain(std::move(corpus), cfg, enc_cfg, mel_cfg, progress);
}

}  // namespace keyprobe
