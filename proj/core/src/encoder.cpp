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

#include "keyprobe/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "keyprobe/error.hpp"
#include "keyprobe/optim.hpp"

namespace keyprobe {

void EncoderConfig::validate() const {
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
    throw UsageError("encoder: embed_dim must be a positive multiple of heads");
  }
  if (embed_dim % 2 != 0) throw UsageError("encoder: embed_dim must be even");
  if (depth < 0 || mlp_dim <= 0) throw UsageError("encoder: invalid depth or mlp_dim");
  if (n_mels <= 0 || patch_frames <= 0) throw UsageError("encoder: invalid patch geometry");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw UsageError("encoder: mask_ratio must lie in [0, 1)");
  }
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"embed_dim", c.embed_dim}, {"depth", c.depth},     {"heads", c.heads},
       {"mlp_dim", c.mlp_dim},     {"n_mels", c.n_mels},   {"patch_frames", c.patch_frames},
       {"mask_ratio", c.mask_ratio}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.embed_dim = j.at("embed_dim").get<int>();
  c.depth = j.at("depth").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_dim = j.at("mlp_dim").get<int>();
  c.n_mels = j.at("n_mels").get<int>();
  c.patch_frames = j.at("patch_frames").get<int>();
  c.mask_ratio = j.at("mask_ratio").get<double>();
}

void to_json(nlohmann::json& j, const MelConfig& c) {
  j = {{"sample_rate", c.sample_rate}, {"n_mels", c.n_mels}, {"window", c.window},
       {"hop", c.hop},                 {"fmin", c.fmin},     {"fmax", c.fmax},
       {"log_eps", c.log_eps}};
}

void from_json(const nlohmann::json& j, MelConfig& c) {
  c.sample_rate = j.at("sample_rate").get<int>();
  c.n_mels = j.at("n_mels").get<int>();
  c.window = j.at("window").get<int>();
  c.hop = j.at("hop").get<int>();
  c.fmin = j.at("fmin").get<double>();
  c.fmax = j.at("fmax").get<double>();
  c.log_eps = j.at("log_eps").get<double>();
}

TokenSequence patchify(const MelSpectrogram& mel, int patch_frames) {
  if (patch_frames <= 0) throw UsageError("patchify: patch_frames must be positive");
  if (mel.n_frames < patch_frames) {
    throw DataError("patchify: need at least " + std::to_string(patch_frames) +
                    " frames, got " + std::to_string(mel.n_frames));
  }
  const int n_tokens = mel.n_frames / patch_frames;
  const auto dim = static_cast<std::size_t>(mel.n_mels) * patch_frames;
  TokenSequence ts;
  ts.tokens = Tensor<float>::matrix(static_cast<std::size_t>(n_tokens), dim);
  ts.positions.resize(static_cast<std::size_t>(n_tokens));
  // Frames are stored contiguously, so a token is one contiguous run.
  std::copy_n(mel.data.begin(), static_cast<std::size_t>(n_tokens) * dim, ts.tokens.data());
  std::iota(ts.positions.begin(), ts.positions.end(), 0);
  return ts;
}

TokenSequence mask_tokens(const TokenSequence& ts, double mask_ratio, std::uint64_t seed) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) {
    throw UsageError("mask_tokens: ratio must lie in [0, 1)");
  }
  const std::size_t n = ts.size();
  const double kept = (1.0 - mask_ratio) * static_cast<double>(n);
  const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(kept - 1e-9)));
  if (keep == 0) throw DataError("mask_tokens: masking would leave no tokens");
  if (keep == n) return ts;

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());

  TokenSequence out;
  const std::size_t dim = ts.dim();
  out.tokens = Tensor<float>::matrix(keep, dim);
  out.positions.resize(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    std::copy_n(ts.tokens.data() + idx[i] * dim, dim, out.tokens.data() + i * dim);
    out.positions[i] = ts.positions[idx[i]];
  }
  return out;
}

MelNorm MelNorm::fit(std::span<const MelSpectrogram> corpus) {
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (const auto& m : corpus) {
    for (float v : m.data) {
      sum += v;
      sq += static_cast<double>(v) * v;
    }
    count += m.data.size();
  }
  if (count == 0) throw DataError("MelNorm: empty corpus");
  MelNorm n;
  n.mean = sum / static_cast<double>(count);
  const double var = std::max(0.0, sq / static_cast<double>(count) - n.mean * n.mean);
  n.stddev = var > 0.0 ? std::sqrt(var) : 1.0;
  return n;
}

MelSpectrogram MelNorm::apply(const MelSpectrogram& mel) const {
  MelSpectrogram out = mel;
  const double inv = 1.0 / stddev;
  for (float& v : out.data) v = static_cast<float>((v - mean) * inv);
  return out;
}

void positional_encoding(int position, std::span<float> out) {
  const std::size_t dim = out.size();
  for (std::size_t i = 0; 2 * i < dim; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    const double angle = position * freq;
    out[2 * i] = static_cast<float>(std::sin(angle));
    if (2 * i + 1 < dim) out[2 * i + 1] = static_cast<float>(std::cos(angle));
  }
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const auto D = static_cast<std::size_t>(cfg_.embed_dim);
  const auto H = static_cast<std::size_t>(cfg_.mlp_dim);
  const auto in = static_cast<std::size_t>(cfg_.token_dim());
  const auto weight = [&](std::string name, std::size_t rows, std::size_t cols) {
    Parameter<T> p(std::move(name), Tensor<T>::matrix(rows, cols));
    init_truncated_normal(p.value, 0.02, rng);
    return p;
  };
  const auto zeros = [](std::string name, std::size_t n) {
    return Parameter<T>(std::move(name), Tensor<T>({n}, T(0)));
  };
  const auto ones = [](std::string name, std::size_t n) {
    return Parameter<T>(std::move(name), Tensor<T>({n}, T(1)));
  };

  patch_weight_ = weight("patch_embed.weight", in, D);
  patch_bias_ = zeros("patch_embed.bias", D);
  for (int b = 0; b < cfg_.depth; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    Block blk;
    blk.ln1_gain = ones(p + "ln1.gain", D);
    blk.ln1_bias = zeros(p + "ln1.bias", D);
    blk.wq = weight(p + "attn.wq", D, D);
    blk.wk = weight(p + "attn.wk", D, D);
    blk.wv = weight(p + "attn.wv", D, D);
    blk.wo = weight(p + "attn.wo", D, D);
    blk.ln2_gain = ones(p + "ln2.gain", D);
    blk.ln2_bias = zeros(p + "ln2.bias", D);
    blk.w1 = weight(p + "mlp.w1", D, H);
    blk.b1 = zeros(p + "mlp.b1", H);
    blk.w2 = weight(p + "mlp.w2", H, D);
    blk.b2 = zeros(p + "mlp.b2", D);
    blocks_.push_back(std::move(blk));
  }
  final_gain_ = ones("final_norm.gain", D);
  final_bias_ = zeros("final_norm.bias", D);
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::parameters() {
  std::vector<Parameter<T>*> out{&patch_weight_, &patch_bias_};
  for (Block& b : blocks_) {
    for (Parameter<T>* p : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gain,
                            &b.ln2_bias, &b.w1, &b.b1, &b.w2, &b.b2}) {
      out.push_back(p);
    }
  }
  out.push_back(&final_gain_);
  out.push_back(&final_bias_);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> Encoder<T>::parameters() const {
  auto mut = const_cast<Encoder*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::size_t Encoder<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter<T>* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
template <typename Leaf>
Var<T> Encoder<T>::forward_with(Tape<T>& tape, std::span<const TokenSequence> batch,
                                Leaf&& leaf) const {
  if (batch.empty()) throw UsageError("encoder: empty batch");
  const auto D = static_cast<std::size_t>(cfg_.embed_dim);
  const auto in = static_cast<std::size_t>(cfg_.token_dim());
  std::vector<std::size_t> offsets{0};
  for (const auto& ts : batch) {
    if (ts.size() == 0) throw DataError("encoder: empty token sequence");
    if (ts.dim() != in) {
      throw DataError("encoder: token dim " + std::to_string(ts.dim()) + " does not match " +
                      std::to_string(in));
    }
    if (ts.tokens.rows() != ts.positions.size()) {
      throw DataError("encoder: token/position count mismatch");
    }
    offsets.push_back(offsets.back() + ts.size());
  }
  const std::size_t total = offsets.back();
  Tensor<T> x = Tensor<T>::matrix(total, in);
  Tensor<T> pe = Tensor<T>::matrix(total, D);
  std::vector<float> code(D);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto& ts = batch[s];
    std::copy_n(ts.tokens.data(), ts.tokens.size(), x.data() + offsets[s] * in);
    for (std::size_t i = 0; i < ts.size(); ++i) {
      positional_encoding(ts.positions[i], code);
      std::copy(code.begin(), code.end(), pe.data() + (offsets[s] + i) * D);
    }
  }

  Var<T> h = add(linear(tape.constant(std::move(x)), leaf(patch_weight_), leaf(patch_bias_)),
                 tape.constant(std::move(pe)));
  for (const Block& b : blocks_) {
    Var<T> a = layer_norm(h, leaf(b.ln1_gain), leaf(b.ln1_bias));
    Var<T> attn = scaled_dot_attention(matmul(a, leaf(b.wq)), matmul(a, leaf(b.wk)),
                                       matmul(a, leaf(b.wv)), cfg_.heads, offsets);
    h = add(h, matmul(attn, leaf(b.wo)));
    Var<T> m = layer_norm(h, leaf(b.ln2_gain), leaf(b.ln2_bias));
    h = add(h, linear(gelu(linear(m, leaf(b.w1), leaf(b.b1))), leaf(b.w2), leaf(b.b2)));
  }
  h = layer_norm(h, leaf(final_gain_), leaf(final_bias_));
  return segment_mean(h, offsets);
}

template <typename T>
Var<T> Encoder<T>::forward(Tape<T>& tape, std::span<const TokenSequence> batch) {
  return forward_with(tape, batch, [&tape](const Parameter<T>& p) {
    return tape.parameter(const_cast<Parameter<T>&>(p));
  });
}

template <typename T>
std::vector<Embedding> Encoder<T>::embed(std::span<const TokenSequence> batch) const {
  Tape<T> tape;
  Var<T> out = forward_with(tape, batch, [&tape](const Parameter<T>& p) {
    return tape.constant_view(p.value);
  });
  const auto m = out.value().mat();
  std::vector<Embedding> result(batch.size(), Embedding(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      result[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = static_cast<float>(m(r, c));
    }
  }
  return result;
}

template <typename T>
Embedding Encoder<T>::encode(const TokenSequence& ts) const {
  return embed(std::span<const TokenSequence>(&ts, 1)).front();
}

template <typename T>
std::vector<NamedTensor> Encoder<T>::export_tensors() const {
  std::vector<NamedTensor> out;
  for (const Parameter<T>* p : parameters()) {
    out.push_back({p->name, p->value.template cast<float>()});
  }
  return out;
}

template <typename T>
void Encoder<T>::import_tensors(const Checkpoint& ckpt) {
  for (Parameter<T>* p : parameters()) {
    const Tensor<float>& t = ckpt.tensor(p->name);
    if (t.shape() != p->value.shape()) {
      throw DataError("checkpoint tensor '" + p->name + "' has shape " + t.shape_string() +
                      ", encoder expects " + p->value.shape_string());
    }
    p->value = t.template cast<T>();
    p->grad = Tensor<T>(p->value.shape());
  }
}

template <typename T>
template <typename U>
Encoder<U> Encoder<T>::cast() const {
  Encoder<U> out(cfg_, 0);
  auto src = parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
  return out;
}

template class Encoder<float>;
template class Encoder<double>;
template Encoder<double> Encoder<float>::cast<double>() const;
template Encoder<float> Encoder<double>::cast<float>() const;
template Encoder<float> Encoder<float>::cast<float>() const;

TokenSequence EncoderModel::tokens(const Waveform& w, const MelExtractor& mel_extractor) const {
  return patchify(norm.apply(mel_extractor.compute(w)), encoder.patch_frames);
}

void save_encoder(const std::filesystem::path& dir, const EncoderModel& model) {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "encoder"},
               {"encoder", model.encoder},
               {"mel", model.mel},
               {"norm", {{"mean", model.norm.mean}, {"stddev", model.norm.stddev}}},
               {"extra", model.extra}};
  ckpt.tensors = model.net.export_tensors();
  save_checkpoint(dir, ckpt);
}

EncoderModel load_encoder(const std::filesystem::path& dir) {
  const Checkpoint ckpt = load_checkpoint(dir);
  if (ckpt.meta.value("kind", "") != "encoder") {
    throw DataError(dir.string() + " is not an encoder checkpoint");
  }
  EncoderModel model;
  try {
    model.encoder = ckpt.meta.at("encoder").get<EncoderConfig>();
    model.mel = ckpt.meta.at("mel").get<MelConfig>();
    model.norm.mean = ckpt.meta.at("norm").at("mean").get<double>();
    model.norm.stddev = ckpt.meta.at("norm").at("stddev").get<double>();
    model.extra = ckpt.meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("encoder checkpoint metadata is incomplete: " + std::string(e.what()));
  }
  if (model.mel.n_mels != model.encoder.n_mels) {
    throw DataError("encoder checkpoint: frontend n_mels does not match encoder n_mels");
  }
  model.net = Encoder<float>(model.encoder, 0);
  model.net.import_tensors(ckpt);
  return model;
}

std::vector<Waveform> context_windows(const Waveform& w, std::size_t context_len) {
  if (context_len == 0) throw UsageError("context length must be positive");
  if (w.size() < context_len) {
    throw DataError("waveform of " + std::to_string(w.size()) +
                    " samples is shorter than the context length " + std::to_string(context_len));
  }
  std::vector<Waveform> out;
  const std::size_t full = w.size() / context_len;
  const std::size_t tail = w.size() % context_len;
  for (std::size_t i = 0; i < full; ++i) {
    Waveform win;
    win.sample_rate = w.sample_rate;
    const auto begin = w.samples.begin() + static_cast<std::ptrdiff_t>(i * context_len);
    win.samples.assign(begin, begin + static_cast<std::ptrdiff_t>(context_len));
    out.push_back(std::move(win));
  }
  if (tail > 0 && 2 * tail >= context_len) {
    Waveform win;
    win.sample_rate = w.sample_rate;
    win.samples.assign(w.samples.end() - static_cast<std::ptrdiff_t>(tail), w.samples.end());
    win.samples.resize(context_len, 0.0f);
    out.push_back(std::move(win));
  }
  return out;
}

std::vector<Embedding> extract_features(const Waveform& w, std::size_t context_len,
                                        const EncoderModel& model,
                                        const MelExtractor& mel_extractor) {
  std::vector<Embedding> out;
  for (const Waveform& win : context_windows(w, context_len)) {
    out.push_back(model.net.encode(model.tokens(win, mel_extractor)));
  }
  return out;
}

std::vector<Embedding> extract_features(const Waveform& w, std::size_t context_len,
                                        const EncoderModel& model) {
  const MelExtractor mel(model.mel);
  return extract_features(w, context_len, model, mel);
}

}  // namespace keyprobe
