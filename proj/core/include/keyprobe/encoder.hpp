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
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyprobe/audio.hpp"
#include "keyprobe/autograd.hpp"
#include "keyprobe/checkpoint.hpp"

namespace keyprobe {

struct EncoderConfig {
  int embed_dim = 384;
  int depth = 4;
  int heads = 6;
  int mlp_dim = 1536;
  int n_mels = 128;
  int patch_frames = 2;
  double mask_ratio = 0.9;  // pretraining only

  int token_dim() const { return n_mels * patch_frames; }
  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const MelConfig& c);
void from_json(const nlohmann::json& j, MelConfig& c);

// Patch tokens plus the time index each token had before masking.
struct TokenSequence {
  Tensor<float> tokens;        // [n_tokens x token_dim]
  std::vector<int> positions;  // strictly increasing

  std::size_t size() const { return positions.size(); }
  std::size_t dim() const { return tokens.cols(); }
};

// Non-overlapping vertical patches of `patch_frames` frames spanning every
// Mel band. Token t holds frame 2t followed by frame 2t+1; an odd trailing
// frame is dropped.
TokenSequence patchify(const MelSpectrogram& mel, int patch_frames = 2);

// Keeps ceil((1 - ratio) * n) tokens sampled uniformly without replacement,
// in their original order and with their original positions.
TokenSequence mask_tokens(const TokenSequence& ts, double mask_ratio, std::uint64_t seed);

// Corpus-level standardisation of log-Mel values.
struct MelNorm {
  double mean = 0.0;
  double stddev = 1.0;

  static MelNorm fit(std::span<const MelSpectrogram> corpus);
  MelSpectrogram apply(const MelSpectrogram& mel) const;
};

using Embedding = std::vector<float>;

// Fixed 1-D sine/cosine code for one time position.
void positional_encoding(int position, std::span<float> out);

// Vision transformer over vertical patch tokens: linear patch embedding,
// sinusoidal positions, `depth` pre-norm blocks (multi-head attention, GELU
// MLP), final layer norm and mean pooling.
template <typename T>
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;

  // Encodes a batch of sequences of any length >= 1; returns [batch x embed_dim].
  Var<T> forward(Tape<T>& tape, std::span<const TokenSequence> batch);

  // Eval-mode embeddings, one per sequence.
  std::vector<Embedding> embed(std::span<const TokenSequence> batch) const;
  Embedding encode(const TokenSequence& ts) const;

  std::vector<NamedTensor> export_tensors() const;
  void import_tensors(const Checkpoint& ckpt);

  template <typename U>
  Encoder<U> cast() const;

 private:
  template <typename U>
  friend class Encoder;

  template <typename Leaf>
  Var<T> forward_with(Tape<T>& tape, std::span<const TokenSequence> batch, Leaf&& leaf) const;

  struct Block {
    Parameter<T> ln1_gain, ln1_bias, wq, wk, wv, wo;
    Parameter<T> ln2_gain, ln2_bias, w1, b1, w2, b2;
  };

  EncoderConfig cfg_;
  Parameter<T> patch_weight_, patch_bias_;
  std::vector<Block> blocks_;
  Parameter<T> final_gain_, final_bias_;
};

// Frozen encoder bundle: frontend settings, normalisation and weights.
struct EncoderModel {
  EncoderConfig encoder;
  MelConfig mel;
  MelNorm norm;
  Encoder<float> net{EncoderConfig{.depth = 0}, 0};
  nlohmann::json extra = nlohmann::json::object();  // e.g. pretraining config

  // waveform -> log-Mel -> standardise -> patchify
  TokenSequence tokens(const Waveform& w, const MelExtractor& mel_extractor) const;
};

void save_encoder(const std::filesystem::path& dir, const EncoderModel& model);
EncoderModel load_encoder(const std::filesystem::path& dir);

// Splits `w` into non-overlapping windows of `context_len` samples. A partial
// tail is zero-padded and kept when it holds at least half a window, otherwise
// dropped. Throws DataError if w is shorter than one window.
std::vector<Waveform> context_windows(const Waveform& w, std::size_t context_len);

// One eval-mode embedding per context window.
std::vector<Embedding> extract_features(const Waveform& w, std::size_t context_len,
                                        const EncoderModel& model,
                                        const MelExtractor& mel_extractor);
std::vector<Embedding> extract_features(const Waveform& w, std::size_t context_len,
                                        const EncoderModel& model);

}  // namespace keyprobe
