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
#include <optional>
#include <string>
#include <vector>

#include "keyprobe/encoder.hpp"

namespace keyprobe {

// Window embeddings of one track variant.
//
// File layout (little-endian):
//   "KPFEAT01" | u32 id_len | id | u64 context_len | u32 hash_len | hash |
//   i32 shift | i32 label | u32 n_windows | u32 dim | f32 values[n_windows * dim]
struct CachedFeatures {
  std::string track_id;
  std::uint64_t context_len = 0;
  std::string checkpoint_hash;
  int shift = 0;
  int label = 0;
  std::vector<Embedding> windows;
};

void write_feature_file(const std::filesystem::path& path, const CachedFeatures& f);
CachedFeatures read_feature_file(const std::filesystem::path& path);

// Root directory from KEYPROBE_CACHE_DIR, else ".keyprobe-cache".
std::filesystem::path default_cache_root();

// Exclusive advisory lock on a file, released on destruction.
class LockFile {
 public:
  explicit LockFile(const std::filesystem::path& path);
  ~LockFile();
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  int fd_ = -1;
};

// Entries keyed by (checkpoint hash, context length, shift, track id).
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path_for(const std::string& checkpoint_hash, std::uint64_t context_len,
                                 int shift, const std::string& track_id) const;

  std::optional<CachedFeatures> load(const std::string& checkpoint_hash, std::uint64_t context_len,
                                     int shift, const std::string& track_id) const;
  // Atomic replace via a temporary file.
  void store(const CachedFeatures& f) const;

  // Lock guarding concurrent writers on this cache root.
  LockFile lock() const;

  // Every entry stored under a checkpoint hash and context length.
  std::vector<CachedFeatures> load_all(const std::string& checkpoint_hash,
                                       std::uint64_t context_len) const;

 private:
  std::filesystem::path root_;
};

}  // namespace keyprobe
