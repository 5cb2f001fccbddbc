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

#include "keyprobe/feature_cache.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "keyprobe/error.hpp"
#include "keyprobe/hash.hpp"

namespace keyprobe {

namespace {

constexpr char kMagic[8] = {'K', 'P', 'F', 'E', 'A', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little, "feature files assume little-endian hosts");

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& is, const std::filesystem::path& path) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw DataError("feature file " + path.string() + " is truncated");
  }
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::filesystem::path& path) {
  const auto n = get<std::uint32_t>(is, path);
  if (n > (1u << 20)) throw DataError("feature file " + path.string() + " has a corrupt header");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw DataError("feature file " + path.string() + " is truncated");
  return s;
}

std::string safe_name(const std::string& id) {
  std::string out;
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
  }
  if (out.size() > 64) out.resize(64);
  return out + "-" + sha1_hex(id).substr(0, 10);
}

}  // namespace

void write_feature_file(const std::filesystem::path& path, const CachedFeatures& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  const std::size_t dim = f.windows.empty() ? 0 : f.windows.front().size();
  os.write(kMagic, sizeof kMagic);
  put_string(os, f.track_id);
  put(os, f.context_len);
  put_string(os, f.checkpoint_hash);
  put(os, static_cast<std::int32_t>(f.shift));
  put(os, static_cast<std::int32_t>(f.label));
  put(os, static_cast<std::uint32_t>(f.windows.size()));
  put(os, static_cast<std::uint32_t>(dim));
  for (const Embedding& e : f.windows) {
    if (e.size() != dim) throw UsageError("feature windows differ in width");
    os.write(reinterpret_cast<const char*>(e.data()), static_cast<std::streamsize>(dim * sizeof(float)));
  }
  if (!os) throw DataError("failed writing " + path.string());
}

CachedFeatures read_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError(path.string() + " is not a keyprobe feature file");
  }
  CachedFeatures f;
  f.track_id = get_string(is, path);
  f.context_len = get<std::uint64_t>(is, path);
  f.checkpoint_hash = get_string(is, path);
  f.shift = get<std::int32_t>(is, path);
  f.label = get<std::int32_t>(is, path);
  const auto n = get<std::uint32_t>(is, path);
  const auto dim = get<std::uint32_t>(is, path);
  f.windows.assign(n, Embedding(dim));
  for (Embedding& e : f.windows) {
    if (!is.read(reinterpret_cast<char*>(e.data()), static_cast<std::streamsize>(dim * sizeof(float)))) {
      throw DataError("feature file " + path.string() + " is truncated");
    }
  }
  return f;
}

std::filesystem::path default_cache_root() {
  if (const char* env = std::getenv("KEYPROBE_CACHE_DIR"); env != nullptr && *env != '\0') return env;
  return ".keyprobe-cache";
}

LockFile::LockFile(const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd_ < 0) throw DataError("cannot open lock file " + path.string());
  if (::flock(fd_, LOCK_EX) != 0) {
    ::close(fd_);
    throw DataError("cannot lock " + path.string());
  }
}

LockFile::~LockFile() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

FeatureCache::FeatureCache(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path FeatureCache::path_for(const std::string& checkpoint_hash,
                                             std::uint64_t context_len, int shift,
                                             const std::string& track_id) const {
  return root_ / checkpoint_hash.substr(0, 16) / ("ctx" + std::to_string(context_len)) /
         ("shift" + std::to_string(shift)) / (safe_name(track_id) + ".kpf");
}

std::optional<CachedFeatures> FeatureCache::load(const std::string& checkpoint_hash,
                                                 std::uint64_t context_len, int shift,
                                                 const std::string& track_id) const {
  const auto path = path_for(checkpoint_hash, context_len, shift, track_id);
  if (!std::filesystem::exists(path)) return std::nullopt;
  CachedFeatures f = read_feature_file(path);
  if (f.track_id != track_id || f.checkpoint_hash != checkpoint_hash ||
      f.context_len != context_len || f.shift != shift) {
    throw DataError("cache entry " + path.string() + " does not match its key");
  }
  return f;
}

void FeatureCache::store(const CachedFeatures& f) const {
  const auto path = path_for(f.checkpoint_hash, f.context_len, f.shift, f.track_id);
  std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  write_feature_file(tmp, f);
  std::filesystem::rename(tmp, path);
}

LockFile FeatureCache::lock() const { return LockFile(root_ / ".lock"); }

std::vector<CachedFeatures> FeatureCache::load_all(const std::string& checkpoint_hash,
                                                   std::uint64_t context_len) const {
  std::vector<CachedFeatures> out;
  const auto dir = root_ / checkpoint_hash.substr(0, 16) / ("ctx" + std::to_string(context_len));
  if (!std::filesystem::exists(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".kpf") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    CachedFeatures f = read_feature_file(p);
    if (f.checkpoint_hash == checkpoint_hash) out.push_back(std::move(f));
  }
  return out;
}

}  // namespace keyprobe
