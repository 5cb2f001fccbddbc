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
#include <cstring>
#include <fstream>

#include <gtest/gtest.h>

#include "keyprobe/error.hpp"
#include "keyprobe/feature_cache.hpp"
#include "keyprobe/hash.hpp"
#include "test_support.hpp"

namespace keyprobe {
namespace {

CachedFeatures sample(const std::string& id, int shift) {
  CachedFeatures f;
  f.track_id = id;
  f.context_len = 100000;
  f.checkpoint_hash = "0123456789abcdef0123456789abcdef01234567";
  f.shift = shift;
  f.label = 5;
  f.windows = {{1.0f, -2.5f, 3.25f}, {0.0f, 1e-8f, -7.0f}};
  return f;
}

TEST(FeatureFile, RoundTripAndLayout) {
  testing::TempDir dir;
  const CachedFeatures f = sample("a/b track", -3);
  write_feature_file(dir / "x.kpf", f);
  const CachedFeatures r = read_feature_file(dir / "x.kpf");
  EXPECT_EQ(r.track_id, f.track_id);
  EXPECT_EQ(r.context_len, f.context_len);
  EXPECT_EQ(r.checkpoint_hash, f.checkpoint_hash);
  EXPECT_EQ(r.shift, -3);
  EXPECT_EQ(r.label, 5);
  EXPECT_EQ(r.windows, f.windows);

  const std::string bytes = read_file_bytes(dir / "x.kpf");
  EXPECT_EQ(bytes.substr(0, 8), "KPFEAT01");
  const std::size_t header = 8 + 4 + f.track_id.size() + 8 + 4 + f.checkpoint_hash.size() + 4 + 4 + 4 + 4;
  EXPECT_EQ(bytes.size(), header + 6 * 4);
  float first = 0.0f;
  std::memcpy(&first, bytes.data() + header, 4);
  EXPECT_EQ(first, 1.0f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), f.track_id.size());
}

TEST(FeatureFile, CorruptFilesAreDataErrors) {
  testing::TempDir dir;
  write_feature_file(dir / "x.kpf", sample("t", 0));
  std::string bytes = read_file_bytes(dir / "x.kpf");
  std::ofstream(dir / "short.kpf", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(read_feature_file(dir / "short.kpf"), DataError);
  bytes[0] = 'X';
  std::ofstream(dir / "magic.kpf", std::ios::binary) << bytes;
  EXPECT_THROW(read_feature_file(dir / "magic.kpf"), DataError);
  EXPECT_THROW(read_feature_file(dir / "missing.kpf"), DataError);
}

TEST(FeatureCache, StoreLoadAndMiss) {
  testing::TempDir dir;
  const FeatureCache cache(dir.path());
  const CachedFeatures f = sample("song 1", 2);
  EXPECT_FALSE(cache.load(f.checkpoint_hash, f.context_len, 2, "song 1").has_value());
  cache.store(f);
  const auto hit = cache.load(f.checkpoint_hash, f.context_len, 2, "song 1");
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->windows, f.windows);
  EXPECT_FALSE(cache.load(f.checkpoint_hash, f.context_len, 3, "song 1").has_value());
  EXPECT_FALSE(cache.load(f.checkpoint_hash, 200000, 2, "song 1").has_value());
  EXPECT_FALSE(cache.load("ffff" + f.checkpoint_hash.substr(4), f.context_len, 2, "song 1").has_value());
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path())) {
    EXPECT_EQ(e.path().string().find(".tmp"), std::string::npos) << e.path();
  }
}

TEST(FeatureCache, PathsSeparateKeysAndSanitiseIds) {
  const FeatureCache cache("/cache");
  const std::string h = "0123456789abcdef0123456789abcdef01234567";
  const auto a = cache.path_for(h, 100000, 0, "x/y.wav");
  EXPECT_NE(a, cache.path_for(h, 100000, 1, "x/y.wav"));
  EXPECT_NE(a, cache.path_for(h, 200000, 0, "x/y.wav"));
  EXPECT_NE(a, cache.path_for(h, 100000, 0, "x_y.wav"));
  EXPECT_EQ(a.parent_path().parent_path().parent_path(), std::filesystem::path("/cache") / h.substr(0, 16));
  EXPECT_EQ(a.filename().string().find('/'), std::string::npos);
  EXPECT_EQ(a.extension(), ".kpf");
}

TEST(FeatureCache, LoadAllAndLock) {
  testing::TempDir dir;
  const FeatureCache cache(dir.path());
  {
    const LockFile lock = cache.lock();
    for (int s : {-1, 0, 1}) cache.store(sample("t" + std::to_string(s), s));
  }
  const auto all = cache.load_all(sample("t", 0).checkpoint_hash, 100000);
  EXPECT_EQ(all.size(), 3u);
  EXPECT_TRUE(cache.load_all("deadbeef", 100000).empty());
}

TEST(FeatureCache, DefaultRootFromEnvironment) {
  ::setenv("KEYPROBE_CACHE_DIR", "/tmp/kp-cache-test", 1);
  EXPECT_EQ(default_cache_root(), std::filesystem::path("/tmp/kp-cache-test"));
  ::unsetenv("KEYPROBE_CACHE_DIR");
  EXPECT_EQ(default_cache_root(), std::filesystem::path(".keyprobe-cache"));
}

}  // namespace
}  // namespace keyprobe
