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
#include <string>
#include <string_view>

namespace keyprobe {

// Lower-case hex SHA-1 of raw bytes.
std::string sha1_hex(std::string_view bytes);

// Git object id of a blob: SHA-1 over "blob <size>\0" + content.
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);

// 64-bit seed for a named stage, derived from a root seed. Stable across
// platforms (FNV-1a over the name, mixed with splitmix64).
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

}  // namespace keyprobe
