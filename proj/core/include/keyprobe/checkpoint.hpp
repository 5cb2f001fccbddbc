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

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "keyprobe/tensor.hpp"

namespace keyprobe {

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

// Blob layout, repeated until end of stream, all integers little-endian:
//   u32 name_len | name bytes | u32 rank | u32 dims[rank] | f32 values[prod(dims)]
void write_tensor_blob(std::ostream& os, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensor_blob(std::istream& is);

// A checkpoint is a directory holding meta.json and tensors.bin.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Tensor<float>& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Git-style hash over meta.json followed by tensors.bin.
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace keyprobe
