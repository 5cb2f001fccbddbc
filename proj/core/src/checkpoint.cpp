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

#include "keyprobe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "keyprobe/error.hpp"
#include "keyprobe/hash.hpp"

namespace keyprobe {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are written in host order; add byte swapping for big-endian hosts");

constexpr const char* kMetaFile = "meta.json";
constexpr const char* kBlobFile = "tensors.bin";

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof v));
}

}  // namespace

void write_tensor_blob(std::ostream& os, std::span<const NamedTensor> tensors) {
  for (const auto& nt : tensors) {
    put_u32(os, static_cast<std::uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put_u32(os, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(nt.tensor.data()),
             static_cast<std::streamsize>(nt.tensor.size() * sizeof(float)));
  }
  if (!os) throw DataError("failed writing tensor blob");
}

std::vector<NamedTensor> read_tensor_blob(std::istream& is) {
  std::vector<NamedTensor> out;
  std::uint32_t name_len = 0;
  while (get_u32(is, name_len)) {
    if (name_len > 4096) throw DataError("tensor blob: implausible name length");
    NamedTensor nt;
    nt.name.resize(name_len);
    std::uint32_t rank = 0;
    if (!is.read(nt.name.data(), name_len) || !get_u32(is, rank) || rank > 8) {
      throw DataError("tensor blob: truncated entry header");
    }
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) {
      std::uint32_t v = 0;
      if (!get_u32(is, v)) throw DataError("tensor blob: truncated dims for '" + nt.name + "'");
      d = v;
    }
    nt.tensor = Tensor<float>(shape);
    if (!is.read(reinterpret_cast<char*>(nt.tensor.data()),
                 static_cast<std::streamsize>(nt.tensor.size() * sizeof(float)))) {
      throw DataError("tensor blob: truncated values for '" + nt.name + "'");
    }
    out.push_back(std::move(nt));
  }
  return out;
}

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
  for (const auto& nt : tensors) {
    if (nt.name == name) return nt.tensor;
  }
  throw DataError("checkpoint has no tensor named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& nt : tensors) {
    if (nt.name == name) return true;
  }
  return false;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir.string());
  nlohmann::json meta = ckpt.meta;
  meta["format_version"] = kCheckpointFormatVersion;
  {
    std::ofstream out(dir / kMetaFile, std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / kMetaFile).string());
    out << meta.dump(2) << '\n';
  }
  std::ofstream blob(dir / kBlobFile, std::ios::binary);
  if (!blob) throw DataError("cannot write " + (dir / kBlobFile).string());
  write_tensor_blob(blob, ckpt.tensors);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  Checkpoint ckpt;
  std::ifstream meta(dir / kMetaFile);
  if (!meta) throw DataError("no checkpoint at " + dir.string() + " (missing meta.json)");
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint meta.json is not valid JSON: " + std::string(e.what()));
  }
  if (ckpt.meta.value("format_version", 0) != kCheckpointFormatVersion) {
    throw DataError("unsupported checkpoint format version in " + dir.string());
  }
  std::ifstream blob(dir / kBlobFile, std::ios::binary);
  if (!blob) throw DataError("checkpoint " + dir.string() + " is missing tensors.bin");
  ckpt.tensors = read_tensor_blob(blob);
  return ckpt;
}

std::string checkpoint_hash(const std::filesystem::path& dir) {
  return git_blob_hash(read_file_bytes(dir / kMetaFile) + read_file_bytes(dir / kBlobFile));
}

}  // namespace keyprobe
