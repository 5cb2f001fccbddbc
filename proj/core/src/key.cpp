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

#include "keyprobe/key.hpp"

#include <array>
#include <cctype>
#include <sstream>
#include <vector>

#include "keyprobe/error.hpp"

namespace keyprobe {
namespace {

constexpr std::array<const char*, 12> kSharpNames = {
    "C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};

int mod12(int v) { return ((v % 12) + 12) % 12; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

int parse_tonic(std::string_view token) {
  if (token.empty()) throw DataError("empty tonic in key string");
  int pc = 0;
  switch (std::tolower(static_cast<unsigned char>(token[0]))) {
    case 'c': pc = 0; break;
    case 'd': pc = 2; break;
    case 'e': pc = 4; break;
    case 'f': pc = 5; break;
    case 'g': pc = 7; break;
    case 'a': pc = 9; break;
    case 'b': pc = 11; break;
    default:
      throw DataError("unknown tonic '" + std::string(token) + "'");
  }
  for (std::size_t i = 1; i < token.size(); ++i) {
    if (token[i] == '#') {
      ++pc;
    } else if (token[i] == 'b' || token[i] == 'B') {
      --pc;
    } else {
      throw DataError("unknown tonic '" + std::string(token) + "'");
    }
  }
  return mod12(pc);
}

Mode parse_mode(std::string_view token) {
  const std::string m = lower(token);
  if (m == "major" || m == "maj") return Mode::kMajor;
  if (m == "minor" || m == "min") return Mode::kMinor;
  throw DataError("unknown mode '" + std::string(token) + "'");
}

}  // namespace

int class_index(const Key& key) {
  return key.tonic + (key.mode == Mode::kMinor ? 12 : 0);
}

Key key_from_class(int index) {
  if (index < 0 || index >= kNumKeyClasses) {
    throw DataError("key class index out of range: " + std::to_string(index));
  }
  return Key{index % 12, index >= 12 ? Mode::kMinor : Mode::kMajor};
}

Key parse_key(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> tokens;
  for (std::string tok; in >> tok;) tokens.push_back(tok);
  if (tokens.size() != 2) {
    throw DataError("expected '<tonic> <mode>', got '" + std::string(text) + "'");
  }
  return Key{parse_tonic(tokens[0]), parse_mode(tokens[1])};
}

std::string format_key(const Key& key) {
  std::string out = kSharpNames.at(static_cast<std::size_t>(mod12(key.tonic)));
  out += key.mode == Mode::kMajor ? " major" : " minor";
  return out;
}

Key transpose_key(const Key& key, int semitones) {
  return Key{mod12(key.tonic + semitones), key.mode};
}

}  // namespace keyprobe
