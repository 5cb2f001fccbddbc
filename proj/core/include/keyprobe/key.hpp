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
#include <string>
#include <string_view>

namespace keyprobe {

enum class Mode : std::uint8_t { kMajor = 0, kMinor = 1 };

inline constexpr int kNumKeyClasses = 24;

// A global musical key: tonic pitch class (C=0 .. B=11) plus mode.
struct Key {
  int tonic = 0;
  Mode mode = Mode::kMajor;

  friend bool operator==(const Key&, const Key&) = default;
};

// Class index = tonic + 12 * (mode == minor).
int class_index(const Key& key);
Key key_from_class(int index);

// Accepts "<letter>[#|b] <major|maj|minor|min>", case-insensitive, e.g.
// "d minor", "Eb major", "F# min". Throws DataError naming the bad token.
Key parse_key(std::string_view text);

// Canonical spelling with sharps, e.g. "C# minor".
std::string format_key(const Key& key);

// Shifts the tonic by n semitones (any integer), keeping the mode.
Key transpose_key(const Key& key, int semitones);

}  // namespace keyprobe
