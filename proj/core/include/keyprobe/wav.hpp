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

#include "keyprobe/audio.hpp"

namespace keyprobe {

enum class WavEncoding { kPcm16, kFloat32 };

// Reads 16-bit PCM or 32-bit float WAV. Multi-channel input is averaged to
// mono; if target_rate > 0 and differs from the file rate, the signal is
// resampled by linear interpolation.
Waveform read_wav(const std::filesystem::path& path, int target_rate = kDefaultSampleRate);

void write_wav(const std::filesystem::path& path, const Waveform& w,
               WavEncoding encoding = WavEncoding::kPcm16);

}  // namespace keyprobe
