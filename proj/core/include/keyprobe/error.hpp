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

#include <stdexcept>
#include <string>

namespace keyprobe {

// Base class for all library errors. The subclass decides the CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed an invalid argument or configuration (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Input data is malformed, missing or inconsistent (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN/Inf or diverged (exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace keyprobe
