// Copyright 2026 The descboost Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace descboost {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct DegenerateVectorError : Error {
  using Error::Error;
};

struct ConfigurationError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

struct EvaluationError : Error {
  using Error::Error;
};

/// AP requested for an anchor without any positive.
struct UndefinedApError : Error {
  using Error::Error;
};

struct EmptyBatchError : Error {
  using Error::Error;
};

struct CalibrationError : Error {
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
struct NumericalAbort : Error {
  using Error::Error;
};

struct GenerationError : Error {
  using Error::Error;
};

struct FormatError : Error {
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), byte_offset(offset) {}
  std::uint64_t byte_offset;
};

/// Stored match labels disagree with the labels implied by the warp.
struct LabelError : Error {
  LabelError(const std::string& what, std::vector<std::size_t> anchors)
      : Error(what), offending_anchors(std::move(anchors)) {}
  std::vector<std::size_t> offending_anchors;
};

}  // namespace descboost
