// Copyright 2026 The TSFmicro Authors
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
#include <string>
#include <string_view>
#include <vector>

#include "tsf/data.hpp"
#include "tsf/fusion.hpp"
#include "tsf/model_config.hpp"
#include "tsf/train.hpp"

namespace tsf {

// Flat `key = value` run description; `#` starts a comment. Lists are
// comma separated. Unset keys keep the defaults below.
struct RunConfig {
  std::string task = "casme2-5";
  fusion::FusionMode mode = fusion::FusionMode::kLate;

  ModelConfig model;  // n_classes is taken from the task
  train::TrainConfig train;

  std::filesystem::path manifest;
  std::filesystem::path output_dir = "runs";

  // Used by `synth`.
  data::SynthConfig synth;

  // Throws std::invalid_argument with the line number on a malformed line,
  // an unknown key or a bad value.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  // Applies one key; the same keys as the file format.
  void set(const std::string& key, const std::string& value);

  // Canonical text: every key, fixed order, round-trips through parse().
  std::string to_text() const;

  // Model hyperparameters with the task's class count.
  ModelConfig model_config() const;

  static std::vector<std::string> keys();
};

}  // namespace tsf
