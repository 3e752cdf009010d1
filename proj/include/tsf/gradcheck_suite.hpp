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

#include <cstdint>
#include <string>
#include <vector>

#include "tsf/train.hpp"

namespace tsf::train {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckEntry {
  std::string name;
  GradCheckResult result;
};

struct GradCheckSuiteOptions {
  std::uint64_t seed = 0;
  bool operations = true;
  bool modules = true;
  bool models = true;  // every fusion mode on the tiny configuration
  std::size_t module_coords = 24;  // sampled coordinates per module tensor
  std::size_t model_coords = 6;    // sampled coordinates per model tensor
};

// Double-precision finite-difference checks of every differentiable
// operation, the branch modules and each full fusion-mode forward.
std::vector<GradCheckEntry> run_gradcheck_suite(const GradCheckSuiteOptions& options);

}  // namespace tsf::train
