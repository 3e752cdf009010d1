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

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "tsf/spatial.hpp"
#include "tsf/temporal.hpp"

namespace tsf::fusion {

enum class FusionMode { kTemporalOnly, kSpatialOnly, kEarly, kTtoS, kStoT, kLate };

inline constexpr std::array<FusionMode, 6> kAllModes{
    FusionMode::kTemporalOnly, FusionMode::kSpatialOnly, FusionMode::kEarly,
    FusionMode::kTtoS,         FusionMode::kStoT,        FusionMode::kLate};

// "temporal", "spatial", "early", "t2s", "s2t", "late".
std::string_view to_string(FusionMode mode);
std::optional<FusionMode> parse_mode(std::string_view name);
// Comma-separated list of every valid mode name.
std::string mode_names();

// F_t + F_s.
template <typename T>
Var<T> fuse_late(const Var<T>& temporal, const Var<T>& spatial);

// Per-position Linear(D -> hidden) -> norm -> swish -> mean over positions ->
// Linear(hidden -> classes).
template <typename T>
class Head {
 public:
  Head() = default;
  Head(const ModelConfig& config, nn::Rng& rng);

  // features: (B, D, H, W) -> logits (B, classes).
  Var<T> operator()(const Var<T>& features, bool training) const;
  void collect(nn::ParameterList<T>& out, const std::string& prefix) const;

 private:
  std::size_t width_ = 0;
  HeadNorm norm_kind_ = HeadNorm::kBatch;
  nn::Linear<T> fc_;
  nn::BatchNorm<T> batch_norm_;
  nn::LayerNorm<T> layer_norm_;
  nn::Linear<T> classifier_;
};

template <typename T>
struct ForwardOutput {
  Var<T> logits;  // (B, classes)
  Var<T> fused;   // (B, D, grid, grid) map entering the head
};

// One recognizer instance. Only the components the construction mode needs
// are allocated; forwarding a mode whose components are missing throws.
template <typename T>
class TsfModel {
 public:
  TsfModel(const ModelConfig& config, FusionMode mode, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  FusionMode mode() const { return mode_; }
  bool supports(FusionMode mode) const;

  // diff: preprocessed apex - onset, onset: preprocessed onset; both
  // (B, 3, S, S).
  ForwardOutput<T> forward(const Var<T>& diff, const Var<T>& onset,
                           FusionMode mode, bool training) const;
  ForwardOutput<T> forward(const Var<T>& diff, const Var<T>& onset,
                           bool training) const {
    return forward(diff, onset, mode_, training);
  }

  nn::ParameterList<T> parameters() const;

  std::optional<temporal::TemporalBranch<T>>& temporal() { return temporal_; }
  std::optional<spatial::SpatialBranch<T>>& spatial() { return spatial_; }
  void set_retention_form(temporal::RetentionForm form);

 private:
  ModelConfig config_;
  FusionMode mode_;
  std::optional<temporal::TemporalBranch<T>> temporal_;
  std::optional<spatial::SpatialBranch<T>> spatial_;
  // First stem stage for the onset stream of early fusion.
  std::optional<nn::Conv2d<T>> early_conv_;
  std::optional<nn::BatchNorm<T>> early_norm_;
  Head<T> head_;
};

}  // namespace tsf::fusion
