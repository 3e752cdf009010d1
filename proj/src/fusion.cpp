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

#include "tsf/fusion.hpp"

#include <stdexcept>

namespace tsf::fusion {

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kTemporalOnly: return "temporal";
    case FusionMode::kSpatialOnly: return "spatial";
    case FusionMode::kEarly: return "early";
    case FusionMode::kTtoS: return "t2s";
    case FusionMode::kStoT: return "s2t";
    case FusionMode::kLate: return "late";
  }
  throw std::logic_error("unhandled fusion mode");
}

std::optional<FusionMode> parse_mode(std::string_view name) {
  for (FusionMode m : kAllModes) {
    if (to_string(m) == name) return m;
  }
  return std::nullopt;
}

std::string mode_names() {
  std::string out;
  for (FusionMode m : kAllModes) {
    if (!out.empty()) out += ", ";
    out += to_string(m);
  }
  return out;
}

template <typename T>
Var<T> fuse_late(const Var<T>& temporal, const Var<T>& spatial) {
  if (temporal.shape() != spatial.shape()) {
    throw std::invalid_argument("fuse_late: temporal " +
                                shape_string(temporal.shape()) +
                                " vs spatial " + shape_string(spatial.shape()));
  }
  return ops::add(temporal, spatial);
}

template <typename T>
Head<T>::Head(const ModelConfig& config, nn::Rng& rng)
    : width_(config.embed_dim), norm_kind_(config.head_norm) {
  fc_ = nn::Linear<T>(config.embed_dim, config.head_hidden, rng);
  if (norm_kind_ == HeadNorm::kBatch) {
    // Channel-last (B, N, hidden): the channel axis is the last one.
    batch_norm_ = nn::BatchNorm<T>(config.head_hidden, 2, config.bn_eps,
                                   config.bn_momentum);
  } else {
    layer_norm_ = nn::LayerNorm<T>(config.head_hidden, 1, config.ln_eps);
  }
  classifier_ = nn::Linear<T>(config.head_hidden, config.n_classes, rng);
}

template <typename T>
Var<T> Head<T>::operator()(const Var<T>& features, bool training) const {
  if (features.value().rank() != 4 || features.dim(1) != width_) {
    throw std::invalid_argument("head: expected (B, " + std::to_string(width_) +
                                ", H, W), got " +
                                shape_string(features.shape()));
  }
  Var<T> x = fc_(ops::grid_to_tokens(features));
  x = norm_kind_ == HeadNorm::kBatch ? batch_norm_(x, training) : layer_norm_(x);
  x = ops::mean_tokens(ops::swish(x));
  return classifier_(x);
}

template <typename T>
void Head<T>::collect(nn::ParameterList<T>& out,
                      const std::string& prefix) const {
  fc_.collect(out, prefix + ".fc");
  if (norm_kind_ == HeadNorm::kBatch) {
    batch_norm_.collect(out, prefix + ".bn");
  } else {
    layer_norm_.collect(out, prefix + ".ln");
  }
  classifier_.collect(out, prefix + ".classifier");
}

template <typename T>
TsfModel<T>::TsfModel(const ModelConfig& config, FusionMode mode,
                      std::uint64_t seed)
    : config_(config), mode_(mode) {
  config_.validate();
  nn::Rng rng(seed);
  const bool needs_temporal = mode != FusionMode::kSpatialOnly;
  const bool needs_spatial = mode == FusionMode::kSpatialOnly ||
                             mode == FusionMode::kLate ||
                             mode == FusionMode::kTtoS ||
                             mode == FusionMode::kStoT;
  if (needs_temporal) temporal_.emplace(config_, rng);
  if (mode == FusionMode::kEarly) {
    early_conv_.emplace(3, config_.stem_channels.front(), 3, 2, 1, rng);
    early_norm_.emplace(config_.stem_channels.front(), 1, config_.bn_eps,
                        config_.bn_momentum);
  }
  if (needs_spatial) spatial_.emplace(config_, rng);
  head_ = Head<T>(config_, rng);
}

template <typename T>
bool TsfModel<T>::supports(FusionMode mode) const {
  switch (mode) {
    case FusionMode::kTemporalOnly: return temporal_.has_value();
    case FusionMode::kSpatialOnly: return spatial_.has_value();
    case FusionMode::kEarly: return temporal_ && early_conv_;
    case FusionMode::kTtoS:
    case FusionMode::kStoT:
    case FusionMode::kLate: return temporal_ && spatial_;
  }
  return false;
}

template <typename T>
ForwardOutput<T> TsfModel<T>::forward(const Var<T>& diff, const Var<T>& onset,
                                      FusionMode mode, bool training) const {
  if (!supports(mode)) {
    throw std::invalid_argument("model built for mode '" +
                                std::string(to_string(mode_)) +
                                "' has no weights for mode '" +
                                std::string(to_string(mode)) + "'");
  }
  const std::size_t g = config_.grid();
  Var<T> fused;
  switch (mode) {
    case FusionMode::kTemporalOnly:
      fused = (*temporal_)(diff, training);
      break;
    case FusionMode::kSpatialOnly:
      fused = (*spatial_)(onset);
      break;
    case FusionMode::kLate:
      fused = fuse_late((*temporal_)(diff, training), (*spatial_)(onset));
      break;
    case FusionMode::kTtoS: {
      Var<T> t = ops::grid_to_tokens((*temporal_)(diff, training));
      Var<T> s = spatial_->embed(onset);
      fused = ops::tokens_to_grid(spatial_->encode(ops::add(t, s)), g, g);
      break;
    }
    case FusionMode::kStoT: {
      Var<T> s = spatial_->tokens(onset);
      Var<T> t = temporal_->stem()(diff, training).tokens;
      fused = ops::tokens_to_grid(temporal_->encode(ops::add(s, t)), g, g);
      break;
    }
    case FusionMode::kEarly: {
      const auto& stem = temporal_->stem();
      Var<T> a = stem.stage(0, diff, training);
      Var<T> b = ops::gelu((*early_norm_)((*early_conv_)(onset), training));
      Var<T> grid = stem.run(ops::add(a, b), training, 1);
      fused = ops::tokens_to_grid(temporal_->encode(ops::grid_to_tokens(grid)),
                                  g, g);
      break;
    }
  }
  return {head_(fused, training), fused};
}

template <typename T>
nn::ParameterList<T> TsfModel<T>::parameters() const {
  nn::ParameterList<T> out;
  if (temporal_) temporal_->collect(out, "temporal");
  if (early_conv_) {
    early_conv_->collect(out, "early.conv");
    early_norm_->collect(out, "early.bn");
  }
  if (spatial_) spatial_->collect(out, "spatial");
  head_.collect(out, "head");
  return out;
}

template <typename T>
void TsfModel<T>::set_retention_form(temporal::RetentionForm form) {
  config_.retention_form = form;
  if (temporal_) temporal_->set_form(form);
}

template Var<float> fuse_late<float>(const Var<float>&, const Var<float>&);
template Var<double> fuse_late<double>(const Var<double>&, const Var<double>&);
template class Head<float>;
template class Head<double>;
template class TsfModel<float>;
template class TsfModel<double>;

}  // namespace tsf::fusion
