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

#include <gtest/gtest.h>

#include "tsf/data.hpp"
#include "tsf/fusion.hpp"

namespace tsf::fusion {
namespace {

Var<float> random_images(std::size_t b, std::size_t s, nn::Rng& rng) {
  Tensor<float> t({b, 3, s, s});
  for (auto& v : t.values()) v = float(rng.normal(0.0, 0.5));
  return Var<float>(std::move(t));
}

TEST(Model, EveryModeAndTaskEmitsLogits) {
  nn::Rng rng(1);
  for (const auto& name : data::builtin_task_names()) {
    const auto task = data::make_task(name);
    const auto config = ModelConfig::tiny(task.num_classes());
    const auto diff = random_images(2, config.image_size, rng);
    const auto onset = random_images(2, config.image_size, rng);
    for (FusionMode mode : kAllModes) {
      TsfModel<float> model(config, mode, 7);
      for (bool training : {true, false}) {
        const auto out = model.forward(diff, onset, training);
        EXPECT_EQ(out.logits.shape(), (Shape{2, task.num_classes()}))
            << name << " " << to_string(mode);
        const std::size_t g = config.grid();
        EXPECT_EQ(out.fused.shape(), (Shape{2, config.embed_dim, g, g}));
      }
    }
  }
}

TEST(Model, LateWithSilencedSpatialBranchEqualsTemporalOnly) {
  nn::Rng rng(2);
  const auto config = ModelConfig::tiny(3);
  TsfModel<float> model(config, FusionMode::kLate, 3);
  // The final LayerNorm is the last op of the spatial branch.
  auto gamma = model.spatial()->final_norm().gamma();
  auto beta = model.spatial()->final_norm().beta();
  gamma.mutable_value().fill(0.0f);
  beta.mutable_value().fill(0.0f);
  const auto diff = random_images(2, config.image_size, rng);
  const auto onset = random_images(2, config.image_size, rng);
  const auto late = model.forward(diff, onset, FusionMode::kLate, false).logits.value();
  const auto temporal =
      model.forward(diff, onset, FusionMode::kTemporalOnly, false).logits.value();
  EXPECT_EQ(max_abs_diff(late, temporal), 0.0);
}

TEST(Model, LateIsElementwiseSum) {
  Var<float> a(Tensor<float>({1, 2, 1, 1}, {1.0f, 2.0f}));
  Var<float> b(Tensor<float>({1, 2, 1, 1}, {0.5f, -4.0f}));
  const auto y = fuse_late(a, b).value();
  EXPECT_FLOAT_EQ(y[0], 1.5f);
  EXPECT_FLOAT_EQ(y[1], -2.0f);
  Var<float> c(Tensor<float>({1, 3, 1, 1}));
  EXPECT_THROW(fuse_late(a, c), std::exception);
}

TEST(Model, MissingBranchIsAnError) {
  nn::Rng rng(3);
  const auto config = ModelConfig::tiny(3);
  TsfModel<float> model(config, FusionMode::kTemporalOnly, 1);
  const auto x = random_images(1, config.image_size, rng);
  EXPECT_THROW(model.forward(x, x, FusionMode::kLate, false), std::invalid_argument);
  EXPECT_THROW(model.forward(x, x, FusionMode::kSpatialOnly, false), std::invalid_argument);
  EXPECT_NO_THROW(model.forward(x, x, FusionMode::kTemporalOnly, false));
}

TEST(Model, SameSeedSameWeights) {
  const auto config = ModelConfig::tiny(3);
  TsfModel<float> a(config, FusionMode::kLate, 9), b(config, FusionMode::kLate, 9),
      c(config, FusionMode::kLate, 10);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_EQ(max_abs_diff(pa[i].var.value(), pb[i].var.value()), 0.0);
    if (pa[i].trainable && max_abs_diff(pa[i].var.value(), pc[i].var.value()) > 0) differs = true;
  }
  EXPECT_TRUE(differs);
}

TEST(Model, RecurrentRetentionGivesTheSameLogits) {
  nn::Rng rng(4);
  const auto config = ModelConfig::tiny(3);
  TsfModel<float> model(config, FusionMode::kLate, 5);
  const auto diff = random_images(2, config.image_size, rng);
  const auto onset = random_images(2, config.image_size, rng);
  const auto par = model.forward(diff, onset, false).logits.value();
  model.set_retention_form(temporal::RetentionForm::kRecurrent);
  const auto rec = model.forward(diff, onset, false).logits.value();
  EXPECT_LT(max_abs_diff(par, rec), 1e-4);
}

TEST(Head, ConstantMapPoolsToItsValue) {
  nn::Rng rng(5);
  const auto config = ModelConfig::tiny(4);
  Head<float> head(config, rng);
  Tensor<float> v({1, config.embed_dim, 1, 1});
  for (auto& x : v.values()) x = float(rng.normal());
  Tensor<float> map({1, config.embed_dim, 3, 3});
  for (std::size_t c = 0; c < config.embed_dim; ++c)
    for (std::size_t i = 0; i < 9; ++i) map[c * 9 + i] = v[c];
  const auto one = head(Var<float>(v), false).value();
  const auto many = head(Var<float>(map), false).value();
  ASSERT_EQ(one.shape(), (Shape{1, 4}));
  EXPECT_LT(max_abs_diff(one, many), 1e-5);
}

TEST(ModeNames, RoundTrip) {
  EXPECT_EQ(mode_names(), "temporal, spatial, early, t2s, s2t, late");
  for (FusionMode m : kAllModes) EXPECT_EQ(parse_mode(to_string(m)), m);
  EXPECT_FALSE(parse_mode("middle"));
}

TEST(ModelConfig, TinyIsValidAndPublishedGridIsFourteen) {
  EXPECT_NO_THROW(ModelConfig::tiny(3).validate());
  ModelConfig published;
  EXPECT_NO_THROW(published.validate());
  EXPECT_EQ(published.grid(), 14u);
  EXPECT_EQ(published.embed_dim, 512u);
  EXPECT_EQ(published.head_hidden, 1024u);
  ModelConfig bad;
  bad.patch_size = 15;
  EXPECT_THROW(bad.validate(), std::exception);
}

}  // namespace
}  // namespace tsf::fusion
