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

#include <cmath>
#include <filesystem>
#include <sstream>

#include "tsf/gradcheck_suite.hpp"
#include "tsf/train.hpp"

namespace tsf::train {
namespace {

TEST(LearningRate, ExponentialDecay) {
  TrainConfig c;
  c.lr0 = 8e-4;
  c.lr_decay = 0.95;
  c.epochs = 50;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 8e-4);
  EXPECT_DOUBLE_EQ(lr_at(2, c), 8e-4 * 0.95 * 0.95);
  EXPECT_NEAR(lr_at(49, c), 8e-4 * std::pow(0.95, 49), 1e-18);
  EXPECT_THROW(lr_at(50, c), std::out_of_range);
  c.lr_decay = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

nn::ParameterList<double> scalar_param(double w) {
  nn::ParameterList<double> p;
  p.push_back({"w", Var<double>(Tensor<double>({1}, w), true), true});
  return p;
}

void set_grad(nn::ParameterList<double>& p, double g) {
  p[0].var.mutable_grad() = Tensor<double>({1}, g);
}

TEST(AdamW, HandTrace) {
  auto p = scalar_param(1.0);
  AdamState<double> state;
  AdamWConfig c;  // 0.9, 0.999, 1e-8, 0.05
  set_grad(p, 0.5);
  ASSERT_TRUE(adamw_step(p, state, 0.1, c).applied);
  // m_hat = 0.5, v_hat = 0.25: w = 1 * (1 - 0.1 * 0.05) - 0.1 * 0.5 / (0.5 + 1e-8)
  const double w1 = 0.995 - 0.1 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(p[0].var.value()[0], w1, 1e-15);
  set_grad(p, -1.0);
  ASSERT_TRUE(adamw_step(p, state, 0.1, c).applied);
  const double m = 0.9 * 0.05 - 0.1, v = 0.999 * 0.00025 + 0.001;
  const double m_hat = m / (1 - 0.81), v_hat = v / (1 - 0.999 * 0.999);
  const double w2 = w1 * 0.995 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
  EXPECT_NEAR(p[0].var.value()[0], w2, 1e-14);
  EXPECT_EQ(state.step, 2u);
}

TEST(AdamW, DecayActsWithoutGradient) {
  auto p = scalar_param(2.0);
  AdamState<double> state;
  AdamWConfig c;
  c.weight_decay = 0.5;
  set_grad(p, 0.0);
  adamw_step(p, state, 0.1, c);
  EXPECT_NEAR(p[0].var.value()[0], 2.0 * 0.95, 1e-12);
}

TEST(AdamW, NonFiniteGradientRejectsTheStep) {
  auto p = scalar_param(1.0);
  AdamState<double> state;
  set_grad(p, std::nan(""));
  const auto status = adamw_step(p, state, 0.1, {});
  EXPECT_FALSE(status.applied);
  EXPECT_EQ(status.rejected_parameter, "w");
  EXPECT_EQ(p[0].var.value()[0], 1.0);
  EXPECT_EQ(state.step, 0u);
}

TEST(AdamW, FrozenEntriesAreSkipped) {
  auto p = scalar_param(1.0);
  p.push_back({"running", Var<double>(Tensor<double>({1}, 3.0)), false});
  AdamState<double> state;
  set_grad(p, 1.0);
  adamw_step(p, state, 0.1, {});
  EXPECT_EQ(state.m.size(), 1u);
  EXPECT_EQ(p[1].var.value()[0], 3.0);
}

struct Fixture {
  data::DatasetIndex index;
  std::vector<PreparedSample> samples;
  std::vector<std::size_t> subset;
  ModelConfig model;
  TrainConfig train;
};

Fixture make_fixture() {
  Fixture f;
  data::SynthConfig sc;
  sc.n_subjects = 2;
  sc.n_per_subject = 6;
  sc.image_size = 16;
  f.index = data::synthesize_dataset(sc);
  f.model = ModelConfig::tiny(3);
  f.model.image_size = 16;
  f.model.patch_size = 4;
  f.model.stem_channels = {16, 64};
  f.samples = prepare(f.index, 16);
  for (std::size_t i = 0; i < f.samples.size(); ++i) f.subset.push_back(i);
  f.train.epochs = 3;
  f.train.batch_size = 5;
  f.train.lr0 = 1e-3;
  return f;
}

TrainState<float> fresh_state(std::uint64_t seed) {
  TrainState<float> s;
  s.rng = nn::Rng(seed);
  return s;
}

TEST(Checkpoint, SerializationIsByteStable) {
  auto f = make_fixture();
  fusion::TsfModel<float> model(f.model, fusion::FusionMode::kLate, 1);
  auto state = fresh_state(2);
  f.train.epochs = 1;
  train(model, f.samples, f.subset, f.train, state);
  const auto ckpt = make_checkpoint(model, state, "task = synthetic-3\n");
  const std::string bytes = serialize(ckpt);
  EXPECT_EQ(bytes.substr(0, 4), "TSFM");
  EXPECT_EQ(serialize(deserialize(bytes)), bytes);
  const auto path = std::filesystem::temp_directory_path() / "tsf_train_test.tsfm";
  save_checkpoint(ckpt, path);
  EXPECT_EQ(serialize(load_checkpoint(path)), bytes);
  EXPECT_NE(ckpt.find("adam.m.head.fc.weight"), nullptr);
  EXPECT_THROW(deserialize("TSFX" + bytes.substr(4)), std::exception);
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() / 2)), std::exception);
}

TEST(Checkpoint, ResumedTrainingMatchesUninterrupted) {
  auto f = make_fixture();
  fusion::TsfModel<float> straight(f.model, fusion::FusionMode::kLate, 1);
  auto s1 = fresh_state(3);
  train(straight, f.samples, f.subset, f.train, s1);

  fusion::TsfModel<float> first(f.model, fusion::FusionMode::kLate, 1);
  auto s2 = fresh_state(3);
  TrainConfig partial = f.train;
  partial.epochs = 1;
  train(first, f.samples, f.subset, partial, s2);
  const std::string bytes = serialize(make_checkpoint(first, s2, ""));

  fusion::TsfModel<float> resumed(f.model, fusion::FusionMode::kLate, 99);
  TrainState<float> s3;
  restore(deserialize(bytes), resumed, &s3);
  EXPECT_EQ(s3.epoch, 1u);
  train(resumed, f.samples, f.subset, f.train, s3);

  const auto a = straight.parameters(), b = resumed.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(max_abs_diff(a[i].var.value(), b[i].var.value()), 0.0) << a[i].name;
  }
}

TEST(Checkpoint, RestoreRejectsShapeMismatch) {
  auto f = make_fixture();
  fusion::TsfModel<float> model(f.model, fusion::FusionMode::kLate, 1);
  const auto ckpt = make_checkpoint(model, fresh_state(0), "");
  auto other = f.model;
  other.head_hidden = 64;
  fusion::TsfModel<float> wrong(other, fusion::FusionMode::kLate, 1);
  EXPECT_THROW(restore(ckpt, wrong, nullptr), std::exception);
}

TEST(Train, LogsOneLinePerEpochAndLearns) {
  auto f = make_fixture();
  f.train.epochs = 30;
  f.train.lr0 = 2e-3;
  f.train.augment = false;
  fusion::TsfModel<float> model(f.model, fusion::FusionMode::kLate, 4);
  auto state = fresh_state(5);
  std::ostringstream log;
  const auto logs = train(model, f.samples, f.subset, f.train, state, &log);
  ASSERT_EQ(logs.size(), 30u);
  EXPECT_LT(logs.back().loss, logs.front().loss);
  std::size_t lines = 0;
  for (char ch : log.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 30u);
  EXPECT_NE(log.str().find("\"train_acc\""), std::string::npos);
  const auto preds = predict(model, f.samples, f.subset, 4);
  EXPECT_EQ(preds.size(), f.subset.size());
}

TEST(Batch, DifferenceIsApexMinusOnset) {
  auto f = make_fixture();
  data::PreprocessConfig pre;
  pre.target_size = 16;
  const std::vector<std::size_t> idx{0, 3};
  const auto b = make_batch<float>(f.samples, idx, pre, false, nullptr);
  ASSERT_EQ(b.diff.shape(), (Shape{2, 3, 16, 16}));
  EXPECT_EQ(b.labels[1], f.samples[3].label);
  // CHW layout; normalization (x - 0.5) / 0.5 doubles the raw difference.
  const auto& s = f.samples[3];
  const float expect = 2.0f * (s.apex.at(5, 7, 1) - s.onset.at(5, 7, 1));
  EXPECT_NEAR(b.diff.value()[((1 * 3 + 1) * 16 + 5) * 16 + 7], expect, 1e-5);
}

TEST(GradCheck, OperationsAndModulesPass) {
  GradCheckSuiteOptions opts;
  opts.models = false;
  for (const auto& e : run_gradcheck_suite(opts)) {
    EXPECT_LE(e.result.max_rel_error, kGradCheckTolerance)
        << e.name << " worst " << e.result.tensor << "[" << e.result.coordinate << "]";
    EXPECT_GT(e.result.checked, 0u) << e.name;
  }
}

TEST(GradCheck, DetectsAWrongGradient) {
  // x * x with a sabotaged backward: central differences must disagree.
  Var<double> x(Tensor<double>({3}, {0.5, -1.0, 2.0}), true);
  const auto broken = [&] {
    Tensor<double> y({1}, 0.0);
    for (double v : x.value().values()) y[0] += v * v;
    return Var<double>::make(std::move(y), {x}, [x](Node<double>& n) mutable {
      for (std::size_t i = 0; i < 3; ++i) {
        x.mutable_grad()[i] += n.grad[0] * 3.0 * x.value()[i];
      }
    });
  };
  EXPECT_GT(grad_check(broken, {{"x", x}}).max_rel_error, 0.1);
}

}  // namespace
}  // namespace tsf::train
