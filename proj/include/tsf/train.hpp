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
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsf/data.hpp"
#include "tsf/fusion.hpp"

namespace tsf::train {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct TrainConfig {
  double lr0 = 8e-4;
  double lr_decay = 0.95;  // per-epoch factor
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  AdamWConfig adamw;
  std::uint64_t seed = 0;
  ops::Reduction loss_reduction = ops::Reduction::kMean;
  bool augment = true;
  bool flip = true;
  int crop_padding = -1;

  void validate() const;
};

// lr0 * lr_decay^epoch for 0 <= epoch < epochs.
double lr_at(std::size_t epoch, const TrainConfig& config);

// First and second moments per trainable parameter, in parameter order.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

struct StepStatus {
  bool applied = true;
  std::string rejected_parameter;  // first parameter with a non-finite grad
};

// One decoupled-decay AdamW update over the trainable entries of `params`.
// A non-finite gradient anywhere rejects the whole step and leaves weights
// and state untouched.
template <typename T>
StepStatus adamw_step(nn::ParameterList<T>& params, AdamState<T>& state,
                      double lr, const AdamWConfig& config);

// Decoded frames resized to the model resolution, ready for augmentation.
struct PreparedSample {
  data::Image onset;
  data::Image apex;
  int label = -1;
};

std::vector<PreparedSample> prepare(const data::DatasetIndex& index,
                                    std::size_t image_size);

template <typename T>
struct Batch {
  Var<T> diff;   // (B, 3, S, S)
  Var<T> onset;  // (B, 3, S, S)
  std::vector<int> labels;
};

// Preprocesses both frames with one shared draw per sample, then differences.
template <typename T>
Batch<T> make_batch(const std::vector<PreparedSample>& samples,
                    std::span<const std::size_t> indices,
                    const data::PreprocessConfig& preprocess, bool train,
                    nn::Rng* rng);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;
  double train_acc = 0;
};

std::string to_json(const EpochLog& log);

template <typename T>
struct TrainState {
  AdamState<T> adam;
  std::size_t epoch = 0;  // epochs completed
  nn::Rng rng{0};
};

// Trains `model` on `subset` for the configured epochs. Writes one JSON
// line per epoch to `log` when given. Throws on an empty subset or a
// non-finite loss.
template <typename T>
std::vector<EpochLog> train(fusion::TsfModel<T>& model,
                            const std::vector<PreparedSample>& samples,
                            std::span<const std::size_t> subset,
                            const TrainConfig& config, TrainState<T>& state,
                            std::ostream* log = nullptr);

// Eval-mode argmax predictions.
template <typename T>
std::vector<int> predict(const fusion::TsfModel<T>& model,
                         const std::vector<PreparedSample>& samples,
                         std::span<const std::size_t> subset,
                         std::size_t batch_size);

// ---------------------------------------------------------------------------
// Checkpoints.

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  std::string config;  // run-config text snapshot
  std::uint64_t epoch = 0;
  std::uint64_t adam_step = 0;
  std::string rng_state;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize(const Checkpoint& checkpoint);
Checkpoint deserialize(const std::string& bytes);

// Weights, running statistics and Adam moments ("adam.m.<name>").
Checkpoint make_checkpoint(const fusion::TsfModel<float>& model,
                           const TrainState<float>& state,
                           const std::string& config_text);
// Throws on a missing array or a shape mismatch.
void restore(const Checkpoint& checkpoint, fusion::TsfModel<float>& model,
             TrainState<float>* state);

// ---------------------------------------------------------------------------
// Finite-difference gradient checks.

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Denominator floor of the relative error.
  double floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::string tensor;
  std::size_t coordinate = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of the scalar `loss()` with central
// differences over every tensor in `inputs`; `loss` must rebuild the graph
// from the current values on each call.
GradCheckResult grad_check(
    const std::function<Var<double>()>& loss,
    const std::vector<std::pair<std::string, Var<double>>>& inputs,
    const GradCheckOptions& options = {});

}  // namespace tsf::train
