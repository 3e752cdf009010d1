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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsf/data.hpp"
#include "tsf/fusion.hpp"
#include "tsf/train.hpp"

namespace tsf::eval {

// Rows are true classes, columns predictions.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;  // row-major C x C

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t c) : classes(c), counts(c * c, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t pred) {
    return counts[truth * classes + pred];
  }
  std::uint64_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * classes + pred];
  }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

// Throws std::invalid_argument on a length mismatch or an out-of-range value.
ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels,
                          std::size_t classes);

struct ClassMetrics {
  std::uint64_t tp = 0, fp = 0, fn = 0, support = 0;
  double recall = 0;
  double f1 = 0;
  bool recall_undefined = false;  // no true samples: recall counted as 0
  bool f1_undefined = false;      // tp = fp = fn = 0: F1 counted as 0
};

std::vector<ClassMetrics> per_class(const ConfusionMatrix& m);

double accuracy(const ConfusionMatrix& m);  // 0 for an empty matrix
// Mean over all classes of 2TP / (2TP + FP + FN).
double uf1(const ConfusionMatrix& m);
// Mean over all classes of TP / N.
double uar(const ConfusionMatrix& m);

struct FoldSummary {
  std::string subject;
  std::size_t n_test = 0;
  std::size_t correct = 0;
};

struct Prediction {
  std::string clip_id;
  std::string subject;
  int label = -1;
  int pred = -1;
};

struct MetricsReport {
  static constexpr int kSchemaVersion = 1;
  int schema_version = kSchemaVersion;
  std::string task;
  std::string mode;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;
  std::vector<FoldSummary> folds;
  ConfusionMatrix confusion;
  double acc = 0, uf1 = 0, uar = 0;
  double fold_mean_acc = 0;  // unweighted mean of per-fold accuracy
  std::vector<ClassMetrics> per_class;
  std::vector<Prediction> predictions;  // dataset order
  std::string config;                   // run-config snapshot
};

std::string to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

// Per-fold predictor: returns one class per entry of fold.test.
using FoldPredictor =
    std::function<std::vector<int>(const data::Fold& fold, std::size_t index)>;

// Pools predictions over every fold and computes the metrics once.
MetricsReport evaluate_folds(const data::DatasetIndex& index,
                             const data::FoldPlan& plan,
                             const FoldPredictor& predictor);

struct LosoOptions {
  ModelConfig model;
  train::TrainConfig train;
  fusion::FusionMode mode = fusion::FusionMode::kLate;
  std::string config_text;
  // Empty: nothing is written. Otherwise fold_<subject>/{model.tsfm,
  // train_log.jsonl} and report.json.
  std::filesystem::path out_dir;
  // Called after each fold with the trained model.
  std::function<void(std::size_t fold, const data::Fold&,
                     const fusion::TsfModel<float>&,
                     const std::vector<train::PreparedSample>&)>
      on_fold;
  std::function<void(const std::string&)> progress;
};

// Seed of fold `index`: a fixed mix of the run seed and the index.
std::uint64_t fold_seed(std::uint64_t seed, std::size_t index);

MetricsReport run_loso(const data::DatasetIndex& index, const LosoOptions& options);

// ---------------------------------------------------------------------------
// Grad-CAM.

// features, grads: (D, g, g). Channel weights are the spatial mean of the
// gradients; the rectified weighted sum is min-max normalized. A map with
// no range (all equal) is returned as zeros.
Tensor<float> gradcam_map(const Tensor<float>& features, const Tensor<float>& grads);

struct GradCam {
  Tensor<float> map;     // (g, g) in [0, 1]
  data::Image heatmap;   // S x S x 1, bilinear upsampling of `map`
  int target = -1;
  std::vector<float> logits;
};

// diff, onset: (1, 3, S, S). Target defaults to the predicted class.
// Throws if the model has no weights for `mode`.
GradCam gradcam(const fusion::TsfModel<float>& model, const Var<float>& diff,
                const Var<float>& onset, fusion::FusionMode mode,
                std::optional<int> target = std::nullopt);

// Normalized (x, y) centre of the hottest pixel.
std::pair<double, double> heatmap_peak(const data::Image& heatmap);

// Jet-coloured heatmap blended over an RGB image in [0, 1].
data::Image overlay(const data::Image& base, const data::Image& heatmap,
                    double alpha = 0.5);

}  // namespace tsf::eval
