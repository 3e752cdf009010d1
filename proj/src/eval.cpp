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

#include "tsf/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace tsf::eval {

using nlohmann::ordered_json;

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < classes; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels,
                          std::size_t classes) {
  if (preds.size() != labels.size()) {
    throw std::invalid_argument("confusion: " + std::to_string(preds.size()) +
                                " predictions for " +
                                std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix m(classes);
  const int c = static_cast<int>(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= c || labels[i] < 0 || labels[i] >= c) {
      throw std::invalid_argument("confusion: pair " + std::to_string(i) + " (" +
                                  std::to_string(labels[i]) + ", " +
                                  std::to_string(preds[i]) +
                                  ") outside [0, " + std::to_string(classes) + ")");
    }
    ++m.at(labels[i], preds[i]);
  }
  return m;
}

std::vector<ClassMetrics> per_class(const ConfusionMatrix& m) {
  std::vector<ClassMetrics> out(m.classes);
  for (std::size_t i = 0; i < m.classes; ++i) {
    ClassMetrics& c = out[i];
    c.tp = m.at(i, i);
    for (std::size_t j = 0; j < m.classes; ++j) {
      if (j == i) continue;
      c.fn += m.at(i, j);
      c.fp += m.at(j, i);
    }
    c.support = c.tp + c.fn;
    c.recall_undefined = c.support == 0;
    c.recall = c.recall_undefined ? 0.0 : double(c.tp) / double(c.support);
    const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
    c.f1_undefined = denom == 0;
    c.f1 = c.f1_undefined ? 0.0 : 2.0 * double(c.tp) / double(denom);
  }
  return out;
}

double accuracy(const ConfusionMatrix& m) {
  const std::uint64_t n = m.total();
  return n == 0 ? 0.0 : double(m.trace()) / double(n);
}

double uf1(const ConfusionMatrix& m) {
  if (m.classes == 0) return 0.0;
  // Extended precision keeps small rational cases correctly rounded.
  long double sum = 0;
  for (const auto& c : per_class(m)) {
    if (!c.f1_undefined) sum += 2.0L * c.tp / static_cast<long double>(2 * c.tp + c.fp + c.fn);
  }
  return static_cast<double>(sum / m.classes);
}

double uar(const ConfusionMatrix& m) {
  if (m.classes == 0) return 0.0;
  long double sum = 0;
  for (const auto& c : per_class(m)) {
    if (!c.recall_undefined) sum += c.tp / static_cast<long double>(c.support);
  }
  return static_cast<double>(sum / m.classes);
}

// ---------------------------------------------------------------------------

std::string to_json(const MetricsReport& r) {
  ordered_json j;
  j["schema_version"] = r.schema_version;
  j["task"] = r.task;
  j["mode"] = r.mode;
  j["seed"] = r.seed;
  j["classes"] = r.class_names;
  auto folds = ordered_json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"subject", f.subject}, {"n_test", f.n_test}, {"correct", f.correct}});
  }
  j["folds"] = folds;
  auto rows = ordered_json::array();
  for (std::size_t t = 0; t < r.confusion.classes; ++t) {
    std::vector<std::uint64_t> row(r.confusion.counts.begin() + t * r.confusion.classes,
                                   r.confusion.counts.begin() + (t + 1) * r.confusion.classes);
    rows.push_back(row);
  }
  j["confusion"] = rows;
  j["acc"] = r.acc;
  j["uf1"] = r.uf1;
  j["uar"] = r.uar;
  j["fold_mean_acc"] = r.fold_mean_acc;
  auto classes = ordered_json::array();
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    const auto& c = r.per_class[i];
    classes.push_back({{"class", i < r.class_names.size() ? r.class_names[i] : ""},
                       {"support", c.support},
                       {"tp", c.tp},
                       {"fp", c.fp},
                       {"fn", c.fn},
                       {"recall", c.recall},
                       {"f1", c.f1},
                       {"recall_undefined", c.recall_undefined},
                       {"f1_undefined", c.f1_undefined}});
  }
  j["per_class"] = classes;
  auto preds = ordered_json::array();
  for (const auto& p : r.predictions) {
    preds.push_back({{"clip", p.clip_id}, {"subject", p.subject},
                     {"label", p.label}, {"pred", p.pred}});
  }
  j["predictions"] = preds;
  j["config"] = r.config;
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  const ordered_json j = ordered_json::parse(text);
  MetricsReport r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != MetricsReport::kSchemaVersion) {
    throw std::runtime_error("report: unsupported schema_version " +
                             std::to_string(r.schema_version));
  }
  r.task = j.at("task").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.class_names = j.at("classes").get<std::vector<std::string>>();
  for (const auto& f : j.at("folds")) {
    r.folds.push_back({f.at("subject").get<std::string>(), f.at("n_test").get<std::size_t>(),
                       f.at("correct").get<std::size_t>()});
  }
  const auto& rows = j.at("confusion");
  r.confusion = ConfusionMatrix(rows.size());
  for (std::size_t t = 0; t < rows.size(); ++t) {
    const auto row = rows[t].get<std::vector<std::uint64_t>>();
    if (row.size() != rows.size()) throw std::runtime_error("report: confusion is not square");
    for (std::size_t p = 0; p < row.size(); ++p) r.confusion.at(t, p) = row[p];
  }
  r.acc = j.at("acc").get<double>();
  r.uf1 = j.at("uf1").get<double>();
  r.uar = j.at("uar").get<double>();
  r.fold_mean_acc = j.at("fold_mean_acc").get<double>();
  for (const auto& c : j.at("per_class")) {
    ClassMetrics m;
    m.support = c.at("support").get<std::uint64_t>();
    m.tp = c.at("tp").get<std::uint64_t>();
    m.fp = c.at("fp").get<std::uint64_t>();
    m.fn = c.at("fn").get<std::uint64_t>();
    m.recall = c.at("recall").get<double>();
    m.f1 = c.at("f1").get<double>();
    m.recall_undefined = c.at("recall_undefined").get<bool>();
    m.f1_undefined = c.at("f1_undefined").get<bool>();
    r.per_class.push_back(m);
  }
  for (const auto& p : j.at("predictions")) {
    r.predictions.push_back({p.at("clip").get<std::string>(), p.at("subject").get<std::string>(),
                             p.at("label").get<int>(), p.at("pred").get<int>()});
  }
  r.config = j.at("config").get<std::string>();
  return r;
}

MetricsReport evaluate_folds(const data::DatasetIndex& index,
                             const data::FoldPlan& plan,
                             const FoldPredictor& predictor) {
  MetricsReport r;
  r.task = index.task.name;
  r.class_names = index.task.classes;
  const std::size_t n = index.samples.size();
  std::vector<int> pooled(n, -1);
  double fold_acc_sum = 0;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const data::Fold& fold = plan.folds[f];
    const std::vector<int> preds = predictor(fold, f);
    if (preds.size() != fold.test.size()) {
      throw std::runtime_error("fold " + fold.held_out_subject + ": " +
                               std::to_string(preds.size()) + " predictions for " +
                               std::to_string(fold.test.size()) + " test samples");
    }
    FoldSummary s{fold.held_out_subject, fold.test.size(), 0};
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const std::size_t k = fold.test[i];
      if (pooled.at(k) != -1) {
        throw std::runtime_error("sample " + index.samples[k].clip_id +
                                 " predicted by more than one fold");
      }
      pooled[k] = preds[i];
      s.correct += preds[i] == index.samples[k].label;
    }
    if (s.n_test > 0) fold_acc_sum += double(s.correct) / double(s.n_test);
    r.folds.push_back(s);
  }
  std::vector<int> preds, labels;
  for (std::size_t k = 0; k < n; ++k) {
    if (pooled[k] == -1) continue;
    const auto& s = index.samples[k];
    preds.push_back(pooled[k]);
    labels.push_back(s.label);
    r.predictions.push_back({s.clip_id, s.subject_id, s.label, pooled[k]});
  }
  r.confusion = confusion(preds, labels, index.task.num_classes());
  r.acc = accuracy(r.confusion);
  r.uf1 = uf1(r.confusion);
  r.uar = uar(r.confusion);
  r.per_class = per_class(r.confusion);
  r.fold_mean_acc = plan.folds.empty() ? 0.0 : fold_acc_sum / double(plan.folds.size());
  return r;
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t index) {
  // splitmix64 finalizer.
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (std::uint64_t(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

MetricsReport run_loso(const data::DatasetIndex& index, const LosoOptions& options) {
  const data::FoldPlan plan = data::loso_folds(index);
  ModelConfig model_config = options.model;
  model_config.n_classes = index.task.num_classes();
  model_config.validate();
  options.train.validate();
  const auto samples = train::prepare(index, model_config.image_size);
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

  auto predictor = [&](const data::Fold& fold, std::size_t f) {
    const std::uint64_t seed = fold_seed(options.train.seed, f);
    fusion::TsfModel<float> model(model_config, options.mode, seed);
    train::TrainState<float> state;
    state.rng = nn::Rng(seed ^ 0xA5A5A5A5A5A5A5A5ULL);
    std::filesystem::path dir;
    std::ofstream log;
    if (!options.out_dir.empty()) {
      dir = options.out_dir / ("fold_" + fold.held_out_subject);
      std::filesystem::create_directories(dir);
      log.open(dir / "train_log.jsonl", std::ios::trunc);
    }
    const auto logs = train::train(model, samples, fold.train, options.train, state,
                                   log.is_open() ? &log : nullptr);
    if (!dir.empty()) {
      train::save_checkpoint(train::make_checkpoint(model, state, options.config_text),
                             dir / "model.tsfm");
    }
    auto preds = train::predict(model, samples, fold.test, options.train.batch_size);
    if (options.progress) {
      std::size_t correct = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        correct += preds[i] == samples[fold.test[i]].label;
      }
      options.progress("fold " + fold.held_out_subject + ": train_acc " +
                       std::to_string(logs.back().train_acc) + ", test " +
                       std::to_string(correct) + "/" + std::to_string(preds.size()));
    }
    if (options.on_fold) options.on_fold(f, fold, model, samples);
    return preds;
  };

  MetricsReport report = evaluate_folds(index, plan, predictor);
  report.mode = std::string(fusion::to_string(options.mode));
  report.seed = options.train.seed;
  report.config = options.config_text;
  if (!options.out_dir.empty()) {
    std::ofstream out(options.out_dir / "report.json", std::ios::trunc);
    out << to_json(report);
    if (!out) throw std::runtime_error("cannot write report.json");
  }
  return report;
}

// ---------------------------------------------------------------------------

Tensor<float> gradcam_map(const Tensor<float>& features, const Tensor<float>& grads) {
  if (features.rank() != 3 || features.shape() != grads.shape()) {
    throw std::invalid_argument("gradcam_map: need matching (D, H, W) tensors, got " +
                                shape_string(features.shape()) + " and " +
                                shape_string(grads.shape()));
  }
  const std::size_t d = features.dim(0), h = features.dim(1), w = features.dim(2);
  const std::size_t hw = h * w;
  Tensor<float> cam({h, w});
  std::vector<double> acc(hw, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double alpha = 0;
    for (std::size_t i = 0; i < hw; ++i) alpha += grads[c * hw + i];
    alpha /= double(hw);
    for (std::size_t i = 0; i < hw; ++i) acc[i] += alpha * features[c * hw + i];
  }
  double lo = INFINITY, hi = -INFINITY;
  for (auto& v : acc) {
    v = std::max(v, 0.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) return cam;
  for (std::size_t i = 0; i < hw; ++i) cam[i] = static_cast<float>((acc[i] - lo) / (hi - lo));
  return cam;
}

GradCam gradcam(const fusion::TsfModel<float>& model, const Var<float>& diff,
                const Var<float>& onset, fusion::FusionMode mode,
                std::optional<int> target) {
  if (diff.value().rank() != 4 || diff.dim(0) != 1) {
    throw std::invalid_argument("gradcam: expects a single sample (1, 3, S, S)");
  }
  auto out = model.forward(diff, onset, mode, false);
  const Tensor<float>& logits = out.logits.value();
  const std::size_t classes = logits.dim(1);
  GradCam g;
  g.logits.assign(logits.values().begin(), logits.values().end());
  g.target = target.value_or(static_cast<int>(
      std::max_element(g.logits.begin(), g.logits.end()) - g.logits.begin()));
  if (g.target < 0 || g.target >= static_cast<int>(classes)) {
    throw std::out_of_range("gradcam: target class " + std::to_string(g.target) +
                            " outside [0, " + std::to_string(classes) + ")");
  }
  Tensor<float> seed(logits.shape());
  seed[static_cast<std::size_t>(g.target)] = 1.0f;
  out.logits.backward(seed);
  const Shape& fs = out.fused.shape();
  const Shape chw{fs[1], fs[2], fs[3]};
  g.map = gradcam_map(out.fused.value().reshaped(chw), out.fused.grad().reshaped(chw));
  for (const auto& p : model.parameters()) Var<float>(p.var).zero_grad();

  data::Image small(chw[1], chw[2], 1);
  std::copy(g.map.values().begin(), g.map.values().end(), small.pixels.begin());
  g.heatmap = data::resize_bilinear(small, diff.dim(2), diff.dim(3));
  return g;
}

std::pair<double, double> heatmap_peak(const data::Image& heatmap) {
  if (heatmap.empty()) throw std::invalid_argument("heatmap_peak: empty heatmap");
  std::size_t best = 0;
  for (std::size_t i = 0; i < heatmap.height * heatmap.width; ++i) {
    if (heatmap.pixels[i * heatmap.channels] > heatmap.pixels[best * heatmap.channels]) {
      best = i;
    }
  }
  const std::size_t y = best / heatmap.width, x = best % heatmap.width;
  return {(double(x) + 0.5) / double(heatmap.width),
          (double(y) + 0.5) / double(heatmap.height)};
}

namespace {

std::array<float, 3> jet(float v) {
  const auto ramp = [](float x) { return std::clamp(1.5f - std::abs(x), 0.0f, 1.0f); };
  return {ramp(4 * v - 3), ramp(4 * v - 2), ramp(4 * v - 1)};
}

}  // namespace

data::Image overlay(const data::Image& base, const data::Image& heatmap, double alpha) {
  if (base.channels != 3 || heatmap.channels != 1) {
    throw std::invalid_argument("overlay: need an RGB base and a 1-channel heatmap");
  }
  const data::Image heat = data::resize_bilinear(heatmap, base.height, base.width);
  data::Image out(base.height, base.width, 3);
  const float a = static_cast<float>(alpha);
  for (std::size_t y = 0; y < base.height; ++y) {
    for (std::size_t x = 0; x < base.width; ++x) {
      const auto c = jet(std::clamp(heat.at(y, x, 0), 0.0f, 1.0f));
      for (std::size_t k = 0; k < 3; ++k) {
        out.at(y, x, k) = (1 - a) * std::clamp(base.at(y, x, k), 0.0f, 1.0f) + a * c[k];
      }
    }
  }
  return out;
}

}  // namespace tsf::eval
