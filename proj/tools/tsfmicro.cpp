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

// tsfmicro: synthetic data, training, LOSO evaluation, Grad-CAM export and
// gradient checks from the command line.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsf/eval.hpp"
#include "tsf/gradcheck_suite.hpp"
#include "tsf/run_config.hpp"

namespace {

using tsf::RunConfig;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::string> mode;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "Run config file (key = value)");
  app->add_option("--seed", c.seed, "Override the config seed");
  app->add_option("--set", c.overrides, "Override a config key: --set key=value");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.mode) cfg.set("mode", *c.mode);
  if (c.seed) cfg.train.seed = *c.seed;
  return cfg;
}

tsf::data::DatasetIndex load_data(const RunConfig& cfg) {
  if (cfg.manifest.empty()) {
    throw std::invalid_argument("no manifest: set `manifest` in the config");
  }
  auto index = tsf::data::load_manifest(cfg.manifest, tsf::data::make_task(cfg.task));
  std::cerr << "loaded " << index.samples.size() << " samples from " << cfg.manifest;
  if (index.dropped > 0) std::cerr << " (" << index.dropped << " rows outside the task)";
  std::cerr << "\n";
  return index;
}

int cmd_synth(const Common& c, const std::string& out_dir) {
  RunConfig cfg = resolve(c);
  tsf::data::SynthConfig s = cfg.synth;
  s.seed = cfg.train.seed;
  const auto index = tsf::data::synthesize_dataset(s);
  const auto manifest = tsf::data::write_dataset(index, out_dir);
  std::cout << "wrote " << index.samples.size() << " samples ("
            << s.n_subjects << " subjects, task " << index.task.name << ") to "
            << manifest.string() << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& holdout) {
  const RunConfig cfg = resolve(c);
  const auto index = load_data(cfg);
  tsf::ModelConfig model_config = cfg.model_config();
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < index.samples.size(); ++i) {
    (index.samples[i].subject_id == holdout ? test_idx : train_idx).push_back(i);
  }
  if (!holdout.empty() && test_idx.empty()) {
    throw std::invalid_argument("no samples for held-out subject '" + holdout + "'");
  }
  const auto samples = tsf::train::prepare(index, model_config.image_size);
  tsf::fusion::TsfModel<float> model(model_config, cfg.mode, cfg.train.seed);
  tsf::train::TrainState<float> state;
  state.rng = tsf::nn::Rng(cfg.train.seed ^ 0xA5A5A5A5A5A5A5A5ULL);
  std::filesystem::create_directories(cfg.output_dir);
  std::ofstream log(cfg.output_dir / "train_log.jsonl", std::ios::trunc);
  const auto logs = tsf::train::train(model, samples, train_idx, cfg.train, state, &log);
  tsf::train::save_checkpoint(tsf::train::make_checkpoint(model, state, cfg.to_text()),
                              cfg.output_dir / "model.tsfm");
  std::cout << "final epoch: loss " << logs.back().loss << ", train_acc "
            << logs.back().train_acc << "\n";
  if (!test_idx.empty()) {
    const auto preds = tsf::train::predict(model, samples, test_idx, cfg.train.batch_size);
    std::vector<int> labels;
    for (std::size_t i : test_idx) labels.push_back(samples[i].label);
    const auto m = tsf::eval::confusion(preds, labels, model_config.n_classes);
    std::cout << "held-out " << holdout << ": acc " << tsf::eval::accuracy(m) << ", uf1 "
              << tsf::eval::uf1(m) << ", uar " << tsf::eval::uar(m) << "\n";
  }
  std::cout << "checkpoint: " << (cfg.output_dir / "model.tsfm").string() << "\n";
  return 0;
}

int cmd_loso(const Common& c) {
  const RunConfig cfg = resolve(c);
  const auto index = load_data(cfg);
  tsf::eval::LosoOptions opts;
  opts.model = cfg.model_config();
  opts.train = cfg.train;
  opts.mode = cfg.mode;
  opts.config_text = cfg.to_text();
  opts.out_dir = cfg.output_dir;
  opts.progress = [](const std::string& s) { std::cerr << s << "\n"; };
  const auto report = tsf::eval::run_loso(index, opts);
  std::printf("mode %s: acc %.4f uf1 %.4f uar %.4f (fold mean acc %.4f)\n",
              report.mode.c_str(), report.acc, report.uf1, report.uar,
              report.fold_mean_acc);
  std::cout << "report: " << (cfg.output_dir / "report.json").string() << "\n";
  return 0;
}

// Restores a checkpoint with the architecture recorded in it.
tsf::fusion::TsfModel<float> load_model(const std::string& path, RunConfig& cfg) {
  const auto ckpt = tsf::train::load_checkpoint(path);
  const RunConfig saved = RunConfig::parse(ckpt.config);
  cfg.model = saved.model;
  cfg.task = saved.task;
  cfg.mode = saved.mode;
  tsf::fusion::TsfModel<float> model(cfg.model_config(), cfg.mode, 0);
  tsf::train::restore(ckpt, model, nullptr);
  return model;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& out) {
  RunConfig cfg = resolve(c);
  const std::filesystem::path manifest = cfg.manifest;
  auto model = load_model(checkpoint, cfg);
  cfg.manifest = manifest;
  const auto index = load_data(cfg);
  const auto samples = tsf::train::prepare(index, cfg.model.image_size);
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  tsf::data::FoldPlan plan;
  plan.folds.push_back({"all", {}, all});
  auto report = tsf::eval::evaluate_folds(index, plan, [&](const tsf::data::Fold& f, std::size_t) {
    return tsf::train::predict(model, samples, f.test, cfg.train.batch_size);
  });
  report.mode = std::string(tsf::fusion::to_string(cfg.mode));
  report.seed = cfg.train.seed;
  report.config = cfg.to_text();
  const std::string json = tsf::eval::to_json(report);
  if (out.empty()) {
    std::cout << json;
  } else {
    std::ofstream(out) << json;
    std::printf("acc %.4f uf1 %.4f uar %.4f -> %s\n", report.acc, report.uf1, report.uar,
                out.c_str());
  }
  return 0;
}

int cmd_gradcam(const Common& c, const std::string& checkpoint, const std::string& clip,
                std::optional<int> target, const std::string& out_dir) {
  RunConfig cfg = resolve(c);
  const std::filesystem::path manifest = cfg.manifest;
  auto model = load_model(checkpoint, cfg);
  cfg.manifest = manifest;
  const auto index = load_data(cfg);
  std::size_t k = index.samples.size();
  for (std::size_t i = 0; i < index.samples.size(); ++i) {
    if (index.samples[i].clip_id == clip) k = i;
  }
  if (k == index.samples.size()) throw std::invalid_argument("no clip '" + clip + "'");
  tsf::data::DatasetIndex one = index;
  one.samples = {index.samples[k]};
  const auto samples = tsf::train::prepare(one, cfg.model.image_size);
  tsf::data::PreprocessConfig pre;
  pre.target_size = cfg.model.image_size;
  const std::size_t idx = 0;
  auto batch = tsf::train::make_batch<float>(samples, {&idx, 1}, pre, false, nullptr);
  const auto cam = tsf::eval::gradcam(model, batch.diff, batch.onset, cfg.mode, target);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  tsf::data::write_png(dir / (clip + "_gradcam.png"), cam.heatmap);
  tsf::data::write_png(dir / (clip + "_overlay.png"),
                       tsf::eval::overlay(samples[0].onset, cam.heatmap));
  const auto [px, py] = tsf::eval::heatmap_peak(cam.heatmap);
  std::printf("target class %d (%s), peak at (%.3f, %.3f) -> %s\n", cam.target,
              index.task.classes[cam.target].c_str(), px, py, out_dir.c_str());
  return 0;
}

int cmd_gradcheck(const Common& c, bool quick) {
  const RunConfig cfg = resolve(c);
  tsf::train::GradCheckSuiteOptions opts;
  opts.seed = cfg.train.seed;
  opts.models = !quick;
  const auto start = std::chrono::steady_clock::now();
  const auto results = tsf::train::run_gradcheck_suite(opts);
  bool ok = true;
  for (const auto& e : results) {
    const bool pass = e.result.max_rel_error <= tsf::train::kGradCheckTolerance;
    ok = ok && pass;
    std::printf("%-26s %-4s max rel err %.3e over %zu coords (worst %s[%zu])\n",
                e.name.c_str(), pass ? "ok" : "FAIL", e.result.max_rel_error,
                e.result.checked, e.result.tensor.c_str(), e.result.coordinate);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s: %zu checks in %.1f s, tolerance %.0e\n", ok ? "PASS" : "FAIL",
              results.size(), secs, tsf::train::kGradCheckTolerance);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TSFmicro micro-expression recognizer"};
  app.require_subcommand(1);

  Common common;
  std::string out_dir = "synthetic";
  std::string holdout, checkpoint, clip, out_file;
  std::optional<int> target;
  bool quick = false;

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset and manifest");
  add_common(synth, common);
  synth->add_option("--out", out_dir, "Output directory")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train one model on a single split");
  add_common(train, common);
  train->add_option("--mode", common.mode, "Fusion mode");
  train->add_option("--holdout", holdout, "Subject excluded from training and tested");

  auto* loso = app.add_subcommand("loso", "Leave-one-subject-out protocol");
  add_common(loso, common);
  loso->add_option("--mode", common.mode, "Fusion mode");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--out", out_file, "Report path (default: stdout)");

  auto* cam = app.add_subcommand("gradcam", "Export a Grad-CAM heatmap and overlay");
  add_common(cam, common);
  cam->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  cam->add_option("--clip", clip, "clip_id of the sample")->required();
  cam->add_option("--target", target, "Target class (default: predicted)");
  cam->add_option("--out", out_dir, "Output directory")->capture_default_str();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  add_common(gradcheck, common);
  gradcheck->add_flag("--quick", quick, "Skip the full-model checks");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(common, out_dir);
    if (*train) return cmd_train(common, holdout);
    if (*loso) return cmd_loso(common);
    if (*eval) return cmd_eval(common, checkpoint, out_file);
    if (*cam) return cmd_gradcam(common, checkpoint, clip, target, out_dir);
    if (*gradcheck) return cmd_gradcheck(common, quick);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
