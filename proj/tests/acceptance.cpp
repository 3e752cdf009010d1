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

// Acceptance checks: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsf/data.hpp"
#include "tsf/eval.hpp"
#include "tsf/gradcheck_suite.hpp"
#include "tsf/retention.hpp"
#include "tsf/train.hpp"

namespace {

namespace fs = std::filesystem;
using namespace tsf;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Outcome> g_outcomes;
std::ofstream g_log;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  char line[1024];
  std::snprintf(line, sizeof line, "[%s] criterion %d %s: %s", pass ? "PASS" : "FAIL", id,
                name.c_str(), detail.c_str());
  std::printf("%s\n", line);
  std::fflush(stdout);
  if (g_log) g_log << line << "\n" << std::flush;
  g_outcomes.push_back({id, pass, detail});
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// 1 ------------------------------------------------------------------------

void retention_duality() {
  const auto start = Clock::now();
  nn::Rng rng(101);
  double worst = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + rng.index(256);
    const std::size_t d = 2 * (1 + rng.index(32));
    const std::size_t dv = 1 + rng.index(64);
    const double gamma = rng.uniform(0.5, 1.0);
    Tensor<double> q({n, d}), k({n, d}), v({n, dv});
    for (auto* t : {&q, &k, &v})
      for (auto& x : t->values()) x = rng.normal();
    const auto theta = temporal::rotary_angles(d);
    const auto par = temporal::retention_parallel(q, k, v, gamma, theta);
    const auto rec = temporal::retention_recurrent(q, k, v, gamma, theta);
    worst = std::max(worst, max_abs_diff(par, rec) / std::max(max_abs(rec), 1e-300));
  }
  const double secs = seconds_since(start);
  report(1, "retention duality", worst <= 1e-10 && secs < 5.0,
         fmt("max rel err %.2e (tol 1e-10) over 60 sequences, %.2f s (limit 5 s)", worst, secs));
}

// 2 ------------------------------------------------------------------------

void gradient_suite() {
  const auto start = Clock::now();
  const auto results = train::run_gradcheck_suite({});
  const double secs = seconds_since(start);
  double worst = 0;
  std::string worst_name;
  for (const auto& e : results) {
    if (e.result.max_rel_error >= worst) {
      worst = e.result.max_rel_error;
      worst_name = e.name;
    }
  }
  report(2, "gradient suite", worst <= train::kGradCheckTolerance && secs < 120.0,
         fmt("%g checks, max rel err %.2e (tol 1e-4, ", double(results.size()), worst) +
             worst_name + fmt("), %.1f s (limit 120 s)", secs));
}

// 3 ------------------------------------------------------------------------

void shape_contract() {
  const auto start = Clock::now();
  bool ok = true;
  std::string detail;
  ModelConfig published;
  nn::Rng rng(3);
  Tensor<float> x({2, 3, 224, 224});
  for (auto& v : x.values()) v = float(rng.normal(0.0, 0.5));
  const Var<float> image(x);
  {
    published.n_classes = 5;
    fusion::TsfModel<float> model(published, fusion::FusionMode::kLate, 1);
    const Shape want{2, 512, 14, 14};
    const Shape t = (*model.temporal())(image, false).shape();
    const Shape s = (*model.spatial())(image).shape();
    ok = ok && t == want && s == want;
    detail = "temporal " + shape_string(t) + ", spatial " + shape_string(s);
  }
  std::size_t combos = 0;
  for (const auto& name : data::builtin_task_names()) {
    ModelConfig c = published;
    c.n_classes = data::make_task(name).num_classes();
    for (fusion::FusionMode mode : fusion::kAllModes) {
      fusion::TsfModel<float> model(c, mode, 2);
      const Shape got = model.forward(image, image, false).logits.shape();
      if (got != Shape{2, c.n_classes}) {
        ok = false;
        detail += "; " + name + "/" + std::string(fusion::to_string(mode)) + " gave " +
                  shape_string(got);
      }
      ++combos;
    }
  }
  report(3, "shape contract", ok,
         detail + fmt(", %g mode x task pairs emit (B, n_classes) at 224 px, %.1f s",
                      double(combos), seconds_since(start)));
}

// 4 ------------------------------------------------------------------------

void metrics_oracle() {
  nn::Rng rng(4);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t c = 2 + rng.index(9);
    eval::ConfusionMatrix m(c);
    for (auto& v : m.counts) v = rng.uniform() < 0.2 ? 0 : rng.index(40);
    double f1 = 0, rec = 0, diag = 0, total = 0;
    for (std::size_t k = 0; k < c; ++k) {
      double tp = double(m.at(k, k)), row = 0, col = 0;
      for (std::size_t j = 0; j < c; ++j) {
        row += double(m.at(k, j));
        col += double(m.at(j, k));
      }
      const double fp = col - tp, fn = row - tp;
      f1 += (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
      rec += row > 0 ? tp / row : 0.0;
      diag += tp;
      total += row;
    }
    const double acc = total > 0 ? diag / total : 0.0;
    worst = std::max({worst, std::abs(eval::uf1(m) - f1 / double(c)),
                      std::abs(eval::uar(m) - rec / double(c)),
                      std::abs(eval::accuracy(m) - acc)});
  }
  eval::ConfusionMatrix hand(2);
  hand.at(0, 0) = 5;
  hand.at(0, 1) = 5;
  hand.at(1, 1) = 10;
  const bool exact = eval::uf1(hand) == 11.0 / 15.0 && eval::uar(hand) == 0.75;
  report(4, "metrics oracle", worst <= 1e-12 && exact,
         fmt("max |diff| %.1e over 1000 matrices (tol 1e-12); [[5,5],[0,10]] UF1 %.17g, UAR %.17g",
             worst, eval::uf1(hand), eval::uar(hand)) +
             (exact ? " (exact)" : " (not exact)"));
}

// 5 ------------------------------------------------------------------------

void loso_protocol(const fs::path& work) {
  nn::Rng rng(5);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    data::DatasetIndex index;
    index.task = data::make_task("casme2-5");
    const std::size_t subjects = 2 + rng.index(20);
    const std::size_t n = subjects + rng.index(100);
    for (std::size_t i = 0; i < n; ++i) {
      data::Sample s;
      s.subject_id = "p" + std::to_string(i < subjects ? i : rng.index(subjects));
      s.clip_id = "c" + std::to_string(i);
      s.label = int(rng.index(5));
      index.samples.push_back(s);
    }
    std::shuffle(index.samples.begin(), index.samples.end(), rng.engine());
    const auto plan = data::loso_folds(index);
    if (plan.folds.size() != index.subjects().size()) ++violations;
    std::vector<int> seen(n, 0);
    for (const auto& f : plan.folds) {
      for (std::size_t i : f.test) {
        ++seen[i];
        violations += index.samples[i].subject_id != f.held_out_subject;
      }
      for (std::size_t i : f.train) violations += index.samples[i].subject_id == f.held_out_subject;
      violations += f.train.size() + f.test.size() != n;
    }
    for (int s : seen) violations += s != 1;
  }
  // Pooled count through a real training run.
  data::SynthConfig sc;
  sc.n_subjects = 4;
  sc.n_per_subject = 5;
  sc.image_size = 32;
  sc.seed = 7;
  const auto index = data::synthesize_dataset(sc);
  eval::LosoOptions opt;
  opt.model = ModelConfig::tiny(3);
  opt.train.epochs = 2;
  opt.train.batch_size = 8;
  opt.train.flip = false;
  opt.out_dir = work / "c5";
  const auto r = eval::run_loso(index, opt);
  std::size_t pooled = 0;
  for (const auto& f : r.folds) pooled += f.n_test;
  const bool ok = violations == 0 && r.confusion.total() == index.samples.size() &&
                  pooled == index.samples.size() && r.folds.size() == 4;
  report(5, "LOSO protocol", ok,
         fmt("%g invariant violations over 1000 manifests; 4-subject run pooled %g of %g "
             "predictions in %g folds",
             double(violations), double(r.confusion.total()), double(index.samples.size()),
             double(r.folds.size())));
}

// 6 ------------------------------------------------------------------------

void overfit_oracle() {
  const auto start = Clock::now();
  std::string detail;
  int passed = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    data::SynthConfig sc;
    sc.n_subjects = 4;
    sc.n_per_subject = 15;
    sc.classes = 3;
    sc.image_size = 64;
    sc.seed = seed;
    const auto index = data::synthesize_dataset(sc);
    const auto config = ModelConfig::tiny(3);
    const auto samples = train::prepare(index, config.image_size);
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    fusion::TsfModel<float> model(config, fusion::FusionMode::kLate, seed);
    train::TrainConfig tc;
    tc.lr0 = 2e-3;
    tc.lr_decay = 0.99;
    tc.batch_size = 16;
    tc.epochs = 200;
    tc.augment = false;
    tc.seed = seed;
    train::TrainState<float> state;
    state.rng = nn::Rng(seed);
    double acc = 0;
    std::size_t epochs = 0;
    // Evaluated on the training set in eval mode every 10 epochs.
    for (std::size_t stop = 10; stop <= tc.epochs; stop += 10) {
      train::TrainConfig leg = tc;
      leg.epochs = stop;
      train::train(model, samples, all, leg, state);
      state.epoch = stop;
      const auto preds = train::predict(model, samples, all, 32);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < all.size(); ++i) correct += preds[i] == samples[i].label;
      acc = double(correct) / double(all.size());
      epochs = stop;
      if (acc >= 0.95) break;
    }
    passed += acc >= 0.95;
    detail += fmt("seed %g: %.1f%% at epoch %g; ", double(seed), 100 * acc, double(epochs));
  }
  const double secs = seconds_since(start);
  report(6, "overfit oracle", passed == 3 && secs < 600,
         detail + fmt("%g/3 seeds >= 95%%, %.0f s (limit 600 s)", double(passed), secs));
}

// 7, 8, 10 -------------------------------------------------------------------

struct FusionStudy {
  std::map<fusion::FusionMode, std::vector<double>> acc;
  std::size_t cam_hits = 0, cam_correct = 0;
  double secs = 0;
};

// The where x how task: class = (region + pattern) mod 3, one decoy motion.
data::SynthConfig study_data(std::uint64_t seed) {
  data::SynthConfig sc;
  sc.n_subjects = 6;
  sc.n_per_subject = 30;
  sc.classes = 3;
  sc.image_size = 32;
  sc.patterns = 2;
  sc.decoys = 1;
  sc.seed = seed;
  return sc;
}

train::TrainConfig study_training(std::uint64_t seed) {
  train::TrainConfig tc;
  tc.lr0 = 2e-3;
  tc.lr_decay = 0.97;
  tc.batch_size = 16;
  tc.epochs = 60;
  tc.flip = false;  // mirrored faces swap left/right regions and motions
  tc.seed = seed;
  return tc;
}

FusionStudy fusion_study(const fs::path& work) {
  FusionStudy st;
  const auto start = Clock::now();
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto index = data::synthesize_dataset(study_data(seed));
    for (fusion::FusionMode mode : fusion::kAllModes) {
      eval::LosoOptions opt;
      opt.model = ModelConfig::tiny(3);
      opt.train = study_training(seed);
      opt.mode = mode;
      opt.out_dir = work / ("study_s" + std::to_string(seed)) / std::string(fusion::to_string(mode));
      if (mode == fusion::FusionMode::kLate) {
        opt.on_fold = [&](std::size_t, const data::Fold& fold, const fusion::TsfModel<float>& model,
                          const std::vector<train::PreparedSample>& samples) {
          data::PreprocessConfig pre;
          pre.target_size = model.config().image_size;
          for (std::size_t i : fold.test) {
            const std::size_t one[1] = {i};
            const auto batch = train::make_batch<float>(samples, one, pre, false, nullptr);
            const auto cam = eval::gradcam(model, batch.diff, batch.onset, mode);
            if (cam.target != samples[i].label) continue;
            ++st.cam_correct;
            const auto [px, py] = eval::heatmap_peak(cam.heatmap);
            st.cam_hits += index.samples[i].motion_region->contains(px, py);
          }
        };
      }
      const auto t = Clock::now();
      const auto r = eval::run_loso(index, opt);
      st.acc[mode].push_back(r.acc);
      std::printf("  seed %llu %-8s acc %.4f uf1 %.4f (%.0f s)\n", (unsigned long long)seed,
                  std::string(fusion::to_string(mode)).c_str(), r.acc, r.uf1, seconds_since(t));
      std::fflush(stdout);
    }
  }
  st.secs = seconds_since(start);
  return st;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

void fusion_criteria(const fs::path& work) {
  const auto st = fusion_study(work);
  using fusion::FusionMode;
  const double late = 100 * mean(st.acc.at(FusionMode::kLate));
  const double temporal = 100 * mean(st.acc.at(FusionMode::kTemporalOnly));
  const double spatial = 100 * mean(st.acc.at(FusionMode::kSpatialOnly));
  const double early = 100 * mean(st.acc.at(FusionMode::kEarly));
  const double t2s = 100 * mean(st.acc.at(FusionMode::kTtoS));
  const double s2t = 100 * mean(st.acc.at(FusionMode::kStoT));
  report(7, "fusion benefit", late >= temporal + 5 && temporal >= spatial && st.secs < 3600,
         fmt("3-seed pooled acc late %.2f, temporal %.2f, spatial %.2f; need late >= temporal + 5 "
             "and temporal >= spatial; %.0f s for 18 runs (limit 3600 s)",
             late, temporal, spatial, st.secs));
  report(8, "fusion ranking", late >= early && late >= t2s && late >= s2t,
         fmt("3-seed pooled acc late %.2f vs early %.2f, t2s %.2f, s2t %.2f", late, early, t2s,
             s2t));
  const double rate = st.cam_correct ? double(st.cam_hits) / double(st.cam_correct) : 0.0;
  report(10, "Grad-CAM localization", st.cam_correct > 0 && rate >= 0.70,
         fmt("peak inside the motion region for %g of %g correct late-fusion test samples "
             "(%.1f%%, need >= 70%%)",
             double(st.cam_hits), double(st.cam_correct), 100 * rate));
}

// 9 ------------------------------------------------------------------------

void determinism(const fs::path& work) {
  data::SynthConfig sc;
  sc.n_subjects = 3;
  sc.n_per_subject = 6;
  sc.image_size = 32;
  sc.seed = 9;
  const auto index = data::synthesize_dataset(sc);
  const auto run = [&](const std::string& name) {
    eval::LosoOptions opt;
    opt.model = ModelConfig::tiny(3);
    opt.train.epochs = 3;
    opt.train.batch_size = 8;
    opt.train.seed = 9;
    opt.config_text = "seed = 9\n";
    opt.out_dir = work / name;
    eval::run_loso(index, opt);
    std::ifstream in(opt.out_dir / "report.json", std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  const std::string a = run("c9_a"), b = run("c9_b");
  report(9, "determinism", !a.empty() && a == b,
         fmt("two loso runs wrote %g and %g byte reports, ", double(a.size()), double(b.size())) +
             (a == b ? "identical" : "different"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool strict = false;
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria");
  app.add_flag("--strict", strict, "Exit nonzero when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  const fs::path dir(work);
  fs::create_directories(dir);
  g_log.open(dir / "acceptance.log", std::ios::trunc);
  const auto want = [&](int id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };
  try {
    if (want(1)) retention_duality();
    if (want(2)) gradient_suite();
    if (want(3)) shape_contract();
    if (want(4)) metrics_oracle();
    if (want(5)) loso_protocol(dir);
    if (want(6)) overfit_oracle();
    if (want(9)) determinism(dir);
    if (want(7) || want(8) || want(10)) fusion_criteria(dir);
  } catch (const std::exception& e) {
    std::printf("error: %s\n", e.what());
    return 2;
  }
  std::string failed;
  std::size_t passed = 0;
  for (const auto& o : g_outcomes) {
    if (o.pass) {
      ++passed;
    } else {
      failed += (failed.empty() ? "" : ", ") + std::to_string(o.id);
    }
  }
  char summary[256];
  std::snprintf(summary, sizeof summary, "acceptance: %zu/%zu criteria passed%s%s", passed,
                g_outcomes.size(), failed.empty() ? "" : "; failed: ", failed.c_str());
  std::printf("%s\n", summary);
  g_log << summary << "\n";
  return strict && !failed.empty() ? 1 : 0;
}
