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
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tsf/image.hpp"
#include "tsf/nn.hpp"

namespace tsf::data {

// Label taxonomy of one recognition task.
struct TaskSpec {
  std::string name;
  std::vector<std::string> classes;
  // Normalized raw emotion -> class index.
  std::map<std::string, int> emotion_map;

  std::size_t num_classes() const { return classes.size(); }
};

// casme2-5, casme2-3, samm-5, samm-3, casme3-7, casme3-4, or synthetic-K.
TaskSpec make_task(std::string_view name);
std::vector<std::string> builtin_task_names();

// Lower-cases, trims, and folds spelling variants ("happy", "other", "sad").
std::string normalize_emotion(std::string_view raw);

std::optional<int> map_emotion(std::string_view raw, const TaskSpec& task);

// Either an in-memory image or a file decoded on each access.
class ImageRef {
 public:
  ImageRef() = default;
  explicit ImageRef(std::filesystem::path path) : path_(std::move(path)) {}
  explicit ImageRef(Image image)
      : image_(std::make_shared<const Image>(std::move(image))) {}

  Image load() const;
  bool in_memory() const { return image_ != nullptr; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::shared_ptr<const Image> image_;
};

// Normalized [0, 1] box, used for the synthetic motion ground truth.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(double x, double y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
};

struct Sample {
  std::string subject_id;
  std::string clip_id;
  ImageRef onset;
  ImageRef apex;
  std::string emotion;
  int label = -1;
  std::optional<Box> motion_region;
};

struct DatasetIndex {
  std::vector<Sample> samples;
  TaskSpec task;
  std::size_t dropped = 0;
  std::map<std::string, std::size_t> dropped_by_emotion;

  std::vector<std::string> subjects() const;  // sorted, unique
  std::vector<int> labels() const;
};

// Reads `subject_id,clip_id,onset_path,apex_path,emotion` rows (header
// required, extra columns ignored except `motion_box` = "x0;y0;x1;y1").
// Image paths are resolved against the manifest's directory and decoded
// lazily. Rows whose emotion the task does not map are dropped and counted.
DatasetIndex load_manifest(const std::filesystem::path& path,
                           const TaskSpec& task);

// Writes every sample as PNG pairs plus manifest.csv into `dir`.
std::filesystem::path write_dataset(const DatasetIndex& index,
                                    const std::filesystem::path& dir);

// Pixelwise apex - onset.
Image difference_frame(const Image& onset, const Image& apex);

struct PreprocessConfig {
  std::size_t target_size = 224;
  bool train_augment = true;
  bool flip = true;  // random horizontal flip during training
  // Negative: 8 px scaled by target_size / 224.
  int crop_padding = -1;
  std::uint64_t rng_seed = 0;
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> std{0.5f, 0.5f, 0.5f};

  std::size_t padding() const;
};

// One random augmentation decision shared by both frames of a sample.
struct AugmentDraw {
  bool flip = false;
  std::size_t offset_y = 0;  // crop origin in the padded image
  std::size_t offset_x = 0;
};

AugmentDraw draw_augment(nn::Rng& rng, const PreprocessConfig& config);

// resize -> (train: flip, pad-and-crop) -> per-channel normalization.
Image preprocess(const Image& image, const PreprocessConfig& config,
                 bool train, const AugmentDraw& draw);

struct Fold {
  std::string held_out_subject;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::vector<Fold> folds;
};

// One fold per subject, ordered by subject id.
FoldPlan loso_folds(const DatasetIndex& index);

struct SynthConfig {
  std::size_t n_subjects = 4;
  std::size_t n_per_subject = 5;
  std::size_t classes = 3;
  std::size_t image_size = 64;
  std::uint64_t seed = 0;
  std::size_t patterns = 2;      // motion patterns M
  std::size_t decoys = 1;        // extra moving regions that carry no label
  double marker = 0.25;          // brightness of the static active-region marker
  double noise = 0.01;           // per-pixel Gaussian noise
};

// Class of a (region, pattern) combination: (region + pattern) mod classes.
// There are `classes` regions and `patterns` motion patterns.
int synth_class(std::size_t region, std::size_t pattern, std::size_t classes);

// Region box of region r in normalized coordinates (before subject offset).
Box synth_region_box(std::size_t region);
inline constexpr std::size_t kMaxSynthRegions = 8;

// Onsets are smooth random faces with one dark feature per region and a
// static bright marker above the active one. Apexes move the active feature
// along one pattern and each decoy feature along a random pattern. Where x how decides the class, so
// the onset alone misses the pattern and the difference frame alone cannot
// tell the active motion from the decoys.
DatasetIndex synthesize_dataset(const SynthConfig& config);

// Generating factors of every synthesized sample, in order.
struct SynthTruth {
  std::size_t region;
  std::size_t pattern;
  std::vector<std::size_t> decoy_regions;
  std::vector<std::size_t> decoy_patterns;
};
std::vector<SynthTruth> synth_truth(const SynthConfig& config);

}  // namespace tsf::data
