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

#include "tsf/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tsf::data {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

TaskSpec build_task(std::string name, std::vector<std::string> classes,
                    std::vector<std::pair<std::string, std::string>> members) {
  TaskSpec t{std::move(name), std::move(classes), {}};
  for (const auto& [emotion, cls] : members) {
    const auto it = std::find(t.classes.begin(), t.classes.end(), cls);
    t.emotion_map[emotion] = static_cast<int>(it - t.classes.begin());
  }
  return t;
}

// RFC 4180 subset: comma separated, double-quoted fields with "" escapes.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  if (quoted) throw std::runtime_error("unterminated quote");
  out.push_back(trim(field));
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

Box parse_box(const std::string& text) {
  Box b;
  char sep = 0;
  std::istringstream in(text);
  in >> b.x0 >> sep >> b.y0 >> sep >> b.x1 >> sep >> b.y1;
  if (!in) throw std::runtime_error("malformed motion_box '" + text + "'");
  return b;
}

}  // namespace

std::string normalize_emotion(std::string_view raw) {
  std::string s = trim(raw);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  static const std::map<std::string, std::string> kAliases{
      {"happy", "happiness"},  {"other", "others"},    {"sad", "sadness"},
      {"surprised", "surprise"}, {"angry", "anger"},   {"disgusted", "disgust"},
      {"fearful", "fear"},     {"repressed", "repression"}};
  const auto it = kAliases.find(s);
  return it == kAliases.end() ? s : it->second;
}

TaskSpec make_task(std::string_view name) {
  if (name == "casme2-5") {
    return build_task("casme2-5",
                      {"happiness", "disgust", "repression", "surprise", "others"},
                      {{"happiness", "happiness"},
                       {"disgust", "disgust"},
                       {"repression", "repression"},
                       {"surprise", "surprise"},
                       {"others", "others"}});
  }
  if (name == "casme2-3" || name == "samm-3") {
    // Composite-protocol grouping: every negative-valence emotion is Negative.
    return build_task(std::string(name), {"negative", "positive", "surprise"},
                      {{"disgust", "negative"},
                       {"repression", "negative"},
                       {"anger", "negative"},
                       {"contempt", "negative"},
                       {"fear", "negative"},
                       {"sadness", "negative"},
                       {"happiness", "positive"},
                       {"surprise", "surprise"}});
  }
  if (name == "samm-5") {
    return build_task("samm-5",
                      {"happiness", "anger", "contempt", "surprise", "others"},
                      {{"happiness", "happiness"},
                       {"anger", "anger"},
                       {"contempt", "contempt"},
                       {"surprise", "surprise"},
                       {"others", "others"}});
  }
  if (name == "casme3-7") {
    return build_task("casme3-7",
                      {"happiness", "anger", "disgust", "fear", "sadness",
                       "surprise", "others"},
                      {{"happiness", "happiness"},
                       {"anger", "anger"},
                       {"disgust", "disgust"},
                       {"fear", "fear"},
                       {"sadness", "sadness"},
                       {"surprise", "surprise"},
                       {"others", "others"}});
  }
  if (name == "casme3-4") {
    return build_task("casme3-4", {"negative", "positive", "surprise", "others"},
                      {{"anger", "negative"},
                       {"disgust", "negative"},
                       {"fear", "negative"},
                       {"sadness", "negative"},
                       {"happiness", "positive"},
                       {"surprise", "surprise"},
                       {"others", "others"}});
  }
  constexpr std::string_view kSynth = "synthetic-";
  if (name.starts_with(kSynth)) {
    const std::string digits(name.substr(kSynth.size()));
    std::size_t pos = 0;
    int k = 0;
    try {
      k = std::stoi(digits, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == digits.size() && k >= 2 &&
        k <= static_cast<int>(kMaxSynthRegions)) {
      TaskSpec t;
      t.name = std::string(name);
      for (int c = 0; c < k; ++c) {
        t.classes.push_back("c" + std::to_string(c));
        t.emotion_map[t.classes.back()] = c;
      }
      return t;
    }
  }
  throw std::invalid_argument("unknown task '" + std::string(name) +
                              "' (expected casme2-5, casme2-3, samm-5, samm-3, "
                              "casme3-7, casme3-4 or synthetic-K with 2 <= K <= " +
                              std::to_string(kMaxSynthRegions) + ")");
}

std::vector<std::string> builtin_task_names() {
  return {"casme2-5", "casme2-3", "samm-5", "samm-3", "casme3-7", "casme3-4"};
}

std::optional<int> map_emotion(std::string_view raw, const TaskSpec& task) {
  const auto it = task.emotion_map.find(normalize_emotion(raw));
  if (it == task.emotion_map.end()) return std::nullopt;
  return it->second;
}

Image ImageRef::load() const {
  if (image_) return *image_;
  if (path_.empty()) throw std::runtime_error("image reference is empty");
  return read_image(path_);
}

std::vector<std::string> DatasetIndex::subjects() const {
  std::set<std::string> s;
  for (const auto& x : samples) s.insert(x.subject_id);
  return {s.begin(), s.end()};
}

std::vector<int> DatasetIndex::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

DatasetIndex load_manifest(const std::filesystem::path& path,
                           const TaskSpec& task) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest '" + path.string() + "' not found");
  const std::filesystem::path base = path.parent_path();
  std::string line;
  std::size_t row = 0;
  if (!std::getline(in, line)) {
    throw std::runtime_error("manifest '" + path.string() + "' is empty");
  }
  ++row;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  const std::vector<std::string> header = split_csv(line);
  const std::vector<std::string> required{"subject_id", "clip_id", "onset_path",
                                          "apex_path", "emotion"};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& r : required) {
    if (!col.count(r)) {
      throw std::runtime_error("manifest '" + path.string() +
                               "': header lacks column '" + r + "'");
    }
  }
  const auto box_col = col.find("motion_box");

  DatasetIndex index;
  index.task = task;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    try {
      f = split_csv(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest '" + path.string() + "' row " +
                               std::to_string(row) + ": " + e.what());
    }
    if (f.size() < header.size()) {
      throw std::runtime_error("manifest '" + path.string() + "' row " +
                               std::to_string(row) + ": expected " +
                               std::to_string(header.size()) + " fields, got " +
                               std::to_string(f.size()));
    }
    Sample s;
    s.subject_id = f[col["subject_id"]];
    s.clip_id = f[col["clip_id"]];
    s.emotion = f[col["emotion"]];
    if (s.subject_id.empty()) {
      throw std::runtime_error("manifest '" + path.string() + "' row " +
                               std::to_string(row) + ": empty subject_id");
    }
    if (f[col["onset_path"]].empty() || f[col["apex_path"]].empty()) {
      throw std::runtime_error("manifest '" + path.string() + "' row " +
                               std::to_string(row) + ": empty image path");
    }
    const auto label = map_emotion(s.emotion, task);
    if (!label) {
      ++index.dropped;
      ++index.dropped_by_emotion[normalize_emotion(s.emotion)];
      continue;
    }
    s.label = *label;
    s.onset = ImageRef(base / f[col["onset_path"]]);
    s.apex = ImageRef(base / f[col["apex_path"]]);
    if (box_col != col.end() && !f[box_col->second].empty()) {
      try {
        s.motion_region = parse_box(f[box_col->second]);
      } catch (const std::exception& e) {
        throw std::runtime_error("manifest '" + path.string() + "' row " +
                                 std::to_string(row) + ": " + e.what());
      }
    }
    index.samples.push_back(std::move(s));
  }
  return index;
}

std::filesystem::path write_dataset(const DatasetIndex& index,
                                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  const auto manifest = dir / "manifest.csv";
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("cannot write '" + manifest.string() + "'");
  out << "subject_id,clip_id,onset_path,apex_path,emotion,motion_box\n";
  for (const auto& s : index.samples) {
    const std::string onset = "images/" + s.clip_id + "_onset.png";
    const std::string apex = "images/" + s.clip_id + "_apex.png";
    write_png(dir / onset, s.onset.load());
    write_png(dir / apex, s.apex.load());
    std::string box;
    if (s.motion_region) {
      std::ostringstream b;
      b.precision(17);
      b << s.motion_region->x0 << ';' << s.motion_region->y0 << ';'
        << s.motion_region->x1 << ';' << s.motion_region->y1;
      box = b.str();
    }
    out << csv_field(s.subject_id) << ',' << csv_field(s.clip_id) << ','
        << onset << ',' << apex << ',' << csv_field(s.emotion) << ',' << box
        << '\n';
  }
  return manifest;
}

Image difference_frame(const Image& onset, const Image& apex) {
  if (!onset.same_shape(apex)) {
    throw std::invalid_argument(
        "difference_frame: onset " + std::to_string(onset.height) + "x" +
        std::to_string(onset.width) + "x" + std::to_string(onset.channels) +
        " vs apex " + std::to_string(apex.height) + "x" +
        std::to_string(apex.width) + "x" + std::to_string(apex.channels));
  }
  Image out(onset.height, onset.width, onset.channels);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = apex.pixels[i] - onset.pixels[i];
  }
  return out;
}

std::size_t PreprocessConfig::padding() const {
  if (crop_padding >= 0) return static_cast<std::size_t>(crop_padding);
  return static_cast<std::size_t>(std::lround(8.0 * double(target_size) / 224.0));
}

AugmentDraw draw_augment(nn::Rng& rng, const PreprocessConfig& config) {
  AugmentDraw d;
  const std::size_t pad = config.padding();
  d.flip = rng.uniform() < 0.5 && config.flip;
  d.offset_y = rng.index(2 * pad + 1);
  d.offset_x = rng.index(2 * pad + 1);
  return d;
}

Image preprocess(const Image& image, const PreprocessConfig& config,
                 bool train, const AugmentDraw& draw) {
  if (image.empty()) throw std::invalid_argument("preprocess: empty image");
  if (config.target_size == 0) {
    throw std::invalid_argument("preprocess: target_size must be positive");
  }
  const std::size_t n = config.target_size;
  Image img = resize_bilinear(image, n, n);
  if (train && config.train_augment) {
    const std::size_t pad = config.padding();
    Image out(n, n, img.channels);
    for (std::size_t y = 0; y < n; ++y) {
      // Padded coordinate (y + offset) maps back to source row y + offset - pad.
      const auto sy = static_cast<std::ptrdiff_t>(y + draw.offset_y) -
                      static_cast<std::ptrdiff_t>(pad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(n)) continue;
      for (std::size_t x = 0; x < n; ++x) {
        const auto px = static_cast<std::ptrdiff_t>(x + draw.offset_x) -
                        static_cast<std::ptrdiff_t>(pad);
        if (px < 0 || px >= static_cast<std::ptrdiff_t>(n)) continue;
        const std::size_t src_x =
            draw.flip ? n - 1 - static_cast<std::size_t>(px)
                      : static_cast<std::size_t>(px);
        for (std::size_t c = 0; c < img.channels; ++c) {
          out.at(y, x, c) = img.at(static_cast<std::size_t>(sy), src_x, c);
        }
      }
    }
    img = std::move(out);
  }
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::size_t c = i % img.channels;
    const std::size_t k = std::min<std::size_t>(c, 2);
    img.pixels[i] = (img.pixels[i] - config.mean[k]) / config.std[k];
  }
  return img;
}

FoldPlan loso_folds(const DatasetIndex& index) {
  if (index.samples.empty()) {
    throw std::invalid_argument("loso_folds: empty dataset");
  }
  const auto subjects = index.subjects();
  if (subjects.size() < 2) {
    throw std::invalid_argument(
        "loso_folds: need at least two subjects, got " +
        std::to_string(subjects.size()) + " (a fold would have no training data)");
  }
  FoldPlan plan;
  for (const auto& subject : subjects) {
    Fold fold;
    fold.held_out_subject = subject;
    for (std::size_t i = 0; i < index.samples.size(); ++i) {
      (index.samples[i].subject_id == subject ? fold.test : fold.train)
          .push_back(i);
    }
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Synthetic where x how generator.

int synth_class(std::size_t region, std::size_t pattern, std::size_t classes) {
  return static_cast<int>((region + pattern) % classes);
}

namespace {

// Region centers on a 4x4 layout (column, row), one patch cell each at the
// 8 px / 32 px configuration.
constexpr std::array<std::array<double, 2>, kMaxSynthRegions> kRegionCenters{{
    {0.375, 0.375},  // left brow
    {0.625, 0.375},  // right brow
    {0.375, 0.875},  // left mouth corner
    {0.625, 0.875},  // right mouth corner
    {0.375, 0.625},  // left cheek
    {0.625, 0.625},  // right cheek
    {0.125, 0.625},  // left jaw
    {0.875, 0.625},  // right jaw
}};

// Motion direction of each pattern: up, down, left, right.
constexpr std::array<std::array<double, 2>, 4> kPatternShift{{
    {0.0, -1.0}, {0.0, 1.0}, {-1.0, 0.0}, {1.0, 0.0}}};

constexpr double kRegionHalf = 0.125;

struct SubjectLook {
  double offset_x, offset_y;
  std::array<double, 3> skin;
  double face_rx, face_ry;
  double feature_depth;
  std::array<std::array<double, 4>, 3> bumps;  // cx, cy, sigma, amplitude
};

SubjectLook draw_subject(nn::Rng& rng) {
  SubjectLook s{};
  s.offset_x = rng.uniform(-0.03, 0.03);
  s.offset_y = rng.uniform(-0.03, 0.03);
  s.skin = {0.78 + rng.uniform(-0.08, 0.08), 0.60 + rng.uniform(-0.08, 0.08),
            0.50 + rng.uniform(-0.08, 0.08)};
  s.face_rx = 0.42 + rng.uniform(-0.03, 0.03);
  s.face_ry = 0.50 + rng.uniform(-0.03, 0.03);
  s.feature_depth = 0.35 + rng.uniform(-0.05, 0.05);
  for (auto& b : s.bumps) {
    b = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.12, 0.25),
         rng.uniform(-0.06, 0.06)};
  }
  return s;
}

// Additive Gaussian blob; positive depth darkens, negative brightens.
struct Blob {
  double cx, cy, sx, sy, depth;
};

// Renders face + blobs; coordinates are normalized to [0, 1]. Blobs are
// added linearly, so a static blob cancels exactly in apex - onset.
Image render_face(std::size_t size, const SubjectLook& look,
                  const std::vector<Blob>& blobs, double noise, nn::Rng& rng) {
  Image img(size, size, 3);
  const double s = double(size);
  const double fcx = 0.5 + look.offset_x, fcy = 0.55 + look.offset_y;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (x + 0.5) / s, v = (y + 0.5) / s;
      const double ex = (u - fcx) / look.face_rx, ey = (v - fcy) / look.face_ry;
      // Soft face mask.
      const double mask = 1.0 / (1.0 + std::exp((std::sqrt(ex * ex + ey * ey) - 1.0) * 12.0));
      double shade = 0.0;
      for (const auto& b : look.bumps) {
        const double dx = u - b[0], dy = v - b[1];
        shade += b[3] * std::exp(-(dx * dx + dy * dy) / (2 * b[2] * b[2]));
      }
      double dark = 0.0;
      for (const auto& b : blobs) {
        const double dx = (u - b.cx) / b.sx, dy = (v - b.cy) / b.sy;
        dark += b.depth * std::exp(-0.5 * (dx * dx + dy * dy));
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double bg = 0.18 + 0.04 * double(c);
        double val = mask * (look.skin[c] + shade) + (1 - mask) * bg - dark;
        val += noise * rng.normal();
        img.at(y, x, c) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return img;
}

// Per-subject (region, pattern) combos, cycling through shuffled rounds so
// every combination appears equally often. Decoys use a separate stream.
std::vector<SynthTruth> assign_combos(const SynthConfig& c) {
  const std::size_t regions = c.classes, combos = regions * c.patterns;
  nn::Rng rng(c.seed * 0x9E3779B97F4A7C15ULL + 1);
  nn::Rng decoy_rng(c.seed * 0x9E3779B97F4A7C15ULL + 2);
  std::vector<SynthTruth> out;
  for (std::size_t s = 0; s < c.n_subjects; ++s) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < c.n_per_subject; ++i) {
      if (i % combos == 0) {
        order.resize(combos);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng.engine());
      }
      const std::size_t k = order[i % combos];
      SynthTruth t{k / c.patterns, k % c.patterns, {}, {}};
      std::vector<std::size_t> others;
      for (std::size_t r = 0; r < regions; ++r) {
        if (r != t.region) others.push_back(r);
      }
      std::shuffle(others.begin(), others.end(), decoy_rng.engine());
      for (std::size_t d = 0; d < c.decoys; ++d) {
        t.decoy_regions.push_back(others[d]);
        t.decoy_patterns.push_back(decoy_rng.index(c.patterns));
      }
      out.push_back(std::move(t));
    }
  }
  return out;
}

void validate(const SynthConfig& c) {
  if (c.n_subjects == 0 || c.n_per_subject == 0 || c.classes == 0 ||
      c.image_size == 0 || c.patterns == 0) {
    throw std::invalid_argument("synthesize_dataset: counts must be positive");
  }
  if (c.classes < 2 || c.classes > kMaxSynthRegions) {
    throw std::invalid_argument("synthesize_dataset: classes must be in [2, " +
                                std::to_string(kMaxSynthRegions) + "]");
  }
  if (c.patterns > kPatternShift.size()) {
    throw std::invalid_argument("synthesize_dataset: at most 4 patterns");
  }
  if (c.decoys >= c.classes) {
    throw std::invalid_argument("synthesize_dataset: decoys must be < classes");
  }
}

}  // namespace

Box synth_region_box(std::size_t region) {
  const auto& c = kRegionCenters.at(region);
  return {c[0] - kRegionHalf, c[1] - kRegionHalf, c[0] + kRegionHalf,
          c[1] + kRegionHalf};
}

std::vector<SynthTruth> synth_truth(const SynthConfig& config) {
  validate(config);
  return assign_combos(config);
}

DatasetIndex synthesize_dataset(const SynthConfig& config) {
  validate(config);
  const auto truth = assign_combos(config);
  DatasetIndex index;
  index.task = make_task("synthetic-" + std::to_string(config.classes));
  nn::Rng rng(config.seed);
  // Displacement magnitude: one sixteenth of the image.
  const double shift = 1.0 / 16.0;
  std::size_t k = 0;
  for (std::size_t s = 0; s < config.n_subjects; ++s) {
    const SubjectLook look = draw_subject(rng);
    char subject[16];
    std::snprintf(subject, sizeof subject, "s%02zu", s);
    for (std::size_t i = 0; i < config.n_per_subject; ++i, ++k) {
      const SynthTruth& t = truth[k];
      std::vector<Blob> onset_blobs, apex_blobs;
      for (std::size_t r = 0; r < config.classes; ++r) {
        Blob f{kRegionCenters[r][0] + look.offset_x + rng.uniform(-0.015, 0.015),
               kRegionCenters[r][1] + look.offset_y + rng.uniform(-0.015, 0.015),
               0.06, 0.035, look.feature_depth};
        std::optional<std::size_t> pattern;
        if (r == t.region) {
          pattern = t.pattern;
          // Static marker just above the active feature.
          const Blob marker{f.cx, f.cy - 0.08, 0.03, 0.03, -config.marker};
          onset_blobs.push_back(marker);
          apex_blobs.push_back(marker);
        }
        for (std::size_t d = 0; d < t.decoy_regions.size(); ++d) {
          if (t.decoy_regions[d] == r) pattern = t.decoy_patterns[d];
        }
        onset_blobs.push_back(f);
        if (pattern) {
          const double mag = shift * rng.uniform(0.8, 1.2);
          f.cx += kPatternShift[*pattern][0] * mag;
          f.cy += kPatternShift[*pattern][1] * mag;
        }
        apex_blobs.push_back(f);
      }
      Sample sample;
      sample.subject_id = subject;
      char clip[48];
      std::snprintf(clip, sizeof clip, "%s_%03zu", subject, i);
      sample.clip_id = clip;
      sample.onset = ImageRef(
          render_face(config.image_size, look, onset_blobs, config.noise, rng));
      sample.apex = ImageRef(
          render_face(config.image_size, look, apex_blobs, config.noise, rng));
      sample.label = synth_class(t.region, t.pattern, config.classes);
      sample.emotion = index.task.classes[static_cast<std::size_t>(sample.label)];
      Box box = synth_region_box(t.region);
      box.x0 += look.offset_x;
      box.x1 += look.offset_x;
      box.y0 += look.offset_y;
      box.y1 += look.offset_y;
      sample.motion_region = box;
      index.samples.push_back(std::move(sample));
    }
  }
  return index;
}

}  // namespace tsf::data
