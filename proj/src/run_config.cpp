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

#include "tsf/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace tsf {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  return v;
}

template <typename U>
U parse_int(const std::string& s) {
  U v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename V, typename F>
std::string join(const std::vector<V>& v, F f) {
  std::string out;
  for (const auto& x : v) {
    if (!out.empty()) out += ",";
    out += f(x);
  }
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define TSF_SIZE_FIELD(name, member)                                          \
  Field {                                                                     \
    name, [](const RunConfig& c) { return std::to_string(c.member); },        \
        [](RunConfig& c, const std::string& v) {                              \
          c.member = parse_int<std::size_t>(v);                               \
        }                                                                     \
  }
#define TSF_DOUBLE_FIELD(name, member)                                        \
  Field {                                                                     \
    name, [](const RunConfig& c) { return fmt(c.member); },                   \
        [](RunConfig& c, const std::string& v) { c.member = parse_double(v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> kFields{
      {"task", [](const RunConfig& c) { return c.task; },
       [](RunConfig& c, const std::string& v) {
         data::make_task(v);
         c.task = v;
       }},
      {"mode", [](const RunConfig& c) { return std::string(fusion::to_string(c.mode)); },
       [](RunConfig& c, const std::string& v) {
         const auto m = fusion::parse_mode(v);
         if (!m) {
           throw std::invalid_argument("unknown mode '" + v + "' (valid: " +
                                       fusion::mode_names() + ")");
         }
         c.mode = *m;
       }},
      TSF_SIZE_FIELD("image_size", model.image_size),
      TSF_SIZE_FIELD("patch_size", model.patch_size),
      TSF_SIZE_FIELD("embed_dim", model.embed_dim),
      {"stem_channels",
       [](const RunConfig& c) {
         return join(c.model.stem_channels, [](std::size_t x) { return std::to_string(x); });
       },
       [](RunConfig& c, const std::string& v) {
         c.model.stem_channels.clear();
         for (const auto& s : split_list(v)) {
           c.model.stem_channels.push_back(parse_int<std::size_t>(s));
         }
       }},
      TSF_SIZE_FIELD("retention_layers", model.retention_layers),
      TSF_SIZE_FIELD("retention_heads", model.retention_heads),
      {"retention_gammas",
       [](const RunConfig& c) { return join(c.model.retention_decays, fmt); },
       [](RunConfig& c, const std::string& v) {
         c.model.retention_decays.clear();
         for (const auto& s : split_list(v)) {
           c.model.retention_decays.push_back(parse_double(s));
         }
       }},
      {"retention_form",
       [](const RunConfig& c) {
         return std::string(temporal::to_string(c.model.retention_form));
       },
       [](RunConfig& c, const std::string& v) {
         const auto f = temporal::parse_retention_form(v);
         if (!f) {
           throw std::invalid_argument("retention_form must be parallel or recurrent");
         }
         c.model.retention_form = *f;
       }},
      TSF_SIZE_FIELD("transformer_layers", model.transformer_layers),
      TSF_SIZE_FIELD("transformer_heads", model.transformer_heads),
      TSF_SIZE_FIELD("head_hidden", model.head_hidden),
      {"head_norm",
       [](const RunConfig& c) {
         return std::string(c.model.head_norm == HeadNorm::kBatch ? "batch" : "layer");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "batch") {
           c.model.head_norm = HeadNorm::kBatch;
         } else if (v == "layer") {
           c.model.head_norm = HeadNorm::kLayer;
         } else {
           throw std::invalid_argument("head_norm must be batch or layer");
         }
       }},
      TSF_DOUBLE_FIELD("lr0", train.lr0),
      TSF_DOUBLE_FIELD("lr_decay", train.lr_decay),
      TSF_SIZE_FIELD("batch_size", train.batch_size),
      TSF_SIZE_FIELD("epochs", train.epochs),
      TSF_DOUBLE_FIELD("weight_decay", train.adamw.weight_decay),
      TSF_DOUBLE_FIELD("adam_beta1", train.adamw.beta1),
      TSF_DOUBLE_FIELD("adam_beta2", train.adamw.beta2),
      TSF_DOUBLE_FIELD("adam_eps", train.adamw.eps),
      {"loss_reduction",
       [](const RunConfig& c) {
         return std::string(c.train.loss_reduction == ops::Reduction::kMean ? "mean" : "sum");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "mean") {
           c.train.loss_reduction = ops::Reduction::kMean;
         } else if (v == "sum") {
           c.train.loss_reduction = ops::Reduction::kSum;
         } else {
           throw std::invalid_argument("loss_reduction must be mean or sum");
         }
       }},
      {"augment", [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.train.augment = parse_bool(v); }},
      {"flip", [](const RunConfig& c) { return std::string(c.train.flip ? "true" : "false"); },
       [](RunConfig& c, const std::string& v) { c.train.flip = parse_bool(v); }},
      {"crop_padding", [](const RunConfig& c) { return std::to_string(c.train.crop_padding); },
       [](RunConfig& c, const std::string& v) { c.train.crop_padding = parse_int<int>(v); }},
      {"seed", [](const RunConfig& c) { return std::to_string(c.train.seed); },
       [](RunConfig& c, const std::string& v) {
         c.train.seed = parse_int<std::uint64_t>(v);
       }},
      {"manifest", [](const RunConfig& c) { return c.manifest.string(); },
       [](RunConfig& c, const std::string& v) { c.manifest = v; }},
      {"output_dir", [](const RunConfig& c) { return c.output_dir.string(); },
       [](RunConfig& c, const std::string& v) { c.output_dir = v; }},
      TSF_SIZE_FIELD("synth_subjects", synth.n_subjects),
      TSF_SIZE_FIELD("synth_per_subject", synth.n_per_subject),
      TSF_SIZE_FIELD("synth_classes", synth.classes),
      TSF_SIZE_FIELD("synth_image_size", synth.image_size),
      TSF_SIZE_FIELD("synth_patterns", synth.patterns),
      TSF_SIZE_FIELD("synth_decoys", synth.decoys),
      TSF_DOUBLE_FIELD("synth_marker", synth.marker),
      TSF_DOUBLE_FIELD("synth_noise", synth.noise),
  };
  return kFields;
}

#undef TSF_SIZE_FIELD
#undef TSF_DOUBLE_FIELD

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  std::string known;
  for (const auto& f : fields()) known += std::string(known.empty() ? "" : ", ") + f.key;
  throw std::invalid_argument("unknown config key '" + key + "' (known: " + known + ")");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(number) +
                                  ": expected key = value");
    }
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(number) +
                                  ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  RunConfig c = parse(buf.str());
  // Relative data paths are taken relative to the config file.
  if (!c.manifest.empty() && c.manifest.is_relative()) {
    c.manifest = path.parent_path() / c.manifest;
  }
  return c;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  m.n_classes = data::make_task(task).num_classes();
  return m;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

}  // namespace tsf
