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

#include "tsf/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace tsf::train {

void TrainConfig::validate() const {
  if (!(lr0 >= 0) || !std::isfinite(lr0)) {
    throw std::invalid_argument("lr0 must be finite and >= 0");
  }
  if (!(lr_decay > 0 && lr_decay <= 1)) {
    throw std::invalid_argument("lr_decay must lie in (0, 1]");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(adamw.beta1 >= 0 && adamw.beta1 < 1) ||
      !(adamw.beta2 >= 0 && adamw.beta2 < 1) || !(adamw.eps > 0) ||
      !(adamw.weight_decay >= 0)) {
    throw std::invalid_argument("AdamW hyperparameters out of range");
  }
}

double lr_at(std::size_t epoch, const TrainConfig& config) {
  if (epoch >= config.epochs) {
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) +
                            " outside [0, " + std::to_string(config.epochs) +
                            ")");
  }
  return config.lr0 * std::pow(config.lr_decay, double(epoch));
}

template <typename T>
StepStatus adamw_step(nn::ParameterList<T>& params, AdamState<T>& state,
                      double lr, const AdamWConfig& config) {
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].trainable) trainable.push_back(i);
  }
  if (state.m.empty()) {
    for (std::size_t i : trainable) {
      state.m.emplace_back(params[i].var.shape());
      state.v.emplace_back(params[i].var.shape());
    }
  }
  if (state.m.size() != trainable.size()) {
    throw std::invalid_argument("adamw_step: state holds " +
                                std::to_string(state.m.size()) +
                                " moments for " +
                                std::to_string(trainable.size()) +
                                " parameters");
  }
  for (std::size_t j = 0; j < trainable.size(); ++j) {
    const auto& p = params[trainable[j]];
    if (state.m[j].shape() != p.var.shape()) {
      throw std::invalid_argument("adamw_step: state shape mismatch for " +
                                  p.name);
    }
    if (!p.var.has_grad()) continue;
    for (T g : p.var.grad().values()) {
      if (!std::isfinite(double(g))) return {false, p.name};
    }
  }

  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  for (std::size_t j = 0; j < trainable.size(); ++j) {
    auto& p = params[trainable[j]];
    Tensor<T>& w = p.var.mutable_value();
    auto& m = state.m[j];
    auto& v = state.v[j];
    const bool has_grad = p.var.has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has_grad ? double(p.var.grad()[i]) : 0.0;
      const double mi = b1 * double(m[i]) + (1 - b1) * g;
      const double vi = b2 * double(v[i]) + (1 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double wi = double(w[i]) * (1.0 - lr * config.weight_decay);
      wi -= lr * (mi / c1) / (std::sqrt(vi / c2) + config.eps);
      w[i] = static_cast<T>(wi);
    }
  }
  return {};
}

std::vector<PreparedSample> prepare(const data::DatasetIndex& index,
                                    std::size_t image_size) {
  std::vector<PreparedSample> out;
  out.reserve(index.samples.size());
  for (const auto& s : index.samples) {
    PreparedSample p;
    const data::Image onset = s.onset.load();
    const data::Image apex = s.apex.load();
    if (!onset.same_shape(apex)) {
      throw std::invalid_argument("sample " + s.clip_id +
                                  ": onset and apex sizes differ");
    }
    p.onset = data::resize_bilinear(onset, image_size, image_size);
    p.apex = data::resize_bilinear(apex, image_size, image_size);
    p.label = s.label;
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

template <typename T>
void write_chw(const data::Image& img, T* dst) {
  const std::size_t hw = img.height * img.width;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        dst[c * hw + y * img.width + x] = static_cast<T>(img.at(y, x, c));
      }
    }
  }
}

}  // namespace

template <typename T>
Batch<T> make_batch(const std::vector<PreparedSample>& samples,
                    std::span<const std::size_t> indices,
                    const data::PreprocessConfig& preprocess, bool train,
                    nn::Rng* rng) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t s = preprocess.target_size;
  const std::size_t per = 3 * s * s;
  Tensor<T> diff({indices.size(), 3, s, s});
  Tensor<T> onset({indices.size(), 3, s, s});
  Batch<T> batch;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const PreparedSample& sample = samples.at(indices[b]);
    data::AugmentDraw draw;
    if (train && preprocess.train_augment) {
      if (!rng) throw std::invalid_argument("make_batch: augmentation needs an rng");
      draw = data::draw_augment(*rng, preprocess);
    }
    const data::Image o = data::preprocess(sample.onset, preprocess, train, draw);
    const data::Image a = data::preprocess(sample.apex, preprocess, train, draw);
    if (o.channels != 3) throw std::invalid_argument("make_batch: need RGB frames");
    write_chw(o, onset.data() + b * per);
    write_chw(data::difference_frame(o, a), diff.data() + b * per);
    batch.labels.push_back(sample.label);
  }
  batch.diff = Var<T>(std::move(diff));
  batch.onset = Var<T>(std::move(onset));
  return batch;
}

std::string to_json(const EpochLog& log) {
  std::ostringstream out;
  out.precision(17);
  out << "{\"epoch\":" << log.epoch << ",\"lr\":" << log.lr
      << ",\"loss\":" << log.loss << ",\"train_acc\":" << log.train_acc << "}";
  return out.str();
}

namespace {

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = logits.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

data::PreprocessConfig preprocess_for(const ModelConfig& model,
                                      const TrainConfig& config) {
  data::PreprocessConfig p;
  p.target_size = model.image_size;
  p.train_augment = config.augment;
  p.flip = config.flip;
  p.crop_padding = config.crop_padding;
  return p;
}

}  // namespace

template <typename T>
std::vector<EpochLog> train(fusion::TsfModel<T>& model,
                            const std::vector<PreparedSample>& samples,
                            std::span<const std::size_t> subset,
                            const TrainConfig& config, TrainState<T>& state,
                            std::ostream* log) {
  config.validate();
  if (subset.empty()) throw std::invalid_argument("train: empty training split");
  const std::size_t classes = model.config().n_classes;
  for (std::size_t i : subset) {
    const int label = samples.at(i).label;
    if (label < 0 || label >= static_cast<int>(classes)) {
      throw std::invalid_argument("train: label " + std::to_string(label) +
                                  " outside the model's " +
                                  std::to_string(classes) + " classes");
    }
  }
  const data::PreprocessConfig pre = preprocess_for(model.config(), config);
  auto params = model.parameters();
  std::vector<std::size_t> order(subset.begin(), subset.end());
  std::vector<EpochLog> logs;
  for (std::size_t epoch = state.epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    // Reshuffle from subset order so a resumed run sees the same batches.
    std::copy(subset.begin(), subset.end(), order.begin());
    std::shuffle(order.begin(), order.end(), state.rng.engine());
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Batch<T> batch = make_batch<T>(samples, idx, pre, true, &state.rng);
      auto out = model.forward(batch.diff, batch.onset, true);
      Var<T> loss = ops::cross_entropy(out.logits, batch.labels,
                                       config.loss_reduction);
      const double value = double(loss.value()[0]);
      if (!std::isfinite(value)) {
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch starting at " +
                                 std::to_string(start));
      }
      for (auto& p : params) p.var.zero_grad();
      loss.backward();
      const StepStatus status = adamw_step(params, state.adam, lr, config.adamw);
      if (!status.applied) {
        throw std::runtime_error("train: non-finite gradient in " +
                                 status.rejected_parameter + " at epoch " +
                                 std::to_string(epoch));
      }
      loss_sum += config.loss_reduction == ops::Reduction::kMean
                      ? value * double(idx.size())
                      : value;
      const auto pred = argmax_rows(out.logits.value());
      for (std::size_t i = 0; i < pred.size(); ++i) {
        correct += pred[i] == batch.labels[i];
      }
    }
    for (auto& p : params) p.var.zero_grad();
    EpochLog entry{epoch, lr, loss_sum / double(order.size()),
                   double(correct) / double(order.size())};
    if (log) *log << to_json(entry) << '\n' << std::flush;
    logs.push_back(entry);
    state.epoch = epoch + 1;
  }
  return logs;
}

template <typename T>
std::vector<int> predict(const fusion::TsfModel<T>& model,
                         const std::vector<PreparedSample>& samples,
                         std::span<const std::size_t> subset,
                         std::size_t batch_size) {
  data::PreprocessConfig pre;
  pre.target_size = model.config().image_size;
  std::vector<int> out;
  out.reserve(subset.size());
  for (std::size_t start = 0; start < subset.size(); start += batch_size) {
    const std::size_t end = std::min(subset.size(), start + batch_size);
    Batch<T> batch =
        make_batch<T>(samples, subset.subspan(start, end - start), pre, false, nullptr);
    const auto pred =
        argmax_rows(model.forward(batch.diff, batch.onset, false).logits.value());
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint container: little-endian throughout.

namespace {

constexpr char kMagic[4] = {'T', 'S', 'F', 'M'};

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    out_ += s;
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_ += static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void expect(const char* p, std::size_t n) {
    need(n);
    if (std::memcmp(in_.data() + pos_, p, n) != 0) {
      throw std::runtime_error("checkpoint: bad magic (not a TSFM file)");
    }
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw std::runtime_error("checkpoint: truncated");
  }
  std::uint64_t get(int bytes) {
    need(bytes);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= std::uint64_t(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += bytes;
    return v;
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

NamedArray to_array(const std::string& name, const Tensor<float>& t) {
  return {name, t.shape(), t.storage()};
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

std::string serialize(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(c.version);
  w.str(c.config);
  w.u64(c.epoch);
  w.u64(c.adam_step);
  w.str(c.rng_state);
  w.u64(c.arrays.size());
  for (const auto& a : c.arrays) {
    if (a.values.size() != shape_numel(a.shape)) {
      throw std::invalid_argument("checkpoint array " + a.name +
                                  " does not match its shape");
    }
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) w.u64(d);
    for (float v : a.values) w.f32(v);
  }
  return w.take();
}

Checkpoint deserialize(const std::string& bytes) {
  Reader r(bytes);
  r.expect(kMagic, 4);
  Checkpoint c;
  c.version = r.u32();
  if (c.version != Checkpoint::kVersion) {
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(c.version));
  }
  c.config = r.str();
  c.epoch = r.u64();
  c.adam_step = r.u64();
  c.rng_state = r.str();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.u64());
    const std::size_t count = shape_numel(a.shape);
    if (count > bytes.size() / 4) throw std::runtime_error("checkpoint: truncated");
    a.values.resize(count);
    for (auto& v : a.values) v = r.f32();
    c.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint,
                     const std::filesystem::path& path) {
  const std::string bytes = serialize(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

Checkpoint make_checkpoint(const fusion::TsfModel<float>& model,
                           const TrainState<float>& state,
                           const std::string& config_text) {
  Checkpoint c;
  c.config = config_text;
  c.epoch = state.epoch;
  c.adam_step = state.adam.step;
  c.rng_state = state.rng.state();
  const auto params = model.parameters();
  for (const auto& p : params) c.arrays.push_back(to_array(p.name, p.var.value()));
  std::size_t j = 0;
  for (const auto& p : params) {
    if (!p.trainable) continue;
    if (j < state.adam.m.size()) {
      c.arrays.push_back(to_array("adam.m." + p.name, state.adam.m[j]));
      c.arrays.push_back(to_array("adam.v." + p.name, state.adam.v[j]));
    }
    ++j;
  }
  return c;
}

void restore(const Checkpoint& checkpoint, fusion::TsfModel<float>& model,
             TrainState<float>* state) {
  auto load_into = [&](const std::string& name, Tensor<float>& dst) {
    const NamedArray* a = checkpoint.find(name);
    if (!a) throw std::runtime_error("checkpoint lacks array '" + name + "'");
    if (a->shape != dst.shape()) {
      throw std::runtime_error("checkpoint array '" + name + "' has shape " +
                               shape_string(a->shape) + ", model expects " +
                               shape_string(dst.shape()));
    }
    dst = Tensor<float>(a->shape, a->values);
  };
  auto params = model.parameters();
  for (auto& p : params) load_into(p.name, p.var.mutable_value());
  if (!state) return;
  state->epoch = checkpoint.epoch;
  state->adam = {};
  state->adam.step = checkpoint.adam_step;
  if (checkpoint.adam_step > 0) {
    for (auto& p : params) {
      if (!p.trainable) continue;
      state->adam.m.emplace_back(p.var.shape());
      state->adam.v.emplace_back(p.var.shape());
      load_into("adam.m." + p.name, state->adam.m.back());
      load_into("adam.v." + p.name, state->adam.v.back());
    }
  }
  state->rng.set_state(checkpoint.rng_state);
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(
    const std::function<Var<double>()>& loss,
    const std::vector<std::pair<std::string, Var<double>>>& inputs,
    const GradCheckOptions& options) {
  for (auto [name, var] : inputs) var.zero_grad();
  Var<double> out = loss();
  if (out.value().size() != 1) {
    throw std::invalid_argument("grad_check: loss must be a scalar");
  }
  out.backward();
  std::vector<Tensor<double>> analytic;
  for (const auto& [name, var] : inputs) analytic.push_back(var.grad());

  GradCheckResult result;
  nn::Rng rng(options.seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Var<double> var = inputs[t].second;
    Tensor<double>& x = var.mutable_value();
    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords > 0 && coords.size() > options.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng.engine());
      coords.resize(options.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = x[i];
      x[i] = saved + options.eps;
      const double plus = loss().value()[0];
      x[i] = saved - options.eps;
      const double minus = loss().value()[0];
      x[i] = saved;
      const double numeric = (plus - minus) / (2 * options.eps);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), options.floor});
      if (++result.checked == 1 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.tensor = inputs[t].first;
        result.coordinate = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

template StepStatus adamw_step<float>(nn::ParameterList<float>&, AdamState<float>&,
                                      double, const AdamWConfig&);
template StepStatus adamw_step<double>(nn::ParameterList<double>&,
                                       AdamState<double>&, double,
                                       const AdamWConfig&);
template Batch<float> make_batch<float>(const std::vector<PreparedSample>&,
                                        std::span<const std::size_t>,
                                        const data::PreprocessConfig&, bool,
                                        nn::Rng*);
template Batch<double> make_batch<double>(const std::vector<PreparedSample>&,
                                          std::span<const std::size_t>,
                                          const data::PreprocessConfig&, bool,
                                          nn::Rng*);
template std::vector<EpochLog> train<float>(fusion::TsfModel<float>&,
                                            const std::vector<PreparedSample>&,
                                            std::span<const std::size_t>,
                                            const TrainConfig&,
                                            TrainState<float>&, std::ostream*);
template std::vector<EpochLog> train<double>(fusion::TsfModel<double>&,
                                             const std::vector<PreparedSample>&,
                                             std::span<const std::size_t>,
                                             const TrainConfig&,
                                             TrainState<double>&, std::ostream*);
template std::vector<int> predict<float>(const fusion::TsfModel<float>&,
                                         const std::vector<PreparedSample>&,
                                         std::span<const std::size_t>, std::size_t);
template std::vector<int> predict<double>(const fusion::TsfModel<double>&,
                                          const std::vector<PreparedSample>&,
                                          std::span<const std::size_t>,
                                          std::size_t);

}  // namespace tsf::train
