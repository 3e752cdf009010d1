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
#include <random>
#include <string>
#include <vector>

#include "tsf/ops.hpp"

namespace tsf::nn {

// Seeded generator shared by weight initialization and data augmentation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  // Redraws until the sample lies within two standard deviations.
  double truncated_normal(double stddev) {
    for (;;) {
      const double v = normal();
      if (std::abs(v) <= 2.0) return v * stddev;
    }
  }
  std::uint64_t next() { return engine_(); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

// Named tensor slot in a model. Buffers (batch-norm running statistics) are
// saved with the weights but never receive gradients.
template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
  bool trainable = true;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

template <typename T>
Var<T> make_parameter(Tensor<T> value) {
  return Var<T>(std::move(value), /*requires_grad=*/true);
}

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng);

template <typename T>
Tensor<T> truncated_normal(Shape shape, double stddev, Rng& rng);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Var<T> operator()(const Var<T>& x) const {
    return ops::linear(x, weight_, bias_);
  }
  void collect(ParameterList<T>& out, const std::string& prefix) const;
  // Sets weight and bias to zero (identity-residual initialization).
  void zero();

  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }

 private:
  Var<T> weight_;
  Var<T> bias_;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride, std::size_t padding, Rng& rng);

  Var<T> operator()(const Var<T>& x) const {
    return ops::conv2d(x, weight_, bias_, stride_, padding_);
  }
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return padding_; }

 private:
  Var<T> weight_;
  Var<T> bias_;
  std::size_t stride_ = 1;
  std::size_t padding_ = 0;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::size_t channels, std::size_t channel_axis, double eps,
            double momentum);

  // Mutates the running statistics in training mode.
  Var<T> operator()(const Var<T>& x, bool training) const;
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  const Var<T>& gamma() const { return gamma_; }
  const Var<T>& beta() const { return beta_; }
  Var<T>& running_mean() { return running_mean_; }
  Var<T>& running_var() { return running_var_; }

 private:
  Var<T> gamma_, beta_;
  Var<T> running_mean_, running_var_;
  ops::BatchNormOptions options_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(std::size_t width, std::size_t groups = 1, double eps = 1e-5);

  Var<T> operator()(const Var<T>& x) const {
    return ops::layer_norm(x, gamma_, beta_, groups_, eps_);
  }
  void collect(ParameterList<T>& out, const std::string& prefix) const;

  const Var<T>& gamma() const { return gamma_; }
  const Var<T>& beta() const { return beta_; }

 private:
  Var<T> gamma_, beta_;
  std::size_t groups_ = 1;
  double eps_ = 1e-5;
};

// Linear -> GELU -> Linear with hidden width ratio * width.
template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t width, double ratio, Rng& rng);

  Var<T> operator()(const Var<T>& x) const { return fc2_(ops::gelu(fc1_(x))); }
  void collect(ParameterList<T>& out, const std::string& prefix) const;
  Linear<T>& output() { return fc2_; }

 private:
  Linear<T> fc1_, fc2_;
};

}  // namespace tsf::nn
