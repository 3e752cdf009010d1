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

#include <span>
#include <vector>

#include "tsf/autograd.hpp"
#include "tsf/retention.hpp"

// Differentiable tensor operations. Every op records a backward closure on
// the tape when at least one input requires a gradient.
namespace tsf::ops {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

// x: (B, ...), table: (1, ...). Broadcast add over the batch axis.
template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& table);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

// (B, X, Y) -> (B, Y, X).
template <typename T>
Var<T> transpose12(const Var<T>& x);

// Row-major (B, N, D) tokens to a (B, D, H, W) feature map, n = h * W + w.
template <typename T>
Var<T> tokens_to_grid(const Var<T>& tokens, std::size_t height,
                      std::size_t width);

// Inverse of tokens_to_grid.
template <typename T>
Var<T> grid_to_tokens(const Var<T>& grid);

// y = x W^T + b over the last axis. w: (out, in); b: (out) or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);

// x: (B, C, H, W); w: (O, C, kh, kw); b: (O) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              std::size_t stride, std::size_t padding);

struct BatchNormOptions {
  // Axis holding the normalized channels; statistics are taken over every
  // other axis. 1 for (B, C, H, W); rank-1 for channel-last layouts.
  std::size_t channel_axis = 1;
  bool training = true;
  double eps = 1e-5;
  double momentum = 0.1;
};

// Training mode normalizes with batch statistics and updates the running
// estimates (unbiased variance); evaluation mode uses the running estimates.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var,
                  const BatchNormOptions& options);

// Normalizes each of `groups` equal slices of the last axis to zero mean and
// unit variance, then applies the affine map over the full last axis.
// gamma/beta may be undefined for a plain normalization.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  std::size_t groups = 1, double eps = 1e-5);

// x * Phi(x) with the exact normal CDF.
template <typename T>
Var<T> gelu(const Var<T>& x);

// x * sigmoid(x).
template <typename T>
Var<T> swish(const Var<T>& x);

// (B, N, D) -> (B, D), mean over N.
template <typename T>
Var<T> mean_tokens(const Var<T>& x);

struct RetentionSpec {
  std::vector<double> decays;  // one per head
  std::vector<double> theta;   // head_dim / 2 rotary angles
  double query_scale = 1.0;
  temporal::RetentionForm form = temporal::RetentionForm::kParallel;
};

// Multi-head retention on (B, N, D) inputs, D = heads * head_dim, head h
// using columns [h * head_dim, (h + 1) * head_dim) and decay decays[h].
template <typename T>
Var<T> retention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const RetentionSpec& spec);

// Multi-head softmax scaled dot-product attention on (B, N, D) inputs.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 std::size_t heads);

// Row-stochastic attention weights (B, heads, N, N) for inspection.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k,
                            std::size_t heads);

enum class Reduction { kMean, kSum };

// -log softmax(logits)[label], reduced over the batch. logits: (B, C).
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels,
                     Reduction reduction = Reduction::kMean);

// sum(x * w) with a constant weight tensor of the same size.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& w);

}  // namespace tsf::ops
