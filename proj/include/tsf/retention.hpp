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
#include <string_view>
#include <optional>
#include <vector>

#include "tsf/tensor.hpp"

// Single-head retention kernels. A "token matrix" is a rank-2 tensor
// (sequence length, feature dim). For query/key rows q_n, k_m and value rows
// v_m the operator computes
//
//   o_n = sum_{m <= n} gamma^(n-m) * (R(n) q_n) . (R(m) k_m) * v_m
//
// where R(p) rotates each coordinate pair (2j, 2j+1) by the angle p*theta_j.
// This is the real-arithmetic form of the complex phase e^{i p theta}: the
// product of a rotated query with a rotated key depends only on n - m.
namespace tsf::temporal {

enum class RetentionForm { kParallel, kRecurrent };

std::string_view to_string(RetentionForm form);
std::optional<RetentionForm> parse_retention_form(std::string_view name);

// gamma_h = 1 - 2^(-5-h) for h in [0, heads).
std::vector<double> default_decays(std::size_t heads);

// theta_j = base^(-2j/head_dim) for j in [0, head_dim/2).
std::vector<double> rotary_angles(std::size_t head_dim, double base = 10000.0);

// Row n of x rotated by n * theta (0-based positions). x has even width
// 2 * theta.size().
template <typename T>
Tensor<T> rotate_positions(const Tensor<T>& x, std::span<const double> theta);

// Inverse rotation; the transpose of rotate_positions as a linear map.
template <typename T>
Tensor<T> unrotate_positions(const Tensor<T>& x, std::span<const double> theta);

// D[n][m] = gamma^(n-m) for m <= n, 0 above the diagonal, with 0^0 = 1.
template <typename T>
Tensor<T> decay_mask(std::size_t n, double gamma);

// (Q' K'^T (.) D) V with Q' = R(q), K' = R(k).
template <typename T>
Tensor<T> retention_parallel(const Tensor<T>& q, const Tensor<T>& k,
                             const Tensor<T>& v, double gamma,
                             std::span<const double> theta);

// Streaming evaluation: S_n = gamma S_{n-1} + k'_n^T v_n, o_n = q'_n S_n.
template <typename T>
Tensor<T> retention_recurrent(const Tensor<T>& q, const Tensor<T>& k,
                              const Tensor<T>& v, double gamma,
                              std::span<const double> theta);

}  // namespace tsf::temporal
