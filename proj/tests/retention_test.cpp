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

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "tsf/nn.hpp"
#include "tsf/ops.hpp"
#include "tsf/retention.hpp"

namespace tsf::temporal {
namespace {

Tensor<double> random(Shape shape, nn::Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

double rel_error(const Tensor<double>& a, const Tensor<double>& b) {
  return max_abs_diff(a, b) / std::max(max_abs(b), 1e-300);
}

TEST(Retention, ParallelMatchesRecurrentOnRandomSequences) {
  nn::Rng rng(11);
  const auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 1 + rng.index(256);
    const std::size_t d = 2 * (1 + rng.index(32));
    const std::size_t dv = 1 + rng.index(64);
    const double gamma = rng.uniform(0.5, 1.0);
    const auto theta = rotary_angles(d);
    const auto q = random({n, d}, rng), k = random({n, d}, rng), v = random({n, dv}, rng);
    const auto par = retention_parallel(q, k, v, gamma, theta);
    const auto rec = retention_recurrent(q, k, v, gamma, theta);
    EXPECT_LE(rel_error(par, rec), 1e-10) << "n " << n << " d " << d << " gamma " << gamma;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 5.0);
}

TEST(Retention, UnitDecayMatchesDoubleLoop) {
  nn::Rng rng(12);
  const std::size_t n = 9, d = 6, dv = 4;
  const auto theta = rotary_angles(d);
  const auto q = random({n, d}, rng), k = random({n, d}, rng), v = random({n, dv}, rng);
  const auto rot = [&](const Tensor<double>& x, std::size_t p, std::size_t j) {
    const double a = double(p) * theta[j / 2];
    const double x0 = x[p * d + (j & ~std::size_t{1})], x1 = x[p * d + (j | 1)];
    return (j % 2 == 0) ? x0 * std::cos(a) - x1 * std::sin(a) : x0 * std::sin(a) + x1 * std::cos(a);
  };
  Tensor<double> expect({n, dv});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m <= i; ++m) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) s += rot(q, i, j) * rot(k, m, j);
      for (std::size_t c = 0; c < dv; ++c) expect[i * dv + c] += s * v[m * dv + c];
    }
  EXPECT_LE(rel_error(retention_parallel(q, k, v, 1.0, theta), expect), 1e-12);
  EXPECT_LE(rel_error(retention_recurrent(q, k, v, 1.0, theta), expect), 1e-12);
}

TEST(Retention, ZeroDecayKeepsOnlyTheDiagonal) {
  nn::Rng rng(13);
  const std::size_t n = 5, d = 4;
  const auto theta = rotary_angles(d);
  const auto q = random({n, d}, rng), k = random({n, d}, rng), v = random({n, 1}, rng);
  const auto out = retention_parallel(q, k, v, 0.0, theta);
  for (std::size_t i = 0; i < n; ++i) {
    // The rotation is orthogonal and shared, so q_i . k_i survives unrotated.
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += q[i * d + j] * k[i * d + j];
    EXPECT_NEAR(out[i], s * v[i], 1e-12);
  }
}

TEST(Retention, DecayMaskIsLowerTriangularPowers) {
  const auto m = decay_mask<double>(4, 0.5);
  EXPECT_DOUBLE_EQ(m[0 * 4 + 0], 1.0);
  EXPECT_DOUBLE_EQ(m[3 * 4 + 0], 0.125);
  EXPECT_DOUBLE_EQ(m[2 * 4 + 1], 0.5);
  EXPECT_DOUBLE_EQ(m[1 * 4 + 2], 0.0);
}

TEST(Retention, RotationIsInvertedByUnrotation) {
  nn::Rng rng(14);
  const auto theta = rotary_angles(8);
  const auto x = random({7, 8}, rng);
  EXPECT_LT(max_abs_diff(unrotate_positions(rotate_positions(x, theta), theta), x), 1e-13);
}

TEST(Retention, RotatedScoresDependOnlyOnOffset) {
  nn::Rng rng(15);
  const std::size_t d = 8;
  const auto theta = rotary_angles(d);
  const auto q = random({1, d}, rng), k = random({1, d}, rng);
  Tensor<double> qs({12, d}), ks({12, d});
  for (std::size_t p = 0; p < 12; ++p)
    for (std::size_t j = 0; j < d; ++j) {
      qs[p * d + j] = q[j];
      ks[p * d + j] = k[j];
    }
  const auto qr = rotate_positions(qs, theta), kr = rotate_positions(ks, theta);
  const auto dot = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += qr[a * d + j] * kr[b * d + j];
    return s;
  };
  EXPECT_NEAR(dot(5, 2), dot(9, 6), 1e-12);
  EXPECT_NEAR(dot(3, 3), dot(11, 11), 1e-12);
}

TEST(Retention, MultiHeadFormsAgree) {
  nn::Rng rng(16);
  Var<double> q(random({2, 10, 16}, rng)), k(random({2, 10, 16}, rng)), v(random({2, 10, 16}, rng));
  ops::RetentionSpec spec;
  spec.decays = default_decays(4);
  spec.theta = rotary_angles(4);
  spec.query_scale = 0.5;
  const auto par = ops::retention(q, k, v, spec).value();
  spec.form = RetentionForm::kRecurrent;
  const auto rec = ops::retention(q, k, v, spec).value();
  EXPECT_LE(rel_error(par, rec), 1e-10);
}

TEST(Retention, DefaultDecaysFollowTheHeadSchedule) {
  const auto g = default_decays(8);
  ASSERT_EQ(g.size(), 8u);
  for (std::size_t h = 0; h < 8; ++h) EXPECT_DOUBLE_EQ(g[h], 1.0 - std::pow(2.0, -5.0 - double(h)));
}

TEST(Retention, RejectsBadInputs) {
  const auto theta = rotary_angles(4);
  EXPECT_THROW(retention_parallel(Tensor<double>({3, 4}), Tensor<double>({2, 4}),
                                  Tensor<double>({3, 1}), 0.9, theta),
               std::exception);
  EXPECT_THROW(retention_parallel(Tensor<double>({3, 4}), Tensor<double>({3, 4}),
                                  Tensor<double>({3, 1}), std::nan(""), theta),
               std::exception);
}

TEST(Retention, LaterTokensDoNotReachEarlierOutputs) {
  nn::Rng rng(17);
  const std::size_t n = 12, d = 8;
  const auto theta = rotary_angles(d);
  const auto q = random({n, d}, rng), v = random({n, 3}, rng);
  auto k = random({n, d}, rng);
  auto v2 = v;
  auto k2 = k;
  for (std::size_t j = 0; j < d; ++j) k2[9 * d + j] += 5.0;
  v2[10 * 3 + 1] -= 7.0;
  for (auto form : {&retention_parallel<double>, &retention_recurrent<double>}) {
    const auto a = form(q, k, v, 0.9, theta), b = form(q, k2, v2, 0.9, theta);
    for (std::size_t i = 0; i < 9 * 3; ++i) EXPECT_EQ(a[i], b[i]);
    EXPECT_NE(a[9 * 3], b[9 * 3]);
  }
}

TEST(Retention, OutputDecaysAsGammaToTheOffset) {
  // One-hot key and value at position 2, constant query, no rotation.
  const std::size_t n = 10, d = 4;
  const double gamma = 0.8;
  Tensor<double> q({n, d}), k({n, d}), v({n, 1});
  k[2 * d + 0] = 1.0;
  v[2] = 1.0;
  for (std::size_t p = 0; p < n; ++p) q[p * d + 0] = 1.0;
  const std::vector<double> zero(d / 2, 0.0);
  const auto out = retention_parallel(q, k, v, gamma, zero);
  EXPECT_EQ(out[1], 0.0);
  EXPECT_DOUBLE_EQ(out[2], 1.0);
  for (std::size_t p = 3; p < n; ++p) EXPECT_NEAR(out[p] / out[p - 1], gamma, 1e-6);
}

TEST(Retention, RotationPreservesTokenNorms) {
  nn::Rng rng(18);
  const auto theta = rotary_angles(16);
  const auto x = random({30, 16}, rng);
  const auto r = rotate_positions(x, theta);
  for (std::size_t p = 0; p < 30; ++p) {
    double a = 0, b = 0;
    for (std::size_t j = 0; j < 16; ++j) {
      a += x[p * 16 + j] * x[p * 16 + j];
      b += r[p * 16 + j] * r[p * 16 + j];
    }
    EXPECT_NEAR(std::sqrt(a), std::sqrt(b), 1e-6);
  }
}

}  // namespace
}  // namespace tsf::temporal
