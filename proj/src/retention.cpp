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

#include "tsf/retention.hpp"

#include <cmath>
#include <stdexcept>

namespace tsf::temporal {

std::string_view to_string(RetentionForm form) {
  return form == RetentionForm::kParallel ? "parallel" : "recurrent";
}

std::optional<RetentionForm> parse_retention_form(std::string_view name) {
  if (name == "parallel") return RetentionForm::kParallel;
  if (name == "recurrent") return RetentionForm::kRecurrent;
  return std::nullopt;
}

std::vector<double> default_decays(std::size_t heads) {
  std::vector<double> out(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    out[h] = 1.0 - std::ldexp(1.0, -5 - static_cast<int>(h));
  }
  return out;
}

std::vector<double> rotary_angles(std::size_t head_dim, double base) {
  if (head_dim % 2 != 0) {
    throw std::invalid_argument("rotary head_dim must be even, got " +
                                std::to_string(head_dim));
  }
  std::vector<double> theta(head_dim / 2);
  for (std::size_t j = 0; j < theta.size(); ++j) {
    theta[j] = std::pow(base, -2.0 * double(j) / double(head_dim));
  }
  return theta;
}

namespace {

template <typename T>
void check_matrix(const Tensor<T>& x, const char* what) {
  if (x.rank() != 2) {
    throw std::invalid_argument(std::string("retention: ") + what +
                                " must be a token matrix, got " +
                                shape_string(x.shape()));
  }
  for (T v : x.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::domain_error(std::string("retention: non-finite value in ") +
                              what);
    }
  }
}

template <typename T>
void check_inputs(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                  double gamma, std::span<const double> theta) {
  check_matrix(q, "Q");
  check_matrix(k, "K");
  check_matrix(v, "V");
  if (q.dim(0) == 0) throw std::invalid_argument("retention: empty sequence");
  if (q.shape() != k.shape() || v.dim(0) != q.dim(0)) {
    throw std::invalid_argument("retention: Q/K/V shapes disagree");
  }
  if (q.dim(1) != 2 * theta.size()) {
    throw std::invalid_argument("retention: head dim " +
                                std::to_string(q.dim(1)) + " needs " +
                                std::to_string(q.dim(1) / 2) + " angles");
  }
  if (!std::isfinite(gamma)) {
    throw std::domain_error("retention: non-finite decay");
  }
}

template <typename T>
Tensor<T> rotate(const Tensor<T>& x, std::span<const double> theta,
                 double sign) {
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  if (d != 2 * theta.size()) {
    throw std::invalid_argument("rotate_positions: width/angle mismatch");
  }
  Tensor<T> out(x.shape());
  for (std::size_t p = 0; p < n; ++p) {
    const T* in = x.data() + p * d;
    T* o = out.data() + p * d;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double angle = sign * double(p) * theta[j];
      const T c = static_cast<T>(std::cos(angle));
      const T s = static_cast<T>(std::sin(angle));
      const T a = in[2 * j];
      const T b = in[2 * j + 1];
      o[2 * j] = a * c - b * s;
      o[2 * j + 1] = a * s + b * c;
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> rotate_positions(const Tensor<T>& x, std::span<const double> theta) {
  return rotate(x, theta, 1.0);
}

template <typename T>
Tensor<T> unrotate_positions(const Tensor<T>& x,
                             std::span<const double> theta) {
  return rotate(x, theta, -1.0);
}

template <typename T>
Tensor<T> decay_mask(std::size_t n, double gamma) {
  Tensor<T> d({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double w = 1.0;
    for (std::size_t j = i + 1; j-- > 0;) {
      d[i * n + j] = static_cast<T>(w);
      w *= gamma;
    }
  }
  return d;
}

template <typename T>
Tensor<T> retention_parallel(const Tensor<T>& q, const Tensor<T>& k,
                             const Tensor<T>& v, double gamma,
                             std::span<const double> theta) {
  check_inputs(q, k, v, gamma, theta);
  const std::size_t n = q.dim(0);
  const std::size_t d = q.dim(1);
  const std::size_t dv = v.dim(1);
  const Tensor<T> qr = rotate_positions(q, theta);
  const Tensor<T> kr = rotate_positions(k, theta);
  Tensor<T> scores({n, n});
  gemm<T>(false, true, n, n, d, T(1), qr.data(), d, kr.data(), d, T(0),
          scores.data(), n);
  const Tensor<T> mask = decay_mask<T>(n, gamma);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] *= mask[i];
  Tensor<T> out({n, dv});
  gemm<T>(false, false, n, dv, n, T(1), scores.data(), n, v.data(), dv, T(0),
          out.data(), dv);
  return out;
}

template <typename T>
Tensor<T> retention_recurrent(const Tensor<T>& q, const Tensor<T>& k,
                              const Tensor<T>& v, double gamma,
                              std::span<const double> theta) {
  check_inputs(q, k, v, gamma, theta);
  const std::size_t n = q.dim(0);
  const std::size_t d = q.dim(1);
  const std::size_t dv = v.dim(1);
  const Tensor<T> qr = rotate_positions(q, theta);
  const Tensor<T> kr = rotate_positions(k, theta);
  const T g = static_cast<T>(gamma);
  Tensor<T> state({d, dv});
  Tensor<T> out({n, dv});
  for (std::size_t p = 0; p < n; ++p) {
    const T* kp = kr.data() + p * d;
    const T* vp = v.data() + p * dv;
    for (std::size_t i = 0; i < d; ++i) {
      T* row = state.data() + i * dv;
      for (std::size_t j = 0; j < dv; ++j) row[j] = g * row[j] + kp[i] * vp[j];
    }
    const T* qp = qr.data() + p * d;
    T* op = out.data() + p * dv;
    for (std::size_t i = 0; i < d; ++i) {
      const T* row = state.data() + i * dv;
      for (std::size_t j = 0; j < dv; ++j) op[j] += qp[i] * row[j];
    }
  }
  return out;
}

#define TSF_INSTANTIATE(T)                                                    \
  template Tensor<T> rotate_positions<T>(const Tensor<T>&,                    \
                                         std::span<const double>);            \
  template Tensor<T> unrotate_positions<T>(const Tensor<T>&,                  \
                                           std::span<const double>);          \
  template Tensor<T> decay_mask<T>(std::size_t, double);                      \
  template Tensor<T> retention_parallel<T>(const Tensor<T>&, const Tensor<T>&, \
                                           const Tensor<T>&, double,          \
                                           std::span<const double>);          \
  template Tensor<T> retention_recurrent<T>(                                  \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double,           \
      std::span<const double>);

TSF_INSTANTIATE(float)
TSF_INSTANTIATE(double)
#undef TSF_INSTANTIATE

}  // namespace tsf::temporal
