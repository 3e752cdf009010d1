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

#include "tsf/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace tsf {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, T alpha, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T beta, T* c, std::size_t ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  using ConstMap = Eigen::Map<const Mat, 0, Stride>;
  using MutMap = Eigen::Map<Mat, 0, Stride>;
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);

  MutMap cm(c, em, en, Stride(static_cast<Eigen::Index>(ldc)));
  if (beta == T(0)) {
    cm.setZero();
  } else if (beta != T(1)) {
    cm *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;

  ConstMap am(a, trans_a ? ek : em, trans_a ? em : ek,
              Stride(static_cast<Eigen::Index>(lda)));
  ConstMap bm(b, trans_b ? en : ek, trans_b ? ek : en,
              Stride(static_cast<Eigen::Index>(ldb)));
  if (!trans_a && !trans_b) {
    cm.noalias() += alpha * am * bm;
  } else if (trans_a && !trans_b) {
    cm.noalias() += alpha * am.transpose() * bm;
  } else if (!trans_a && trans_b) {
    cm.noalias() += alpha * am * bm.transpose();
  } else {
    cm.noalias() += alpha * am.transpose() * bm.transpose();
  }
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("max_abs_diff: shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) -
                                     static_cast<double>(b[i])));
  }
  return worst;
}

template <typename T>
double max_abs(const Tensor<T>& a) {
  double worst = 0.0;
  for (T v : a.values()) worst = std::max(worst, std::abs(double(v)));
  return worst;
}

#define TSF_INSTANTIATE(T)                                                  \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, \
                        T, const T*, std::size_t, const T*, std::size_t, T,  \
                        T*, std::size_t);                                   \
  template double max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);      \
  template double max_abs<T>(const Tensor<T>&);

TSF_INSTANTIATE(float)
TSF_INSTANTIATE(double)
#undef TSF_INSTANTIATE

}  // namespace tsf
