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

#include "tsf/nn.hpp"

#include <cmath>
#include <sstream>

namespace tsf::nn {

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream in(state);
  in >> engine_;
  if (!in) throw std::invalid_argument("Rng: malformed generator state");
}

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> out(std::move(shape));
  const double bound = 1.0 / std::sqrt(double(fan_in));
  for (auto& v : out.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return out;
}

template <typename T>
Tensor<T> truncated_normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> out(std::move(shape));
  for (auto& v : out.values()) v = static_cast<T>(rng.truncated_normal(stddev));
  return out;
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias)
    : weight_(make_parameter(fan_in_uniform<T>({out, in}, in, rng))) {
  if (bias) bias_ = make_parameter(fan_in_uniform<T>({out}, in, rng));
}

template <typename T>
void Linear<T>::collect(ParameterList<T>& out,
                        const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_, true});
  if (bias_.defined()) out.push_back({prefix + ".bias", bias_, true});
}

template <typename T>
void Linear<T>::zero() {
  weight_.mutable_value().fill(T(0));
  if (bias_.defined()) bias_.mutable_value().fill(T(0));
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                  std::size_t stride, std::size_t padding, Rng& rng)
    : stride_(stride), padding_(padding) {
  const std::size_t fan_in = in * kernel * kernel;
  weight_ = make_parameter(fan_in_uniform<T>({out, in, kernel, kernel},
                                             fan_in, rng));
  bias_ = make_parameter(fan_in_uniform<T>({out}, fan_in, rng));
}

template <typename T>
void Conv2d<T>::collect(ParameterList<T>& out,
                        const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_, true});
  out.push_back({prefix + ".bias", bias_, true});
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, std::size_t channel_axis,
                        double eps, double momentum)
    : gamma_(make_parameter(Tensor<T>({channels}, T(1)))),
      beta_(make_parameter(Tensor<T>({channels}, T(0)))),
      running_mean_(Tensor<T>({channels}, T(0))),
      running_var_(Tensor<T>({channels}, T(1))) {
  options_.channel_axis = channel_axis;
  options_.eps = eps;
  options_.momentum = momentum;
}

template <typename T>
Var<T> BatchNorm<T>::operator()(const Var<T>& x, bool training) const {
  ops::BatchNormOptions opts = options_;
  opts.training = training;
  if (opts.channel_axis >= x.value().rank()) {
    opts.channel_axis = x.value().rank() - 1;
  }
  // Running statistics live in shared nodes, so a const module may update them.
  Var<T> rm = running_mean_;
  Var<T> rv = running_var_;
  return ops::batch_norm(x, gamma_, beta_, rm.mutable_value(),
                         rv.mutable_value(), opts);
}

template <typename T>
void BatchNorm<T>::collect(ParameterList<T>& out,
                           const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma_, true});
  out.push_back({prefix + ".beta", beta_, true});
  out.push_back({prefix + ".running_mean", running_mean_, false});
  out.push_back({prefix + ".running_var", running_var_, false});
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t width, std::size_t groups, double eps)
    : gamma_(make_parameter(Tensor<T>({width}, T(1)))),
      beta_(make_parameter(Tensor<T>({width}, T(0)))),
      groups_(groups),
      eps_(eps) {}

template <typename T>
void LayerNorm<T>::collect(ParameterList<T>& out,
                           const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma_, true});
  out.push_back({prefix + ".beta", beta_, true});
}

template <typename T>
FeedForward<T>::FeedForward(std::size_t width, double ratio, Rng& rng) {
  const auto hidden = static_cast<std::size_t>(std::lround(width * ratio));
  fc1_ = Linear<T>(width, hidden, rng);
  fc2_ = Linear<T>(hidden, width, rng);
}

template <typename T>
void FeedForward<T>::collect(ParameterList<T>& out,
                             const std::string& prefix) const {
  fc1_.collect(out, prefix + ".fc1");
  fc2_.collect(out, prefix + ".fc2");
}

#define TSF_INSTANTIATE(T)                                                  \
  template Tensor<T> fan_in_uniform<T>(Shape, std::size_t, Rng&);           \
  template Tensor<T> truncated_normal<T>(Shape, double, Rng&);              \
  template class Linear<T>;                                                 \
  template class Conv2d<T>;                                                 \
  template class BatchNorm<T>;                                              \
  template class LayerNorm<T>;                                              \
  template class FeedForward<T>;

TSF_INSTANTIATE(float)
TSF_INSTANTIATE(double)
#undef TSF_INSTANTIATE

}  // namespace tsf::nn
