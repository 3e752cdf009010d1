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

#include <functional>
#include <memory>
#include <vector>

#include "tsf/tensor.hpp"

namespace tsf {

// One vertex of the define-by-run tape. The backward function reads
// self.grad and accumulates into the parents' grads; it never owns self.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Zero-filled when no gradient has reached this node yet.
  const Tensor<T>& grad() const { return node_->grad_buffer(); }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  // Reverse sweep seeded with d(self)/d(self) = 1; requires a scalar.
  void backward() const;
  void backward(const Tensor<T>& seed) const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  // Builds an op output wired to its parents, kept in call order. If no
  // parent requires a gradient the output is a constant with no tape.
  static Var make(Tensor<T> value, std::vector<Var> parents,
                  std::function<void(Node<T>&)> backward_fn);

 private:
  std::shared_ptr<Node<T>> node_;
};

}  // namespace tsf
