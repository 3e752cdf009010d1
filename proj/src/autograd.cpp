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

#include "tsf/autograd.hpp"

#include <unordered_set>

namespace tsf {

template <typename T>
Var<T> Var<T>::make(Tensor<T> value, std::vector<Var> parents,
                    std::function<void(Node<T>&)> backward_fn) {
  Var out(std::move(value));
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward_fn = std::move(backward_fn);
  return out;
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw std::invalid_argument("backward() without a seed needs a scalar, got " +
                                shape_string(node_->value.shape()));
  }
  backward(Tensor<T>(node_->value.shape(), T(1)));
}

template <typename T>
void Var<T>::backward(const Tensor<T>& seed) const {
  if (seed.size() != node_->value.size()) {
    throw std::invalid_argument("backward seed shape mismatch");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  auto& g = node_->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

template class Var<float>;
template class Var<double>;

}  // namespace tsf
