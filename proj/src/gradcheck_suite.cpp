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

#include "tsf/gradcheck_suite.hpp"

#include <cmath>
#include <functional>

namespace tsf::train {
namespace {

using D = double;
using Inputs = std::vector<std::pair<std::string, Var<D>>>;

Tensor<D> random_tensor(Shape shape, nn::Rng& rng, double scale = 1.0) {
  Tensor<D> t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

Var<D> leaf(Shape shape, nn::Rng& rng, double scale = 1.0) {
  return Var<D>(random_tensor(std::move(shape), rng, scale), true);
}

// Contracts the op output with a fixed random tensor so every output
// coordinate carries a distinct upstream gradient. The 1/sqrt(n) scale
// keeps the probe O(1), so difference round-off stays near 1e-11.
GradCheckResult check(const Inputs& inputs, const std::function<Var<D>()>& op,
                      nn::Rng& rng, const GradCheckOptions& options = {}) {
  const Shape shape = op().shape();
  const Tensor<D> w = random_tensor(shape, rng, 1.0 / std::sqrt(double(shape_numel(shape))));
  return grad_check([&] { return ops::weighted_sum(op(), w); }, inputs, options);
}

Inputs from_params(const nn::ParameterList<D>& params, const std::string& prefix = "") {
  Inputs out;
  for (const auto& p : params) {
    if (p.trainable) out.emplace_back(prefix + p.name, p.var);
  }
  return out;
}

void operation_checks(std::vector<GradCheckEntry>& out, nn::Rng& rng) {
  {
    auto x = leaf({2, 3, 5}, rng), w = leaf({4, 5}, rng), b = leaf({4}, rng);
    out.push_back({"linear", check({{"x", x}, {"w", w}, {"b", b}},
                                   [=] { return ops::linear(x, w, b); }, rng)});
  }
  {
    auto x = leaf({2, 3, 7, 7}, rng), w = leaf({4, 3, 3, 3}, rng), b = leaf({4}, rng);
    out.push_back({"conv2d.s2p1", check({{"x", x}, {"w", w}, {"b", b}},
                                        [=] { return ops::conv2d(x, w, b, 2, 1); }, rng)});
    auto w4 = leaf({5, 3, 4, 4}, rng);
    auto x8 = leaf({1, 3, 8, 8}, rng);
    out.push_back({"conv2d.patch", check({{"x", x8}, {"w", w4}},
                                         [=] { return ops::conv2d(x8, w4, Var<D>(), 4, 0); },
                                         rng)});
  }
  {
    auto x = leaf({3, 4, 3, 3}, rng), g = leaf({4}, rng), b = leaf({4}, rng);
    out.push_back({"batch_norm.nchw",
                   check({{"x", x}, {"gamma", g}, {"beta", b}},
                         [=] {
                           Tensor<D> rm({4}), rv({4}, 1.0);
                           return ops::batch_norm(x, g, b, rm, rv, {1, true, 1e-5, 0.1});
                         },
                         rng)});
    auto y = leaf({2, 5, 6}, rng), g2 = leaf({6}, rng), b2 = leaf({6}, rng);
    out.push_back({"batch_norm.channel_last",
                   check({{"x", y}, {"gamma", g2}, {"beta", b2}},
                         [=] {
                           Tensor<D> rm({6}), rv({6}, 1.0);
                           return ops::batch_norm(y, g2, b2, rm, rv, {2, true, 1e-5, 0.1});
                         },
                         rng)});
  }
  {
    auto x = leaf({2, 3, 16}, rng), g = leaf({16}, rng), b = leaf({16}, rng);
    out.push_back({"layer_norm", check({{"x", x}, {"gamma", g}, {"beta", b}},
                                       [=] { return ops::layer_norm(x, g, b, 1); }, rng)});
    out.push_back({"group_norm", check({{"x", x}, {"gamma", g}, {"beta", b}},
                                       [=] { return ops::layer_norm(x, g, b, 4); }, rng)});
  }
  {
    auto x = leaf({2, 7}, rng, 2.0);
    out.push_back({"gelu", check({{"x", x}}, [=] { return ops::gelu(x); }, rng)});
    out.push_back({"swish", check({{"x", x}}, [=] { return ops::swish(x); }, rng)});
  }
  {
    auto a = leaf({2, 4, 3}, rng), b = leaf({2, 4, 3}, rng), t = leaf({1, 4, 3}, rng);
    out.push_back({"add", check({{"a", a}, {"b", b}}, [=] { return ops::add(a, b); }, rng)});
    out.push_back({"mul", check({{"a", a}, {"b", b}}, [=] { return ops::mul(a, b); }, rng)});
    out.push_back({"add_broadcast", check({{"x", a}, {"table", t}},
                                          [=] { return ops::add_broadcast(a, t); }, rng)});
    out.push_back({"transpose12", check({{"x", a}}, [=] { return ops::transpose12(a); }, rng)});
    out.push_back({"reshape", check({{"x", a}}, [=] { return ops::reshape(a, {2, 12}); }, rng)});
    out.push_back({"mean_tokens", check({{"x", a}}, [=] { return ops::mean_tokens(a); }, rng)});
    auto tokens = leaf({2, 6, 3}, rng);
    out.push_back({"tokens_to_grid", check({{"x", tokens}},
                                           [=] { return ops::tokens_to_grid(tokens, 2, 3); },
                                           rng)});
    auto grid = leaf({2, 3, 2, 3}, rng);
    out.push_back({"grid_to_tokens", check({{"x", grid}},
                                           [=] { return ops::grid_to_tokens(grid); }, rng)});
  }
  {
    auto q = leaf({2, 6, 16}, rng), k = leaf({2, 6, 16}, rng), v = leaf({2, 6, 16}, rng);
    ops::RetentionSpec spec;
    spec.decays = temporal::default_decays(2);
    spec.theta = temporal::rotary_angles(8);
    spec.query_scale = 1.0 / std::sqrt(8.0);
    out.push_back({"retention", check({{"q", q}, {"k", k}, {"v", v}},
                                      [=] { return ops::retention(q, k, v, spec); }, rng)});
    out.push_back({"attention", check({{"q", q}, {"k", k}, {"v", v}},
                                      [=] { return ops::attention(q, k, v, 4); }, rng)});
  }
  {
    auto logits = leaf({4, 5}, rng);
    const std::vector<int> labels{0, 3, 4, 1};
    out.push_back({"cross_entropy.mean",
                   grad_check([=] { return ops::cross_entropy(logits, labels); },
                              {{"logits", logits}})});
    out.push_back({"cross_entropy.sum",
                   grad_check([=] {
                     return ops::cross_entropy(logits, labels, ops::Reduction::kSum);
                   }, {{"logits", logits}})});
  }
}

void module_checks(std::vector<GradCheckEntry>& out, nn::Rng& rng,
                   const GradCheckSuiteOptions& options) {
  const ModelConfig config = ModelConfig::tiny(3);
  GradCheckOptions opts;
  opts.max_coords = options.module_coords;
  opts.seed = rng.next();
  const std::size_t s = config.image_size, n = config.tokens(), d = config.embed_dim;
  {
    temporal::ConvStem<D> stem(3, config, rng);
    nn::ParameterList<D> p;
    stem.collect(p, "stem");
    auto x = leaf({2, 3, s, s}, rng);
    Inputs in = from_params(p);
    in.emplace_back("x", x);
    out.push_back({"conv_stem", check(in, [&] { return stem(x, true).tokens; }, rng, opts)});
  }
  {
    temporal::RetNetBlock<D> block(config, rng);
    nn::ParameterList<D> p;
    block.collect(p, "block");
    auto x = leaf({2, n, d}, rng);
    Inputs in = from_params(p);
    in.emplace_back("x", x);
    out.push_back({"retnet_block", check(in, [&] { return block(x); }, rng, opts)});
  }
  {
    spatial::PatchEmbed<D> embed(config, rng);
    nn::ParameterList<D> p;
    embed.collect(p, "patch");
    auto x = leaf({2, 3, s, s}, rng);
    Inputs in = from_params(p);
    in.emplace_back("x", x);
    out.push_back({"patch_embed", check(in, [&] { return embed(x).tokens; }, rng, opts)});
  }
  {
    spatial::TransformerBlock<D> block(config, rng);
    nn::ParameterList<D> p;
    block.collect(p, "block");
    auto x = leaf({2, n, d}, rng);
    Inputs in = from_params(p);
    in.emplace_back("x", x);
    out.push_back({"transformer_block", check(in, [&] { return block(x); }, rng, opts)});
  }
  {
    fusion::Head<D> head(config, rng);
    nn::ParameterList<D> p;
    head.collect(p, "head");
    const std::size_t g = config.grid();
    auto x = leaf({2, d, g, g}, rng);
    Inputs in = from_params(p);
    in.emplace_back("x", x);
    out.push_back({"head", check(in, [&] { return head(x, true); }, rng, opts)});
  }
}

void model_checks(std::vector<GradCheckEntry>& out, nn::Rng& rng,
                  const GradCheckSuiteOptions& options) {
  const ModelConfig config = ModelConfig::tiny(3);
  const std::size_t s = config.image_size;
  for (fusion::FusionMode mode : fusion::kAllModes) {
    fusion::TsfModel<D> model(config, mode, rng.next());
    auto diff = leaf({2, 3, s, s}, rng, 0.5);
    auto onset = leaf({2, 3, s, s}, rng, 0.5);
    const std::vector<int> labels{0, 2};
    Inputs in = from_params(model.parameters());
    in.emplace_back("diff", diff);
    in.emplace_back("onset", onset);
    GradCheckOptions opts;
    opts.max_coords = options.model_coords;
    opts.seed = rng.next();
    out.push_back({"model." + std::string(fusion::to_string(mode)),
                   grad_check([&] {
                     return ops::cross_entropy(model.forward(diff, onset, true).logits, labels);
                   }, in, opts)});
  }
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  std::vector<GradCheckEntry> out;
  nn::Rng rng(options.seed);
  if (options.operations) operation_checks(out, rng);
  if (options.modules) module_checks(out, rng, options);
  if (options.models) model_checks(out, rng, options);
  return out;
}

}  // namespace tsf::train
