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

#include "tsf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace tsf::ops {
namespace {

// Gradient buffer of parent i, or nullptr when it needs none.
template <typename T>
Tensor<T>* parent_grad(Node<T>& self, std::size_t i) {
  Node<T>* p = self.parents[i].get();
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

template <typename T>
const Tensor<T>& parent_value(Node<T>& self, std::size_t i) {
  return self.parents[i]->value;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// Copies head h of a (N, D) slab into a contiguous (N, dh) matrix.
template <typename T>
Tensor<T> take_head(const T* slab, std::size_t n, std::size_t d,
                    std::size_t h, std::size_t dh) {
  Tensor<T> out({n, dh});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(slab + i * d + h * dh, dh, out.data() + i * dh);
  }
  return out;
}

template <typename T>
void add_head(T* slab, std::size_t n, std::size_t d, std::size_t h,
              std::size_t dh, const Tensor<T>& m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* row = slab + i * d + h * dh;
    const T* src = m.data() + i * dh;
    for (std::size_t j = 0; j < dh; ++j) row[j] += src[j];
  }
}

template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, std::size_t pad,
            std::size_t ho, std::size_t wo, T* cols) {
  const std::size_t npos = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((ci * k + ki) * k + kj) * npos;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                          static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                            static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            row[oy * wo + ox] =
                inside ? x[(ci * h + std::size_t(iy)) * w + std::size_t(ix)]
                       : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w,
            std::size_t k, std::size_t stride, std::size_t pad,
            std::size_t ho, std::size_t wo, T* dx) {
  const std::size_t npos = ho * wo;
  for (std::size_t ci = 0; ci < c; ++ci) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((ci * k + ki) * k + kj) * npos;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dx[(ci * h + std::size_t(iy)) * w + std::size_t(ix)] +=
                row[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " +
                                      shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (auto* g = parent_grad(self, i)) accumulate(*g, self.grad);
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " +
                                      shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Var<T>::make(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& table) {
  require(x.value().rank() >= 1 && table.value().rank() == x.value().rank() &&
              table.dim(0) == 1 &&
              std::equal(x.shape().begin() + 1, x.shape().end(),
                         table.shape().begin() + 1),
          "add_broadcast: table " + shape_string(table.shape()) +
              " incompatible with " + shape_string(x.shape()));
  const std::size_t inner = table.value().size();
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += table.value()[i % inner];
  return Var<T>::make(std::move(out), {x, table}, [inner](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) accumulate(*g, self.grad);
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        (*g)[i % inner] += self.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  require(shape_numel(shape) == x.value().size(),
          "reshape: cannot view " + shape_string(x.shape()) + " as " +
              shape_string(shape));
  return Var<T>::make(x.value().reshaped(std::move(shape)), {x},
                      [](Node<T>& self) {
                        if (auto* g = parent_grad(self, 0)) {
                          T* d = g->data();
                          for (std::size_t i = 0; i < g->size(); ++i) {
                            d[i] += self.grad[i];
                          }
                        }
                      });
}

template <typename T>
Var<T> transpose12(const Var<T>& x) {
  require(x.value().rank() == 3,
          "transpose12: expected rank 3, got " + shape_string(x.shape()));
  const std::size_t b = x.dim(0), rows = x.dim(1), cols = x.dim(2);
  Tensor<T> out({b, cols, rows});
  const T* in = x.value().data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        out[(bi * cols + j) * rows + i] = in[(bi * rows + i) * cols + j];
      }
    }
  }
  return Var<T>::make(std::move(out), {x}, [b, rows, cols](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            (*g)[(bi * rows + i) * cols + j] +=
                self.grad[(bi * cols + j) * rows + i];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> tokens_to_grid(const Var<T>& tokens, std::size_t height,
                      std::size_t width) {
  require(tokens.value().rank() == 3 && tokens.dim(1) == height * width,
          "tokens_to_grid: " + shape_string(tokens.shape()) +
              " is not a token sequence for a " + std::to_string(height) +
              "x" + std::to_string(width) + " grid");
  Var<T> t = transpose12(tokens);
  return reshape(t, {tokens.dim(0), tokens.dim(2), height, width});
}

template <typename T>
Var<T> grid_to_tokens(const Var<T>& grid) {
  require(grid.value().rank() == 4,
          "grid_to_tokens: expected (B, C, H, W), got " +
              shape_string(grid.shape()));
  Var<T> flat =
      reshape(grid, {grid.dim(0), grid.dim(1), grid.dim(2) * grid.dim(3)});
  return transpose12(flat);
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require(w.value().rank() == 2, "linear: weight must be (out, in)");
  const std::size_t in = w.dim(1), out_dim = w.dim(0);
  require(x.value().rank() >= 1 && x.shape().back() == in,
          "linear: input " + shape_string(x.shape()) + " does not end in " +
              std::to_string(in));
  require(!b.defined() || b.value().size() == out_dim, "linear: bias size");
  const std::size_t m = x.value().size() / in;
  Shape shape = x.shape();
  shape.back() = out_dim;
  Tensor<T> out(shape);
  gemm<T>(false, true, m, out_dim, in, T(1), x.value().data(), in,
          w.value().data(), in, T(0), out.data(), out_dim);
  if (b.defined()) {
    const T* bias = b.value().data();
    for (std::size_t r = 0; r < m; ++r) {
      T* row = out.data() + r * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) row[j] += bias[j];
    }
  }
  std::vector<Var<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return Var<T>::make(
      std::move(out), std::move(parents), [m, in, out_dim](Node<T>& self) {
        const T* dy = self.grad.data();
        if (auto* g = parent_grad(self, 0)) {
          gemm<T>(false, false, m, in, out_dim, T(1), dy, out_dim,
                  parent_value(self, 1).data(), in, T(1), g->data(), in);
        }
        if (auto* g = parent_grad(self, 1)) {
          gemm<T>(true, false, out_dim, in, m, T(1), dy, out_dim,
                  parent_value(self, 0).data(), in, T(1), g->data(), in);
        }
        if (self.parents.size() > 2) {
          if (auto* g = parent_grad(self, 2)) {
            for (std::size_t r = 0; r < m; ++r) {
              for (std::size_t j = 0; j < out_dim; ++j) {
                (*g)[j] += dy[r * out_dim + j];
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b,
              std::size_t stride, std::size_t padding) {
  require(x.value().rank() == 4, "conv2d: input must be (B, C, H, W), got " +
                                     shape_string(x.shape()));
  require(w.value().rank() == 4 && w.dim(2) == w.dim(3),
          "conv2d: weight must be (O, C, k, k)");
  require(w.dim(1) == x.dim(1), "conv2d: channel mismatch");
  require(stride > 0, "conv2d: stride must be positive");
  const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2),
                    wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  require(h + 2 * padding >= k && wd + 2 * padding >= k,
          "conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - k) / stride + 1;
  const std::size_t ck = c * k * k, npos = ho * wo;

  Tensor<T> out({batch, o, ho, wo});
  std::vector<T> cols(ck * npos);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    im2col(x.value().data() + bi * c * h * wd, c, h, wd, k, stride, padding,
           ho, wo, cols.data());
    T* ob = out.data() + bi * o * npos;
    gemm<T>(false, false, o, npos, ck, T(1), w.value().data(), ck,
            cols.data(), npos, T(0), ob, npos);
    if (b.defined()) {
      for (std::size_t oc = 0; oc < o; ++oc) {
        const T bias = b.value()[oc];
        for (std::size_t p = 0; p < npos; ++p) ob[oc * npos + p] += bias;
      }
    }
  }
  std::vector<Var<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return Var<T>::make(
      std::move(out), std::move(parents),
      [=](Node<T>& self) {
        const auto& xv = parent_value(self, 0);
        const auto& wv = parent_value(self, 1);
        auto* gx = parent_grad(self, 0);
        auto* gw = parent_grad(self, 1);
        auto* gb = self.parents.size() > 2 ? parent_grad(self, 2) : nullptr;
        std::vector<T> buf(ck * npos);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const T* dy = self.grad.data() + bi * o * npos;
          if (gw) {
            im2col(xv.data() + bi * c * h * wd, c, h, wd, k, stride, padding,
                   ho, wo, buf.data());
            gemm<T>(false, true, o, ck, npos, T(1), dy, npos, buf.data(), npos,
                    T(1), gw->data(), ck);
          }
          if (gx) {
            gemm<T>(true, false, ck, npos, o, T(1), wv.data(), ck, dy, npos,
                    T(0), buf.data(), npos);
            col2im(buf.data(), c, h, wd, k, stride, padding, ho, wo,
                   gx->data() + bi * c * h * wd);
          }
          if (gb) {
            for (std::size_t oc = 0; oc < o; ++oc) {
              T s = 0;
              for (std::size_t p = 0; p < npos; ++p) s += dy[oc * npos + p];
              (*gb)[oc] += s;
            }
          }
        }
      });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var,
                  const BatchNormOptions& options) {
  const auto& shape = x.shape();
  require(options.channel_axis < shape.size(),
          "batch_norm: channel axis out of range");
  const std::size_t c = shape[options.channel_axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < options.channel_axis; ++i) outer *= shape[i];
  for (std::size_t i = options.channel_axis + 1; i < shape.size(); ++i) {
    inner *= shape[i];
  }
  require(gamma.value().size() == c && beta.value().size() == c &&
              running_mean.size() == c && running_var.size() == c,
          "batch_norm: parameter size does not match " + std::to_string(c) +
              " channels");
  const std::size_t count = outer * inner;
  require(!options.training || count > 1,
          "batch_norm: training statistics need more than one value per "
          "channel");
  const auto at = [c, inner](std::size_t o, std::size_t ch, std::size_t i) {
    return (o * c + ch) * inner + i;
  };

  std::vector<double> mean(c, 0.0), invstd(c, 0.0);
  const Tensor<T>& xv = x.value();
  if (options.training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) s += xv[at(o, ch, i)];
      }
      const double mu = s / double(count);
      double ss = 0.0;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          const double dlt = xv[at(o, ch, i)] - mu;
          ss += dlt * dlt;
        }
      }
      const double var = ss / double(count);
      mean[ch] = mu;
      invstd[ch] = 1.0 / std::sqrt(var + options.eps);
      const double unbiased = ss / double(count - 1);
      running_mean[ch] = static_cast<T>((1.0 - options.momentum) *
                                            running_mean[ch] +
                                        options.momentum * mu);
      running_var[ch] = static_cast<T>((1.0 - options.momentum) *
                                           running_var[ch] +
                                       options.momentum * unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      invstd[ch] = 1.0 / std::sqrt(double(running_var[ch]) + options.eps);
    }
  }

  Tensor<T> xhat(shape);
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T mu = static_cast<T>(mean[ch]);
      const T is = static_cast<T>(invstd[ch]);
      const T ga = gamma.value()[ch];
      const T be = beta.value()[ch];
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = at(o, ch, i);
        xhat[idx] = (xv[idx] - mu) * is;
        out[idx] = ga * xhat[idx] + be;
      }
    }
  }
  const bool training = options.training;
  return Var<T>::make(
      std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Node<T>& self) {
        const auto& ga = parent_value(self, 1);
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t idx = at(o, ch, i);
              sum_dy += self.grad[idx];
              sum_dy_xhat += double(self.grad[idx]) * xhat[idx];
            }
          }
          if (gg) (*gg)[ch] += static_cast<T>(sum_dy_xhat);
          if (gb) (*gb)[ch] += static_cast<T>(sum_dy);
          if (!gx) continue;
          const double scale = double(ga[ch]) * invstd[ch];
          const double mean_dy = sum_dy / double(count);
          const double mean_dy_xhat = sum_dy_xhat / double(count);
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t idx = at(o, ch, i);
              double d = self.grad[idx];
              if (training) d = d - mean_dy - xhat[idx] * mean_dy_xhat;
              (*gx)[idx] += static_cast<T>(scale * d);
            }
          }
        }
      });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  std::size_t groups, double eps) {
  require(x.value().rank() >= 1, "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  require(groups >= 1 && d % groups == 0,
          "layer_norm: " + std::to_string(groups) +
              " groups do not divide width " + std::to_string(d));
  require(gamma.defined() == beta.defined(),
          "layer_norm: gamma and beta must both be given or both omitted");
  require(!gamma.defined() ||
              (gamma.value().size() == d && beta.value().size() == d),
          "layer_norm: affine size does not match width " + std::to_string(d));
  const std::size_t gs = d / groups;
  const std::size_t rows = x.value().size() / d;
  const bool affine = gamma.defined();

  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  std::vector<double> invstd(rows * groups);
  const T* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = r * d + g * gs;
      double s = 0.0;
      for (std::size_t j = 0; j < gs; ++j) s += xv[base + j];
      const double mu = s / double(gs);
      double ss = 0.0;
      for (std::size_t j = 0; j < gs; ++j) {
        const double dl = xv[base + j] - mu;
        ss += dl * dl;
      }
      const double is = 1.0 / std::sqrt(ss / double(gs) + eps);
      invstd[r * groups + g] = is;
      for (std::size_t j = 0; j < gs; ++j) {
        xhat[base + j] = static_cast<T>((xv[base + j] - mu) * is);
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t idx = r * d + j;
      out[idx] = affine ? gamma.value()[j] * xhat[idx] + beta.value()[j]
                        : xhat[idx];
    }
  }
  std::vector<Var<T>> parents{x};
  if (affine) {
    parents.push_back(gamma);
    parents.push_back(beta);
  }
  return Var<T>::make(
      std::move(out), std::move(parents),
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Node<T>& self) {
        auto* gx = parent_grad(self, 0);
        Tensor<T>* gg = affine ? parent_grad(self, 1) : nullptr;
        Tensor<T>* gb = affine ? parent_grad(self, 2) : nullptr;
        const T* ga = affine ? parent_value(self, 1).data() : nullptr;
        std::vector<double> dxhat(gs);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t idx = r * d + j;
            if (gg) (*gg)[j] += self.grad[idx] * xhat[idx];
            if (gb) (*gb)[j] += self.grad[idx];
          }
          if (!gx) continue;
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t base = r * d + g * gs;
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < gs; ++j) {
              const double dv =
                  double(self.grad[base + j]) * (affine ? ga[g * gs + j] : 1.0);
              dxhat[j] = dv;
              mean_d += dv;
              mean_dx += dv * xhat[base + j];
            }
            mean_d /= double(gs);
            mean_dx /= double(gs);
            const double is = invstd[r * groups + g];
            for (std::size_t j = 0; j < gs; ++j) {
              (*gx)[base + j] += static_cast<T>(
                  is * (dxhat[j] - mean_d - xhat[base + j] * mean_dx));
            }
          }
        }
      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)));
  }
  return Var<T>::make(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const auto& xv = parent_value(self, 0);
      constexpr double kInvSqrt2Pi = 0.3989422804014327;
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        (*g)[i] += static_cast<T>(self.grad[i] * (cdf + v * pdf));
      }
    }
  });
}

template <typename T>
Var<T> swish(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
  }
  return Var<T>::make(std::move(out), {x}, [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const auto& xv = parent_value(self, 0);
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double v = xv[i];
        const double s = 1.0 / (1.0 + std::exp(-v));
        (*g)[i] += static_cast<T>(self.grad[i] * (s + v * s * (1.0 - s)));
      }
    }
  });
}

template <typename T>
Var<T> mean_tokens(const Var<T>& x) {
  require(x.value().rank() == 3,
          "mean_tokens: expected (B, N, D), got " + shape_string(x.shape()));
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  require(n > 0, "mean_tokens: empty sequence");
  Tensor<T> out({b, d});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = x.value().data() + (bi * n + i) * d;
      for (std::size_t j = 0; j < d; ++j) out[bi * d + j] += row[j];
    }
  }
  const T inv = T(1) / static_cast<T>(n);
  for (auto& v : out.values()) v *= inv;
  return Var<T>::make(std::move(out), {x}, [b, n, d, inv](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t bi = 0; bi < b; ++bi) {
        for (std::size_t i = 0; i < n; ++i) {
          T* row = g->data() + (bi * n + i) * d;
          for (std::size_t j = 0; j < d; ++j) row[j] += self.grad[bi * d + j] * inv;
        }
      }
    }
  });
}

template <typename T>
Var<T> retention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 const RetentionSpec& spec) {
  require(q.value().rank() == 3 && q.shape() == k.shape() &&
              q.shape() == v.shape(),
          "retention: Q/K/V must share a (B, N, D) shape");
  const std::size_t b = q.dim(0), n = q.dim(1), d = q.dim(2);
  const std::size_t heads = spec.decays.size();
  require(heads > 0 && d % heads == 0,
          "retention: " + std::to_string(heads) + " heads do not divide " +
              std::to_string(d));
  const std::size_t dh = d / heads;
  require(dh == 2 * spec.theta.size(), "retention: angle count mismatch");
  const T scale = static_cast<T>(spec.query_scale);

  Tensor<T> out(q.shape());
  for (std::size_t bi = 0; bi < b; ++bi) {
    const std::size_t off = bi * n * d;
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor<T> qh = take_head(q.value().data() + off, n, d, h, dh);
      for (auto& x : qh.values()) x *= scale;
      const Tensor<T> kh = take_head(k.value().data() + off, n, d, h, dh);
      const Tensor<T> vh = take_head(v.value().data() + off, n, d, h, dh);
      const Tensor<T> oh =
          spec.form == temporal::RetentionForm::kParallel
              ? temporal::retention_parallel(qh, kh, vh, spec.decays[h],
                                             spec.theta)
              : temporal::retention_recurrent(qh, kh, vh, spec.decays[h],
                                              spec.theta);
      add_head(out.data() + off, n, d, h, dh, oh);
    }
  }
  return Var<T>::make(std::move(out), {q, k, v}, [=](Node<T>& self) {
    auto* gq = parent_grad(self, 0);
    auto* gk = parent_grad(self, 1);
    auto* gv = parent_grad(self, 2);
    std::vector<Tensor<T>> masks;
    for (double gamma : spec.decays) masks.push_back(temporal::decay_mask<T>(n, gamma));
    Tensor<T> scores({n, n}), dscores({n, n});
    Tensor<T> tmp({n, dh});
    for (std::size_t bi = 0; bi < b; ++bi) {
      const std::size_t off = bi * n * d;
      for (std::size_t h = 0; h < heads; ++h) {
        Tensor<T> qh = take_head(parent_value(self, 0).data() + off, n, d, h, dh);
        for (auto& x : qh.values()) x *= scale;
        const Tensor<T> qr = temporal::rotate_positions(qh, spec.theta);
        const Tensor<T> kr = temporal::rotate_positions(
            take_head(parent_value(self, 1).data() + off, n, d, h, dh),
            spec.theta);
        const Tensor<T> vh =
            take_head(parent_value(self, 2).data() + off, n, d, h, dh);
        const Tensor<T> dout = take_head(self.grad.data() + off, n, d, h, dh);
        const Tensor<T>& mask = masks[h];
        gemm<T>(false, true, n, n, dh, T(1), qr.data(), dh, kr.data(), dh,
                T(0), scores.data(), n);
        for (std::size_t i = 0; i < scores.size(); ++i) scores[i] *= mask[i];
        if (gv) {
          gemm<T>(true, false, n, dh, n, T(1), scores.data(), n, dout.data(),
                  dh, T(0), tmp.data(), dh);
          add_head(gv->data() + off, n, d, h, dh, tmp);
        }
        gemm<T>(false, true, n, n, dh, T(1), dout.data(), dh, vh.data(), dh,
                T(0), dscores.data(), n);
        for (std::size_t i = 0; i < dscores.size(); ++i) dscores[i] *= mask[i];
        if (gq) {
          gemm<T>(false, false, n, dh, n, T(1), dscores.data(), n, kr.data(),
                  dh, T(0), tmp.data(), dh);
          Tensor<T> dq = temporal::unrotate_positions(tmp, spec.theta);
          for (auto& x : dq.values()) x *= scale;
          add_head(gq->data() + off, n, d, h, dh, dq);
        }
        if (gk) {
          gemm<T>(true, false, n, dh, n, T(1), dscores.data(), n, qr.data(),
                  dh, T(0), tmp.data(), dh);
          add_head(gk->data() + off, n, d, h, dh,
                   temporal::unrotate_positions(tmp, spec.theta));
        }
      }
    }
  });
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k,
                            std::size_t heads) {
  require(q.rank() == 3 && q.shape() == k.shape(),
          "attention: Q/K must share a (B, N, D) shape");
  const std::size_t b = q.dim(0), n = q.dim(1), d = q.dim(2);
  require(heads > 0 && d % heads == 0, "attention: heads do not divide width");
  const std::size_t dh = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(double(dh)));
  Tensor<T> probs({b, heads, n, n});
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + (bi * heads + h) * n * n;
      gemm<T>(false, true, n, n, dh, scale, q.data() + bi * n * d + h * dh, d,
              k.data() + bi * n * d + h * dh, d, T(0), p, n);
      for (std::size_t i = 0; i < n; ++i) {
        T* row = p + i * n;
        const T mx = *std::max_element(row, row + n);
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) {
          row[j] = std::exp(row[j] - mx);
          s += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= s;
      }
    }
  }
  return probs;
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                 std::size_t heads) {
  require(q.shape() == v.shape(), "attention: V shape mismatch");
  Tensor<T> probs = attention_weights(q.value(), k.value(), heads);
  const std::size_t b = q.dim(0), n = q.dim(1), d = q.dim(2);
  const std::size_t dh = d / heads;
  Tensor<T> out(q.shape());
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t h = 0; h < heads; ++h) {
      gemm<T>(false, false, n, dh, n, T(1),
              probs.data() + (bi * heads + h) * n * n, n,
              v.value().data() + bi * n * d + h * dh, d, T(0),
              out.data() + bi * n * d + h * dh, d);
    }
  }
  const T scale = static_cast<T>(1.0 / std::sqrt(double(dh)));
  return Var<T>::make(
      std::move(out), {q, k, v},
      [=, probs = std::move(probs)](Node<T>& self) {
        auto* gq = parent_grad(self, 0);
        auto* gk = parent_grad(self, 1);
        auto* gv = parent_grad(self, 2);
        const T* qv = parent_value(self, 0).data();
        const T* kv = parent_value(self, 1).data();
        const T* vv = parent_value(self, 2).data();
        Tensor<T> dp({n, n});
        for (std::size_t bi = 0; bi < b; ++bi) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = bi * n * d + h * dh;
            const T* p = probs.data() + (bi * heads + h) * n * n;
            const T* dout = self.grad.data() + off;
            if (gv) {
              gemm<T>(true, false, n, dh, n, T(1), p, n, dout, d, T(1),
                      gv->data() + off, d);
            }
            if (!gq && !gk) continue;
            gemm<T>(false, true, n, n, dh, T(1), dout, d, vv + off, d, T(0),
                    dp.data(), n);
            for (std::size_t i = 0; i < n; ++i) {
              T* row = dp.data() + i * n;
              const T* prow = p + i * n;
              T dot = 0;
              for (std::size_t j = 0; j < n; ++j) dot += row[j] * prow[j];
              for (std::size_t j = 0; j < n; ++j) row[j] = prow[j] * (row[j] - dot);
            }
            if (gq) {
              gemm<T>(false, false, n, dh, n, scale, dp.data(), n, kv + off, d,
                      T(1), gq->data() + off, d);
            }
            if (gk) {
              gemm<T>(true, false, n, dh, n, scale, dp.data(), n, qv + off, d,
                      T(1), gk->data() + off, d);
            }
          }
        }
      });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels,
                     Reduction reduction) {
  require(logits.value().rank() == 2, "cross_entropy: logits must be (B, C)");
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  require(labels.size() == b, "cross_entropy: label count mismatch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) +
                              " outside [0, " + std::to_string(c) + ")");
    }
  }
  Tensor<T> probs({b, c});
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = logits.value().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(double(row[j]) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = static_cast<T>(std::exp(double(row[j]) - lse));
    }
    total += lse - double(row[static_cast<std::size_t>(labels[i])]);
  }
  const double norm = reduction == Reduction::kMean ? 1.0 / double(b) : 1.0;
  std::vector<int> ys(labels.begin(), labels.end());
  return Var<T>::make(
      Tensor<T>({1}, static_cast<T>(total * norm)), {logits},
      [=, probs = std::move(probs), ys = std::move(ys)](Node<T>& self) {
        if (auto* g = parent_grad(self, 0)) {
          const T scale = static_cast<T>(self.grad[0] * norm);
          for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              const T onehot = static_cast<std::size_t>(ys[i]) == j ? T(1) : T(0);
              (*g)[i * c + j] += scale * (probs[i * c + j] - onehot);
            }
          }
        }
      });
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& w) {
  require(x.value().size() == w.size(), "weighted_sum: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += double(x.value()[i]) * w[i];
  return Var<T>::make(Tensor<T>({1}, static_cast<T>(s)), {x},
                      [w](Node<T>& self) {
                        if (auto* g = parent_grad(self, 0)) {
                          for (std::size_t i = 0; i < w.size(); ++i) {
                            (*g)[i] += self.grad[0] * w[i];
                          }
                        }
                      });
}

#define TSF_INSTANTIATE(T)                                                     \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> add_broadcast<T>(const Var<T>&, const Var<T>&);              \
  template Var<T> reshape<T>(const Var<T>&, Shape);                            \
  template Var<T> transpose12<T>(const Var<T>&);                               \
  template Var<T> tokens_to_grid<T>(const Var<T>&, std::size_t, std::size_t); \
  template Var<T> grid_to_tokens<T>(const Var<T>&);                            \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);      \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&,       \
                            std::size_t, std::size_t);                         \
  template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&,   \
                                Tensor<T>&, Tensor<T>&,                        \
                                const BatchNormOptions&);                      \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&,   \
                                std::size_t, double);                          \
  template Var<T> gelu<T>(const Var<T>&);                                      \
  template Var<T> swish<T>(const Var<T>&);                                     \
  template Var<T> mean_tokens<T>(const Var<T>&);                               \
  template Var<T> retention<T>(const Var<T>&, const Var<T>&, const Var<T>&,    \
                               const RetentionSpec&);                          \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&,    \
                               std::size_t);                                   \
  template Tensor<T> attention_weights<T>(const Tensor<T>&, const Tensor<T>&,  \
                                          std::size_t);                        \
  template Var<T> cross_entropy<T>(const Var<T>&, std::span<const int>,        \
                                   Reduction);                                 \
  template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);

TSF_INSTANTIATE(float)
TSF_INSTANTIATE(double)
#undef TSF_INSTANTIATE

}  // namespace tsf::ops
