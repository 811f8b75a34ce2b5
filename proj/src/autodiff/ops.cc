// Copyright 2026 The capreg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "capreg/autodiff/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "capreg/autodiff/svd.h"

namespace capreg::ad {
namespace {

template <typename T>
using RowMatrix =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
ConstMatrixMap<T> as_matrix(const Tensor<T>& t, std::size_t rows,
                            std::size_t cols) {
  return ConstMatrixMap<T>(t.data().data(), rows, cols);
}

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

template <typename T>
void require_rank(const std::string& op, const Var<T>& x, std::size_t rank) {
  if (x.rank() != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got shape " +
                        to_string(x.shape()));
  }
}

template <typename T>
void require_same_shape(const std::string& op, const Var<T>& a,
                        const Var<T>& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, "shapes differ " + to_string(a.shape()) + " vs " +
                        to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    shape_error("matmul", "cannot multiply " + to_string(av.shape()) + " by " +
                              to_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  MatrixMap<T>(out.data().data(), m, n).noalias() =
      as_matrix(av, m, k) * as_matrix(bv, k, n);
  return a.tape().record(
      "matmul", std::move(out), {a, b}, [m, k, n](BackwardContext<T>& ctx) {
        ConstMatrixMap<T> g(ctx.out_grad().data(), m, n);
        if (ctx.needs_grad(0)) {
          MatrixMap<T>(ctx.input_grad(0).data(), m, k).noalias() +=
              g * as_matrix(ctx.input(1), k, n).transpose();
        }
        if (ctx.needs_grad(1)) {
          MatrixMap<T>(ctx.input_grad(1).data(), k, n).noalias() +=
              as_matrix(ctx.input(0), m, k).transpose() * g;
        }
      });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias,
              std::size_t stride) {
  const std::string op = "conv2d";
  require_rank(op, x, 4);
  require_rank(op, weight, 4);
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t height = x.dim(2), width = x.dim(3);
  const std::size_t out_channels = weight.dim(0);
  const std::size_t kernel = weight.dim(2);
  if (weight.dim(1) != channels || weight.dim(3) != kernel) {
    shape_error(op, "weight " + to_string(weight.shape()) +
                        " does not match input " + to_string(x.shape()));
  }
  if (stride == 0) shape_error(op, "stride must be positive");
  if (kernel > height || kernel > width) {
    shape_error(op, "kernel " + std::to_string(kernel) +
                        " exceeds input extent " + std::to_string(height) +
                        "x" + std::to_string(width));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != out_channels)) {
    shape_error(op, "bias " + to_string(bias->shape()) + " does not match " +
                        std::to_string(out_channels) + " output channels");
  }
  const std::size_t out_h = (height - kernel) / stride + 1;
  const std::size_t out_w = (width - kernel) / stride + 1;
  const std::size_t plane = out_h * out_w;
  const std::size_t patch = channels * kernel * kernel;
  const std::size_t columns = batch * plane;

  // im2col: cols[(c,ki,kj), (b,oh,ow)]
  auto cols = std::make_shared<std::vector<T>>(patch * columns);
  const std::span<const T> xs = x.value().data();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kernel; ++ki) {
      for (std::size_t kj = 0; kj < kernel; ++kj) {
        T* row = cols->data() + ((c * kernel + ki) * kernel + kj) * columns;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* src = xs.data() + (b * channels + c) * height * width;
          for (std::size_t oh = 0; oh < out_h; ++oh) {
            const T* line = src + (oh * stride + ki) * width + kj;
            T* dst = row + b * plane + oh * out_w;
            for (std::size_t ow = 0; ow < out_w; ++ow) {
              dst[ow] = line[ow * stride];
            }
          }
        }
      }
    }
  }

  RowMatrix<T> product =
      as_matrix(weight.value(), out_channels, patch) *
      ConstMatrixMap<T>(cols->data(), patch, columns);
  Tensor<T> out({batch, out_channels, out_h, out_w});
  std::span<T> os = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out_channels; ++o) {
      const T shift = bias ? bias->value()[o] : T(0);
      const T* src = product.data() + o * columns + b * plane;
      T* dst = os.data() + (b * out_channels + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + shift;
    }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool has_bias = bias.has_value();
  return x.tape().record(
      "conv2d", std::move(out), std::move(inputs),
      [=](BackwardContext<T>& ctx) {
        std::span<const T> g = ctx.out_grad();
        RowMatrix<T> grad_mat(out_channels, columns);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t o = 0; o < out_channels; ++o) {
            const T* src = g.data() + (b * out_channels + o) * plane;
            T* dst = grad_mat.data() + o * columns + b * plane;
            std::copy(src, src + plane, dst);
          }
        }
        ConstMatrixMap<T> col_mat(cols->data(), patch, columns);
        if (ctx.needs_grad(1)) {
          MatrixMap<T>(ctx.input_grad(1).data(), out_channels, patch)
              .noalias() += grad_mat * col_mat.transpose();
        }
        if (has_bias && ctx.needs_grad(2)) {
          std::span<T> gb = ctx.input_grad(2);
          for (std::size_t o = 0; o < out_channels; ++o) {
            gb[o] += grad_mat.row(o).sum();
          }
        }
        if (ctx.needs_grad(0)) {
          RowMatrix<T> grad_cols =
              as_matrix(ctx.input(1), out_channels, patch).transpose() *
              grad_mat;
          std::span<T> gx = ctx.input_grad(0);
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t ki = 0; ki < kernel; ++ki) {
              for (std::size_t kj = 0; kj < kernel; ++kj) {
                const T* row = grad_cols.data() +
                               ((c * kernel + ki) * kernel + kj) * columns;
                for (std::size_t b = 0; b < batch; ++b) {
                  T* dst = gx.data() + (b * channels + c) * height * width;
                  for (std::size_t oh = 0; oh < out_h; ++oh) {
                    T* line = dst + (oh * stride + ki) * width + kj;
                    const T* src = row + b * plane + oh * out_w;
                    for (std::size_t ow = 0; ow < out_w; ++ow) {
                      line[ow * stride] += src[ow];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out(x.shape());
  std::span<const T> xs = x.value().data();
  std::span<T> os = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) os[i] = xs[i] > T(0) ? xs[i] : T(0);
  return x.tape().record("relu", std::move(out), {x},
                         [](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           std::span<const T> in = ctx.input(0).data();
                           std::span<T> gx = ctx.input_grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (in[i] > T(0)) gx[i] += g[i];
                           }
                         });
}

template <typename T>
Var<T> batchnorm(Var<T> x, BatchNormState<T>* state,
                 const BatchNormOptions& options, std::optional<Var<T>> gamma,
                 std::optional<Var<T>> beta) {
  const std::string op = "batchnorm";
  require_rank(op, x, 2);
  const std::size_t rows = x.dim(0), features = x.dim(1);
  for (const auto* param : {&gamma, &beta}) {
    if (*param && ((*param)->rank() != 1 || (*param)->dim(0) != features)) {
      shape_error(op, "affine parameter " + to_string((*param)->shape()) +
                          " does not match " + std::to_string(features) +
                          " features");
    }
  }
  if (rows == 0) shape_error(op, "empty batch");
  if (state && state->running_mean.empty()) {
    state->running_mean.assign(features, T(0));
    state->running_var.assign(features, T(1));
  }
  if (!options.training && state == nullptr) {
    shape_error(op, "inference mode needs running statistics");
  }
  std::span<const T> xs = x.value().data();
  auto inv_std = std::make_shared<std::vector<T>>(features);
  auto normalized = std::make_shared<std::vector<T>>(rows * features);
  std::vector<T> centre(features);
  if (options.training) {
    for (std::size_t j = 0; j < features; ++j) {
      T mu = 0;
      for (std::size_t i = 0; i < rows; ++i) mu += xs[i * features + j];
      mu /= static_cast<T>(rows);
      T var = 0;
      for (std::size_t i = 0; i < rows; ++i) {
        const T d = xs[i * features + j] - mu;
        var += d * d;
      }
      var /= static_cast<T>(rows);
      centre[j] = mu;
      (*inv_std)[j] = T(1) / std::sqrt(var + static_cast<T>(options.eps));
      if (state) {
        const T m = static_cast<T>(options.momentum);
        const T unbiased =
            rows > 1 ? var * static_cast<T>(rows) / static_cast<T>(rows - 1)
                     : var;
        state->running_mean[j] = (T(1) - m) * state->running_mean[j] + m * mu;
        state->running_var[j] =
            (T(1) - m) * state->running_var[j] + m * unbiased;
      }
    }
  } else {
    for (std::size_t j = 0; j < features; ++j) {
      centre[j] = state->running_mean[j];
      (*inv_std)[j] =
          T(1) / std::sqrt(state->running_var[j] + static_cast<T>(options.eps));
    }
  }
  Tensor<T> out({rows, features});
  std::span<T> os = out.data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < features; ++j) {
      const std::size_t idx = i * features + j;
      const T xhat = (xs[idx] - centre[j]) * (*inv_std)[j];
      (*normalized)[idx] = xhat;
      const T g = gamma ? gamma->value()[j] : T(1);
      const T b = beta ? beta->value()[j] : T(0);
      os[idx] = g * xhat + b;
    }
  }
  std::vector<Var<T>> inputs{x};
  const int gamma_slot = gamma ? static_cast<int>(inputs.size()) : -1;
  if (gamma) inputs.push_back(*gamma);
  const int beta_slot = beta ? static_cast<int>(inputs.size()) : -1;
  if (beta) inputs.push_back(*beta);
  const bool training = options.training;
  return x.tape().record(
      "batchnorm", std::move(out), std::move(inputs),
      [=](BackwardContext<T>& ctx) {
        std::span<const T> g = ctx.out_grad();
        const Tensor<T>* gamma_value =
            gamma_slot >= 0 ? &ctx.input(gamma_slot) : nullptr;
        if (gamma_slot >= 0 && ctx.needs_grad(gamma_slot)) {
          std::span<T> gg = ctx.input_grad(gamma_slot);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < features; ++j) {
              gg[j] += g[i * features + j] * (*normalized)[i * features + j];
            }
          }
        }
        if (beta_slot >= 0 && ctx.needs_grad(beta_slot)) {
          std::span<T> gb = ctx.input_grad(beta_slot);
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < features; ++j) {
              gb[j] += g[i * features + j];
            }
          }
        }
        if (!ctx.needs_grad(0)) return;
        std::span<T> gx = ctx.input_grad(0);
        const T n = static_cast<T>(rows);
        for (std::size_t j = 0; j < features; ++j) {
          const T scale_j = gamma_value ? (*gamma_value)[j] : T(1);
          if (!training) {
            for (std::size_t i = 0; i < rows; ++i) {
              gx[i * features + j] +=
                  g[i * features + j] * scale_j * (*inv_std)[j];
            }
            continue;
          }
          T sum_d = 0, sum_dx = 0;
          for (std::size_t i = 0; i < rows; ++i) {
            const T d = g[i * features + j] * scale_j;
            sum_d += d;
            sum_dx += d * (*normalized)[i * features + j];
          }
          for (std::size_t i = 0; i < rows; ++i) {
            const std::size_t idx = i * features + j;
            const T d = g[idx] * scale_j;
            gx[idx] += (*inv_std)[j] / n *
                       (n * d - sum_d - (*normalized)[idx] * sum_dx);
          }
        }
      });
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& targets) {
  const std::string op = "softmax_cross_entropy";
  require_rank(op, logits, 2);
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (rows == 0 || classes == 0) {
    shape_error(op, "empty logits " + to_string(logits.shape()));
  }
  if (targets.size() != rows) {
    shape_error(op, std::to_string(targets.size()) + " targets for logits " +
                        to_string(logits.shape()));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      shape_error(op, "target " + std::to_string(t) + " outside " +
                          std::to_string(classes) + " classes");
    }
  }
  std::span<const T> xs = logits.value().data();
  auto probs = std::make_shared<std::vector<T>>(rows * classes);
  T total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = xs.data() + i * classes;
    const T peak = *std::max_element(row, row + classes);
    T denom = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      const T e = std::exp(row[j] - peak);
      (*probs)[i * classes + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < classes; ++j) (*probs)[i * classes + j] /= denom;
    total += peak + std::log(denom) - row[targets[i]];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(rows));
  return logits.tape().record(
      "softmax_cross_entropy", std::move(out), {logits},
      [probs, targets, rows, classes](BackwardContext<T>& ctx) {
        const T g = ctx.out_grad()[0] / static_cast<T>(rows);
        std::span<T> gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < classes; ++j) {
            const T onehot = static_cast<std::size_t>(targets[i]) == j ? 1 : 0;
            gx[i * classes + j] += g * ((*probs)[i * classes + j] - onehot);
          }
        }
      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().data()) total += v;
  return x.tape().record("sum", Tensor<T>::scalar(total), {x},
                         [](BackwardContext<T>& ctx) {
                           const T g = ctx.out_grad()[0];
                           for (T& v : ctx.input_grad(0)) v += g;
                         });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  if (n == 0) shape_error("mean", "empty tensor");
  T total = 0;
  for (T v : x.value().data()) total += v;
  return x.tape().record("mean", Tensor<T>::scalar(total / static_cast<T>(n)),
                         {x}, [n](BackwardContext<T>& ctx) {
                           const T g = ctx.out_grad()[0] / static_cast<T>(n);
                           for (T& v : ctx.input_grad(0)) v += g;
                         });
}

template <typename T>
Var<T> l2_normalize(Var<T> x) {
  if (x.rank() == 0) shape_error("l2_normalize", "scalar input");
  const std::size_t width = x.shape().back();
  if (width == 0) shape_error("l2_normalize", "empty last axis");
  const std::size_t rows = x.value().size() / width;
  std::span<const T> xs = x.value().data();
  auto norms = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(x.shape());
  std::span<T> os = out.data();
  const T floor = static_cast<T>(kNormFloor);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = 0;
    for (std::size_t j = 0; j < width; ++j) sq += xs[r * width + j] * xs[r * width + j];
    const T norm = std::sqrt(sq);
    (*norms)[r] = norm;
    const T denom = std::max(norm, floor);
    for (std::size_t j = 0; j < width; ++j) os[r * width + j] = xs[r * width + j] / denom;
  }
  return x.tape().record(
      "l2_normalize", std::move(out), {x},
      [norms, rows, width, floor](BackwardContext<T>& ctx) {
        std::span<const T> g = ctx.out_grad();
        std::span<const T> y = ctx.output().data();
        std::span<T> gx = ctx.input_grad(0);
        for (std::size_t r = 0; r < rows; ++r) {
          const T norm = (*norms)[r];
          if (norm <= floor) {
            for (std::size_t j = 0; j < width; ++j) {
              gx[r * width + j] += g[r * width + j] / floor;
            }
            continue;
          }
          T dot = 0;
          for (std::size_t j = 0; j < width; ++j) dot += y[r * width + j] * g[r * width + j];
          for (std::size_t j = 0; j < width; ++j) {
            gx[r * width + j] += (g[r * width + j] - y[r * width + j] * dot) / norm;
          }
        }
      });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return a.tape().record("add", std::move(out), {a, b},
                           [](BackwardContext<T>& ctx) {
                             std::span<const T> g = ctx.out_grad();
                             for (std::size_t k = 0; k < 2; ++k) {
                               if (!ctx.needs_grad(k)) continue;
                               std::span<T> gi = ctx.input_grad(k);
                               for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                             }
                           });
  }
  if (bv.rank() != 1 || av.rank() == 0 || av.shape().back() != bv.dim(0)) {
    shape_error("add", "cannot broadcast " + to_string(bv.shape()) + " onto " +
                           to_string(av.shape()));
  }
  const std::size_t width = bv.dim(0);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % width];
  return a.tape().record("add", std::move(out), {a, b},
                         [width](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           if (ctx.needs_grad(0)) {
                             std::span<T> ga = ctx.input_grad(0);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (ctx.needs_grad(1)) {
                             std::span<T> gb = ctx.input_grad(1);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i % width] += g[i];
                           }
                         });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return a.tape().record("sub", std::move(out), {a, b},
                         [](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           if (ctx.needs_grad(0)) {
                             std::span<T> ga = ctx.input_grad(0);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                           }
                           if (ctx.needs_grad(1)) {
                             std::span<T> gb = ctx.input_grad(1);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                           }
                         });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b},
                         [](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           std::span<const T> av = ctx.input(0).data();
                           std::span<const T> bv = ctx.input(1).data();
                           if (ctx.needs_grad(0)) {
                             std::span<T> ga = ctx.input_grad(0);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                           }
                           if (ctx.needs_grad(1)) {
                             std::span<T> gb = ctx.input_grad(1);
                             for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                           }
                         });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  return x.tape().record("scale", std::move(out), {x},
                         [factor](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           std::span<T> gx = ctx.input_grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
                         });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T offset) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] + offset;
  return x.tape().record("add_scalar", std::move(out), {x},
                         [](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           std::span<T> gx = ctx.input_grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& terms) {
  if (terms.empty()) shape_error("add_n", "no terms");
  for (const Var<T>& t : terms) require_same_shape("add_n", terms.front(), t);
  Tensor<T> out(terms.front().shape());
  for (const Var<T>& t : terms) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.value()[i];
  }
  const std::size_t count = terms.size();
  return terms.front().tape().record(
      "add_n", std::move(out), terms, [count](BackwardContext<T>& ctx) {
        std::span<const T> g = ctx.out_grad();
        for (std::size_t k = 0; k < count; ++k) {
          if (!ctx.needs_grad(k)) continue;
          std::span<T> gk = ctx.input_grad(k);
          for (std::size_t i = 0; i < g.size(); ++i) gk[i] += g[i];
        }
      });
}

template <typename T>
Var<T> transpose(Var<T> x) {
  require_rank("transpose", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor<T> out({cols, rows});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x.value()[i * cols + j];
  }
  return x.tape().record("transpose", std::move(out), {x},
                         [rows, cols](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           std::span<T> gx = ctx.input_grad(0);
                           for (std::size_t i = 0; i < rows; ++i) {
                             for (std::size_t j = 0; j < cols; ++j) {
                               gx[i * cols + j] += g[j * rows + i];
                             }
                           }
                         });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (numel(shape) != x.value().size()) {
    shape_error("reshape", "cannot view " + to_string(x.shape()) + " as " +
                               to_string(shape));
  }
  Tensor<T> out(std::move(shape), x.value().storage());
  return x.tape().record("reshape", std::move(out), {x},
                         [](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           std::span<T> gx = ctx.input_grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                         });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  require_rank("softmax", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (cols == 0) shape_error("softmax", "empty rows");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = x.value().data().data() + i * cols;
    const T peak = *std::max_element(row, row + cols);
    T denom = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] = std::exp(row[j] - peak);
      denom += out[i * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] /= denom;
  }
  return x.tape().record("softmax", std::move(out), {x},
                         [rows, cols](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           std::span<const T> y = ctx.output().data();
                           std::span<T> gx = ctx.input_grad(0);
                           for (std::size_t i = 0; i < rows; ++i) {
                             T dot = 0;
                             for (std::size_t j = 0; j < cols; ++j) {
                               dot += g[i * cols + j] * y[i * cols + j];
                             }
                             for (std::size_t j = 0; j < cols; ++j) {
                               gx[i * cols + j] +=
                                   y[i * cols + j] * (g[i * cols + j] - dot);
                             }
                           }
                         });
}

template <typename T>
Var<T> reduce_mean(Var<T> x, std::size_t axis) {
  if (axis >= x.rank()) {
    shape_error("reduce_mean", "axis " + std::to_string(axis) +
                                   " out of range for " + to_string(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  if (n == 0) shape_error("reduce_mean", "empty axis");
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  Tensor<T> out(out_shape);
  std::span<const T> xs = x.value().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < inner; ++i) {
        out[o * inner + i] += xs[(o * n + k) * inner + i];
      }
    }
  }
  for (T& v : out.data()) v /= static_cast<T>(n);
  return x.tape().record(
      "reduce_mean", std::move(out), {x},
      [outer, inner, n](BackwardContext<T>& ctx) {
        std::span<const T> g = ctx.out_grad();
        std::span<T> gx = ctx.input_grad(0);
        const T w = T(1) / static_cast<T>(n);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t i = 0; i < inner; ++i) {
              gx[(o * n + k) * inner + i] += g[o * inner + i] * w;
            }
          }
        }
      });
}

template <typename T>
Var<T> select(Var<T> x, std::size_t index) {
  require_rank("select", x, 3);
  const std::size_t batch = x.dim(0), heads = x.dim(1), width = x.dim(2);
  if (index >= heads) {
    shape_error("select", "index " + std::to_string(index) + " outside " +
                              to_string(x.shape()));
  }
  Tensor<T> out({batch, width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t d = 0; d < width; ++d) {
      out[b * width + d] = x.value()[(b * heads + index) * width + d];
    }
  }
  return x.tape().record("select", std::move(out), {x},
                         [=](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           std::span<T> gx = ctx.input_grad(0);
                           for (std::size_t b = 0; b < batch; ++b) {
                             for (std::size_t d = 0; d < width; ++d) {
                               gx[(b * heads + index) * width + d] += g[b * width + d];
                             }
                           }
                         });
}

template <typename T>
Var<T> stack(const std::vector<Var<T>>& parts) {
  if (parts.empty()) shape_error("stack", "no parts");
  for (const Var<T>& p : parts) {
    require_rank("stack", p, 2);
    require_same_shape("stack", parts.front(), p);
  }
  const std::size_t batch = parts[0].dim(0), width = parts[0].dim(1);
  const std::size_t heads = parts.size();
  Tensor<T> out({batch, heads, width});
  for (std::size_t n = 0; n < heads; ++n) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t d = 0; d < width; ++d) {
        out[(b * heads + n) * width + d] = parts[n].value()[b * width + d];
      }
    }
  }
  return parts.front().tape().record(
      "stack", std::move(out), parts, [=](BackwardContext<T>& ctx) {
        std::span<const T> g = ctx.out_grad();
        for (std::size_t n = 0; n < heads; ++n) {
          if (!ctx.needs_grad(n)) continue;
          std::span<T> gp = ctx.input_grad(n);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t d = 0; d < width; ++d) {
              gp[b * width + d] += g[(b * heads + n) * width + d];
            }
          }
        }
      });
}

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  require_rank("concat_rows", a, 2);
  require_rank("concat_rows", b, 2);
  if (a.dim(1) != b.dim(1)) {
    shape_error("concat_rows", "widths differ " + to_string(a.shape()) +
                                   " vs " + to_string(b.shape()));
  }
  const std::size_t na = a.value().size();
  std::vector<T> values(a.value().storage());
  values.insert(values.end(), b.value().data().begin(), b.value().data().end());
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1)}, std::move(values));
  return a.tape().record("concat_rows", std::move(out), {a, b},
                         [na](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           if (ctx.needs_grad(0)) {
                             std::span<T> ga = ctx.input_grad(0);
                             for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
                           }
                           if (ctx.needs_grad(1)) {
                             std::span<T> gb = ctx.input_grad(1);
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
                           }
                         });
}

template <typename T>
Var<T> to_channel_last(Var<T> x) {
  require_rank("to_channel_last", x, 4);
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t height = x.dim(2), width = x.dim(3);
  const std::size_t plane = height * width;
  Tensor<T> out({batch, height, width, channels});
  std::span<const T> xs = x.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        out[(b * plane + p) * channels + c] = xs[(b * channels + c) * plane + p];
      }
    }
  }
  return x.tape().record(
      "to_channel_last", std::move(out), {x}, [=](BackwardContext<T>& ctx) {
        std::span<const T> g = ctx.out_grad();
        std::span<T> gx = ctx.input_grad(0);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t p = 0; p < plane; ++p) {
              gx[(b * channels + c) * plane + p] += g[(b * plane + p) * channels + c];
            }
          }
        }
      });
}

template <typename T>
Var<T> location(Var<T> x, std::size_t h, std::size_t w) {
  require_rank("location", x, 4);
  const std::size_t batch = x.dim(0), height = x.dim(1);
  const std::size_t width = x.dim(2), channels = x.dim(3);
  if (h >= height || w >= width) {
    shape_error("location", "(" + std::to_string(h) + "," + std::to_string(w) +
                                ") outside " + to_string(x.shape()));
  }
  Tensor<T> out({batch, channels});
  std::span<const T> xs = x.value().data();
  const std::size_t offset = (h * width + w) * channels;
  const std::size_t stride = height * width * channels;
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(xs.data() + b * stride + offset, channels,
                out.data().data() + b * channels);
  }
  return x.tape().record("location", std::move(out), {x},
                         [=](BackwardContext<T>& ctx) {
                           std::span<const T> g = ctx.out_grad();
                           std::span<T> gx = ctx.input_grad(0);
                           for (std::size_t b = 0; b < batch; ++b) {
                             for (std::size_t c = 0; c < channels; ++c) {
                               gx[b * stride + offset + c] += g[b * channels + c];
                             }
                           }
                         });
}

template <typename T>
Var<T> weighted_heads(Var<T> x, Var<T> weights) {
  require_rank("weighted_heads", x, 3);
  require_rank("weighted_heads", weights, 2);
  const std::size_t batch = x.dim(0), heads = x.dim(1), width = x.dim(2);
  if (weights.dim(0) != batch || weights.dim(1) != heads) {
    shape_error("weighted_heads", "weights " + to_string(weights.shape()) +
                                      " do not match " + to_string(x.shape()));
  }
  Tensor<T> out({batch, width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t n = 0; n < heads; ++n) {
      const T w = weights.value()[b * heads + n];
      for (std::size_t d = 0; d < width; ++d) {
        out[b * width + d] += w * x.value()[(b * heads + n) * width + d];
      }
    }
  }
  return x.tape().record(
      "weighted_heads", std::move(out), {x, weights},
      [=](BackwardContext<T>& ctx) {
        std::span<const T> g = ctx.out_grad();
        std::span<const T> xs = ctx.input(0).data();
        std::span<const T> ws = ctx.input(1).data();
        if (ctx.needs_grad(0)) {
          std::span<T> gx = ctx.input_grad(0);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t n = 0; n < heads; ++n) {
              for (std::size_t d = 0; d < width; ++d) {
                gx[(b * heads + n) * width + d] += ws[b * heads + n] * g[b * width + d];
              }
            }
          }
        }
        if (ctx.needs_grad(1)) {
          std::span<T> gw = ctx.input_grad(1);
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t n = 0; n < heads; ++n) {
              T dot = 0;
              for (std::size_t d = 0; d < width; ++d) {
                dot += xs[(b * heads + n) * width + d] * g[b * width + d];
              }
              gw[b * heads + n] += dot;
            }
          }
        }
      });
}

template <typename T>
Var<T> nuclear_norm(Var<T> x, double cutoff) {
  require_rank("nuclear_norm", x, 2);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const SvdResult decomposition = svd(x.value());
  double total = 0.0;
  Eigen::MatrixXd direction = Eigen::MatrixXd::Zero(rows, cols);
  for (Eigen::Index k = 0; k < decomposition.singular_values.size(); ++k) {
    const double s = decomposition.singular_values(k);
    total += s;
    if (s > cutoff) {
      direction += decomposition.u.col(k) * decomposition.v.col(k).transpose();
    }
  }
  auto subgradient = std::make_shared<std::vector<T>>(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      (*subgradient)[i * cols + j] = static_cast<T>(direction(i, j));
    }
  }
  return x.tape().record("nuclear_norm",
                         Tensor<T>::scalar(static_cast<T>(total)), {x},
                         [subgradient](BackwardContext<T>& ctx) {
                           const T g = ctx.out_grad()[0];
                           std::span<T> gx = ctx.input_grad(0);
                           for (std::size_t i = 0; i < gx.size(); ++i) {
                             gx[i] += g * (*subgradient)[i];
                           }
                         });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias) {
  Var<T> out = matmul(x, weight);
  return bias ? add(out, *bias) : out;
}

#define CAPREG_INSTANTIATE_OPS(T)                                             \
  template Var<T> matmul(Var<T>, Var<T>);                                     \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t); \
  template Var<T> relu(Var<T>);                                               \
  template Var<T> batchnorm(Var<T>, BatchNormState<T>*,                       \
                            const BatchNormOptions&, std::optional<Var<T>>,   \
                            std::optional<Var<T>>);                           \
  template Var<T> softmax_cross_entropy(Var<T>, const std::vector<int>&);     \
  template Var<T> mean(Var<T>);                                               \
  template Var<T> sum(Var<T>);                                                \
  template Var<T> l2_normalize(Var<T>);                                       \
  template Var<T> add(Var<T>, Var<T>);                                        \
  template Var<T> sub(Var<T>, Var<T>);                                        \
  template Var<T> mul(Var<T>, Var<T>);                                        \
  template Var<T> scale(Var<T>, T);                                           \
  template Var<T> add_scalar(Var<T>, T);                                      \
  template Var<T> add_n(const std::vector<Var<T>>&);                          \
  template Var<T> transpose(Var<T>);                                          \
  template Var<T> reshape(Var<T>, Shape);                                     \
  template Var<T> softmax(Var<T>);                                            \
  template Var<T> reduce_mean(Var<T>, std::size_t);                           \
  template Var<T> select(Var<T>, std::size_t);                                \
  template Var<T> stack(const std::vector<Var<T>>&);                          \
  template Var<T> concat_rows(Var<T>, Var<T>);                                \
  template Var<T> to_channel_last(Var<T>);                                    \
  template Var<T> location(Var<T>, std::size_t, std::size_t);                 \
  template Var<T> weighted_heads(Var<T>, Var<T>);                             \
  template Var<T> nuclear_norm(Var<T>, double);                               \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);

CAPREG_INSTANTIATE_OPS(float)
CAPREG_INSTANTIATE_OPS(double)

}  // namespace capreg::ad
