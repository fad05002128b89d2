#pragma once

#include "simclr/tensorgrad/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <type_traits>
#include <utility>

namespace simclr::tg {

enum class Padding { same, valid };

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <typename Scalar>
Tensor<Scalar> add(Tape<Scalar>& tape, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Vector<Scalar> out = a.value() + b.value();
  return tape.record("add", a.shape(), std::move(out), {a, b},
                     [a, b](const Vector<Scalar>& g) mutable {
                       accumulate(a.node(), g);
                       accumulate(b.node(), g);
                     });
}

template <typename Scalar>
Tensor<Scalar> scale(Tape<Scalar>& tape, const Tensor<Scalar>& a, Scalar c) {
  Vector<Scalar> out = a.value() * c;
  return tape.record("scale", a.shape(), std::move(out), {a},
                     [a, c](const Vector<Scalar>& g) { accumulate(a.node(), g * c); });
}

template <typename Scalar>
Tensor<Scalar> relu(Tape<Scalar>& tape, const Tensor<Scalar>& x) {
  Vector<Scalar> out = x.value().cwiseMax(Scalar(0));
  return tape.record("relu", x.shape(), std::move(out), {x}, [x](const Vector<Scalar>& g) {
    accumulate(x.node(), (x.value().array() > Scalar(0)).select(g.array(), Scalar(0)).matrix());
  });
}

template <typename Scalar>
Tensor<Scalar> sum(Tape<Scalar>& tape, const Tensor<Scalar>& x) {
  Scalar total = x.value().sum();
  return tape.record("sum", Shape{1}, Vector<Scalar>::Constant(1, total), {x},
                     [x](const Vector<Scalar>& g) {
                       accumulate(x.node(), Vector<Scalar>::Constant(x.numel(), g[0]));
                     });
}

template <typename Scalar>
Tensor<Scalar> mean(Tape<Scalar>& tape, const Tensor<Scalar>& x) {
  const Scalar n = static_cast<Scalar>(x.numel());
  return tape.record("mean", Shape{1}, Vector<Scalar>::Constant(1, x.value().sum() / n), {x},
                     [x, n](const Vector<Scalar>& g) {
                       accumulate(x.node(), Vector<Scalar>::Constant(x.numel(), g[0] / n));
                     });
}

template <typename Scalar>
Tensor<Scalar> sum_squares(Tape<Scalar>& tape, const Tensor<Scalar>& x) {
  return tape.record("sum_squares", Shape{1},
                     Vector<Scalar>::Constant(1, x.value().squaredNorm()), {x},
                     [x](const Vector<Scalar>& g) {
                       accumulate(x.node(), (Scalar(2) * g[0]) * x.value());
                     });
}

/// Scalar-valued function with a caller-supplied analytic gradient.
/// `fn` returns (value, d value / d x).
template <typename Scalar>
Tensor<Scalar> scalar_function(
    Tape<Scalar>& tape, const Tensor<Scalar>& x, std::string name,
    const std::function<std::pair<Scalar, Vector<Scalar>>(const Tensor<Scalar>&)>& fn) {
  auto [value, grad] = fn(x);
  if (grad.size() != x.numel()) {
    throw DimensionError(name + ": gradient size " + std::to_string(grad.size()) +
                         " does not match input " + to_string(x.shape()));
  }
  return tape.record(std::move(name), Shape{1}, Vector<Scalar>::Constant(1, value), {x},
                     [x, grad = std::move(grad)](const Vector<Scalar>& g) {
                       accumulate(x.node(), g[0] * grad);
                     });
}

// ---------------------------------------------------------------------------
// Dense layers

/// x[B,in] * W[out,in]^T (+ bias[out]).
template <typename Scalar>
Tensor<Scalar> dense(Tape<Scalar>& tape, const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                     const std::optional<std::type_identity_t<Tensor<Scalar>>>& bias = std::nullopt) {
  if (x.rank() != 2) throw DimensionError("dense: input must be rank 2, got " + to_string(x.shape()));
  if (weight.rank() != 2) throw DimensionError("dense: weight must be rank 2");
  const Index batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError("dense: axis 1 of input (" + std::to_string(in) +
                         ") does not match axis 1 of weight (" + std::to_string(weight.dim(1)) + ")");
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != out)) {
    throw DimensionError("dense: bias axis 0 must equal output width " + std::to_string(out));
  }
  Matrix<Scalar> y = x.matrix(batch, in) * weight.matrix(out, in).transpose();
  if (bias) y.rowwise() += bias->value().transpose();
  Vector<Scalar> flat = Eigen::Map<Vector<Scalar>>(y.data(), y.size());
  std::vector<Tensor<Scalar>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(
      "dense", Shape{batch, out}, std::move(flat), std::move(inputs),
      [x, weight, bias, batch, in, out](const Vector<Scalar>& g) {
        ConstMatrixMap<Scalar> dy(g.data(), batch, out);
        if (x.requires_grad()) {
          Matrix<Scalar> dx = dy * weight.matrix(out, in);
          accumulate(x.node(), Eigen::Map<const Vector<Scalar>>(dx.data(), dx.size()));
        }
        if (weight.requires_grad()) {
          Matrix<Scalar> dw = dy.transpose() * x.matrix(batch, in);
          accumulate(weight.node(), Eigen::Map<const Vector<Scalar>>(dw.data(), dw.size()));
        }
        if (bias && bias->requires_grad()) {
          Vector<Scalar> db = dy.colwise().sum().transpose();
          accumulate(bias->node(), db);
        }
      });
}

/// Row-wise x / ||x||. Zero rows map to zero and pass no gradient.
template <typename Scalar>
Tensor<Scalar> l2_normalize(Tape<Scalar>& tape, const Tensor<Scalar>& x) {
  const Index rows = x.dim(0), cols = x.numel() / rows;
  auto xm = x.matrix(rows, cols);
  Vector<Scalar> norms = xm.rowwise().norm();
  Matrix<Scalar> y(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    if (norms[r] > Scalar(0)) {
      y.row(r) = xm.row(r) / norms[r];
    } else {
      y.row(r).setZero();
    }
  }
  Vector<Scalar> flat = Eigen::Map<Vector<Scalar>>(y.data(), y.size());
  return tape.record("l2_normalize", x.shape(), flat, {x},
                     [x, y = std::move(y), norms, rows, cols](const Vector<Scalar>& g) {
                       ConstMatrixMap<Scalar> dy(g.data(), rows, cols);
                       Matrix<Scalar> dx(rows, cols);
                       for (Index r = 0; r < rows; ++r) {
                         if (norms[r] > Scalar(0)) {
                           dx.row(r) = (dy.row(r) - y.row(r) * y.row(r).dot(dy.row(r))) / norms[r];
                         } else {
                           dx.row(r).setZero();
                         }
                       }
                       accumulate(x.node(), Eigen::Map<const Vector<Scalar>>(dx.data(), dx.size()));
                     });
}

/// Mean softmax cross-entropy of logits[B,K] against integer labels.
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(Tape<Scalar>& tape, const Tensor<Scalar>& logits,
                                     std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("softmax_cross_entropy: logits must be rank 2");
  const Index batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != batch) {
    throw DimensionError("softmax_cross_entropy: axis 0 of logits (" + std::to_string(batch) +
                         ") does not match label count " + std::to_string(labels.size()));
  }
  auto z = logits.matrix(batch, classes);
  Matrix<Scalar> probs(batch, classes);
  Scalar loss = 0;
  for (Index r = 0; r < batch; ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= classes) throw ContractError("softmax_cross_entropy: label out of range");
    const Scalar mx = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - mx).exp().matrix();
    const Scalar partition = probs.row(r).sum();
    probs.row(r) /= partition;
    loss += -(z(r, label) - mx - std::log(partition));
  }
  loss /= static_cast<Scalar>(batch);
  std::vector<int> owned(labels.begin(), labels.end());
  return tape.record("softmax_cross_entropy", Shape{1}, Vector<Scalar>::Constant(1, loss), {logits},
                     [logits, probs = std::move(probs), owned = std::move(owned), batch,
                      classes](const Vector<Scalar>& g) {
                       Matrix<Scalar> d = probs;
                       for (Index r = 0; r < batch; ++r) d(r, owned[static_cast<std::size_t>(r)]) -= Scalar(1);
                       d *= g[0] / static_cast<Scalar>(batch);
                       accumulate(logits.node(), Eigen::Map<const Vector<Scalar>>(d.data(), d.size()));
                     });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

struct ConvGeometry {
  Index batch, channels, height, width;
  Index kernels, kh, kw, stride;
  Index pad_top, pad_left, out_h, out_w;

  Index patch() const { return channels * kh * kw; }
  Index positions() const { return out_h * out_w; }
};

inline std::pair<Index, Index> output_extent(Index in, Index k, Index stride, Padding padding) {
  if (padding == Padding::valid) return {(in - k) / stride + 1, 0};
  const Index out = (in + stride - 1) / stride;
  const Index total = std::max<Index>((out - 1) * stride + k - in, 0);
  return {out, total / 2};
}

inline ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, Index stride,
                                  Padding padding) {
  if (input.size() != 4) throw DimensionError("conv2d: input must be [B,C,H,W], got " + to_string(input));
  if (kernel.size() != 4) throw DimensionError("conv2d: kernel must be [K,C,kh,kw], got " + to_string(kernel));
  if (stride <= 0) throw ContractError("conv2d: stride must be positive");
  if (kernel[1] != input[1]) {
    throw DimensionError("conv2d: channel axis (1) mismatch: input has " + std::to_string(input[1]) +
                         ", kernel expects " + std::to_string(kernel[1]));
  }
  ConvGeometry g{input[0], input[1], input[2], input[3], kernel[0], kernel[2], kernel[3], stride,
                 0, 0, 0, 0};
  auto [oh, pt] = output_extent(g.height, g.kh, stride, padding);
  auto [ow, pl] = output_extent(g.width, g.kw, stride, padding);
  const Index padded_h = padding == Padding::same ? std::max(g.height, (oh - 1) * stride + g.kh) : g.height;
  const Index padded_w = padding == Padding::same ? std::max(g.width, (ow - 1) * stride + g.kw) : g.width;
  if (g.kh > padded_h) {
    throw DimensionError("conv2d: kernel height (axis 2) " + std::to_string(g.kh) +
                         " exceeds padded input height " + std::to_string(padded_h));
  }
  if (g.kw > padded_w) {
    throw DimensionError("conv2d: kernel width (axis 3) " + std::to_string(g.kw) +
                         " exceeds padded input width " + std::to_string(padded_w));
  }
  g.out_h = oh;
  g.out_w = ow;
  g.pad_top = pt;
  g.pad_left = pl;
  return g;
}

namespace detail {

// cols(row=(c*kh+i)*kw+j, col=b_local*P + oy*out_w + ox)
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Index b0, Index b1, Matrix<Scalar>& cols) {
  const Index P = g.positions();
  cols.resize(g.patch(), (b1 - b0) * P);
  for (Index c = 0; c < g.channels; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        Scalar* dst = cols.row((c * g.kh + i) * g.kw + j).data();
        for (Index b = b0; b < b1; ++b) {
          const Scalar* plane = x + (b * g.channels + c) * g.height * g.width;
          Scalar* out = dst + (b - b0) * P;
          for (Index oy = 0; oy < g.out_h; ++oy) {
            const Index iy = oy * g.stride - g.pad_top + i;
            Scalar* row_out = out + oy * g.out_w;
            if (iy < 0 || iy >= g.height) {
              std::fill(row_out, row_out + g.out_w, Scalar(0));
              continue;
            }
            const Scalar* row_in = plane + iy * g.width;
            for (Index ox = 0; ox < g.out_w; ++ox) {
              const Index ix = ox * g.stride - g.pad_left + j;
              row_out[ox] = (ix >= 0 && ix < g.width) ? row_in[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Matrix<Scalar>& cols, const ConvGeometry& g, Index b0, Index b1, Scalar* dx) {
  const Index P = g.positions();
  for (Index c = 0; c < g.channels; ++c) {
    for (Index i = 0; i < g.kh; ++i) {
      for (Index j = 0; j < g.kw; ++j) {
        const Scalar* src = cols.row((c * g.kh + i) * g.kw + j).data();
        for (Index b = b0; b < b1; ++b) {
          Scalar* plane = dx + (b * g.channels + c) * g.height * g.width;
          const Scalar* in = src + (b - b0) * P;
          for (Index oy = 0; oy < g.out_h; ++oy) {
            const Index iy = oy * g.stride - g.pad_top + i;
            if (iy < 0 || iy >= g.height) continue;
            Scalar* row_out = plane + iy * g.width;
            const Scalar* row_in = in + oy * g.out_w;
            for (Index ox = 0; ox < g.out_w; ++ox) {
              const Index ix = ox * g.stride - g.pad_left + j;
              if (ix >= 0 && ix < g.width) row_out[ix] += row_in[ox];
            }
          }
        }
      }
    }
  }
}

inline Index conv_chunk(const ConvGeometry& g) {
  constexpr Index kTargetColumns = 8192;
  return std::max<Index>(1, kTargetColumns / std::max<Index>(1, g.positions()));
}

}  // namespace detail

/// Cross-correlation of input[B,C,H,W] with kernel[K,C,kh,kw].
template <typename Scalar>
Tensor<Scalar> conv2d(Tape<Scalar>& tape, const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      Index stride = 1, Padding padding = Padding::same) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride, padding);
  const Index P = g.positions();
  const Index chunk = detail::conv_chunk(g);
  auto kmat = kernel.matrix(g.kernels, g.patch());
  Vector<Scalar> out(g.batch * g.kernels * P);
  Matrix<Scalar> cols;
  Matrix<Scalar> y;
  for (Index b0 = 0; b0 < g.batch; b0 += chunk) {
    const Index b1 = std::min(g.batch, b0 + chunk);
    detail::im2col(input.value().data(), g, b0, b1, cols);
    y.noalias() = kmat * cols;
    for (Index b = b0; b < b1; ++b) {
      for (Index k = 0; k < g.kernels; ++k) {
        std::copy_n(y.row(k).data() + (b - b0) * P, P, out.data() + (b * g.kernels + k) * P);
      }
    }
  }
  return tape.record(
      "conv2d", Shape{g.batch, g.kernels, g.out_h, g.out_w}, std::move(out), {input, kernel},
      [input, kernel, g, chunk](const Vector<Scalar>& grad) {
        const Index P = g.positions();
        auto kmat = kernel.matrix(g.kernels, g.patch());
        Matrix<Scalar> dk = Matrix<Scalar>::Zero(g.kernels, g.patch());
        Vector<Scalar> dx;
        if (input.requires_grad()) dx = Vector<Scalar>::Zero(input.numel());
        Matrix<Scalar> cols, dy, dcols;
        for (Index b0 = 0; b0 < g.batch; b0 += chunk) {
          const Index b1 = std::min(g.batch, b0 + chunk);
          dy.resize(g.kernels, (b1 - b0) * P);
          for (Index b = b0; b < b1; ++b) {
            for (Index k = 0; k < g.kernels; ++k) {
              std::copy_n(grad.data() + (b * g.kernels + k) * P, P, dy.row(k).data() + (b - b0) * P);
            }
          }
          if (kernel.requires_grad()) {
            detail::im2col(input.value().data(), g, b0, b1, cols);
            dk.noalias() += dy * cols.transpose();
          }
          if (input.requires_grad()) {
            dcols.noalias() = kmat.transpose() * dy;
            detail::col2im(dcols, g, b0, b1, dx.data());
          }
        }
        if (kernel.requires_grad()) accumulate(kernel.node(), Eigen::Map<const Vector<Scalar>>(dk.data(), dk.size()));
        if (input.requires_grad()) accumulate(input.node(), dx);
      });
}

/// Max pooling with same padding (padded cells never win).
template <typename Scalar>
Tensor<Scalar> max_pool2d(Tape<Scalar>& tape, const Tensor<Scalar>& input, Index size, Index stride) {
  if (input.rank() != 4) throw DimensionError("max_pool2d: input must be [B,C,H,W]");
  const Index B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  auto [oh, pt] = output_extent(H, size, stride, Padding::same);
  auto [ow, pl] = output_extent(W, size, stride, Padding::same);
  Vector<Scalar> out(B * C * oh * ow);
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const Scalar* x = input.value().data();
  for (Index plane = 0; plane < B * C; ++plane) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Index best_at = -1;
        for (Index i = 0; i < size; ++i) {
          const Index iy = oy * stride - pt + i;
          if (iy < 0 || iy >= H) continue;
          for (Index j = 0; j < size; ++j) {
            const Index ix = ox * stride - pl + j;
            if (ix < 0 || ix >= W) continue;
            const Index at = plane * H * W + iy * W + ix;
            if (x[at] > best) {
              best = x[at];
              best_at = at;
            }
          }
        }
        const Index o = (plane * oh + oy) * ow + ox;
        out[o] = best;
        argmax[static_cast<std::size_t>(o)] = best_at;
      }
    }
  }
  return tape.record("max_pool2d", Shape{B, C, oh, ow}, std::move(out), {input},
                     [input, argmax = std::move(argmax)](const Vector<Scalar>& g) {
                       Vector<Scalar> dx = Vector<Scalar>::Zero(input.numel());
                       for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += g[static_cast<Index>(o)];
                       accumulate(input.node(), dx);
                     });
}

/// [B,C,H,W] -> [B,C] spatial mean.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(Tape<Scalar>& tape, const Tensor<Scalar>& input) {
  if (input.rank() != 4) throw DimensionError("global_avg_pool: input must be [B,C,H,W]");
  const Index B = input.dim(0), C = input.dim(1), S = input.dim(2) * input.dim(3);
  auto x = input.matrix(B * C, S);
  Vector<Scalar> out = x.rowwise().sum() / static_cast<Scalar>(S);
  return tape.record("global_avg_pool", Shape{B, C}, std::move(out), {input},
                     [input, B, C, S](const Vector<Scalar>& g) {
                       Matrix<Scalar> dx = (g / static_cast<Scalar>(S)).replicate(1, S);
                       accumulate(input.node(), Eigen::Map<const Vector<Scalar>>(dx.data(), dx.size()));
                     });
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class BnMode { train, eval };
enum class BnScope { global, local };

/// Per-channel statistics of one shard. `var` is the biased (population) variance.
template <typename Scalar>
struct ShardMoments {
  Index count = 0;
  Vector<Scalar> mean;
  Vector<Scalar> var;
};

template <typename Scalar>
struct ChannelMoments {
  Vector<Scalar> mean;
  Vector<Scalar> var;
};

template <typename Scalar>
using MomentAggregator = std::function<ChannelMoments<Scalar>(std::span<const ShardMoments<Scalar>>)>;

/// Count-weighted mean and parallel-variance combination; equals the moments
/// of the concatenated shards.
template <typename Scalar>
ChannelMoments<Scalar> pooled_moments(std::span<const ShardMoments<Scalar>> shards) {
  if (shards.empty()) throw ContractError("pooled_moments: no shards");
  const Index channels = shards.front().mean.size();
  Index total = 0;
  Vector<Scalar> mean = Vector<Scalar>::Zero(channels);
  for (const auto& s : shards) {
    if (s.count < 1) throw ContractError("pooled_moments: shard count must be >= 1");
    if (s.mean.size() != channels || s.var.size() != channels) {
      throw DimensionError("pooled_moments: channel axis mismatch across shards");
    }
    total += s.count;
    mean += static_cast<Scalar>(s.count) * s.mean;
  }
  mean /= static_cast<Scalar>(total);
  Vector<Scalar> var = Vector<Scalar>::Zero(channels);
  for (const auto& s : shards) {
    var += static_cast<Scalar>(s.count) *
           (s.var + (s.mean - mean).cwiseAbs2());
  }
  var /= static_cast<Scalar>(total);
  return {std::move(mean), std::move(var)};
}

template <typename Scalar>
struct BatchNormBuffers {
  Vector<Scalar> running_mean;
  Vector<Scalar> running_var;
  bool accumulated = false;

  explicit BatchNormBuffers(Index channels = 0)
      : running_mean(Vector<Scalar>::Zero(channels)), running_var(Vector<Scalar>::Ones(channels)) {}
};

template <typename Scalar>
struct BatchNormOptions {
  BnMode mode = BnMode::train;
  Scalar eps = Scalar(1e-5);
  /// running <- momentum * running + (1 - momentum) * batch
  Scalar momentum = Scalar(0.9);
  /// Batch row -> shard id (0-based, dense). Empty means one shard.
  std::vector<int> shard_of_row;
  BnScope scope = BnScope::global;
  /// Combines per-shard moments under global scope; defaults to pooled_moments.
  MomentAggregator<Scalar> aggregate;
  /// Externally supplied moments, used as constants (no gradient through them).
  std::optional<ChannelMoments<Scalar>> moments;
  bool update_running = true;
};

/// gamma * (x - mean) / sqrt(var + eps) + beta over input[B,C,...], moments per
/// channel over batch and spatial axes.
template <typename Scalar>
Tensor<Scalar> batch_norm(Tape<Scalar>& tape, const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, BatchNormBuffers<Scalar>& buffers,
                          const BatchNormOptions<Scalar>& opt = {}) {
  if (input.rank() != 2 && input.rank() != 4) {
    throw DimensionError("batch_norm: input must be [B,C] or [B,C,H,W], got " + to_string(input.shape()));
  }
  const Index B = input.dim(0), C = input.dim(1), S = input.numel() / (B * C);
  if (gamma.numel() != C || beta.numel() != C) {
    throw DimensionError("batch_norm: gamma/beta must have " + std::to_string(C) + " entries (axis 1)");
  }
  if (buffers.running_mean.size() != C) {
    throw DimensionError("batch_norm: running statistics have wrong channel count");
  }
  const Scalar* x = input.value().data();
  auto slice = [&](Index b, Index c) { return x + (b * C + c) * S; };

  // Normalization groups: rows that share a mean/var.
  int num_shards = 1;
  std::vector<int> shard_of_row = opt.shard_of_row;
  if (shard_of_row.empty()) shard_of_row.assign(static_cast<std::size_t>(B), 0);
  if (static_cast<Index>(shard_of_row.size()) != B) {
    throw DimensionError("batch_norm: shard map length does not match batch axis 0");
  }
  for (int s : shard_of_row) {
    if (s < 0) throw ContractError("batch_norm: negative shard id");
    num_shards = std::max(num_shards, s + 1);
  }

  std::vector<int> group_of_row(static_cast<std::size_t>(B), 0);
  std::vector<ChannelMoments<Scalar>> group_moments;
  bool moments_are_constant = true;

  if (opt.mode == BnMode::eval) {
    if (!buffers.accumulated) throw StateError("batch_norm: eval mode before any running statistics were accumulated");
    group_moments.push_back({buffers.running_mean, buffers.running_var});
  } else if (opt.moments) {
    if (opt.moments->mean.size() != C || opt.moments->var.size() != C) {
      throw DimensionError("batch_norm: supplied moments must have " + std::to_string(C) + " channels");
    }
    if ((opt.moments->var.array() < Scalar(0)).any()) throw ContractError("batch_norm: supplied variance < 0");
    group_moments.push_back(*opt.moments);
    if (opt.update_running) {
      buffers.running_mean = opt.momentum * buffers.running_mean + (1 - opt.momentum) * opt.moments->mean;
      buffers.running_var = opt.momentum * buffers.running_var + (1 - opt.momentum) * opt.moments->var;
      buffers.accumulated = true;
    }
  } else {
    moments_are_constant = false;
    std::vector<ShardMoments<Scalar>> shards(static_cast<std::size_t>(num_shards));
    for (auto& s : shards) {
      s.mean = Vector<Scalar>::Zero(C);
      s.var = Vector<Scalar>::Zero(C);
    }
    for (Index b = 0; b < B; ++b) shards[static_cast<std::size_t>(shard_of_row[static_cast<std::size_t>(b)])].count += S;
    for (Index b = 0; b < B; ++b) {
      auto& s = shards[static_cast<std::size_t>(shard_of_row[static_cast<std::size_t>(b)])];
      for (Index c = 0; c < C; ++c) {
        const Scalar* p = slice(b, c);
        Scalar acc = 0;
        for (Index k = 0; k < S; ++k) acc += p[k];
        s.mean[c] += acc;
      }
    }
    for (auto& s : shards) {
      if (s.count == 0) throw ContractError("batch_norm: shard ids must be dense (empty shard)");
      s.mean /= static_cast<Scalar>(s.count);
    }
    for (Index b = 0; b < B; ++b) {
      auto& s = shards[static_cast<std::size_t>(shard_of_row[static_cast<std::size_t>(b)])];
      for (Index c = 0; c < C; ++c) {
        const Scalar* p = slice(b, c);
        const Scalar m = s.mean[c];
        Scalar acc = 0;
        for (Index k = 0; k < S; ++k) acc += (p[k] - m) * (p[k] - m);
        s.var[c] += acc;
      }
    }
    for (auto& s : shards) s.var /= static_cast<Scalar>(s.count);

    ChannelMoments<Scalar> combined = num_shards == 1
        ? ChannelMoments<Scalar>{shards[0].mean, shards[0].var}
        : (opt.aggregate ? opt.aggregate(shards) : pooled_moments<Scalar>(shards));
    if (opt.scope == BnScope::global || num_shards == 1) {
      group_moments.push_back(combined);
    } else {
      group_of_row = shard_of_row;
      for (const auto& s : shards) group_moments.push_back({s.mean, s.var});
    }
    if (opt.update_running) {
      buffers.running_mean = opt.momentum * buffers.running_mean + (1 - opt.momentum) * combined.mean;
      buffers.running_var = opt.momentum * buffers.running_var + (1 - opt.momentum) * combined.var;
      buffers.accumulated = true;
    }
  }

  std::vector<Vector<Scalar>> inv_std;
  for (const auto& m : group_moments) inv_std.push_back((m.var.array() + opt.eps).rsqrt().matrix());

  Vector<Scalar> xhat(input.numel());
  Vector<Scalar> out(input.numel());
  const Scalar* gm = gamma.value().data();
  const Scalar* bt = beta.value().data();
  for (Index b = 0; b < B; ++b) {
    const auto grp = static_cast<std::size_t>(group_of_row[static_cast<std::size_t>(b)]);
    for (Index c = 0; c < C; ++c) {
      const Scalar m = group_moments[grp].mean[c];
      const Scalar is = inv_std[grp][c];
      const Scalar* p = slice(b, c);
      Scalar* xh = xhat.data() + (b * C + c) * S;
      Scalar* o = out.data() + (b * C + c) * S;
      for (Index k = 0; k < S; ++k) {
        xh[k] = (p[k] - m) * is;
        o[k] = gm[c] * xh[k] + bt[c];
      }
    }
  }

  return tape.record(
      "batch_norm", input.shape(), std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std),
       group_of_row = std::move(group_of_row), moments_are_constant, B, C, S](const Vector<Scalar>& g) {
        const std::size_t groups = inv_std.size();
        Vector<Scalar> dgamma = Vector<Scalar>::Zero(C), dbeta = Vector<Scalar>::Zero(C);
        std::vector<Vector<Scalar>> sum_dxhat(groups, Vector<Scalar>::Zero(C));
        std::vector<Vector<Scalar>> sum_dxhat_xhat(groups, Vector<Scalar>::Zero(C));
        std::vector<Index> count(groups, 0);
        const Scalar* gm = gamma.value().data();
        for (Index b = 0; b < B; ++b) {
          const auto grp = static_cast<std::size_t>(group_of_row[static_cast<std::size_t>(b)]);
          count[grp] += S;
          for (Index c = 0; c < C; ++c) {
            const Scalar* gp = g.data() + (b * C + c) * S;
            const Scalar* xh = xhat.data() + (b * C + c) * S;
            Scalar sg = 0, sgx = 0;
            for (Index k = 0; k < S; ++k) {
              sg += gp[k];
              sgx += gp[k] * xh[k];
            }
            dbeta[c] += sg;
            dgamma[c] += sgx;
            sum_dxhat[grp][c] += sg * gm[c];
            sum_dxhat_xhat[grp][c] += sgx * gm[c];
          }
        }
        if (gamma.requires_grad()) accumulate(gamma.node(), dgamma);
        if (beta.requires_grad()) accumulate(beta.node(), dbeta);
        if (!input.requires_grad()) return;
        Vector<Scalar> dx(input.numel());
        for (Index b = 0; b < B; ++b) {
          const auto grp = static_cast<std::size_t>(group_of_row[static_cast<std::size_t>(b)]);
          const Scalar M = static_cast<Scalar>(count[grp]);
          for (Index c = 0; c < C; ++c) {
            const Scalar is = inv_std[grp][c];
            const Scalar* gp = g.data() + (b * C + c) * S;
            const Scalar* xh = xhat.data() + (b * C + c) * S;
            Scalar* d = dx.data() + (b * C + c) * S;
            if (moments_are_constant) {
              for (Index k = 0; k < S; ++k) d[k] = gp[k] * gm[c] * is;
            } else {
              const Scalar mean_dxhat = sum_dxhat[grp][c] / M;
              const Scalar mean_dxhat_xhat = sum_dxhat_xhat[grp][c] / M;
              for (Index k = 0; k < S; ++k) {
                d[k] = is * (gp[k] * gm[c] - mean_dxhat - xh[k] * mean_dxhat_xhat);
              }
            }
          }
        }
        accumulate(input.node(), dx);
      });
}

}  // namespace simclr::tg
