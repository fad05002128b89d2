#pragma once

#include "simclr/augment/image.hpp"
#include "simclr/tensorgrad/ops.hpp"
#include "simclr/tensorgrad/parameter.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace simclr::model {

using tg::ParameterList;
using tg::ParamKind;
using tg::Tape;
using tg::Tensor;
using tg::Vector;

enum class Stem { cifar, imagenet };
enum class HeadKind { none, linear, mlp };

std::string to_string(Stem stem);
std::string to_string(HeadKind kind);
Stem parse_stem(const std::string& name);
HeadKind parse_head_kind(const std::string& name);

/// Residual encoder. cifar stem: 3x3 stride-1 conv, no max pool. imagenet
/// stem: 7x7 stride-2 conv then 3x3 stride-2 max pool. Stage i has blocks[i]
/// basic blocks of width widths[i] * width_multiplier; stages after the first
/// downsample by 2.
struct EncoderConfig {
  Stem stem = Stem::cifar;
  std::vector<Index> widths{16, 32, 64};
  std::vector<Index> blocks{1, 1, 1};
  double width_multiplier = 1.0;
  Index in_channels = 3;

  std::vector<Index> scaled_widths() const;
  Index representation_dim() const { return scaled_widths().back(); }
  void validate() const;
};

struct HeadConfig {
  HeadKind kind = HeadKind::mlp;
  Index hidden_dim = 0;  // 0: same as the input dim d
  Index output_dim = 128;
};

/// How batch norm sees the batch during one forward pass.
template <typename Scalar>
struct ForwardContext {
  tg::BnMode mode = tg::BnMode::train;
  tg::BnScope scope = tg::BnScope::global;
  std::vector<int> shard_of_row;
  tg::MomentAggregator<Scalar> aggregate;
  bool update_running = true;
  Scalar bn_momentum = Scalar(0.9);

  tg::BatchNormOptions<Scalar> bn_options() const {
    tg::BatchNormOptions<Scalar> o;
    o.mode = mode;
    o.scope = scope;
    o.shard_of_row = shard_of_row;
    o.aggregate = aggregate;
    o.update_running = update_running;
    o.momentum = bn_momentum;
    return o;
  }
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> he_normal(tg::Shape shape, Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Vector<Scalar> v(tg::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
  return Tensor<Scalar>(std::move(shape), std::move(v), true);
}

}  // namespace detail

template <typename Scalar>
class Encoder {
 public:
  Encoder(EncoderConfig config, std::mt19937_64& rng) : config_(std::move(config)) {
    config_.validate();
    const auto widths = config_.scaled_widths();
    Index channels = config_.in_channels;
    if (config_.stem == Stem::cifar) {
      stem_ = add_conv_bn("stem", channels, widths[0], 3, 1, rng);
    } else {
      stem_ = add_conv_bn("stem", channels, widths[0], 7, 2, rng);
    }
    channels = widths[0];
    for (std::size_t s = 0; s < widths.size(); ++s) {
      for (Index b = 0; b < config_.blocks[s]; ++b) {
        const Index stride = (s > 0 && b == 0) ? 2 : 1;
        const std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        Block blk;
        blk.a = add_conv_bn(name + ".conv1", channels, widths[s], 3, stride, rng);
        blk.b = add_conv_bn(name + ".conv2", widths[s], widths[s], 3, 1, rng);
        if (stride != 1 || channels != widths[s]) {
          blk.shortcut = add_conv_bn(name + ".shortcut", channels, widths[s], 1, stride, rng);
        }
        blocks_.push_back(blk);
        channels = widths[s];
      }
    }
  }

  const EncoderConfig& config() const { return config_; }
  Index representation_dim() const { return config_.representation_dim(); }
  ParameterList<Scalar>& parameters() { return params_; }
  const ParameterList<Scalar>& parameters() const { return params_; }
  std::vector<tg::BatchNormBuffers<Scalar>>& bn_buffers() { return bn_; }
  const std::vector<tg::BatchNormBuffers<Scalar>>& bn_buffers() const { return bn_; }

  /// x[B, C, H, W] -> h[B, d] after global average pooling.
  Tensor<Scalar> forward(Tape<Scalar>& tape, const Tensor<Scalar>& x, const ForwardContext<Scalar>& ctx) {
    if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
      throw DimensionError("encoder: expected input [B," + std::to_string(config_.in_channels) + ",H,W], got " +
                           tg::to_string(x.shape()));
    }
    const auto bn_opt = ctx.bn_options();
    Tensor<Scalar> y = tg::relu(tape, apply(tape, stem_, x, bn_opt));
    if (config_.stem == Stem::imagenet) y = tg::max_pool2d(tape, y, 3, 2);
    for (const auto& blk : blocks_) {
      Tensor<Scalar> r = tg::relu(tape, apply(tape, blk.a, y, bn_opt));
      r = apply(tape, blk.b, r, bn_opt);
      Tensor<Scalar> skip = blk.shortcut ? apply(tape, *blk.shortcut, y, bn_opt) : y;
      y = tg::relu(tape, tg::add(tape, r, skip));
    }
    return tg::global_avg_pool(tape, y);
  }

 private:
  struct ConvBn {
    std::size_t conv = 0, gamma = 0, beta = 0, bn = 0;
    Index stride = 1;
  };
  struct Block {
    ConvBn a, b;
    std::optional<ConvBn> shortcut;
  };

  ConvBn add_conv_bn(const std::string& name, Index in, Index out, Index k, Index stride, std::mt19937_64& rng) {
    ConvBn c;
    c.stride = stride;
    c.conv = params_.size();
    params_.push_back({name + ".weight", detail::he_normal<Scalar>({out, in, k, k}, in * k * k, rng), ParamKind::weight});
    c.gamma = params_.size();
    params_.push_back({name + ".bn.gamma", Tensor<Scalar>::constant({out}, Scalar(1), true), ParamKind::bn});
    c.beta = params_.size();
    params_.push_back({name + ".bn.beta", Tensor<Scalar>::constant({out}, Scalar(0), true), ParamKind::bn});
    c.bn = bn_.size();
    bn_.emplace_back(out);
    return c;
  }

  Tensor<Scalar> apply(Tape<Scalar>& tape, const ConvBn& c, const Tensor<Scalar>& x,
                       const tg::BatchNormOptions<Scalar>& opt) {
    Tensor<Scalar> y = tg::conv2d(tape, x, params_[c.conv].tensor, c.stride, tg::Padding::same);
    return tg::batch_norm(tape, y, params_[c.gamma].tensor, params_[c.beta].tensor, bn_[c.bn], opt);
  }

  EncoderConfig config_;
  ParameterList<Scalar> params_;
  std::vector<tg::BatchNormBuffers<Scalar>> bn_;
  ConvBn stem_;
  std::vector<Block> blocks_;
};

/// none: z = h. linear: z = W h. mlp: z = W2 relu(W1 h). No biases, no BN.
template <typename Scalar>
class ProjectionHead {
 public:
  ProjectionHead(HeadConfig config, Index input_dim, std::mt19937_64& rng) : config_(config), input_dim_(input_dim) {
    if (input_dim < 1) throw ContractError("projection head: input dim must be >= 1");
    if (config_.kind != HeadKind::none && config_.output_dim < 1) {
      throw ContractError("projection head: output dim must be >= 1");
    }
    if (config_.hidden_dim == 0) config_.hidden_dim = input_dim;
    if (config_.hidden_dim < 0) throw ContractError("projection head: hidden dim must be >= 0");
    switch (config_.kind) {
      case HeadKind::none:
        config_.output_dim = input_dim;
        break;
      case HeadKind::linear:
        params_.push_back({"head.fc.weight", detail::he_normal<Scalar>({config_.output_dim, input_dim}, input_dim, rng),
                           ParamKind::weight});
        break;
      case HeadKind::mlp:
        params_.push_back({"head.fc1.weight",
                           detail::he_normal<Scalar>({config_.hidden_dim, input_dim}, input_dim, rng),
                           ParamKind::weight});
        params_.push_back({"head.fc2.weight",
                           detail::he_normal<Scalar>({config_.output_dim, config_.hidden_dim}, config_.hidden_dim, rng),
                           ParamKind::weight});
        break;
    }
  }

  const HeadConfig& config() const { return config_; }
  Index input_dim() const { return input_dim_; }
  Index output_dim() const { return config_.output_dim; }
  ParameterList<Scalar>& parameters() { return params_; }
  const ParameterList<Scalar>& parameters() const { return params_; }

  Tensor<Scalar> forward(Tape<Scalar>& tape, const Tensor<Scalar>& h) {
    if (h.rank() != 2 || h.dim(1) != input_dim_) {
      throw DimensionError("projection head: expected h[B," + std::to_string(input_dim_) + "], got " +
                           tg::to_string(h.shape()));
    }
    switch (config_.kind) {
      case HeadKind::none: return h;
      case HeadKind::linear: return tg::dense(tape, h, params_[0].tensor);
      case HeadKind::mlp: return tg::dense(tape, tg::relu(tape, tg::dense(tape, h, params_[0].tensor)), params_[1].tensor);
    }
    return h;
  }

 private:
  HeadConfig config_;
  Index input_dim_;
  ParameterList<Scalar> params_;
};

/// Encoder f and projection head g sharing one parameter list view.
template <typename Scalar>
class SimClrModel {
 public:
  SimClrModel(const EncoderConfig& encoder, const HeadConfig& head, std::uint64_t seed)
      : rng_(seed), encoder_(encoder, rng_), head_(head, encoder_.representation_dim(), rng_) {}
  // Copies would alias parameter storage.
  SimClrModel(const SimClrModel&) = delete;
  SimClrModel& operator=(const SimClrModel&) = delete;
  SimClrModel(SimClrModel&&) = default;
  SimClrModel& operator=(SimClrModel&&) = default;

  Encoder<Scalar>& encoder() { return encoder_; }
  const Encoder<Scalar>& encoder() const { return encoder_; }
  ProjectionHead<Scalar>& head() { return head_; }
  const ProjectionHead<Scalar>& head() const { return head_; }

  /// Encoder parameters followed by head parameters. The tensors are shared,
  /// so updates through the list reach the model.
  ParameterList<Scalar> parameters() const {
    ParameterList<Scalar> all = encoder_.parameters();
    for (const auto& p : head_.parameters()) all.push_back(p);
    return all;
  }

 private:
  std::mt19937_64 rng_;
  Encoder<Scalar> encoder_;
  ProjectionHead<Scalar> head_;
};

/// Batch as a [B, 3, H, W] tensor.
template <typename Scalar>
Tensor<Scalar> to_tensor(const augment::ImageBatch& batch) {
  return Tensor<Scalar>({batch.count, augment::kChannels, batch.height, batch.width},
                        batch.values.template cast<Scalar>().matrix(), false);
}

/// Rows 2k and 2k+1 hold item k from the first and second view.
template <typename Scalar>
Tensor<Scalar> interleave_views(const augment::ImageBatch& first, const augment::ImageBatch& second) {
  if (first.count != second.count) {
    throw ContractError("encode_pair: view counts differ (" + std::to_string(first.count) + " vs " +
                        std::to_string(second.count) + ")");
  }
  if (first.height != second.height || first.width != second.width) {
    throw DimensionError("encode_pair: view image sizes differ");
  }
  const Index n = first.count, sz = first.image_size();
  Vector<Scalar> v(2 * n * sz);
  for (Index k = 0; k < n; ++k) {
    v.segment(2 * k * sz, sz) = first.values.segment(k * sz, sz).template cast<Scalar>().matrix();
    v.segment((2 * k + 1) * sz, sz) = second.values.segment(k * sz, sz).template cast<Scalar>().matrix();
  }
  return Tensor<Scalar>({2 * n, augment::kChannels, first.height, first.width}, std::move(v), false);
}

template <typename Scalar>
struct PairOutput {
  Tensor<Scalar> h;  // [2N, d]
  Tensor<Scalar> z;  // [2N, out]
};

/// Shared encoder and head over both views, rows interleaved per item.
template <typename Scalar>
PairOutput<Scalar> encode_pair(Tape<Scalar>& tape, SimClrModel<Scalar>& model, const augment::ImageBatch& first,
                               const augment::ImageBatch& second, const ForwardContext<Scalar>& ctx) {
  const Tensor<Scalar> x = interleave_views<Scalar>(first, second);
  Tensor<Scalar> h = model.encoder().forward(tape, x, ctx);
  Tensor<Scalar> z = model.head().forward(tape, h);
  return {h, z};
}

}  // namespace simclr::model
