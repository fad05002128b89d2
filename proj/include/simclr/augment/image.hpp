#pragma once

#include "simclr/tensorgrad/tensor.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>

namespace simclr::augment {

inline constexpr Index kChannels = 3;

/// One RGB image, channel-planar (C, H, W), values in [0, 1].
struct Image {
  Index height = 0;
  Index width = 0;
  Eigen::ArrayXf data;

  Image() = default;
  Image(Index h, Index w, float fill = 0.0f)
      : height(h), width(w), data(Eigen::ArrayXf::Constant(kChannels * h * w, fill)) {}

  Index plane() const { return height * width; }
  float& at(Index c, Index y, Index x) { return data[(c * height + y) * width + x]; }
  float at(Index c, Index y, Index x) const { return data[(c * height + y) * width + x]; }
  bool empty() const { return height == 0 || width == 0; }

  friend bool operator==(const Image& a, const Image& b) {
    return a.height == b.height && a.width == b.width && (a.data == b.data).all();
  }
};

/// Uniformly sized images stored back to back.
struct ImageBatch {
  Index count = 0;
  Index height = 0;
  Index width = 0;
  Eigen::ArrayXf values;

  ImageBatch() = default;
  ImageBatch(Index n, Index h, Index w)
      : count(n), height(h), width(w), values(Eigen::ArrayXf::Zero(n * kChannels * h * w)) {}

  Index image_size() const { return kChannels * height * width; }

  Image get(Index i) const {
    Image img(height, width);
    img.data = values.segment(i * image_size(), image_size());
    return img;
  }

  void set(Index i, const Image& img) {
    if (img.height != height || img.width != width) {
      throw DimensionError("ImageBatch::set: image is " + std::to_string(img.height) + "x" +
                           std::to_string(img.width) + ", batch holds " + std::to_string(height) + "x" +
                           std::to_string(width));
    }
    values.segment(i * image_size(), image_size()) = img.data;
  }

  /// Rows picked by index, in the given order.
  template <typename Indices>
  ImageBatch select(const Indices& idx) const {
    ImageBatch out(static_cast<Index>(idx.size()), height, width);
    Index k = 0;
    for (auto i : idx) out.values.segment((k++) * image_size(), image_size()) =
        values.segment(static_cast<Index>(i) * image_size(), image_size());
    return out;
  }
};

/// Per-channel mean over all pixels of all images.
inline std::array<float, 3> channel_means(const ImageBatch& batch) {
  std::array<double, 3> acc{0, 0, 0};
  const Index plane = batch.height * batch.width;
  for (Index i = 0; i < batch.count; ++i)
    for (Index c = 0; c < kChannels; ++c)
      acc[static_cast<std::size_t>(c)] += batch.values.segment((i * kChannels + c) * plane, plane).cast<double>().sum();
  const double n = static_cast<double>(std::max<Index>(1, batch.count * plane));
  return {static_cast<float>(acc[0] / n), static_cast<float>(acc[1] / n), static_cast<float>(acc[2] / n)};
}

using Rng = std::mt19937_64;

/// Independent stream for (seed, epoch, item, branch). Streams never overlap in
/// practice and depend only on these four values.
inline Rng make_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t item, std::uint64_t branch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                    static_cast<std::uint32_t>(item), static_cast<std::uint32_t>(item >> 32),
                    static_cast<std::uint32_t>(branch), 0x5eedu};
  return Rng(seq);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline bool bernoulli(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform(rng, 0.0, 1.0) < p;
}

}  // namespace simclr::augment
