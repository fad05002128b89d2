#pragma once

#include "simclr/augment/ops.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace simclr::augment {

enum class TransformKind {
  crop_resize,
  hflip,
  color_jitter,
  color_drop,
  gaussian_blur,
  rotate90,
  cutout,
  gaussian_noise,
  sobel,
};

std::string to_string(TransformKind kind);
std::optional<TransformKind> parse_transform_kind(const std::string& name);

struct TransformOp {
  TransformKind kind = TransformKind::crop_resize;
  double apply_probability = 1.0;
  CropOptions crop;                  // crop_resize (flip included)
  double sigma_min = 0.1;            // gaussian_blur
  double sigma_max = 2.0;
  double noise_sigma = 0.1;          // gaussian_noise
  double cutout_fraction = 0.5;      // cutout side / min(H, W)

  /// Throws ContractError when a range is empty or out of bounds.
  void validate() const;
};

enum class PolicyMode { symmetric, asymmetric };

/// The distribution of augmentations. `strength` scales color jitter.
struct AugmentationPolicy {
  std::vector<TransformOp> ops;
  double strength = 1.0;
  std::uint64_t seed = 0;
  PolicyMode mode = PolicyMode::symmetric;
  bool shuffle_jitter = false;
  std::array<float, 3> fill{0.5f, 0.5f, 0.5f};  // cutout fill, set to the dataset mean

  void validate() const;
};

TransformOp make_op(TransformKind kind);

/// crop(+flip) -> color jitter (p 0.8) -> color drop (p 0.2) -> blur (p 0.5).
AugmentationPolicy default_policy(double strength = 1.0, std::uint64_t seed = 0);
/// crop(+flip) followed by the color pair only, or crop only when strength is absent.
AugmentationPolicy crop_color_policy(std::optional<double> strength, std::uint64_t seed = 0);

/// Applies `ops` in order, output size equal to the input.
Image apply_ops(const Image& img, std::span<const TransformOp> ops, const AugmentationPolicy& policy, Rng& rng);

/// Two views per item as (branch one, branch two). Item ids select the RNG
/// streams, so results do not depend on batch order or position. In
/// asymmetric mode a leading crop_resize runs on both branches and the
/// remaining ops only on branch one.
std::pair<ImageBatch, ImageBatch> make_view_pair(const ImageBatch& batch, std::span<const std::int64_t> item_ids,
                                                 const AugmentationPolicy& policy, std::uint64_t epoch);
std::pair<ImageBatch, ImageBatch> make_view_pair(const ImageBatch& batch, const AugmentationPolicy& policy,
                                                 std::uint64_t epoch);

/// One augmented view per item (supervised mode), branch id 0.
ImageBatch make_single_view(const ImageBatch& batch, std::span<const std::int64_t> item_ids,
                            const AugmentationPolicy& policy, std::uint64_t epoch);

}  // namespace simclr::augment
