#include "simclr/augment/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace simclr::augment {
namespace {

constexpr std::pair<TransformKind, const char*> kKindNames[] = {
    {TransformKind::crop_resize, "crop_resize"},     {TransformKind::hflip, "hflip"},
    {TransformKind::color_jitter, "color_jitter"},   {TransformKind::color_drop, "color_drop"},
    {TransformKind::gaussian_blur, "gaussian_blur"}, {TransformKind::rotate90, "rotate90"},
    {TransformKind::cutout, "cutout"},               {TransformKind::gaussian_noise, "gaussian_noise"},
    {TransformKind::sobel, "sobel"},
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

Image apply_one(const Image& img, const TransformOp& op, const AugmentationPolicy& policy, Rng& rng) {
  switch (op.kind) {
    case TransformKind::crop_resize:
      if (!bernoulli(rng, op.apply_probability)) return img;
      return random_resized_crop(img, img.height, img.width, rng, op.crop);
    case TransformKind::hflip:
      return bernoulli(rng, op.apply_probability) ? hflip(img) : img;
    case TransformKind::color_jitter:
      return color_jitter(img, policy.strength, rng, op.apply_probability, policy.shuffle_jitter);
    case TransformKind::color_drop:
      return color_drop(img, rng, op.apply_probability);
    case TransformKind::gaussian_blur:
      return gaussian_blur(img, rng, op.apply_probability, op.sigma_min, op.sigma_max);
    case TransformKind::rotate90:
      return bernoulli(rng, op.apply_probability) ? random_rotate90(img, rng) : img;
    case TransformKind::cutout: {
      if (!bernoulli(rng, op.apply_probability)) return img;
      const auto side = std::max<Index>(
          1, std::lround(op.cutout_fraction * static_cast<double>(std::min(img.height, img.width))));
      return cutout(img, side, policy.fill, rng);
    }
    case TransformKind::gaussian_noise:
      return bernoulli(rng, op.apply_probability) ? gaussian_noise(img, op.noise_sigma, rng) : img;
    case TransformKind::sobel:
      return bernoulli(rng, op.apply_probability) ? sobel(img) : img;
  }
  return img;
}

std::size_t shared_prefix(std::span<const TransformOp> ops) {
  return !ops.empty() && ops[0].kind == TransformKind::crop_resize ? 1 : 0;
}

}  // namespace

std::string to_string(TransformKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

std::optional<TransformKind> parse_transform_kind(const std::string& name) {
  for (const auto& [k, n] : kKindNames)
    if (name == n) return k;
  return std::nullopt;
}

void TransformOp::validate() const {
  const std::string k = to_string(kind);
  require(apply_probability >= 0 && apply_probability <= 1, k + ": apply_probability outside [0,1]");
  switch (kind) {
    case TransformKind::crop_resize:
      require(crop.area_min > 0 && crop.area_min <= crop.area_max && crop.area_max <= 1,
              k + ": area range must satisfy 0 < min <= max <= 1");
      require(crop.ratio_min > 0 && crop.ratio_min <= crop.ratio_max, k + ": aspect range is empty");
      require(crop.attempts >= 1, k + ": attempts must be >= 1");
      require(crop.flip_probability >= 0 && crop.flip_probability <= 1, k + ": flip probability outside [0,1]");
      break;
    case TransformKind::gaussian_blur:
      require(sigma_min > 0 && sigma_min <= sigma_max, k + ": sigma range is empty");
      break;
    case TransformKind::gaussian_noise:
      require(noise_sigma >= 0, k + ": sigma must be >= 0");
      break;
    case TransformKind::cutout:
      require(cutout_fraction > 0 && cutout_fraction <= 1, k + ": fraction outside (0,1]");
      break;
    default:
      break;
  }
}

void AugmentationPolicy::validate() const {
  require(strength >= 0, "policy: strength must be >= 0");
  for (const auto& op : ops) op.validate();
}

TransformOp make_op(TransformKind kind) {
  TransformOp op;
  op.kind = kind;
  switch (kind) {
    case TransformKind::color_jitter: op.apply_probability = 0.8; break;
    case TransformKind::color_drop: op.apply_probability = 0.2; break;
    case TransformKind::gaussian_blur: op.apply_probability = 0.5; break;
    case TransformKind::hflip: op.apply_probability = 0.5; break;
    default: op.apply_probability = 1.0; break;
  }
  return op;
}

AugmentationPolicy default_policy(double strength, std::uint64_t seed) {
  AugmentationPolicy p;
  p.strength = strength;
  p.seed = seed;
  p.ops = {make_op(TransformKind::crop_resize), make_op(TransformKind::color_jitter),
           make_op(TransformKind::color_drop), make_op(TransformKind::gaussian_blur)};
  return p;
}

AugmentationPolicy crop_color_policy(std::optional<double> strength, std::uint64_t seed) {
  AugmentationPolicy p;
  p.seed = seed;
  p.ops = {make_op(TransformKind::crop_resize)};
  if (strength) {
    p.strength = *strength;
    p.ops.push_back(make_op(TransformKind::color_jitter));
    p.ops.push_back(make_op(TransformKind::color_drop));
  }
  return p;
}

Image apply_ops(const Image& img, std::span<const TransformOp> ops, const AugmentationPolicy& policy, Rng& rng) {
  Image out = img;
  for (const auto& op : ops) out = apply_one(out, op, policy, rng);
  return out;
}

std::pair<ImageBatch, ImageBatch> make_view_pair(const ImageBatch& batch, std::span<const std::int64_t> item_ids,
                                                 const AugmentationPolicy& policy, std::uint64_t epoch) {
  if (static_cast<Index>(item_ids.size()) != batch.count) {
    throw DimensionError("make_view_pair: item id count does not match batch count");
  }
  policy.validate();
  ImageBatch first(batch.count, batch.height, batch.width), second(batch.count, batch.height, batch.width);
  const std::span<const TransformOp> ops(policy.ops);
  const std::size_t shared = policy.mode == PolicyMode::asymmetric ? shared_prefix(ops) : ops.size();
  for (Index i = 0; i < batch.count; ++i) {
    const auto id = static_cast<std::uint64_t>(item_ids[static_cast<std::size_t>(i)]);
    const Image src = batch.get(i);
    Rng rng_a = make_stream(policy.seed, epoch, id, 0);
    Rng rng_b = make_stream(policy.seed, epoch, id, 1);
    if (policy.mode == PolicyMode::symmetric) {
      first.set(i, apply_ops(src, ops, policy, rng_a));
      second.set(i, apply_ops(src, ops, policy, rng_b));
    } else {
      const Image cropped_a = apply_ops(src, ops.first(shared), policy, rng_a);
      first.set(i, apply_ops(cropped_a, ops.subspan(shared), policy, rng_a));
      second.set(i, apply_ops(src, ops.first(shared), policy, rng_b));
    }
  }
  return {std::move(first), std::move(second)};
}

std::pair<ImageBatch, ImageBatch> make_view_pair(const ImageBatch& batch, const AugmentationPolicy& policy,
                                                 std::uint64_t epoch) {
  std::vector<std::int64_t> ids(static_cast<std::size_t>(batch.count));
  std::iota(ids.begin(), ids.end(), 0);
  return make_view_pair(batch, ids, policy, epoch);
}

ImageBatch make_single_view(const ImageBatch& batch, std::span<const std::int64_t> item_ids,
                            const AugmentationPolicy& policy, std::uint64_t epoch) {
  if (static_cast<Index>(item_ids.size()) != batch.count) {
    throw DimensionError("make_single_view: item id count does not match batch count");
  }
  policy.validate();
  ImageBatch out(batch.count, batch.height, batch.width);
  for (Index i = 0; i < batch.count; ++i) {
    Rng rng = make_stream(policy.seed, epoch, static_cast<std::uint64_t>(item_ids[static_cast<std::size_t>(i)]), 0);
    out.set(i, apply_ops(batch.get(i), policy.ops, policy, rng));
  }
  return out;
}

}  // namespace simclr::augment
