#pragma once

#include "simclr/augment/image.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace simclr::data {

using augment::ImageBatch;

struct LabeledImages {
  ImageBatch images;
  std::vector<int> labels;
  int classes = 0;

  Index size() const { return images.count; }
  /// Items by index, in the given order.
  LabeledImages subset(const std::vector<Index>& indices) const;
  /// Throws DimensionError when labels and images disagree.
  void validate() const;
};

/// Per-class counts.
std::vector<Index> class_counts(const LabeledImages& set);

/// floor(fraction * per-class count) items of every class (at least one),
/// chosen with a seeded shuffle, in ascending index order.
LabeledImages class_balanced_subset(const LabeledImages& set, double fraction, std::uint64_t seed);

/// First `count` items of a seeded permutation, and the rest.
std::pair<LabeledImages, LabeledImages> split(const LabeledImages& set, Index count, std::uint64_t seed);

// Synthetic shapes -----------------------------------------------------------

inline constexpr int kShapeKinds = 10;

/// Colored geometric shapes, class = shape kind, random hue, position, scale
/// and background. Labels cycle through the classes so counts are balanced;
/// the result is fully determined by `seed`.
LabeledImages synthetic_dataset(int classes, Index count, Index height, Index width, std::uint64_t seed);

// CIFAR-10 -------------------------------------------------------------------

inline constexpr Index kCifarRecordBytes = 3073;
inline constexpr Index kCifarRecordsPerFile = 10000;

/// One binary batch file: records of 1 label byte + 3072 pixel bytes
/// (R, G, B planes of 32x32, row-major), pixels scaled by 1/255.
LabeledImages load_cifar10_file(const std::filesystem::path& path, Index expected_records = kCifarRecordsPerFile,
                                std::optional<Index> limit = std::nullopt);

struct Cifar10 {
  LabeledImages train;
  LabeledImages test;
};

/// data_batch_1..5.bin and test_batch.bin from `dir`. `train_limit` and
/// `test_limit` keep the first items only.
Cifar10 load_cifar10(const std::filesystem::path& dir, std::optional<Index> train_limit = std::nullopt,
                     std::optional<Index> test_limit = std::nullopt);

}  // namespace simclr::data
