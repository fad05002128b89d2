#include "simclr/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace simclr::data {

void LabeledImages::validate() const {
  if (static_cast<Index>(labels.size()) != images.count) {
    throw DimensionError("dataset: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(images.count) + " images");
  }
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ContractError("dataset: label " + std::to_string(l) + " outside [0, classes)");
  }
}

LabeledImages LabeledImages::subset(const std::vector<Index>& indices) const {
  LabeledImages out;
  out.classes = classes;
  out.images = images.select(indices);
  out.labels.reserve(indices.size());
  for (Index i : indices) {
    if (i < 0 || i >= images.count) throw ContractError("dataset subset: index out of range");
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<Index> class_counts(const LabeledImages& set) {
  std::vector<Index> counts(static_cast<std::size_t>(set.classes), 0);
  for (int l : set.labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

LabeledImages class_balanced_subset(const LabeledImages& set, double fraction, std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) throw ContractError("class_balanced_subset: fraction must lie in (0, 1]");
  set.validate();
  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(set.classes));
  for (Index i = 0; i < set.size(); ++i) by_class[static_cast<std::size_t>(set.labels[static_cast<std::size_t>(i)])].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<Index> keep;
  for (auto& members : by_class) {
    if (members.empty()) continue;
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = std::max<Index>(1, static_cast<Index>(std::floor(fraction * static_cast<double>(members.size()))));
    keep.insert(keep.end(), members.begin(), members.begin() + n);
  }
  std::sort(keep.begin(), keep.end());
  return set.subset(keep);
}

std::pair<LabeledImages, LabeledImages> split(const LabeledImages& set, Index count, std::uint64_t seed) {
  if (count < 0 || count > set.size()) throw ContractError("split: count outside [0, size]");
  std::vector<Index> order(static_cast<std::size_t>(set.size()));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Index> a(order.begin(), order.begin() + count), b(order.begin() + count, order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {set.subset(a), set.subset(b)};
}

namespace {

// Shape membership in unit coordinates centered on the shape, y pointing down.
bool inside(int kind, double x, double y) {
  const double r = std::sqrt(x * x + y * y);
  switch (kind) {
    case 0: return r < 1.0;                                                        // disk
    case 1: return std::max(std::abs(x), std::abs(y)) < 0.8;                       // square
    case 2: return y < 0.8 && y > -0.9 && std::abs(x) < 0.55 * (y + 0.9);          // triangle
    case 3: return (std::abs(x) < 0.3 && std::abs(y) < 1) || (std::abs(y) < 0.3 && std::abs(x) < 1);  // plus
    case 4: return r < 1.0 && r > 0.55;                                            // ring
    case 5: return std::abs(x) + std::abs(y) < 1.0;                                // diamond
    case 6: return r < 1.0 && (std::abs(x - y) < 0.4 || std::abs(x + y) < 0.4);    // x
    case 7: return std::abs(x) < 0.95 && (std::abs(y - 0.5) < 0.22 || std::abs(y + 0.5) < 0.22);  // two bars
    case 8: return std::abs(y) < 0.95 && (std::abs(x - 0.5) < 0.22 || std::abs(x + 0.5) < 0.22);  // two columns
    case 9: return r < 1.0 && y > 0.0;                                             // half disk
    default: return false;
  }
}

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

}  // namespace

LabeledImages synthetic_dataset(int classes, Index count, Index height, Index width, std::uint64_t seed) {
  if (classes < 2) throw ContractError("synthetic_dataset: classes must be >= 2");
  if (classes > kShapeKinds) {
    throw ContractError("synthetic_dataset: at most " + std::to_string(kShapeKinds) + " shape classes");
  }
  if (count < 0 || height < 4 || width < 4) throw ContractError("synthetic_dataset: need count >= 0 and size >= 4x4");
  LabeledImages out;
  out.classes = classes;
  out.images = ImageBatch(count, height, width);
  out.labels.resize(static_cast<std::size_t>(count));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.03);
  constexpr int kSuper = 2;  // supersampling per axis
  const double side = static_cast<double>(std::min(height, width));
  for (Index i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % classes);
    out.labels[static_cast<std::size_t>(i)] = label;
    const double radius = side * (0.25 + 0.2 * u(rng));
    const double cy = radius * 0.8 + u(rng) * std::max(0.0, static_cast<double>(height) - 1.6 * radius);
    const double cx = radius * 0.8 + u(rng) * std::max(0.0, static_cast<double>(width) - 1.6 * radius);
    const double fg_hue = u(rng);
    const auto fg = hsv_to_rgb(fg_hue, 0.5 + 0.5 * u(rng), 0.6 + 0.4 * u(rng));
    const auto bg = hsv_to_rgb(fg_hue + 0.25 + 0.5 * u(rng), 0.6 * u(rng), 0.1 + 0.4 * u(rng));
    augment::Image img(height, width);
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx) {
            const double py = (static_cast<double>(y) + (sy + 0.5) / kSuper - cy) / radius;
            const double px = (static_cast<double>(x) + (sx + 0.5) / kSuper - cx) / radius;
            hits += inside(label, px, py) ? 1 : 0;
          }
        const float cover = static_cast<float>(hits) / (kSuper * kSuper);
        for (Index c = 0; c < augment::kChannels; ++c) {
          const auto ci = static_cast<std::size_t>(c);
          const double v = cover * fg[ci] + (1.0f - cover) * bg[ci] + noise(rng);
          img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    out.images.set(i, img);
  }
  return out;
}

LabeledImages load_cifar10_file(const std::filesystem::path& path, Index expected_records, std::optional<Index> limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cifar10: cannot open " + path.string());
  const auto size = static_cast<Index>(std::filesystem::file_size(path));
  const Index expected = expected_records * kCifarRecordBytes;
  if (size != expected) {
    throw FormatError("cifar10: " + path.string() + " has " + std::to_string(size) + " bytes, expected " +
                      std::to_string(expected) + " (" + std::to_string(expected_records) + " records of " +
                      std::to_string(kCifarRecordBytes) + ")");
  }
  const Index n = limit ? std::min(*limit, expected_records) : expected_records;
  LabeledImages out;
  out.classes = 10;
  out.images = ImageBatch(n, 32, 32);
  out.labels.resize(static_cast<std::size_t>(n));
  std::vector<unsigned char> record(static_cast<std::size_t>(kCifarRecordBytes));
  for (Index i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(record.data()), kCifarRecordBytes);
    if (!in) throw FormatError("cifar10: short read in " + path.string());
    if (record[0] > 9) {
      throw FormatError("cifar10: label byte " + std::to_string(record[0]) + " at record " + std::to_string(i));
    }
    out.labels[static_cast<std::size_t>(i)] = record[0];
    auto seg = out.images.values.segment(i * 3072, 3072);
    for (Index k = 0; k < 3072; ++k) seg[k] = static_cast<float>(record[static_cast<std::size_t>(k + 1)]) / 255.0f;
  }
  return out;
}

namespace {

LabeledImages concat(const std::vector<LabeledImages>& parts) {
  LabeledImages out;
  out.classes = 10;
  Index n = 0;
  for (const auto& p : parts) n += p.size();
  out.images = ImageBatch(n, 32, 32);
  Index at = 0;
  for (const auto& p : parts) {
    out.images.values.segment(at * 3072, p.size() * 3072) = p.images.values;
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    at += p.size();
  }
  return out;
}

}  // namespace

Cifar10 load_cifar10(const std::filesystem::path& dir, std::optional<Index> train_limit,
                     std::optional<Index> test_limit) {
  Cifar10 out;
  std::vector<LabeledImages> parts;
  Index remaining = train_limit.value_or(5 * kCifarRecordsPerFile);
  for (int b = 1; b <= 5 && remaining > 0; ++b) {
    parts.push_back(load_cifar10_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), kCifarRecordsPerFile,
                                      remaining));
    remaining -= parts.back().size();
  }
  out.train = concat(parts);
  out.test = load_cifar10_file(dir / "test_batch.bin", kCifarRecordsPerFile, test_limit);
  return out;
}

}  // namespace simclr::data
