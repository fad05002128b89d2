#include <doctest.h>

#include "simclr/data/dataset.hpp"
#include "simclr/util/digest.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace simclr;
using namespace simclr::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("simclr_test_" + name + "_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

// Record i: label i % 10, pixel k = (31 i + 7 k) mod 256.
void write_fixture(const fs::path& path, Index records) {
  std::ofstream out(path, std::ios::binary);
  std::vector<unsigned char> rec(static_cast<std::size_t>(kCifarRecordBytes));
  for (Index i = 0; i < records; ++i) {
    rec[0] = static_cast<unsigned char>(i % 10);
    for (Index k = 0; k < 3072; ++k) rec[static_cast<std::size_t>(k + 1)] = static_cast<unsigned char>((31 * i + 7 * k) % 256);
    out.write(reinterpret_cast<const char*>(rec.data()), kCifarRecordBytes);
  }
}

}  // namespace

TEST_CASE("synthetic dataset is balanced and deterministic") {
  const auto a = synthetic_dataset(5, 100, 16, 16, 42);
  const auto b = synthetic_dataset(5, 100, 16, 16, 42);
  const auto c = synthetic_dataset(5, 100, 16, 16, 43);
  a.validate();
  for (Index n : class_counts(a)) CHECK(n == 20);
  CHECK((a.images.values == b.images.values).all());
  CHECK(a.labels == b.labels);
  CHECK(!(a.images.values == c.images.values).all());
  CHECK(a.images.values.minCoeff() >= 0.0f);
  CHECK(a.images.values.maxCoeff() <= 1.0f);
  CHECK_THROWS_AS(synthetic_dataset(1, 10, 16, 16, 0), ContractError);
  CHECK_THROWS_AS(synthetic_dataset(11, 10, 16, 16, 0), ContractError);
}

TEST_CASE("synthetic images show a shape on a contrasting background") {
  const auto set = synthetic_dataset(10, 10, 24, 24, 7);
  for (Index i = 0; i < set.size(); ++i) {
    const auto img = set.images.get(i);
    // Some pixels differ strongly from the image mean: the shape is visible.
    const float mean = img.data.mean();
    CHECK((img.data - mean).abs().maxCoeff() > 0.15f);
  }
}

TEST_CASE("class-balanced subsets and splits") {
  const auto set = synthetic_dataset(4, 40, 8, 8, 1);
  const auto sub = class_balanced_subset(set, 0.1, 3);
  for (Index n : class_counts(sub)) CHECK(n == 1);
  const auto half = class_balanced_subset(set, 0.5, 3);
  for (Index n : class_counts(half)) CHECK(n == 5);
  CHECK_THROWS_AS(class_balanced_subset(set, 0.0, 1), ContractError);
  auto [x, y] = split(set, 30, 9);
  CHECK(x.size() == 30);
  CHECK(y.size() == 10);
}

TEST_CASE("cifar10 record decoding") {
  const fs::path dir = temp_dir("cifar_small");
  write_fixture(dir / "small.bin", 3);
  const auto set = load_cifar10_file(dir / "small.bin", 3);
  CHECK(set.size() == 3);
  CHECK(set.labels == std::vector<int>{0, 1, 2});
  const auto img = set.images.get(1);
  // Pixel bytes (31 + 7k) mod 256: R plane first, row-major.
  CHECK(img.at(0, 0, 0) == doctest::Approx(31.0 / 255.0));
  CHECK(img.at(0, 0, 1) == doctest::Approx(38.0 / 255.0));
  CHECK(img.at(1, 0, 0) == doctest::Approx(((31 + 7 * 1024) % 256) / 255.0));
  CHECK(img.at(2, 31, 31) == doctest::Approx(((31 + 7 * 3071) % 256) / 255.0));
  // Byte 0 and byte 255 map to the ends of [0, 1].
  const auto first = set.images.get(0);
  CHECK(first.at(0, 0, 0) == 0.0f);
  CHECK(set.images.values.maxCoeff() == 1.0f);

  const auto view = std::span<const float>(first.data.data(), static_cast<std::size_t>(first.data.size()));
  // Reference decode of record 0 (numpy float32, FNV-1a), pinned once.
  CHECK(hex64(fnv1a_values(view)) == "bd1422e6c4237205");
  fs::remove_all(dir);
}

TEST_CASE("cifar10 file size is checked") {
  const fs::path dir = temp_dir("cifar_bad");
  write_fixture(dir / "bad.bin", 2);
  {
    std::ofstream extra(dir / "bad.bin", std::ios::binary | std::ios::app);
    extra.put('x');
  }
  try {
    load_cifar10_file(dir / "bad.bin", 2);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("expected 6146") != std::string::npos);
  }
  CHECK_THROWS_AS(load_cifar10_file(dir / "missing.bin", 2), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("a standard cifar10 directory yields 10000 records per file") {
  const fs::path dir = temp_dir("cifar_full");
  for (int b = 1; b <= 5; ++b) write_fixture(dir / ("data_batch_" + std::to_string(b) + ".bin"), 10000);
  write_fixture(dir / "test_batch.bin", 10000);
  CHECK(fs::file_size(dir / "test_batch.bin") == 30730000u);
  const auto full = load_cifar10(dir, 25000, 500);
  CHECK(full.train.size() == 25000);
  CHECK(full.test.size() == 500);
  CHECK(full.train.labels[10003] == 3);
  for (Index n : class_counts(full.train)) CHECK(n == 2500);
  fs::remove_all(dir);
}
