#pragma once

#include "simclr/tensorgrad/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

namespace simclr::tg {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename Scalar>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  return std::is_same_v<Scalar, float> ? DType::f32 : DType::f64;
}

/// Named-tensor container with string metadata.
///
/// Byte layout (all integers little-endian):
///   "SIMCLRTG"                       8-byte magic
///   u32 version                      currently 1
///   u32 meta_count, then per entry:  u32 key_len, key, u32 value_len, value
///   u32 tensor_count, then per entry:
///     u32 name_len, name, u8 dtype (1 = f32, 2 = f64), u32 rank, u64 dims[rank],
///     raw little-endian element bytes (row-major)
class TensorArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    Shape shape;
    DType dtype = DType::f64;
    std::vector<std::uint8_t> bytes;
  };

  template <typename Scalar>
  void put(const std::string& name, const Shape& shape, const Vector<Scalar>& values) {
    if (values.size() != numel(shape)) throw DimensionError("archive put '" + name + "': size/shape mismatch");
    Entry e;
    e.shape = shape;
    e.dtype = dtype_of<Scalar>();
    e.bytes.resize(static_cast<std::size_t>(values.size()) * sizeof(Scalar));
    std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  template <typename Scalar>
  void put(const std::string& name, const Tensor<Scalar>& t) {
    put<Scalar>(name, t.shape(), t.value());
  }

  /// Reads a tensor stored with the same scalar type and shape.
  template <typename Scalar>
  Vector<Scalar> get(const std::string& name, const Shape& expected) const {
    const Entry& e = entry(name);
    if (e.dtype != dtype_of<Scalar>()) throw FormatError("archive tensor '" + name + "' has a different element type");
    if (e.shape != expected) {
      throw DimensionError("archive tensor '" + name + "' has shape " + to_string(e.shape) +
                           ", expected " + to_string(expected));
    }
    Vector<Scalar> v(numel(e.shape));
    std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
    return v;
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw FormatError("archive has no tensor named '" + name + "'");
    return it->second;
  }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }
  std::string meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw FormatError("archive has no metadata key '" + key + "'");
    return it->second;
  }
  bool has_meta(const std::string& key) const { return meta_.count(key) > 0; }
  const std::map<std::string, std::string>& metadata() const { return meta_; }

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive parse(const std::vector<std::uint8_t>& bytes);

  /// Writes to a temporary sibling and renames over `path`.
  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Entry> entries_;
  std::map<std::string, std::string> meta_;
};

}  // namespace simclr::tg
