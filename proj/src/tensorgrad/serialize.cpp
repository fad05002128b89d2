#include "simclr/tensorgrad/serialize.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

namespace simclr::tg {
namespace {

constexpr char kMagic[8] = {'S', 'I', 'M', 'C', 'L', 'R', 'T', 'G'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

std::size_t element_size(DType d) { return d == DType::f32 ? 4 : 8; }

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T take() {
    need(sizeof(T));
    T v;
    std::uint8_t raw[sizeof(T)];
    std::copy_n(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), sizeof(T), raw);
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    std::memcpy(&v, raw, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take_string() {
    const auto n = take<std::uint32_t>();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }

  std::vector<std::uint8_t> take_bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError("archive truncated: need " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + " of " + std::to_string(bytes_.size()));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> TensorArchive::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    put_string(out, k);
    put_string(out, v);
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    put_string(out, name);
    out.push_back(static_cast<std::uint8_t>(e.dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (Index d : e.shape) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    const auto start = out.size();
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
    if constexpr (std::endian::native == std::endian::big) {
      const std::size_t width = element_size(e.dtype);
      for (std::size_t k = start; k < out.size(); k += width) {
        std::reverse(out.begin() + static_cast<std::ptrdiff_t>(k), out.begin() + static_cast<std::ptrdiff_t>(k + width));
      }
    }
  }
  return out;
}

TensorArchive TensorArchive::parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("not a tensor archive (bad magic)");
  }
  std::vector<std::uint8_t> rest(bytes.begin() + sizeof(kMagic), bytes.end());
  Reader in(rest);
  const auto version = in.take<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported archive version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  }
  TensorArchive archive;
  const auto meta_count = in.take<std::uint32_t>();
  for (std::uint32_t i = 0; i < meta_count; ++i) {
    std::string k = in.take_string();
    archive.meta_[k] = in.take_string();
  }
  const auto count = in.take<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.take_string();
    Entry e;
    const auto dtype = in.take<std::uint8_t>();
    if (dtype != 1 && dtype != 2) throw FormatError("tensor '" + name + "' has unknown dtype code " + std::to_string(dtype));
    e.dtype = static_cast<DType>(dtype);
    const auto rank = in.take<std::uint32_t>();
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<Index>(in.take<std::uint64_t>()));
    const std::size_t width = element_size(e.dtype);
    e.bytes = in.take_bytes(static_cast<std::size_t>(numel(e.shape)) * width);
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t k = 0; k < e.bytes.size(); k += width) {
        std::reverse(e.bytes.begin() + static_cast<std::ptrdiff_t>(k), e.bytes.begin() + static_cast<std::ptrdiff_t>(k + width));
      }
    }
    archive.entries_[name] = std::move(e);
  }
  if (!in.done()) throw FormatError("archive has trailing bytes");
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

}  // namespace simclr::tg
