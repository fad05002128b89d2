#include "simclr/cli/cli.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <memory>
#include <sstream>

namespace simclr::cli {

namespace fs = std::filesystem;

fs::path default_run_root() {
  const char* env = std::getenv("SIMCLR_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path make_run_dir(const fs::path& root, const std::string& command, const std::string& digest) {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &utc);
  fs::create_directories(root);
  const std::string base = command + "-" + stamp + "-" + digest.substr(0, 8);
  for (int k = 0;; ++k) {
    const fs::path p = root / (k == 0 ? base : base + "-" + std::to_string(k));
    if (fs::create_directory(p)) return p;
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_png(const fs::path& path, const augment::Image& img, int scale) {
  if (img.empty()) throw ContractError("write_png: empty image");
  if (scale < 1) throw ContractError("write_png: scale must be >= 1");
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng initialisation failed");
  }
  const auto w = static_cast<png_uint_32>(img.width * scale), h = static_cast<png_uint_32>(img.height * scale);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < h; ++y) {
    for (png_uint_32 x = 0; x < w; ++x) {
      for (Index c = 0; c < augment::kChannels; ++c) {
        const float v = img.at(c, static_cast<Index>(y) / scale, static_cast<Index>(x) / scale);
        row[x * 3 + static_cast<std::size_t>(c)] =
            static_cast<png_byte>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

augment::Image read_png(const fs::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) throw FormatError("cannot read " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng initialisation failed");
  }
  augment::Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("read_png: libpng error reading " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGB || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("read_png: expected 8-bit RGB");
  }
  const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  img = augment::Image(h, w);
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 3);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (Index c = 0; c < augment::kChannels; ++c)
        img.at(c, y, x) = static_cast<float>(row[x * 3 + static_cast<std::size_t>(c)]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Corpus load_corpus(const DataConfig& config) {
  Corpus c;
  if (config.source == "cifar10") {
    auto cifar = data::load_cifar10(config.dir, config.train_count, config.test_count);
    c.train = std::move(cifar.train);
    c.test = std::move(cifar.test);
  } else if (config.source == "synthetic") {
    c.train = data::synthetic_dataset(config.classes, config.train_count, config.image_size, config.image_size,
                                      config.seed);
    c.test = data::synthetic_dataset(config.classes, config.test_count, config.image_size, config.image_size,
                                     config.seed + 0x7e57ull);
  } else {
    throw ConfigError("unknown data source '" + config.source + "'");
  }
  return c;
}

nlohmann::json run_metadata(const RunConfig& config, const std::string& command) {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = command;
  j["config_digest"] = config_digest(config);
  j["config"] = to_sections(config);
  return j;
}

RunConfig config_from_metadata(const nlohmann::json& metadata) {
  if (!metadata.contains("schema_version") || metadata["schema_version"] != kSchemaVersion) {
    throw ConfigError("metadata: unsupported schema_version");
  }
  return from_sections(metadata.at("config").get<std::map<std::string, std::map<std::string, std::string>>>());
}

}  // namespace simclr::cli
