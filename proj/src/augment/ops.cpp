#include "simclr/augment/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace simclr::augment {

Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

CropRect sample_crop_rect(Index height, Index width, Rng& rng, const CropOptions& opt) {
  if (height <= 0 || width <= 0) throw ContractError("sample_crop_rect: empty image");
  const double area = static_cast<double>(height * width);
  for (int attempt = 0; attempt < opt.attempts; ++attempt) {
    const double target_area = area * uniform(rng, opt.area_min, opt.area_max);
    const double ratio = uniform(rng, opt.ratio_min, opt.ratio_max);
    const auto w = static_cast<Index>(std::lround(std::sqrt(target_area * ratio)));
    const auto h = static_cast<Index>(std::lround(std::sqrt(target_area / ratio)));
    if (w > 0 && h > 0 && w <= width && h <= height) {
      const Index top = std::uniform_int_distribution<Index>(0, height - h)(rng);
      const Index left = std::uniform_int_distribution<Index>(0, width - w)(rng);
      return {top, left, h, w};
    }
  }
  // Fallback: maximal centered crop with aspect clamped into range.
  const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
  Index w = width, h = height;
  if (in_ratio < opt.ratio_min) {
    h = std::max<Index>(1, std::lround(static_cast<double>(w) / opt.ratio_min));
  } else if (in_ratio > opt.ratio_max) {
    w = std::max<Index>(1, std::lround(static_cast<double>(h) * opt.ratio_max));
  }
  return {(height - h) / 2, (width - w) / 2, h, w};
}

Image resized_crop(const Image& img, const CropRect& rect, Index out_h, Index out_w) {
  if (out_h <= 0 || out_w <= 0) throw ContractError("resized_crop: target dims must be positive");
  if (rect.height <= 0 || rect.width <= 0 || rect.top < 0 || rect.left < 0 ||
      rect.top + rect.height > img.height || rect.left + rect.width > img.width) {
    throw ContractError("resized_crop: crop rectangle outside the image");
  }
  Image out(out_h, out_w);
  const double sy = static_cast<double>(rect.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(rect.width) / static_cast<double>(out_w);
  std::vector<Index> x0(static_cast<std::size_t>(out_w)), x1(static_cast<std::size_t>(out_w));
  std::vector<float> wx(static_cast<std::size_t>(out_w));
  for (Index x = 0; x < out_w; ++x) {
    const double src = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(rect.width - 1));
    const auto lo = static_cast<Index>(std::floor(src));
    x0[static_cast<std::size_t>(x)] = rect.left + lo;
    x1[static_cast<std::size_t>(x)] = rect.left + std::min(lo + 1, rect.width - 1);
    wx[static_cast<std::size_t>(x)] = static_cast<float>(src - static_cast<double>(lo));
  }
  for (Index y = 0; y < out_h; ++y) {
    const double src = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(rect.height - 1));
    const auto lo = static_cast<Index>(std::floor(src));
    const Index y0 = rect.top + lo, y1 = rect.top + std::min(lo + 1, rect.height - 1);
    const auto wy = static_cast<float>(src - static_cast<double>(lo));
    for (Index c = 0; c < kChannels; ++c) {
      for (Index x = 0; x < out_w; ++x) {
        const auto k = static_cast<std::size_t>(x);
        const float top = img.at(c, y0, x0[k]) * (1.0f - wx[k]) + img.at(c, y0, x1[k]) * wx[k];
        const float bottom = img.at(c, y1, x0[k]) * (1.0f - wx[k]) + img.at(c, y1, x1[k]) * wx[k];
        out.at(c, y, x) = top * (1.0f - wy) + bottom * wy;
      }
    }
  }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.height, img.width);
  for (Index c = 0; c < kChannels; ++c)
    for (Index y = 0; y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image random_resized_crop(const Image& img, Index out_h, Index out_w, Rng& rng, const CropOptions& opt) {
  if (out_h <= 0 || out_w <= 0) throw ContractError("random_resized_crop: target dims must be positive");
  if (img.empty()) throw ContractError("random_resized_crop: empty image");
  const CropRect rect = sample_crop_rect(img.height, img.width, rng, opt);
  Image out = resized_crop(img, rect, out_h, out_w);
  if (bernoulli(rng, opt.flip_probability)) out = hflip(out);
  return out;
}

Image adjust_brightness(const Image& img, double delta) {
  Image out = img;
  out.data += static_cast<float>(delta);
  return out;
}

Image adjust_contrast(const Image& img, double factor) {
  Image out = img;
  const Index plane = img.plane();
  for (Index c = 0; c < kChannels; ++c) {
    auto seg = out.data.segment(c * plane, plane);
    const float m = static_cast<float>(seg.cast<double>().mean());
    seg = (seg - m) * static_cast<float>(factor) + m;
  }
  return out;
}

Image adjust_saturation(const Image& img, double factor) {
  Image out = img;
  const Index plane = img.plane();
  const auto f = static_cast<float>(factor);
  for (Index p = 0; p < plane; ++p) {
    const float r = img.data[p], g = img.data[plane + p], b = img.data[2 * plane + p];
    const float gray = kLumaR * r + kLumaG * g + kLumaB * b;
    out.data[p] = gray + f * (r - gray);
    out.data[plane + p] = gray + f * (g - gray);
    out.data[2 * plane + p] = gray + f * (b - gray);
  }
  return out;
}

Image adjust_hue(const Image& img, double delta) {
  Image out = img;
  const Index plane = img.plane();
  for (Index p = 0; p < plane; ++p) {
    const double r = img.data[p], g = img.data[plane + p], b = img.data[2 * plane + p];
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double chroma = mx - mn;
    if (chroma <= 0.0) continue;
    double h;  // sector units in [0, 6)
    if (mx == r) {
      h = std::fmod((g - b) / chroma, 6.0);
    } else if (mx == g) {
      h = (b - r) / chroma + 2.0;
    } else {
      h = (r - g) / chroma + 4.0;
    }
    h = std::fmod(h + 6.0 * delta, 6.0);
    if (h < 0) h += 6.0;
    const double x = chroma * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    double rr = 0, gg = 0, bb = 0;
    switch (static_cast<int>(h)) {
      case 0: rr = chroma; gg = x; break;
      case 1: rr = x; gg = chroma; break;
      case 2: gg = chroma; bb = x; break;
      case 3: gg = x; bb = chroma; break;
      case 4: rr = x; bb = chroma; break;
      default: rr = chroma; bb = x; break;
    }
    out.data[p] = static_cast<float>(rr + mn);
    out.data[plane + p] = static_cast<float>(gg + mn);
    out.data[2 * plane + p] = static_cast<float>(bb + mn);
  }
  return out;
}

Image clip01(const Image& img) {
  Image out = img;
  out.data = out.data.max(0.0f).min(1.0f);
  return out;
}

Image to_grayscale(const Image& img) {
  Image out(img.height, img.width);
  const Index plane = img.plane();
  for (Index p = 0; p < plane; ++p) {
    const float gray = kLumaR * img.data[p] + kLumaG * img.data[plane + p] + kLumaB * img.data[2 * plane + p];
    out.data[p] = out.data[plane + p] = out.data[2 * plane + p] = gray;
  }
  return out;
}

JitterSample sample_jitter(double strength, Rng& rng, double probability, bool shuffle) {
  if (strength < 0) throw ContractError("color_jitter: strength must be >= 0");
  JitterSample s;
  s.applied = bernoulli(rng, probability);
  if (!s.applied) return s;
  const double spread = 0.8 * strength;
  s.brightness = uniform(rng, -spread, spread);
  s.contrast = uniform(rng, std::max(0.0, 1.0 - spread), 1.0 + spread);
  s.saturation = uniform(rng, std::max(0.0, 1.0 - spread), 1.0 + spread);
  s.hue = uniform(rng, -0.2 * strength, 0.2 * strength);
  if (shuffle) std::shuffle(s.order.begin(), s.order.end(), rng);
  return s;
}

Image apply_jitter(const Image& img, const JitterSample& s) {
  if (!s.applied) return img;
  Image out = img;
  for (int step : s.order) {
    switch (step) {
      case 0: if (s.brightness != 0.0) out = adjust_brightness(out, s.brightness); break;
      case 1: if (s.contrast != 1.0) out = adjust_contrast(out, s.contrast); break;
      case 2: if (s.saturation != 1.0) out = adjust_saturation(out, s.saturation); break;
      default: if (s.hue != 0.0) out = adjust_hue(out, s.hue); break;
    }
  }
  return clip01(out);
}

Image color_jitter(const Image& img, double strength, Rng& rng, double probability, bool shuffle) {
  return apply_jitter(img, sample_jitter(strength, rng, probability, shuffle));
}

Image color_drop(const Image& img, Rng& rng, double probability) {
  return bernoulli(rng, probability) ? to_grayscale(img) : img;
}

Index blur_kernel_size(Index height, Index width) {
  auto k = static_cast<Index>(std::lround(0.1 * static_cast<double>(std::min(height, width))));
  if (k % 2 == 0) ++k;
  return std::max<Index>(1, k);
}

std::vector<double> gaussian_kernel(Index size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ContractError("gaussian_kernel: size must be odd and >= 1");
  if (!(sigma > 0)) throw ContractError("gaussian_kernel: sigma must be positive");
  const Index radius = size / 2;
  std::vector<double> taps(static_cast<std::size_t>(size));
  for (Index i = -radius; i <= radius; ++i) {
    taps[static_cast<std::size_t>(i + radius)] = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (auto& t : taps) t /= total;
  return taps;
}

Image gaussian_blur_fixed(const Image& img, Index size, double sigma) {
  const auto taps = gaussian_kernel(size, sigma);
  if (size == 1) return img;
  const Index radius = size / 2;
  Image tmp(img.height, img.width), out(img.height, img.width);
  for (Index c = 0; c < kChannels; ++c) {
    for (Index y = 0; y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x) {
        double acc = 0;
        for (Index k = -radius; k <= radius; ++k) {
          acc += taps[static_cast<std::size_t>(k + radius)] * img.at(c, y, reflect_index(x + k, img.width));
        }
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
    for (Index y = 0; y < img.height; ++y)
      for (Index x = 0; x < img.width; ++x) {
        double acc = 0;
        for (Index k = -radius; k <= radius; ++k) {
          acc += taps[static_cast<std::size_t>(k + radius)] * tmp.at(c, reflect_index(y + k, img.height), x);
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
  }
  return out;
}

Image gaussian_blur(const Image& img, Rng& rng, double probability, double sigma_min, double sigma_max) {
  if (img.empty()) throw ContractError("gaussian_blur: empty image");
  if (!bernoulli(rng, probability)) return img;
  const double sigma = uniform(rng, sigma_min, sigma_max);
  return clip01(gaussian_blur_fixed(img, blur_kernel_size(img.height, img.width), sigma));
}

Image rotate90(const Image& img, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return img;
  if (k % 2 == 1 && img.height != img.width) {
    throw ContractError("rotate90: quarter turns need a square image");
  }
  Image out(img.height, img.width);
  const Index n = img.height, m = img.width;
  for (Index c = 0; c < kChannels; ++c)
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < m; ++x) {
        Index sy = y, sx = x;
        switch (k) {
          case 1: sy = x; sx = m - 1 - y; break;          // counter-clockwise
          case 2: sy = n - 1 - y; sx = m - 1 - x; break;
          default: sy = n - 1 - x; sx = y; break;
        }
        out.at(c, y, x) = img.at(c, sy, sx);
      }
  return out;
}

Image random_rotate90(const Image& img, Rng& rng) {
  return rotate90(img, std::uniform_int_distribution<int>(1, 3)(rng));
}

Image cutout_at(const Image& img, Index top, Index left, Index side, const std::array<float, 3>& fill) {
  if (side < 0 || top < 0 || left < 0 || top + side > img.height || left + side > img.width) {
    throw ContractError("cutout: square must lie within the image");
  }
  Image out = img;
  for (Index c = 0; c < kChannels; ++c)
    for (Index y = top; y < top + side; ++y)
      for (Index x = left; x < left + side; ++x) out.at(c, y, x) = fill[static_cast<std::size_t>(c)];
  return out;
}

Image cutout(const Image& img, Index side, const std::array<float, 3>& fill, Rng& rng) {
  if (side > std::min(img.height, img.width)) throw ContractError("cutout: side exceeds image");
  const Index top = std::uniform_int_distribution<Index>(0, img.height - side)(rng);
  const Index left = std::uniform_int_distribution<Index>(0, img.width - side)(rng);
  return cutout_at(img, top, left, side, fill);
}

Image gaussian_noise(const Image& img, double sigma, Rng& rng) {
  if (sigma < 0) throw ContractError("gaussian_noise: sigma must be >= 0");
  if (sigma == 0) return img;
  Image out = img;
  std::normal_distribution<double> noise(0.0, sigma);
  for (Index i = 0; i < out.data.size(); ++i) out.data[i] = static_cast<float>(out.data[i] + noise(rng));
  return clip01(out);
}

Image sobel(const Image& img) {
  const Index H = img.height, W = img.width, plane = img.plane();
  std::vector<double> luma(static_cast<std::size_t>(plane));
  for (Index p = 0; p < plane; ++p) {
    luma[static_cast<std::size_t>(p)] = kLumaR * img.data[p] + kLumaG * img.data[plane + p] + kLumaB * img.data[2 * plane + p];
  }
  auto L = [&](Index y, Index x) {
    return luma[static_cast<std::size_t>(reflect_index(y, H) * W + reflect_index(x, W))];
  };
  std::vector<double> mag(static_cast<std::size_t>(plane));
  double peak = 0;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const double gx = (L(y - 1, x + 1) + 2 * L(y, x + 1) + L(y + 1, x + 1)) -
                        (L(y - 1, x - 1) + 2 * L(y, x - 1) + L(y + 1, x - 1));
      const double gy = (L(y + 1, x - 1) + 2 * L(y + 1, x) + L(y + 1, x + 1)) -
                        (L(y - 1, x - 1) + 2 * L(y - 1, x) + L(y - 1, x + 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(y * W + x)] = m;
      peak = std::max(peak, m);
    }
  Image out(H, W);
  for (Index p = 0; p < plane; ++p) {
    const float v = peak > 0 ? static_cast<float>(mag[static_cast<std::size_t>(p)] / peak) : 0.0f;
    out.data[p] = out.data[plane + p] = out.data[2 * plane + p] = v;
  }
  return out;
}

}  // namespace simclr::augment
