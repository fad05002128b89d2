#pragma once

#include "simclr/augment/image.hpp"

#include <array>
#include <vector>

namespace simclr::augment {

// Inception-style crop -------------------------------------------------------

struct CropRect {
  Index top = 0, left = 0, height = 0, width = 0;
  friend bool operator==(const CropRect&, const CropRect&) = default;
};

struct CropOptions {
  double area_min = 0.08;
  double area_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  int attempts = 10;
  double flip_probability = 0.5;
};

/// Samples area fraction U[area_min, area_max] and aspect (w/h) U[ratio_min,
/// ratio_max]; up to `attempts` tries for a fitting rectangle, then the largest
/// centered crop whose aspect lies within the ratio bounds.
CropRect sample_crop_rect(Index height, Index width, Rng& rng, const CropOptions& opt = {});

/// Bilinear resize of `rect` to out_h x out_w (half-pixel centers, edge clamp).
Image resized_crop(const Image& img, const CropRect& rect, Index out_h, Index out_w);

Image hflip(const Image& img);

/// Crop + bilinear resize + horizontal flip with opt.flip_probability.
Image random_resized_crop(const Image& img, Index out_h, Index out_w, Rng& rng, const CropOptions& opt = {});

// Color distortion -----------------------------------------------------------

inline constexpr float kLumaR = 0.299f, kLumaG = 0.587f, kLumaB = 0.114f;

Image adjust_brightness(const Image& img, double delta);
/// (x - m) * factor + m with m the per-channel mean.
Image adjust_contrast(const Image& img, double factor);
/// Interpolates toward luma gray: gray + factor * (x - gray).
Image adjust_saturation(const Image& img, double factor);
/// Rotates HSV hue by `delta` turns (wrapping).
Image adjust_hue(const Image& img, double delta);
Image clip01(const Image& img);
Image to_grayscale(const Image& img);

struct JitterSample {
  bool applied = false;
  double brightness = 0, contrast = 1, saturation = 1, hue = 0;
  std::array<int, 4> order{0, 1, 2, 3};  // brightness, contrast, saturation, hue
};

/// Draws the jitter parameters for strength s; `shuffle` permutes the order.
JitterSample sample_jitter(double strength, Rng& rng, double probability = 0.8, bool shuffle = false);
Image apply_jitter(const Image& img, const JitterSample& sample);
Image color_jitter(const Image& img, double strength, Rng& rng, double probability = 0.8, bool shuffle = false);
Image color_drop(const Image& img, Rng& rng, double probability = 0.2);

// Blur -----------------------------------------------------------------------

/// round(0.1 * min(H, W)), forced odd and >= 1.
Index blur_kernel_size(Index height, Index width);
/// Normalized 1-D Gaussian taps of odd `size`.
std::vector<double> gaussian_kernel(Index size, double sigma);
/// Separable blur with reflect padding.
Image gaussian_blur_fixed(const Image& img, Index size, double sigma);
Image gaussian_blur(const Image& img, Rng& rng, double probability = 0.5, double sigma_min = 0.1,
                    double sigma_max = 2.0);

// Ablation operators ---------------------------------------------------------

/// Counter-clockwise by quarter_turns * 90 degrees. Non-square images only
/// accept half turns.
Image rotate90(const Image& img, int quarter_turns);
Image random_rotate90(const Image& img, Rng& rng);
Image cutout_at(const Image& img, Index top, Index left, Index side, const std::array<float, 3>& fill);
Image cutout(const Image& img, Index side, const std::array<float, 3>& fill, Rng& rng);
Image gaussian_noise(const Image& img, double sigma, Rng& rng);
/// Gradient magnitude of luma (3x3 Sobel, reflect padding), scaled to [0, 1]
/// by its maximum and replicated to 3 channels.
Image sobel(const Image& img);

/// Index into [0, n) mirroring at the borders without repeating the edge.
Index reflect_index(Index i, Index n);

}  // namespace simclr::augment
