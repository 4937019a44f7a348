#pragma once

#include <array>
#include <string>
#include <vector>

#include "camo/common.hpp"

namespace camo {

// Dense interleaved image, double precision, values nominally in [0,1].
// channels is 1 (masks, grayscale) or 3 (RGB).
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pix;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c),
        pix(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) {
    return pix[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return pix[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t size() const { return pix.size(); }
  bool empty() const { return pix.empty(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// PNG/JPEG decode; 8- and 16-bit PNG map to [0,1]. Grayscale stays 1-channel.
Image load_image(const std::string& path);

void save_png8(const Image& img, const std::string& path);
void save_png16(const Image& img, const std::string& path);

// Binary masks are written strictly {0,255}; values are thresholded at 0.5.
void save_mask_png(const Image& mask, const std::string& path);
Image load_mask_png(const std::string& path);

// Bilinear resample (half-pixel centers). Identity when sizes already match.
Image resize_bilinear(const Image& src, int out_h, int out_w);

// Bilinear sample at texel-center grid: u -> x in [0, W-1], v=0 is the
// bottom row (mesh UV convention). Coordinates are edge-clamped.
std::array<double, 3> sample_bilinear_uv(const Image& texture, double u, double v);

Image to_grayscale(const Image& rgb);  // Rec.601 luminance

double clamp01(double v);

}  // namespace camo
