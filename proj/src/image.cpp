#include "camo/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace camo {

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

namespace {

Image from_mat(const cv::Mat& m) {
  if (m.empty()) throw Error("image", "decode produced an empty image");
  cv::Mat src = m;
  const int c = src.channels() >= 3 ? 3 : 1;
  if (src.channels() == 4) {
    cv::Mat tmp;
    cv::cvtColor(src, tmp, cv::COLOR_BGRA2BGR);
    src = tmp;
  }
  const double scale = src.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  Image out(src.rows, src.cols, c);
  for (int y = 0; y < src.rows; ++y) {
    for (int x = 0; x < src.cols; ++x) {
      if (c == 1) {
        out.at(y, x, 0) = scale * (src.depth() == CV_16U ? src.at<std::uint16_t>(y, x)
                                                         : src.at<std::uint8_t>(y, x));
      } else {
        // OpenCV stores BGR.
        if (src.depth() == CV_16U) {
          const auto& p = src.at<cv::Vec3w>(y, x);
          out.at(y, x, 0) = scale * p[2];
          out.at(y, x, 1) = scale * p[1];
          out.at(y, x, 2) = scale * p[0];
        } else {
          const auto& p = src.at<cv::Vec3b>(y, x);
          out.at(y, x, 0) = scale * p[2];
          out.at(y, x, 1) = scale * p[1];
          out.at(y, x, 2) = scale * p[0];
        }
      }
    }
  }
  return out;
}

cv::Mat to_mat8(const Image& img) {
  cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 1) {
        m.at<std::uint8_t>(y, x) =
            static_cast<std::uint8_t>(std::lround(clamp01(img.at(y, x, 0)) * 255.0));
      } else {
        cv::Vec3b& p = m.at<cv::Vec3b>(y, x);
        p[2] = static_cast<std::uint8_t>(std::lround(clamp01(img.at(y, x, 0)) * 255.0));
        p[1] = static_cast<std::uint8_t>(std::lround(clamp01(img.at(y, x, 1)) * 255.0));
        p[0] = static_cast<std::uint8_t>(std::lround(clamp01(img.at(y, x, 2)) * 255.0));
      }
    }
  }
  return m;
}

}  // namespace

Image load_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (m.empty()) throw Error("image", "cannot read image: " + path);
  return from_mat(m);
}

void save_png8(const Image& img, const std::string& path) {
  if (img.empty()) throw Error("image", "refusing to write empty image: " + path);
  if (!cv::imwrite(path, to_mat8(img)))
    throw Error("image", "cannot write image: " + path);
}

void save_png16(const Image& img, const std::string& path) {
  if (img.empty()) throw Error("image", "refusing to write empty image: " + path);
  cv::Mat m(img.height, img.width, img.channels == 1 ? CV_16UC1 : CV_16UC3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 1) {
        m.at<std::uint16_t>(y, x) =
            static_cast<std::uint16_t>(std::lround(clamp01(img.at(y, x, 0)) * 65535.0));
      } else {
        cv::Vec3w& p = m.at<cv::Vec3w>(y, x);
        p[2] = static_cast<std::uint16_t>(std::lround(clamp01(img.at(y, x, 0)) * 65535.0));
        p[1] = static_cast<std::uint16_t>(std::lround(clamp01(img.at(y, x, 1)) * 65535.0));
        p[0] = static_cast<std::uint16_t>(std::lround(clamp01(img.at(y, x, 2)) * 65535.0));
      }
    }
  }
  if (!cv::imwrite(path, m)) throw Error("image", "cannot write image: " + path);
}

void save_mask_png(const Image& mask, const std::string& path) {
  if (mask.channels != 1) throw Error("image", "mask must be single channel");
  Image hard(mask.height, mask.width, 1);
  for (std::size_t i = 0; i < mask.pix.size(); ++i)
    hard.pix[i] = mask.pix[i] >= 0.5 ? 1.0 : 0.0;
  save_png8(hard, path);
}

Image load_mask_png(const std::string& path) {
  Image raw = load_image(path);
  Image mask(raw.height, raw.width, 1);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      mask.at(y, x, 0) = raw.at(y, x, 0) >= 0.5 ? 1.0 : 0.0;
  return mask;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (src.empty()) throw Error("image", "resize of empty image");
  if (out_h <= 0 || out_w <= 0) throw Error("image", "resize to non-positive size");
  if (out_h == src.height && out_w == src.width) return src;
  Image out(out_h, out_w, src.channels);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = std::clamp(fy - std::floor(fy), 0.0, 1.0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = std::clamp(fx - std::floor(fx), 0.0, 1.0);
      for (int c = 0; c < src.channels; ++c) {
        const double top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
        const double bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

std::array<double, 3> sample_bilinear_uv(const Image& texture, double u, double v) {
  const double x = std::clamp(u, 0.0, 1.0) * (texture.width - 1);
  const double y = (1.0 - std::clamp(v, 0.0, 1.0)) * (texture.height - 1);
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, texture.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, texture.height - 1);
  const int x1 = std::min(x0 + 1, texture.width - 1);
  const int y1 = std::min(y0 + 1, texture.height - 1);
  const double wx = x - x0;
  const double wy = y - y0;
  std::array<double, 3> rgb{0, 0, 0};
  for (int c = 0; c < 3; ++c) {
    const int cc = texture.channels == 1 ? 0 : c;
    const double top = texture.at(y0, x0, cc) * (1 - wx) + texture.at(y0, x1, cc) * wx;
    const double bot = texture.at(y1, x0, cc) * (1 - wx) + texture.at(y1, x1, cc) * wx;
    rgb[static_cast<std::size_t>(c)] = top * (1 - wy) + bot * wy;
  }
  return rgb;
}

Image to_grayscale(const Image& rgb) {
  Image out(rgb.height, rgb.width, 1);
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      if (rgb.channels == 1) {
        out.at(y, x, 0) = rgb.at(y, x, 0);
      } else {
        out.at(y, x, 0) =
            0.299 * rgb.at(y, x, 0) + 0.587 * rgb.at(y, x, 1) + 0.114 * rgb.at(y, x, 2);
      }
    }
  return out;
}

}  // namespace camo
