#include "camo/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace camo {

void LossConfig::validate() const {
  for (double w : {alpha, beta, gamma, mu, tau})
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("losses", "loss weights must be >= 0");
  if (palette.empty()) throw Error("losses", "palette must be nonempty");
  for (const auto& p : palette)
    for (int c = 0; c < 3; ++c)
      if (p[c] < 0.0 || p[c] > 1.0) throw Error("losses", "palette colors must be in [0,1]");
  if (!(c_ru > 0.0 && c_ru < 0.5)) throw Error("losses", "c_ru must be in (0, 0.5)");
}

double iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
  const double iw = std::max(0.0, ix2 - ix1), ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::tuple<double, double, double> adv_loss(const DetectionSet& dets, const GroundTruth& gt,
                                            const LossConfig& cfg) {
  double l_iou = 0.0, l_obj = 0.0;
  for (const auto& d : dets.detections) {
    if (d.class_id != gt.class_id) continue;
    l_iou = std::max(l_iou, iou(d.box, gt.box));
    l_obj = std::max(l_obj, d.confidence);
  }
  return {l_iou, l_obj, cfg.alpha * l_iou + cfg.beta * l_obj};
}

namespace {

// Differentiable IOU of a candidate box (graph nodes) against a fixed box.
ad::Ptr iou_ad(const std::array<ad::Ptr, 4>& b, const Box& gt) {
  using namespace ad;
  auto gx1 = constant_scalar(gt.x1), gy1 = constant_scalar(gt.y1);
  auto gx2 = constant_scalar(gt.x2), gy2 = constant_scalar(gt.y2);
  auto iw = relu(sub(vmin(b[2], gx2), vmax(b[0], gx1)));
  auto ih = relu(sub(vmin(b[3], gy2), vmax(b[1], gy1)));
  auto inter = mul(iw, ih);
  auto area_b = mul(sub(b[2], b[0]), sub(b[3], b[1]));
  auto uni = sub(add_scalar(area_b, gt.area()), inter);
  return mul(inter, reciprocal(uni));  // union >= max(area) > 0 for valid boxes
}

}  // namespace

DiffAdvLoss adv_loss_ad(const DiffDetections& dets, const GroundTruth& gt,
                        const LossConfig& cfg) {
  DiffAdvLoss out;
  ad::Ptr iou_max, obj_max;
  for (std::size_t i = 0; i < dets.confidence.size(); ++i) {
    if (dets.class_ids[i] != gt.class_id) continue;
    auto cand_iou = iou_ad(dets.boxes[i], gt.box);
    iou_max = iou_max ? ad::vmax(iou_max, cand_iou) : cand_iou;
    obj_max = obj_max ? ad::vmax(obj_max, dets.confidence[i]) : dets.confidence[i];
  }
  if (!iou_max) iou_max = ad::constant_scalar(0.0);
  if (!obj_max) obj_max = ad::constant_scalar(0.0);
  out.l_iou = iou_max->value[0];
  out.l_obj = obj_max->value[0];
  out.value = ad::add(ad::scale(iou_max, cfg.alpha), ad::scale(obj_max, cfg.beta));
  out.l_adv = out.value->value[0];
  return out;
}

namespace {

long require_masked(const RegionMask& mask, const char* op) {
  const long n = mask.nonzero_count();
  if (n == 0) throw Error("losses", std::string(op) + ": mask has no set pixels");
  return n;
}

bool on(const RegionMask& mask, int y, int x) { return mask.mask.at(y, x, 0) >= 0.5; }

// Index pairs (both pixels masked) for the forward-difference terms, per
// plane; shared by the scalar and tensor TV paths.
void tv_pairs(const RegionMask& mask, std::vector<int>& a, std::vector<int>& b) {
  const int h = mask.height(), w = mask.width();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!on(mask, y, x)) continue;
      if (y + 1 < h && on(mask, y + 1, x)) {
        a.push_back(y * w + x);
        b.push_back((y + 1) * w + x);
      }
      if (x + 1 < w && on(mask, y, x + 1)) {
        a.push_back(y * w + x);
        b.push_back(y * w + x + 1);
      }
    }
}

}  // namespace

double tv_loss(const Image& texture, const RegionMask& mask) {
  if (texture.height != mask.height() || texture.width != mask.width())
    throw Error("losses", "tv: texture/mask resolution mismatch");
  const long n = require_masked(mask, "tv");
  std::vector<int> a, b;
  tv_pairs(mask, a, b);
  double sum = 0.0;
  const int w = texture.width;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int c = 0; c < texture.channels; ++c)
      sum += std::abs(texture.at(a[i] / w, a[i] % w, c) - texture.at(b[i] / w, b[i] % w, c));
  return sum / static_cast<double>(n);
}

ad::Ptr tv_loss_ad(const ad::Ptr& texture, const RegionMask& mask) {
  if (texture->shape.size() != 3 || texture->shape[1] != mask.height() ||
      texture->shape[2] != mask.width())
    throw Error("losses", "tv: texture/mask resolution mismatch");
  const long n = require_masked(mask, "tv");
  std::vector<int> a, b;
  tv_pairs(mask, a, b);
  if (a.empty()) return ad::constant_scalar(0.0);
  const int channels = texture->shape[0];
  const int plane = mask.height() * mask.width();
  std::vector<int> ia, ib;
  ia.reserve(a.size() * static_cast<std::size_t>(channels));
  ib.reserve(ia.capacity());
  for (int c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < a.size(); ++i) {
      ia.push_back(c * plane + a[i]);
      ib.push_back(c * plane + b[i]);
    }
  auto diff = ad::sub(ad::gather(texture, ia), ad::gather(texture, ib));
  return ad::scale(ad::sum(ad::abs_(diff)), 1.0 / static_cast<double>(n));
}

namespace {

int nearest_palette_index(double r, double g, double b,
                          const std::vector<Eigen::Vector3d>& palette) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < palette.size(); ++i) {
    const double d = (palette[i] - Eigen::Vector3d(r, g, b)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

double nps_loss(const Image& texture, const RegionMask& mask,
                const std::vector<Eigen::Vector3d>& palette) {
  if (palette.empty()) throw Error("losses", "nps: palette must be nonempty");
  if (texture.channels != 3 || texture.height != mask.height() || texture.width != mask.width())
    throw Error("losses", "nps: texture/mask resolution mismatch");
  const long n = mask.nonzero_count();
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (int y = 0; y < texture.height; ++y)
    for (int x = 0; x < texture.width; ++x) {
      if (!on(mask, y, x)) continue;
      const Eigen::Vector3d t(texture.at(y, x, 0), texture.at(y, x, 1), texture.at(y, x, 2));
      const int k = nearest_palette_index(t[0], t[1], t[2], palette);
      sum += (t - palette[static_cast<std::size_t>(k)]).norm();
    }
  return sum / static_cast<double>(n);
}

ad::Ptr nps_loss_ad(const ad::Ptr& texture, const RegionMask& mask,
                    const std::vector<Eigen::Vector3d>& palette) {
  if (palette.empty()) throw Error("losses", "nps: palette must be nonempty");
  if (texture->shape.size() != 3 || texture->shape[0] != 3 ||
      texture->shape[1] != mask.height() || texture->shape[2] != mask.width())
    throw Error("losses", "nps: texture/mask resolution mismatch");
  const long n = mask.nonzero_count();
  if (n == 0) return ad::constant_scalar(0.0);

  const int plane = mask.height() * mask.width();
  std::vector<int> ir, ig, ib;
  std::vector<double> pr, pg, pb;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) {
      if (!on(mask, y, x)) continue;
      const int p = y * mask.width() + x;
      // Nearest color is chosen at the current texel value and then held
      // fixed, so the term differentiates as a plain distance.
      const int k = nearest_palette_index(texture->value[p], texture->value[plane + p],
                                          texture->value[2 * plane + p], palette);
      ir.push_back(p);
      ig.push_back(plane + p);
      ib.push_back(2 * plane + p);
      pr.push_back(palette[static_cast<std::size_t>(k)][0]);
      pg.push_back(palette[static_cast<std::size_t>(k)][1]);
      pb.push_back(palette[static_cast<std::size_t>(k)][2]);
    }
  const int m = static_cast<int>(ir.size());
  auto col = [&](std::vector<double>& v) {
    return ad::constant({m}, Eigen::Map<ad::Array>(v.data(), m));
  };
  auto dr = ad::sub(ad::gather(texture, ir), col(pr));
  auto dg = ad::sub(ad::gather(texture, ig), col(pg));
  auto db = ad::sub(ad::gather(texture, ib), col(pb));
  auto dist = ad::sqrt_(ad::add(ad::square(dr), ad::add(ad::square(dg), ad::square(db))));
  return ad::scale(ad::sum(dist), 1.0 / static_cast<double>(n));
}

Eigen::Vector3d background_mean_color(const Image& background, const std::optional<Box>& box) {
  if (background.channels != 3 || background.empty())
    throw Error("losses", "background_mean_color expects a non-empty RGB image");

  auto whole_image = [&]() {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    for (int y = 0; y < background.height; ++y)
      for (int x = 0; x < background.width; ++x)
        for (int c = 0; c < 3; ++c) sum[c] += background.at(y, x, c);
    return (sum / (static_cast<double>(background.height) * background.width)).eval();
  };
  if (!box) return whole_image();
  if (!box->valid()) throw Error("losses", "background_mean_color: degenerate box");

  const double dw = 0.5 * box->width(), dh = 0.5 * box->height();
  const Box outer{box->x1 - dw, box->y1 - dh, box->x2 + dw, box->y2 + dh};
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  long count = 0;
  for (int y = 0; y < background.height; ++y)
    for (int x = 0; x < background.width; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      const bool in_outer = cx >= outer.x1 && cx < outer.x2 && cy >= outer.y1 && cy < outer.y2;
      const bool in_inner = cx >= box->x1 && cx < box->x2 && cy >= box->y1 && cy < box->y2;
      if (!in_outer || in_inner) continue;
      for (int c = 0; c < 3; ++c) sum[c] += background.at(y, x, c);
      ++count;
    }
  if (count == 0) {
    warn("losses", "background ring is empty; falling back to the whole image");
    return whole_image();
  }
  return sum / static_cast<double>(count);
}

namespace {

void band(const Eigen::Vector3d& c_r, double c_ru, Eigen::Vector3d& u_l, Eigen::Vector3d& u_h) {
  for (int c = 0; c < 3; ++c) {
    u_l[c] = clamp01(c_r[c] - c_ru);
    u_h[c] = clamp01(c_r[c] + c_ru);
  }
}

}  // namespace

double cr_loss(const Image& texture, const RegionMask& mask, const Eigen::Vector3d& c_r,
               double c_ru) {
  if (texture.channels != 3 || texture.height != mask.height() || texture.width != mask.width())
    throw Error("losses", "cr: texture/mask resolution mismatch");
  const long n = require_masked(mask, "cr");
  Eigen::Vector3d u_l, u_h;
  band(c_r, c_ru, u_l, u_h);
  double sum = 0.0;
  for (int y = 0; y < texture.height; ++y)
    for (int x = 0; x < texture.width; ++x) {
      if (!on(mask, y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        const double t = texture.at(y, x, c);
        sum += std::abs(t - u_l[c]) + std::abs(t - u_h[c]);
      }
    }
  return sum / static_cast<double>(n);
}

ad::Ptr cr_loss_ad(const ad::Ptr& texture, const RegionMask& mask, const Eigen::Vector3d& c_r,
                   double c_ru) {
  if (texture->shape.size() != 3 || texture->shape[0] != 3 ||
      texture->shape[1] != mask.height() || texture->shape[2] != mask.width())
    throw Error("losses", "cr: texture/mask resolution mismatch");
  const long n = require_masked(mask, "cr");
  Eigen::Vector3d u_l, u_h;
  band(c_r, c_ru, u_l, u_h);

  const int plane = mask.height() * mask.width();
  std::vector<int> idx;
  std::vector<double> lo, hi;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < mask.height(); ++y)
      for (int x = 0; x < mask.width(); ++x) {
        if (!on(mask, y, x)) continue;
        idx.push_back(c * plane + y * mask.width() + x);
        lo.push_back(u_l[c]);
        hi.push_back(u_h[c]);
      }
  const int m = static_cast<int>(idx.size());
  auto t = ad::gather(texture, idx);
  auto lo_c = ad::constant({m}, Eigen::Map<ad::Array>(lo.data(), m));
  auto hi_c = ad::constant({m}, Eigen::Map<ad::Array>(hi.data(), m));
  auto terms = ad::add(ad::abs_(ad::sub(t, lo_c)), ad::abs_(ad::sub(t, hi_c)));
  return ad::scale(ad::sum(terms), 1.0 / static_cast<double>(n));
}

LossReport total_loss(const LossReport& parts, const LossConfig& cfg) {
  LossReport out = parts;
  const std::pair<const char*, double> named[] = {
      {"l_iou", parts.l_iou}, {"l_obj", parts.l_obj}, {"l_adv", parts.l_adv},
      {"l_tv", parts.l_tv},   {"l_nps", parts.l_nps}, {"l_cr", parts.l_cr}};
  for (const auto& [name, v] : named)
    if (!std::isfinite(v))
      throw Error("losses", std::string("non-finite loss part: ") + name);
  out.total = parts.l_adv + cfg.gamma * parts.l_tv + cfg.mu * parts.l_nps + cfg.tau * parts.l_cr;
  return out;
}

std::vector<Eigen::Vector3d> load_palette(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("losses", "cannot open palette file: " + path);
  std::vector<Eigen::Vector3d> palette;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    double r, g, b;
    if (!(ls >> r)) continue;  // blank or comment-only line
    if (!(ls >> g >> b))
      throw Error("losses", "palette line " + std::to_string(line_no) + " needs 3 values");
    for (double v : {r, g, b})
      if (v < 0.0 || v > 1.0)
        throw Error("losses", "palette line " + std::to_string(line_no) + " outside [0,1]");
    palette.emplace_back(r, g, b);
  }
  if (palette.empty()) throw Error("losses", "palette file has no colors: " + path);
  return palette;
}

void save_palette(const std::vector<Eigen::Vector3d>& palette, const std::string& path) {
  if (palette.empty()) throw Error("losses", "refusing to write an empty palette");
  std::ofstream out(path);
  if (!out) throw Error("losses", "cannot write palette file: " + path);
  for (const auto& p : palette) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
  if (!out) throw Error("losses", "write failed: " + path);
}

}  // namespace camo
