// Composite attack objective: detection-suppression, smoothness,
// printability, and concealment terms with a weighted total.
#pragma once

#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "camo/ad.hpp"
#include "camo/detect.hpp"
#include "camo/geometry.hpp"
#include "camo/image.hpp"

namespace camo {

struct LossConfig {
  double alpha = 0.05;  // IOU term weight inside the detection loss
  double beta = 1.0;    // confidence term weight inside the detection loss
  double gamma = 1.0;   // smoothness weight
  double mu = 2.5;      // printability weight
  double tau = 2.0;     // concealment weight
  std::vector<Eigen::Vector3d> palette;  // printable colors, nonempty
  double c_ru = 0.15;   // per-channel color fluctuation threshold, (0, 0.5)

  void validate() const;  // throws Error("losses", ...)
};

struct LossReport {
  double l_iou = 0, l_obj = 0, l_adv = 0;
  double l_tv = 0, l_nps = 0, l_cr = 0;
  double total = 0;
};

double iou(const Box& a, const Box& b);

// l_iou = max IOU(gt, candidate), l_obj = max candidate confidence,
// l_adv = alpha*l_iou + beta*l_obj. Empty candidate set gives (0,0,0): the
// maxima over no boxes are taken as zero, the fully suppressed state.
// Candidates of other classes are ignored.
std::tuple<double, double, double> adv_loss(const DetectionSet& dets, const GroundTruth& gt,
                                            const LossConfig& cfg);

struct DiffAdvLoss {
  ad::Ptr value;  // scalar l_adv node
  double l_iou = 0, l_obj = 0, l_adv = 0;
};
DiffAdvLoss adv_loss_ad(const DiffDetections& dets, const GroundTruth& gt,
                        const LossConfig& cfg);

// Sum of |horizontal| + |vertical| forward differences where both pixels of
// the pair are masked, over all channels, divided by the mask pixel count.
double tv_loss(const Image& texture, const RegionMask& mask);
ad::Ptr tv_loss_ad(const ad::Ptr& texture, const RegionMask& mask);

// Per masked pixel, Euclidean RGB distance to the nearest palette color;
// summed and divided by the mask pixel count.
double nps_loss(const Image& texture, const RegionMask& mask,
                const std::vector<Eigen::Vector3d>& palette);
ad::Ptr nps_loss_ad(const ad::Ptr& texture, const RegionMask& mask,
                    const std::vector<Eigen::Vector3d>& palette);

// Per-channel mean over the ring formed by dilating the target box 50% per
// side and removing the box interior; whole image when box is absent or the
// ring is degenerate (with a warning).
Eigen::Vector3d background_mean_color(const Image& background, const std::optional<Box>& box);

// L_CR = (1/N_nz) * sum over masked pixels and channels of
// |t - u_l| + |t - u_h| with u_l/u_h = clamp01(c_r -+ c_ru).
double cr_loss(const Image& texture, const RegionMask& mask, const Eigen::Vector3d& c_r,
               double c_ru);
ad::Ptr cr_loss_ad(const ad::Ptr& texture, const RegionMask& mask, const Eigen::Vector3d& c_r,
                   double c_ru);

// total = l_adv + gamma*l_tv + mu*l_nps + tau*l_cr. Throws naming the first
// non-finite part.
LossReport total_loss(const LossReport& parts, const LossConfig& cfg);

std::vector<Eigen::Vector3d> load_palette(const std::string& path);
void save_palette(const std::vector<Eigen::Vector3d>& palette, const std::string& path);

}  // namespace camo
