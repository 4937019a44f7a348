// Quantitative evaluation: detection AP, attack success rate, pose /
// occlusion / reflectance robustness sweeps, and color/structure
// concealment metrics.
#pragma once

#include <string>
#include <vector>

#include "camo/detect.hpp"
#include "camo/geometry.hpp"
#include "camo/image.hpp"
#include "camo/render.hpp"

namespace camo {

struct SweepGrid {
  std::vector<double> distances{5, 50};
  std::vector<double> pitches{0, 40};  // elevation degrees
  double azimuth_step = 45.0;          // must divide 360
  std::vector<double> occlusion_fractions{0.0, 0.2, 0.5, 0.8};
  std::vector<double> reflectances{1, 3, 5, 10, 15};

  void validate() const;                 // throws Error("evaluate", ...)
  std::vector<double> azimuths() const;  // 0, step, ..., 360 - step
};

// One measured (or reference) number: a metric evaluated on a grid cell over
// some number of images. Reference rows carry values from published tables
// and are never produced by local computation.
struct EvalRow {
  std::string metric;
  std::string cell;
  double value = 0.0;
  long image_count = 0;
  std::string source = "measured";
};

struct EvalReport {
  std::vector<EvalRow> rows;

  void add(const std::string& metric, const std::string& cell, double value, long image_count,
           const std::string& source = "measured");
  bool has(const std::string& metric, const std::string& cell) const;
  double value_of(const std::string& metric, const std::string& cell) const;  // throws if absent

  void write_csv(const std::string& path) const;
  void write_summary_json(const std::string& path) const;
  static EvalReport read_csv(const std::string& path);
};

// Average precision at the given IOU threshold. Detections are pooled over
// images, sorted by confidence, matched greedily to unmatched ground truths
// of the same class, and the precision-recall curve is integrated with
// all-point interpolation. gts[i] lists the targets in image i (possibly
// none). Throws when no image has any ground truth.
double ap50(const std::vector<DetectionSet>& predictions,
            const std::vector<std::vector<GroundTruth>>& gts, double iou_threshold = 0.5);

// Percentage of images whose every candidate confidence is below the
// threshold. An image with no candidates counts as a success.
double asr(const std::vector<Image>& images, const Detector& detector,
           double conf_threshold = 0.5);

// ASR over each distance, each pitch, and each 45-degree azimuth bin of the
// full distance x pitch x azimuth pose grid, rendered over a plain mid-gray
// background at the detector's input resolution. Raw per-pose max
// confidences are included for re-binning.
EvalReport pose_sweep(const TriMesh& mesh, const Image& texture, const Environment& env,
                      const SweepGrid& grid, const Detector& detector);

// Replaces the leftmost fraction of the target box's columns with the
// background mean color sampled from the ring around the box.
Image occlude(const Image& image, const GroundTruth& gt, double fraction);

// ASR per occlusion fraction (and per category: small 0.1-0.3, middle
// 0.4-0.6, large 0.7-0.9) over the pose grid x backgrounds, occluding each
// rendered image at the projected target box.
EvalReport occlusion_sweep(const TriMesh& mesh, const Image& texture, const Environment& env,
                           const std::vector<Image>& backgrounds, const SweepGrid& grid,
                           const Detector& detector);

// ASR per diffuse reflectance value over the same grid as the occlusion
// experiment, without occlusion.
EvalReport reflectance_sweep(const TriMesh& mesh, const Image& texture, const Environment& env,
                             const std::vector<Image>& backgrounds, const SweepGrid& grid,
                             const std::vector<double>& reflectances, const Detector& detector);

// Color-similarity distance: per-channel 32-bin normalized histograms,
// Bhattacharyya distance sqrt(1 - BC) per channel, averaged. 0 means
// identical color distributions; bounded by [0,1].
double csim(const Image& a, const Image& b);

// Mean structural similarity over 11x11 Gaussian windows (sigma 1.5) of the
// luminance images, standard stabilizers, in [-1,1].
double ssim(const Image& a, const Image& b);

}  // namespace camo
