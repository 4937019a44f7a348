// Detector interface producing boxes and confidences from rendered scenes,
// with a built-in differentiable convolutional detector and a registry for
// external adapters.
#pragma once

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "camo/ad.hpp"
#include "camo/common.hpp"
#include "camo/image.hpp"
#include "camo/render.hpp"
#include "camo/rng.hpp"

namespace camo {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

struct Detection {
  Box box;
  double confidence = 0.0;  // in [0,1]
  int class_id = 0;
};

struct DetectionSet {
  std::vector<Detection> detections;
  bool differentiable = false;
};

struct GroundTruth {
  Box box;
  int class_id = 0;
};

// Candidate set with live graph nodes, for loss construction. Every entry is
// a scalar tensor; snapshot() freezes current values into a DetectionSet.
struct DiffDetections {
  std::vector<ad::Ptr> confidence;
  std::vector<std::array<ad::Ptr, 4>> boxes;  // x1, y1, x2, y2
  std::vector<int> class_ids;

  DetectionSet snapshot() const;
};

// Adapter protocol for victim detectors. detect() returns every candidate
// above the confidence floor, pre-NMS, because the attack-success metric is
// defined over all candidate boxes.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::string name() const = 0;
  virtual int input_resolution() const = 0;
  virtual bool differentiable() const = 0;
  virtual DetectionSet detect(const Image& image) const = 0;

  // Candidates with live graph nodes; only meaningful when differentiable()
  // is true. The default implementation refuses.
  virtual DiffDetections detect_ad(const ad::Ptr& image) const;
};

using DetectorFactory =
    std::function<std::shared_ptr<Detector>(const std::string& weights_path)>;
void register_detector(const std::string& name, DetectorFactory factory);
std::shared_ptr<Detector> make_detector(const std::string& name,
                                        const std::string& weights_path);
std::vector<std::string> registered_detector_names();

// Single-class convolutional detector: five stride-2 conv blocks (input
// stride 32 total) and a 1x1 head emitting objectness + box offsets per
// grid cell. The architecture is fixed so metric numbers stay comparable;
// weights files carry a format version string.
class ToyDetector : public Detector {
 public:
  static constexpr double kConfidenceFloor = 0.001;
  static constexpr int kStride = 32;

  explicit ToyDetector(int input_resolution = 128, std::uint64_t seed = 0);

  std::string name() const override { return "toy"; }
  int input_resolution() const override { return input_res_; }
  bool differentiable() const override { return true; }
  DetectionSet detect(const Image& image) const override;

  // image tensor [3,R,R]; candidates keep their graph so confidences and
  // boxes are differentiable with respect to the input image.
  DiffDetections detect_ad(const ad::Ptr& image) const override;

  void save(const std::string& path) const;
  static ToyDetector load(const std::string& path);

  int grid() const { return input_res_ / kStride; }
  std::vector<ad::Ptr>& parameters() { return params_; }
  const std::vector<ad::Ptr>& parameters() const { return params_; }

  // Raw head output [5, grid, grid] for training losses.
  ad::Ptr forward(const ad::Ptr& image) const;

 private:
  int input_res_ = 128;
  std::vector<ad::Ptr> params_;  // conv weights/biases + norm affines, fixed order
  std::vector<int> channels_;    // per-block widths, fixed by the format
};

struct LabeledScene {
  Image image;
  bool has_target = false;
  GroundTruth gt;
};

struct ToyTrainReport {
  double val_ap50 = 0.0;
  int epochs_run = 0;
  std::vector<double> epoch_loss;  // mean per epoch
};

// Trains on composited synthetic scenes; splits off a validation fraction
// and requires AP@0.5 >= gate on it. Throws Error("detect", ...) telling the
// caller to increase epochs or data when the gate is missed.
ToyDetector toy_detector_train(const std::vector<LabeledScene>& scenes, int epochs,
                               std::uint64_t seed, double lr = 1e-3,
                               double val_fraction = 0.2, double ap_gate = 0.9,
                               ToyTrainReport* report = nullptr);

// Tight axis-aligned box around the projected mesh vertices, clipped to the
// image bounds. Throws Error("detect", "target not visible") when every
// vertex projects outside the frame or behind the camera.
GroundTruth project_gt_box(const TriMesh& mesh, const ScenePose& pose, int height, int width,
                           double fov_deg = 60.0);

// Greedy confidence-ordered non-maximum suppression; used by AP-style
// metrics, never by the attack losses.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

}  // namespace camo
