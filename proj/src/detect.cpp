#include "camo/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "camo/evaluate.hpp"
#include "camo/losses.hpp"

namespace camo {

DiffDetections Detector::detect_ad(const ad::Ptr&) const {
  throw Error("detect", name() + " does not expose differentiable detections");
}

DetectionSet DiffDetections::snapshot() const {
  DetectionSet out;
  out.differentiable = true;
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    Detection d;
    d.confidence = confidence[i]->value[0];
    d.box = {boxes[i][0]->value[0], boxes[i][1]->value[0], boxes[i][2]->value[0],
             boxes[i][3]->value[0]};
    d.class_id = class_ids[i];
    out.detections.push_back(d);
  }
  return out;
}

namespace {

std::map<std::string, DetectorFactory>& registry() {
  static std::map<std::string, DetectorFactory> r;
  return r;
}

}  // namespace

void register_detector(const std::string& name, DetectorFactory factory) {
  if (!factory) throw Error("detect", "null detector factory for '" + name + "'");
  registry()[name] = std::move(factory);
}

std::shared_ptr<Detector> make_detector(const std::string& name,
                                        const std::string& weights_path) {
  auto it = registry().find(name);
  if (it == registry().end()) {
    std::string known;
    for (const auto& [n, _] : registry()) known += (known.empty() ? "" : ", ") + n;
    throw Error("detect", "unknown detector '" + name + "' (registered: " + known + ")");
  }
  return it->second(weights_path);
}

std::vector<std::string> registered_detector_names() {
  std::vector<std::string> names;
  for (const auto& [n, _] : registry()) names.push_back(n);
  return names;
}

namespace {

constexpr int kKernel = 3;
constexpr int kGroups = 8;
constexpr double kLeakySlope = 0.1;
constexpr int kHeadChannels = 5;  // objectness, tx, ty, tw, th

const bool kToyRegistered = [] {
  register_detector("toy", [](const std::string& weights_path) {
    return std::make_shared<ToyDetector>(ToyDetector::load(weights_path));
  });
  return true;
}();

double sigmoid_scalar(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

ToyDetector::ToyDetector(int input_resolution, std::uint64_t seed) : input_res_(input_resolution) {
  if (input_res_ < kStride || input_res_ % kStride != 0)
    throw Error("detect", "input resolution must be a positive multiple of " +
                              std::to_string(kStride));
  channels_ = {3, 16, 32, 64, 64, 64};

  Rng rng = Rng::stream(seed, "toy-detector-init");
  auto normal_leaf = [&](ad::Shape shape, double stddev) {
    ad::Array v(ad::shape_size(shape));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
    return ad::leaf(std::move(shape), std::move(v));
  };
  auto fill_leaf = [&](ad::Shape shape, double value) {
    return ad::leaf(std::move(shape), ad::Array::Constant(ad::shape_size(shape), value));
  };

  for (std::size_t b = 0; b + 1 < channels_.size(); ++b) {
    const int ci = channels_[b], co = channels_[b + 1];
    const double stddev = std::sqrt(2.0 / (ci * kKernel * kKernel));
    params_.push_back(normal_leaf({co, ci, kKernel, kKernel}, stddev));  // conv weight
    params_.push_back(fill_leaf({co}, 0.0));                            // conv bias
    params_.push_back(fill_leaf({co}, 1.0));                            // norm gain
    params_.push_back(fill_leaf({co}, 0.0));                            // norm shift
  }
  const int cl = channels_.back();
  params_.push_back(normal_leaf({kHeadChannels, cl, 1, 1}, 0.01));  // head weight
  params_.push_back(fill_leaf({kHeadChannels}, 0.0));               // head bias
}

ad::Ptr ToyDetector::forward(const ad::Ptr& image) const {
  if (image->shape.size() != 3 || image->shape[0] != 3 || image->shape[1] != input_res_ ||
      image->shape[2] != input_res_)
    throw Error("detect", "toy detector expects a [3," + std::to_string(input_res_) + "," +
                              std::to_string(input_res_) + "] image tensor");
  ad::Ptr x = image;
  std::size_t p = 0;
  for (std::size_t b = 0; b + 1 < channels_.size(); ++b) {
    x = ad::conv2d(x, params_[p], params_[p + 1], /*stride=*/2, /*pad=*/1);
    x = ad::group_norm(x, params_[p + 2], params_[p + 3], kGroups);
    x = ad::leaky_relu(x, kLeakySlope);
    p += 4;
  }
  return ad::conv2d(x, params_[p], params_[p + 1], /*stride=*/1, /*pad=*/0);
}

DiffDetections ToyDetector::detect_ad(const ad::Ptr& image) const {
  const auto head = forward(image);
  const int g = grid();
  const int plane = g * g;
  DiffDetections out;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      const int cell = i * g + j;
      auto conf = ad::sigmoid(ad::pick(head, cell));
      if (conf->value[0] <= kConfidenceFloor) continue;
      auto cx = ad::add_scalar(ad::scale(ad::sigmoid(ad::pick(head, plane + cell)), kStride),
                               static_cast<double>(j) * kStride);
      auto cy = ad::add_scalar(ad::scale(ad::sigmoid(ad::pick(head, 2 * plane + cell)), kStride),
                               static_cast<double>(i) * kStride);
      auto hw = ad::scale(ad::sigmoid(ad::pick(head, 3 * plane + cell)), 0.5 * input_res_);
      auto hh = ad::scale(ad::sigmoid(ad::pick(head, 4 * plane + cell)), 0.5 * input_res_);
      out.confidence.push_back(conf);
      out.boxes.push_back({ad::sub(cx, hw), ad::sub(cy, hh), ad::add(cx, hw), ad::add(cy, hh)});
      out.class_ids.push_back(0);
    }
  return out;
}

DetectionSet ToyDetector::detect(const Image& image) const {
  if (image.channels != 3 || image.empty())
    throw Error("detect", "toy detector expects a non-empty RGB image");
  const Image sized = resize_bilinear(image, input_res_, input_res_);
  const double sx = static_cast<double>(image.width) / input_res_;
  const double sy = static_cast<double>(image.height) / input_res_;

  const auto head = forward(ad::tensor_from_image(sized));
  const int g = grid();
  const int plane = g * g;
  DetectionSet out;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      const int cell = i * g + j;
      const double conf = sigmoid_scalar(head->value[cell]);
      if (conf <= kConfidenceFloor) continue;
      const double cx = (j + sigmoid_scalar(head->value[plane + cell])) * kStride;
      const double cy = (i + sigmoid_scalar(head->value[2 * plane + cell])) * kStride;
      const double w = sigmoid_scalar(head->value[3 * plane + cell]) * input_res_;
      const double h = sigmoid_scalar(head->value[4 * plane + cell]) * input_res_;
      Detection d;
      d.box = {sx * (cx - 0.5 * w), sy * (cy - 0.5 * h), sx * (cx + 0.5 * w),
               sy * (cy + 0.5 * h)};
      d.confidence = conf;
      d.class_id = 0;
      out.detections.push_back(d);
    }
  return out;
}

namespace {

constexpr char kWeightsMagic[] = "camokit-toy-detector-v1";

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void ToyDetector::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("detect", "cannot write weights file: " + path);
  os << kWeightsMagic << '\n';
  write_u32(os, static_cast<std::uint32_t>(input_res_));
  write_u32(os, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    write_u32(os, static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) throw Error("detect", "write failed: " + path);
}

ToyDetector ToyDetector::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("detect", "cannot open weights file: " + path);
  std::string magic;
  std::getline(is, magic);
  if (magic != kWeightsMagic) throw Error("detect", "unrecognized weights format: " + path);
  const int res = static_cast<int>(read_u32(is));
  const auto count = read_u32(is);
  ToyDetector det(res);
  if (count != det.params_.size())
    throw Error("detect", "weights file parameter count mismatch: " + path);
  for (auto& p : det.params_) {
    const auto ndim = read_u32(is);
    ad::Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    if (shape != p->shape) throw Error("detect", "weights file shape mismatch: " + path);
    is.read(reinterpret_cast<char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!is) throw Error("detect", "truncated weights file: " + path);
  return det;
}

namespace {

// Objectness BCE over every cell plus squared error on the box offsets at
// the target's cell. Positive cells are upweighted so one target is not
// drowned out by the negatives.
ad::Ptr toy_scene_loss(const ToyDetector& det, const LabeledScene& scene) {
  const auto head = det.forward(ad::tensor_from_image(scene.image));
  const int g = det.grid();
  const int plane = g * g;

  std::vector<int> obj_idx(static_cast<std::size_t>(plane));
  std::iota(obj_idx.begin(), obj_idx.end(), 0);
  ad::Array targets = ad::Array::Zero(plane);
  ad::Array weights = ad::Array::Ones(plane);

  ad::Ptr box_term;
  if (scene.has_target) {
    const double cx = 0.5 * (scene.gt.box.x1 + scene.gt.box.x2);
    const double cy = 0.5 * (scene.gt.box.y1 + scene.gt.box.y2);
    const int j = std::clamp(static_cast<int>(cx / ToyDetector::kStride), 0, g - 1);
    const int i = std::clamp(static_cast<int>(cy / ToyDetector::kStride), 0, g - 1);
    const int cell = i * g + j;
    targets[cell] = 1.0;
    weights[cell] = static_cast<double>(plane);

    const double res = det.input_resolution();
    const double want[4] = {cx / ToyDetector::kStride - j, cy / ToyDetector::kStride - i,
                            std::min(1.0, scene.gt.box.width() / res),
                            std::min(1.0, scene.gt.box.height() / res)};
    for (int c = 0; c < 4; ++c) {
      auto err = ad::add_scalar(ad::sigmoid(ad::pick(head, (c + 1) * plane + cell)), -want[c]);
      auto sq = ad::square(err);
      box_term = box_term ? ad::add(box_term, sq) : sq;
    }
  }

  auto obj = ad::sum(ad::bce_with_logits(ad::gather(head, obj_idx), targets, weights));
  auto loss = ad::scale(obj, 1.0 / plane);
  if (box_term) loss = ad::add(loss, ad::scale(box_term, 5.0));
  return loss;
}

}  // namespace

ToyDetector toy_detector_train(const std::vector<LabeledScene>& scenes, int epochs,
                               std::uint64_t seed, double lr, double val_fraction,
                               double ap_gate, ToyTrainReport* report) {
  if (scenes.empty()) throw Error("detect", "no training scenes given");
  if (epochs < 0) throw Error("detect", "epochs must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw Error("detect", "val_fraction must be in (0,1)");
  const int res = scenes.front().image.height;
  for (const auto& s : scenes)
    if (s.image.height != res || s.image.width != res || s.image.channels != 3)
      throw Error("detect", "all scenes must be square RGB images of one resolution");

  Rng rng = Rng::stream(seed, "toy-detector-train");
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                  std::llround(val_fraction * scenes.size())));
  if (n_val >= scenes.size())
    throw Error("detect", "not enough scenes to split off a validation set; add more data");
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<long>(n_val), order.end());
  const bool val_has_target =
      std::any_of(val.begin(), val.end(), [&](std::size_t i) { return scenes[i].has_target; });
  if (!val_has_target)
    throw Error("detect", "validation split has no target scenes; add more data");

  ToyDetector det(res, seed);
  ad::AdamState opt;
  opt.lr = lr;

  ToyTrainReport local;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = train.size(); i > 1; --i)
      std::swap(train[i - 1],
                train[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    double epoch_sum = 0.0;
    for (std::size_t idx : train) {
      auto loss = toy_scene_loss(det, scenes[idx]);
      ad::backward(loss);
      ad::adam_step(det.parameters(), opt);
      epoch_sum += loss->value[0];
    }
    local.epoch_loss.push_back(epoch_sum / static_cast<double>(train.size()));
  }
  local.epochs_run = epochs;

  std::vector<DetectionSet> preds;
  std::vector<std::vector<GroundTruth>> gts;
  for (std::size_t idx : val) {
    DetectionSet d = det.detect(scenes[idx].image);
    d.detections = nms(d.detections, 0.5);
    preds.push_back(std::move(d));
    gts.push_back(scenes[idx].has_target ? std::vector<GroundTruth>{scenes[idx].gt}
                                         : std::vector<GroundTruth>{});
  }
  local.val_ap50 = ap50(preds, gts);
  if (report) *report = local;
  if (local.val_ap50 < ap_gate) {
    std::ostringstream msg;
    msg << "validation AP@0.5 = " << local.val_ap50 << " is below the " << ap_gate
        << " gate; increase epochs or training scenes";
    throw Error("detect", msg.str());
  }
  return det;
}

GroundTruth project_gt_box(const TriMesh& mesh, const ScenePose& pose, int height, int width,
                           double fov_deg) {
  const auto projected = project_vertices(mesh, pose, height, width, fov_deg);
  double x1 = std::numeric_limits<double>::infinity(), y1 = x1;
  double x2 = -x1, y2 = -y1;
  bool any = false;
  for (const auto& p : projected) {
    if (p[2] <= 1e-6) continue;
    any = true;
    x1 = std::min(x1, p[0]);
    y1 = std::min(y1, p[1]);
    x2 = std::max(x2, p[0]);
    y2 = std::max(y2, p[1]);
  }
  if (!any) throw Error("detect", "target not visible");
  GroundTruth gt;
  gt.box = {std::max(0.0, x1), std::max(0.0, y1), std::min<double>(width, x2),
            std::min<double>(height, y2)};
  if (!gt.box.valid()) throw Error("detect", "target not visible");
  return gt;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });
  std::vector<Detection> kept;
  for (std::size_t oi : order) {
    const auto& d = dets[oi];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou(k.box, d.box) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace camo
