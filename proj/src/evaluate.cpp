#include "camo/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "camo/losses.hpp"

namespace camo {

namespace {

constexpr double kConfThreshold = 0.5;

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

void SweepGrid::validate() const {
  if (distances.empty() || pitches.empty())
    throw Error("evaluate", "sweep grid needs at least one distance and one pitch");
  for (double d : distances)
    if (!(d > 0.0)) throw Error("evaluate", "sweep distances must be positive");
  if (!(azimuth_step > 0.0) || std::abs(std::round(360.0 / azimuth_step) * azimuth_step - 360.0) > 1e-9)
    throw Error("evaluate", "azimuth_step must divide 360");
  for (double f : occlusion_fractions)
    if (f < 0.0 || f >= 1.0) throw Error("evaluate", "occlusion fractions must be in [0,1)");
  for (double r : reflectances)
    if (!(r > 0.0)) throw Error("evaluate", "reflectances must be positive");
}

std::vector<double> SweepGrid::azimuths() const {
  std::vector<double> out;
  for (double a = 0.0; a < 360.0 - 1e-9; a += azimuth_step) out.push_back(a);
  return out;
}

void EvalReport::add(const std::string& metric, const std::string& cell, double value,
                     long image_count, const std::string& source) {
  rows.push_back({metric, cell, value, image_count, source});
}

bool EvalReport::has(const std::string& metric, const std::string& cell) const {
  return std::any_of(rows.begin(), rows.end(), [&](const EvalRow& r) {
    return r.metric == metric && r.cell == cell;
  });
}

double EvalReport::value_of(const std::string& metric, const std::string& cell) const {
  for (const auto& r : rows)
    if (r.metric == metric && r.cell == cell) return r.value;
  throw Error("evaluate", "report has no row " + metric + " / " + cell);
}

namespace {

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Reads one CSV field, handling doubled-quote escapes.
std::string csv_field(const std::string& line, std::size_t& pos) {
  std::string out;
  if (pos < line.size() && line[pos] == '"') {
    ++pos;
    while (pos < line.size()) {
      if (line[pos] == '"' && pos + 1 < line.size() && line[pos + 1] == '"') {
        out += '"';
        pos += 2;
      } else if (line[pos] == '"') {
        ++pos;
        break;
      } else {
        out += line[pos++];
      }
    }
  } else {
    while (pos < line.size() && line[pos] != ',') out += line[pos++];
  }
  if (pos < line.size() && line[pos] == ',') ++pos;
  return out;
}

}  // namespace

void EvalReport::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("evaluate", "cannot write report: " + path);
  os << "metric,cell,value,image_count,source\n";
  os.precision(17);
  for (const auto& r : rows)
    os << csv_quote(r.metric) << ',' << csv_quote(r.cell) << ',' << r.value << ','
       << r.image_count << ',' << csv_quote(r.source) << '\n';
  if (!os) throw Error("evaluate", "write failed: " + path);
}

EvalReport EvalReport::read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("evaluate", "cannot open report: " + path);
  EvalReport out;
  std::string line;
  if (!std::getline(is, line) || line.rfind("metric,", 0) != 0)
    throw Error("evaluate", "not a report CSV: " + path);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t pos = 0;
    EvalRow r;
    r.metric = csv_field(line, pos);
    r.cell = csv_field(line, pos);
    r.value = std::stod(csv_field(line, pos));
    r.image_count = std::stol(csv_field(line, pos));
    r.source = csv_field(line, pos);
    out.rows.push_back(std::move(r));
  }
  return out;
}

void EvalReport::write_summary_json(const std::string& path) const {
  nlohmann::json doc;
  doc["schema"] = "camokit-eval-report";
  doc["schema_version"] = 1;
  auto arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"metric", r.metric},
                   {"cell", r.cell},
                   {"value", r.value},
                   {"image_count", r.image_count},
                   {"source", r.source}});
  doc["rows"] = arr;
  std::ofstream os(path);
  if (!os) throw Error("evaluate", "cannot write summary: " + path);
  os << doc.dump(2) << '\n';
  if (!os) throw Error("evaluate", "write failed: " + path);
}

double ap50(const std::vector<DetectionSet>& predictions,
            const std::vector<std::vector<GroundTruth>>& gts, double iou_threshold) {
  if (predictions.size() != gts.size())
    throw Error("evaluate", "predictions and ground truths must pair up per image");
  long total_gt = 0;
  for (const auto& g : gts) total_gt += static_cast<long>(g.size());
  if (total_gt == 0) throw Error("evaluate", "no ground truth boxes to score against");

  struct Cand {
    double conf;
    int image;
    int index;
  };
  std::vector<Cand> pool;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    for (std::size_t k = 0; k < predictions[i].detections.size(); ++k)
      pool.push_back({predictions[i].detections[k].confidence, static_cast<int>(i),
                      static_cast<int>(k)});
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Cand& a, const Cand& b) { return a.conf > b.conf; });

  std::vector<std::vector<bool>> taken;
  taken.reserve(gts.size());
  for (const auto& g : gts) taken.emplace_back(g.size(), false);

  std::vector<double> precision, recall;
  long tp = 0, fp = 0;
  for (const auto& c : pool) {
    const auto& det = predictions[static_cast<std::size_t>(c.image)]
                          .detections[static_cast<std::size_t>(c.index)];
    const auto& img_gts = gts[static_cast<std::size_t>(c.image)];
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < img_gts.size(); ++g) {
      if (taken[static_cast<std::size_t>(c.image)][g]) continue;
      if (img_gts[g].class_id != det.class_id) continue;
      const double v = iou(det.box, img_gts[g].box);
      if (v >= best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(c.image)][static_cast<std::size_t>(best)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }

  // All-point interpolation: precision envelope from the right, then the
  // recall steps integrated in confidence order.
  std::vector<double> envelope(precision.size(), 0.0);
  double p_max = 0.0;
  for (std::size_t i = precision.size(); i-- > 0;) {
    p_max = std::max(p_max, precision[i]);
    envelope[i] = p_max;
  }
  double ap = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    const double r_prev = i > 0 ? recall[i - 1] : 0.0;
    ap += (recall[i] - r_prev) * envelope[i];
  }
  return ap;
}

namespace {

double max_confidence(const Detector& detector, const Image& image) {
  double m = 0.0;
  for (const auto& d : detector.detect(image).detections) m = std::max(m, d.confidence);
  return m;
}

double asr_of(const std::vector<double>& max_confs, double threshold) {
  long ok = 0;
  for (double c : max_confs)
    if (c < threshold) ++ok;
  return 100.0 * static_cast<double>(ok) / static_cast<double>(max_confs.size());
}

Image render_over(const TriMesh& mesh, const Image& texture, const Environment& env,
                  const ScenePose& pose, const Image& background, int res) {
  const auto frags = rasterize(mesh, pose, res, res);
  return composite(shade_phong(frags, mesh, texture, env),
                   resize_bilinear(background, res, res));
}

}  // namespace

double asr(const std::vector<Image>& images, const Detector& detector, double conf_threshold) {
  if (images.empty()) throw Error("evaluate", "attack success rate over zero images");
  std::vector<double> confs;
  confs.reserve(images.size());
  for (const auto& img : images) confs.push_back(max_confidence(detector, img));
  return asr_of(confs, conf_threshold);
}

EvalReport pose_sweep(const TriMesh& mesh, const Image& texture, const Environment& env,
                      const SweepGrid& grid, const Detector& detector) {
  grid.validate();
  env.validate();
  const int res = detector.input_resolution();
  const Image plain(res, res, 3, 0.5);
  const auto azs = grid.azimuths();

  struct Sample {
    std::size_t d, p, a;
    double conf;
  };
  std::vector<Sample> samples;
  for (std::size_t di = 0; di < grid.distances.size(); ++di)
    for (std::size_t pi = 0; pi < grid.pitches.size(); ++pi)
      for (std::size_t ai = 0; ai < azs.size(); ++ai) {
        const ScenePose pose{grid.pitches[pi], azs[ai], grid.distances[di]};
        const double conf =
            max_confidence(detector, render_over(mesh, texture, env, pose, plain, res));
        samples.push_back({di, pi, ai, conf});
      }

  EvalReport report;
  auto asr_where = [&](auto&& keep) {
    std::vector<double> confs;
    for (const auto& s : samples)
      if (keep(s)) confs.push_back(s.conf);
    return std::pair<double, long>(asr_of(confs, kConfThreshold),
                                   static_cast<long>(confs.size()));
  };

  {
    auto [v, n] = asr_where([](const Sample&) { return true; });
    report.add("asr", "all", v, n);
  }
  for (std::size_t di = 0; di < grid.distances.size(); ++di) {
    auto [v, n] = asr_where([&](const Sample& s) { return s.d == di; });
    report.add("asr", "d=" + fmt(grid.distances[di]), v, n);
  }
  for (std::size_t pi = 0; pi < grid.pitches.size(); ++pi) {
    auto [v, n] = asr_where([&](const Sample& s) { return s.p == pi; });
    report.add("asr", "p=" + fmt(grid.pitches[pi]), v, n);
  }
  for (double bin = 0.0; bin < 360.0 - 1e-9; bin += 45.0) {
    auto [v, n] = asr_where([&](const Sample& s) {
      return azs[s.a] >= bin && azs[s.a] < bin + 45.0;
    });
    if (n > 0) report.add("asr", "a=" + fmt(bin) + "-" + fmt(bin + 45.0), v, n);
  }
  for (const auto& s : samples)
    report.add("max_confidence",
               "d=" + fmt(grid.distances[s.d]) + ";p=" + fmt(grid.pitches[s.p]) +
                   ";a=" + fmt(azs[s.a]),
               s.conf, 1);
  return report;
}

Image occlude(const Image& image, const GroundTruth& gt, double fraction) {
  if (fraction < 0.0 || fraction >= 1.0)
    throw Error("evaluate", "occlusion fraction must be in [0,1)");
  if (fraction == 0.0) return image;
  if (!gt.box.valid()) throw Error("evaluate", "occlude needs a valid target box");
  const Eigen::Vector3d fill = background_mean_color(image, gt.box);
  Image out = image;
  const double x_hi = gt.box.x1 + fraction * gt.box.width();
  for (int y = 0; y < out.height; ++y) {
    const double cy = y + 0.5;
    if (cy < gt.box.y1 || cy >= gt.box.y2) continue;
    for (int x = 0; x < out.width; ++x) {
      const double cx = x + 0.5;
      if (cx < gt.box.x1 || cx >= x_hi) continue;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = fill[c];
    }
  }
  return out;
}

namespace {

// Shared pose x background grid for the occlusion and reflectance
// experiments. Visits cells in deterministic row-major order.
template <typename Fn>
long for_each_scene(const SweepGrid& grid, const std::vector<Image>& backgrounds, Fn&& fn) {
  const auto azs = grid.azimuths();
  long count = 0;
  for (double d : grid.distances)
    for (double p : grid.pitches)
      for (double a : azs)
        for (const auto& bg : backgrounds) {
          fn(ScenePose{p, a, d}, bg);
          ++count;
        }
  return count;
}

}  // namespace

EvalReport occlusion_sweep(const TriMesh& mesh, const Image& texture, const Environment& env,
                           const std::vector<Image>& backgrounds, const SweepGrid& grid,
                           const Detector& detector) {
  grid.validate();
  env.validate();
  if (backgrounds.empty()) throw Error("evaluate", "occlusion sweep needs backgrounds");
  if (grid.occlusion_fractions.empty())
    throw Error("evaluate", "occlusion sweep needs occlusion fractions");
  const int res = detector.input_resolution();

  EvalReport report;
  std::vector<std::pair<double, double>> fraction_asr;
  for (double fraction : grid.occlusion_fractions) {
    std::vector<double> confs;
    for_each_scene(grid, backgrounds, [&](const ScenePose& pose, const Image& bg) {
      Image img = render_over(mesh, texture, env, pose, bg, res);
      img = occlude(img, project_gt_box(mesh, pose, res, res), fraction);
      confs.push_back(max_confidence(detector, img));
    });
    const double v = asr_of(confs, kConfThreshold);
    report.add("asr", "f=" + fmt(fraction), v, static_cast<long>(confs.size()));
    fraction_asr.emplace_back(fraction, v);
  }

  const std::pair<const char*, std::pair<double, double>> categories[] = {
      {"small", {0.1, 0.3}}, {"middle", {0.4, 0.6}}, {"large", {0.7, 0.9}}};
  for (const auto& [name, range] : categories) {
    double sum = 0.0;
    long n = 0;
    for (const auto& [f, v] : fraction_asr)
      if (f >= range.first - 1e-9 && f <= range.second + 1e-9) {
        sum += v;
        ++n;
      }
    if (n > 0) report.add("asr", std::string("category=") + name, sum / n, n);
  }
  return report;
}

EvalReport reflectance_sweep(const TriMesh& mesh, const Image& texture, const Environment& env,
                             const std::vector<Image>& backgrounds, const SweepGrid& grid,
                             const std::vector<double>& reflectances, const Detector& detector) {
  grid.validate();
  env.validate();
  if (backgrounds.empty()) throw Error("evaluate", "reflectance sweep needs backgrounds");
  if (reflectances.empty()) throw Error("evaluate", "reflectance sweep needs values");
  const int res = detector.input_resolution();

  EvalReport report;
  for (double r : reflectances) {
    if (!(r > 0.0)) throw Error("evaluate", "reflectances must be positive");
    Environment lit = env;
    lit.diffuse_color = r;
    std::vector<double> confs;
    for_each_scene(grid, backgrounds, [&](const ScenePose& pose, const Image& bg) {
      confs.push_back(max_confidence(detector, render_over(mesh, texture, lit, pose, bg, res)));
    });
    report.add("asr", "r=" + fmt(r), asr_of(confs, kConfThreshold),
               static_cast<long>(confs.size()));
  }
  return report;
}

double csim(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw Error("evaluate", "csim needs images of one resolution");
  if (a.empty()) throw Error("evaluate", "csim on empty images");
  constexpr int kBins = 32;
  const auto histogram = [&](const Image& img, int channel) {
    Eigen::ArrayXd h = Eigen::ArrayXd::Zero(kBins);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const double v = std::clamp(img.at(y, x, channel), 0.0, 1.0);
        h[std::min(kBins - 1, static_cast<int>(v * kBins))] += 1.0;
      }
    return (h / h.sum()).eval();
  };
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    const auto ha = histogram(a, c), hb = histogram(b, c);
    const double bc = (ha * hb).sqrt().sum();
    total += std::sqrt(std::max(0.0, 1.0 - bc));
  }
  return total / a.channels;
}

double ssim(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width)
    throw Error("evaluate", "ssim needs images of one resolution");
  if (a.empty()) throw Error("evaluate", "ssim on empty images");
  const Image ga = a.channels == 3 ? to_grayscale(a) : a;
  const Image gb = b.channels == 3 ? to_grayscale(b) : b;

  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;

  const bool windowed = ga.height >= kWin && ga.width >= kWin;
  const int wh = windowed ? kWin : ga.height;
  const int ww = windowed ? kWin : ga.width;
  std::vector<double> weight(static_cast<std::size_t>(wh) * ww, 1.0);
  if (windowed) {
    for (int i = 0; i < kWin; ++i)
      for (int j = 0; j < kWin; ++j) {
        const double dy = i - (kWin - 1) / 2.0, dx = j - (kWin - 1) / 2.0;
        weight[static_cast<std::size_t>(i) * kWin + j] =
            std::exp(-(dx * dx + dy * dy) / (2.0 * kSigma * kSigma));
      }
  }
  double wsum = 0.0;
  for (double w : weight) wsum += w;
  for (double& w : weight) w /= wsum;

  double total = 0.0;
  long windows = 0;
  for (int y0 = 0; y0 + wh <= ga.height; ++y0)
    for (int x0 = 0; x0 + ww <= ga.width; ++x0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < wh; ++i)
        for (int j = 0; j < ww; ++j) {
          const double w = weight[static_cast<std::size_t>(i) * ww + j];
          const double px = ga.at(y0 + i, x0 + j, 0), py = gb.at(y0 + i, x0 + j, 0);
          mx += w * px;
          my += w * py;
          sxx += w * px * px;
          syy += w * py * py;
          sxy += w * px * py;
        }
      sxx -= mx * mx;
      syy -= my * my;
      sxy -= mx * my;
      total += ((2 * mx * my + kC1) * (2 * sxy + kC2)) /
               ((mx * mx + my * my + kC1) * (sxx + syy + kC2));
      ++windows;
    }
  return total / static_cast<double>(windows);
}

}  // namespace camo
