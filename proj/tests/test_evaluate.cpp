#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "camo/evaluate.hpp"
#include "camo/losses.hpp"
#include "camo/rng.hpp"
#include "mesh_fixtures.hpp"

using camo::Box;
using camo::Detection;
using camo::DetectionSet;
using camo::EvalReport;
using camo::GroundTruth;
using camo::Image;
using camo::SweepGrid;

namespace {

// Reads its "confidence" out of the image's top-left pixel, which lets tests
// script detector behavior by painting that pixel.
class PixelDetector : public camo::Detector {
 public:
  explicit PixelDetector(int res = 32) : res_(res) {}
  std::string name() const override { return "pixel-stub"; }
  int input_resolution() const override { return res_; }
  bool differentiable() const override { return false; }
  DetectionSet detect(const Image& image) const override {
    DetectionSet out;
    const double conf = std::clamp(image.at(0, 0, 0), 0.0, 1.0);
    if (conf > 0.0) out.detections.push_back({{1, 1, 9, 9}, conf, 0});
    return out;
  }

 private:
  int res_ = 32;
};

Image conf_image(double conf) {
  Image img(8, 8, 3, 0.0);
  img.at(0, 0, 0) = conf;
  return img;
}

DetectionSet one_det(const Box& b, double conf, int cls = 0) {
  DetectionSet s;
  s.detections.push_back({b, conf, cls});
  return s;
}

// Independent AP: same greedy matching definition, but the envelope is built
// by an explicit quadratic scan instead of a running maximum.
double ap_oracle(const std::vector<DetectionSet>& preds,
                 const std::vector<std::vector<GroundTruth>>& gts, double thr) {
  struct Row {
    double conf;
    bool tp;
  };
  long total_gt = 0;
  for (const auto& g : gts) total_gt += static_cast<long>(g.size());

  std::vector<Row> rows;
  std::vector<std::vector<bool>> used;
  for (const auto& g : gts) used.emplace_back(g.size(), false);

  // Global confidence ordering with stable ties.
  std::vector<std::pair<double, std::pair<int, int>>> order;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t k = 0; k < preds[i].detections.size(); ++k)
      order.push_back({preds[i].detections[k].confidence,
                       {static_cast<int>(i), static_cast<int>(k)}});
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  for (const auto& [conf, ik] : order) {
    const auto& det = preds[static_cast<std::size_t>(ik.first)]
                          .detections[static_cast<std::size_t>(ik.second)];
    const auto& img_gts = gts[static_cast<std::size_t>(ik.first)];
    int best = -1;
    double best_v = thr;
    for (std::size_t g = 0; g < img_gts.size(); ++g) {
      if (used[static_cast<std::size_t>(ik.first)][g] ||
          img_gts[g].class_id != det.class_id)
        continue;
      const double v = camo::iou(det.box, img_gts[g].box);
      if (v >= best_v) {
        best_v = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) used[static_cast<std::size_t>(ik.first)][static_cast<std::size_t>(best)] = true;
    rows.push_back({conf, best >= 0});
  }

  std::vector<double> prec, rec;
  long tp = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].tp) ++tp;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  double ap = 0.0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    double env = 0.0;
    for (std::size_t j = i; j < prec.size(); ++j) env = std::max(env, prec[j]);
    const double r_prev = i > 0 ? rec[i - 1] : 0.0;
    ap += (rec[i] - r_prev) * env;
  }
  return ap;
}

}  // namespace

TEST_CASE("average precision endpoints and the three-detection micro case") {
  const GroundTruth gt{{10, 10, 20, 20}, 0};

  SUBCASE("perfect detections give AP 1") {
    std::vector<DetectionSet> preds(4, one_det(gt.box, 1.0));
    std::vector<std::vector<GroundTruth>> gts(4, {gt});
    CHECK(camo::ap50(preds, gts) == doctest::Approx(1.0));
  }

  SUBCASE("no detections give AP 0") {
    std::vector<DetectionSet> preds(3);
    std::vector<std::vector<GroundTruth>> gts(3, {gt});
    CHECK(camo::ap50(preds, gts) == 0.0);
  }

  SUBCASE("TP at 0.9, FP at 0.8, TP at 0.7 over three targets") {
    // PR points: (1/3, 1), (1/3, 1/2), (2/3, 2/3); all-point interpolation
    // integrates 1/3 * 1 + 1/3 * 2/3 = 5/9.
    std::vector<DetectionSet> preds = {one_det(gt.box, 0.9), one_det({50, 50, 60, 60}, 0.8),
                                       one_det(gt.box, 0.7)};
    std::vector<std::vector<GroundTruth>> gts(3, {gt});
    CHECK(camo::ap50(preds, gts) == doctest::Approx(5.0 / 9.0));
    CHECK(camo::ap50(preds, gts) == ap_oracle(preds, gts, 0.5));
  }

  SUBCASE("errors") {
    std::vector<DetectionSet> preds(2);
    CHECK_THROWS_AS(camo::ap50(preds, {{gt}}), camo::Error);
    CHECK_THROWS_AS(camo::ap50(preds, {{}, {}}), camo::Error);
  }
}

TEST_CASE("average precision matches the brute-force oracle") {
  camo::Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const int images = rng.uniform_int(1, 4);
    std::vector<DetectionSet> preds(static_cast<std::size_t>(images));
    std::vector<std::vector<GroundTruth>> gts(static_cast<std::size_t>(images));
    long total_gt = 0;
    for (int i = 0; i < images; ++i) {
      const int n_gt = rng.uniform_int(0, 3);
      for (int g = 0; g < n_gt; ++g) {
        const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
        gts[static_cast<std::size_t>(i)].push_back(
            {{x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20)}, rng.uniform_int(0, 1)});
        ++total_gt;
      }
      const int n_det = rng.uniform_int(0, 10);
      for (int d = 0; d < n_det; ++d) {
        const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
        preds[static_cast<std::size_t>(i)].detections.push_back(
            {{x, y, x + rng.uniform(5, 20), y + rng.uniform(5, 20)}, rng.uniform(),
             rng.uniform_int(0, 1)});
      }
    }
    if (total_gt == 0) {
      CHECK_THROWS_AS(camo::ap50(preds, gts), camo::Error);
      continue;
    }
    CHECK(camo::ap50(preds, gts) == ap_oracle(preds, gts, 0.5));
  }
}

TEST_CASE("attack success rate counts fully suppressed images") {
  PixelDetector det;

  SUBCASE("blank images succeed vacuously") {
    std::vector<Image> images(3, conf_image(0.0));
    CHECK(camo::asr(images, det) == doctest::Approx(100.0));
  }

  SUBCASE("strong detections fail every image") {
    std::vector<Image> images(5, conf_image(0.9));
    CHECK(camo::asr(images, det) == doctest::Approx(0.0));
  }

  SUBCASE("the mixed four-image case lands at 50") {
    std::vector<Image> images = {conf_image(0.4), conf_image(0.6), conf_image(0.49),
                                 conf_image(0.51)};
    CHECK(camo::asr(images, det) == doctest::Approx(50.0));
  }

  SUBCASE("raising the threshold never lowers the rate") {
    camo::Rng rng(23);
    std::vector<Image> images;
    for (int i = 0; i < 12; ++i) images.push_back(conf_image(rng.uniform()));
    double last = 0.0;
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      const double v = camo::asr(images, det, thr);
      CHECK(v >= last);
      last = v;
    }
  }

  SUBCASE("no images is an error") {
    CHECK_THROWS_AS(camo::asr({}, det), camo::Error);
  }
}

TEST_CASE("occlusion blanks the leading columns of the target box") {
  camo::Rng rng(29);
  Image img = testutil::noise_texture(128, 128, rng);
  const GroundTruth gt{{10, 20, 110, 90}, 0};

  SUBCASE("fraction zero is the identity, bitwise") {
    const Image out = camo::occlude(img, gt, 0.0);
    CHECK(out.pix == img.pix);
  }

  SUBCASE("half occlusion covers exactly half the columns") {
    const Image out = camo::occlude(img, gt, 0.5);
    const Eigen::Vector3d fill = camo::background_mean_color(img, gt.box);
    long changed_cols = 0;
    for (int x = 0; x < 128; ++x) {
      bool col_changed = false;
      for (int y = 0; y < 128; ++y)
        for (int c = 0; c < 3; ++c)
          if (out.at(y, x, c) != img.at(y, x, c)) col_changed = true;
      if (!col_changed) continue;
      ++changed_cols;
      CHECK(x + 0.5 >= gt.box.x1);
      CHECK(x + 0.5 < gt.box.x1 + 50.0);
      // Inside a changed column, rows within the box carry the fill color.
      for (int y = 0; y < 128; ++y) {
        const bool in_rows = y + 0.5 >= gt.box.y1 && y + 0.5 < gt.box.y2;
        for (int c = 0; c < 3; ++c) {
          if (in_rows)
            CHECK(out.at(y, x, c) == fill[c]);
          else
            CHECK(out.at(y, x, c) == img.at(y, x, c));
        }
      }
    }
    CHECK(changed_cols == 50);
  }

  SUBCASE("ninety percent occlusion covers ninety columns") {
    const Image out = camo::occlude(img, gt, 0.9);
    long changed_cols = 0;
    for (int x = 0; x < 128; ++x)
      for (int y = 0; y < 128; ++y)
        if (out.at(y, x, 0) != img.at(y, x, 0)) {
          ++changed_cols;
          break;
        }
    CHECK(changed_cols == 90);
  }

  SUBCASE("fraction bounds") {
    CHECK_THROWS_AS(camo::occlude(img, gt, 1.0), camo::Error);
    CHECK_THROWS_AS(camo::occlude(img, gt, -0.1), camo::Error);
  }
}

TEST_CASE("color similarity distance") {
  camo::Rng rng(31);
  const Image a = testutil::noise_texture(128, 128, rng);

  CHECK(camo::csim(a, a) == doctest::Approx(0.0));

  const Image black = testutil::constant_texture(32, 32, 0, 0, 0);
  const Image white = testutil::constant_texture(32, 32, 1, 1, 1);
  CHECK(camo::csim(black, white) == doctest::Approx(1.0));

  const Image b = testutil::noise_texture(128, 128, rng);
  CHECK(camo::csim(a, b) == doctest::Approx(camo::csim(b, a)));
  CHECK(camo::csim(a, b) >= 0.0);
  CHECK(camo::csim(a, b) < 0.05);  // same distribution, well-filled histograms

  CHECK_THROWS_AS(camo::csim(a, black), camo::Error);
}

TEST_CASE("structural similarity") {
  camo::Rng rng(37);
  const Image x = testutil::noise_texture(32, 32, rng, 0.2, 0.8);

  CHECK(camo::ssim(x, x) == doctest::Approx(1.0));

  Image inv = x;
  for (auto& v : inv.pix) v = 1.0 - v;
  CHECK(camo::ssim(x, inv) < 0.1);

  const Image flat = testutil::constant_texture(32, 32, 0.5, 0.5, 0.5);
  Image wiggle = flat;
  for (auto& v : wiggle.pix) v = std::clamp(v + 0.002 * rng.normal(), 0.0, 1.0);
  CHECK(camo::ssim(flat, wiggle) > 0.95);

  const Image y = testutil::noise_texture(32, 32, rng, 0.2, 0.8);
  CHECK(camo::ssim(x, y) == doctest::Approx(camo::ssim(y, x)));
  CHECK(camo::ssim(x, y) >= -1.0);
  CHECK(camo::ssim(x, y) <= 1.0);

  CHECK_THROWS_AS(camo::ssim(x, testutil::constant_texture(16, 16, 0, 0, 0)), camo::Error);
}

TEST_CASE("sweep grid validation") {
  SweepGrid grid;
  CHECK_NOTHROW(grid.validate());
  CHECK(grid.azimuths().size() == 8);

  grid.azimuth_step = 50.0;
  CHECK_THROWS_WITH_AS(grid.validate(), doctest::Contains("divide 360"), camo::Error);
  grid.azimuth_step = 3.0;
  CHECK(grid.azimuths().size() == 120);

  grid = SweepGrid();
  grid.distances.clear();
  CHECK_THROWS_AS(grid.validate(), camo::Error);
  grid = SweepGrid();
  grid.occlusion_fractions = {1.0};
  CHECK_THROWS_AS(grid.validate(), camo::Error);
  grid = SweepGrid();
  grid.reflectances = {0.0};
  CHECK_THROWS_AS(grid.validate(), camo::Error);
}

TEST_CASE("pose sweep covers the full grid") {
  const auto mesh = testutil::make_quad();
  const Image texture = testutil::constant_texture(16, 16, 0.3, 0.4, 0.5);
  camo::Environment env;
  SweepGrid grid;
  grid.distances = {5, 8};
  grid.pitches = {0, 30};
  grid.azimuth_step = 45.0;
  PixelDetector det;

  const auto report = camo::pose_sweep(mesh, texture, env, grid, det);

  long raw = 0, aggregates = 0;
  long raw_images = 0;
  for (const auto& r : report.rows) {
    if (r.metric == "max_confidence") {
      ++raw;
      raw_images += r.image_count;
    } else if (r.metric == "asr") {
      ++aggregates;
    }
    CHECK(r.source == "measured");
    if (r.metric == "asr") {
      CHECK(r.value >= 0.0);
      CHECK(r.value <= 100.0);
      CHECK(r.image_count > 0);
    }
  }
  CHECK(raw == 2 * 2 * 8);
  CHECK(raw_images == 32);
  // Aggregate rows: overall + 2 distances + 2 pitches + 8 azimuth bins.
  CHECK(aggregates == 1 + 2 + 2 + 8);
  CHECK(report.value_of("asr", "d=5") >= 0.0);
  CHECK(report.value_of("asr", "p=30") >= 0.0);
  CHECK(report.has("asr", "a=315-360"));
  CHECK(report.value_of("asr", "all") >= 0.0);
  // Each distance row aggregates pitches x azimuths.
  for (const auto& r : report.rows)
    if (r.metric == "asr" && r.cell.rfind("d=", 0) == 0) CHECK(r.image_count == 16);
}

TEST_CASE("occlusion and reflectance sweeps report one row per grid value") {
  const auto mesh = testutil::make_quad();
  const Image texture = testutil::constant_texture(16, 16, 0.6, 0.3, 0.2);
  camo::Environment env;
  SweepGrid grid;
  grid.distances = {5};
  grid.pitches = {10};
  grid.azimuth_step = 120.0;
  grid.occlusion_fractions = {0.0, 0.2, 0.5, 0.8};
  camo::Rng rng(41);
  const std::vector<Image> backgrounds = {testutil::noise_texture(32, 32, rng)};
  PixelDetector det;

  const auto occ = camo::occlusion_sweep(mesh, texture, env, backgrounds, grid, det);
  for (double f : grid.occlusion_fractions) {
    std::ostringstream cell;
    cell << "f=" << f;
    CHECK(occ.has("asr", cell.str()));
  }
  CHECK(occ.value_of("asr", "f=0") >= 0.0);
  CHECK(occ.has("asr", "category=small"));
  CHECK(occ.has("asr", "category=middle"));
  CHECK(occ.has("asr", "category=large"));
  for (const auto& r : occ.rows)
    if (r.cell.rfind("f=", 0) == 0) CHECK(r.image_count == 3);  // 1 x 1 x 3 azimuths x 1 bg

  const auto refl =
      camo::reflectance_sweep(mesh, texture, env, backgrounds, grid, {1, 3, 5, 10, 15}, det);
  long rows = 0;
  for (const auto& r : refl.rows)
    if (r.metric == "asr") {
      ++rows;
      CHECK(r.image_count == 3);
    }
  CHECK(rows == 5);
  CHECK(refl.has("asr", "r=1"));
  CHECK(refl.has("asr", "r=15"));

  SUBCASE("input validation") {
    CHECK_THROWS_AS(camo::occlusion_sweep(mesh, texture, env, {}, grid, det), camo::Error);
    CHECK_THROWS_AS(
        camo::reflectance_sweep(mesh, texture, env, backgrounds, grid, {}, det), camo::Error);
  }
}

TEST_CASE("report files round trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "camokit_evaluate_test";
  fs::create_directories(dir);

  EvalReport report;
  report.add("asr", "d=5;p=0;a=90", 62.5, 16);
  report.add("asr", "all", 43.75, 32);
  report.add("asr", "r=1", 97.91, 0, "published reference (full scale)");

  const auto csv = (dir / "report.csv").string();
  report.write_csv(csv);
  const auto back = EvalReport::read_csv(csv);
  REQUIRE(back.rows.size() == report.rows.size());
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    CHECK(back.rows[i].metric == report.rows[i].metric);
    CHECK(back.rows[i].cell == report.rows[i].cell);
    CHECK(back.rows[i].value == report.rows[i].value);
    CHECK(back.rows[i].image_count == report.rows[i].image_count);
    CHECK(back.rows[i].source == report.rows[i].source);
  }
  CHECK(back.value_of("asr", "all") == 43.75);
  CHECK_THROWS_AS(back.value_of("asr", "nowhere"), camo::Error);

  const auto summary = (dir / "summary.json").string();
  report.write_summary_json(summary);
  std::ifstream is(summary);
  const auto doc = nlohmann::json::parse(is);
  CHECK(doc["schema"] == "camokit-eval-report");
  CHECK(doc["rows"].size() == 3);
  const double row_value = doc["rows"][1]["value"].get<double>();
  CHECK(row_value == 43.75);

  CHECK_THROWS_AS(EvalReport::read_csv((dir / "absent.csv").string()), camo::Error);
}
