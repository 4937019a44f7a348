#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "camo/losses.hpp"
#include "camo/rng.hpp"
#include "fd_check.hpp"

namespace ad = camo::ad;
using camo::Box;
using camo::Detection;
using camo::DetectionSet;
using camo::GroundTruth;
using camo::Image;
using camo::LossConfig;
using camo::RegionMask;

namespace {

LossConfig default_cfg() {
  LossConfig cfg;
  cfg.palette = {{0, 0, 0}, {1, 1, 1}};
  return cfg;
}

RegionMask make_mask(int h, int w, const std::vector<int>& on_pixels) {
  RegionMask m;
  m.mask = Image(h, w, 1, 0.0);
  for (int p : on_pixels) m.mask.at(p / w, p % w, 0) = 1.0;
  return m;
}

RegionMask full_mask(int h, int w) {
  RegionMask m;
  m.mask = Image(h, w, 1, 1.0);
  return m;
}

RegionMask random_mask(int h, int w, camo::Rng& rng, double p_on = 0.6) {
  RegionMask m;
  m.mask = Image(h, w, 1, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.mask.at(y, x, 0) = rng.uniform() < p_on ? 1.0 : 0.0;
  if (m.nonzero_count() == 0) m.mask.at(0, 0, 0) = 1.0;
  return m;
}

Image random_texture(int h, int w, int c, camo::Rng& rng, double lo = 0.02, double hi = 0.98) {
  Image t(h, w, c);
  for (auto& v : t.pix) v = rng.uniform(lo, hi);
  return t;
}

// Planar [C,H,W] leaf holding the same values as an interleaved image.
ad::Ptr texture_leaf(const Image& img) {
  ad::Array v(static_cast<Eigen::Index>(img.size()));
  const int plane = img.height * img.width;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        v[c * plane + y * img.width + x] = img.at(y, x, c);
  return ad::leaf({img.channels, img.height, img.width}, v);
}

}  // namespace

TEST_CASE("iou arithmetic") {
  CHECK(camo::iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
  CHECK(camo::iou({0, 0, 2, 2}, {0, 0, 2, 2}) == doctest::Approx(1.0));
  CHECK(camo::iou({0, 0, 1, 1}, {2, 2, 3, 3}) == 0.0);
  CHECK(camo::iou({0, 0, 4, 4}, {1, 1, 2, 2}) == doctest::Approx(1.0 / 16.0));
  // Touching edges produce zero-width intersection.
  CHECK(camo::iou({0, 0, 1, 1}, {1, 0, 2, 1}) == 0.0);
  // Two degenerate boxes have zero union; defined as 0 rather than 0/0.
  CHECK(camo::iou({1, 1, 1, 1}, {1, 1, 1, 1}) == 0.0);
}

TEST_CASE("detection loss on exact hit") {
  const auto cfg = default_cfg();
  GroundTruth gt{{10, 10, 50, 50}, 0};
  DetectionSet dets;
  dets.detections.push_back({gt.box, 0.9, 0});
  auto [l_iou, l_obj, l_adv] = camo::adv_loss(dets, gt, cfg);
  CHECK(l_iou == doctest::Approx(1.0));
  CHECK(l_obj == doctest::Approx(0.9));
  CHECK(l_adv == doctest::Approx(0.05 * 1.0 + 1.0 * 0.9));
}

TEST_CASE("detection loss takes maxima and filters classes") {
  const auto cfg = default_cfg();
  GroundTruth gt{{0, 0, 10, 10}, 0};
  DetectionSet dets;
  dets.detections.push_back({{0, 0, 10, 10}, 0.2, 0});   // best IOU, low conf
  dets.detections.push_back({{20, 20, 30, 30}, 0.8, 0}); // no overlap, high conf
  dets.detections.push_back({{0, 0, 10, 10}, 0.99, 7});  // wrong class, ignored
  auto [l_iou, l_obj, l_adv] = camo::adv_loss(dets, gt, cfg);
  CHECK(l_iou == doctest::Approx(1.0));
  CHECK(l_obj == doctest::Approx(0.8));
  CHECK(l_adv == doctest::Approx(0.05 + 0.8));

  SUBCASE("empty candidate set is the fully suppressed state") {
    auto [i0, o0, a0] = camo::adv_loss(DetectionSet{}, gt, cfg);
    CHECK(i0 == 0.0);
    CHECK(o0 == 0.0);
    CHECK(a0 == 0.0);
  }
}

TEST_CASE("suppression is monotone") {
  const auto cfg = default_cfg();
  camo::Rng rng(41);
  GroundTruth gt{{5, 5, 15, 15}, 0};
  for (int trial = 0; trial < 30; ++trial) {
    DetectionSet dets;
    const int n = rng.uniform_int(1, 6);
    for (int i = 0; i < n; ++i) {
      const double x1 = rng.uniform(0, 18), y1 = rng.uniform(0, 18);
      dets.detections.push_back(
          {{x1, y1, x1 + rng.uniform(1, 8), y1 + rng.uniform(1, 8)}, rng.uniform(), 0});
    }
    auto [i_full, o_full, a_full] = camo::adv_loss(dets, gt, cfg);

    // Removing a candidate never increases the loss.
    DetectionSet fewer = dets;
    fewer.detections.erase(fewer.detections.begin() + rng.uniform_int(0, n - 1));
    auto [i_sub, o_sub, a_sub] = camo::adv_loss(fewer, gt, cfg);
    CHECK(a_sub <= a_full + 1e-12);
    CHECK(i_sub <= i_full + 1e-12);

    // Lowering one confidence never increases the confidence term.
    DetectionSet damped = dets;
    auto& pick = damped.detections[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    pick.confidence *= rng.uniform();
    auto [i_d, o_d, a_d] = camo::adv_loss(damped, gt, cfg);
    CHECK(o_d <= o_full + 1e-12);
    CHECK(i_d == doctest::Approx(i_full));
  }
}

TEST_CASE("differentiable detection loss matches the scalar path") {
  const auto cfg = default_cfg();
  GroundTruth gt{{2, 2, 6, 6}, 0};

  // Leaves: conf0, conf1, then 4 coords per box. Wrong-class candidate is
  // appended as constants and must be ignored.
  const double b0[4] = {2.5, 2.3, 6.4, 5.7};
  const double b1[4] = {0.5, 0.5, 3.4, 3.6};
  auto build = [&](std::vector<ad::Ptr>& leaves) {
    camo::DiffDetections dd;
    dd.confidence = {leaves[0], leaves[1], ad::constant_scalar(0.99)};
    dd.boxes.push_back({leaves[2], leaves[3], leaves[4], leaves[5]});
    dd.boxes.push_back({leaves[6], leaves[7], leaves[8], leaves[9]});
    dd.boxes.push_back({ad::constant_scalar(2.0), ad::constant_scalar(2.0),
                        ad::constant_scalar(6.0), ad::constant_scalar(6.0)});
    dd.class_ids = {0, 0, 7};
    return camo::adv_loss_ad(dd, gt, cfg).value;
  };

  std::vector<std::pair<ad::Shape, ad::Array>> inits;
  auto scalar_init = [&](double v) {
    ad::Array a(1);
    a[0] = v;
    inits.emplace_back(ad::Shape{1}, a);
  };
  scalar_init(0.7);
  scalar_init(0.4);
  for (double v : b0) scalar_init(v);
  for (double v : b1) scalar_init(v);

  std::vector<ad::Ptr> leaves;
  for (const auto& [shape, value] : inits) leaves.push_back(ad::leaf(shape, value));
  camo::DiffDetections dd;
  dd.confidence = {leaves[0], leaves[1], ad::constant_scalar(0.99)};
  dd.boxes.push_back({leaves[2], leaves[3], leaves[4], leaves[5]});
  dd.boxes.push_back({leaves[6], leaves[7], leaves[8], leaves[9]});
  dd.boxes.push_back({ad::constant_scalar(2.0), ad::constant_scalar(2.0),
                      ad::constant_scalar(6.0), ad::constant_scalar(6.0)});
  dd.class_ids = {0, 0, 7};
  auto diff = camo::adv_loss_ad(dd, gt, cfg);

  DetectionSet dets;
  dets.detections.push_back({{b0[0], b0[1], b0[2], b0[3]}, 0.7, 0});
  dets.detections.push_back({{b1[0], b1[1], b1[2], b1[3]}, 0.4, 0});
  dets.detections.push_back({{2, 2, 6, 6}, 0.99, 7});
  auto [l_iou, l_obj, l_adv] = camo::adv_loss(dets, gt, cfg);
  CHECK(diff.l_iou == doctest::Approx(l_iou));
  CHECK(diff.l_obj == doctest::Approx(l_obj));
  CHECK(diff.l_adv == doctest::Approx(l_adv));
  CHECK(diff.value->value[0] == doctest::Approx(l_adv));

  CHECK(testutil::max_fd_error(build, inits) < 1e-6);

  SUBCASE("empty candidate set yields a constant zero node") {
    camo::DiffDetections none;
    auto z = camo::adv_loss_ad(none, gt, cfg);
    CHECK(z.value->value[0] == 0.0);
    CHECK(z.l_iou == 0.0);
    CHECK(z.l_obj == 0.0);
  }
}

TEST_CASE("smoothness loss on the 2x2 step pattern") {
  Image t(2, 2, 1);
  t.at(0, 0, 0) = 0.0;
  t.at(0, 1, 0) = 1.0;
  t.at(1, 0, 0) = 0.0;
  t.at(1, 1, 0) = 1.0;
  // Two unit horizontal jumps, two zero vertical jumps, four masked texels.
  CHECK(camo::tv_loss(t, full_mask(2, 2)) == doctest::Approx(0.5));
}

TEST_CASE("smoothness loss oracle and gradient") {
  camo::Rng rng(7);
  const int h = 9, w = 7;
  const Image t = random_texture(h, w, 3, rng);
  const auto mask = random_mask(h, w, rng);

  // Independent oracle: enumerate grid edges, keep those with both ends
  // masked, accumulate per-channel absolute differences.
  double sum = 0.0;
  auto masked = [&](int y, int x) { return mask.mask.at(y, x, 0) >= 0.5; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x)
      if (masked(y, x) && masked(y, x + 1))
        for (int c = 0; c < 3; ++c) sum += std::abs(t.at(y, x, c) - t.at(y, x + 1, c));
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x)
      if (masked(y, x) && masked(y + 1, x))
        for (int c = 0; c < 3; ++c) sum += std::abs(t.at(y, x, c) - t.at(y + 1, x, c));
  const double expected = sum / static_cast<double>(mask.nonzero_count());

  CHECK(camo::tv_loss(t, mask) == doctest::Approx(expected));
  auto leaf = texture_leaf(t);
  auto node = camo::tv_loss_ad(leaf, mask);
  CHECK(node->value[0] == doctest::Approx(expected));

  auto build = [&](std::vector<ad::Ptr>& leaves) { return camo::tv_loss_ad(leaves[0], mask); };
  std::vector<std::pair<ad::Shape, ad::Array>> inits = {{leaf->shape, leaf->value}};
  CHECK(testutil::max_fd_error(build, inits, 1e-6) < 1e-6);

  SUBCASE("texels outside the region do not contribute") {
    Image t2 = t;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (!masked(y, x))
          for (int c = 0; c < 3; ++c) t2.at(y, x, c) = rng.uniform();
    CHECK(camo::tv_loss(t2, mask) == doctest::Approx(camo::tv_loss(t, mask)));

    ad::backward(node);
    const int plane = h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (!masked(y, x))
          for (int c = 0; c < 3; ++c) CHECK(leaf->grad[c * plane + y * w + x] == 0.0);
  }

  SUBCASE("empty mask is rejected") {
    RegionMask none;
    none.mask = Image(h, w, 1, 0.0);
    CHECK_THROWS_WITH_AS(camo::tv_loss(t, none), doctest::Contains("mask has no set pixels"),
                         camo::Error);
  }

  SUBCASE("resolution mismatch is rejected") {
    CHECK_THROWS_AS(camo::tv_loss(t, full_mask(h + 1, w)), camo::Error);
    CHECK_THROWS_AS(camo::tv_loss_ad(leaf, full_mask(h, w + 2)), camo::Error);
  }
}

TEST_CASE("printability loss on a gray texel against black and white") {
  Image t(1, 2, 3, 0.5);
  const auto mask = make_mask(1, 2, {0});  // only the first texel counts
  t.at(0, 1, 0) = 0.99;                    // unmasked, must not matter
  std::vector<Eigen::Vector3d> palette = {{0, 0, 0}, {1, 1, 1}};
  CHECK(camo::nps_loss(t, mask, palette) == doctest::Approx(std::sqrt(0.75)));

  SUBCASE("empty mask gives zero, not an error") {
    RegionMask none;
    none.mask = Image(1, 2, 1, 0.0);
    CHECK(camo::nps_loss(t, none, palette) == 0.0);
    CHECK(camo::nps_loss_ad(texture_leaf(t), none, palette)->value[0] == 0.0);
  }

  SUBCASE("a texel sitting on a palette color costs nothing") {
    Image z(1, 1, 3, 0.0);
    CHECK(camo::nps_loss(z, full_mask(1, 1), palette) == 0.0);
  }
}

TEST_CASE("printability loss oracle and gradient") {
  camo::Rng rng(11);
  const int h = 6, w = 8;
  const Image t = random_texture(h, w, 3, rng);
  const auto mask = random_mask(h, w, rng);
  std::vector<Eigen::Vector3d> palette;
  for (int i = 0; i < 5; ++i)
    palette.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());

  double sum = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask.mask.at(y, x, 0) < 0.5) continue;
      double best = 1e18;
      for (const auto& p : palette) {
        const double d = std::sqrt(std::pow(t.at(y, x, 0) - p[0], 2) +
                                   std::pow(t.at(y, x, 1) - p[1], 2) +
                                   std::pow(t.at(y, x, 2) - p[2], 2));
        best = std::min(best, d);
      }
      sum += best;
    }
  const double expected = sum / static_cast<double>(mask.nonzero_count());

  CHECK(camo::nps_loss(t, mask, palette) == doctest::Approx(expected));
  auto leaf = texture_leaf(t);
  CHECK(camo::nps_loss_ad(leaf, mask, palette)->value[0] == doctest::Approx(expected));

  auto build = [&](std::vector<ad::Ptr>& leaves) {
    return camo::nps_loss_ad(leaves[0], mask, palette);
  };
  std::vector<std::pair<ad::Shape, ad::Array>> inits = {{leaf->shape, leaf->value}};
  CHECK(testutil::max_fd_error(build, inits) < 1e-6);

  SUBCASE("empty palette is rejected") {
    CHECK_THROWS_AS(camo::nps_loss(t, mask, {}), camo::Error);
  }
}

TEST_CASE("concealment loss band arithmetic") {
  const double c_ru = 0.15;
  const Eigen::Vector3d c_r(0.4, 0.5, 0.6);  // band unclamped on every channel

  SUBCASE("texel inside the band contributes 2*c_ru per channel") {
    Image t(1, 1, 3);
    t.at(0, 0, 0) = 0.4;
    t.at(0, 0, 1) = 0.5;
    t.at(0, 0, 2) = 0.6;
    CHECK(camo::cr_loss(t, full_mask(1, 1), c_r, c_ru) == doctest::Approx(6.0 * c_ru));
  }

  SUBCASE("texel above the band pays double the excursion") {
    const double delta = 0.07;
    Image t(1, 1, 3);
    t.at(0, 0, 0) = 0.4 + c_ru + delta;  // u_h + delta on channel 0
    t.at(0, 0, 1) = 0.5;
    t.at(0, 0, 2) = 0.6;
    CHECK(camo::cr_loss(t, full_mask(1, 1), c_r, c_ru) ==
          doctest::Approx(2 * c_ru + 2 * delta + 4 * c_ru));
  }

  SUBCASE("lower bound holds for every texture when the band is interior") {
    camo::Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const Eigen::Vector3d ref(rng.uniform(c_ru, 1 - c_ru), rng.uniform(c_ru, 1 - c_ru),
                                rng.uniform(c_ru, 1 - c_ru));
      const Image t = random_texture(4, 4, 3, rng, 0.0, 1.0);
      CHECK(camo::cr_loss(t, full_mask(4, 4), ref, c_ru) >= 6.0 * c_ru - 1e-12);
    }
  }

  SUBCASE("clamped band can dip below the interior bound") {
    Image t(1, 1, 3, 0.05);
    // Reference at black clamps u_l to 0; the band is half-width.
    const double v = camo::cr_loss(t, full_mask(1, 1), Eigen::Vector3d(0, 0, 0), c_ru);
    CHECK(v < 6.0 * c_ru);
    CHECK(v == doctest::Approx(3 * (0.05 + 0.10)));
  }
}

TEST_CASE("concealment loss oracle and gradient") {
  camo::Rng rng(13);
  const int h = 5, w = 9;
  const Image t = random_texture(h, w, 3, rng);
  const auto mask = random_mask(h, w, rng);
  const Eigen::Vector3d c_r(0.31, 0.52, 0.68);
  const double c_ru = 0.15;

  double sum = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask.mask.at(y, x, 0) < 0.5) continue;
      for (int c = 0; c < 3; ++c) {
        const double lo = std::max(0.0, c_r[c] - c_ru), hi = std::min(1.0, c_r[c] + c_ru);
        sum += std::abs(t.at(y, x, c) - lo) + std::abs(t.at(y, x, c) - hi);
      }
    }
  const double expected = sum / static_cast<double>(mask.nonzero_count());

  CHECK(camo::cr_loss(t, mask, c_r, c_ru) == doctest::Approx(expected));
  auto leaf = texture_leaf(t);
  CHECK(camo::cr_loss_ad(leaf, mask, c_r, c_ru)->value[0] == doctest::Approx(expected));

  auto build = [&](std::vector<ad::Ptr>& leaves) {
    return camo::cr_loss_ad(leaves[0], mask, c_r, c_ru);
  };
  std::vector<std::pair<ad::Shape, ad::Array>> inits = {{leaf->shape, leaf->value}};
  CHECK(testutil::max_fd_error(build, inits) < 1e-6);
}

TEST_CASE("background reference color comes from the surrounding ring") {
  Image img(20, 20, 3);
  const Box box{8, 8, 12, 12};  // 4x4; ring spans pixels [6,13]^2 minus [8,11]^2
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) {
      const bool inner = x >= 8 && x <= 11 && y >= 8 && y <= 11;
      const bool outer = x >= 6 && x <= 13 && y >= 6 && y <= 13;
      const int color = inner ? 0 : (outer ? 1 : 2);  // red, green, blue
      img.at(y, x, color) = 1.0;
    }
  const auto ring_mean = camo::background_mean_color(img, Box{8, 8, 12, 12});
  CHECK(ring_mean[0] == doctest::Approx(0.0));
  CHECK(ring_mean[1] == doctest::Approx(1.0));
  CHECK(ring_mean[2] == doctest::Approx(0.0));
  (void)box;

  SUBCASE("no box falls back to the whole image") {
    Image flat(4, 6, 3);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 6; ++x) {
        flat.at(y, x, 0) = 0.25;
        flat.at(y, x, 1) = 0.5;
        flat.at(y, x, 2) = 0.75;
      }
    const auto m = camo::background_mean_color(flat, std::nullopt);
    CHECK(m[0] == doctest::Approx(0.25));
    CHECK(m[1] == doctest::Approx(0.5));
    CHECK(m[2] == doctest::Approx(0.75));
  }

  SUBCASE("a box swallowing the frame degrades to the whole image") {
    camo::Rng rng(5);
    const Image noise = random_texture(10, 10, 3, rng);
    const auto whole = camo::background_mean_color(noise, std::nullopt);
    const auto fallback = camo::background_mean_color(noise, Box{-5, -5, 15, 15});
    for (int c = 0; c < 3; ++c) CHECK(fallback[c] == doctest::Approx(whole[c]));
  }

  SUBCASE("degenerate box is rejected") {
    CHECK_THROWS_AS(camo::background_mean_color(img, Box{5, 5, 5, 9}), camo::Error);
  }
}

TEST_CASE("weighted total and its failure modes") {
  const auto cfg = default_cfg();
  camo::LossReport parts;
  parts.l_iou = 1.0;
  parts.l_obj = 0.9;
  parts.l_adv = 0.95;
  parts.l_tv = 0.1;
  parts.l_nps = 0.2;
  parts.l_cr = 0.3;
  const auto out = camo::total_loss(parts, cfg);
  CHECK(out.total == doctest::Approx(0.95 + 1.0 * 0.1 + 2.5 * 0.2 + 2.0 * 0.3));
  CHECK(out.total == doctest::Approx(2.15));
  CHECK(out.l_adv == parts.l_adv);

  SUBCASE("non-finite part is named in the error") {
    auto bad = parts;
    bad.l_nps = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(camo::total_loss(bad, cfg), doctest::Contains("l_nps"), camo::Error);
    bad = parts;
    bad.l_tv = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(camo::total_loss(bad, cfg), doctest::Contains("l_tv"), camo::Error);
  }
}

TEST_CASE("palette file round trip") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "camokit_losses_test";
  fs::create_directories(dir);
  const auto path = (dir / "palette.txt").string();

  std::vector<Eigen::Vector3d> palette = {{0, 0, 0}, {0.25, 0.5, 0.75}, {1, 1, 1}};
  camo::save_palette(palette, path);
  const auto loaded = camo::load_palette(path);
  REQUIRE(loaded.size() == palette.size());
  for (std::size_t i = 0; i < palette.size(); ++i)
    for (int c = 0; c < 3; ++c) CHECK(loaded[i][c] == doctest::Approx(palette[i][c]));

  SUBCASE("errors") {
    CHECK_THROWS_AS(camo::load_palette((dir / "missing.txt").string()), camo::Error);
    {
      std::ofstream bad((dir / "bad.txt").string());
      bad << "0.5 0.5\n";
    }
    CHECK_THROWS_WITH_AS(camo::load_palette((dir / "bad.txt").string()),
                         doctest::Contains("3 values"), camo::Error);
    {
      std::ofstream range((dir / "range.txt").string());
      range << "0.5 0.5 1.5\n";
    }
    CHECK_THROWS_WITH_AS(camo::load_palette((dir / "range.txt").string()),
                         doctest::Contains("[0,1]"), camo::Error);
    CHECK_THROWS_AS(camo::save_palette({}, path), camo::Error);
  }
}

TEST_CASE("loss config validation") {
  auto cfg = default_cfg();
  CHECK_NOTHROW(cfg.validate());
  cfg.gamma = -0.1;
  CHECK_THROWS_AS(cfg.validate(), camo::Error);
  cfg = default_cfg();
  cfg.palette.clear();
  CHECK_THROWS_AS(cfg.validate(), camo::Error);
  cfg = default_cfg();
  cfg.c_ru = 0.6;
  CHECK_THROWS_AS(cfg.validate(), camo::Error);
  cfg = default_cfg();
  cfg.palette.push_back({1.2, 0, 0});
  CHECK_THROWS_AS(cfg.validate(), camo::Error);
}
