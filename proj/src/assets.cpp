#include "camo/assets.hpp"

#include <cmath>
#include <filesystem>

#include "camo/losses.hpp"

namespace camo {

namespace {

constexpr int kAtlasCols = 4;
constexpr int kAtlasRows = 3;
constexpr double kCellInset = 0.015;  // fraction of a cell, keeps samples inside

// Appends the six quads of an axis-aligned box; each quad takes the next
// free UV atlas cell. Corner order keeps outward-facing winding.
void append_box(TriMesh& m, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                int* next_cell) {
  const double x0 = lo.x(), y0 = lo.y(), z0 = lo.z();
  const double x1 = hi.x(), y1 = hi.y(), z1 = hi.z();
  const int base = static_cast<int>(m.vertices.size());
  m.vertices.insert(m.vertices.end(),
                    {{x0, y0, z0}, {x1, y0, z0}, {x1, y1, z0}, {x0, y1, z0},
                     {x0, y0, z1}, {x1, y0, z1}, {x1, y1, z1}, {x0, y1, z1}});
  // front (+z), back (-z), right (+x), left (-x), top (+y), bottom (-y)
  const int quads[6][4] = {{4, 5, 6, 7}, {1, 0, 3, 2}, {5, 1, 2, 6},
                           {0, 4, 7, 3}, {7, 6, 2, 3}, {0, 1, 5, 4}};
  for (const auto& q : quads) {
    const int cell = (*next_cell)++;
    const double cw = 1.0 / kAtlasCols, ch = 1.0 / kAtlasRows;
    const double u0 = (cell % kAtlasCols) * cw + kCellInset * cw;
    const double v0 = (cell / kAtlasCols) * ch + kCellInset * ch;
    const double u1 = u0 + cw * (1.0 - 2.0 * kCellInset);
    const double v1 = v0 + ch * (1.0 - 2.0 * kCellInset);
    const int uv = static_cast<int>(m.uv_coords.size());
    m.uv_coords.emplace_back(u0, v0);
    m.uv_coords.emplace_back(u1, v0);
    m.uv_coords.emplace_back(u1, v1);
    m.uv_coords.emplace_back(u0, v1);
    m.faces.push_back({base + q[0], base + q[1], base + q[2]});
    m.face_uvs.push_back({uv, uv + 1, uv + 2});
    m.faces.push_back({base + q[0], base + q[2], base + q[3]});
    m.face_uvs.push_back({uv, uv + 2, uv + 3});
  }
}

}  // namespace

TriMesh make_car_mesh() {
  TriMesh m;
  int cell = 0;
  append_box(m, {-2.1, 0.0, -0.9}, {2.1, 1.2, 0.9}, &cell);   // body, faces 0..11
  append_box(m, {-1.2, 1.2, -0.75}, {0.8, 2.0, 0.75}, &cell); // cabin, faces 12..23
  m.validate();
  return m;
}

FaceSelection car_global_selection(const TriMesh& mesh) {
  return FaceSelection::all(mesh);
}

FaceSelection car_local_selection(const TriMesh& mesh) {
  // Body quads 0 (+z) and 1 (-z): the long door panels.
  auto sel = FaceSelection::from_ids({0, 1, 2, 3});
  sel.validate(mesh);
  return sel;
}

Image make_car_base_texture(int resolution) {
  if (resolution < kAtlasCols || resolution < kAtlasRows)
    throw Error("assets", "base texture resolution too small");
  Image tex(resolution, resolution, 3);
  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      const int col = std::min(kAtlasCols - 1, x * kAtlasCols / resolution);
      const int row = std::min(kAtlasRows - 1, y * kAtlasRows / resolution);
      const int cell = row * kAtlasCols + col;
      const double shade = 0.03 * ((cell * 7) % 5 - 2);  // per-cell offset in [-0.06, 0.06]
      tex.at(y, x, 0) = clamp01(0.55 + shade);
      tex.at(y, x, 1) = clamp01(0.58 + shade);
      tex.at(y, x, 2) = clamp01(0.62 + shade);
    }
  return tex;
}

std::vector<Eigen::Vector3d> printable_palette() {
  std::vector<Eigen::Vector3d> palette;
  for (double r : {0.10, 0.45, 0.80})
    for (double g : {0.10, 0.45, 0.80})
      for (double b : {0.10, 0.45, 0.80}) palette.emplace_back(r, g, b);
  palette.emplace_back(0.20, 0.60, 0.30);  // foliage green
  palette.emplace_back(0.55, 0.45, 0.25);  // sand tan
  palette.emplace_back(0.30, 0.35, 0.45);  // slate blue
  return palette;
}

Image make_background(const std::string& kind, int resolution, Rng& rng) {
  if (resolution <= 0) throw Error("assets", "background resolution must be positive");
  Image img(resolution, resolution, 3);
  // Low-frequency phases differ per plate so one class still varies.
  const double p1 = rng.uniform(0.0, 6.28318530717958648);
  const double p2 = rng.uniform(0.0, 6.28318530717958648);

  for (int y = 0; y < resolution; ++y)
    for (int x = 0; x < resolution; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      const double speckle = rng.uniform(-1.0, 1.0);
      double r, g, b;
      if (kind == "grass") {
        const double patch = 0.5 * std::sin(0.11 * fx + p1 + 1.7 * std::sin(0.05 * fy + p2));
        r = 0.16 + 0.05 * patch + 0.03 * speckle;
        g = 0.38 + 0.09 * patch + 0.05 * speckle;
        b = 0.12 + 0.03 * patch + 0.02 * speckle;
      } else if (kind == "desert") {
        const double ripple = std::sin(0.33 * (fx + 0.4 * fy) + p1) * 0.5 +
                              std::sin(0.07 * fy + p2) * 0.5;
        r = 0.74 + 0.05 * ripple + 0.02 * speckle;
        g = 0.63 + 0.05 * ripple + 0.02 * speckle;
        b = 0.42 + 0.04 * ripple + 0.02 * speckle;
      } else if (kind == "highway") {
        double a = 0.32 + 0.02 * std::sin(0.21 * fx + p1) + 0.04 * speckle;
        const int lane = resolution / 2;
        const bool stripe = std::abs(x - lane) <= std::max(1, resolution / 48) &&
                            (y / std::max(2, resolution / 8)) % 2 == 0;
        if (stripe) a = 0.85 + 0.02 * speckle;
        r = g = b = a;
        b += 0.01;  // cold asphalt cast
      } else {
        throw Error("assets", "unknown background kind '" + kind +
                                  "' (grass, desert, highway)");
      }
      img.at(y, x, 0) = clamp01(r);
      img.at(y, x, 1) = clamp01(g);
      img.at(y, x, 2) = clamp01(b);
    }
  return img;
}

AssetPaths write_assets(const std::string& dir, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto mesh = make_car_mesh();

  AssetPaths out;
  out.mesh = (fs::path(dir) / "car.obj").string();
  out.base_texture = (fs::path(dir) / "car_base.png").string();
  out.global_selection = (fs::path(dir) / "global.sel").string();
  out.local_selection = (fs::path(dir) / "local.sel").string();
  out.palette = (fs::path(dir) / "palette.txt").string();
  out.backgrounds_dir = (fs::path(dir) / "backgrounds").string();

  save_mesh(mesh, out.mesh);
  save_png16(make_car_base_texture(256), out.base_texture);
  save_face_selection(car_global_selection(mesh), out.global_selection);
  save_face_selection(car_local_selection(mesh), out.local_selection);
  save_palette(printable_palette(), out.palette);

  for (const char* kind : {"grass", "desert", "highway"}) {
    const fs::path sub = fs::path(out.backgrounds_dir) / kind;
    fs::create_directories(sub);
    for (int i = 0; i < 3; ++i) {
      Rng rng = Rng::stream(seed, std::string("background-") + kind + "-" + std::to_string(i));
      save_png8(make_background(kind, 96, rng), (sub / ("bg_" + std::to_string(i) + ".png")).string());
    }
  }
  return out;
}

}  // namespace camo
