// Small procedural meshes and scene pieces shared by test binaries.
#pragma once

#include "camo/geometry.hpp"
#include "camo/image.hpp"
#include "camo/rng.hpp"

namespace testutil {

// Screen-facing quad in the z=0 plane spanning [-half,half]^2, centered at
// the origin, with the full UV atlas. Camera at azimuth 0 sits on +z.
inline camo::TriMesh make_quad(double half = 1.0, double z = 0.0) {
  camo::TriMesh m;
  m.vertices = {{-half, -half, z}, {half, -half, z}, {half, half, z}, {-half, half, z}};
  m.uv_coords = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  m.face_uvs = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

// Axis-aligned box with 12 triangles; every face pair gets its own UV cell
// in a 3x2 atlas grid.
inline camo::TriMesh make_box(double hx, double hy, double hz) {
  camo::TriMesh m;
  m.vertices = {{-hx, -hy, -hz}, {hx, -hy, -hz}, {hx, hy, -hz}, {-hx, hy, -hz},
                {-hx, -hy, hz},  {hx, -hy, hz},  {hx, hy, hz},  {-hx, hy, hz}};
  const int quads[6][4] = {{4, 5, 6, 7}, {1, 0, 3, 2}, {5, 1, 2, 6},
                           {0, 4, 7, 3}, {7, 6, 2, 3}, {0, 1, 5, 4}};
  for (int q = 0; q < 6; ++q) {
    const double u0 = (q % 3) / 3.0, v0 = (q / 3) / 2.0;
    const double u1 = u0 + 1.0 / 3.0, v1 = v0 + 0.5;
    const int base = static_cast<int>(m.uv_coords.size());
    m.uv_coords.emplace_back(u0, v0);
    m.uv_coords.emplace_back(u1, v0);
    m.uv_coords.emplace_back(u1, v1);
    m.uv_coords.emplace_back(u0, v1);
    m.faces.push_back({quads[q][0], quads[q][1], quads[q][2]});
    m.face_uvs.push_back({base, base + 1, base + 2});
    m.faces.push_back({quads[q][0], quads[q][2], quads[q][3]});
    m.face_uvs.push_back({base, base + 2, base + 3});
  }
  return m;
}

inline camo::Image constant_texture(int h, int w, double r, double g, double b) {
  camo::Image t(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      t.at(y, x, 0) = r;
      t.at(y, x, 1) = g;
      t.at(y, x, 2) = b;
    }
  return t;
}

inline camo::Image noise_texture(int h, int w, camo::Rng& rng, double lo = 0.0, double hi = 1.0) {
  camo::Image t(h, w, 3);
  for (auto& v : t.pix) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace testutil
