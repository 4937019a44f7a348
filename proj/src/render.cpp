#include "camo/render.hpp"

#include <algorithm>
#include <cmath>

namespace camo {

void Environment::validate() const {
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  for (int i = 0; i < 3; ++i)
    if (!finite_nonneg(ambient[i]) || !finite_nonneg(specular[i]))
      throw Error("render", "environment coefficients must be finite and non-negative");
  if (!finite_nonneg(diffuse_color)) throw Error("render", "diffuse_color must be >= 0");
  if (!(shininess > 0.0) || !std::isfinite(shininess))
    throw Error("render", "shininess must be > 0");
  if (std::abs(light_direction.norm() - 1.0) > 1e-6)
    throw Error("render", "light_direction must be unit length");
}

long FragmentMap::covered_count() const {
  long n = 0;
  for (int f : face_id) n += f >= 0 ? 1 : 0;
  return n;
}

ScenePose sample_pose(const PoseRanges& ranges, Rng& rng) {
  for (const auto& r : {ranges.elevation, ranges.azimuth, ranges.distance})
    if (r[0] > r[1]) throw Error("render", "inverted pose range");
  ScenePose pose;
  pose.elevation_deg = rng.uniform(ranges.elevation[0], ranges.elevation[1]);
  pose.azimuth_deg = std::fmod(rng.uniform(ranges.azimuth[0], ranges.azimuth[1]), 360.0);
  if (pose.azimuth_deg < 0.0) pose.azimuth_deg += 360.0;
  pose.distance = rng.uniform(ranges.distance[0], ranges.distance[1]);
  if (pose.elevation_deg < -90.0 || pose.elevation_deg > 90.0)
    throw Error("render", "elevation outside [-90, 90]");
  if (pose.distance <= 0.0) throw Error("render", "distance must be > 0");
  return pose;
}

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

struct Camera {
  Eigen::Vector3d eye, forward, right, up;
  double tan_half = 1.0;
  double aspect = 1.0;
  int height = 0, width = 0;

  // Screen position (pixels, y down) and view depth of a world point.
  void project(const Eigen::Vector3d& p, double& px, double& py, double& z) const {
    const Eigen::Vector3d rel = p - eye;
    z = rel.dot(forward);
    const double xn = rel.dot(right) / (z * tan_half * aspect);
    const double yn = rel.dot(up) / (z * tan_half);
    px = (xn + 1.0) * 0.5 * width;
    py = (1.0 - yn) * 0.5 * height;
  }
};

Camera make_camera(const TriMesh& mesh, const ScenePose& pose, int height, int width,
                   double fov_deg) {
  const double e = pose.elevation_deg * kDegToRad;
  const double a = pose.azimuth_deg * kDegToRad;
  const Eigen::Vector3d target = mesh.centroid();
  Camera cam;
  cam.eye = target + pose.distance * Eigen::Vector3d(std::cos(e) * std::sin(a), std::sin(e),
                                                     std::cos(e) * std::cos(a));
  cam.forward = (target - cam.eye).normalized();
  const Eigen::Vector3d up0 =
      std::abs(cam.forward.y()) > 0.999999 ? Eigen::Vector3d(0, 0, 1) : Eigen::Vector3d(0, 1, 0);
  cam.right = cam.forward.cross(up0).normalized();
  cam.up = cam.right.cross(cam.forward);
  cam.tan_half = std::tan(0.5 * fov_deg * kDegToRad);
  cam.aspect = static_cast<double>(width) / height;
  cam.height = height;
  cam.width = width;
  return cam;
}

double orient2d(double ax, double ay, double bx, double by, double cx, double cy) {
  return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
}

// Boundary ownership for pixel centers on an edge. Triangles are oriented
// to positive area in y-down pixel space, which puts the interior to the
// right of each directed edge: a "top" edge is horizontal heading right, a
// "left" edge heads up. Exactly one of the two triangles sharing an edge
// owns it, since the neighbor traverses it in the opposite direction.
bool edge_is_top_left(double ax, double ay, double bx, double by) {
  if (ay == by) return bx > ax;
  return by < ay;
}

}  // namespace

FragmentMap rasterize(const TriMesh& mesh, const ScenePose& pose, int height, int width,
                      double fov_deg) {
  if (height <= 0 || width <= 0) throw Error("render", "non-positive render resolution");
  if (pose.distance <= 0.0) throw Error("render", "distance must be > 0");
  mesh.validate();

  const Camera cam = make_camera(mesh, pose, height, width, fov_deg);

  FragmentMap out;
  out.height = height;
  out.width = width;
  out.eye = cam.eye;
  const std::size_t npix = static_cast<std::size_t>(height) * width;
  out.face_id.assign(npix, -1);
  out.bary.assign(npix, {0.0, 0.0, 0.0});
  out.depth.assign(npix, 0.0);

  constexpr double kNear = 1e-6;

  const int nf = mesh.face_count();
  for (int fid = 0; fid < nf; ++fid) {
    const auto& f = mesh.faces[static_cast<std::size_t>(fid)];
    double px[3], py[3], pz[3];
    bool ok = true;
    for (int k = 0; k < 3; ++k) {
      cam.project(mesh.vertices[static_cast<std::size_t>(f[static_cast<std::size_t>(k)])],
                  px[k], py[k], pz[k]);
      if (!(pz[k] > kNear)) ok = false;
    }
    if (!ok) continue;

    // Orient counter-clockwise in pixel space; perm keeps barycentrics
    // attached to the original corner order.
    int perm[3] = {0, 1, 2};
    double area = orient2d(px[0], py[0], px[1], py[1], px[2], py[2]);
    if (area == 0.0) continue;
    if (area < 0.0) {
      std::swap(perm[1], perm[2]);
      area = -area;
    }
    const double x0 = px[perm[0]], y0 = py[perm[0]];
    const double x1 = px[perm[1]], y1 = py[perm[1]];
    const double x2 = px[perm[2]], y2 = py[perm[2]];

    const int c0 = std::max(0, static_cast<int>(std::floor(std::min({x0, x1, x2}) - 0.5)));
    const int c1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({x0, x1, x2}))));
    const int r0 = std::max(0, static_cast<int>(std::floor(std::min({y0, y1, y2}) - 0.5)));
    const int r1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({y0, y1, y2}))));
    if (c1 < c0 || r1 < r0) continue;

    const bool tl0 = edge_is_top_left(x1, y1, x2, y2);
    const bool tl1 = edge_is_top_left(x2, y2, x0, y0);
    const bool tl2 = edge_is_top_left(x0, y0, x1, y1);

    // Pixel centers mathematically on a shared edge come out of orient2d as
    // rounding noise of either sign from both neighbors; a scale-aware
    // epsilon routes them through the ownership rule instead of dropping
    // them from both faces.
    const double scale = std::max({1.0, std::abs(x0), std::abs(y0), std::abs(x1), std::abs(y1),
                                   std::abs(x2), std::abs(y2)});
    const double tol = 1e-12 * scale * scale;

    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const double sx = c + 0.5, sy = r + 0.5;
        const double w0 = orient2d(x1, y1, x2, y2, sx, sy);
        const double w1 = orient2d(x2, y2, x0, y0, sx, sy);
        const double w2 = orient2d(x0, y0, x1, y1, sx, sy);
        const bool in0 = w0 > tol || (w0 >= -tol && tl0);
        const bool in1 = w1 > tol || (w1 >= -tol && tl1);
        const bool in2 = w2 > tol || (w2 >= -tol && tl2);
        if (!(in0 && in1 && in2)) continue;

        // Screen barycentrics (clamped against on-edge rounding noise),
        // then perspective correction via 1/z.
        double lam[3];
        lam[perm[0]] = std::max(0.0, w0 / area);
        lam[perm[1]] = std::max(0.0, w1 / area);
        lam[perm[2]] = std::max(0.0, w2 / area);
        const double lsum = lam[0] + lam[1] + lam[2];
        lam[0] /= lsum;
        lam[1] /= lsum;
        lam[2] /= lsum;
        const double inv_z =
            lam[0] / pz[0] + lam[1] / pz[1] + lam[2] / pz[2];
        const double depth = 1.0 / inv_z;
        const std::size_t pix = static_cast<std::size_t>(r) * width + c;
        const bool wins = out.face_id[pix] < 0 || depth < out.depth[pix] ||
                          (depth == out.depth[pix] && fid < out.face_id[pix]);
        if (!wins) continue;
        out.face_id[pix] = fid;
        out.depth[pix] = depth;
        out.bary[pix] = {depth * lam[0] / pz[0], depth * lam[1] / pz[1],
                         depth * lam[2] / pz[2]};
      }
    }
  }
  return out;
}

std::vector<Eigen::Vector3d> project_vertices(const TriMesh& mesh, const ScenePose& pose,
                                              int height, int width, double fov_deg) {
  if (height <= 0 || width <= 0) throw Error("render", "resolution must be positive");
  const Camera cam = make_camera(mesh, pose, height, width, fov_deg);
  std::vector<Eigen::Vector3d> out;
  out.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) {
    double px = 0, py = 0, z = (v - cam.eye).dot(cam.forward);
    if (z > 0.0) cam.project(v, px, py, z);
    out.emplace_back(px, py, z);
  }
  return out;
}

namespace {

// The Phong color is affine in the sampled albedo: A*sample + B per channel.
struct ShadingTerms {
  std::vector<int> pixels;            // flat y*W+x, covered pixels in raster order
  std::vector<ad::UvSample> uvs;      // one per covered pixel
  ad::Array mul;                      // [3*N], channel-major
  ad::Array add;                      // [3*N]
};

ShadingTerms shading_terms(const FragmentMap& frags, const TriMesh& mesh,
                           const Environment& env) {
  env.validate();
  ShadingTerms out;
  const long n = frags.covered_count();
  out.pixels.reserve(static_cast<std::size_t>(n));
  out.uvs.reserve(static_cast<std::size_t>(n));
  out.mul.resize(3 * n);
  out.add.resize(3 * n);

  // Face normals are constant per face; cache on first use.
  std::vector<Eigen::Vector3d> normals(static_cast<std::size_t>(mesh.face_count()),
                                       Eigen::Vector3d::Zero());
  std::vector<char> have_normal(static_cast<std::size_t>(mesh.face_count()), 0);

  long i = 0;
  for (std::size_t pix = 0; pix < frags.face_id.size(); ++pix) {
    const int fid = frags.face_id[pix];
    if (fid < 0) continue;
    const auto& f = mesh.faces[static_cast<std::size_t>(fid)];
    const auto& fuv = mesh.face_uvs[static_cast<std::size_t>(fid)];
    const auto& b = frags.bary[pix];

    if (!have_normal[static_cast<std::size_t>(fid)]) {
      const Eigen::Vector3d& v0 = mesh.vertices[static_cast<std::size_t>(f[0])];
      const Eigen::Vector3d& v1 = mesh.vertices[static_cast<std::size_t>(f[1])];
      const Eigen::Vector3d& v2 = mesh.vertices[static_cast<std::size_t>(f[2])];
      Eigen::Vector3d nrm = (v1 - v0).cross(v2 - v0);
      const double len = nrm.norm();
      normals[static_cast<std::size_t>(fid)] = len > 0.0 ? (nrm / len).eval() : nrm;
      have_normal[static_cast<std::size_t>(fid)] = 1;
    }
    const Eigen::Vector3d& nrm = normals[static_cast<std::size_t>(fid)];

    Eigen::Vector2d uv = Eigen::Vector2d::Zero();
    Eigen::Vector3d point = Eigen::Vector3d::Zero();
    for (int k = 0; k < 3; ++k) {
      uv += b[static_cast<std::size_t>(k)] *
            mesh.uv_coords[static_cast<std::size_t>(fuv[static_cast<std::size_t>(k)])];
      point += b[static_cast<std::size_t>(k)] *
               mesh.vertices[static_cast<std::size_t>(f[static_cast<std::size_t>(k)])];
    }

    const double ndotl = std::max(0.0, nrm.dot(env.light_direction));
    const Eigen::Vector3d reflect = 2.0 * nrm.dot(env.light_direction) * nrm - env.light_direction;
    const Eigen::Vector3d view = (frags.eye - point).normalized();
    const double spec = std::pow(std::max(0.0, reflect.dot(view)), env.shininess);

    out.pixels.push_back(static_cast<int>(pix));
    out.uvs.push_back({uv.x(), uv.y()});
    for (int c = 0; c < 3; ++c) {
      out.mul[c * n + i] = env.ambient[c] + env.diffuse_color * ndotl;
      out.add[c * n + i] = env.specular[c] * spec;
    }
    ++i;
  }
  return out;
}

}  // namespace

RenderOutput shade_phong(const FragmentMap& frags, const TriMesh& mesh, const Image& texture,
                         const Environment& env) {
  if (texture.channels != 3 || texture.height < 2 || texture.width < 2)
    throw Error("render", "texture must be RGB and at least 2x2");
  const ShadingTerms terms = shading_terms(frags, mesh, env);
  const long n = static_cast<long>(terms.pixels.size());

  RenderOutput out;
  out.image = Image(frags.height, frags.width, 3);
  out.silhouette = silhouette_of(frags);
  for (long i = 0; i < n; ++i) {
    const int pix = terms.pixels[static_cast<std::size_t>(i)];
    const int y = pix / frags.width, x = pix % frags.width;
    const auto albedo =
        sample_bilinear_uv(texture, terms.uvs[static_cast<std::size_t>(i)].u,
                           terms.uvs[static_cast<std::size_t>(i)].v);
    for (int c = 0; c < 3; ++c)
      out.image.at(y, x, c) = clamp01(terms.mul[c * n + i] * albedo[static_cast<std::size_t>(c)] +
                                      terms.add[c * n + i]);
  }
  return out;
}

ad::Ptr shade_phong_ad(const FragmentMap& frags, const TriMesh& mesh, const ad::Ptr& texture,
                       const Environment& env, std::vector<int>* pixels_out) {
  if (texture->shape.size() != 3 || texture->shape[0] != 3 || texture->shape[1] < 2 ||
      texture->shape[2] < 2)
    throw Error("render", "texture must be [3,H,W] with H,W >= 2");
  ShadingTerms terms = shading_terms(frags, mesh, env);
  const int n = static_cast<int>(terms.pixels.size());
  if (pixels_out) *pixels_out = terms.pixels;
  if (n == 0) return ad::zeros({3, 0});

  auto sampled = ad::sample_uv(texture, terms.uvs);
  auto gain = ad::constant({3, n}, std::move(terms.mul));
  auto bias = ad::constant({3, n}, std::move(terms.add));
  return ad::clamp01(ad::add(ad::mul(sampled, gain), bias));
}

Image composite(const RenderOutput& render, const Image& background) {
  if (!render.image.same_shape(background))
    throw Error("render", "composite resolution mismatch");
  Image out = background;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const double m = render.silhouette.at(y, x, 0);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = render.image.at(y, x, c) * m + background.at(y, x, c) * (1.0 - m);
    }
  return out;
}

ad::Ptr composite_ad(const ad::Ptr& covered_rgb, const std::vector<int>& pixels,
                     const Image& background) {
  if (background.channels != 3) throw Error("render", "background must be RGB");
  return ad::scatter_pixels(background, pixels, covered_rgb);
}

Image silhouette_of(const FragmentMap& frags) {
  Image sil(frags.height, frags.width, 1);
  for (std::size_t i = 0; i < frags.face_id.size(); ++i)
    sil.pix[i] = frags.face_id[i] >= 0 ? 1.0 : 0.0;
  return sil;
}

std::vector<Image> render_batch(const TriMesh& mesh, const Image& texture,
                                const std::vector<ScenePose>& poses, const Environment& env,
                                const std::vector<Image>& backgrounds, int height, int width,
                                double fov_deg) {
  if (poses.size() != backgrounds.size())
    throw Error("render", "pose/background count mismatch");
  std::vector<Image> out;
  out.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    Image bg = backgrounds[i];
    if (bg.height != height || bg.width != width) bg = resize_bilinear(bg, height, width);
    const FragmentMap frags = rasterize(mesh, poses[i], height, width, fov_deg);
    const RenderOutput shaded = shade_phong(frags, mesh, texture, env);
    out.push_back(composite(shaded, bg));
  }
  return out;
}

}  // namespace camo
