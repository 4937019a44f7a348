// Hard z-buffer rasterization of a UV-mapped mesh under sampled camera poses,
// Phong shading with texture-only gradients, and background compositing.
#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "camo/ad.hpp"
#include "camo/geometry.hpp"
#include "camo/image.hpp"
#include "camo/rng.hpp"

namespace camo {

struct ScenePose {
  double elevation_deg = 0.0;  // [-90, 90]
  double azimuth_deg = 0.0;    // [0, 360)
  double distance = 10.0;      // > 0
};

struct PoseRanges {
  std::array<double, 2> elevation{0.0, 50.0};
  std::array<double, 2> azimuth{0.0, 360.0};
  std::array<double, 2> distance{5.0, 50.0};
};

struct Environment {
  Eigen::Vector3d ambient{0.5, 0.5, 0.5};
  double diffuse_color = 0.7;  // scalar reflectance coefficient
  Eigen::Vector3d specular{0.05, 0.05, 0.05};
  double shininess = 32.0;
  // points from the surface toward the light, unit length
  Eigen::Vector3d light_direction{0.30304576336566325, 0.8081220356417687, 0.5050762722761054};

  void validate() const;  // throws Error("render", ...)
};

// Per-pixel visibility. Barycentrics are perspective-corrected; depth is
// view-space z along the camera forward axis.
struct FragmentMap {
  int height = 0;
  int width = 0;
  std::vector<int> face_id;                 // -1 where uncovered
  std::vector<std::array<double, 3>> bary;  // meaningful where covered
  std::vector<double> depth;
  Eigen::Vector3d eye = Eigen::Vector3d::Zero();  // camera position used

  long covered_count() const;
};

struct RenderOutput {
  Image image;       // HxWx3 in [0,1]
  Image silhouette;  // HxW in {0,1}, 1 = target pixel
};

// Uniform sample within each range; azimuth wraps into [0,360).
ScenePose sample_pose(const PoseRanges& ranges, Rng& rng);

// Perspective camera on the pose sphere around the mesh centroid, y-up,
// vertical FOV fov_deg, square pixels. Faces with any vertex at or behind
// the camera plane are dropped rather than clipped; poses keep the whole
// mesh in front of the camera in this toolkit. Exact depth ties go to the
// lower face id, which makes the result independent of face order.
FragmentMap rasterize(const TriMesh& mesh, const ScenePose& pose, int height, int width,
                      double fov_deg = 60.0);

// Pixel-space position (x, y) and view depth z of every mesh vertex under
// the rasterizer's camera. A vertex with z <= 0 sits at or behind the camera
// plane; its x/y components are meaningless there.
std::vector<Eigen::Vector3d> project_vertices(const TriMesh& mesh, const ScenePose& pose,
                                              int height, int width, double fov_deg = 60.0);

RenderOutput shade_phong(const FragmentMap& frags, const TriMesh& mesh, const Image& texture,
                         const Environment& env);

// Differentiable variant. Returns covered-pixel colors as a [3,N] tensor and
// writes the matching flat pixel indices (y*W+x) to pixels_out. Per pixel
// the color is clamp01(A*sample(texture, uv) + B) with A, B constant in the
// texture, so gradients flow only through the bilinear sample.
ad::Ptr shade_phong_ad(const FragmentMap& frags, const TriMesh& mesh, const ad::Ptr& texture,
                       const Environment& env, std::vector<int>* pixels_out);

// out = render*silhouette + background*(1-silhouette), pixel-wise.
Image composite(const RenderOutput& render, const Image& background);

// Differentiable compositing: scatter covered-pixel colors over the
// background. background must already be at render resolution.
ad::Ptr composite_ad(const ad::Ptr& covered_rgb, const std::vector<int>& pixels,
                     const Image& background);

Image silhouette_of(const FragmentMap& frags);

// Element i composites shade(rasterize(mesh, poses[i])) over backgrounds[i];
// bitwise identical to the corresponding sequence of single calls.
std::vector<Image> render_batch(const TriMesh& mesh, const Image& texture,
                                const std::vector<ScenePose>& poses, const Environment& env,
                                const std::vector<Image>& backgrounds, int height, int width,
                                double fov_deg = 60.0);

}  // namespace camo
