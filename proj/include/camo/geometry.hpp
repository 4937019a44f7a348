// UV-mapped triangle meshes, camouflage face selection, UV-space mask baking,
// and texture blending.
#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "camo/ad.hpp"
#include "camo/common.hpp"
#include "camo/image.hpp"

namespace camo {

struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> faces;     // vertex indices
  std::vector<Eigen::Vector2d> uv_coords;    // in [0,1]^2
  std::vector<std::array<int, 3>> face_uvs;  // uv indices, parallel to faces
  Image base_texture;                        // empty unless a texture was resolved

  int face_count() const { return static_cast<int>(faces.size()); }
  Eigen::Vector3d centroid() const;
  void validate() const;  // throws Error("geometry", ...) on broken invariants
};

struct FaceSelection {
  std::vector<int> face_ids;  // sorted, unique

  bool empty() const { return face_ids.empty(); }
  void validate(const TriMesh& mesh) const;
  static FaceSelection all(const TriMesh& mesh);
  static FaceSelection from_ids(std::vector<int> ids);  // sorts + dedups
};

struct RegionMask {
  Image mask;  // HxW single channel, values in {0,1}

  int height() const { return mask.height; }
  int width() const { return mask.width; }
  long nonzero_count() const;
};

// Wavefront text mesh: v / vt / f records, triangles and quads. Quads split
// along the 0-2 diagonal. Every face vertex must carry a vt reference.
TriMesh load_mesh(const std::string& path);
void save_mesh(const TriMesh& mesh, const std::string& path);

FaceSelection load_face_selection(const std::string& path);
void save_face_selection(const FaceSelection& sel, const std::string& path);

// Pixel (r,c) center maps to uv = ((c+0.5)/W, 1-(r+0.5)/H). A pixel is set
// iff its center lies inside the UV triangle of a selected face; shared
// edges follow a top-left fill rule so adjacent faces never double-claim.
RegionMask bake_region_mask(const TriMesh& mesh, const FaceSelection& sel, int height, int width);

// out = mask*(lambda*adv) + (1-mask)*base, clamped to [0,1]. Base is
// resampled bilinearly to the mask resolution if needed.
Image blend_textures(const Image& base, const Image& adv, const RegionMask& mask, double lambda);

// Differentiable variant; gradients reach adv texels under the mask only.
ad::Ptr blend_textures_ad(const Image& base, const ad::Ptr& adv, const RegionMask& mask,
                          double lambda);

// Cuts texture+mask to the mask bounding box and writes an RGBA PNG whose
// alpha is the mask; uncovered pixels inside the box are mid-gray.
void export_sticker(const Image& texture, const RegionMask& mask, const std::string& path);

}  // namespace camo
