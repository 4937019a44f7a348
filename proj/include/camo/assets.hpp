// Procedural demo assets: a box car with a UV atlas, face selections for
// whole-body and door-sticker camouflage, printable palette, base paint, and
// synthetic background plates.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "camo/geometry.hpp"
#include "camo/image.hpp"
#include "camo/rng.hpp"

namespace camo {

// Two stacked boxes (body + cabin), 24 triangles, y-up, wheels omitted.
// Each of the 12 quads owns one cell of a 4x3 UV atlas with a small inset
// so bilinear sampling never bleeds across cells.
TriMesh make_car_mesh();

FaceSelection car_global_selection(const TriMesh& mesh);  // every face
FaceSelection car_local_selection(const TriMesh& mesh);   // the two body sides

// Factory paint: flat steel blue with a per-atlas-cell brightness offset.
Image make_car_base_texture(int resolution);

// 30 printable colors in [0,1]; fixed list, independent of any seed.
std::vector<Eigen::Vector3d> printable_palette();

// kind is "grass", "desert", or "highway"; deterministic in (kind, rng).
Image make_background(const std::string& kind, int resolution, Rng& rng);

struct AssetPaths {
  std::string mesh;
  std::string base_texture;
  std::string global_selection;
  std::string local_selection;
  std::string palette;
  std::string backgrounds_dir;
};

// Writes the full demo kit under dir (created if needed) and returns the
// paths. Three plates per background class, named by class subdirectory.
AssetPaths write_assets(const std::string& dir, std::uint64_t seed);

}  // namespace camo
