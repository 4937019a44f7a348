#include "camo/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

namespace camo {

namespace fs = std::filesystem;
using json = nlohmann::json;

Eigen::Vector3d TriMesh::centroid() const {
  if (vertices.empty()) throw Error("geometry", "centroid of empty mesh");
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& v : vertices) c += v;
  return c / static_cast<double>(vertices.size());
}

void TriMesh::validate() const {
  if (faces.empty()) throw Error("geometry", "mesh has no faces");
  if (faces.size() != face_uvs.size())
    throw Error("geometry", "face/face_uv count mismatch");
  const int nv = static_cast<int>(vertices.size());
  const int nt = static_cast<int>(uv_coords.size());
  for (const auto& f : faces)
    for (int i : f)
      if (i < 0 || i >= nv) throw Error("geometry", "face vertex index out of range");
  for (const auto& f : face_uvs)
    for (int i : f)
      if (i < 0 || i >= nt) throw Error("geometry", "face uv index out of range");
  for (const auto& uv : uv_coords)
    if (uv.x() < 0.0 || uv.x() > 1.0 || uv.y() < 0.0 || uv.y() > 1.0)
      throw Error("geometry", "uv coordinate outside [0,1]");
}

void FaceSelection::validate(const TriMesh& mesh) const {
  int prev = -1;
  for (int id : face_ids) {
    if (id <= prev) throw Error("geometry", "face selection not sorted/unique");
    if (id < 0 || id >= mesh.face_count())
      throw Error("geometry", "face selection index out of range");
    prev = id;
  }
}

FaceSelection FaceSelection::all(const TriMesh& mesh) {
  FaceSelection sel;
  sel.face_ids.resize(static_cast<std::size_t>(mesh.face_count()));
  for (int i = 0; i < mesh.face_count(); ++i) sel.face_ids[static_cast<std::size_t>(i)] = i;
  return sel;
}

FaceSelection FaceSelection::from_ids(std::vector<int> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  FaceSelection sel;
  sel.face_ids = std::move(ids);
  return sel;
}

long RegionMask::nonzero_count() const {
  long n = 0;
  for (double v : mask.pix) n += v >= 0.5 ? 1 : 0;
  return n;
}

namespace {

// OBJ indices are 1-based; negative values count back from the current end.
int resolve_index(long raw, std::size_t count, const char* kind) {
  long idx = raw > 0 ? raw - 1 : static_cast<long>(count) + raw;
  if (idx < 0 || idx >= static_cast<long>(count))
    throw Error("geometry", std::string(kind) + " index out of range in mesh file");
  return static_cast<int>(idx);
}

struct FaceVert {
  int v = -1;
  int vt = -1;
};

FaceVert parse_face_vert(const std::string& tok, std::size_t nv, std::size_t nvt,
                         bool& saw_missing_vt) {
  FaceVert out;
  // Forms: v, v/vt, v//vn, v/vt/vn
  const auto s1 = tok.find('/');
  const long v_raw = std::stol(tok.substr(0, s1));
  out.v = resolve_index(v_raw, nv, "vertex");
  if (s1 == std::string::npos) {
    saw_missing_vt = true;
    return out;
  }
  const auto s2 = tok.find('/', s1 + 1);
  const std::string vt_str =
      s2 == std::string::npos ? tok.substr(s1 + 1) : tok.substr(s1 + 1, s2 - s1 - 1);
  if (vt_str.empty()) {
    saw_missing_vt = true;
    return out;
  }
  out.vt = resolve_index(std::stol(vt_str), nvt, "uv");
  return out;
}

void load_material_texture(const fs::path& obj_dir, const std::string& mtl_name, TriMesh& mesh) {
  const fs::path mtl_path = obj_dir / mtl_name;
  std::ifstream in(mtl_path);
  if (!in) {
    warn("geometry", "material file not found: " + mtl_path.string());
    return;
  }
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key != "map_Kd") continue;
    std::string tex;
    std::getline(ls, tex);
    const auto start = tex.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    tex = tex.substr(start);
    const fs::path tex_path = obj_dir / tex;
    try {
      mesh.base_texture = load_image(tex_path.string());
    } catch (const Error& e) {
      warn("geometry", std::string("cannot load diffuse texture: ") + e.what());
    }
    return;
  }
}

}  // namespace

TriMesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("geometry", "cannot open mesh file: " + path);

  TriMesh mesh;
  std::string mtl_name;
  bool saw_vt = false;
  bool saw_missing_vt = false;
  bool clamped_uv = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    if (key == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw Error("geometry", "bad vertex at line " + std::to_string(line_no));
      mesh.vertices.emplace_back(x, y, z);
    } else if (key == "vt") {
      double u, v;
      if (!(ls >> u >> v)) throw Error("geometry", "bad uv at line " + std::to_string(line_no));
      if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) clamped_uv = true;
      mesh.uv_coords.emplace_back(clamp01(u), clamp01(v));
      saw_vt = true;
    } else if (key == "f") {
      std::vector<FaceVert> corners;
      std::string tok;
      while (ls >> tok)
        corners.push_back(parse_face_vert(tok, mesh.vertices.size(), mesh.uv_coords.size(),
                                          saw_missing_vt));
      if (corners.size() < 3 || corners.size() > 4)
        throw Error("geometry",
                    "face with " + std::to_string(corners.size()) + " vertices at line " +
                        std::to_string(line_no) + " (triangles and quads only)");
      auto emit = [&](int a, int b, int c) {
        mesh.faces.push_back({corners[a].v, corners[b].v, corners[c].v});
        mesh.face_uvs.push_back({corners[a].vt, corners[b].vt, corners[c].vt});
      };
      emit(0, 1, 2);
      if (corners.size() == 4) emit(0, 2, 3);
    } else if (key == "mtllib") {
      ls >> mtl_name;
    }
  }

  if (!saw_vt) throw Error("geometry", "mesh has no UV map");
  if (saw_missing_vt) throw Error("geometry", "face vertex without a uv reference");
  if (mesh.faces.empty()) throw Error("geometry", "mesh has no faces");
  if (clamped_uv) warn("geometry", "uv coordinates outside [0,1] clamped: " + path);

  // Non-manifold check: any undirected edge shared by more than two faces.
  std::map<std::pair<int, int>, int> edge_use;
  for (const auto& f : mesh.faces)
    for (int i = 0; i < 3; ++i) {
      const int a = f[static_cast<std::size_t>(i)];
      const int b = f[static_cast<std::size_t>((i + 1) % 3)];
      ++edge_use[{std::min(a, b), std::max(a, b)}];
    }
  for (const auto& [edge, uses] : edge_use)
    if (uses > 2) {
      warn("geometry", "non-manifold edge detected: " + path);
      break;
    }

  if (!mtl_name.empty()) load_material_texture(fs::path(path).parent_path(), mtl_name, mesh);

  mesh.validate();
  return mesh;
}

void save_mesh(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("geometry", "cannot write mesh file: " + path);
  out << "# camokit mesh\n";
  for (const auto& v : mesh.vertices)
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& uv : mesh.uv_coords) out << "vt " << uv.x() << ' ' << uv.y() << '\n';
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    out << 'f';
    for (int k = 0; k < 3; ++k)
      out << ' ' << mesh.faces[i][static_cast<std::size_t>(k)] + 1 << '/'
          << mesh.face_uvs[i][static_cast<std::size_t>(k)] + 1;
    out << '\n';
  }
  if (!out) throw Error("geometry", "write failed: " + path);
}

FaceSelection load_face_selection(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("geometry", "cannot open face selection: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("geometry", std::string("bad face selection file: ") + e.what());
  }
  if (!j.contains("face_ids") || !j["face_ids"].is_array())
    throw Error("geometry", "face selection missing face_ids array: " + path);
  return FaceSelection::from_ids(j["face_ids"].get<std::vector<int>>());
}

void save_face_selection(const FaceSelection& sel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("geometry", "cannot write face selection: " + path);
  json j;
  j["face_ids"] = sel.face_ids;
  out << j.dump(2) << '\n';
}

namespace {

double orient2d(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

// Pixel space is y-down; triangles are oriented to positive orient2d, which
// puts the interior to the right of each directed edge. A "top" edge is
// horizontal heading right, a "left" edge heads up; those own their boundary
// pixels, so neighboring faces never double-claim a shared edge.
bool edge_is_top_left(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  if (a.y() == b.y()) return b.x() > a.x();
  return b.y() < a.y();
}

}  // namespace

RegionMask bake_region_mask(const TriMesh& mesh, const FaceSelection& sel, int height, int width) {
  if (sel.empty()) throw Error("geometry", "empty camouflage region");
  if (height < 8 || width < 8) throw Error("geometry", "mask resolution below 8x8");
  sel.validate(mesh);

  RegionMask out;
  out.mask = Image(height, width, 1);

  for (int fid : sel.face_ids) {
    const auto& fuv = mesh.face_uvs[static_cast<std::size_t>(fid)];
    // UV -> pixel space: x = u*W, y = (1-v)*H, so pixel (r,c) center is
    // (c+0.5, r+0.5).
    Eigen::Vector2d p0(mesh.uv_coords[static_cast<std::size_t>(fuv[0])].x() * width,
                       (1.0 - mesh.uv_coords[static_cast<std::size_t>(fuv[0])].y()) * height);
    Eigen::Vector2d p1(mesh.uv_coords[static_cast<std::size_t>(fuv[1])].x() * width,
                       (1.0 - mesh.uv_coords[static_cast<std::size_t>(fuv[1])].y()) * height);
    Eigen::Vector2d p2(mesh.uv_coords[static_cast<std::size_t>(fuv[2])].x() * width,
                       (1.0 - mesh.uv_coords[static_cast<std::size_t>(fuv[2])].y()) * height);
    const double area = orient2d(p0, p1, p2);
    if (area == 0.0) continue;
    if (area < 0.0) std::swap(p1, p2);

    const int c0 = std::max(0, static_cast<int>(std::floor(std::min({p0.x(), p1.x(), p2.x()}) - 0.5)));
    const int c1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({p0.x(), p1.x(), p2.x()}))));
    const int r0 = std::max(0, static_cast<int>(std::floor(std::min({p0.y(), p1.y(), p2.y()}) - 0.5)));
    const int r1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({p0.y(), p1.y(), p2.y()}))));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const Eigen::Vector2d p(c + 0.5, r + 0.5);
        const double w0 = orient2d(p1, p2, p);
        const double w1 = orient2d(p2, p0, p);
        const double w2 = orient2d(p0, p1, p);
        const bool in0 = w0 > 0.0 || (w0 == 0.0 && edge_is_top_left(p1, p2));
        const bool in1 = w1 > 0.0 || (w1 == 0.0 && edge_is_top_left(p2, p0));
        const bool in2 = w2 > 0.0 || (w2 == 0.0 && edge_is_top_left(p0, p1));
        if (in0 && in1 && in2) out.mask.at(r, c, 0) = 1.0;
      }
    }
  }
  return out;
}

Image blend_textures(const Image& base, const Image& adv, const RegionMask& mask, double lambda) {
  if (adv.channels != 3 || base.channels != 3)
    throw Error("geometry", "blend expects RGB textures");
  if (adv.height != mask.height() || adv.width != mask.width())
    throw Error("geometry", "adv texture / mask resolution mismatch");
  Image b = base;
  if (b.height != mask.height() || b.width != mask.width())
    b = resize_bilinear(b, mask.height(), mask.width());

  Image out(mask.height(), mask.width(), 3);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const double m = mask.mask.at(y, x, 0);
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = clamp01(m * lambda * adv.at(y, x, c) + (1.0 - m) * b.at(y, x, c));
    }
  return out;
}

ad::Ptr blend_textures_ad(const Image& base, const ad::Ptr& adv, const RegionMask& mask,
                          double lambda) {
  if (adv->shape.size() != 3 || adv->shape[0] != 3)
    throw Error("geometry", "blend expects adv tensor [3,H,W]");
  if (adv->shape[1] != mask.height() || adv->shape[2] != mask.width())
    throw Error("geometry", "adv texture / mask resolution mismatch");
  Image b = base;
  if (b.height != mask.height() || b.width != mask.width())
    b = resize_bilinear(b, mask.height(), mask.width());

  const Eigen::Index plane = static_cast<Eigen::Index>(mask.height()) * mask.width();
  ad::Array m3(3 * plane);
  ad::Array bg(3 * plane);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < mask.height(); ++y)
      for (int x = 0; x < mask.width(); ++x) {
        const Eigen::Index i = c * plane + static_cast<Eigen::Index>(y) * mask.width() + x;
        const double m = mask.mask.at(y, x, 0);
        m3[i] = m * lambda;
        bg[i] = (1.0 - m) * b.at(y, x, c);
      }
  auto gate = ad::constant(adv->shape, std::move(m3));
  auto rest = ad::constant(adv->shape, std::move(bg));
  return ad::clamp01(ad::add(ad::mul(adv, gate), rest));
}

void export_sticker(const Image& texture, const RegionMask& mask, const std::string& path) {
  if (texture.channels != 3) throw Error("geometry", "sticker export expects an RGB texture");
  if (texture.height != mask.height() || texture.width != mask.width())
    throw Error("geometry", "texture / mask resolution mismatch");
  if (mask.nonzero_count() == 0) throw Error("geometry", "empty camouflage region");

  int r0 = mask.height(), r1 = -1, c0 = mask.width(), c1 = -1;
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c)
      if (mask.mask.at(r, c, 0) >= 0.5) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }

  cv::Mat rgba(r1 - r0 + 1, c1 - c0 + 1, CV_8UC4);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const bool on = mask.mask.at(r, c, 0) >= 0.5;
      cv::Vec4b& p = rgba.at<cv::Vec4b>(r - r0, c - c0);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = on ? texture.at(r, c, ch) : 0.5;
        p[2 - ch] = static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0));
      }
      p[3] = on ? 255 : 0;
    }
  if (!cv::imwrite(path, rgba)) throw Error("geometry", "cannot write sticker: " + path);
}

}  // namespace camo
