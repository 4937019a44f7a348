// Python bindings for the core operations: image IO, mesh baking and
// blending, rendering, detection, similarity metrics, demo assets, and the
// config-driven run commands (bake / train / render / eval / report).
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "camo/assets.hpp"
#include "camo/common.hpp"
#include "camo/detect.hpp"
#include "camo/evaluate.hpp"
#include "camo/geometry.hpp"
#include "camo/image.hpp"
#include "camo/pipeline.hpp"
#include "camo/render.hpp"

namespace py = pybind11;
using namespace camo;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Accepts (H, W) or (H, W, C) float-convertible arrays, values in [0, 1].
Image array_to_image(const DoubleArray& arr) {
  const py::buffer_info info = arr.request();
  if (info.ndim != 2 && info.ndim != 3)
    throw Error("bindings", "image array must be (H, W) or (H, W, C)");
  Image img;
  img.height = static_cast<int>(info.shape[0]);
  img.width = static_cast<int>(info.shape[1]);
  img.channels = info.ndim == 3 ? static_cast<int>(info.shape[2]) : 1;
  if (img.height <= 0 || img.width <= 0 || img.channels <= 0 || img.channels > 4)
    throw Error("bindings", "image array has unsupported shape");
  img.pix.resize(static_cast<size_t>(img.height) * img.width * img.channels);
  std::memcpy(img.pix.data(), info.ptr, img.pix.size() * sizeof(double));
  return img;
}

py::array image_to_array(const Image& img) {
  py::array_t<double> arr({img.height, img.width, img.channels});
  std::memcpy(arr.mutable_data(), img.pix.data(), img.pix.size() * sizeof(double));
  return arr;
}

RunConfig load_config_with_overrides(const std::string& config_path, const std::string& out,
                                     std::optional<std::uint64_t> seed) {
  RunConfig cfg = load_run_config(config_path);
  if (!out.empty()) cfg.output_dir = out;
  if (seed) cfg.optim.seed = *seed;
  return cfg;
}

py::dict manifest_to_dict(const RunManifest& man) {
  py::dict d;
  d["config_hash"] = man.config_hash;
  d["code_version"] = man.code_version;
  d["seed"] = man.seed;
  d["detector_weights"] = man.detector_weights;
  d["checkpoints"] = man.checkpoints;
  d["loss_csv"] = man.loss_csv;
  d["final_texture"] = man.final_texture;
  d["final_mask"] = man.final_mask;
  d["sticker"] = man.sticker;
  d["reports"] = man.reports;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sticker-camouflage toolkit core";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  m.def("version", &version_string);

  // Images. Arrays are float64 in [0, 1], shape (H, W, C).
  m.def(
      "load_image", [](const std::string& path) { return image_to_array(load_image(path)); },
      py::arg("path"));
  m.def(
      "save_png",
      [](const DoubleArray& arr, const std::string& path, int bits) {
        const Image img = array_to_image(arr);
        if (bits == 8)
          save_png8(img, path);
        else if (bits == 16)
          save_png16(img, path);
        else
          throw Error("bindings", "bits must be 8 or 16");
      },
      py::arg("image"), py::arg("path"), py::arg("bits") = 16);
  m.def(
      "resize",
      [](const DoubleArray& arr, int height, int width) {
        return image_to_array(resize_bilinear(array_to_image(arr), height, width));
      },
      py::arg("image"), py::arg("height"), py::arg("width"));

  // Similarity metrics used by the concealment evaluation.
  m.def(
      "csim",
      [](const DoubleArray& a, const DoubleArray& b) {
        return csim(array_to_image(a), array_to_image(b));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "ssim",
      [](const DoubleArray& a, const DoubleArray& b) {
        return ssim(array_to_image(a), array_to_image(b));
      },
      py::arg("a"), py::arg("b"));

  // Geometry: UV-mask baking and masked texture blending.
  m.def(
      "bake_mask",
      [](const std::string& mesh_path, const std::string& selection_path, int resolution) {
        const TriMesh mesh = load_mesh(mesh_path);
        mesh.validate();
        FaceSelection sel = selection_path.empty() ? FaceSelection::all(mesh)
                                                   : load_face_selection(selection_path);
        sel.validate(mesh);
        return image_to_array(bake_region_mask(mesh, sel, resolution, resolution).mask);
      },
      py::arg("mesh_path"), py::arg("selection_path") = "", py::arg("resolution") = 256);
  m.def(
      "blend",
      [](const DoubleArray& base, const DoubleArray& adv, const DoubleArray& mask,
         double lam) {
        RegionMask region;
        region.mask = array_to_image(mask);
        return image_to_array(
            blend_textures(array_to_image(base), array_to_image(adv), region, lam));
      },
      py::arg("base"), py::arg("adv"), py::arg("mask"), py::arg("lambda_") = 1.0);

  // Rendering.
  py::class_<ScenePose>(m, "ScenePose")
      .def(py::init<>())
      .def(py::init([](double elevation, double azimuth, double distance) {
             return ScenePose{elevation, azimuth, distance};
           }),
           py::arg("elevation"), py::arg("azimuth"), py::arg("distance"))
      .def_readwrite("elevation", &ScenePose::elevation_deg)
      .def_readwrite("azimuth", &ScenePose::azimuth_deg)
      .def_readwrite("distance", &ScenePose::distance)
      .def("__repr__", [](const ScenePose& p) {
        return "ScenePose(elevation=" + std::to_string(p.elevation_deg) +
               ", azimuth=" + std::to_string(p.azimuth_deg) +
               ", distance=" + std::to_string(p.distance) + ")";
      });

  m.def(
      "render_view",
      [](const std::string& mesh_path, const ScenePose& pose, int resolution,
         py::object texture, py::object background, double diffuse) {
        TriMesh mesh = load_mesh(mesh_path);
        mesh.validate();
        Image tex;
        if (!texture.is_none())
          tex = array_to_image(texture.cast<DoubleArray>());
        else if (!mesh.base_texture.empty())
          tex = mesh.base_texture;
        else
          tex = Image(64, 64, 3, 0.5);
        Environment env;
        env.diffuse_color = diffuse;
        env.validate();
        const FragmentMap frags = rasterize(mesh, pose, resolution, resolution);
        const RenderOutput out = shade_phong(frags, mesh, tex, env);
        Image bg;
        if (!background.is_none())
          bg = resize_bilinear(array_to_image(background.cast<DoubleArray>()), resolution,
                               resolution);
        else
          bg = Image(resolution, resolution, 3, 0.5);
        py::dict result;
        result["image"] = image_to_array(composite(out, bg));
        result["silhouette"] = image_to_array(out.silhouette);
        return result;
      },
      py::arg("mesh_path"), py::arg("pose"), py::arg("resolution") = 128,
      py::arg("texture") = py::none(), py::arg("background") = py::none(),
      py::arg("diffuse") = 0.7);

  // Detection.
  py::class_<Box>(m, "Box")
      .def_readonly("x1", &Box::x1)
      .def_readonly("y1", &Box::y1)
      .def_readonly("x2", &Box::x2)
      .def_readonly("y2", &Box::y2)
      .def("area", &Box::area)
      .def("__repr__", [](const Box& b) {
        return "Box(" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
               std::to_string(b.x2) + ", " + std::to_string(b.y2) + ")";
      });
  py::class_<Detection>(m, "Detection")
      .def_readonly("box", &Detection::box)
      .def_readonly("confidence", &Detection::confidence)
      .def_readonly("class_id", &Detection::class_id);
  py::class_<Detector, std::shared_ptr<Detector>>(m, "Detector")
      .def_property_readonly("name", &Detector::name)
      .def_property_readonly("input_resolution", &Detector::input_resolution)
      .def_property_readonly("differentiable", &Detector::differentiable)
      .def(
          "detect",
          [](const Detector& self, const DoubleArray& image) {
            return self.detect(array_to_image(image)).detections;
          },
          py::arg("image"));
  m.def("load_detector", &make_detector, py::arg("name"), py::arg("weights_path"));
  m.def("registered_detectors", &registered_detector_names);

  // Demo assets.
  m.def(
      "write_demo_assets",
      [](const std::string& dir, std::uint64_t seed) {
        const AssetPaths paths = write_assets(dir, seed);
        py::dict d;
        d["mesh"] = paths.mesh;
        d["base_texture"] = paths.base_texture;
        d["global_selection"] = paths.global_selection;
        d["local_selection"] = paths.local_selection;
        d["palette"] = paths.palette;
        d["backgrounds_dir"] = paths.backgrounds_dir;
        return d;
      },
      py::arg("dir"), py::arg("seed") = 0);

  // Config-driven run commands, mirroring the command line tool.
  m.def(
      "preset_config",
      [](const std::string& name, const std::string& path) {
        save_run_config(RunConfig::preset(name), path);
      },
      py::arg("name"), py::arg("path"));
  m.def(
      "bake",
      [](const std::string& config, const std::string& out,
         std::optional<std::uint64_t> seed) {
        const BakeResult r = cmd_bake(load_config_with_overrides(config, out, seed));
        py::dict d;
        d["mask"] = r.mask_path;
        d["sticker"] = r.sticker_path;
        d["manifest"] = r.manifest_path;
        return d;
      },
      py::arg("config"), py::arg("out") = "", py::arg("seed") = py::none());
  m.def(
      "train",
      [](const std::string& config, const std::string& out,
         std::optional<std::uint64_t> seed) {
        return manifest_to_dict(cmd_train(load_config_with_overrides(config, out, seed)));
      },
      py::arg("config"), py::arg("out") = "", py::arg("seed") = py::none());
  m.def(
      "render",
      [](const std::string& config, const std::string& texture, const ScenePose& pose,
         const std::string& background, const std::string& out_png,
         const std::string& silhouette_png, const std::string& out) {
        cmd_render(load_config_with_overrides(config, out, std::nullopt), texture, pose,
                   background, out_png, silhouette_png);
      },
      py::arg("config"), py::arg("texture"), py::arg("pose"), py::arg("background") = "",
      py::arg("out_png") = "render.png", py::arg("silhouette_png") = "", py::arg("out") = "");
  m.def(
      "render_grid",
      [](const std::string& config, const std::string& texture, const std::string& grid,
         const std::string& background, const std::string& out_png,
         const std::string& silhouette_png, const std::string& out) {
        cmd_render_grid(load_config_with_overrides(config, out, std::nullopt), texture, grid,
                        background, out_png, silhouette_png);
      },
      py::arg("config"), py::arg("texture"), py::arg("grid") = "desk",
      py::arg("background") = "", py::arg("out_png") = "grid.png",
      py::arg("silhouette_png") = "", py::arg("out") = "");
  m.def(
      "evaluate",
      [](const std::string& config, const std::vector<std::string>& textures,
         const std::string& sweep, const std::string& grid,
         const std::vector<std::string>& scenes, const std::string& out) {
        return cmd_eval(load_config_with_overrides(config, out, std::nullopt), textures, sweep,
                        grid, scenes);
      },
      py::arg("config"), py::arg("textures"), py::arg("sweep"), py::arg("grid") = "desk",
      py::arg("scenes") = std::vector<std::string>{}, py::arg("out") = "");
  m.def(
      "report",
      [](const std::string& config, const std::string& out) {
        return cmd_report(load_config_with_overrides(config, out, std::nullopt));
      },
      py::arg("config"), py::arg("out") = "");
}
