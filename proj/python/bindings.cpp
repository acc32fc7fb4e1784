#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ltrp/config.hpp"
#include "ltrp/dataset.hpp"
#include "ltrp/errors.hpp"
#include "ltrp/evaluator.hpp"
#include "ltrp/pipeline.hpp"
#include "ltrp/ranker.hpp"
#include "ltrp/render.hpp"
#include "ltrp/scorer.hpp"
#include "ltrp/selector.hpp"

namespace py = pybind11;
using namespace ltrp;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image to_image(const FloatArray& a) {
  if (a.ndim() != 3) throw InvalidInput("image must be an (H, W, C) array");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

FloatArray from_image(const Image& img) {
  FloatArray out({img.height, img.width, img.channels});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

GridSpec grid_for(const FloatArray& image, int patch_size) {
  return GridSpec::for_image(static_cast<int>(image.shape(0)), static_cast<int>(image.shape(1)),
                             static_cast<int>(image.shape(2)), patch_size);
}

MaskPlan plan_from_visible(const GridSpec& grid, std::vector<int> visible) {
  std::sort(visible.begin(), visible.end());
  MaskPlan p;
  p.visible = visible;
  for (int i = 0; i < grid.n_total(); ++i)
    if (!std::binary_search(visible.begin(), visible.end(), i)) p.masked.push_back(i);
  validate_plan(p, grid);
  return p;
}

BinaryMask to_mask(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw InvalidInput("mask must be a 2-D array");
  BinaryMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  for (py::ssize_t i = 0; i < a.size(); ++i) m.data[static_cast<std::size_t>(i)] = a.data()[i] != 0;
  return m;
}

py::dict metrics_dict(const PatchMetrics& m) {
  py::dict d;
  d["iou"] = m.iou;
  d["f1"] = m.f1;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  return d;
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_python(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_ltrp, m) {
  m.doc() = "Patch ranking core: grids, pseudo scores, ranking losses, selection, metrics and the pipeline";
  m.attr("__version__") = kVersion;

  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<UnsupportedOperation>(m, "UnsupportedOperation", PyExc_NotImplementedError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<StageFailure>(m, "StageFailure", PyExc_RuntimeError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_ArithmeticError);

  m.def(
      "patchify",
      [](const FloatArray& image, int patch_size) { return Patches(patchify(to_image(image), grid_for(image, patch_size))); },
      py::arg("image"), py::arg("patch_size"), "(H, W, C) image to (N, p*p*C) patches, row-major grid order");
  m.def(
      "unpatchify",
      [](const Patches& patches, int rows, int cols, int channels, int patch_size) {
        return from_image(unpatchify(patches, GridSpec{patch_size, rows, cols, channels}));
      },
      py::arg("patches"), py::arg("rows"), py::arg("cols"), py::arg("channels"), py::arg("patch_size"));
  m.def(
      "sample_mask",
      [](int rows, int cols, double masking_ratio, std::uint64_t seed) {
        const MaskPlan p = sample_mask(GridSpec{1, rows, cols, 1}, masking_ratio, seed);
        return py::make_tuple(p.visible, p.masked);
      },
      py::arg("rows"), py::arg("cols"), py::arg("masking_ratio"), py::arg("seed"), "returns (visible, masked)");

  m.def(
      "ranking_loss",
      [](const std::string& kind, const std::vector<double>& s, const std::vector<double>& y) {
        return ranking_loss(parse_loss_kind(kind), s, y);
      },
      py::arg("kind"), py::arg("scores"), py::arg("targets"));
  m.def(
      "loss_gradient",
      [](const std::string& kind, const std::vector<double>& s, const std::vector<double>& y) {
        return loss_gradient(parse_loss_kind(kind), s, y);
      },
      py::arg("kind"), py::arg("scores"), py::arg("targets"));
  m.def(
      "kendall_tau",
      [](const std::vector<double>& a, const std::vector<double>& b) { return kendall_tau(a, b); }, py::arg("a"),
      py::arg("b"), "tau-b, or None when either sequence is constant");

  m.def(
      "dpc_knn",
      [](const FeatureMatrix& points, int k, int knn_k) {
        const ClusterResult r = dpc_knn(points, k, knn_k);
        py::dict d;
        d["centers"] = r.centers;
        d["assignment"] = r.assignment;
        d["rho"] = r.rho;
        d["delta"] = r.delta;
        d["gamma"] = r.gamma;
        return d;
      },
      py::arg("points"), py::arg("k"), py::arg("knn_k") = 5);
  m.def(
      "select_patches",
      [](const std::vector<double>& scores, const FeatureMatrix& features, double keep_ratio, double clustering_ratio,
         int knn_k) {
        const SelectionResult r = select_patches(scores, features, SelectionConfig{keep_ratio, clustering_ratio, knn_k});
        std::vector<std::string> prov;
        for (Provenance p : r.provenance) prov.push_back(to_string(p));
        return py::make_tuple(r.indices, prov);
      },
      py::arg("scores"), py::arg("features"), py::arg("keep_ratio") = 0.5, py::arg("clustering_ratio") = 0.2,
      py::arg("knn_k") = 5, "returns (indices, provenance); ranked picks come first");

  m.def(
      "patch_metrics", [](py::array_t<std::uint8_t> s, py::array_t<std::uint8_t> f) {
        return metrics_dict(patch_metrics(to_mask(s), to_mask(f)));
      },
      py::arg("selection"), py::arg("foreground"));
  m.def(
      "flops_estimate",
      [](int depth, int width, int heads, int mlp_ratio, int patch_dim, int num_classes, bool class_token, int tokens) {
        const FlopsEstimate e =
            flops_estimate(FlopsModel{{depth, width, heads, mlp_ratio}, patch_dim, num_classes, class_token}, tokens);
        py::dict d;
        d["attention"] = e.attention;
        d["projections"] = e.projections;
        d["mlp"] = e.mlp;
        d["embed_head"] = e.embed_head;
        d["total"] = e.total();
        return d;
      },
      py::arg("depth"), py::arg("width"), py::arg("heads"), py::arg("mlp_ratio"), py::arg("patch_dim"),
      py::arg("num_classes"), py::arg("class_token"), py::arg("tokens"));

  m.def(
      "image_distance",
      [](const FloatArray& a, const FloatArray& b, const std::string& metric) {
        return image_distance(to_image(a), to_image(b), parse_distance_metric(metric));
      },
      py::arg("a"), py::arg("b"), py::arg("metric") = "l1");
  m.def(
      "synthetic_reconstruct",
      [](const FloatArray& image, int patch_size, const std::vector<int>& visible) {
        const GridSpec grid = grid_for(image, patch_size);
        return from_image(synthetic_reconstruct(to_image(image), grid, plan_from_visible(grid, visible)));
      },
      py::arg("image"), py::arg("patch_size"), py::arg("visible"));
  m.def(
      "pseudo_scores",
      [](const FloatArray& image, int patch_size, const std::vector<int>& visible, const std::string& metric,
         const std::string& phase) {
        const GridSpec grid = grid_for(image, patch_size);
        const SyntheticReconstructor rec(grid);
        const ScoreVector s = semantic_density_scores(rec, to_image(image), plan_from_visible(grid, visible),
                                                      parse_distance_metric(metric), parse_removal_phase(phase));
        return s.scores;
      },
      py::arg("image"), py::arg("patch_size"), py::arg("visible"), py::arg("metric") = "l1",
      py::arg("phase") = "decoder", "leave-one-out scores under the nearest-visible reconstructor");
  m.def(
      "render_heat",
      [](const FloatArray& image, int patch_size, const std::vector<double>& scores) {
        return from_image(render_heat(to_image(image), scores, grid_for(image, patch_size)));
      },
      py::arg("image"), py::arg("patch_size"), py::arg("scores"));
  m.def(
      "render_keep",
      [](const FloatArray& image, int patch_size, const std::vector<int>& kept) {
        return from_image(render_keep(to_image(image), kept, grid_for(image, patch_size)));
      },
      py::arg("image"), py::arg("patch_size"), py::arg("kept"));

  m.def(
      "resolve_config",
      [](const py::object& overrides, const std::optional<std::filesystem::path>& config_file) {
        return to_python(load_config(config_file, from_python(overrides)).to_json());
      },
      py::arg("overrides") = py::none(), py::arg("config_file") = py::none(),
      "defaults <- file <- overrides, validated");
  m.def(
      "config_hash",
      [](const py::object& overrides, const std::optional<std::filesystem::path>& config_file) {
        return load_config(config_file, from_python(overrides)).hash();
      },
      py::arg("overrides") = py::none(), py::arg("config_file") = py::none());
  m.def(
      "run_pipeline",
      [](const py::object& overrides, const std::optional<std::filesystem::path>& config_file,
         const std::optional<std::string>& stage, bool force) {
        const PipelineConfig cfg = load_config(config_file, from_python(overrides));
        {
          py::gil_scoped_release release;
          Pipeline p(cfg);
          if (stage) p.run(parse_stage(*stage), force);
          else p.run_all(force);
        }
        return std::filesystem::path(cfg.out);
      },
      py::arg("overrides") = py::none(), py::arg("config_file") = py::none(), py::arg("stage") = py::none(),
      py::arg("force") = false, "runs one stage (with its upstream) or all of them; returns the output directory");
}
