#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mmcdfsl/config.hpp"
#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/eval.hpp"
#include "mmcdfsl/fewshot.hpp"
#include "mmcdfsl/masking.hpp"
#include "mmcdfsl/stages.hpp"
#include "mmcdfsl/synth_data.hpp"

namespace py = pybind11;
using namespace mmcdfsl;

namespace {

RunConfig make_config(const std::map<std::string, std::string>& overrides) {
  RunConfig c;
  for (const auto& [k, v] : overrides) c.set(k, v, Provenance::Flag);
  return c;
}

py::array_t<float> clip_array(const Clip& clip) {
  const Tensor4& t = clip.frames;
  py::array_t<float> out({t.frames(), t.height(), t.width(), t.channels()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict sample_dict(const MultimodalSample& s) {
  py::dict d;
  d["id"] = s.id;
  d["label"] = s.label ? py::cast(*s.label) : py::none();
  d["domain"] = std::string(to_string(s.domain));
  for (const auto& [kind, clip] : s.clips) d[py::str(std::string(to_string(kind)))] = clip_array(clip);
  return d;
}

py::list sample_list(const std::vector<MultimodalSample>& v) {
  py::list out;
  for (const auto& s : v) out.append(sample_dict(s));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the mmcdfsl C++ library.";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<EpisodeError>(m, "EpisodeError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<TubeMask>(m, "TubeMask")
      .def_readonly("kept_spatial", &TubeMask::kept_spatial)
      .def_readonly("ratio", &TubeMask::ratio)
      .def_property_readonly("visible_count", &TubeMask::visible_count)
      .def("visible_indices", &TubeMask::visible_indices)
      .def("masked_indices", &TubeMask::masked_indices);

  m.def("kept_spatial_count", &kept_spatial_count, py::arg("spatial"), py::arg("ratio"));
  m.def(
      "tube_mask",
      [](int temporal, int grid_h, int grid_w, double ratio, std::uint64_t seed) {
        return tube_mask(TokenGrid{temporal, grid_h, grid_w}, ratio, seed);
      },
      py::arg("temporal_slices"), py::arg("grid_h"), py::arg("grid_w"), py::arg("ratio"), py::arg("seed"));

  m.def(
      "count_flops",
      [](int embed_dim, int depth, int heads, int temporal, int grid_h, int grid_w, int patch_volume, int n_classes,
         double ratio, int ensemble) {
        EncoderConfig ec;
        ec.embed_dim = embed_dim;
        ec.depth = depth;
        ec.heads = heads;
        const CostReport r = count_flops(ec, TokenGrid{temporal, grid_h, grid_w}, patch_volume, n_classes, ratio, ensemble);
        py::dict d;
        d["tokens_full"] = r.tokens_full;
        d["tokens_visible"] = r.tokens_visible;
        d["flops_linear"] = r.flops_linear;
        d["flops_quadratic"] = r.flops_attention_quadratic;
        d["flops_head"] = r.flops_head;
        d["flops_total"] = r.flops_total;
        return d;
      },
      py::arg("embed_dim"), py::arg("depth"), py::arg("heads"), py::arg("temporal_slices"), py::arg("grid_h"),
      py::arg("grid_w"), py::arg("patch_volume"), py::arg("n_classes"), py::arg("ratio"), py::arg("ensemble"));

  m.def("ci95_halfwidth", [](const std::vector<double>& v) { return ci95_halfwidth(v); });

  m.def("config_keys", [] {
    std::vector<std::string> out;
    for (const ConfigKey& k : config_keys()) out.push_back(k.name);
    return out;
  });
  m.def(
      "config_hash", [](const std::map<std::string, std::string>& o) { return make_config(o).hash(); },
      py::arg("overrides") = std::map<std::string, std::string>{});
  m.def(
      "config_dump", [](const std::map<std::string, std::string>& o) { return make_config(o).dump(); },
      py::arg("overrides") = std::map<std::string, std::string>{});

  m.def(
      "generate_dataset",
      [](const std::map<std::string, std::string>& overrides) {
        const Dataset ds = generate_dataset(make_config(overrides).to_settings().data);
        py::dict d;
        d["source"] = sample_list(ds.source);
        d["target_unlabeled"] = sample_list(ds.target_unlabeled);
        d["target_labeled"] = sample_list(ds.target_labeled);
        return d;
      },
      py::arg("overrides") = std::map<std::string, std::string>{},
      "Synthetic source/target pools; clips are float32 arrays shaped (T, H, W, C).");

  m.def(
      "run_pipeline",
      [](const std::map<std::string, std::string>& overrides) {
        const RunConfig cfg = make_config(overrides);
        std::ostringstream log;
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(cfg, log);
        }
        py::dict d;
        d["mean_acc"] = r.mean_acc;
        d["ci95"] = r.ci95;
        d["per_episode_acc"] = r.per_episode_acc;
        d["log"] = log.str();
        return d;
      },
      py::arg("overrides"), "gen-data, pretrain, distill and fewshot-eval under out_dir.");
}
