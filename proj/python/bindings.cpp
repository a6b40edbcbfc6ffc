#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pisa/cli.hpp"
#include "pisa/config.hpp"
#include "pisa/eval.hpp"
#include "pisa/geometry.hpp"
#include "pisa/hlr.hpp"
#include "pisa/io.hpp"
#include "pisa/isr.hpp"
#include "pisa/losses.hpp"

namespace py = pybind11;
using namespace pisa;

namespace {

using Box4 = std::array<double, 4>;

BBox to_box(const Box4& b) { return {b[0], b[1], b[2], b[3]}; }
Box4 from_box(const BBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }
Box4 from_delta(const Delta& d) { return {d.dx, d.dy, d.dw, d.dh}; }

// JSON crosses the boundary as text; the Python side wraps it with json.
ExperimentConfig parse_config(const std::string& text) {
  return config_from_json(text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Prime-sample attention core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("iou", [](const Box4& a, const Box4& b) { return iou(to_box(a), to_box(b)); });
  m.def("encode_delta", [](const Box4& s, const Box4& t) { return from_delta(encode_delta(to_box(s), to_box(t))); });
  m.def("apply_delta", [](const Box4& s, const Box4& d) {
    return from_box(apply_delta(to_box(s), {d[0], d[1], d[2], d[3]}));
  });
  m.def("smooth_l1", &smooth_l1);

  m.def(
      "hierarchical_rank",
      [](const std::vector<int>& groups, const std::vector<double>& keys) {
        std::vector<std::size_t> ids(groups.size());
        for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
        const auto r = hierarchical_rank(ids, groups, keys);
        std::vector<int> local, hlr;
        for (const auto& e : r.entries) local.push_back(e.local_rank), hlr.push_back(e.hlr);
        return py::make_tuple(local, hlr);
      },
      py::arg("groups"), py::arg("keys"), "Returns (local_rank, hlr) per item.");

  m.def("rank_to_importance", &rank_to_importance);
  m.def("importance_to_weight", &importance_to_weight, py::arg("u"), py::arg("gamma"), py::arg("beta"));
  m.def("normalize_weights", [](const std::vector<double>& w, const std::vector<double>& ce) {
    return normalize_weights(w, ce);
  });

  m.def(
      "carl",
      [](const std::vector<double>& p, const std::vector<double>& l, double k, double b) {
        const auto r = carl(p, l, k, b);
        py::dict d;
        d["loss"] = r.loss;
        d["v"] = r.v;
        d["c"] = r.c;
        d["grad_p"] = r.grad_p;
        d["v_sum"] = r.v_sum;
        return d;
      },
      py::arg("p"), py::arg("reg_losses"), py::arg("k") = 1.0, py::arg("b") = 0.2);
  m.def(
      "carl_grad_approx",
      [](const std::vector<double>& p, const std::vector<double>& l, double k, double b) {
        return carl_grad_approx(p, l, k, b);
      },
      py::arg("p"), py::arg("reg_losses"), py::arg("k") = 1.0, py::arg("b") = 0.2);

  m.def(
      "average_precision",
      [](const std::vector<bool>& flags, const std::vector<double>& scores, std::size_t n_gt) {
        return average_precision(flags, scores, n_gt);
      },
      py::arg("flags"), py::arg("scores"), py::arg("n_gt"));
  m.def(
      "nms",
      [](const std::vector<Box4>& boxes, const std::vector<double>& scores, double thr) {
        std::vector<Detection> d;
        for (std::size_t i = 0; i < boxes.size(); ++i) d.push_back({to_box(boxes[i]), 0, scores.at(i)});
        return nms_indices(d, thr);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_thr") = 0.5);
  m.def("coco_map_json", [](const std::string& records) {
    const auto recs = image_records_from_json(nlohmann::json::parse(records));
    return to_json(coco_map(recs)).dump();
  });

  m.def("default_config_json", [] { return to_json(ExperimentConfig{}).dump(); });
  m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); });
  m.def(
      "run_experiment_json",
      [](const std::string& text, std::uint64_t seed) {
        const ExperimentConfig c = parse_config(text);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(c, seed);
        }
        return to_json(r.record).dump();
      },
      py::arg("config"), py::arg("seed"));
  m.def("run_cli", [](const std::vector<std::string>& args) {
    py::gil_scoped_release release;
    return run_cli(args);
  });
}
