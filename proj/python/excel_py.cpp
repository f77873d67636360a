// Copyright 2026 The excel-wsss Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "excel/dynamic_calibration.hpp"
#include "excel/error.hpp"
#include "excel/fixtures.hpp"
#include "excel/metrics.hpp"
#include "excel/pipeline.hpp"
#include "excel/text_enrichment.hpp"

namespace py = pybind11;
using namespace excel;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

LabelMap to_labels(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw UsageError("label maps must be 2-D");
  LabelMap m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  return m;
}

py::dict json_to_dict(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_excel, m) {
  m.doc() = "Bindings for the excel weakly supervised segmentation library";

  // Handles stay alive through the module attributes.
  static const py::handle base = py::exception<Error>(m, "ExcelError").release();
  static const py::handle usage = py::exception<UsageError>(m, "UsageError", base).release();
  static const py::handle data = py::exception<DataError>(m, "DataError", base).release();
  static const py::handle numeric = py::exception<NumericError>(m, "NumericError", base).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::kUsage: py::set_error(usage, e.what()); break;
        case ErrorKind::kData: py::set_error(data, e.what()); break;
        case ErrorKind::kNumeric: py::set_error(numeric, e.what()); break;
      }
    }
  });

  m.def("softmax_rows", [](const Array& a) { return to_array(softmax_rows(to_tensor(a))); });
  m.def("cosine_matrix", [](const Array& a, const Array& b) { return to_array(cosine_matrix(to_tensor(a), to_tensor(b))); },
        "Column-wise cosine similarity of two [D, N] matrices.");
  m.def(
      "dynamic_relation",
      [](const Array& fd, float alpha, float beta) {
        const Relation r = dynamic_relation(to_tensor(fd), alpha, beta);
        return py::make_tuple(to_array(r.raw), to_array(r.masked));
      },
      py::arg("fd"), py::arg("alpha") = 3.0f, py::arg("beta") = 1.0f,
      "(raw, masked) relation of [D_d, hw] features; masked entries are -inf.");
  m.def(
      "diversity_loss", [](const Array& fd, const py::array_t<std::uint8_t>& labels) {
        return diversity_loss(to_tensor(fd), to_labels(labels));
      },
      py::arg("fd"), py::arg("pseudo_labels"));
  m.def("attention_entropy", [](const Array& a) { return attention_entropy(to_tensor(a)); });
  m.def(
      "hunt_attributes",
      [](const Array& query, const Array& centroids, std::size_t k) {
        const Tensor q = to_tensor(query);
        const AttributeNeighbors n = hunt_attributes(q.data(), to_tensor(centroids), k);
        return py::make_tuple(n.indices, n.scores);
      },
      py::arg("query"), py::arg("centroids"), py::arg("k"));
  m.def(
      "cluster_points",
      [](const Array& points, std::size_t clusters, std::uint64_t seed, std::size_t max_iters) {
        Rng rng(seed);
        const AttributeSpace a = cluster_points(to_tensor(points), clusters, rng, max_iters);
        py::dict d;
        d["centroids"] = to_array(a.centroids);
        d["raw_centroids"] = to_array(a.raw_centroids);
        d["assignment"] = a.assignment;
        d["objective"] = a.objective;
        d["inertia"] = a.inertia;
        return d;
      },
      py::arg("points"), py::arg("clusters"), py::arg("seed") = 0, py::arg("max_iters") = 100);
  m.def(
      "evaluate",
      [](const py::array_t<std::uint8_t>& pred, const py::array_t<std::uint8_t>& gt, std::size_t num_labels) {
        return json_to_dict(to_json(evaluate(to_labels(pred), to_labels(gt), num_labels), {}));
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_labels"));
  m.def(
      "generate_fixtures",
      [](const std::filesystem::path& root, std::uint64_t seed) {
        const FixturePaths p = generate_fixtures(root, seed);
        py::dict d;
        d["weights"] = p.weights;
        d["knowledge"] = p.knowledge;
        d["dataset"] = p.dataset;
        d["config"] = p.config;
        return d;
      },
      py::arg("root"), py::arg("seed") = 42);
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config_path, const std::filesystem::path& output, const std::string& mode,
         std::optional<std::size_t> iterations) {
        PipelineConfig c = load_pipeline_config(config_path);
        c.output = std::filesystem::absolute(output);
        if (!mode.empty()) c.mode = mode;
        if (iterations) c.train.iterations = *iterations;
        PipelineSummary s;
        {
          py::gil_scoped_release release;
          s = run_pipeline(c);
        }
        py::dict d;
        d["config_hash"] = s.config_hash;
        d["vanilla_miou"] = s.vanilla_miou;
        d["static_miou"] = s.static_miou;
        d["dynamic_miou"] = s.dynamic_miou;
        d["stages"] = s.stages;
        return d;
      },
      py::arg("config"), py::arg("output"), py::arg("mode") = "", py::arg("iterations") = py::none());
}
