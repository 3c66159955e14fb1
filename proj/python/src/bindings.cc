// Copyright 2026 The promptdet Authors.
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

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "promptdet/dataset.h"
#include "promptdet/geometry.h"
#include "promptdet/matching.h"
#include "promptdet/model.h"
#include "promptdet/service.h"

namespace py = pybind11;
using namespace promptdet;

namespace {

NormalizedBox to_box(const std::array<double, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

// (status, JSON text); the Python layer parses the body.
using Reply = std::pair<int, std::string>;

Reply reply(const std::function<ApiResponse()>& fn) {
  ApiResponse r;
  try {
    py::gil_scoped_release release;
    r = fn();
  } catch (const std::exception& e) {
    r = error_response(e);
  }
  return {r.status, r.body.is_null() ? std::string() : r.body.dump()};
}

std::shared_ptr<Engine> engine_from(const std::string& checkpoint, const std::string& model_config,
                                    int64_t seed) {
  if (!checkpoint.empty())
    return std::make_shared<Engine>(load_checkpoint(checkpoint), file_sha256(checkpoint));
  ModelConfig cfg;
  if (!model_config.empty()) from_json(nlohmann::json::parse(model_config), cfg);
  cfg.validate();
  torch::manual_seed(static_cast<uint64_t>(seed));
  return std::make_shared<Engine>(DetectorModel(cfg));
}

ServiceConfig service_config(size_t max_sessions, double ttl_seconds, const std::string& library) {
  ServiceConfig c;
  c.max_sessions = max_sessions;
  c.session_ttl_s = ttl_seconds;
  c.library_path = library;
  return c;
}

}  // namespace

PYBIND11_MODULE(_promptdet, m) {
  m.doc() = "Native core of the promptdet detector";

  m.def("iou", [](std::array<double, 4> a, std::array<double, 4> b) { return iou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"));
  m.def("giou", [](std::array<double, 4> a, std::array<double, 4> b) { return giou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"));
  m.def(
      "assign",
      [](const std::vector<std::vector<double>>& cost) {
        const int64_t rows = static_cast<int64_t>(cost.size());
        const int64_t cols = rows ? static_cast<int64_t>(cost[0].size()) : 0;
        auto t = torch::zeros({rows, cols}, torch::kFloat64);
        for (int64_t r = 0; r < rows; ++r) {
          if (static_cast<int64_t>(cost[r].size()) != cols) throw py::value_error("ragged cost matrix");
          for (int64_t c = 0; c < cols; ++c) t[r][c] = cost[r][c];
        }
        const auto result = match_from_cost(t);
        std::vector<std::pair<int64_t, int64_t>> rc;
        for (const auto& [q, g] : result.pairs) rc.emplace_back(g, q);
        return py::make_tuple(rc, result.total_cost);
      },
      py::arg("cost"), "Minimum-cost assignment of rows to columns: ([(row, col)], total).");

  m.def(
      "generate_corpus",
      [](const std::string& out_dir, uint64_t seed, int64_t train_images, int64_t test_images,
         int64_t count_images) {
        CorpusConfig cfg = default_corpus_config(seed);
        if (train_images >= 0) cfg.train.num_images = train_images;
        if (test_images >= 0) cfg.test.num_images = test_images;
        if (count_images >= 0) cfg.counting.num_images = count_images;
        CorpusPaths p;
        {
          py::gil_scoped_release release;
          p = generate_corpus(cfg, out_dir);
        }
        return py::dict(py::arg("train") = p.train, py::arg("test") = p.test,
                        py::arg("counting") = p.counting);
      },
      py::arg("out_dir"), py::arg("seed") = 0, py::arg("train_images") = -1,
      py::arg("test_images") = -1, py::arg("count_images") = -1);

  py::class_<Service, std::shared_ptr<Service>>(m, "_Service")
      .def(py::init([](const std::string& checkpoint, const std::string& model_config, int64_t seed,
                       size_t max_sessions, double ttl_seconds, const std::string& library) {
             return std::make_shared<Service>(engine_from(checkpoint, model_config, seed),
                                              service_config(max_sessions, ttl_seconds, library));
           }),
           py::arg("checkpoint") = "", py::arg("model_config") = "", py::arg("seed") = 0,
           py::arg("max_sessions") = 64, py::arg("session_ttl") = 1800.0, py::arg("library") = "")
      .def("create_session",
           [](Service& s, const py::bytes& image) {
             std::string raw = image;
             return reply([&] { return s.create_session_from_bytes(raw); });
           })
      .def("get_session", [](Service& s, const std::string& id) { return reply([&] { return s.get_session(id); }); })
      .def("delete_session", [](Service& s, const std::string& id) { return reply([&] { return s.delete_session(id); }); })
      .def("detect",
           [](Service& s, const std::string& id, const std::string& request) {
             return reply([&] { return s.detect(id, nlohmann::json::parse(request)); });
           })
      .def("create_embedding",
           [](Service& s, const std::string& request) {
             return reply([&] { return s.create_embedding(nlohmann::json::parse(request)); });
           })
      .def("list_embeddings", [](Service& s) { return reply([&] { return s.list_embeddings(); }); })
      .def("get_embedding", [](Service& s, const std::string& l) { return reply([&] { return s.get_embedding(l); }); })
      .def("delete_embedding", [](Service& s, const std::string& l) { return reply([&] { return s.delete_embedding(l); }); })
      .def("model_info", [](Service& s) { return reply([&] { return s.model_info(); }); })
      .def("health", [](Service& s) { return reply([&] { return s.health(); }); })
      .def_property_readonly("backbone_forwards", [](Service& s) { return s.engine().backbone_forwards(); });
}
