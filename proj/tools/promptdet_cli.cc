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

// Command-line entry point: data generation, training, evaluation, serving
// and one-shot inference.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "promptdet/config.h"
#include "promptdet/dataset.h"
#include "promptdet/errors.h"
#include "promptdet/evaluation.h"
#include "promptdet/model.h"
#include "promptdet/service.h"
#include "promptdet/training.h"
#include "promptdet/workflows.h"

namespace fs = std::filesystem;
using namespace promptdet;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "run config (JSON)");
  cmd->add_option("overrides", c.overrides, "section.key=value overrides");
}

RunConfig resolve(const Common& c) {
  RunConfig rc = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  for (const auto& o : c.overrides) rc.apply_override(o);
  return rc;
}

std::string checkpoint_or_default(const std::string& given, const RunConfig& rc) {
  return given.empty() ? (fs::path(rc.data.output_dir) / "model.pt").string() : given;
}

std::shared_ptr<Engine> open_engine(const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  return std::make_shared<Engine>(load_checkpoint(path), file_sha256(path));
}

NormalizedBox parse_box(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) v.push_back(std::stod(part));
  if (v.size() != 4) throw ValidationError("box needs cx,cy,w,h: " + text, "box");
  return {v[0], v[1], v[2], v[3]};
}

std::string split_label(std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) return {};
  std::string label = spec.substr(colon + 1);
  spec.resize(colon);
  return label;
}

void print_detections(const DetectionResult& r, const ImageSession& s) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& d : r.detections)
    out.push_back({{"label", d.label},
                   {"score", d.score},
                   {"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}}});
  std::cout << nlohmann::json{{"detections", out},
                              {"encode_ms", s.encode_ms},
                              {"prompt_ms", r.prompt_ms}}
                   .dump(2)
            << std::endl;
}

Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"promptdet: promptable open-set detector"};
  app.require_subcommand(1);

  Common gen_c, train_c, eval_c, serve_c, embed_c, detect_c;

  auto* gen = app.add_subcommand("gen-data", "render the synthetic corpus");
  std::string gen_out = "data";
  uint64_t gen_seed = 0;
  int64_t gen_train = -1, gen_test = -1, gen_count = -1;
  gen->add_option("-o,--out", gen_out, "output directory");
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--train-images", gen_train);
  gen->add_option("--test-images", gen_test);
  gen->add_option("--count-images", gen_count);
  add_common(gen, gen_c);

  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, train_c);

  auto* ev = app.add_subcommand("eval", "run an evaluation protocol");
  std::string ev_protocol, ev_ckpt, ev_kind = "box", ev_out;
  int64_t ev_n = kDefaultGenericExamples;
  double ev_threshold = -1.0;
  uint64_t ev_seed = 0;
  ev->add_option("--protocol", ev_protocol)
      ->required()
      ->check(CLI::IsMember({"text", "visual-g", "visual-i", "region-cls", "count"}));
  ev->add_option("--checkpoint", ev_ckpt);
  ev->add_option("--n", ev_n, "examples per category (visual-g)");
  ev->add_option("--kind", ev_kind, "prompt kind (visual-i)")->check(CLI::IsMember({"box", "point"}));
  ev->add_option("--threshold", ev_threshold, "score threshold (count); calibrated on data.train when omitted");
  ev->add_option("--seed", ev_seed);
  ev->add_option("--json", ev_out, "write the result as JSON");
  add_common(ev, eval_c);

  auto* sv = app.add_subcommand("serve", "run the HTTP service");
  ServiceConfig sc;
  std::string sv_ckpt;
  sv->add_option("--checkpoint", sv_ckpt);
  sv->add_option("--host", sc.host);
  sv->add_option("--port", sc.port);
  sv->add_option("--max-sessions", sc.max_sessions);
  sv->add_option("--session-ttl", sc.session_ttl_s, "idle seconds before a session expires");
  sv->add_option("--library", sc.library_path, "embedding library file");
  sv->add_option("--count-exemplars", sc.count_exemplars, "exemplars required by count (0 = any)");
  add_common(sv, serve_c);

  auto* em = app.add_subcommand("embed", "add a generic embedding to a library file");
  std::string em_ckpt, em_label, em_library;
  std::vector<std::string> em_examples;
  bool em_replace = false;
  em->add_option("--checkpoint", em_ckpt);
  em->add_option("--label", em_label)->required();
  em->add_option("--library", em_library)->required();
  em->add_option("--example", em_examples, "IMAGE=cx,cy,w,h (repeatable)")->required();
  em->add_flag("--replace", em_replace);
  add_common(em, embed_c);

  auto* dt = app.add_subcommand("detect", "detect on one image file");
  std::string dt_ckpt, dt_image, dt_library;
  std::vector<std::string> dt_text, dt_boxes, dt_points, dt_embeddings;
  double dt_threshold = -1.0;
  dt->add_option("--checkpoint", dt_ckpt);
  dt->add_option("--image", dt_image)->required();
  dt->add_option("--text", dt_text, "category name (repeatable)");
  dt->add_option("--box", dt_boxes, "cx,cy,w,h[:label] (repeatable)");
  dt->add_option("--point", dt_points, "x,y[:label] (repeatable)");
  dt->add_option("--embedding", dt_embeddings, "library label (repeatable)");
  dt->add_option("--library", dt_library);
  dt->add_option("--threshold", dt_threshold);
  add_common(dt, detect_c);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      auto cc = default_corpus_config(gen_seed);
      if (gen_train >= 0) cc.train.num_images = gen_train;
      if (gen_test >= 0) cc.test.num_images = gen_test;
      if (gen_count >= 0) cc.counting.num_images = gen_count;
      const auto paths = generate_corpus(cc, gen_out);
      std::cout << nlohmann::json{{"train", paths.train}, {"test", paths.test},
                                  {"counting", paths.counting}}
                       .dump(2)
                << std::endl;
    } else if (tr->parsed()) {
      const RunConfig rc = resolve(train_c);
      if (rc.data.train.empty()) throw ConfigError("data.train is required");
      const auto data = load_dataset(rc.data.train);
      const auto result = train(rc, data, rc.data.output_dir, [](const nlohmann::json& entry) {
        if (entry.value("step", int64_t{0}) % 50 == 0) std::cerr << entry.dump() << "\n";
      });
      std::cout << nlohmann::json{{"steps", result.steps},
                                  {"first_loss", result.first_loss},
                                  {"last_loss", result.last_loss},
                                  {"checkpoint", result.checkpoint}}
                       .dump(2)
                << std::endl;
    } else if (ev->parsed()) {
      const RunConfig rc = resolve(eval_c);
      auto engine = open_engine(checkpoint_or_default(ev_ckpt, rc));
      ProtocolOptions opts;
      opts.seed = ev_seed;
      nlohmann::json out = {{"protocol", ev_protocol}};
      auto need = [](const std::string& path, const char* key) {
        if (path.empty()) throw ConfigError(std::string(key) + " is required");
        return load_dataset(path);
      };
      if (ev_protocol == "count") {
        const auto counting = need(rc.data.counting, "data.counting");
        double th = ev_threshold;
        if (th < 0) {
          // Calibrated on dense training scenes when data.train is set.
          th = engine->config().score_threshold;
          if (!rc.data.train.empty()) {
            std::vector<double> grid;
            for (int i = 1; i <= 19; ++i) grid.push_back(0.05 * i);
            try {
              const auto calib = calibrate_count_threshold(*engine, need(rc.data.train, "data.train"), grid);
              th = calib.threshold;
              out["calibration_mae"] = calib.mae;
              out["calibration_scenes"] = calib.scenes;
            } catch (const ValidationError& e) {
              std::cerr << "calibration skipped: " << e.what() << "\n";
            }
          }
        }
        const auto r = protocol_count(*engine, counting, th, ev_seed);
        out["mae"] = r.mae;
        out["threshold"] = th;
        std::cout << "count MAE " << r.mae << " over " << r.truth.size() << " images\n";
      } else if (ev_protocol == "region-cls") {
        const auto r = protocol_region_cls(*engine, need(rc.data.test, "data.test"));
        out["top1"] = r.top1;
        out["top5"] = r.top5;
        out["total"] = r.total;
        std::cout << "top-1 " << r.top1 << "  top-5 " << r.top5 << "  (" << r.total << " regions)\n";
      } else {
        const auto test = need(rc.data.test, "data.test");
        ApSummary s;
        if (ev_protocol == "text") {
          s = protocol_text(*engine, test, opts);
        } else if (ev_protocol == "visual-i") {
          s = protocol_visual_i(*engine, test, prompt_kind_from_string(ev_kind), opts);
          out["kind"] = ev_kind;
        } else {
          const auto r =
              protocol_visual_g(*engine, need(rc.data.train, "data.train"), test, ev_n, opts);
          s = r.summary;
          out["n"] = ev_n;
          out["skipped"] = r.skipped;
        }
        out["summary"] = s.to_json();
        std::cout << s.table(test.categories) << std::endl;
      }
      if (!ev_out.empty()) std::ofstream(ev_out) << out.dump(2) << "\n";
    } else if (sv->parsed()) {
      const RunConfig rc = resolve(serve_c);
      Service service(open_engine(checkpoint_or_default(sv_ckpt, rc)), sc);
      const int port = service.bind();
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << sc.host << ":" << port << std::endl;
      service.serve();
      g_service = nullptr;
    } else if (em->parsed()) {
      const RunConfig rc = resolve(embed_c);
      auto engine = open_engine(checkpoint_or_default(em_ckpt, rc));
      std::vector<std::shared_ptr<ImageSession>> held;
      std::vector<GenericExample> examples;
      for (const auto& spec : em_examples) {
        const auto eq = spec.rfind('=');
        if (eq == std::string::npos) throw ValidationError("--example needs IMAGE=cx,cy,w,h", "example");
        held.push_back(engine->encode(read_image(spec.substr(0, eq)), spec.substr(0, eq)));
        VisualPromptSet set;
        set.label = em_label;
        set.boxes = {parse_box(spec.substr(eq + 1))};
        examples.push_back({held.back().get(), set});
      }
      EmbeddingLibrary library =
          fs::exists(em_library) ? EmbeddingLibrary::load(em_library) : EmbeddingLibrary{};
      library.add(build_generic_embedding(*engine, examples, em_label), em_replace);
      library.save(em_library);
      std::cout << "saved '" << em_label << "' from " << examples.size() << " example(s) to "
                << em_library << std::endl;
    } else if (dt->parsed()) {
      const RunConfig rc = resolve(detect_c);
      auto engine = open_engine(checkpoint_or_default(dt_ckpt, rc));
      const double th = dt_threshold >= 0 ? dt_threshold : engine->config().score_threshold;
      const auto session = engine->encode(read_image(dt_image));
      const int modes = !dt_text.empty() + (!dt_boxes.empty() || !dt_points.empty()) +
                        !dt_embeddings.empty();
      if (modes != 1)
        throw ValidationError("give exactly one of --text, --box/--point or --embedding");
      DetectionResult r;
      if (!dt_text.empty()) {
        r = workflow_text(*engine, *session, dt_text, th);
      } else if (!dt_embeddings.empty()) {
        if (dt_library.empty()) throw ValidationError("--embedding needs --library", "library");
        r = workflow_generic(*engine, *session, EmbeddingLibrary::load(dt_library), th,
                             dt_embeddings);
      } else {
        std::map<std::string, VisualPromptSet> by_label;
        for (auto spec : dt_boxes) {
          std::string label = split_label(spec);
          auto& set = by_label[label.empty() ? "object" : label];
          set.kind = PromptKind::kBox;
          set.boxes.push_back(parse_box(spec));
        }
        for (auto spec : dt_points) {
          std::string label = split_label(spec);
          auto& set = by_label[label.empty() ? "object" : label];
          if (!set.boxes.empty()) throw ValidationError("a label mixes boxes and points", "point");
          set.kind = PromptKind::kPoint;
          const auto comma = spec.find(',');
          if (comma == std::string::npos) throw ValidationError("point needs x,y", "point");
          set.points.push_back({std::stod(spec.substr(0, comma)), std::stod(spec.substr(comma + 1))});
        }
        std::vector<VisualPromptSet> sets;
        for (auto& [label, set] : by_label) {
          set.label = label;
          sets.push_back(set);
        }
        r = workflow_interactive(*engine, *session, sets, th);
      }
      print_detections(r, *session);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
