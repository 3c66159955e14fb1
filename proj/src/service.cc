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

#include "promptdet/service.h"

#include <filesystem>

#include <httplib.h>
#include <openssl/evp.h>

#include "promptdet/errors.h"

namespace promptdet {

SessionStore::SessionStore(size_t capacity, std::chrono::milliseconds ttl)
    : capacity_(std::max<size_t>(capacity, 1)), ttl_(ttl) {}

int64_t SessionStore::now_ticks() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void SessionStore::evict_locked() {
  const int64_t now = now_ticks();
  for (auto it = slots_.begin(); it != slots_.end();) {
    if (ttl_.count() > 0 && now - it->second->last_used.load() > ttl_.count())
      it = slots_.erase(it);
    else
      ++it;
  }
  while (slots_.size() > capacity_) {
    auto oldest = slots_.begin();
    for (auto it = slots_.begin(); it != slots_.end(); ++it)
      if (it->second->recency.load() < oldest->second->recency.load()) oldest = it;
    slots_.erase(oldest);
  }
}

void SessionStore::insert(std::shared_ptr<const ImageSession> session) {
  auto slot = std::make_unique<Slot>();
  slot->session = std::move(session);
  slot->last_used.store(now_ticks());
  slot->recency.store(++clock_);
  std::unique_lock lock(mutex_);
  const std::string id = slot->session->id;
  if (slots_.count(id)) throw ConflictError("session id '" + id + "' already exists", "id");
  slots_.emplace(id, std::move(slot));
  evict_locked();
}

std::shared_ptr<const ImageSession> SessionStore::get(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = slots_.find(id);
  const int64_t now = now_ticks();
  if (it == slots_.end() ||
      (ttl_.count() > 0 && now - it->second->last_used.load() > ttl_.count()))
    throw NotFoundError("session '" + id + "' not found");
  it->second->last_used.store(now);
  it->second->recency.store(++clock_);
  // The shared_ptr keeps features alive even if the slot is evicted meanwhile.
  return it->second->session;
}

bool SessionStore::erase(const std::string& id) {
  std::unique_lock lock(mutex_);
  return slots_.erase(id) > 0;
}

size_t SessionStore::size() const {
  std::shared_lock lock(mutex_);
  return slots_.size();
}

std::vector<std::string> SessionStore::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : slots_) out.push_back(id);
  return out;
}

std::string base64_decode(const std::string& text) {
  std::string clean;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  if (clean.empty() || clean.size() % 4 != 0)
    throw ValidationError("image_base64 is not valid base64", "image_base64");
  std::string out(clean.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw ValidationError("image_base64 is not valid base64", "image_base64");
  size_t pad = 0;
  if (clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<size_t>(n) - pad);
  return out;
}

ApiResponse error_response(const std::exception& e) {
  auto body = [](const std::string& code, const std::string& message, const std::string& field) {
    nlohmann::json j = {{"code", code}, {"message", message}};
    if (!field.empty()) j["field"] = field;
    return j;
  };
  if (auto* c = dynamic_cast<const ConflictError*>(&e)) return {409, body("conflict", c->what(), c->field())};
  if (auto* v = dynamic_cast<const ValidationError*>(&e))
    return {400, body("invalid_argument", v->what(), v->field())};
  if (dynamic_cast<const ImageDecodeError*>(&e)) return {400, body("invalid_image", e.what(), "image")};
  if (dynamic_cast<const NotFoundError*>(&e)) return {404, body("not_found", e.what(), "")};
  if (dynamic_cast<const nlohmann::json::exception*>(&e))
    return {400, body("invalid_json", e.what(), "")};
  if (dynamic_cast<const std::invalid_argument*>(&e))
    return {400, body("invalid_argument", e.what(), "")};
  return {500, body("internal", e.what(), "")};
}

namespace {

const nlohmann::json& require(const nlohmann::json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError("missing field '" + key + "'", key);
  return j.at(key);
}

std::vector<double> number_list(const nlohmann::json& j, size_t size, const std::string& field) {
  if (!j.is_array() || j.size() != size)
    throw ValidationError("expected " + std::to_string(size) + " numbers", field);
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw ValidationError("expected a number", field);
    out.push_back(v.get<double>());
  }
  return out;
}

VisualPromptSet parse_prompt_set(const nlohmann::json& j, const std::string& field) {
  if (!j.is_object()) throw ValidationError("prompt set must be an object", field);
  VisualPromptSet set;
  const std::string kind = j.value("kind", std::string("box"));
  try {
    set.kind = prompt_kind_from_string(kind);
  } catch (const ValidationError&) {
    throw ValidationError("unknown prompt kind '" + kind + "'", field + ".kind");
  }
  set.label = j.value("label", std::string());
  set.category_id = j.value("category_id", int64_t{-1});
  if (set.kind == PromptKind::kBox) {
    for (const auto& b : require(j, "boxes")) {
      const auto v = number_list(b, 4, field + ".boxes");
      set.boxes.push_back({v[0], v[1], v[2], v[3]});
    }
  } else {
    for (const auto& p : require(j, "points")) {
      const auto v = number_list(p, 2, field + ".points");
      set.points.push_back({v[0], v[1]});
    }
  }
  try {
    set.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(e.what(), field);
  }
  return set;
}

std::vector<std::string> string_list(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) throw ValidationError("expected a list of strings", field);
  std::vector<std::string> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ValidationError("expected a list of strings", field);
    out.push_back(v.get<std::string>());
  }
  return out;
}

nlohmann::json detections_json(const DetectionResult& result, const ImageSession& session) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& d : result.detections) {
    const Corners c = to_corners(d.box);
    out.push_back({{"label", d.label},
                   {"score", d.score},
                   {"class_index", d.class_index},
                   {"query_index", d.query_index},
                   {"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}},
                   {"box_xyxy", {c.x0 * session.width, c.y0 * session.height,
                                 c.x1 * session.width, c.y1 * session.height}}});
  }
  return out;
}

nlohmann::json session_json(const ImageSession& s) {
  nlohmann::json levels = nlohmann::json::array();
  for (const auto& [h, w] : s.features.shapes) levels.push_back({h, w});
  return {{"session_id", s.id},
          {"width", s.width},
          {"height", s.height},
          {"encode_ms", s.encode_ms},
          {"levels", levels}};
}

const std::map<std::string, std::vector<std::string>>& mode_fields() {
  static const std::map<std::string, std::vector<std::string>> kFields = {
      {"text", {"names"}},
      {"interactive", {"prompts"}},
      {"generic", {"embeddings"}},
      {"mixed", {"pairs"}},
      {"classify_region", {"region", "candidates"}},
      {"count", {"exemplars"}},
  };
  return kFields;
}

}  // namespace

Service::Service(std::shared_ptr<Engine> engine, ServiceConfig config)
    : engine_(std::move(engine)),
      config_(std::move(config)),
      sessions_(config_.max_sessions,
                std::chrono::milliseconds(static_cast<int64_t>(config_.session_ttl_s * 1000.0))) {
  if (!config_.library_path.empty() && std::filesystem::exists(config_.library_path))
    library_ = EmbeddingLibrary::load(config_.library_path);
}

Service::~Service() { stop(); }

ApiResponse Service::create_session_from_bytes(const std::string& image_bytes) {
  const Image image = decode_image(image_bytes);
  auto session = engine_->encode(image);
  created_.fetch_add(1);
  sessions_.insert(session);
  return {201, session_json(*session)};
}

ApiResponse Service::create_session(const std::string& body, const std::string& content_type) {
  if (content_type.rfind("application/json", 0) == 0) {
    const auto doc = nlohmann::json::parse(body);
    const auto& b64 = require(doc, "image_base64");
    if (!b64.is_string()) throw ValidationError("image_base64 must be a string", "image_base64");
    return create_session_from_bytes(base64_decode(b64.get<std::string>()));
  }
  return create_session_from_bytes(body);
}

ApiResponse Service::get_session(const std::string& id) const {
  auto session = sessions_.get(id);
  auto body = session_json(*session);
  body["age_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - session->created).count();
  return {200, body};
}

ApiResponse Service::delete_session(const std::string& id) {
  if (!sessions_.erase(id)) throw NotFoundError("session '" + id + "' not found");
  return {204, nullptr};
}

ApiResponse Service::detect(const std::string& id, const nlohmann::json& request) {
  if (!request.is_object()) throw ValidationError("request must be a JSON object");
  const auto& mode_value = require(request, "mode");
  if (!mode_value.is_string()) throw ValidationError("mode must be a string", "mode");
  const std::string mode = mode_value.get<std::string>();
  auto fields = mode_fields().find(mode);
  if (fields == mode_fields().end()) throw ValidationError("unknown mode '" + mode + "'", "mode");
  for (const auto& [other, keys] : mode_fields()) {
    if (other == mode) continue;
    for (const auto& key : keys) {
      const auto& mine = fields->second;
      if (request.contains(key) && std::find(mine.begin(), mine.end(), key) == mine.end())
        throw ValidationError("field '" + key + "' does not belong to mode '" + mode + "'", key);
    }
  }
  double threshold = engine_->config().score_threshold;
  if (request.contains("threshold")) {
    if (!request["threshold"].is_number()) throw ValidationError("threshold must be a number", "threshold");
    threshold = request["threshold"].get<double>();
  }
  auto session = sessions_.get(id);

  nlohmann::json body = {{"session_id", session->id}, {"mode", mode}};
  DetectionResult result;
  if (mode == "text") {
    result = workflow_text(*engine_, *session, string_list(require(request, "names"), "names"),
                           threshold);
  } else if (mode == "interactive") {
    const auto& list = require(request, "prompts");
    if (!list.is_array() || list.empty()) throw ValidationError("prompts must be a non-empty list", "prompts");
    std::vector<VisualPromptSet> sets;
    for (size_t i = 0; i < list.size(); ++i)
      sets.push_back(parse_prompt_set(list[i], "prompts[" + std::to_string(i) + "]"));
    result = workflow_interactive(*engine_, *session, sets, threshold);
  } else if (mode == "generic") {
    std::vector<std::string> labels;
    if (request.contains("embeddings")) labels = string_list(request["embeddings"], "embeddings");
    std::shared_lock lock(library_mutex_);
    result = workflow_generic(*engine_, *session, library_, threshold, labels);
  } else if (mode == "mixed") {
    const auto& list = require(request, "pairs");
    if (!list.is_array() || list.empty()) throw ValidationError("pairs must be a non-empty list", "pairs");
    std::vector<MixedPrompt> pairs;
    std::vector<VisualPromptSet> local_sets;
    std::vector<size_t> local_index;
    for (size_t i = 0; i < list.size(); ++i) {
      const std::string field = "pairs[" + std::to_string(i) + "]";
      const auto& name = require(list[i], "name");
      if (!name.is_string()) throw ValidationError("name must be a string", field + ".name");
      MixedPrompt p;
      p.name = name.get<std::string>();
      if (list[i].contains("embedding")) {
        std::shared_lock lock(library_mutex_);
        p.visual = library_.get(list[i]["embedding"].get<std::string>()).embedding;
      } else if (list[i].contains("vector")) {
        p.visual = embedding_from_json({{"label", p.name}, {"kind", "visual"}, {"vector", list[i]["vector"]}});
      } else if (list[i].contains("prompts")) {
        local_sets.push_back(parse_prompt_set(list[i]["prompts"], field + ".prompts"));
        local_index.push_back(i);
      } else {
        throw ValidationError("pair needs an embedding label, a vector or prompts", field);
      }
      pairs.push_back(std::move(p));
    }
    if (!local_sets.empty()) {
      auto rows = engine_->visual_embeddings(*session, local_sets);
      for (size_t j = 0; j < local_index.size(); ++j)
        pairs[local_index[j]].visual = make_embedding(rows[static_cast<int64_t>(j)],
                                                      EmbeddingKind::kVisual,
                                                      pairs[local_index[j]].name);
    }
    result = workflow_mixed(*engine_, *session, pairs, threshold);
  } else if (mode == "classify_region") {
    const auto start = std::chrono::steady_clock::now();
    const auto region = parse_prompt_set(require(request, "region"), "region");
    const auto candidates = string_list(require(request, "candidates"), "candidates");
    const auto r = classify_region(*engine_, *session, region, candidates);
    nlohmann::json probs = nlohmann::json::object();
    for (size_t i = 0; i < candidates.size(); ++i) probs[candidates[i]] = r.probabilities[i];
    body["label"] = r.label;
    body["probabilities"] = probs;
    body["timing"] = {{"prompt_ms", std::chrono::duration<double, std::milli>(
                                        std::chrono::steady_clock::now() - start)
                                        .count()},
                      {"encode_ms", session->encode_ms}};
    return {200, body};
  } else {
    auto exemplars = parse_prompt_set(require(request, "exemplars"), "exemplars");
    if (config_.count_exemplars > 0 &&
        static_cast<int64_t>(exemplars.size()) != config_.count_exemplars)
      throw ValidationError("counting needs exactly " + std::to_string(config_.count_exemplars) +
                                " exemplars",
                            "exemplars");
    if (exemplars.label.empty()) exemplars.label = "target";
    result = workflow_interactive(*engine_, *session, {exemplars}, threshold);
    body["count"] = result.detections.size();
  }
  body["detections"] = detections_json(result, *session);
  body["timing"] = {{"prompt_ms", result.prompt_ms}, {"encode_ms", session->encode_ms}};
  return {200, body};
}

void Service::persist_library_locked() const {
  if (!config_.library_path.empty()) library_.save(config_.library_path);
}

ApiResponse Service::create_embedding(const nlohmann::json& request) {
  const auto& label_value = require(request, "label");
  if (!label_value.is_string() || label_value.get<std::string>().empty())
    throw ValidationError("label must be a non-empty string", "label");
  const std::string label = label_value.get<std::string>();
  const bool replace = request.value("replace", false);
  LibraryEntry entry;
  if (request.contains("vector")) {
    entry.embedding = embedding_from_json({{"label", label},
                                           {"kind", request.value("kind", std::string("visual"))},
                                           {"vector", request["vector"]}});
    entry.count = request.value("count", int64_t{1});
  } else {
    const auto& list = require(request, "examples");
    if (!list.is_array() || list.empty())
      throw ValidationError("examples must be a non-empty list", "examples");
    std::vector<std::shared_ptr<const ImageSession>> held;
    std::vector<GenericExample> examples;
    for (size_t i = 0; i < list.size(); ++i) {
      const std::string field = "examples[" + std::to_string(i) + "]";
      const auto& sid = require(list[i], "session_id");
      if (!sid.is_string()) throw ValidationError("session_id must be a string", field + ".session_id");
      held.push_back(sessions_.get(sid.get<std::string>()));
      auto set = parse_prompt_set(require(list[i], "prompts"), field + ".prompts");
      if (set.label.empty()) set.label = label;
      examples.push_back({held.back().get(), set});
    }
    entry = build_generic_embedding(*engine_, examples, label);
  }
  std::unique_lock lock(library_mutex_);
  library_.add(entry, replace);
  persist_library_locked();
  auto body = embedding_to_json(library_.get(label).embedding);
  body["sources"] = entry.sources;
  body["count"] = entry.count;
  return {201, body};
}

ApiResponse Service::list_embeddings() const {
  std::shared_lock lock(library_mutex_);
  nlohmann::json list = nlohmann::json::array();
  for (const auto& label : library_.labels()) {
    const auto& e = library_.get(label);
    list.push_back({{"label", label},
                    {"kind", to_string(e.embedding.kind)},
                    {"count", e.count},
                    {"sources", e.sources}});
  }
  return {200, {{"embeddings", list}}};
}

ApiResponse Service::get_embedding(const std::string& label) const {
  std::shared_lock lock(library_mutex_);
  const auto& e = library_.get(label);
  auto body = embedding_to_json(e.embedding);
  body["sources"] = e.sources;
  body["count"] = e.count;
  return {200, body};
}

ApiResponse Service::delete_embedding(const std::string& label) {
  std::unique_lock lock(library_mutex_);
  if (!library_.remove(label)) throw NotFoundError("no embedding named '" + label + "'");
  persist_library_locked();
  return {204, nullptr};
}

ApiResponse Service::health() const { return {200, {{"status", "ok"}}}; }

ApiResponse Service::model_info() const {
  std::shared_lock lock(library_mutex_);
  return {200,
          {{"config", nlohmann::json(engine_->config())},
           {"checkpoint_sha256", engine_->checkpoint_hash()},
           {"backbone_forwards", engine_->backbone_forwards()},
           {"sessions_created", created_.load()},
           {"active_sessions", sessions_.size()},
           {"embeddings", library_.size()}}};
}

void Service::install_routes() {
  auto& srv = *server_;
  srv.set_payload_max_length(config_.max_upload_bytes);
  auto reply = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    if (r.status != 204) res.set_content(r.body.dump(), "application/json");
  };
  auto guarded = [reply](auto&& fn) {
    return [fn, reply](const httplib::Request& req, httplib::Response& res) {
      try {
        reply(res, fn(req));
      } catch (const std::exception& e) {
        reply(res, error_response(e));
      }
    };
  };
  auto json_body = [](const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    return nlohmann::json::parse(req.body);
  };

  srv.Post("/sessions", guarded([this](const httplib::Request& req) {
             if (req.is_multipart_form_data()) {
               if (!req.has_file("image"))
                 throw ValidationError("multipart upload needs an 'image' part", "image");
               return create_session_from_bytes(req.get_file_value("image").content);
             }
             return create_session(req.body, req.get_header_value("Content-Type"));
           }));
  srv.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req) {
            return get_session(req.matches[1]);
          }));
  srv.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req) {
               return delete_session(req.matches[1]);
             }));
  srv.Post(R"(/sessions/([^/]+)/detect)", guarded([this, json_body](const httplib::Request& req) {
             return detect(req.matches[1], json_body(req));
           }));
  srv.Post("/embeddings", guarded([this, json_body](const httplib::Request& req) {
             return create_embedding(json_body(req));
           }));
  srv.Get("/embeddings", guarded([this](const httplib::Request&) { return list_embeddings(); }));
  srv.Get(R"(/embeddings/(.+))", guarded([this](const httplib::Request& req) {
            return get_embedding(req.matches[1]);
          }));
  srv.Delete(R"(/embeddings/(.+))", guarded([this](const httplib::Request& req) {
               return delete_embedding(req.matches[1]);
             }));
  srv.Get("/healthz", guarded([this](const httplib::Request&) { return health(); }));
  srv.Get("/model/info", guarded([this](const httplib::Request&) { return model_info(); }));
}

int Service::bind() {
  server_ = std::make_unique<httplib::Server>();
  install_routes();
  if (config_.port == 0) return server_->bind_to_any_port(config_.host);
  if (!server_->bind_to_port(config_.host, config_.port))
    throw std::runtime_error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  return config_.port;
}

void Service::serve() {
  if (!server_) bind();
  server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace promptdet
