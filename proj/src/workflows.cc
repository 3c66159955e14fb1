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

#include "promptdet/workflows.h"

#include <cmath>
#include <fstream>
#include <set>

#include "promptdet/errors.h"

namespace promptdet {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string set_label(const VisualPromptSet& set, size_t index) {
  if (!set.label.empty()) return set.label;
  if (set.category_id >= 0) return "category " + std::to_string(set.category_id);
  return "prompt " + std::to_string(index);
}

}  // namespace

Engine::Engine(DetectorModel model, std::string checkpoint_hash)
    : model_(std::move(model)), checkpoint_hash_(std::move(checkpoint_hash)) {
  model_->eval();
}

std::shared_ptr<ImageSession> Engine::encode(const Image& image, std::string id) {
  if (image.width <= 0 || image.height <= 0) throw ValidationError("empty image", "image");
  torch::NoGradGuard no_grad;
  const auto start = Clock::now();
  auto x = image_to_tensor(image).unsqueeze(0);
  const int64_t stride = config().coarsest_stride();
  auto snap = [stride](int64_t v) {
    return std::max<int64_t>(stride, (v + stride / 2) / stride * stride);
  };
  const int64_t h = snap(image.height), w = snap(image.width);
  if (h != image.height || w != image.width) {
    x = torch::nn::functional::interpolate(
        x, torch::nn::functional::InterpolateFuncOptions()
               .size(std::vector<int64_t>{h, w})
               .mode(torch::kBilinear)
               .align_corners(false));
  }
  auto session = std::make_shared<ImageSession>();
  forwards_.fetch_add(1);
  session->features = model_->encode_image(x);
  session->id = id.empty() ? "s" + std::to_string(next_id_.fetch_add(1)) : std::move(id);
  session->width = image.width;
  session->height = image.height;
  session->created = Clock::now();
  session->encode_ms = elapsed_ms(start);
  return session;
}

torch::Tensor Engine::text_embeddings(const std::vector<std::string>& names) {
  torch::NoGradGuard no_grad;
  return model_->encode_text(names);
}

torch::Tensor Engine::visual_embeddings(const ImageSession& session,
                                        const std::vector<VisualPromptSet>& sets) {
  if (sets.empty()) throw ValidationError("no prompt sets", "prompts");
  for (const auto& s : sets) s.validate();
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> rows(sets.size());
  for (PromptKind kind : {PromptKind::kBox, PromptKind::kPoint}) {
    std::vector<VisualPromptSet> group;
    std::vector<size_t> where;
    for (size_t i = 0; i < sets.size(); ++i) {
      if (sets[i].kind != kind) continue;
      group.push_back(sets[i]);
      where.push_back(i);
    }
    if (group.empty()) continue;
    auto emb = model_->encode_visual(
        PromptBatch::from_sets(group, std::vector<int64_t>(group.size(), 0)), session.features);
    for (size_t j = 0; j < where.size(); ++j) rows[where[j]] = emb[static_cast<int64_t>(j)];
  }
  return torch::stack(rows);
}

DetectionResult Engine::detect(const ImageSession& session, const torch::Tensor& prompts,
                               std::vector<std::string> labels, double threshold,
                               int64_t max_detections) {
  torch::NoGradGuard no_grad;
  const auto start = Clock::now();
  const int64_t c = prompts.size(0);
  auto out = model_->detect(session.features, prompts.unsqueeze(0),
                            torch::zeros({1, c}, torch::kBool));
  DetectionResult result;
  result.logits = out.layer_logits.back()[0].transpose(0, 1).contiguous();
  result.boxes = out.decoded.boxes.back()[0].contiguous();
  result.labels = std::move(labels);
  result.detections = postprocess({result.boxes, result.logits, result.labels}, threshold,
                                  max_detections);
  result.prompt_ms = elapsed_ms(start);
  return result;
}

void EmbeddingLibrary::add(LibraryEntry entry, bool replace) {
  const std::string label = entry.embedding.label;
  if (label.empty()) throw ValidationError("embedding label is empty", "label");
  if (!replace && contains(label))
    throw ConflictError("embedding '" + label + "' already exists", "label");
  entry.embedding = make_embedding(entry.embedding.vector, entry.embedding.kind, label);
  entries_[label] = std::move(entry);
}

const LibraryEntry& EmbeddingLibrary::get(const std::string& label) const {
  auto it = entries_.find(label);
  if (it == entries_.end()) throw NotFoundError("no embedding named '" + label + "'");
  return it->second;
}

bool EmbeddingLibrary::remove(const std::string& label) { return entries_.erase(label) > 0; }

std::vector<std::string> EmbeddingLibrary::labels() const {
  std::vector<std::string> out;
  for (const auto& [label, _] : entries_) out.push_back(label);
  return out;
}

nlohmann::json embedding_to_json(const PromptEmbedding& embedding) {
  auto v = embedding.vector.to(torch::kFloat32).contiguous();
  std::vector<float> values(v.data_ptr<float>(), v.data_ptr<float>() + v.numel());
  return {{"label", embedding.label},
          {"kind", to_string(embedding.kind)},
          {"dim", v.numel()},
          {"vector", values}};
}

PromptEmbedding embedding_from_json(const nlohmann::json& doc) {
  try {
    auto values = doc.at("vector").get<std::vector<float>>();
    if (doc.contains("dim") && doc.at("dim").get<size_t>() != values.size())
      throw ValidationError("dim does not match the vector length", "vector");
    if (values.empty()) throw ValidationError("empty embedding vector", "vector");
    auto t = torch::tensor(values, torch::kFloat32);
    return make_embedding(t, embedding_kind_from_string(doc.value("kind", std::string("visual"))),
                          doc.at("label").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed embedding: ") + e.what(), "embedding");
  }
}

nlohmann::json EmbeddingLibrary::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [label, entry] : entries_) {
    auto j = embedding_to_json(entry.embedding);
    j["sources"] = entry.sources;
    j["count"] = entry.count;
    entries.push_back(std::move(j));
  }
  return {{"format", "promptdet.embeddings"}, {"version", 1}, {"entries", entries}};
}

EmbeddingLibrary EmbeddingLibrary::from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || doc.value("format", std::string()) != "promptdet.embeddings")
    throw ValidationError("not an embedding library document", "format");
  EmbeddingLibrary lib;
  for (const auto& j : doc.at("entries")) {
    LibraryEntry entry;
    entry.embedding = embedding_from_json(j);
    entry.sources = j.value("sources", std::vector<std::string>{});
    entry.count = j.value("count", int64_t{1});
    lib.add(std::move(entry));
  }
  return lib;
}

void EmbeddingLibrary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << to_json().dump(1) << "\n";
}

EmbeddingLibrary EmbeddingLibrary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path);
  return from_json(nlohmann::json::parse(in));
}

DetectionResult workflow_text(Engine& engine, const ImageSession& session,
                              const std::vector<std::string>& names, double threshold) {
  const auto start = Clock::now();
  std::vector<std::string> unique;
  std::set<std::string> seen;
  for (const auto& n : names)
    if (seen.insert(n).second) unique.push_back(n);
  if (unique.empty()) throw ValidationError("no text prompts given", "names");
  auto prompts = engine.text_embeddings(unique);
  auto result = engine.detect(session, prompts, unique, threshold);
  result.prompt_ms = elapsed_ms(start);
  return result;
}

DetectionResult workflow_interactive(Engine& engine, const ImageSession& session,
                                     const std::vector<VisualPromptSet>& sets, double threshold) {
  const auto start = Clock::now();
  if (sets.empty()) throw ValidationError("no prompt sets given", "prompts");
  auto rows = engine.visual_embeddings(session, sets);
  std::vector<std::string> labels;
  std::map<std::string, std::vector<int64_t>> members;
  for (size_t i = 0; i < sets.size(); ++i) {
    const auto label = set_label(sets[i], i);
    if (!members.count(label)) labels.push_back(label);
    members[label].push_back(static_cast<int64_t>(i));
  }
  std::vector<torch::Tensor> prompts;
  for (const auto& label : labels) {
    const auto& idx = members[label];
    if (idx.size() == 1) {
      prompts.push_back(rows[idx.front()]);
    } else {
      auto mean = rows.index_select(0, torch::tensor(idx, torch::kLong)).mean(0);
      prompts.push_back(make_embedding(mean, EmbeddingKind::kVisual, label).vector);
    }
  }
  auto result = engine.detect(session, torch::stack(prompts), labels, threshold);
  result.prompt_ms = elapsed_ms(start);
  return result;
}

LibraryEntry build_generic_embedding(Engine& engine, const std::vector<GenericExample>& examples,
                                     const std::string& label) {
  if (examples.empty()) throw ValidationError("no examples given", "examples");
  if (label.empty()) throw ValidationError("label is empty", "label");
  LibraryEntry entry;
  torch::Tensor sum;
  for (const auto& ex : examples) {
    if (ex.session == nullptr) throw ValidationError("example without a session", "examples");
    if (!ex.prompts.label.empty() && ex.prompts.label != label)
      throw ValidationError("examples carry different labels ('" + ex.prompts.label + "' vs '" +
                                label + "')",
                            "label");
    auto v = engine.visual_embeddings(*ex.session, {ex.prompts})[0].to(torch::kFloat64);
    sum = sum.defined() ? sum + v : v;
    entry.sources.push_back(ex.session->id);
  }
  entry.count = static_cast<int64_t>(examples.size());
  auto mean = (sum / static_cast<double>(entry.count)).to(torch::kFloat32);
  entry.embedding = make_embedding(mean, EmbeddingKind::kVisual, label);
  return entry;
}

DetectionResult workflow_generic(Engine& engine, const ImageSession& session,
                                 const EmbeddingLibrary& library, double threshold,
                                 const std::vector<std::string>& labels) {
  const auto start = Clock::now();
  if (library.empty()) throw ValidationError("embedding library is empty", "embeddings");
  const auto chosen = labels.empty() ? library.labels() : labels;
  std::vector<torch::Tensor> prompts;
  for (const auto& label : chosen) prompts.push_back(library.get(label).embedding.vector);
  auto result = engine.detect(session, torch::stack(prompts), chosen, threshold);
  result.prompt_ms = elapsed_ms(start);
  return result;
}

DetectionResult workflow_mixed(Engine& engine, const ImageSession& session,
                               const std::vector<MixedPrompt>& pairs, double threshold) {
  const auto start = Clock::now();
  if (pairs.empty()) throw ValidationError("no mixed prompts given", "pairs");
  std::vector<std::string> names;
  for (const auto& p : pairs) names.push_back(p.name);
  auto text = engine.text_embeddings(names);
  std::vector<torch::Tensor> prompts;
  for (size_t i = 0; i < pairs.size(); ++i) {
    PromptEmbedding t{text[static_cast<int64_t>(i)], EmbeddingKind::kText, names[i]};
    prompts.push_back(mix_embeddings(t, pairs[i].visual).vector);
  }
  auto result = engine.detect(session, torch::stack(prompts), names, threshold);
  result.prompt_ms = elapsed_ms(start);
  return result;
}

RegionClassification classify_region(Engine& engine, const ImageSession& session,
                                     const VisualPromptSet& region,
                                     const std::vector<std::string>& candidates) {
  if (region.size() != 1) throw ValidationError("region classification takes exactly one prompt", "region");
  if (candidates.size() < 2) throw ValidationError("need at least two candidate names", "candidates");
  auto v = engine.visual_embeddings(session, {region})[0];
  auto t = engine.text_embeddings(candidates);
  auto probs = torch::softmax(torch::matmul(t, v).to(torch::kFloat64), 0).contiguous();
  RegionClassification out;
  out.probabilities.assign(probs.data_ptr<double>(), probs.data_ptr<double>() + probs.numel());
  out.index = std::max_element(out.probabilities.begin(), out.probabilities.end()) -
              out.probabilities.begin();
  out.label = candidates[out.index];
  return out;
}

int64_t count_objects(Engine& engine, const ImageSession& session,
                      const VisualPromptSet& exemplars, double threshold,
                      int64_t required_exemplars) {
  if (required_exemplars > 0 && static_cast<int64_t>(exemplars.size()) != required_exemplars)
    throw ValidationError("counting needs exactly " + std::to_string(required_exemplars) +
                              " exemplars",
                          "exemplars");
  if (exemplars.size() == 0) throw ValidationError("counting needs an exemplar", "exemplars");
  VisualPromptSet set = exemplars;
  if (set.label.empty()) set.label = "target";
  return static_cast<int64_t>(workflow_interactive(engine, session, {set}, threshold).detections.size());
}

}  // namespace promptdet
