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

#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "promptdet/box_decoder.h"
#include "promptdet/image_io.h"
#include "promptdet/model.h"
#include "promptdet/prompt_encoders.h"

namespace promptdet {

// Cached image-side state. Features never change after creation.
struct ImageSession {
  std::string id;
  MultiScaleFeatures features;  // batch of one
  int width = 0;
  int height = 0;
  double encode_ms = 0.0;
  std::chrono::steady_clock::time_point created;
};

struct DetectionResult {
  std::vector<Detection> detections;
  torch::Tensor logits;  // (C, N)
  torch::Tensor boxes;   // (N, 4)
  std::vector<std::string> labels;
  double prompt_ms = 0.0;
};

// A loaded model in inference mode. Safe for concurrent use.
class Engine {
 public:
  explicit Engine(DetectorModel model, std::string checkpoint_hash = {});

  // Runs backbone + encoder once. Images whose sides are not multiples of the
  // coarsest stride are resized; normalized coordinates are unaffected.
  std::shared_ptr<ImageSession> encode(const Image& image, std::string id = {});

  torch::Tensor text_embeddings(const std::vector<std::string>& names);
  // One unit-norm row per set, encoded against the session's cached features.
  torch::Tensor visual_embeddings(const ImageSession& session,
                                  const std::vector<VisualPromptSet>& sets);
  // prompts (C, D) used as classification weights.
  DetectionResult detect(const ImageSession& session, const torch::Tensor& prompts,
                         std::vector<std::string> labels, double threshold,
                         int64_t max_detections = 0);

  int64_t backbone_forwards() const { return forwards_.load(); }
  const ModelConfig& config() const { return model_->config(); }
  const std::string& checkpoint_hash() const { return checkpoint_hash_; }
  DetectorModel& model() { return model_; }

 private:
  DetectorModel model_;
  std::string checkpoint_hash_;
  std::atomic<int64_t> forwards_{0};
  std::atomic<int64_t> next_id_{0};
};

struct LibraryEntry {
  PromptEmbedding embedding;
  std::vector<std::string> sources;  // session or image ids
  int64_t count = 0;                 // number of averaged examples
};

// Named generic embeddings. Labels are unique; every vector is unit-norm.
class EmbeddingLibrary {
 public:
  void add(LibraryEntry entry, bool replace = false);
  const LibraryEntry& get(const std::string& label) const;
  bool contains(const std::string& label) const { return entries_.count(label) > 0; }
  bool remove(const std::string& label);
  std::vector<std::string> labels() const;
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  nlohmann::json to_json() const;
  static EmbeddingLibrary from_json(const nlohmann::json& doc);
  void save(const std::string& path) const;
  static EmbeddingLibrary load(const std::string& path);

 private:
  std::map<std::string, LibraryEntry> entries_;
};

nlohmann::json embedding_to_json(const PromptEmbedding& embedding);
PromptEmbedding embedding_from_json(const nlohmann::json& doc);

// Text names as classification weights. Duplicate names collapse to one.
DetectionResult workflow_text(Engine& engine, const ImageSession& session,
                              const std::vector<std::string>& names, double threshold);

// Visual prompts on the session's own image. Sets sharing a label are averaged
// into one class.
DetectionResult workflow_interactive(Engine& engine, const ImageSession& session,
                                     const std::vector<VisualPromptSet>& sets, double threshold);

struct GenericExample {
  const ImageSession* session = nullptr;
  VisualPromptSet prompts;
};

// Mean of per-example visual embeddings, renormalized.
LibraryEntry build_generic_embedding(Engine& engine, const std::vector<GenericExample>& examples,
                                     const std::string& label);

// Library entries as classification weights. `labels` selects a subset.
DetectionResult workflow_generic(Engine& engine, const ImageSession& session,
                                 const EmbeddingLibrary& library, double threshold,
                                 const std::vector<std::string>& labels = {});

struct MixedPrompt {
  std::string name;
  PromptEmbedding visual;
};

DetectionResult workflow_mixed(Engine& engine, const ImageSession& session,
                               const std::vector<MixedPrompt>& pairs, double threshold);

struct RegionClassification {
  std::string label;
  int64_t index = 0;
  std::vector<double> probabilities;  // softmax over candidates
};

RegionClassification classify_region(Engine& engine, const ImageSession& session,
                                     const VisualPromptSet& region,
                                     const std::vector<std::string>& candidates);

inline constexpr int64_t kCountingExemplars = 3;

// Number of detections of the exemplars' category at `threshold`.
int64_t count_objects(Engine& engine, const ImageSession& session,
                      const VisualPromptSet& exemplars, double threshold,
                      int64_t required_exemplars = kCountingExemplars);

}  // namespace promptdet
