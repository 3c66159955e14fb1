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

#include <cstdint>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "promptdet/config.h"
#include "promptdet/dataset.h"
#include "promptdet/losses.h"
#include "promptdet/model.h"
#include "promptdet/prompt_encoders.h"

namespace promptdet {

enum class Modality { kText, kVisual };
std::string to_string(Modality modality);

// Text on even steps, visual on odd steps.
Modality modality_for_step(int64_t step);

// One set per category present in the image: k ~ U{1..n_c} of its boxes, and
// with probability point_prob the whole set becomes center points.
std::vector<VisualPromptSet> sample_visual_prompts(const DatasetRecord& record,
                                                   const CategoryTable& categories,
                                                   std::mt19937_64& rng,
                                                   double point_prob = 0.5);

// Names whose corpus instance count exceeds min_count.
struct GlobalDictionary {
  std::vector<std::string> names;  // sorted, unique
  std::map<std::string, int64_t> counts;

  bool contains(const std::string& name) const;
  bool empty() const { return names.empty(); }
};

inline constexpr int64_t kDefaultDictionaryMinCount = 100;

GlobalDictionary build_global_dictionary(const Dataset& corpus, int64_t min_count = kDefaultDictionaryMinCount);

struct TextPrompts {
  std::vector<std::string> positives;
  std::vector<std::string> negatives;

  // positives followed by negatives.
  std::vector<std::string> all() const;
  std::vector<bool> positive_mask() const;
};

// Positives are the names present in the image; negatives are up to
// num_negatives other dictionary names.
TextPrompts sample_text_prompts(const DatasetRecord& record, const CategoryTable& categories,
                                const GlobalDictionary& dictionary, int64_t num_negatives,
                                std::mt19937_64& rng);

struct ImagePlan {
  size_t record_index = 0;
  bool hflip = false;
  std::vector<VisualPromptSet> visual;
  TextPrompts text;
};

struct TrainBatchPlan {
  int64_t step = 0;
  Modality modality = Modality::kText;
  std::vector<ImagePlan> images;

  nlohmann::json to_json() const;
};

TrainBatchPlan plan_batch(int64_t step, const std::vector<size_t>& record_indices,
                          const Dataset& dataset, const GlobalDictionary& dictionary,
                          const TrainConfig& config, std::mt19937_64& rng);

// Vocabulary over the words of every category name.
std::vector<std::string> build_vocab(const CategoryTable& categories);

// All images of a dataset decoded once, as (N, 3, H, W) uint8.
class ImageCache {
 public:
  explicit ImageCache(const Dataset& dataset);
  // Normalized float batch, horizontally flipped where requested.
  torch::Tensor batch(const std::vector<size_t>& indices, const std::vector<bool>& hflip) const;
  size_t size() const { return static_cast<size_t>(pixels_.size(0)); }

 private:
  torch::Tensor pixels_;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimizer with the two learning-rate groups: backbone + text encoder, and
// everything else.
std::unique_ptr<torch::optim::AdamW> make_optimizer(DetectorModel& model, const TrainConfig& config);
// Linear warmup, then a single step decay at lr_drop_at of the run.
double lr_scale(int64_t step, int64_t total_steps, const TrainConfig& config);
void set_learning_rates(torch::optim::AdamW& optimizer, double scale, const TrainConfig& config);

// Loss for one planned batch without touching parameters.
LossBreakdown compute_loss(DetectorModel& model, const TrainBatchPlan& plan, const Dataset& dataset,
                           const ImageCache& images, const TrainConfig& config);

// compute_loss, backward, clipping and an optimizer update. A non-finite loss
// throws TrainingError after writing the plan to dump_path (if set).
LossBreakdown train_step(DetectorModel& model, torch::optim::AdamW& optimizer,
                         const TrainBatchPlan& plan, const Dataset& dataset,
                         const ImageCache& images, const TrainConfig& config,
                         const std::string& dump_path = {});

struct TrainResult {
  int64_t steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
  std::string checkpoint;
};

using LogSink = std::function<void(const nlohmann::json&)>;

// Full loop. Seeds torch and the sampler from config.train.seed, builds the
// vocabulary when config.model.vocab is empty, writes checkpoints and a
// JSON-lines log under output_dir.
TrainResult train(RunConfig config, const Dataset& train_set, const std::string& output_dir,
                  const LogSink& sink = {});

}  // namespace promptdet
