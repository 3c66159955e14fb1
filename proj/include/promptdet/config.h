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
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace promptdet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Architecture hyper-parameters. Stored inside every checkpoint.
struct ModelConfig {
  int64_t dim = 64;
  int64_t num_levels = 3;
  int64_t num_heads = 4;
  int64_t num_points = 4;
  int64_t enc_layers = 2;
  int64_t dec_layers = 3;
  int64_t prompt_blocks = 3;
  int64_t text_layers = 2;
  int64_t num_queries = 100;
  int64_t select_k = 100;
  double score_threshold = 0.3;
  double temperature = 0.07;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  // Channels of the strided convolution stages; the last num_levels stages
  // feed the pyramid (strides 8, 16, 32, ...).
  std::vector<int64_t> backbone_channels = {16, 32, 64, 96, 128};
  int64_t max_text_tokens = 8;
  std::vector<std::string> vocab;

  int64_t ffn_dim() const { return 2 * dim; }
  int64_t coarsest_stride() const;
  void validate() const;

  // Full-size settings: 900 selected queries, six decoder layers.
  static ModelConfig full_scale();
};

struct TrainConfig {
  double lr = 1e-4;
  // Backbone and text encoder.
  double lr_backbone = 1e-5;
  double weight_decay = 1e-4;
  double grad_clip = 0.1;
  int64_t batch_size = 8;
  int64_t epochs = 12;
  uint64_t seed = 0;
  int64_t min_count = 5;
  int64_t num_negatives = 4;
  double point_prob = 0.5;
  bool use_align = true;
  bool align_on_text_steps = true;
  bool align_on_visual_steps = true;
  bool hflip = true;
  int64_t warmup_steps = 100;
  // Multiply the learning rate by lr_drop_factor after this fraction of steps.
  double lr_drop_at = 0.8;
  double lr_drop_factor = 0.1;
  int64_t checkpoint_every = 0;  // epochs; 0 = only at the end
  int64_t max_steps = 0;         // 0 = epochs * steps_per_epoch
};

struct DataConfig {
  std::string train;
  std::string test;
  std::string counting;
  std::string output_dir = "run";
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  // Applies "section.key=value" overrides, value parsed as JSON when possible.
  void apply_override(const std::string& assignment);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);

}  // namespace promptdet
