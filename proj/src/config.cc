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

#include "promptdet/config.h"

#include <fstream>

namespace promptdet {

int64_t ModelConfig::coarsest_stride() const { return int64_t{8} << (num_levels - 1); }

void ModelConfig::validate() const {
  if (dim <= 0 || dim % num_heads != 0) throw ConfigError("dim must be divisible by num_heads");
  if (dim % 4 != 0) throw ConfigError("dim must be divisible by 4");
  if (num_levels < 2) throw ConfigError("num_levels must be at least 2");
  if (static_cast<int64_t>(backbone_channels.size()) < num_levels + 2)
    throw ConfigError("backbone_channels needs num_levels + 2 stages");
  if (num_points < 1 || enc_layers < 0 || dec_layers < 1 || prompt_blocks < 1)
    throw ConfigError("layer counts out of range");
  if (num_queries < 1 || select_k != num_queries)
    throw ConfigError("select_k must equal num_queries");
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
  if (max_text_tokens < 1) throw ConfigError("max_text_tokens must be positive");
}

ModelConfig ModelConfig::full_scale() {
  ModelConfig c;
  c.dim = 256;
  c.num_levels = 4;
  c.num_heads = 8;
  c.enc_layers = 6;
  c.dec_layers = 6;
  c.num_queries = 900;
  c.select_k = 900;
  c.backbone_channels = {64, 128, 256, 512, 768, 1024};
  return c;
}

#define PROMPTDET_JSON_GET(field)                       \
  if (j.contains(#field)) j.at(#field).get_to(c.field)

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"dim", c.dim},
                     {"num_levels", c.num_levels},
                     {"num_heads", c.num_heads},
                     {"num_points", c.num_points},
                     {"enc_layers", c.enc_layers},
                     {"dec_layers", c.dec_layers},
                     {"prompt_blocks", c.prompt_blocks},
                     {"text_layers", c.text_layers},
                     {"num_queries", c.num_queries},
                     {"select_k", c.select_k},
                     {"score_threshold", c.score_threshold},
                     {"temperature", c.temperature},
                     {"focal_alpha", c.focal_alpha},
                     {"focal_gamma", c.focal_gamma},
                     {"backbone_channels", c.backbone_channels},
                     {"max_text_tokens", c.max_text_tokens},
                     {"vocab", c.vocab}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  PROMPTDET_JSON_GET(dim);
  PROMPTDET_JSON_GET(num_levels);
  PROMPTDET_JSON_GET(num_heads);
  PROMPTDET_JSON_GET(num_points);
  PROMPTDET_JSON_GET(enc_layers);
  PROMPTDET_JSON_GET(dec_layers);
  PROMPTDET_JSON_GET(prompt_blocks);
  PROMPTDET_JSON_GET(text_layers);
  PROMPTDET_JSON_GET(num_queries);
  PROMPTDET_JSON_GET(select_k);
  PROMPTDET_JSON_GET(score_threshold);
  PROMPTDET_JSON_GET(temperature);
  PROMPTDET_JSON_GET(focal_alpha);
  PROMPTDET_JSON_GET(focal_gamma);
  PROMPTDET_JSON_GET(backbone_channels);
  PROMPTDET_JSON_GET(max_text_tokens);
  PROMPTDET_JSON_GET(vocab);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"lr_backbone", c.lr_backbone},
                     {"weight_decay", c.weight_decay},
                     {"grad_clip", c.grad_clip},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"seed", c.seed},
                     {"min_count", c.min_count},
                     {"num_negatives", c.num_negatives},
                     {"point_prob", c.point_prob},
                     {"use_align", c.use_align},
                     {"align_on_text_steps", c.align_on_text_steps},
                     {"align_on_visual_steps", c.align_on_visual_steps},
                     {"hflip", c.hflip},
                     {"warmup_steps", c.warmup_steps},
                     {"lr_drop_at", c.lr_drop_at},
                     {"lr_drop_factor", c.lr_drop_factor},
                     {"checkpoint_every", c.checkpoint_every},
                     {"max_steps", c.max_steps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  PROMPTDET_JSON_GET(lr);
  PROMPTDET_JSON_GET(lr_backbone);
  PROMPTDET_JSON_GET(weight_decay);
  PROMPTDET_JSON_GET(grad_clip);
  PROMPTDET_JSON_GET(batch_size);
  PROMPTDET_JSON_GET(epochs);
  PROMPTDET_JSON_GET(seed);
  PROMPTDET_JSON_GET(min_count);
  PROMPTDET_JSON_GET(num_negatives);
  PROMPTDET_JSON_GET(point_prob);
  PROMPTDET_JSON_GET(use_align);
  PROMPTDET_JSON_GET(align_on_text_steps);
  PROMPTDET_JSON_GET(align_on_visual_steps);
  PROMPTDET_JSON_GET(hflip);
  PROMPTDET_JSON_GET(warmup_steps);
  PROMPTDET_JSON_GET(lr_drop_at);
  PROMPTDET_JSON_GET(lr_drop_factor);
  PROMPTDET_JSON_GET(checkpoint_every);
  PROMPTDET_JSON_GET(max_steps);
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = nlohmann::json{
      {"train", c.train}, {"test", c.test}, {"counting", c.counting}, {"output_dir", c.output_dir}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  PROMPTDET_JSON_GET(train);
  PROMPTDET_JSON_GET(test);
  PROMPTDET_JSON_GET(counting);
  PROMPTDET_JSON_GET(output_dir);
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"model", c.model}, {"train", c.train}, {"data", c.data}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  PROMPTDET_JSON_GET(model);
  PROMPTDET_JSON_GET(train);
  PROMPTDET_JSON_GET(data);
}

#undef PROMPTDET_JSON_GET

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  nlohmann::json doc = *this;
  const nlohmann::json::json_pointer ptr("/" + [&] {
    std::string p = key;
    for (char& ch : p)
      if (ch == '.') ch = '/';
    return p;
  }());
  if (!doc.contains(ptr)) throw ConfigError("unknown config key: " + key);
  doc[ptr] = value;
  try {
    *this = doc.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for " + key + ": " + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config " + path + ": " + e.what());
  }
}

void save_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path);
  out << nlohmann::json(config).dump(2) << "\n";
}

}  // namespace promptdet
