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

#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "promptdet/backbone_encoder.h"
#include "promptdet/box_decoder.h"
#include "promptdet/config.h"
#include "promptdet/prompt_encoders.h"

namespace promptdet {

inline constexpr int64_t kCheckpointVersion = 1;

struct DetectorOutputs {
  QuerySelection selection;
  DecodeResult decoded;
  std::vector<torch::Tensor> layer_logits;  // (B, N, C) per decoder layer
};

// Image encoder, both prompt encoders and the box decoder.
class DetectorModelImpl : public torch::nn::Module {
 public:
  explicit DetectorModelImpl(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Backbone + deformable encoder. images (B, 3, H, W).
  MultiScaleFeatures encode_image(const torch::Tensor& images);
  // (T, D) unit-norm.
  torch::Tensor encode_text(const std::vector<std::string>& texts);
  // (S, D) unit-norm.
  torch::Tensor encode_visual(const PromptBatch& batch, const MultiScaleFeatures& features);
  // prompts (B, C, D), prompt_padding (B, C).
  DetectorOutputs detect(const MultiScaleFeatures& features, const torch::Tensor& prompts,
                         const torch::Tensor& prompt_padding);

  // Parameters trained at the reduced learning rate.
  std::vector<torch::Tensor> slow_parameters() const;
  std::vector<torch::Tensor> fast_parameters() const;

  Backbone backbone{nullptr};
  Encoder encoder{nullptr};
  TextEncoder text_encoder{nullptr};
  VisualPromptEncoder visual_encoder{nullptr};
  BoxDecoder decoder{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(DetectorModel);

// Single archive with every named parameter plus the config as metadata.
void save_checkpoint(DetectorModel& model, const std::string& path,
                     const nlohmann::json& extra = nlohmann::json::object());
DetectorModel load_checkpoint(const std::string& path, nlohmann::json* extra = nullptr);

// Hex SHA-256 of a file.
std::string file_sha256(const std::string& path);

}  // namespace promptdet
