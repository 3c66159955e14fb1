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

#include <torch/torch.h>

#include "promptdet/backbone_encoder.h"
#include "promptdet/config.h"
#include "promptdet/geometry.h"
#include "promptdet/layers.h"

namespace promptdet {

// Top-K encoder tokens chosen by prompt similarity.
struct QuerySelection {
  torch::Tensor indices;  // (B, K) token indices into the flattened pyramid
  torch::Tensor content;  // (B, K, D) selected encoder features
  torch::Tensor logits;   // (B, K, C) encoder-side classification logits
  torch::Tensor boxes;    // (B, K, 4) proposals, differentiable in (w, h)
};

// Decoder state; one entry per decoder layer.
struct DecodeResult {
  torch::Tensor initial_anchors;        // (B, N, 4)
  std::vector<torch::Tensor> hidden;    // Q_dec per layer, (B, N, D)
  std::vector<torch::Tensor> boxes;     // refined anchors per layer, (B, N, 4)
  std::vector<torch::Tensor> offsets;   // logit-space offsets per layer, (B, N, 4)
};

// Q_dec (B, N, D) against prompt weights (B, C, D) -> (B, N, C).
torch::Tensor classify_queries(const torch::Tensor& hidden, const torch::Tensor& prompts);

// Applies logit-space offsets to anchors, re-projecting with a sigmoid.
torch::Tensor refine_anchors(const torch::Tensor& anchors, const torch::Tensor& offsets);

class DecoderLayerImpl : public torch::nn::Module {
 public:
  explicit DecoderLayerImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& tgt, const torch::Tensor& query_pos,
                        const torch::Tensor& anchors, const MultiScaleFeatures& memory);

  MultiHeadAttention self_attn{nullptr};
  MSDeformAttn cross{nullptr};
  FeedForward ffn{nullptr};
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
};
TORCH_MODULE(DecoderLayer);

class BoxDecoderImpl : public torch::nn::Module {
 public:
  explicit BoxDecoderImpl(const ModelConfig& config);

  // prompts (B, C, D); prompt_padding (B, C) true for padded prompt slots.
  QuerySelection select(const MultiScaleFeatures& memory, const torch::Tensor& prompts,
                        const torch::Tensor& prompt_padding);

  DecodeResult decode(const torch::Tensor& content, const torch::Tensor& anchors,
                      const MultiScaleFeatures& memory);

  // Query-prompt logits plus the learned background bias.
  torch::Tensor class_logits(const torch::Tensor& hidden, const torch::Tensor& prompts) const;

  torch::nn::Linear enc_proj{nullptr};
  torch::nn::LayerNorm enc_norm{nullptr};
  Mlp wh_head{nullptr};
  Mlp ref_point_head{nullptr};
  torch::nn::LayerNorm out_norm{nullptr};
  std::vector<DecoderLayer> layers;
  std::vector<Mlp> offset_heads;
  // Scalar logit biases for the decoder and the encoder-side selection,
  // initialised to a 1% foreground prior.
  torch::Tensor class_bias, enc_class_bias;

 private:
  int64_t dim_;
  int64_t num_queries_;
};
TORCH_MODULE(BoxDecoder);

struct Detection {
  NormalizedBox box;
  std::string label;
  int64_t class_index = 0;
  int64_t query_index = 0;
  double score = 0.0;
};

// One image's final-layer output. logits are (C, N).
struct DetectionSet {
  torch::Tensor boxes;   // (N, 4)
  torch::Tensor logits;  // (C, N)
  std::vector<std::string> labels;  // C entries

  torch::Tensor scores() const { return torch::sigmoid(logits); }
};

// Every (query, class) pair with score >= threshold, sorted by descending
// score. max_detections <= 0 keeps all.
std::vector<Detection> postprocess(const DetectionSet& set, double threshold,
                                   int64_t max_detections = 0);

}  // namespace promptdet
