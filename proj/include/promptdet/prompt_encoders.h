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

enum class PromptKind { kBox, kPoint };
enum class EmbeddingKind { kText, kVisual, kMixed };

std::string to_string(PromptKind kind);
std::string to_string(EmbeddingKind kind);
PromptKind prompt_kind_from_string(const std::string& s);
EmbeddingKind embedding_kind_from_string(const std::string& s);

// K same-kind prompts that exemplify one category on one image.
struct VisualPromptSet {
  PromptKind kind = PromptKind::kBox;
  std::vector<NormalizedBox> boxes;    // used when kind == kBox
  std::vector<NormalizedPoint> points; // used when kind == kPoint
  int64_t category_id = -1;
  std::string label;

  size_t size() const { return kind == PromptKind::kBox ? boxes.size() : points.size(); }
  // Throws ValidationError for empty sets or coordinates outside [0, 1].
  void validate() const;
  // Every box replaced by its center point.
  VisualPromptSet as_points() const;
};

// Unit-norm classification weight. `vector` is a 1-D float tensor of size D.
struct PromptEmbedding {
  torch::Tensor vector;
  EmbeddingKind kind = EmbeddingKind::kText;
  std::string label;
};

PromptEmbedding make_embedding(torch::Tensor vector, EmbeddingKind kind, std::string label);

// (T + V) / 2, renormalized. Rejects two text inputs and antipodal pairs.
PromptEmbedding mix_embeddings(const PromptEmbedding& text, const PromptEmbedding& visual);

// Lowercased alphanumeric word tokens over a closed vocabulary.
class Tokenizer {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kOov = 1;
  static constexpr int64_t kCls = 2;
  static constexpr int64_t kNumSpecial = 3;

  Tokenizer(const std::vector<std::string>& vocab, int64_t max_tokens);

  std::vector<int64_t> encode(const std::string& text) const;
  int64_t vocab_size() const { return static_cast<int64_t>(words_.size()) + kNumSpecial; }
  int64_t max_tokens() const { return max_tokens_; }

  static std::vector<std::string> split_words(const std::string& text);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int64_t> index_;
  int64_t max_tokens_;
};

// Small transformer text encoder; the [CLS] output is the text embedding.
class TextEncoderImpl : public torch::nn::Module {
 public:
  explicit TextEncoderImpl(const ModelConfig& config);

  // (T, D) unit-norm embeddings.
  torch::Tensor forward(const std::vector<std::string>& texts);

  const Tokenizer& tokenizer() const { return tokenizer_; }

 private:
  struct Block {
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    MultiHeadAttention attn{nullptr};
    FeedForward ffn{nullptr};
  };
  Tokenizer tokenizer_;
  torch::nn::Embedding token_embed_{nullptr};
  torch::Tensor pos_embed_;
  std::vector<Block> blocks_;
  torch::nn::LayerNorm final_norm_{nullptr};
  torch::nn::Linear out_proj_{nullptr};
};
TORCH_MODULE(TextEncoder);

// Prompt sets of one kind padded to a common K.
struct PromptBatch {
  PromptKind kind = PromptKind::kBox;
  torch::Tensor coords;       // (S, K, 4) boxes or (S, K, 2) points
  torch::Tensor padding;      // (S, K) bool, true = padding slot
  torch::Tensor image_index;  // (S,) int64 row of the feature batch

  int64_t num_sets() const { return coords.size(0); }
  static PromptBatch from_sets(const std::vector<VisualPromptSet>& sets,
                               const std::vector<int64_t>& image_index,
                               torch::Dtype dtype = torch::kFloat32);
};

// Encodes box or point prompts against image features into one embedding per
// set. Box and point paths have disjoint projection parameters.
class VisualPromptEncoderImpl : public torch::nn::Module {
 public:
  explicit VisualPromptEncoderImpl(const ModelConfig& config);

  // Linear(PE(coords)): (S, K, D).
  torch::Tensor project_prompt_pe(PromptKind kind, const torch::Tensor& coords);
  // Content/position fusion with the global query appended last: (S, K + 1, D).
  torch::Tensor build_queries(PromptKind kind, const torch::Tensor& projected);
  // Final query states before the output projection, (S, K + 1, D).
  torch::Tensor encode_queries(const PromptBatch& batch, const MultiScaleFeatures& features);
  // (S, D) unit-norm embeddings taken from the global query.
  torch::Tensor forward(const PromptBatch& batch, const MultiScaleFeatures& features);

  std::vector<torch::Tensor> box_path_parameters() const;
  std::vector<torch::Tensor> point_path_parameters() const;

  torch::nn::Linear box_pe_proj{nullptr}, point_pe_proj{nullptr};
  torch::nn::Linear box_fuse{nullptr}, point_fuse{nullptr};
  torch::Tensor content, global_content;

 private:
  struct Block {
    MSDeformAttn cross{nullptr};
    MultiHeadAttention self_attn{nullptr};
    FeedForward ffn{nullptr};
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
  };
  int64_t dim_;
  std::vector<Block> blocks_;
  torch::nn::Linear out_proj_{nullptr};
};
TORCH_MODULE(VisualPromptEncoder);

}  // namespace promptdet
