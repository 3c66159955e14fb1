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

#include "promptdet/prompt_encoders.h"

#include <algorithm>
#include <cctype>

#include "promptdet/errors.h"

namespace promptdet {

std::string to_string(PromptKind kind) { return kind == PromptKind::kBox ? "box" : "point"; }

std::string to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::kText:
      return "text";
    case EmbeddingKind::kVisual:
      return "visual";
    case EmbeddingKind::kMixed:
      return "mixed";
  }
  return "unknown";
}

PromptKind prompt_kind_from_string(const std::string& s) {
  if (s == "box") return PromptKind::kBox;
  if (s == "point") return PromptKind::kPoint;
  throw ValidationError("prompt kind must be box or point, got '" + s + "'", "kind");
}

EmbeddingKind embedding_kind_from_string(const std::string& s) {
  if (s == "text") return EmbeddingKind::kText;
  if (s == "visual") return EmbeddingKind::kVisual;
  if (s == "mixed") return EmbeddingKind::kMixed;
  throw ValidationError("unknown embedding kind '" + s + "'", "kind");
}

void VisualPromptSet::validate() const {
  if (size() == 0) throw ValidationError("visual prompt set is empty", "prompts");
  if (kind == PromptKind::kBox) {
    for (const auto& b : boxes)
      if (!is_valid(b)) throw ValidationError("box prompt outside [0,1]", "prompts");
  } else {
    for (const auto& p : points)
      if (!is_valid(p)) throw ValidationError("point prompt outside [0,1]", "prompts");
  }
}

VisualPromptSet VisualPromptSet::as_points() const {
  if (kind == PromptKind::kPoint) return *this;
  VisualPromptSet out = *this;
  out.kind = PromptKind::kPoint;
  out.points.clear();
  for (const auto& b : boxes) out.points.push_back(box_to_center_point(b));
  out.boxes.clear();
  return out;
}

PromptEmbedding make_embedding(torch::Tensor vector, EmbeddingKind kind, std::string label) {
  vector = vector.detach().reshape(-1).to(torch::kFloat32).contiguous();
  const double norm = vector.norm().item<double>();
  if (!std::isfinite(norm) || norm <= 0.0) throw ValidationError("embedding has zero norm");
  // Already unit-norm vectors pass through untouched so renormalizing is idempotent.
  if (std::abs(norm - 1.0) <= 1e-6) return {vector, kind, std::move(label)};
  return {vector / norm, kind, std::move(label)};
}

PromptEmbedding mix_embeddings(const PromptEmbedding& text, const PromptEmbedding& visual) {
  if (text.kind != EmbeddingKind::kText || visual.kind == EmbeddingKind::kText)
    throw ValidationError("mixing needs one text and one visual embedding", "kind");
  if (text.vector.numel() != visual.vector.numel())
    throw ValidationError("embedding sizes differ");
  auto mean = (text.vector + visual.vector) * 0.5;
  if (mean.norm().item<double>() < 1e-6)
    throw DegenerateMixError("text and visual embeddings cancel out for '" + text.label + "'");
  return make_embedding(mean, EmbeddingKind::kMixed, text.label);
}

Tokenizer::Tokenizer(const std::vector<std::string>& vocab, int64_t max_tokens)
    : max_tokens_(max_tokens) {
  for (const auto& w : vocab) {
    for (const auto& piece : split_words(w)) {
      if (index_.count(piece)) continue;
      index_[piece] = kNumSpecial + static_cast<int64_t>(words_.size());
      words_.push_back(piece);
    }
  }
}

std::vector<std::string> Tokenizer::split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<int64_t> Tokenizer::encode(const std::string& text) const {
  std::vector<int64_t> ids;
  for (const auto& w : split_words(text)) {
    if (static_cast<int64_t>(ids.size()) == max_tokens_) break;
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? kOov : it->second);
  }
  if (ids.empty()) ids.push_back(kOov);
  return ids;
}

TextEncoderImpl::TextEncoderImpl(const ModelConfig& config)
    : tokenizer_(config.vocab, config.max_text_tokens) {
  const int64_t d = config.dim;
  token_embed_ = register_module("token_embed", torch::nn::Embedding(tokenizer_.vocab_size(), d));
  {
    torch::NoGradGuard no_grad;
    token_embed_->weight.normal_(0.0, 0.5);
  }
  pos_embed_ = register_parameter("pos_embed", torch::randn({config.max_text_tokens + 1, d}) * 0.1);
  for (int64_t i = 0; i < config.text_layers; ++i) {
    Block b;
    const std::string p = "block" + std::to_string(i) + "_";
    b.norm1 = register_module(p + "norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    b.norm2 = register_module(p + "norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    b.attn = register_module(p + "attn", MultiHeadAttention(d, config.num_heads));
    b.ffn = register_module(p + "ffn", FeedForward(d, config.ffn_dim()));
    blocks_.push_back(b);
  }
  final_norm_ = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  out_proj_ = register_module("out_proj", torch::nn::Linear(d, d));
}

torch::Tensor TextEncoderImpl::forward(const std::vector<std::string>& texts) {
  const int64_t n = static_cast<int64_t>(texts.size());
  const int64_t len = tokenizer_.max_tokens() + 1;
  auto ids = torch::full({n, len}, Tokenizer::kPad, torch::kLong);
  auto acc = ids.accessor<int64_t, 2>();
  for (int64_t i = 0; i < n; ++i) {
    acc[i][0] = Tokenizer::kCls;
    const auto tokens = tokenizer_.encode(texts[i]);
    for (size_t t = 0; t < tokens.size(); ++t) acc[i][t + 1] = tokens[t];
  }
  auto padding = ids.eq(Tokenizer::kPad);
  auto x = token_embed_(ids) + pos_embed_.unsqueeze(0);
  for (auto& b : blocks_) {
    auto h = b.norm1(x);
    x = x + b.attn(h, h, h, padding);
    x = x + b.ffn(b.norm2(x));
  }
  auto cls = out_proj_(final_norm_(x.select(1, 0)));
  return torch::nn::functional::normalize(cls, torch::nn::functional::NormalizeFuncOptions().dim(-1));
}

PromptBatch PromptBatch::from_sets(const std::vector<VisualPromptSet>& sets,
                                   const std::vector<int64_t>& image_index, torch::Dtype dtype) {
  TORCH_CHECK(!sets.empty(), "no prompt sets");
  TORCH_CHECK(sets.size() == image_index.size(), "image_index size mismatch");
  PromptBatch out;
  out.kind = sets.front().kind;
  size_t k_max = 0;
  for (const auto& s : sets) {
    if (s.kind != out.kind) throw ValidationError("prompt sets in a batch must share a kind", "kind");
    s.validate();
    k_max = std::max(k_max, s.size());
  }
  const int64_t width = out.kind == PromptKind::kBox ? 4 : 2;
  const int64_t num = static_cast<int64_t>(sets.size());
  auto coords = torch::full({num, static_cast<int64_t>(k_max), width}, 0.5, torch::kFloat64);
  auto padding = torch::ones({num, static_cast<int64_t>(k_max)}, torch::kBool);
  auto c = coords.accessor<double, 3>();
  auto p = padding.accessor<bool, 2>();
  for (int64_t s = 0; s < num; ++s) {
    const auto& set = sets[s];
    for (size_t k = 0; k < set.size(); ++k) {
      if (out.kind == PromptKind::kBox) {
        const auto& b = set.boxes[k];
        c[s][k][0] = b.cx;
        c[s][k][1] = b.cy;
        c[s][k][2] = b.w;
        c[s][k][3] = b.h;
      } else {
        c[s][k][0] = set.points[k].x;
        c[s][k][1] = set.points[k].y;
      }
      p[s][k] = false;
    }
  }
  out.coords = coords.to(dtype);
  out.padding = padding;
  out.image_index = torch::tensor(image_index, torch::kLong);
  return out;
}

VisualPromptEncoderImpl::VisualPromptEncoderImpl(const ModelConfig& config) : dim_(config.dim) {
  const int64_t d = config.dim;
  box_pe_proj = register_module("box_pe_proj", torch::nn::Linear(4 * d, d));
  point_pe_proj = register_module("point_pe_proj", torch::nn::Linear(2 * d, d));
  box_fuse = register_module("box_fuse", torch::nn::Linear(2 * d, d));
  point_fuse = register_module("point_fuse", torch::nn::Linear(2 * d, d));
  content = register_parameter("content", torch::randn({d}) * 0.1);
  global_content = register_parameter("global_content", torch::randn({d}) * 0.1);
  for (int64_t i = 0; i < config.prompt_blocks; ++i) {
    Block b;
    const std::string p = "block" + std::to_string(i) + "_";
    b.cross = register_module(p + "cross", MSDeformAttn(d, config.num_levels, config.num_heads,
                                                         config.num_points));
    b.self_attn = register_module(p + "self_attn", MultiHeadAttention(d, config.num_heads));
    b.ffn = register_module(p + "ffn", FeedForward(d, config.ffn_dim()));
    b.norm1 = register_module(p + "norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    b.norm2 = register_module(p + "norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    b.norm3 = register_module(p + "norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
    blocks_.push_back(b);
  }
  out_proj_ = register_module("out_proj", torch::nn::Linear(d, d));
}

torch::Tensor VisualPromptEncoderImpl::project_prompt_pe(PromptKind kind, const torch::Tensor& coords) {
  auto pe = sincos_pe(coords, dim_);
  return kind == PromptKind::kBox ? box_pe_proj(pe) : point_pe_proj(pe);
}

torch::Tensor VisualPromptEncoderImpl::build_queries(PromptKind kind, const torch::Tensor& projected) {
  const int64_t sets = projected.size(0);
  const int64_t k = projected.size(1);
  const auto opts = projected.options().requires_grad(false);
  auto global_coords = kind == PromptKind::kBox ? torch::tensor({0.5, 0.5, 1.0, 1.0}, opts)
                                                : torch::tensor({0.5, 0.5}, opts);
  auto global_pos = project_prompt_pe(kind, global_coords.view({1, 1, -1})).expand({sets, 1, dim_});
  auto pos = torch::cat({projected, global_pos}, 1);
  auto cont = torch::cat({content.view({1, 1, dim_}).expand({sets, k, dim_}),
                          global_content.view({1, 1, dim_}).expand({sets, 1, dim_})},
                         1);
  auto fused = torch::cat({cont, pos}, -1);
  return kind == PromptKind::kBox ? box_fuse(fused) : point_fuse(fused);
}

torch::Tensor VisualPromptEncoderImpl::encode_queries(const PromptBatch& batch,
                                                      const MultiScaleFeatures& features) {
  const int64_t sets = batch.num_sets();
  const auto opts = batch.coords.options();
  auto queries = build_queries(batch.kind, project_prompt_pe(batch.kind, batch.coords));
  auto global_ref = batch.kind == PromptKind::kBox ? torch::tensor({0.5, 0.5, 1.0, 1.0}, opts)
                                                   : torch::tensor({0.5, 0.5}, opts);
  auto reference = torch::cat(
      {batch.coords, global_ref.view({1, 1, -1}).expand({sets, 1, batch.coords.size(2)})}, 1);
  auto padding = torch::cat({batch.padding, torch::zeros({sets, 1}, torch::kBool)}, 1);
  for (auto& b : blocks_) {
    queries = b.norm1(queries + b.cross(queries, reference, features.flat, features.shapes,
                                        batch.image_index));
    queries = b.norm2(queries + b.self_attn(queries, queries, queries, padding));
    queries = b.norm3(queries + b.ffn(queries));
  }
  return queries;
}

torch::Tensor VisualPromptEncoderImpl::forward(const PromptBatch& batch,
                                               const MultiScaleFeatures& features) {
  auto queries = encode_queries(batch, features);
  auto global = out_proj_(queries.select(1, queries.size(1) - 1));
  return torch::nn::functional::normalize(global,
                                          torch::nn::functional::NormalizeFuncOptions().dim(-1));
}

std::vector<torch::Tensor> VisualPromptEncoderImpl::box_path_parameters() const {
  return {box_pe_proj->weight, box_pe_proj->bias, box_fuse->weight, box_fuse->bias};
}

std::vector<torch::Tensor> VisualPromptEncoderImpl::point_path_parameters() const {
  return {point_pe_proj->weight, point_pe_proj->bias, point_fuse->weight, point_fuse->bias};
}

}  // namespace promptdet
