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

#include "promptdet/box_decoder.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace promptdet {

torch::Tensor classify_queries(const torch::Tensor& hidden, const torch::Tensor& prompts) {
  return torch::matmul(hidden, prompts.transpose(-2, -1));
}

torch::Tensor refine_anchors(const torch::Tensor& anchors, const torch::Tensor& offsets) {
  return torch::sigmoid(tensor_ops::inverse_sigmoid(anchors) + offsets);
}

DecoderLayerImpl::DecoderLayerImpl(const ModelConfig& config) {
  const int64_t d = config.dim;
  self_attn = register_module("self_attn", MultiHeadAttention(d, config.num_heads));
  cross = register_module("cross",
                          MSDeformAttn(d, config.num_levels, config.num_heads, config.num_points));
  ffn = register_module("ffn", FeedForward(d, config.ffn_dim()));
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  norm3 = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
}

torch::Tensor DecoderLayerImpl::forward(const torch::Tensor& tgt, const torch::Tensor& query_pos,
                                        const torch::Tensor& anchors,
                                        const MultiScaleFeatures& memory) {
  auto q = tgt + query_pos;
  auto x = norm1(tgt + self_attn(q, q, tgt));
  x = norm2(x + cross(x + query_pos, anchors, memory.flat, memory.shapes));
  return norm3(x + ffn(x));
}

BoxDecoderImpl::BoxDecoderImpl(const ModelConfig& config)
    : dim_(config.dim), num_queries_(config.num_queries) {
  const int64_t d = config.dim;
  enc_proj = register_module("enc_proj", torch::nn::Linear(d, d));
  enc_norm = register_module("enc_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  wh_head = register_module("wh_head", Mlp(d, d, 2, 2));
  ref_point_head = register_module("ref_point_head", Mlp(2 * d, d, d, 2));
  out_norm = register_module("out_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  for (int64_t i = 0; i < config.dec_layers; ++i) {
    layers.push_back(register_module("layer" + std::to_string(i), DecoderLayer(config)));
    offset_heads.push_back(register_module("offset_head" + std::to_string(i), Mlp(d, d, 4, 3)));
  }
  const double prior = -std::log((1.0 - 0.01) / 0.01);
  class_bias = register_parameter("class_bias", torch::full({1}, prior));
  enc_class_bias = register_parameter("enc_class_bias", torch::full({1}, prior));
  torch::NoGradGuard no_grad;
  wh_head->last()->weight.zero_();
  wh_head->last()->bias.zero_();
  for (auto& head : offset_heads) {
    head->last()->weight.zero_();
    head->last()->bias.zero_();
  }
}

QuerySelection BoxDecoderImpl::select(const MultiScaleFeatures& memory, const torch::Tensor& prompts,
                                      const torch::Tensor& prompt_padding) {
  auto enc_out = enc_norm(enc_proj(memory.flat));            // (B, S, D)
  auto logits = classify_queries(enc_out, prompts) + enc_class_bias;  // (B, S, C)
  auto masked = logits.masked_fill(prompt_padding.unsqueeze(1),
                                   -std::numeric_limits<double>::infinity());
  auto similarity = std::get<0>(masked.max(-1));              // (B, S)
  const int64_t k = std::min<int64_t>(num_queries_, memory.num_tokens());
  auto indices = std::get<1>(similarity.detach().topk(k, -1, true, true));  // (B, K)

  const int64_t batch = memory.batch();
  auto gather_rows = [&](const torch::Tensor& t) {
    return t.gather(1, indices.unsqueeze(-1).expand({batch, k, t.size(2)}));
  };
  QuerySelection out;
  out.indices = indices;
  out.content = gather_rows(enc_out);
  out.logits = gather_rows(logits);

  // Level-dependent size prior: 0.05 * 2^level.
  auto levels = memory.token_levels().index_select(0, indices.reshape(-1)).view({batch, k});
  auto prior = tensor_ops::inverse_sigmoid(
      (torch::pow(2.0, levels.to(memory.flat.scalar_type())) * 0.05).clamp_max(0.9));
  auto centers = memory.token_centers().index_select(0, indices.reshape(-1)).view({batch, k, 2});
  auto wh = torch::sigmoid(wh_head(out.content) + prior.unsqueeze(-1));
  out.boxes = torch::cat({centers, wh}, -1);
  return out;
}

torch::Tensor BoxDecoderImpl::class_logits(const torch::Tensor& hidden,
                                          const torch::Tensor& prompts) const {
  return classify_queries(hidden, prompts) + class_bias;
}

DecodeResult BoxDecoderImpl::decode(const torch::Tensor& content, const torch::Tensor& anchors,
                                    const MultiScaleFeatures& memory) {
  DecodeResult out;
  out.initial_anchors = anchors;
  auto tgt = content;
  auto current = anchors;
  for (size_t i = 0; i < layers.size(); ++i) {
    auto query_pos = ref_point_head(sincos_pe(current, dim_ / 2));
    tgt = layers[i](tgt, query_pos, current, memory);
    auto hidden = out_norm(tgt);
    auto offsets = offset_heads[i](hidden);
    auto refined = refine_anchors(current, offsets);
    out.hidden.push_back(hidden);
    out.offsets.push_back(offsets);
    out.boxes.push_back(refined);
    current = refined.detach();
  }
  return out;
}

std::vector<Detection> postprocess(const DetectionSet& set, double threshold,
                                   int64_t max_detections) {
  auto scores = torch::sigmoid(set.logits.to(torch::kFloat64)).contiguous();
  auto boxes = set.boxes.to(torch::kFloat64).contiguous();
  const int64_t classes = scores.size(0);
  const int64_t queries = scores.size(1);
  auto s = scores.accessor<double, 2>();
  auto b = boxes.accessor<double, 2>();
  std::vector<Detection> out;
  for (int64_t c = 0; c < classes; ++c) {
    for (int64_t q = 0; q < queries; ++q) {
      if (std::min(s[c][q], std::nextafter(1.0, 0.0)) < threshold) continue;
      Detection d;
      d.box = {b[q][0], b[q][1], b[q][2], b[q][3]};
      d.label = c < static_cast<int64_t>(set.labels.size()) ? set.labels[c] : std::to_string(c);
      d.class_index = c;
      d.query_index = q;
      // Keep scores strictly inside (0, 1) even where the sigmoid saturates.
      d.score = std::min(s[c][q], std::nextafter(1.0, 0.0));
      out.push_back(d);
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (max_detections > 0 && static_cast<int64_t>(out.size()) > max_detections)
    out.resize(max_detections);
  return out;
}

}  // namespace promptdet
