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

#include "promptdet/layers.h"

#include <cmath>
#include <limits>

namespace promptdet {

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim, int64_t num_heads)
    : num_heads_(num_heads), head_dim_(dim / num_heads) {
  TORCH_CHECK(dim % num_heads == 0, "dim must be divisible by num_heads");
  q_proj_ = register_module("q_proj", torch::nn::Linear(dim, dim));
  k_proj_ = register_module("k_proj", torch::nn::Linear(dim, dim));
  v_proj_ = register_module("v_proj", torch::nn::Linear(dim, dim));
  out_proj_ = register_module("out_proj", torch::nn::Linear(dim, dim));
  for (auto* lin : {&q_proj_, &k_proj_, &v_proj_, &out_proj_}) {
    torch::nn::init::xavier_uniform_((*lin)->weight);
    torch::nn::init::zeros_((*lin)->bias);
  }
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& key,
                                              const torch::Tensor& value,
                                              const std::optional<torch::Tensor>& key_padding_mask) {
  const int64_t batch = query.size(0);
  const int64_t m = query.size(1);
  const int64_t s = key.size(1);
  auto q = q_proj_(query).view({batch, m, num_heads_, head_dim_}).transpose(1, 2);
  auto k = k_proj_(key).view({batch, s, num_heads_, head_dim_}).transpose(1, 2);
  auto v = v_proj_(value).view({batch, s, num_heads_, head_dim_}).transpose(1, 2);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim_));
  if (key_padding_mask) {
    scores = scores.masked_fill(key_padding_mask->view({batch, 1, 1, s}),
                                -std::numeric_limits<double>::infinity());
  }
  auto attn = torch::softmax(scores, -1);
  auto out = torch::matmul(attn, v).transpose(1, 2).reshape({batch, m, num_heads_ * head_dim_});
  return out_proj_(out);
}

FeedForwardImpl::FeedForwardImpl(int64_t dim, int64_t hidden) {
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) { return fc2(torch::relu(fc1(x))); }

MlpImpl::MlpImpl(int64_t in, int64_t hidden, int64_t out, int64_t num_layers) {
  for (int64_t i = 0; i < num_layers; ++i) {
    const int64_t a = i == 0 ? in : hidden;
    const int64_t b = i + 1 == num_layers ? out : hidden;
    layers_.push_back(register_module("layer" + std::to_string(i), torch::nn::Linear(a, b)));
  }
}

torch::Tensor MlpImpl::forward(torch::Tensor x) {
  for (size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](x);
    if (i + 1 < layers_.size()) x = torch::relu(x);
  }
  return x;
}

}  // namespace promptdet
