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

#include "promptdet/backbone_encoder.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace promptdet {

std::vector<int64_t> MultiScaleFeatures::starts() const {
  std::vector<int64_t> out;
  int64_t acc = 0;
  for (const auto& [h, w] : shapes) {
    out.push_back(acc);
    acc += h * w;
  }
  return out;
}

torch::Tensor MultiScaleFeatures::level(int64_t index) const {
  const auto [h, w] = shapes.at(index);
  const int64_t start = starts()[index];
  return flat.narrow(1, start, h * w).transpose(1, 2).reshape({batch(), dim(), h, w});
}

torch::Tensor MultiScaleFeatures::token_centers() const {
  std::vector<torch::Tensor> parts;
  const auto opts = flat.options().requires_grad(false);
  for (const auto& [h, w] : shapes) {
    auto ys = (torch::arange(h, opts) + 0.5) / static_cast<double>(h);
    auto xs = (torch::arange(w, opts) + 0.5) / static_cast<double>(w);
    auto grid = torch::meshgrid({ys, xs}, "ij");
    parts.push_back(torch::stack({grid[1].reshape(-1), grid[0].reshape(-1)}, -1));
  }
  return torch::cat(parts, 0);
}

torch::Tensor MultiScaleFeatures::token_levels() const {
  std::vector<torch::Tensor> parts;
  for (size_t l = 0; l < shapes.size(); ++l)
    parts.push_back(torch::full({shapes[l][0] * shapes[l][1]}, static_cast<int64_t>(l),
                                torch::kLong));
  return torch::cat(parts, 0);
}

MultiScaleFeatures MultiScaleFeatures::from_levels(const std::vector<torch::Tensor>& levels) {
  MultiScaleFeatures out;
  std::vector<torch::Tensor> flat;
  for (const auto& lv : levels) {
    out.shapes.push_back({lv.size(2), lv.size(3)});
    flat.push_back(lv.flatten(2).transpose(1, 2));
  }
  out.flat = torch::cat(flat, 1);
  return out;
}

torch::Tensor sincos_pe(const torch::Tensor& coords, int64_t dim_per_coord) {
  TORCH_CHECK(dim_per_coord % 2 == 0, "dim_per_coord must be even");
  const auto opts = coords.options().requires_grad(false);
  auto exponent = 2.0 * torch::floor(torch::arange(dim_per_coord / 2, opts)) /
                  static_cast<double>(dim_per_coord);
  auto inv_freq = torch::pow(10000.0, -exponent);
  auto angles = coords.unsqueeze(-1) * (2.0 * std::numbers::pi) * inv_freq;  // (..., n, dim/2)
  auto emb = torch::stack({torch::sin(angles), torch::cos(angles)}, -1);     // (..., n, dim/2, 2)
  return emb.flatten(-3);
}

MSDeformAttnImpl::MSDeformAttnImpl(int64_t dim, int64_t num_levels, int64_t num_heads,
                                   int64_t num_points)
    : dim_(dim), num_levels_(num_levels), num_heads_(num_heads), num_points_(num_points) {
  TORCH_CHECK(dim % num_heads == 0, "dim must be divisible by num_heads");
  sampling_offsets = register_module(
      "sampling_offsets", torch::nn::Linear(dim, num_heads * num_levels * num_points * 2));
  attention_weights = register_module("attention_weights",
                                      torch::nn::Linear(dim, num_heads * num_levels * num_points));
  value_proj = register_module("value_proj", torch::nn::Linear(dim, dim));
  output_proj = register_module("output_proj", torch::nn::Linear(dim, dim));

  torch::NoGradGuard no_grad;
  sampling_offsets->weight.zero_();
  auto thetas = torch::arange(num_heads, torch::kFloat64) * (2.0 * std::numbers::pi / num_heads);
  auto grid = torch::stack({thetas.cos(), thetas.sin()}, -1);
  grid = grid / std::get<0>(grid.abs().max(-1, true));
  grid = grid.view({num_heads, 1, 1, 2}).repeat({1, num_levels, num_points, 1});
  for (int64_t p = 0; p < num_points; ++p) grid.select(2, p).mul_(static_cast<double>(p + 1));
  sampling_offsets->bias.copy_(grid.reshape(-1));
  attention_weights->weight.zero_();
  attention_weights->bias.zero_();
  torch::nn::init::xavier_uniform_(value_proj->weight);
  value_proj->bias.zero_();
  torch::nn::init::xavier_uniform_(output_proj->weight);
  output_proj->bias.zero_();
}

SamplingPlan MSDeformAttnImpl::plan(const torch::Tensor& query, const torch::Tensor& reference,
                                    const std::vector<std::array<int64_t, 2>>& shapes) {
  TORCH_CHECK(static_cast<int64_t>(shapes.size()) == num_levels_, "level count mismatch");
  const int64_t batch = query.size(0);
  const int64_t m = query.size(1);
  auto offsets =
      sampling_offsets(query).view({batch, m, num_heads_, num_levels_, num_points_, 2});
  auto weights = torch::softmax(
      attention_weights(query).view({batch, m, num_heads_, num_levels_ * num_points_}), -1);
  weights = weights.view({batch, m, num_heads_, num_levels_, num_points_});

  torch::Tensor locations;
  if (reference.size(-1) == 2) {
    std::vector<double> norm;
    for (const auto& [h, w] : shapes) {
      norm.push_back(static_cast<double>(w));
      norm.push_back(static_cast<double>(h));
    }
    auto normalizer = torch::tensor(norm, query.options().requires_grad(false))
                          .view({1, 1, 1, num_levels_, 1, 2});
    locations = reference.view({batch, m, 1, 1, 1, 2}) + offsets / normalizer;
  } else {
    TORCH_CHECK(reference.size(-1) == 4, "reference must be points or boxes");
    auto xy = reference.narrow(-1, 0, 2).view({batch, m, 1, 1, 1, 2});
    auto wh = reference.narrow(-1, 2, 2).view({batch, m, 1, 1, 1, 2});
    locations = xy + offsets / static_cast<double>(num_points_) * wh * 0.5;
  }
  return {locations, weights};
}

torch::Tensor deformable_sample(const torch::Tensor& value, const SamplingPlan& plan,
                                const std::vector<std::array<int64_t, 2>>& shapes,
                                SamplingRoute route) {
  if (route == SamplingRoute::kFused) return fused_deformable_sample(value, plan, shapes);
  const int64_t batch = plan.weights.size(0);
  const int64_t m = plan.weights.size(1);
  const int64_t heads = plan.weights.size(2);
  const int64_t levels = plan.weights.size(3);
  const int64_t points = plan.weights.size(4);
  const int64_t head_dim = value.size(3);

  std::vector<int64_t> ws, hs, starts;
  int64_t acc = 0;
  for (const auto& [h, w] : shapes) {
    hs.push_back(h);
    ws.push_back(w);
    starts.push_back(acc);
    acc += h * w;
  }
  const auto long_opts = torch::TensorOptions().dtype(torch::kLong);
  auto w_long = torch::tensor(ws, long_opts).view({1, 1, 1, levels, 1});
  auto h_long = torch::tensor(hs, long_opts).view({1, 1, 1, levels, 1});
  auto start_long = torch::tensor(starts, long_opts).view({1, 1, 1, levels, 1, 1});
  auto w_real = w_long.to(value.scalar_type());
  auto h_real = h_long.to(value.scalar_type());

  auto px = plan.locations.select(-1, 0) * w_real - 0.5;
  auto py = plan.locations.select(-1, 1) * h_real - 0.5;
  auto x0 = torch::floor(px).detach();
  auto y0 = torch::floor(py).detach();
  auto fx = px - x0;
  auto fy = py - y0;
  auto x0l = x0.to(torch::kLong);
  auto y0l = y0.to(torch::kLong);

  auto xs = torch::stack({x0l, x0l + 1, x0l, x0l + 1}, -1);
  auto ys = torch::stack({y0l, y0l, y0l + 1, y0l + 1}, -1);
  auto wx = torch::stack({1.0 - fx, fx, 1.0 - fx, fx}, -1);
  auto wy = torch::stack({1.0 - fy, 1.0 - fy, fy, fy}, -1);
  auto wl = w_long.unsqueeze(-1);
  auto hl = h_long.unsqueeze(-1);
  auto valid = (xs >= 0) & (xs < wl) & (ys >= 0) & (ys < hl);
  auto xc = torch::minimum(xs.clamp_min(0), wl - 1);
  auto yc = torch::minimum(ys.clamp_min(0), hl - 1);
  auto index = start_long + yc * wl + xc;  // (B, M, heads, L, P, 4)
  auto weight = wx * wy * valid.to(value.scalar_type()) * plan.weights.unsqueeze(-1);

  const int64_t taps = levels * points * 4;
  const int64_t tokens = value.size(2);
  index = index.reshape({batch, m, heads, taps}).permute({0, 2, 1, 3});
  weight = weight.reshape({batch, m, heads, taps}).permute({0, 2, 1, 3});
  if (route == SamplingRoute::kDense) {
    // Scatter the bilinear weights into a (M, S) matrix per head and multiply.
    auto dense = torch::zeros({batch, heads, m, tokens}, weight.options())
                     .scatter_add(3, index, weight);
    auto out = torch::matmul(dense, value);  // (B, heads, M, head_dim)
    return out.permute({0, 2, 1, 3}).reshape({batch, m, heads * head_dim});
  }
  index = index.reshape({batch, heads, m * taps});
  auto gathered = value.gather(2, index.unsqueeze(-1).expand({batch, heads, m * taps, head_dim}))
                      .view({batch, heads, m, taps, head_dim});
  auto out = (weight.unsqueeze(-1) * gathered).sum(3);  // (B, heads, M, head_dim)
  return out.permute({0, 2, 1, 3}).reshape({batch, m, heads * head_dim});
}

torch::Tensor MSDeformAttnImpl::forward(const torch::Tensor& query, const torch::Tensor& reference,
                                        const torch::Tensor& value_input,
                                        const std::vector<std::array<int64_t, 2>>& shapes,
                                        const std::optional<torch::Tensor>& value_batch) {
  const int64_t head_dim = dim_ / num_heads_;
  auto value = value_proj(value_input);
  value = value.view({value.size(0), value.size(1), num_heads_, head_dim}).permute({0, 2, 1, 3});
  if (value_batch) value = value.index_select(0, *value_batch);
  auto sampling = plan(query, reference, shapes);
  return output_proj(deformable_sample(value, sampling, shapes));
}

namespace {

int64_t group_count(int64_t channels) {
  for (int64_t g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

void append_conv(torch::nn::Sequential& seq, int64_t in, int64_t out, int64_t stride) {
  seq->push_back(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
  seq->push_back(torch::nn::GroupNorm(torch::nn::GroupNormOptions(group_count(out), out)));
  seq->push_back(torch::nn::ReLU());
}

}  // namespace

BackboneImpl::BackboneImpl(const ModelConfig& config)
    : num_levels_(config.num_levels), coarsest_stride_(config.coarsest_stride()) {
  const auto& ch = config.backbone_channels;
  const int64_t num_stages = num_levels_ + 2;
  int64_t in = 3;
  for (int64_t i = 0; i < num_stages; ++i) {
    torch::nn::Sequential stage;
    append_conv(stage, in, ch[i], 2);
    // Extra capacity at the finest pyramid level.
    if (i == num_stages - num_levels_) append_conv(stage, ch[i], ch[i], 1);
    stages_.push_back(register_module("stage" + std::to_string(i), stage));
    in = ch[i];
  }
  for (int64_t l = 0; l < num_levels_; ++l) {
    const int64_t c = ch[num_stages - num_levels_ + l];
    projections_.push_back(register_module(
        "proj" + std::to_string(l),
        torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(c, config.dim, 1)),
                              torch::nn::GroupNorm(torch::nn::GroupNormOptions(8, config.dim)))));
  }
}

MultiScaleFeatures BackboneImpl::forward(const torch::Tensor& images) {
  TORCH_CHECK(images.dim() == 4 && images.size(1) == 3, "images must be (B, 3, H, W)");
  if (images.size(2) < coarsest_stride_ || images.size(3) < coarsest_stride_ ||
      images.size(2) % coarsest_stride_ != 0 || images.size(3) % coarsest_stride_ != 0) {
    throw std::invalid_argument("image size must be a positive multiple of " +
                                std::to_string(coarsest_stride_));
  }
  std::vector<torch::Tensor> levels;
  auto x = images;
  const int64_t first_level_stage = static_cast<int64_t>(stages_.size()) - num_levels_;
  for (size_t i = 0; i < stages_.size(); ++i) {
    x = stages_[i]->forward(x);
    const int64_t level = static_cast<int64_t>(i) - first_level_stage;
    if (level >= 0) levels.push_back(projections_[level]->forward(x));
  }
  return MultiScaleFeatures::from_levels(levels);
}

EncoderLayerImpl::EncoderLayerImpl(const ModelConfig& config) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({config.dim})));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({config.dim})));
  attn = register_module("attn", MSDeformAttn(config.dim, config.num_levels, config.num_heads,
                                              config.num_points));
  ffn = register_module("ffn", FeedForward(config.dim, config.ffn_dim()));
}

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& pos,
                                        const torch::Tensor& reference,
                                        const std::vector<std::array<int64_t, 2>>& shapes) {
  auto normed = norm1(x);
  auto out = x + attn(normed + pos, reference, normed, shapes);
  return out + ffn(norm2(out));
}

EncoderImpl::EncoderImpl(const ModelConfig& config) : dim_(config.dim) {
  level_embed = register_parameter("level_embed", torch::randn({config.num_levels, config.dim}) * 0.02);
  for (int64_t i = 0; i < config.enc_layers; ++i)
    layers.push_back(register_module("layer" + std::to_string(i), EncoderLayer(config)));
}

MultiScaleFeatures EncoderImpl::forward(const MultiScaleFeatures& features) {
  auto centers = features.token_centers();
  auto pos = sincos_pe(centers, dim_ / 2) + level_embed.index_select(0, features.token_levels());
  pos = pos.unsqueeze(0);
  auto reference = centers.unsqueeze(0).expand({features.batch(), -1, -1});
  auto x = features.flat;
  for (auto& layer : layers) x = layer(x, pos, reference, features.shapes);
  return features.with_flat(x);
}

}  // namespace promptdet
