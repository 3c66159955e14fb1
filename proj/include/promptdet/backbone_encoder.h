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

#include <array>
#include <vector>

#include <torch/torch.h>

#include "promptdet/config.h"
#include "promptdet/layers.h"

namespace promptdet {

// Multi-scale feature pyramid, stored flattened: level l occupies tokens
// [starts[l], starts[l] + H_l * W_l) of `flat` in row-major order.
struct MultiScaleFeatures {
  torch::Tensor flat;                          // (B, S, D)
  std::vector<std::array<int64_t, 2>> shapes;  // (H, W) per level

  int64_t batch() const { return flat.size(0); }
  int64_t dim() const { return flat.size(2); }
  int64_t num_levels() const { return static_cast<int64_t>(shapes.size()); }
  int64_t num_tokens() const { return flat.size(1); }
  std::vector<int64_t> starts() const;

  // (B, D, H_l, W_l) view of one level.
  torch::Tensor level(int64_t index) const;
  // Normalized (cx, cy) of every token, (S, 2).
  torch::Tensor token_centers() const;
  // Pyramid level of every token, (S,) int64.
  torch::Tensor token_levels() const;

  MultiScaleFeatures with_flat(torch::Tensor new_flat) const { return {std::move(new_flat), shapes}; }
  static MultiScaleFeatures from_levels(const std::vector<torch::Tensor>& levels);
};

// Fixed sine-cosine embedding. coords (..., n) in [0, 1]; returns
// (..., n * dim_per_coord) with interleaved sin/cos pairs per frequency.
torch::Tensor sincos_pe(const torch::Tensor& coords, int64_t dim_per_coord);

// Where each query samples and with what weight.
struct SamplingPlan {
  torch::Tensor locations;  // (B, M, heads, levels, points, 2), normalized
  torch::Tensor weights;    // (B, M, heads, levels, points), softmax over levels*points
};

// Multi-scale deformable attention. References are points (B, M, 2) or boxes
// (B, M, 4). Box offsets are scaled by half the box size divided by the
// number of points; point offsets are in units of the level's cell size.
class MSDeformAttnImpl : public torch::nn::Module {
 public:
  MSDeformAttnImpl(int64_t dim, int64_t num_levels, int64_t num_heads, int64_t num_points);

  SamplingPlan plan(const torch::Tensor& query, const torch::Tensor& reference,
                    const std::vector<std::array<int64_t, 2>>& shapes);

  // value_input (Bv, S, D). value_batch maps each query batch row to a row of
  // value_input; identity when absent.
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& reference,
                        const torch::Tensor& value_input,
                        const std::vector<std::array<int64_t, 2>>& shapes,
                        const std::optional<torch::Tensor>& value_batch = std::nullopt);

  int64_t num_heads() const { return num_heads_; }
  int64_t num_levels() const { return num_levels_; }
  int64_t num_points() const { return num_points_; }

  torch::nn::Linear sampling_offsets{nullptr}, attention_weights{nullptr}, value_proj{nullptr},
      output_proj{nullptr};

 private:
  int64_t dim_;
  int64_t num_levels_;
  int64_t num_heads_;
  int64_t num_points_;
};
TORCH_MODULE(MSDeformAttn);

// kFused runs the hand-written kernel; kDense (scatter into an M x S matrix)
// and kGather are tensor-op formulations of the same sampling.
enum class SamplingRoute { kFused, kDense, kGather };

// Samples per-head values (B, heads, S, head_dim) bilinearly at `locations`
// and reduces with `weights`, giving (B, M, heads * head_dim). Samples
// outside a level read zeros.
torch::Tensor deformable_sample(const torch::Tensor& value, const SamplingPlan& plan,
                                const std::vector<std::array<int64_t, 2>>& shapes,
                                SamplingRoute route = SamplingRoute::kFused);
torch::Tensor fused_deformable_sample(const torch::Tensor& value, const SamplingPlan& plan,
                                      const std::vector<std::array<int64_t, 2>>& shapes);

// Strided convolutional pyramid. Output levels are projected to D channels.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const ModelConfig& config);

  // images (B, 3, H, W), normalized. H and W must be multiples of the
  // coarsest stride.
  MultiScaleFeatures forward(const torch::Tensor& images);

 private:
  int64_t num_levels_;
  int64_t coarsest_stride_;
  std::vector<torch::nn::Sequential> stages_;
  std::vector<torch::nn::Sequential> projections_;
};
TORCH_MODULE(Backbone);

class EncoderLayerImpl : public torch::nn::Module {
 public:
  explicit EncoderLayerImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& pos,
                        const torch::Tensor& reference,
                        const std::vector<std::array<int64_t, 2>>& shapes);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  MSDeformAttn attn{nullptr};
  FeedForward ffn{nullptr};
};
TORCH_MODULE(EncoderLayer);

// Pre-norm deformable self-attention encoder; every token queries with its
// own center as the reference point.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ModelConfig& config);
  MultiScaleFeatures forward(const MultiScaleFeatures& features);

  torch::Tensor level_embed;
  std::vector<EncoderLayer> layers;

 private:
  int64_t dim_;
};
TORCH_MODULE(Encoder);

}  // namespace promptdet
