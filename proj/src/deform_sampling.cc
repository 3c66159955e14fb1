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

// Fused bilinear multi-scale sampling with a hand-written backward pass.

#include <cmath>

#include "promptdet/backbone_encoder.h"

namespace promptdet {
namespace {

struct Dims {
  int64_t batch, queries, heads, levels, points, tokens, head_dim;
};

struct Level {
  int64_t h, w, start;
};

// Four bilinear taps of one sampling location. Taps outside the level get
// offset -1 and read zero.
template <typename T>
struct Taps {
  int64_t offset[4];
  T fx, fy;

  T corner_weight(int c) const {
    const T wx = (c & 1) ? fx : T(1) - fx;
    const T wy = (c & 2) ? fy : T(1) - fy;
    return wx * wy;
  }
};

template <typename T>
Taps<T> make_taps(T lx, T ly, const Level& lv) {
  const T px = lx * static_cast<T>(lv.w) - T(0.5);
  const T py = ly * static_cast<T>(lv.h) - T(0.5);
  const T x0 = std::floor(px);
  const T y0 = std::floor(py);
  Taps<T> taps;
  taps.fx = px - x0;
  taps.fy = py - y0;
  const int64_t xi = static_cast<int64_t>(x0);
  const int64_t yi = static_cast<int64_t>(y0);
  for (int c = 0; c < 4; ++c) {
    const int64_t x = xi + (c & 1);
    const int64_t y = yi + ((c & 2) >> 1);
    taps.offset[c] = (x >= 0 && x < lv.w && y >= 0 && y < lv.h) ? lv.start + y * lv.w + x : -1;
  }
  return taps;
}

template <typename T>
void fused_forward(const T* value, const T* loc, const T* attn, T* out, const Dims& d,
                   const std::vector<Level>& levels) {
  const int64_t hd = d.head_dim;
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t m = 0; m < d.queries; ++m) {
      for (int64_t h = 0; h < d.heads; ++h) {
        T* o = out + ((b * d.queries + m) * d.heads + h) * hd;
        const T* vbase = value + (b * d.heads + h) * d.tokens * hd;
        const int64_t sample0 = ((b * d.queries + m) * d.heads + h) * d.levels * d.points;
        for (int64_t l = 0; l < d.levels; ++l) {
          for (int64_t p = 0; p < d.points; ++p) {
            const int64_t s = sample0 + l * d.points + p;
            const T a = attn[s];
            const auto taps = make_taps(loc[2 * s], loc[2 * s + 1], levels[l]);
            for (int c = 0; c < 4; ++c) {
              if (taps.offset[c] < 0) continue;
              const T w = a * taps.corner_weight(c);
              const T* v = vbase + taps.offset[c] * hd;
              for (int64_t k = 0; k < hd; ++k) o[k] += w * v[k];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void fused_backward(const T* value, const T* loc, const T* attn, const T* grad_out,
                    T* grad_value, T* grad_loc, T* grad_attn, const Dims& d,
                    const std::vector<Level>& levels) {
  const int64_t hd = d.head_dim;
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t m = 0; m < d.queries; ++m) {
      for (int64_t h = 0; h < d.heads; ++h) {
        const T* g = grad_out + ((b * d.queries + m) * d.heads + h) * hd;
        const T* vbase = value + (b * d.heads + h) * d.tokens * hd;
        T* gvbase = grad_value + (b * d.heads + h) * d.tokens * hd;
        const int64_t sample0 = ((b * d.queries + m) * d.heads + h) * d.levels * d.points;
        for (int64_t l = 0; l < d.levels; ++l) {
          const Level& lv = levels[l];
          for (int64_t p = 0; p < d.points; ++p) {
            const int64_t s = sample0 + l * d.points + p;
            const T a = attn[s];
            const auto taps = make_taps(loc[2 * s], loc[2 * s + 1], lv);
            T dots[4] = {0, 0, 0, 0};
            for (int c = 0; c < 4; ++c) {
              if (taps.offset[c] < 0) continue;
              const T* v = vbase + taps.offset[c] * hd;
              T* gv = gvbase + taps.offset[c] * hd;
              const T w = a * taps.corner_weight(c);
              T acc = 0;
              for (int64_t k = 0; k < hd; ++k) {
                acc += g[k] * v[k];
                gv[k] += w * g[k];
              }
              dots[c] = acc;
            }
            const T fx = taps.fx, fy = taps.fy;
            grad_attn[s] += (T(1) - fx) * (T(1) - fy) * dots[0] + fx * (T(1) - fy) * dots[1] +
                            (T(1) - fx) * fy * dots[2] + fx * fy * dots[3];
            const T dfx = (T(1) - fy) * (dots[1] - dots[0]) + fy * (dots[3] - dots[2]);
            const T dfy = (T(1) - fx) * (dots[2] - dots[0]) + fx * (dots[3] - dots[1]);
            grad_loc[2 * s] += a * dfx * static_cast<T>(lv.w);
            grad_loc[2 * s + 1] += a * dfy * static_cast<T>(lv.h);
          }
        }
      }
    }
  }
}

std::vector<Level> levels_from(const torch::Tensor& level_info) {
  auto acc = level_info.accessor<int64_t, 2>();
  std::vector<Level> out;
  for (int64_t l = 0; l < level_info.size(0); ++l) out.push_back({acc[l][0], acc[l][1], acc[l][2]});
  return out;
}

Dims dims_from(const torch::Tensor& value, const torch::Tensor& weights) {
  return {weights.size(0), weights.size(1), weights.size(2), weights.size(3),
          weights.size(4), value.size(2),   value.size(3)};
}

class FusedSample : public torch::autograd::Function<FusedSample> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, torch::Tensor value,
                               torch::Tensor locations, torch::Tensor weights,
                               torch::Tensor level_info) {
    value = value.contiguous();
    locations = locations.contiguous();
    weights = weights.contiguous();
    ctx->save_for_backward({value, locations, weights, level_info});
    const Dims d = dims_from(value, weights);
    const auto levels = levels_from(level_info);
    auto out = torch::zeros({d.batch, d.queries, d.heads * d.head_dim}, value.options());
    AT_DISPATCH_FLOATING_TYPES(value.scalar_type(), "fused_sample_forward", [&] {
      fused_forward<scalar_t>(value.data_ptr<scalar_t>(), locations.data_ptr<scalar_t>(),
                              weights.data_ptr<scalar_t>(), out.data_ptr<scalar_t>(), d, levels);
    });
    return out;
  }

  static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                               torch::autograd::tensor_list grads) {
    const auto saved = ctx->get_saved_variables();
    const auto& value = saved[0];
    const auto& locations = saved[1];
    const auto& weights = saved[2];
    const Dims d = dims_from(value, weights);
    const auto levels = levels_from(saved[3]);
    auto grad_out = grads[0].contiguous();
    auto grad_value = torch::zeros_like(value);
    auto grad_loc = torch::zeros_like(locations);
    auto grad_attn = torch::zeros_like(weights);
    AT_DISPATCH_FLOATING_TYPES(value.scalar_type(), "fused_sample_backward", [&] {
      fused_backward<scalar_t>(value.data_ptr<scalar_t>(), locations.data_ptr<scalar_t>(),
                               weights.data_ptr<scalar_t>(), grad_out.data_ptr<scalar_t>(),
                               grad_value.data_ptr<scalar_t>(), grad_loc.data_ptr<scalar_t>(),
                               grad_attn.data_ptr<scalar_t>(), d, levels);
    });
    return {grad_value, grad_loc, grad_attn, torch::Tensor()};
  }
};

}  // namespace

torch::Tensor fused_deformable_sample(const torch::Tensor& value, const SamplingPlan& plan,
                                      const std::vector<std::array<int64_t, 2>>& shapes) {
  TORCH_CHECK(value.dim() == 4, "value must be (B, heads, S, head_dim)");
  TORCH_CHECK(plan.weights.dim() == 5 && plan.locations.dim() == 6, "malformed sampling plan");
  TORCH_CHECK(value.scalar_type() == plan.weights.scalar_type() &&
                  value.scalar_type() == plan.locations.scalar_type(),
              "value and sampling plan dtypes differ");
  TORCH_CHECK(value.size(0) == plan.weights.size(0) && value.size(1) == plan.weights.size(2),
              "value and sampling plan disagree on batch or heads");
  TORCH_CHECK(static_cast<int64_t>(shapes.size()) == plan.weights.size(3), "level count mismatch");
  std::vector<int64_t> info;
  int64_t start = 0;
  for (const auto& [h, w] : shapes) {
    info.insert(info.end(), {h, w, start});
    start += h * w;
  }
  TORCH_CHECK(start == value.size(2), "level shapes do not cover the value tokens");
  auto level_info = torch::tensor(info, torch::kLong).view({static_cast<int64_t>(shapes.size()), 3});
  return FusedSample::apply(value, plan.locations, plan.weights, level_info);
}

}  // namespace promptdet
