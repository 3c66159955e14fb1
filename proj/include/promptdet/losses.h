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

#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "promptdet/matching.h"

namespace promptdet {

struct LossWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
  double align = 1.0;
};

// Loss components as scalar tensors; `align` is undefined when absent.
struct LossBreakdown {
  torch::Tensor cls;
  torch::Tensor l1;
  torch::Tensor giou;
  torch::Tensor align;
  torch::Tensor total;
  std::vector<LossBreakdown> auxiliary;  // per decoder layer + encoder entries

  double value(const torch::Tensor& t) const { return t.defined() ? t.item<double>() : 0.0; }
  nlohmann::json to_json() const;
};

// Elementwise sigmoid focal loss, averaged over all elements.
torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& targets,
                         double alpha = 0.25, double gamma = 2.0);
// Same, summed.
torch::Tensor focal_loss_sum(const torch::Tensor& logits, const torch::Tensor& targets,
                             double alpha = 0.25, double gamma = 2.0);

// Positive-minus-negative focal cost on sigmoid probabilities.
torch::Tensor focal_match_cost(const torch::Tensor& logits, double alpha, double gamma);

struct DetectionTargets {
  torch::Tensor labels;  // (G,) int64 class index into the prompt list
  torch::Tensor boxes;   // (G, 4)
};

// Matched detection losses for one image: focal over all N x C logits with
// unmatched queries as background, per-coordinate mean L1 and 1 - GIoU over
// matched pairs. All three are sums divided by `normalizer`.
LossBreakdown detection_loss(const MatchResult& match, const torch::Tensor& logits,
                             const torch::Tensor& boxes, const DetectionTargets& targets,
                             double normalizer, double focal_alpha = 0.25,
                             double focal_gamma = 2.0);

// Region-level InfoNCE between visual rows and text rows (K, D). Columns with
// the same label as row i (other than i itself) are left out of row i's
// denominator.
torch::Tensor infonce_align(const torch::Tensor& visual, const torch::Tensor& text,
                            const std::vector<int64_t>& labels, double temperature);

// Weighted sum of every decoder layer, the encoder auxiliary term and the
// alignment term.
LossBreakdown total_loss(const std::vector<LossBreakdown>& layers,
                         const LossBreakdown* encoder_aux, const torch::Tensor& align,
                         const LossWeights& weights = {});

}  // namespace promptdet
