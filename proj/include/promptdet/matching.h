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

#include <cstdint>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "promptdet/geometry.h"

namespace promptdet {

struct MatchResult {
  std::vector<std::pair<int64_t, int64_t>> pairs;  // (query, ground truth), sorted by gt
  double total_cost = 0.0;
};

// Minimum-cost assignment of every row of a rows x cols cost matrix
// (rows <= cols) to a distinct column. Returns column per row.
std::vector<int64_t> solve_assignment(const std::vector<double>& cost, int64_t rows, int64_t cols);

struct MatchCostWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
};

// Matching cost (G, N) between ground truths and predictions. logits (N, C),
// boxes (N, 4), gt_labels (G,) class indices into C, gt_boxes (G, 4).
torch::Tensor matching_cost(const torch::Tensor& logits, const torch::Tensor& boxes,
                            const torch::Tensor& gt_labels, const torch::Tensor& gt_boxes,
                            double focal_alpha = 0.25, double focal_gamma = 2.0,
                            const MatchCostWeights& weights = {});

// Globally optimal one-to-one matching. Throws ValidationError when there are
// more ground truths than predictions.
MatchResult hungarian_match(const torch::Tensor& logits, const torch::Tensor& boxes,
                            const torch::Tensor& gt_labels, const torch::Tensor& gt_boxes,
                            double focal_alpha = 0.25, double focal_gamma = 2.0,
                            const MatchCostWeights& weights = {});

// Same, from an explicit (G, N) cost matrix.
MatchResult match_from_cost(const torch::Tensor& cost);

}  // namespace promptdet
