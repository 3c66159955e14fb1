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

#include "promptdet/matching.h"

#include <algorithm>
#include <limits>

#include "promptdet/errors.h"
#include "promptdet/losses.h"

namespace promptdet {

// Shortest augmenting path with row/column potentials, O(rows^2 * cols).
std::vector<int64_t> solve_assignment(const std::vector<double>& cost, int64_t rows, int64_t cols) {
  if (rows > cols) throw ValidationError("assignment needs rows <= cols");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is the virtual start column.
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<int64_t> owner(cols + 1, 0), way(cols + 1, 0);
  for (int64_t i = 1; i <= rows; ++i) {
    owner[0] = i;
    int64_t j0 = 0;
    std::vector<double> minv(cols + 1, kInf);
    std::vector<char> used(cols + 1, 0);
    do {
      used[j0] = 1;
      const int64_t i0 = owner[j0];
      double delta = kInf;
      int64_t j1 = 0;
      for (int64_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int64_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int64_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int64_t> assignment(rows, -1);
  for (int64_t j = 1; j <= cols; ++j)
    if (owner[j] != 0) assignment[owner[j] - 1] = j - 1;
  return assignment;
}

MatchResult match_from_cost(const torch::Tensor& cost) {
  TORCH_CHECK(cost.dim() == 2, "cost must be a matrix");
  const int64_t gts = cost.size(0);
  const int64_t preds = cost.size(1);
  if (gts > preds)
    throw ValidationError("more ground truths (" + std::to_string(gts) + ") than predictions (" +
                          std::to_string(preds) + ")");
  MatchResult out;
  if (gts == 0) return out;
  auto c = cost.detach().to(torch::kFloat64).contiguous();
  std::vector<double> flat(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
  const auto assignment = solve_assignment(flat, gts, preds);
  for (int64_t g = 0; g < gts; ++g) {
    out.pairs.emplace_back(assignment[g], g);
    out.total_cost += flat[g * preds + assignment[g]];
  }
  return out;
}

torch::Tensor matching_cost(const torch::Tensor& logits, const torch::Tensor& boxes,
                            const torch::Tensor& gt_labels, const torch::Tensor& gt_boxes,
                            double focal_alpha, double focal_gamma, const MatchCostWeights& weights) {
  torch::NoGradGuard no_grad;
  auto selected = logits.index_select(1, gt_labels).transpose(0, 1);  // (G, N)
  auto cls = focal_match_cost(selected, focal_alpha, focal_gamma);
  auto l1 = (gt_boxes.unsqueeze(1) - boxes.unsqueeze(0)).abs().mean(-1);  // (G, N)
  auto giou = tensor_ops::giou_pairwise(gt_boxes, boxes);                 // (G, N)
  return weights.cls * cls + weights.l1 * l1 + weights.giou * (1.0 - giou);
}

MatchResult hungarian_match(const torch::Tensor& logits, const torch::Tensor& boxes,
                            const torch::Tensor& gt_labels, const torch::Tensor& gt_boxes,
                            double focal_alpha, double focal_gamma, const MatchCostWeights& weights) {
  if (gt_boxes.size(0) > boxes.size(0))
    throw ValidationError("more ground truths than predictions");
  if (gt_boxes.size(0) == 0) return {};
  return match_from_cost(
      matching_cost(logits, boxes, gt_labels, gt_boxes, focal_alpha, focal_gamma, weights));
}

}  // namespace promptdet
