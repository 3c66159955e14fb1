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

#include "promptdet/losses.h"

#include <limits>

#include "promptdet/errors.h"

namespace promptdet {

nlohmann::json LossBreakdown::to_json() const {
  return {{"cls", value(cls)},
          {"l1", value(l1)},
          {"giou", value(giou)},
          {"align", value(align)},
          {"total", value(total)}};
}

namespace {

torch::Tensor focal_elements(const torch::Tensor& logits, const torch::Tensor& targets,
                             double alpha, double gamma) {
  auto prob = torch::sigmoid(logits);
  auto ce = torch::binary_cross_entropy_with_logits(logits, targets, {}, {},
                                                    at::Reduction::None);
  auto p_t = prob * targets + (1.0 - prob) * (1.0 - targets);
  auto loss = ce * torch::pow(1.0 - p_t, gamma);
  if (alpha >= 0.0) loss = loss * (alpha * targets + (1.0 - alpha) * (1.0 - targets));
  return loss;
}

}  // namespace

torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& targets, double alpha,
                         double gamma) {
  TORCH_CHECK(logits.sizes() == targets.sizes(), "focal_loss shape mismatch");
  return focal_elements(logits, targets, alpha, gamma).mean();
}

torch::Tensor focal_loss_sum(const torch::Tensor& logits, const torch::Tensor& targets,
                             double alpha, double gamma) {
  TORCH_CHECK(logits.sizes() == targets.sizes(), "focal_loss shape mismatch");
  return focal_elements(logits, targets, alpha, gamma).sum();
}

torch::Tensor focal_match_cost(const torch::Tensor& logits, double alpha, double gamma) {
  constexpr double kEps = 1e-8;
  auto prob = torch::sigmoid(logits);
  auto neg = (1.0 - alpha) * torch::pow(prob, gamma) * -torch::log(1.0 - prob + kEps);
  auto pos = alpha * torch::pow(1.0 - prob, gamma) * -torch::log(prob + kEps);
  return pos - neg;
}

LossBreakdown detection_loss(const MatchResult& match, const torch::Tensor& logits,
                             const torch::Tensor& boxes, const DetectionTargets& targets,
                             double normalizer, double focal_alpha, double focal_gamma) {
  const auto opts = logits.options().requires_grad(false);
  auto target_cls = torch::zeros_like(logits, opts);
  LossBreakdown out;
  if (match.pairs.empty()) {
    out.l1 = torch::zeros({}, opts);
    out.giou = torch::zeros({}, opts);
  } else {
    std::vector<int64_t> q_idx, g_idx;
    for (const auto& [q, g] : match.pairs) {
      q_idx.push_back(q);
      g_idx.push_back(g);
    }
    auto qi = torch::tensor(q_idx, torch::kLong);
    auto gi = torch::tensor(g_idx, torch::kLong);
    auto labels = targets.labels.index_select(0, gi);
    target_cls.index_put_({qi, labels}, 1.0);
    auto pred = boxes.index_select(0, qi);
    auto gt = targets.boxes.index_select(0, gi).to(boxes.scalar_type());
    out.l1 = (pred - gt).abs().mean(-1).sum() / normalizer;
    out.giou = (1.0 - tensor_ops::giou_rows(pred, gt)).sum() / normalizer;
  }
  out.cls = focal_loss_sum(logits, target_cls, focal_alpha, focal_gamma) / normalizer;
  return out;
}

torch::Tensor infonce_align(const torch::Tensor& visual, const torch::Tensor& text,
                            const std::vector<int64_t>& labels, double temperature) {
  TORCH_CHECK(visual.sizes() == text.sizes(), "visual/text shape mismatch");
  const int64_t k = visual.size(0);
  TORCH_CHECK(static_cast<int64_t>(labels.size()) == k, "one label per row required");
  if (k == 0) throw ValidationError("alignment needs at least one pair");
  auto logits = torch::matmul(visual, text.transpose(0, 1)) / temperature;
  auto label_t = torch::tensor(labels, torch::kLong);
  auto same = label_t.unsqueeze(1).eq(label_t.unsqueeze(0));
  auto eye = torch::eye(k, torch::kBool);
  auto drop = same & ~eye;
  logits = logits.masked_fill(drop, -std::numeric_limits<double>::infinity());
  auto log_prob = torch::log_softmax(logits, 1);
  return -log_prob.diagonal().mean();
}

LossBreakdown total_loss(const std::vector<LossBreakdown>& layers,
                         const LossBreakdown* encoder_aux, const torch::Tensor& align,
                         const LossWeights& weights) {
  if (layers.empty()) throw ValidationError("total_loss needs at least one decoder layer");
  LossBreakdown out;
  auto add = [](torch::Tensor& acc, const torch::Tensor& x) {
    if (!x.defined()) return;
    acc = acc.defined() ? acc + x : x;
  };
  std::vector<const LossBreakdown*> parts;
  for (const auto& l : layers) parts.push_back(&l);
  if (encoder_aux != nullptr) parts.push_back(encoder_aux);
  for (const auto* p : parts) {
    add(out.cls, p->cls);
    add(out.l1, p->l1);
    add(out.giou, p->giou);
    out.auxiliary.push_back(*p);
    auto& entry = out.auxiliary.back();
    entry.total = weights.cls * p->cls + weights.l1 * p->l1 + weights.giou * p->giou;
  }
  out.align = align;
  out.total = weights.cls * out.cls + weights.l1 * out.l1 + weights.giou * out.giou;
  if (align.defined()) out.total = out.total + weights.align * align;
  return out;
}

}  // namespace promptdet
