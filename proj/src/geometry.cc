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

#include "promptdet/geometry.h"

#include <algorithm>
#include <cmath>

namespace promptdet {

double area(const NormalizedBox& b) { return std::max(b.w, 0.0) * std::max(b.h, 0.0); }

namespace {

double intersection(const Corners& a, const Corners& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

}  // namespace

double iou(const NormalizedBox& a, const NormalizedBox& b) {
  const double inter = intersection(to_corners(a), to_corners(b));
  const double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double giou(const NormalizedBox& a, const NormalizedBox& b) {
  const Corners ca = to_corners(a);
  const Corners cb = to_corners(b);
  const double inter = intersection(ca, cb);
  const double uni = area(a) + area(b) - inter;
  const double hull = (std::max(ca.x1, cb.x1) - std::min(ca.x0, cb.x0)) *
                      (std::max(ca.y1, cb.y1) - std::min(ca.y0, cb.y0));
  const double iou_value = uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
  if (hull <= 0.0) return iou_value;
  return std::min(iou_value - (hull - uni) / hull, iou_value);
}

NormalizedPoint box_to_center_point(const NormalizedBox& b) { return {b.cx, b.cy}; }

double to_logit(double x) {
  x = std::clamp(x, kLogitEps, 1.0 - kLogitEps);
  return std::log(x / (1.0 - x));
}

double from_logit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::array<double, 4> to_logit(const NormalizedBox& b) {
  return {to_logit(b.cx), to_logit(b.cy), to_logit(b.w), to_logit(b.h)};
}

NormalizedBox from_logit(const std::array<double, 4>& z) {
  return {from_logit(z[0]), from_logit(z[1]), from_logit(z[2]), from_logit(z[3])};
}

Corners to_corners(const NormalizedBox& b) {
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

NormalizedBox from_corners(const Corners& c) {
  const double x0 = std::min(c.x0, c.x1), x1 = std::max(c.x0, c.x1);
  const double y0 = std::min(c.y0, c.y1), y1 = std::max(c.y0, c.y1);
  return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

bool is_valid(const NormalizedBox& b) {
  return std::isfinite(b.cx) && std::isfinite(b.cy) && b.cx >= 0.0 && b.cx <= 1.0 &&
         b.cy >= 0.0 && b.cy <= 1.0 && b.w > 0.0 && b.w <= 1.0 && b.h > 0.0 && b.h <= 1.0;
}

bool is_valid(const NormalizedPoint& p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 &&
         p.y <= 1.0;
}

NormalizedBox clamp_to_unit(const NormalizedBox& b) {
  Corners c = to_corners(b);
  c.x0 = std::clamp(c.x0, 0.0, 1.0);
  c.x1 = std::clamp(c.x1, 0.0, 1.0);
  c.y0 = std::clamp(c.y0, 0.0, 1.0);
  c.y1 = std::clamp(c.y1, 0.0, 1.0);
  NormalizedBox out = from_corners(c);
  out.w = std::max(out.w, kLogitEps);
  out.h = std::max(out.h, kLogitEps);
  return out;
}

namespace tensor_ops {

torch::Tensor cxcywh_to_xyxy(const torch::Tensor& boxes) {
  auto parts = boxes.unbind(-1);
  const auto& cx = parts[0];
  const auto& cy = parts[1];
  const auto& w = parts[2];
  const auto& h = parts[3];
  return torch::stack({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}, -1);
}

torch::Tensor xyxy_to_cxcywh(const torch::Tensor& boxes) {
  auto p = boxes.unbind(-1);
  return torch::stack({0.5 * (p[0] + p[2]), 0.5 * (p[1] + p[3]), p[2] - p[0], p[3] - p[1]}, -1);
}

torch::Tensor inverse_sigmoid(const torch::Tensor& x, double eps) {
  auto c = x.clamp(eps, 1.0 - eps);
  return torch::log(c / (1.0 - c));
}

namespace {

// a, b broadcastable (..., 4) xyxy tensors.
torch::Tensor giou_xyxy(const torch::Tensor& a, const torch::Tensor& b) {
  auto pa = a.unbind(-1);
  auto pb = b.unbind(-1);
  auto area_a = (pa[2] - pa[0]) * (pa[3] - pa[1]);
  auto area_b = (pb[2] - pb[0]) * (pb[3] - pb[1]);
  auto iw = (torch::min(pa[2], pb[2]) - torch::max(pa[0], pb[0])).clamp_min(0.0);
  auto ih = (torch::min(pa[3], pb[3]) - torch::max(pa[1], pb[1])).clamp_min(0.0);
  auto inter = iw * ih;
  auto uni = area_a + area_b - inter;
  auto hull = (torch::max(pa[2], pb[2]) - torch::min(pa[0], pb[0])) *
              (torch::max(pa[3], pb[3]) - torch::min(pa[1], pb[1]));
  constexpr double kTiny = 1e-12;
  auto iou_value = inter / uni.clamp_min(kTiny);
  return iou_value - (hull - uni) / hull.clamp_min(kTiny);
}

}  // namespace

torch::Tensor giou_rows(const torch::Tensor& a, const torch::Tensor& b) {
  return giou_xyxy(cxcywh_to_xyxy(a), cxcywh_to_xyxy(b));
}

torch::Tensor giou_pairwise(const torch::Tensor& a, const torch::Tensor& b) {
  return giou_xyxy(cxcywh_to_xyxy(a).unsqueeze(1), cxcywh_to_xyxy(b).unsqueeze(0));
}

}  // namespace tensor_ops

}  // namespace promptdet
