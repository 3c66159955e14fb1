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

#include <torch/torch.h>

namespace promptdet {

// Center-format box in [0,1] image coordinates.
struct NormalizedBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  bool operator==(const NormalizedBox&) const = default;
};

struct NormalizedPoint {
  double x = 0.5;
  double y = 0.5;

  bool operator==(const NormalizedPoint&) const = default;
};

// Corner format (x0, y0, x1, y1).
struct Corners {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;
};

inline constexpr double kLogitEps = 1e-5;

double area(const NormalizedBox& b);
double iou(const NormalizedBox& a, const NormalizedBox& b);
double giou(const NormalizedBox& a, const NormalizedBox& b);

NormalizedPoint box_to_center_point(const NormalizedBox& b);

// Clamps x to [kLogitEps, 1 - kLogitEps] before taking the inverse sigmoid.
double to_logit(double x);
double from_logit(double z);
std::array<double, 4> to_logit(const NormalizedBox& b);
NormalizedBox from_logit(const std::array<double, 4>& z);

Corners to_corners(const NormalizedBox& b);
NormalizedBox from_corners(const Corners& c);

// True when the center lies in the unit square and 0 < w, h <= 1.
bool is_valid(const NormalizedBox& b);
bool is_valid(const NormalizedPoint& p);

// Intersects the box extent with the unit square. Returns a box with a small
// positive size if the intersection is empty.
NormalizedBox clamp_to_unit(const NormalizedBox& b);

// Tensor counterparts used by the losses. Boxes are (..., 4) center format.
namespace tensor_ops {

torch::Tensor cxcywh_to_xyxy(const torch::Tensor& boxes);
torch::Tensor xyxy_to_cxcywh(const torch::Tensor& boxes);
torch::Tensor inverse_sigmoid(const torch::Tensor& x, double eps = kLogitEps);

// Elementwise GIoU of matching rows; a and b shaped (N, 4).
torch::Tensor giou_rows(const torch::Tensor& a, const torch::Tensor& b);
// Pairwise GIoU matrix (N, M).
torch::Tensor giou_pairwise(const torch::Tensor& a, const torch::Tensor& b);

}  // namespace tensor_ops

}  // namespace promptdet
