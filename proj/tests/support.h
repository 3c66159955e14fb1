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

// Shared oracles and fixtures for the unit and acceptance tests. Everything
// here is written independently of the library code it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "promptdet/config.h"
#include "promptdet/geometry.h"
#include "promptdet/matching.h"

namespace promptdet::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("promptdet_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small architecture for fast unit tests.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.dim = 32;
  c.num_heads = 4;
  c.num_points = 2;
  c.enc_layers = 1;
  c.dec_layers = 2;
  c.prompt_blocks = 2;
  c.text_layers = 1;
  c.num_queries = 20;
  c.select_k = 20;
  c.backbone_channels = {8, 16, 24, 32, 32};
  c.vocab = {"red", "blue", "green", "circle", "square", "triangle", "a", "photo", "of"};
  return c;
}

// Minimum over all injective row -> column maps, summed in row order.
inline double brute_force_assignment(const std::vector<double>& cost, int rows, int cols) {
  std::vector<int> perm(cols);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int r = 0; r < rows; ++r) total += cost[r * cols + perm[r]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Central differences of a scalar function at x (float64), one coordinate at
// a time.
inline torch::Tensor numeric_gradient(const std::function<double(const torch::Tensor&)>& f,
                                      const torch::Tensor& x, double eps = 1e-6) {
  auto base = x.detach().clone().contiguous();
  auto grad = torch::zeros_like(base);
  auto flat = base.view({-1});
  auto gflat = grad.view({-1});
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double keep = flat[i].item<double>();
    flat[i] = keep + eps;
    const double up = f(base);
    flat[i] = keep - eps;
    const double down = f(base);
    flat[i] = keep;
    gflat[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

// ||a - n|| / max(||a||, ||n||), with an absolute floor for vanishing
// gradients.
inline double relative_error(const torch::Tensor& analytic, const torch::Tensor& numeric) {
  const double diff = (analytic - numeric).norm().item<double>();
  const double scale =
      std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), 1e-8});
  return diff / scale;
}

// Autograd gradient of f w.r.t. each input against central differences;
// returns the worst relative error.
inline double gradient_check(
    const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& f,
    const std::vector<torch::Tensor>& inputs, double eps = 1e-6) {
  std::vector<torch::Tensor> leaves;
  for (const auto& t : inputs) leaves.push_back(t.detach().clone().set_requires_grad(true));
  auto out = f(leaves);
  auto grads = torch::autograd::grad({out}, leaves, {}, false, false, true);
  double worst = 0.0;
  for (size_t k = 0; k < leaves.size(); ++k) {
    auto eval = [&](const torch::Tensor& xk) {
      torch::NoGradGuard ng;
      std::vector<torch::Tensor> args;
      for (size_t j = 0; j < leaves.size(); ++j) args.push_back(j == k ? xk : leaves[j].detach());
      return f(args).item<double>();
    };
    auto numeric = numeric_gradient(eval, leaves[k], eps);
    auto analytic = grads[k].defined() ? grads[k] : torch::zeros_like(numeric);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

// Corner-format IoU/GIoU written from the definitions.
struct BoxXyxy {
  double x0, y0, x1, y1;
};

inline BoxXyxy corners_of(const NormalizedBox& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

inline double reference_iou(const NormalizedBox& a, const NormalizedBox& b) {
  const BoxXyxy p = corners_of(a), q = corners_of(b);
  const double iw = std::max(0.0, std::min(p.x1, q.x1) - std::max(p.x0, q.x0));
  const double ih = std::max(0.0, std::min(p.y1, q.y1) - std::max(p.y0, q.y0));
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

inline double reference_giou(const NormalizedBox& a, const NormalizedBox& b) {
  const BoxXyxy p = corners_of(a), q = corners_of(b);
  const double iw = std::max(0.0, std::min(p.x1, q.x1) - std::max(p.x0, q.x0));
  const double ih = std::max(0.0, std::min(p.y1, q.y1) - std::max(p.y0, q.y0));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double hull = (std::max(p.x1, q.x1) - std::min(p.x0, q.x0)) *
                      (std::max(p.y1, q.y1) - std::min(p.y0, q.y0));
  return inter / uni - (hull - uni) / hull;
}

inline NormalizedBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> size(0.02, 0.6), pos(0.0, 1.0);
  NormalizedBox b;
  b.w = size(rng);
  b.h = size(rng);
  b.cx = b.w / 2 + pos(rng) * (1.0 - b.w);
  b.cy = b.h / 2 + pos(rng) * (1.0 - b.h);
  return b;
}

// Counts violations of range, symmetry, translation invariance and identity
// over `pairs` random box pairs.
struct BoxPropertyReport {
  int64_t pairs = 0;
  int64_t violations = 0;
};

inline BoxPropertyReport check_box_properties(int64_t pairs, uint64_t seed) {
  constexpr double kTol = 1e-12;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> shift(-0.3, 0.3);
  BoxPropertyReport report;
  report.pairs = pairs;
  for (int64_t i = 0; i < pairs; ++i) {
    const NormalizedBox a = random_box(rng), b = random_box(rng);
    const double u = iou(a, b), g = giou(a, b);
    bool ok = u >= 0.0 && u <= 1.0 && g >= -1.0 && g <= 1.0 && g <= u + kTol;
    ok = ok && std::abs(u - iou(b, a)) <= kTol && std::abs(g - giou(b, a)) <= kTol;
    ok = ok && std::abs(u - reference_iou(a, b)) <= 1e-9 &&
         std::abs(g - reference_giou(a, b)) <= 1e-9;
    const double dx = shift(rng), dy = shift(rng);
    NormalizedBox ta = a, tb = b;
    ta.cx += dx;
    tb.cx += dx;
    ta.cy += dy;
    tb.cy += dy;
    ok = ok && std::abs(iou(ta, tb) - u) <= 1e-9 && std::abs(giou(ta, tb) - g) <= 1e-9;
    ok = ok && std::abs(iou(a, a) - 1.0) <= kTol && std::abs(giou(a, a) - 1.0) <= kTol;
    if (!ok) ++report.violations;
  }
  return report;
}

// Random rows x cols instances (1 <= rows <= cols <= max_size). Half use
// small integer costs so ties are common. Returns the number of instances
// whose matched cost differs from the brute-force minimum.
struct AssignmentReport {
  int64_t instances = 0;
  int64_t mismatches = 0;
};

inline AssignmentReport check_assignment_oracle(int64_t instances, int max_size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(1, max_size), small(0, 4);
  std::uniform_real_distribution<double> real(-3.0, 3.0);
  AssignmentReport report;
  report.instances = instances;
  for (int64_t i = 0; i < instances; ++i) {
    int rows = dim(rng), cols = dim(rng);
    if (rows > cols) std::swap(rows, cols);
    std::vector<double> cost(static_cast<size_t>(rows * cols));
    for (auto& c : cost) c = (i % 2 == 0) ? static_cast<double>(small(rng)) : real(rng);
    auto t = torch::tensor(cost, torch::kFloat64).view({rows, cols});
    const MatchResult m = match_from_cost(t);
    std::vector<int64_t> col_of(rows, -1);
    for (const auto& [q, g] : m.pairs) col_of[g] = q;
    double total = 0.0;
    std::vector<char> used(cols, 0);
    bool valid = static_cast<int>(m.pairs.size()) == rows;
    for (int r = 0; r < rows && valid; ++r) {
      valid = col_of[r] >= 0 && col_of[r] < cols && !used[col_of[r]];
      if (valid) {
        used[col_of[r]] = 1;
        total += cost[r * cols + col_of[r]];
      }
    }
    if (!valid || total != brute_force_assignment(cost, rows, cols)) ++report.mismatches;
  }
  return report;
}

}  // namespace promptdet::testing
