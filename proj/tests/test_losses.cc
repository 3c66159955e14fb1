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

#include <gtest/gtest.h>

#include "gradient_cases.h"
#include "support.h"
#include "promptdet/errors.h"
#include "promptdet/losses.h"
#include "promptdet/matching.h"

using namespace promptdet;
using namespace promptdet::testing;

namespace {

double focal_reference(double z, double y, double alpha, double gamma) {
  const double p = 1.0 / (1.0 + std::exp(-z));
  const double ce = -(y * std::log(p) + (1 - y) * std::log(1 - p));
  const double pt = y * p + (1 - y) * (1 - p);
  const double at = y * alpha + (1 - y) * (1 - alpha);
  return at * std::pow(1 - pt, gamma) * ce;
}

}  // namespace

TEST(Focal, MatchesScalarReference) {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto z = torch::tensor({-3.0, -0.5, 0.0, 0.4, 2.5, 6.0}, opts);
  auto y = torch::tensor({0.0, 1.0, 0.0, 1.0, 0.0, 1.0}, opts);
  double sum = 0.0;
  for (int i = 0; i < 6; ++i) sum += focal_reference(z[i].item<double>(), y[i].item<double>(), 0.25, 2.0);
  EXPECT_NEAR(focal_loss_sum(z, y).item<double>(), sum, 1e-12);
  EXPECT_NEAR(focal_loss(z, y).item<double>(), sum / 6.0, 1e-12);
}

TEST(Focal, GammaZeroIsWeightedCrossEntropy) {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto z = torch::tensor({0.7}, opts);
  auto y = torch::tensor({1.0}, opts);
  const double p = 1.0 / (1.0 + std::exp(-0.7));
  EXPECT_NEAR(focal_loss_sum(z, y, 0.25, 0.0).item<double>(), -0.25 * std::log(p), 1e-12);
}

TEST(Focal, EasyExamplesAreDownWeighted) {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto y = torch::tensor({1.0}, opts);
  const double easy = focal_loss_sum(torch::tensor({4.0}, opts), y).item<double>();
  const double ce = -0.25 * std::log(1.0 / (1.0 + std::exp(-4.0)));
  EXPECT_LT(easy, 0.01 * ce);
}

TEST(InfoNce, MatchesExplicitSoftmax) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(4);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto v = torch::randn({4, 6}, gen, opts);
  auto t = torch::randn({4, 6}, gen, opts);
  v = v / v.norm(2, 1, true);
  t = t / t.norm(2, 1, true);
  const std::vector<int64_t> labels = {0, 1, 0, 2};
  const double tau = 0.07;
  double expected = 0.0;
  for (int i = 0; i < 4; ++i) {
    double denom = 0.0;
    for (int j = 0; j < 4; ++j) {
      if (j != i && labels[j] == labels[i]) continue;
      denom += std::exp(v[i].dot(t[j]).item<double>() / tau);
    }
    expected += -std::log(std::exp(v[i].dot(t[i]).item<double>() / tau) / denom);
  }
  expected /= 4.0;
  EXPECT_NEAR(infonce_align(v, t, labels, tau).item<double>(), expected, 1e-10);
}

TEST(InfoNce, AlignedPairsScoreLower) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(6);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto t = torch::randn({5, 8}, gen, opts);
  t = t / t.norm(2, 1, true);
  auto noise = torch::randn({5, 8}, gen, opts);
  auto far = noise / noise.norm(2, 1, true);
  const std::vector<int64_t> labels = {0, 1, 2, 3, 4};
  EXPECT_LT(infonce_align(t, t, labels, 0.07).item<double>(),
            infonce_align(far, t, labels, 0.07).item<double>());
}

TEST(InfoNce, RejectsEmptyAndMismatched) {
  EXPECT_THROW(infonce_align(torch::zeros({0, 4}), torch::zeros({0, 4}), {}, 0.07), ValidationError);
  EXPECT_ANY_THROW(infonce_align(torch::zeros({2, 4}), torch::zeros({3, 4}), {0, 1}, 0.07));
}

TEST(DetectionLoss, HandComputedComponents) {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto logits = torch::tensor({1.0, -2.0, 0.5, 0.0}, opts).view({2, 2});
  auto boxes = torch::tensor({0.5, 0.5, 0.2, 0.2, 0.3, 0.3, 0.1, 0.1}, opts).view({2, 4});
  DetectionTargets targets{torch::tensor({1}, torch::kLong),
                           torch::tensor({0.3, 0.32, 0.1, 0.12}, opts).view({1, 4})};
  MatchResult match;
  match.pairs = {{1, 0}};
  const auto loss = detection_loss(match, logits, boxes, targets, 2.0);
  // Query 1 is positive for class 1; all other entries are background.
  const double cls = (focal_reference(1.0, 0, 0.25, 2) + focal_reference(-2.0, 0, 0.25, 2) +
                      focal_reference(0.5, 0, 0.25, 2) + focal_reference(0.0, 1, 0.25, 2)) /
                     2.0;
  EXPECT_NEAR(loss.cls.item<double>(), cls, 1e-12);
  EXPECT_NEAR(loss.l1.item<double>(), (0.02 + 0.02) / 4.0 / 2.0, 1e-12);
  const double g = reference_giou({0.3, 0.3, 0.1, 0.1}, {0.3, 0.32, 0.1, 0.12});
  EXPECT_NEAR(loss.giou.item<double>(), (1.0 - g) / 2.0, 1e-12);
}

TEST(DetectionLoss, NoMatchesGivesPureBackground) {
  auto logits = torch::zeros({3, 2}, torch::kFloat64);
  DetectionTargets targets{torch::zeros({0}, torch::kLong), torch::zeros({0, 4}, torch::kFloat64)};
  const auto loss = detection_loss({}, logits, torch::rand({3, 4}, torch::kFloat64), targets, 1.0);
  EXPECT_EQ(loss.l1.item<double>(), 0.0);
  EXPECT_NEAR(loss.cls.item<double>(), 6 * focal_reference(0.0, 0, 0.25, 2), 1e-12);
}

TEST(TotalLoss, WeightsAndAuxiliaryTerms) {
  auto s = [](double x) { return torch::tensor(x, torch::kFloat64); };
  LossBreakdown a{s(1.0), s(0.1), s(0.2), {}, {}, {}};
  LossBreakdown b{s(2.0), s(0.3), s(0.4), {}, {}, {}};
  LossBreakdown enc{s(0.5), s(0.5), s(0.5), {}, {}, {}};
  const auto t = total_loss({a, b}, &enc, s(0.7));
  EXPECT_NEAR(t.cls.item<double>(), 3.5, 1e-12);
  EXPECT_NEAR(t.total.item<double>(), 3.5 + 5 * 0.9 + 2 * 1.1 + 0.7, 1e-12);
  EXPECT_EQ(t.auxiliary.size(), 3u);
  const auto no_align = total_loss({a}, nullptr, {});
  EXPECT_FALSE(no_align.align.defined());
  EXPECT_NEAR(no_align.total.item<double>(), 1.0 + 0.5 + 0.4, 1e-12);
  EXPECT_THROW(total_loss({}, nullptr, {}), ValidationError);
}

TEST(Gradients, FocalGiouInfoNce) {
  EXPECT_LT(focal_case(1).error, 1e-4);
  EXPECT_LT(giou_case(1).error, 1e-4);
  EXPECT_LT(infonce_case(1).error, 1e-4);
}

TEST(Gradients, OffsetMlp) { EXPECT_LT(offset_mlp_case(1).error, 1e-4); }
