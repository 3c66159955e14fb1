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

#include "support.h"
#include "promptdet/errors.h"
#include "promptdet/losses.h"
#include "promptdet/matching.h"

using namespace promptdet;

TEST(Assignment, AgreesWithBruteForce) {
  const auto report = promptdet::testing::check_assignment_oracle(1000, 7, 17);
  EXPECT_EQ(report.mismatches, 0);
}

TEST(Assignment, KnownSquare) {
  // Optimal: row0->col1 (1), row1->col0 (2), row2->col2 (2) = 5.
  const std::vector<double> cost = {4, 1, 3, 2, 0, 5, 3, 2, 2};
  const auto a = solve_assignment(cost, 3, 3);
  EXPECT_EQ(a, (std::vector<int64_t>{1, 0, 2}));
}

TEST(Assignment, RejectsMoreRowsThanColumns) {
  EXPECT_THROW(solve_assignment({1, 2}, 2, 1), ValidationError);
  EXPECT_THROW(match_from_cost(torch::zeros({3, 2})), ValidationError);
}

TEST(Assignment, EmptyGroundTruth) {
  const auto m = match_from_cost(torch::zeros({0, 5}));
  EXPECT_TRUE(m.pairs.empty());
  EXPECT_EQ(m.total_cost, 0.0);
}

TEST(MatchingCost, ComponentsFromDefinitions) {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto logits = torch::tensor({0.3, -1.2, 2.0, 0.1, -0.5, 0.7}, opts).view({3, 2});
  auto boxes = torch::tensor({0.5, 0.5, 0.2, 0.2, 0.3, 0.3, 0.1, 0.2, 0.7, 0.6, 0.3, 0.3}, opts)
                   .view({3, 4});
  auto gt_labels = torch::tensor({1, 0}, torch::kLong);
  auto gt_boxes = torch::tensor({0.52, 0.5, 0.2, 0.22, 0.7, 0.62, 0.25, 0.3}, opts).view({2, 4});
  auto cost = matching_cost(logits, boxes, gt_labels, gt_boxes);
  for (int g = 0; g < 2; ++g) {
    for (int n = 0; n < 3; ++n) {
      const double z = logits[n][gt_labels[g].item<int64_t>()].item<double>();
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double pos = 0.25 * std::pow(1 - p, 2) * -std::log(p + 1e-8);
      const double neg = 0.75 * std::pow(p, 2) * -std::log(1 - p + 1e-8);
      double l1 = 0.0;
      for (int k = 0; k < 4; ++k)
        l1 += std::abs(gt_boxes[g][k].item<double>() - boxes[n][k].item<double>()) / 4.0;
      const NormalizedBox a{gt_boxes[g][0].item<double>(), gt_boxes[g][1].item<double>(),
                            gt_boxes[g][2].item<double>(), gt_boxes[g][3].item<double>()};
      const NormalizedBox b{boxes[n][0].item<double>(), boxes[n][1].item<double>(),
                            boxes[n][2].item<double>(), boxes[n][3].item<double>()};
      const double expected =
          2.0 * (pos - neg) + 5.0 * l1 + 2.0 * (1.0 - promptdet::testing::reference_giou(a, b));
      EXPECT_NEAR(cost[g][n].item<double>(), expected, 1e-9);
    }
  }
}

TEST(MatchingCost, HungarianPicksObviousPairs) {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  // Prediction 2 sits on gt 0 and prediction 0 on gt 1, both with confident logits.
  auto boxes = torch::tensor({0.8, 0.8, 0.1, 0.1, 0.5, 0.1, 0.1, 0.1, 0.2, 0.2, 0.1, 0.1}, opts)
                   .view({3, 4});
  auto logits = torch::full({3, 1}, 3.0, opts);
  auto gt_boxes = torch::tensor({0.2, 0.2, 0.1, 0.1, 0.8, 0.8, 0.1, 0.1}, opts).view({2, 4});
  auto m = hungarian_match(logits, boxes, torch::zeros({2}, torch::kLong), gt_boxes);
  ASSERT_EQ(m.pairs.size(), 2u);
  EXPECT_EQ(m.pairs[0], std::make_pair(int64_t{2}, int64_t{0}));
  EXPECT_EQ(m.pairs[1], std::make_pair(int64_t{0}, int64_t{1}));
}

TEST(MatchingCost, MatchIsPermutationInvariant) {
  // Shuffling predictions permutes the matched query ids but not the cost.
  auto gen = at::make_generator<at::CPUGeneratorImpl>(9);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto logits = torch::randn({10, 3}, gen, opts);
  auto boxes = torch::rand({10, 4}, gen, opts) * 0.4 + 0.1;
  auto gt_boxes = torch::rand({4, 4}, gen, opts) * 0.4 + 0.1;
  auto labels = torch::tensor({0, 2, 1, 2}, torch::kLong);
  auto perm = torch::randperm(10, gen, torch::kLong);
  auto a = hungarian_match(logits, boxes, labels, gt_boxes);
  auto b = hungarian_match(logits.index_select(0, perm), boxes.index_select(0, perm), labels,
                           gt_boxes);
  EXPECT_NEAR(a.total_cost, b.total_cost, 1e-12);
  for (size_t i = 0; i < a.pairs.size(); ++i)
    EXPECT_EQ(perm[b.pairs[i].first].item<int64_t>(), a.pairs[i].first);
}
