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
#include "promptdet/box_decoder.h"
#include "promptdet/model.h"

using namespace promptdet;
using promptdet::testing::tiny_config;

TEST(Refinement, ZeroOffsetsKeepAnchors) {
  auto anchors = torch::tensor({0.3, 0.6, 0.2, 0.1}, torch::kFloat64).view({1, 1, 4});
  auto out = refine_anchors(anchors, torch::zeros_like(anchors));
  EXPECT_TRUE(torch::allclose(out, anchors, 1e-12, 1e-12));
}

TEST(Refinement, OffsetsActInLogitSpace) {
  auto anchors = torch::tensor({0.5, 0.2, 0.1, 0.4}, torch::kFloat64).view({1, 4});
  auto offsets = torch::tensor({1.0, -0.5, 0.3, 2.0}, torch::kFloat64).view({1, 4});
  auto out = refine_anchors(anchors, offsets);
  for (int k = 0; k < 4; ++k) {
    const double a = anchors[0][k].item<double>();
    const double expected = from_logit(std::log(a / (1 - a)) + offsets[0][k].item<double>());
    EXPECT_NEAR(out[0][k].item<double>(), expected, 1e-12);
  }
  // Saturated anchors stay finite and inside (0, 1).
  auto edge = refine_anchors(torch::tensor({0.0, 1.0, 0.0, 1.0}, torch::kFloat64), torch::zeros({4}, torch::kFloat64));
  EXPECT_TRUE(((edge > 0) & (edge < 1)).all().item<bool>());
}

TEST(Classification, DotProductPlusBias) {
  torch::manual_seed(0);
  BoxDecoder dec(tiny_config());
  auto hidden = torch::randn({1, 3, 32});
  auto prompts = torch::randn({1, 2, 32});
  auto logits = dec->class_logits(hidden, prompts);
  ASSERT_EQ(logits.sizes(), (torch::IntArrayRef{1, 3, 2}));
  const double bias = dec->class_bias.item<double>();
  EXPECT_NEAR(bias, -std::log(99.0), 1e-6);
  EXPECT_NEAR(logits[0][2][1].item<double>(), hidden[0][2].dot(prompts[0][1]).item<double>() + bias, 1e-4);
}

TEST(Postprocess, ThresholdSortAndCap) {
  DetectionSet set;
  set.boxes = torch::tensor({0.5, 0.5, 0.1, 0.1, 0.2, 0.2, 0.1, 0.1, 0.8, 0.8, 0.1, 0.1}).view({3, 4});
  // Scores sigmoid(z): class 0 = {0.88, 0.27, 0.5}, class 1 = {0.05, 0.95, 0.73}.
  set.logits = torch::tensor({2.0, -1.0, 0.0, -3.0, 3.0, 1.0}).view({2, 3});
  set.labels = {"a", "b"};
  auto dets = postprocess(set, 0.5);
  ASSERT_EQ(dets.size(), 4u);
  EXPECT_EQ(dets[0].label, "b");
  EXPECT_EQ(dets[0].query_index, 1);
  EXPECT_EQ(dets[1].label, "a");
  EXPECT_EQ(dets[1].query_index, 0);
  for (size_t i = 1; i < dets.size(); ++i) EXPECT_GE(dets[i - 1].score, dets[i].score);
  EXPECT_NEAR(dets[1].box.cx, 0.5, 1e-7);
  EXPECT_EQ(postprocess(set, 0.5, 2).size(), 2u);
  EXPECT_EQ(postprocess(set, 0.0).size(), 6u);
  EXPECT_TRUE(postprocess(set, 0.99).empty());
}

TEST(Postprocess, SaturatedScoresStayBelowOne) {
  DetectionSet set;
  set.boxes = torch::tensor({0.5, 0.5, 0.1, 0.1}).view({1, 4});
  set.logits = torch::tensor({80.0}).view({1, 1});
  auto dets = postprocess(set, 0.5);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_LT(dets[0].score, 1.0);
}

class DecoderTest : public ::testing::Test {
 protected:
  void SetUp() override {
    torch::manual_seed(7);
    model = DetectorModel(tiny_config());
    model->eval();
    torch::NoGradGuard ng;
    features = model->encode_image(torch::randn({1, 3, 64, 64}));
  }
  DetectorModel model{nullptr};
  MultiScaleFeatures features;
};

TEST_F(DecoderTest, SelectionClampsToTokenCount) {
  torch::NoGradGuard ng;
  // 64x64 input gives 8x8 + 4x4 + 2x2 = 84 tokens; ask for more queries than that.
  auto c = tiny_config();
  c.num_queries = 200;
  c.select_k = 200;
  torch::manual_seed(7);
  DetectorModel big(c);
  big->eval();
  auto feats = big->encode_image(torch::randn({1, 3, 64, 64}));
  auto prompts = torch::randn({1, 2, 32});
  auto sel = big->decoder->select(feats, prompts, torch::zeros({1, 2}, torch::kBool));
  EXPECT_EQ(sel.indices.size(1), 84);
  auto sorted = std::get<0>(sel.indices.sort(-1));
  EXPECT_TRUE(torch::equal(sorted[0], torch::arange(84)));
}

TEST_F(DecoderTest, SelectionIgnoresPaddedPrompts) {
  torch::NoGradGuard ng;
  auto p = torch::randn({1, 1, 32});
  auto junk = torch::randn({1, 1, 32}) * 50.0;
  auto alone = model->decoder->select(features, p, torch::zeros({1, 1}, torch::kBool));
  auto padded = model->decoder->select(features, torch::cat({p, junk}, 1),
                                       torch::tensor({false, true}).view({1, 2}));
  EXPECT_TRUE(torch::equal(alone.indices, padded.indices));
}

TEST_F(DecoderTest, DetectShapesAndBoxRange) {
  torch::NoGradGuard ng;
  auto prompts = model->encode_text({"red circle", "blue square", "green triangle"}).unsqueeze(0);
  auto out = model->detect(features, prompts, torch::zeros({1, 3}, torch::kBool));
  ASSERT_EQ(out.layer_logits.size(), 2u);
  EXPECT_EQ(out.layer_logits.back().sizes(), (torch::IntArrayRef{1, 20, 3}));
  for (const auto& b : out.decoded.boxes) {
    EXPECT_EQ(b.sizes(), (torch::IntArrayRef{1, 20, 4}));
    EXPECT_TRUE(((b > 0) & (b < 1)).all().item<bool>());
  }
  // Selected anchors sit on token centers.
  auto centers = features.token_centers().index_select(0, out.selection.indices[0]);
  EXPECT_TRUE(torch::allclose(out.decoded.initial_anchors[0].narrow(1, 0, 2), centers));
}

TEST_F(DecoderTest, PromptOrderPermutesLogits) {
  torch::NoGradGuard ng;
  auto prompts = model->encode_text({"red circle", "blue square"}).unsqueeze(0);
  auto swapped = prompts.index_select(1, torch::tensor({1, 0}));
  auto none = torch::zeros({1, 2}, torch::kBool);
  auto a = model->detect(features, prompts, none).layer_logits.back();
  auto b = model->detect(features, swapped, none).layer_logits.back();
  EXPECT_TRUE(torch::allclose(a.index_select(2, torch::tensor({1, 0})), b, 1e-5, 1e-6));
}
