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
#include "promptdet/model.h"
#include "promptdet/prompt_encoders.h"

using namespace promptdet;
using promptdet::testing::tiny_config;

TEST(Tokenizer, WordsOovAndTruncation) {
  Tokenizer tok({"red circle", "blue square", "red square"}, 3);
  EXPECT_EQ(tok.vocab_size(), Tokenizer::kNumSpecial + 4);
  const auto ids = tok.encode("Red  CIRCLE!");
  ASSERT_EQ(ids.size(), 2u);
  EXPECT_EQ(ids[0], Tokenizer::kNumSpecial + 0);
  EXPECT_EQ(ids[1], Tokenizer::kNumSpecial + 1);
  EXPECT_EQ(tok.encode("purple circle")[0], Tokenizer::kOov);
  EXPECT_EQ(tok.encode("red red red red").size(), 3u);
  EXPECT_EQ(tok.encode("").size(), 1u);
  EXPECT_EQ(Tokenizer::split_words("a-photo of_a X1"),
            (std::vector<std::string>{"a", "photo", "of", "a", "x1"}));
}

TEST(Embedding, UnitNormAndIdempotent) {
  auto e = make_embedding(torch::tensor({3.0f, 4.0f}), EmbeddingKind::kVisual, "x");
  EXPECT_NEAR(e.vector.norm().item<double>(), 1.0, 1e-7);
  auto again = make_embedding(e.vector, EmbeddingKind::kVisual, "x");
  EXPECT_TRUE(torch::equal(again.vector, e.vector));
  EXPECT_THROW(make_embedding(torch::zeros({4}), EmbeddingKind::kText, "z"), ValidationError);
}

TEST(Embedding, MixIsNormalizedMean) {
  auto t = make_embedding(torch::tensor({1.0f, 0.0f, 0.0f}), EmbeddingKind::kText, "cat");
  auto v = make_embedding(torch::tensor({0.0f, 1.0f, 0.0f}), EmbeddingKind::kVisual, "cat");
  auto m = mix_embeddings(t, v);
  EXPECT_EQ(m.kind, EmbeddingKind::kMixed);
  EXPECT_EQ(m.label, "cat");
  EXPECT_NEAR(m.vector[0].item<float>(), std::sqrt(0.5), 1e-6);
  EXPECT_NEAR(m.vector[1].item<float>(), std::sqrt(0.5), 1e-6);
}

TEST(Embedding, MixWithItselfIsExact) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(2);
  auto t = make_embedding(torch::randn({64}, gen), EmbeddingKind::kText, "a");
  PromptEmbedding v{t.vector.clone(), EmbeddingKind::kVisual, "a"};
  EXPECT_TRUE(torch::equal(mix_embeddings(t, v).vector, t.vector));
}

TEST(Embedding, MixRejectsBadPairs) {
  auto t = make_embedding(torch::tensor({1.0f, 0.0f}), EmbeddingKind::kText, "a");
  auto anti = make_embedding(torch::tensor({-1.0f, 0.0f}), EmbeddingKind::kVisual, "a");
  EXPECT_THROW(mix_embeddings(t, anti), DegenerateMixError);
  EXPECT_THROW(mix_embeddings(t, t), ValidationError);
  auto other = make_embedding(torch::tensor({1.0f, 0.0f, 0.0f}), EmbeddingKind::kVisual, "a");
  EXPECT_THROW(mix_embeddings(t, other), ValidationError);
}

TEST(PromptSet, ValidationAndPoints) {
  VisualPromptSet s;
  EXPECT_THROW(s.validate(), ValidationError);
  s.boxes = {{0.5, 0.5, 0.2, 0.2}, {0.2, 0.3, 0.1, 0.1}};
  s.validate();
  const auto p = s.as_points();
  EXPECT_EQ(p.kind, PromptKind::kPoint);
  ASSERT_EQ(p.points.size(), 2u);
  EXPECT_EQ(p.points[1], (NormalizedPoint{0.2, 0.3}));
  s.boxes.push_back({0.5, 0.5, 1.5, 0.1});
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_THROW(prompt_kind_from_string("polygon"), ValidationError);
}

TEST(PromptSet, BatchPadding) {
  VisualPromptSet a, b;
  a.boxes = {{0.5, 0.5, 0.2, 0.2}};
  b.boxes = {{0.1, 0.1, 0.1, 0.1}, {0.2, 0.2, 0.1, 0.1}, {0.3, 0.3, 0.1, 0.1}};
  const auto batch = PromptBatch::from_sets({a, b}, {0, 1});
  EXPECT_EQ(batch.coords.sizes(), (torch::IntArrayRef{2, 3, 4}));
  EXPECT_EQ(batch.padding.sum().item<int64_t>(), 2);
  EXPECT_TRUE(batch.padding[0][1].item<bool>());
  EXPECT_FALSE(batch.padding[1][2].item<bool>());
  VisualPromptSet pts;
  pts.kind = PromptKind::kPoint;
  pts.points = {{0.5, 0.5}};
  EXPECT_THROW(PromptBatch::from_sets({a, pts}, {0, 0}), ValidationError);
}

class EncodersTest : public ::testing::Test {
 protected:
  void SetUp() override {
    torch::manual_seed(3);
    model = DetectorModel(tiny_config());
    model->eval();
    torch::NoGradGuard ng;
    features = model->encode_image(torch::randn({2, 3, 64, 64}));
  }
  DetectorModel model{nullptr};
  MultiScaleFeatures features;
};

TEST_F(EncodersTest, TextEmbeddingsAreUnitAndDeterministic) {
  torch::NoGradGuard ng;
  auto e = model->encode_text({"red circle", "blue square", "red circle"});
  EXPECT_EQ(e.sizes(), (torch::IntArrayRef{3, 32}));
  EXPECT_TRUE(torch::allclose(e.norm(2, 1), torch::ones({3}), 1e-5, 1e-6));
  EXPECT_TRUE(torch::equal(e[0], e[2]));
  EXPECT_FALSE(torch::allclose(e[0], e[1]));
}

TEST_F(EncodersTest, VisualEmbeddingIgnoresPadding) {
  torch::NoGradGuard ng;
  VisualPromptSet one, three;
  one.boxes = {{0.4, 0.4, 0.3, 0.3}};
  three.boxes = {{0.2, 0.2, 0.1, 0.1}, {0.7, 0.6, 0.2, 0.2}, {0.5, 0.5, 0.3, 0.2}};
  auto alone = model->encode_visual(PromptBatch::from_sets({one}, {0}), features);
  auto padded = model->encode_visual(PromptBatch::from_sets({one, three}, {0, 1}), features);
  EXPECT_TRUE(torch::allclose(alone[0], padded[0], 1e-5, 1e-6));
  EXPECT_NEAR(padded[1].norm().item<double>(), 1.0, 1e-5);
}

TEST_F(EncodersTest, VisualEmbeddingIsOrderInvariant) {
  torch::NoGradGuard ng;
  VisualPromptSet a, b;
  a.boxes = {{0.2, 0.2, 0.1, 0.1}, {0.7, 0.6, 0.2, 0.2}, {0.5, 0.5, 0.3, 0.2}};
  b.boxes = {a.boxes[2], a.boxes[0], a.boxes[1]};
  auto ea = model->encode_visual(PromptBatch::from_sets({a}, {1}), features);
  auto eb = model->encode_visual(PromptBatch::from_sets({b}, {1}), features);
  EXPECT_TRUE(torch::allclose(ea, eb, 1e-5, 1e-6));
}

TEST_F(EncodersTest, VisualEmbeddingDependsOnImage) {
  torch::NoGradGuard ng;
  VisualPromptSet a;
  a.boxes = {{0.4, 0.4, 0.3, 0.3}};
  auto e = model->encode_visual(PromptBatch::from_sets({a, a}, {0, 1}), features);
  EXPECT_FALSE(torch::allclose(e[0], e[1], 1e-4, 1e-5));
}

TEST_F(EncodersTest, GlobalQueryIsAppendedLast) {
  torch::NoGradGuard ng;
  auto coords = torch::rand({2, 3, 4});
  auto q = model->visual_encoder->build_queries(
      PromptKind::kBox, model->visual_encoder->project_prompt_pe(PromptKind::kBox, coords));
  ASSERT_EQ(q.sizes(), (torch::IntArrayRef{2, 4, 32}));
  // The global slot carries no coordinate information: identical across sets.
  EXPECT_TRUE(torch::allclose(q[0][3], q[1][3]));
  EXPECT_FALSE(torch::allclose(q[0][0], q[1][0]));
}

TEST_F(EncodersTest, BoxAndPointPathsAreDisjoint) {
  VisualPromptSet pts;
  pts.kind = PromptKind::kPoint;
  pts.points = {{0.3, 0.3}, {0.6, 0.7}};
  model->zero_grad();
  model->encode_visual(PromptBatch::from_sets({pts}, {0}), features).sum().backward();
  for (const auto& p : model->visual_encoder->box_path_parameters())
    EXPECT_FALSE(p.grad().defined() && p.grad().abs().sum().item<double>() > 0.0);
  double point_grad = 0.0;
  for (const auto& p : model->visual_encoder->point_path_parameters())
    if (p.grad().defined()) point_grad += p.grad().abs().sum().item<double>();
  EXPECT_GT(point_grad, 0.0);
}
