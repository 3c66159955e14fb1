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
#include "promptdet/workflows.h"

using namespace promptdet;
using promptdet::testing::TempDir;
using promptdet::testing::tiny_config;

namespace {

Image test_image(int w, int h, uint8_t shade) {
  Image img = Image::filled(w, h, shade, 90, 200 - shade);
  for (int y = h / 4; y < h / 2; ++y)
    for (int x = w / 4; x < w / 2; ++x) img.pixel(x, y)[0] = 250;
  return img;
}

VisualPromptSet box_set(std::string label, std::vector<NormalizedBox> boxes) {
  VisualPromptSet s;
  s.label = std::move(label);
  s.boxes = std::move(boxes);
  return s;
}

class WorkflowTest : public ::testing::Test {
 protected:
  void SetUp() override {
    torch::manual_seed(11);
    engine = std::make_unique<Engine>(DetectorModel(tiny_config()), "abc");
    a = engine->encode(test_image(64, 64, 40));
    b = engine->encode(test_image(64, 64, 160));
  }
  std::unique_ptr<Engine> engine;
  std::shared_ptr<ImageSession> a, b;
};

}  // namespace

TEST_F(WorkflowTest, SessionsGetDistinctIdsAndCountForwards) {
  EXPECT_NE(a->id, b->id);
  EXPECT_EQ(engine->backbone_forwards(), 2);
  EXPECT_GT(a->encode_ms, 0.0);
  EXPECT_EQ(engine->checkpoint_hash(), "abc");
  workflow_text(*engine, *a, {"red circle"}, 0.0);
  EXPECT_EQ(engine->backbone_forwards(), 2);
}

TEST_F(WorkflowTest, OddSizedImagesAreResized) {
  auto s = engine->encode(test_image(70, 50, 90));
  EXPECT_EQ(s->width, 70);
  EXPECT_EQ(s->height, 50);
  const auto& shapes = s->features.shapes;
  EXPECT_EQ(shapes.back()[0] * 32, 64);
  EXPECT_EQ(shapes.back()[1] * 32, 64);
  EXPECT_THROW(engine->encode(Image{}), ValidationError);
}

TEST_F(WorkflowTest, TextDedupesNamesAndIsDeterministic) {
  auto r1 = workflow_text(*engine, *a, {"red circle", "blue square", "red circle"}, 0.0);
  auto r2 = workflow_text(*engine, *a, {"red circle", "blue square"}, 0.0);
  EXPECT_EQ(r1.labels, (std::vector<std::string>{"red circle", "blue square"}));
  EXPECT_TRUE(torch::equal(r1.logits, r2.logits));
  EXPECT_EQ(r1.logits.sizes(), (torch::IntArrayRef{2, 20}));
  EXPECT_EQ(r1.detections.size(), 40u);
  EXPECT_THROW(workflow_text(*engine, *a, {}, 0.0), ValidationError);
}

TEST_F(WorkflowTest, InteractiveAveragesSetsSharingALabel) {
  auto s1 = box_set("dog", {{0.3, 0.3, 0.2, 0.2}});
  auto s2 = box_set("dog", {{0.6, 0.6, 0.3, 0.2}});
  auto rows = engine->visual_embeddings(*a, {s1, s2});
  auto merged = make_embedding(rows.mean(0), EmbeddingKind::kVisual, "dog").vector;
  auto r = workflow_interactive(*engine, *a, {s1, s2}, 0.0);
  ASSERT_EQ(r.labels, std::vector<std::string>{"dog"});
  auto direct = engine->detect(*a, merged.unsqueeze(0), {"dog"}, 0.0);
  EXPECT_TRUE(torch::equal(r.logits, direct.logits));
}

TEST_F(WorkflowTest, GenericOfOneEqualsThatExample) {
  auto s = box_set("cat", {{0.4, 0.4, 0.3, 0.3}});
  auto entry = build_generic_embedding(*engine, {{a.get(), s}}, "cat");
  auto single = engine->visual_embeddings(*a, {s})[0];
  EXPECT_TRUE(torch::allclose(entry.embedding.vector, single, 0.0, 1e-6));
  EXPECT_EQ(entry.count, 1);
  EXPECT_EQ(entry.sources, std::vector<std::string>{a->id});
}

TEST_F(WorkflowTest, GenericOfDuplicatesEqualsSingle) {
  auto s = box_set("cat", {{0.4, 0.4, 0.3, 0.3}});
  auto once = build_generic_embedding(*engine, {{a.get(), s}}, "cat");
  auto thrice = build_generic_embedding(*engine, {{a.get(), s}, {a.get(), s}, {a.get(), s}}, "cat");
  EXPECT_LE((once.embedding.vector - thrice.embedding.vector).abs().max().item<double>(), 1e-6);
}

TEST_F(WorkflowTest, GenericIsNormalizedMeanAcrossImages) {
  auto s = box_set("cat", {{0.4, 0.4, 0.3, 0.3}});
  auto va = engine->visual_embeddings(*a, {s})[0].to(torch::kFloat64);
  auto vb = engine->visual_embeddings(*b, {s})[0].to(torch::kFloat64);
  auto expected = (va + vb) / (va + vb).norm();
  auto entry = build_generic_embedding(*engine, {{a.get(), s}, {b.get(), s}}, "cat");
  EXPECT_TRUE(torch::allclose(entry.embedding.vector.to(torch::kFloat64), expected, 0.0, 1e-6));
  EXPECT_THROW(build_generic_embedding(*engine, {{a.get(), box_set("dog", s.boxes)}}, "cat"),
               ValidationError);
  EXPECT_THROW(build_generic_embedding(*engine, {}, "cat"), ValidationError);
}

TEST_F(WorkflowTest, MixedWithOwnTextIsBitwiseText) {
  const std::vector<std::string> names = {"red circle", "blue square"};
  auto text = engine->text_embeddings(names);
  std::vector<MixedPrompt> pairs;
  for (int i = 0; i < 2; ++i)
    pairs.push_back({names[i], {text[i].clone(), EmbeddingKind::kVisual, names[i]}});
  auto mixed = workflow_mixed(*engine, *a, pairs, 0.0);
  auto plain = workflow_text(*engine, *a, names, 0.0);
  EXPECT_TRUE(torch::equal(mixed.logits, plain.logits));
  EXPECT_TRUE(torch::equal(mixed.boxes, plain.boxes));
}

TEST_F(WorkflowTest, GenericUsesLibrarySubset) {
  EmbeddingLibrary lib;
  EXPECT_THROW(workflow_generic(*engine, *b, lib, 0.0), ValidationError);
  lib.add(build_generic_embedding(*engine, {{a.get(), box_set("x", {{0.3, 0.3, 0.2, 0.2}})}}, "x"));
  lib.add(build_generic_embedding(*engine, {{a.get(), box_set("y", {{0.7, 0.7, 0.2, 0.2}})}}, "y"));
  auto all = workflow_generic(*engine, *b, lib, 0.0);
  auto just_y = workflow_generic(*engine, *b, lib, 0.0, {"y"});
  EXPECT_EQ(all.labels.size(), 2u);
  EXPECT_EQ(just_y.labels, std::vector<std::string>{"y"});
  EXPECT_THROW(workflow_generic(*engine, *b, lib, 0.0, {"z"}), NotFoundError);
}

TEST_F(WorkflowTest, RegionClassificationIsSoftmaxOverCandidates) {
  auto region = box_set("", {{0.4, 0.4, 0.3, 0.3}});
  const std::vector<std::string> cands = {"red circle", "blue square", "green triangle"};
  auto r = classify_region(*engine, *a, region, cands);
  ASSERT_EQ(r.probabilities.size(), 3u);
  double sum = 0.0;
  for (double p : r.probabilities) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  auto v = engine->visual_embeddings(*a, {region})[0];
  auto t = engine->text_embeddings(cands);
  const auto best = torch::matmul(t, v).argmax().item<int64_t>();
  EXPECT_EQ(r.index, best);
  EXPECT_EQ(r.label, cands[best]);
  EXPECT_THROW(classify_region(*engine, *a, region, {"one"}), ValidationError);
  auto two = box_set("", {{0.4, 0.4, 0.3, 0.3}, {0.1, 0.1, 0.1, 0.1}});
  EXPECT_THROW(classify_region(*engine, *a, two, cands), ValidationError);
}

TEST_F(WorkflowTest, CountingNeedsThreeExemplars) {
  auto two = box_set("", {{0.3, 0.3, 0.1, 0.1}, {0.6, 0.6, 0.1, 0.1}});
  EXPECT_THROW(count_objects(*engine, *a, two, 0.5), ValidationError);
  auto three = two;
  three.boxes.push_back({0.8, 0.2, 0.1, 0.1});
  const auto n = count_objects(*engine, *a, three, 0.0);
  EXPECT_EQ(n, 20);
  EXPECT_EQ(count_objects(*engine, *a, two, 0.0, 0), 20);
}

TEST(Library, CrudAndRoundTrip) {
  EmbeddingLibrary lib;
  LibraryEntry e{make_embedding(torch::tensor({0.6f, 0.8f}), EmbeddingKind::kVisual, "k"), {"s0"}, 1};
  lib.add(e);
  EXPECT_THROW(lib.add(e), ConflictError);
  lib.add(e, true);
  EXPECT_THROW(lib.get("nope"), NotFoundError);
  TempDir dir("lib");
  lib.save(dir / "lib.json");
  const auto back = EmbeddingLibrary::load(dir / "lib.json");
  EXPECT_TRUE(torch::equal(back.get("k").embedding.vector, e.embedding.vector));
  EXPECT_EQ(back.get("k").sources, e.sources);
  EXPECT_TRUE(lib.remove("k"));
  EXPECT_FALSE(lib.remove("k"));
  EXPECT_THROW(EmbeddingLibrary::from_json({{"format", "other"}}), ValidationError);
  EXPECT_THROW(embedding_from_json({{"label", "x"}, {"vector", {1.0, 2.0}}, {"dim", 3}}),
               ValidationError);
  EXPECT_THROW(embedding_from_json({{"label", "x"}}), ValidationError);
}
