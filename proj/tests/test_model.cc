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
#include "promptdet/config.h"
#include "promptdet/image_io.h"
#include "promptdet/model.h"

using namespace promptdet;
using promptdet::testing::TempDir;
using promptdet::testing::tiny_config;

TEST(Config, DefaultsAndValidation) {
  ModelConfig c;
  EXPECT_EQ(c.dim, 64);
  EXPECT_EQ(c.num_queries, 100);
  EXPECT_EQ(c.coarsest_stride(), 32);
  c.validate();
  auto bad = c;
  bad.dim = 62;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.select_k = 50;
  EXPECT_THROW(bad.validate(), ConfigError);
  const auto big = ModelConfig::full_scale();
  EXPECT_EQ(big.num_queries, 900);
  EXPECT_EQ(big.dec_layers, 6);
  big.validate();
}

TEST(Config, OverridesAndRoundTrip) {
  RunConfig rc;
  rc.apply_override("train.lr=0.002");
  rc.apply_override("model.dec_layers=4");
  rc.apply_override("data.train=some/path.json");
  rc.apply_override("train.use_align=false");
  EXPECT_DOUBLE_EQ(rc.train.lr, 0.002);
  EXPECT_EQ(rc.model.dec_layers, 4);
  EXPECT_EQ(rc.data.train, "some/path.json");
  EXPECT_FALSE(rc.train.use_align);
  EXPECT_THROW(rc.apply_override("train.nope=1"), ConfigError);
  EXPECT_THROW(rc.apply_override("train.lr"), ConfigError);
  EXPECT_THROW(rc.apply_override("train.lr=fast"), ConfigError);
  TempDir dir("cfg");
  save_run_config(rc, dir / "c.json");
  const auto back = load_run_config(dir / "c.json");
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(rc));
  EXPECT_THROW(load_run_config(dir / "missing.json"), ConfigError);
}

TEST(Config, PartialDocumentsKeepDefaults) {
  const auto rc = nlohmann::json{{"train", {{"batch_size", 2}}}}.get<RunConfig>();
  EXPECT_EQ(rc.train.batch_size, 2);
  EXPECT_DOUBLE_EQ(rc.train.lr, TrainConfig{}.lr);
  EXPECT_EQ(rc.model.dim, 64);
}

TEST(Checkpoint, RoundTripReproducesOutputs) {
  torch::manual_seed(4);
  DetectorModel model(tiny_config());
  model->eval();
  TempDir dir("ckpt");
  save_checkpoint(model, dir / "m.pt", {{"note", "x"}});
  nlohmann::json extra;
  auto loaded = load_checkpoint(dir / "m.pt", &extra);
  loaded->eval();
  EXPECT_EQ(extra["note"], "x");
  EXPECT_EQ(nlohmann::json(loaded->config()), nlohmann::json(model->config()));
  torch::NoGradGuard ng;
  auto x = torch::randn({1, 3, 64, 64});
  auto fa = model->encode_image(x);
  auto fb = loaded->encode_image(x);
  EXPECT_TRUE(torch::equal(fa.flat, fb.flat));
  EXPECT_TRUE(torch::equal(model->encode_text({"red circle"}), loaded->encode_text({"red circle"})));
  EXPECT_EQ(file_sha256(dir / "m.pt"), file_sha256(dir / "m.pt"));
  EXPECT_EQ(file_sha256(dir / "m.pt").size(), 64u);
  EXPECT_THROW(load_checkpoint(dir / "none.pt"), std::runtime_error);
}

TEST(Model, ParameterGroupsPartition) {
  DetectorModel model(tiny_config());
  const auto slow = model->slow_parameters();
  const auto fast = model->fast_parameters();
  std::set<const void*> s, f;
  for (const auto& p : slow) s.insert(p.data_ptr());
  for (const auto& p : fast) f.insert(p.data_ptr());
  for (const auto* p : s) EXPECT_EQ(f.count(p), 0u);
  EXPECT_EQ(s.size() + f.size(), model->parameters().size());
  for (const auto& p : model->backbone->parameters()) EXPECT_EQ(s.count(p.data_ptr()), 1u);
  for (const auto& p : model->text_encoder->parameters()) EXPECT_EQ(s.count(p.data_ptr()), 1u);
  for (const auto& p : model->decoder->parameters()) EXPECT_EQ(f.count(p.data_ptr()), 1u);
}

TEST(ImageIo, PngAndPpmRoundTrip) {
  Image img = Image::filled(5, 3, 10, 20, 30);
  img.pixel(4, 2)[1] = 255;
  const Image back = decode_image(encode_png(img));
  EXPECT_EQ(back.width, 5);
  EXPECT_EQ(back.rgb, img.rgb);
  std::string ppm = "P6\n5 3\n255\n";
  ppm.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  EXPECT_EQ(decode_image(ppm).rgb, img.rgb);
  EXPECT_THROW(decode_image("not an image"), ImageDecodeError);
  EXPECT_THROW(decode_image(encode_png(img).substr(0, 30)), ImageDecodeError);
  auto t = image_to_tensor(img);
  EXPECT_EQ(t.sizes(), (torch::IntArrayRef{3, 3, 5}));
  EXPECT_FLOAT_EQ(t[1][2][4].item<float>(), (1.0f - 0.5f) / 0.25f);
}
