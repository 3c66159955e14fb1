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
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptdet/geometry.h"
#include "promptdet/image_io.h"

namespace promptdet {

enum class FrequencyBucket { kFrequent, kCommon, kRare };
std::string to_string(FrequencyBucket bucket);
FrequencyBucket bucket_from_string(const std::string& s);

struct Category {
  int64_t id = 0;
  std::string name;
  FrequencyBucket bucket = FrequencyBucket::kCommon;
};

class CategoryTable {
 public:
  CategoryTable() = default;
  explicit CategoryTable(std::vector<Category> items);

  const std::vector<Category>& items() const { return items_; }
  size_t size() const { return items_.size(); }
  bool contains(int64_t id) const { return index_.count(id) > 0; }
  const Category& at(int64_t id) const;
  std::optional<int64_t> find_name(const std::string& name) const;
  std::vector<std::string> names() const;

  bool operator==(const CategoryTable& other) const;

 private:
  std::vector<Category> items_;
  std::map<int64_t, size_t> index_;
};

struct Annotation {
  int64_t id = 0;
  int64_t category_id = 0;
  NormalizedBox box;

  bool operator==(const Annotation&) const = default;
};

struct DatasetRecord {
  int64_t id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
  std::vector<Annotation> annotations;

  bool operator==(const DatasetRecord&) const = default;
  std::vector<int64_t> present_categories() const;
};

struct Dataset {
  std::vector<DatasetRecord> records;
  CategoryTable categories;
  std::string image_root;  // directory file_name is relative to
  nlohmann::json info = nlohmann::json::object();

  std::string image_path(const DatasetRecord& record) const;
  // Instances per category id.
  std::map<int64_t, int64_t> category_counts() const;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// COCO-style document: images, annotations (pixel [x, y, w, h] bboxes) and
// categories with a frequency bucket.
nlohmann::json dataset_to_json(const Dataset& dataset);
Dataset dataset_from_json(const nlohmann::json& doc, const std::string& image_root = {});
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// Assigns frequent/common/rare by terciles of instance counts (ties broken by id).
CategoryTable assign_buckets(const std::vector<Category>& categories,
                             const std::map<int64_t, int64_t>& counts);

// Visual attributes of a synthetic category.
struct ShapeStyle {
  std::string shape;   // circle, square, triangle, star, diamond, hexagon, cross, ring
  std::array<uint8_t, 3> color{};
  std::string color_name;
  bool striped = false;

  std::string name() const;
};

// The fixed style catalogue; the first n entries form an n-category corpus.
const std::vector<ShapeStyle>& style_catalogue();

struct SyntheticConfig {
  int64_t num_images = 100;
  int64_t num_categories = 8;
  double zipf_exponent = 1.0;
  int image_size = 128;
  int64_t max_objects = 6;     // ordinary scenes draw 1..max_objects instances
  double dense_fraction = 0.0; // share of dense single-target scenes
  int64_t dense_min = 20;
  int64_t dense_max = 60;
  int min_object_px = 14;
  int max_object_px = 34;
  double max_occlusion = 0.5;  // fraction of an object that may be hidden
  uint64_t seed = 0;
};

struct RenderedScene {
  Image image;
  std::vector<Annotation> annotations;  // ids are local (0-based)
};

// Renders one scene. dense_target >= 0 requests a dense scene of that
// category with dense_count instances.
RenderedScene render_scene(const SyntheticConfig& config, const std::vector<double>& category_probs,
                           std::mt19937_64& rng, int64_t dense_target = -1,
                           int64_t dense_count = 0);

std::vector<double> zipf_probabilities(int64_t n, double exponent);

// Renders config.num_images scenes, writes PNGs under image_dir (relative
// file names prefixed with split) and returns the records. Buckets are left
// at kCommon; assign with assign_buckets.
Dataset generate_synthetic_split(const SyntheticConfig& config, const std::string& root,
                                 const std::string& split);

struct CorpusPaths {
  std::string train;
  std::string test;
  std::string counting;
};

// train / test / counting splits with buckets from training frequency.
struct CorpusConfig {
  SyntheticConfig train;
  SyntheticConfig test;
  SyntheticConfig counting;
};
CorpusConfig default_corpus_config(uint64_t seed);
CorpusPaths generate_corpus(const CorpusConfig& config, const std::string& out_dir);

}  // namespace promptdet
