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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptdet/dataset.h"
#include "promptdet/geometry.h"
#include "promptdet/prompt_encoders.h"
#include "promptdet/workflows.h"

namespace promptdet {

struct Prediction {
  int64_t image_id = 0;
  int64_t category_id = 0;
  NormalizedBox box;
  double score = 0.0;
};

inline constexpr int64_t kMaxDetections = 100;

// 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

struct ApSummary {
  double ap = 0.0;    // mean over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
  // Bucket means of per-category AP; -1 when the bucket has no evaluated category.
  double ap_f = -1.0;
  double ap_c = -1.0;
  double ap_r = -1.0;
  std::map<int64_t, double> per_category;       // AP@[.5:.95]
  std::map<int64_t, double> per_category_ap50;

  nlohmann::json to_json() const;
  std::string table(const CategoryTable& categories) const;
};

// Single-category average precision at one IoU threshold: greedy matching
// in descending score order, 101-point interpolated precision.
// `predictions` and `truth` are per image (same length).
double average_precision(const std::vector<std::vector<std::pair<NormalizedBox, double>>>& predictions,
                         const std::vector<std::vector<NormalizedBox>>& truth,
                         double iou_threshold, int64_t max_detections = kMaxDetections);

// COCO-style AP over every category with at least one ground-truth instance.
ApSummary evaluate_ap(const std::vector<Prediction>& predictions, const Dataset& ground_truth,
                      int64_t max_detections = kMaxDetections);

// Mean absolute error; throws ValidationError on a length mismatch.
double evaluate_mae(const std::vector<double>& predicted, const std::vector<double>& truth);

struct ProtocolOptions {
  uint64_t seed = 0;
  double score_threshold = 0.0;  // detection protocols keep everything down to this score
  int64_t max_detections = kMaxDetections;
};

// Every category name as a text prompt on every image.
ApSummary protocol_text(Engine& engine, const Dataset& test, const ProtocolOptions& options = {});

// Per image and present category, one random ground-truth box (or its center).
ApSummary protocol_visual_i(Engine& engine, const Dataset& test, PromptKind kind,
                            const ProtocolOptions& options = {});

inline constexpr int64_t kDefaultGenericExamples = 16;

struct VisualGResult {
  ApSummary summary;
  EmbeddingLibrary library;
  std::vector<std::string> skipped;  // categories without training instances
};

// Per category, up to n training images each contribute one random box; the
// averaged embedding is sampled once and applied to every test image. For a
// fixed seed the examples for n are a prefix of those for any larger n.
VisualGResult protocol_visual_g(Engine& engine, const Dataset& train, const Dataset& test,
                                int64_t n_examples = kDefaultGenericExamples,
                                const ProtocolOptions& options = {});

struct RegionAccuracy {
  double top1 = 0.0;
  double top5 = 0.0;
  int64_t total = 0;
};

RegionAccuracy protocol_region_cls(Engine& engine, const Dataset& test);

struct CountResult {
  double mae = 0.0;
  std::vector<double> predicted;
  std::vector<double> truth;
};

// Target = the most frequent category of each image; three random instances
// of it are the exemplars.
CountResult protocol_count(Engine& engine, const Dataset& counting, double threshold,
                           uint64_t seed = 0, int64_t exemplars = kCountingExemplars);

struct CountCalibration {
  double threshold = 0.5;
  double mae = 0.0;
  std::map<double, double> mae_by_threshold;
  int64_t scenes = 0;
};

// Picks the grid threshold with the lowest count MAE over the dense scenes of
// a labelled split: records whose most frequent category has at least
// min_instances instances. Ties go to the smaller threshold.
CountCalibration calibrate_count_threshold(Engine& engine, const Dataset& split,
                                           const std::vector<double>& grid,
                                           int64_t min_instances = 20, int64_t max_scenes = 100,
                                           uint64_t seed = 0,
                                           int64_t exemplars = kCountingExemplars);

}  // namespace promptdet
