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

#include "promptdet/evaluation.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "promptdet/errors.h"

namespace promptdet {

std::vector<double> coco_iou_thresholds() {
  std::vector<double> out;
  for (int i = 0; i < 10; ++i) out.push_back(0.5 + 0.05 * i);
  return out;
}

nlohmann::json ApSummary::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, v] : per_category)
    per[std::to_string(id)] = {{"ap", v}, {"ap50", per_category_ap50.at(id)}};
  return {{"ap", ap},     {"ap50", ap50},  {"ap75", ap75},
          {"ap_f", ap_f}, {"ap_c", ap_c},  {"ap_r", ap_r},
          {"per_category", per}};
}

std::string ApSummary::table(const CategoryTable& categories) const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << "AP " << ap << "  AP50 " << ap50 << "  AP75 " << ap75 << "  APf " << ap_f << "  APc "
      << ap_c << "  APr " << ap_r << "\n";
  for (const auto& [id, v] : per_category) {
    const std::string name = categories.contains(id) ? categories.at(id).name : std::to_string(id);
    const std::string bucket =
        categories.contains(id) ? to_string(categories.at(id).bucket) : std::string("?");
    out << "  " << std::left << std::setw(22) << name << " [" << bucket << "]  AP " << v
        << "  AP50 " << per_category_ap50.at(id) << "\n";
  }
  return out.str();
}

double average_precision(const std::vector<std::vector<std::pair<NormalizedBox, double>>>& predictions,
                         const std::vector<std::vector<NormalizedBox>>& truth,
                         double iou_threshold, int64_t max_detections) {
  if (predictions.size() != truth.size())
    throw ValidationError("predictions and ground truth cover different images");
  int64_t total_gt = 0;
  for (const auto& t : truth) total_gt += static_cast<int64_t>(t.size());
  if (total_gt == 0) return -1.0;

  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> all;
  for (size_t img = 0; img < predictions.size(); ++img) {
    std::vector<size_t> order(predictions[img].size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return predictions[img][a].second > predictions[img][b].second;
    });
    if (max_detections > 0 && static_cast<int64_t>(order.size()) > max_detections)
      order.resize(static_cast<size_t>(max_detections));
    std::vector<bool> taken(truth[img].size(), false);
    for (size_t d : order) {
      const auto& box = predictions[img][d].first;
      double best = std::min(iou_threshold, 1.0 - 1e-10);
      int64_t match = -1;
      for (size_t g = 0; g < truth[img].size(); ++g) {
        if (taken[g]) continue;
        const double v = iou(box, truth[img][g]);
        if (v < best) continue;
        best = v;
        match = static_cast<int64_t>(g);
      }
      if (match >= 0) taken[static_cast<size_t>(match)] = true;
      all.push_back({predictions[img][d].second, match >= 0});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<double> recall, precision;
  double tp = 0.0, fp = 0.0;
  for (const auto& s : all) {
    (s.tp ? tp : fp) += 1.0;
    recall.push_back(tp / static_cast<double>(total_gt));
    precision.push_back(tp / (tp + fp));
  }
  for (size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double threshold = r / 100.0;
    auto it = std::lower_bound(recall.begin(), recall.end(), threshold);
    if (it != recall.end()) sum += precision[static_cast<size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

ApSummary evaluate_ap(const std::vector<Prediction>& predictions, const Dataset& ground_truth,
                      int64_t max_detections) {
  std::map<int64_t, size_t> image_index;
  for (size_t i = 0; i < ground_truth.records.size(); ++i)
    image_index[ground_truth.records[i].id] = i;
  const size_t n_images = ground_truth.records.size();

  std::map<int64_t, std::vector<std::vector<NormalizedBox>>> truth;
  for (size_t i = 0; i < n_images; ++i) {
    for (const auto& a : ground_truth.records[i].annotations) {
      auto& per_image = truth[a.category_id];
      if (per_image.empty()) per_image.resize(n_images);
      per_image[i].push_back(a.box);
    }
  }
  std::map<int64_t, std::vector<std::vector<std::pair<NormalizedBox, double>>>> preds;
  for (const auto& p : predictions) {
    auto it = image_index.find(p.image_id);
    if (it == image_index.end() || !truth.count(p.category_id)) continue;
    auto& per_image = preds[p.category_id];
    if (per_image.empty()) per_image.resize(n_images);
    per_image[it->second].emplace_back(p.box, p.score);
  }

  ApSummary out;
  const auto thresholds = coco_iou_thresholds();
  std::map<FrequencyBucket, std::vector<double>> buckets;
  double sum = 0.0, sum50 = 0.0, sum75 = 0.0;
  for (const auto& [category, gt] : truth) {
    auto& pr = preds[category];
    if (pr.empty()) pr.resize(n_images);
    double acc = 0.0;
    for (size_t t = 0; t < thresholds.size(); ++t) {
      const double v = average_precision(pr, gt, thresholds[t], max_detections);
      acc += v;
      if (t == 0) out.per_category_ap50[category] = v;
      if (t == 5) sum75 += v;
    }
    const double ap = acc / static_cast<double>(thresholds.size());
    out.per_category[category] = ap;
    sum += ap;
    sum50 += out.per_category_ap50[category];
    if (ground_truth.categories.contains(category))
      buckets[ground_truth.categories.at(category).bucket].push_back(ap);
  }
  const double n = static_cast<double>(truth.size());
  if (n > 0) {
    out.ap = sum / n;
    out.ap50 = sum50 / n;
    out.ap75 = sum75 / n;
  }
  auto mean = [](const std::vector<double>& v) {
    return v.empty() ? -1.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  out.ap_f = mean(buckets[FrequencyBucket::kFrequent]);
  out.ap_c = mean(buckets[FrequencyBucket::kCommon]);
  out.ap_r = mean(buckets[FrequencyBucket::kRare]);
  return out;
}

double evaluate_mae(const std::vector<double>& predicted, const std::vector<double>& truth) {
  if (predicted.size() != truth.size())
    throw ValidationError("predicted and ground-truth counts differ in length", "counts");
  if (predicted.empty()) return 0.0;
  double sum = 0.0;
  for (size_t i = 0; i < predicted.size(); ++i) sum += std::abs(predicted[i] - truth[i]);
  return sum / static_cast<double>(predicted.size());
}

namespace {

std::shared_ptr<ImageSession> open_record(Engine& engine, const Dataset& dataset,
                                          const DatasetRecord& record) {
  return engine.encode(read_image(dataset.image_path(record)), std::to_string(record.id));
}

void collect(const DetectionResult& result, const std::vector<int64_t>& class_ids,
             int64_t image_id, const ProtocolOptions& options, std::vector<Prediction>& out) {
  auto dets = postprocess({result.boxes, result.logits, result.labels}, options.score_threshold,
                          options.max_detections);
  for (const auto& d : dets) out.push_back({image_id, class_ids[d.class_index], d.box, d.score});
}

std::map<int64_t, std::vector<NormalizedBox>> boxes_by_category(const DatasetRecord& record) {
  std::map<int64_t, std::vector<NormalizedBox>> out;
  for (const auto& a : record.annotations) out[a.category_id].push_back(a.box);
  return out;
}

}  // namespace

ApSummary protocol_text(Engine& engine, const Dataset& test, const ProtocolOptions& options) {
  std::vector<std::string> names;
  std::vector<int64_t> ids;
  for (const auto& c : test.categories.items()) {
    names.push_back(c.name);
    ids.push_back(c.id);
  }
  std::vector<Prediction> preds;
  for (const auto& record : test.records) {
    auto session = open_record(engine, test, record);
    collect(workflow_text(engine, *session, names, 1.0), ids, record.id, options, preds);
  }
  return evaluate_ap(preds, test, options.max_detections);
}

ApSummary protocol_visual_i(Engine& engine, const Dataset& test, PromptKind kind,
                            const ProtocolOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::vector<Prediction> preds;
  for (const auto& record : test.records) {
    if (record.annotations.empty()) continue;
    std::vector<VisualPromptSet> sets;
    std::vector<int64_t> ids;
    for (const auto& [category, boxes] : boxes_by_category(record)) {
      std::uniform_int_distribution<size_t> pick(0, boxes.size() - 1);
      VisualPromptSet set;
      set.category_id = category;
      set.label = test.categories.at(category).name;
      set.boxes = {boxes[pick(rng)]};
      if (kind == PromptKind::kPoint) set = set.as_points();
      sets.push_back(std::move(set));
      ids.push_back(category);
    }
    auto session = open_record(engine, test, record);
    collect(workflow_interactive(engine, *session, sets, 1.0), ids, record.id, options, preds);
  }
  return evaluate_ap(preds, test, options.max_detections);
}

VisualGResult protocol_visual_g(Engine& engine, const Dataset& train, const Dataset& test,
                                int64_t n_examples, const ProtocolOptions& options) {
  if (n_examples < 1) throw ValidationError("n_examples must be positive", "n");
  VisualGResult out;
  std::map<int64_t, std::shared_ptr<ImageSession>> sessions;
  for (const auto& c : test.categories.items()) {
    std::vector<size_t> candidates;
    for (size_t i = 0; i < train.records.size(); ++i)
      for (const auto& a : train.records[i].annotations)
        if (a.category_id == c.id) {
          candidates.push_back(i);
          break;
        }
    if (candidates.empty()) {
      out.skipped.push_back(c.name);
      continue;
    }
    std::seed_seq seq{static_cast<uint64_t>(options.seed), static_cast<uint64_t>(c.id)};
    std::mt19937_64 rng(seq);
    std::shuffle(candidates.begin(), candidates.end(), rng);
    const size_t n = std::min<size_t>(candidates.size(), static_cast<size_t>(n_examples));
    std::vector<GenericExample> examples;
    for (size_t k = 0; k < n; ++k) {
      const auto& record = train.records[candidates[k]];
      std::vector<NormalizedBox> boxes;
      for (const auto& a : record.annotations)
        if (a.category_id == c.id) boxes.push_back(a.box);
      std::uniform_int_distribution<size_t> pick(0, boxes.size() - 1);
      auto& session = sessions[record.id];
      if (!session) session = open_record(engine, train, record);
      VisualPromptSet set;
      set.category_id = c.id;
      set.label = c.name;
      set.boxes = {boxes[pick(rng)]};
      examples.push_back({session.get(), set});
    }
    out.library.add(build_generic_embedding(engine, examples, c.name));
  }
  sessions.clear();
  if (out.library.empty()) return out;

  std::vector<int64_t> ids;
  for (const auto& label : out.library.labels()) ids.push_back(*test.categories.find_name(label));
  std::vector<Prediction> preds;
  for (const auto& record : test.records) {
    auto session = open_record(engine, test, record);
    collect(workflow_generic(engine, *session, out.library, 1.0), ids, record.id, options, preds);
  }
  out.summary = evaluate_ap(preds, test, options.max_detections);
  return out;
}

RegionAccuracy protocol_region_cls(Engine& engine, const Dataset& test) {
  std::vector<std::string> names;
  std::vector<int64_t> ids;
  for (const auto& c : test.categories.items()) {
    names.push_back(c.name);
    ids.push_back(c.id);
  }
  RegionAccuracy out;
  int64_t top1 = 0, top5 = 0;
  for (const auto& record : test.records) {
    if (record.annotations.empty()) continue;
    auto session = open_record(engine, test, record);
    for (const auto& a : record.annotations) {
      VisualPromptSet region;
      region.boxes = {a.box};
      const auto result = classify_region(engine, *session, region, names);
      std::vector<size_t> order(names.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
        return result.probabilities[x] > result.probabilities[y];
      });
      const auto truth = static_cast<size_t>(
          std::find(ids.begin(), ids.end(), a.category_id) - ids.begin());
      if (order.front() == truth) ++top1;
      for (size_t k = 0; k < std::min<size_t>(5, order.size()); ++k)
        if (order[k] == truth) ++top5;
      ++out.total;
    }
  }
  if (out.total > 0) {
    out.top1 = static_cast<double>(top1) / out.total;
    out.top5 = static_cast<double>(top5) / out.total;
  }
  return out;
}

namespace {

struct CountScene {
  std::vector<double> scores;  // detection scores of the target class
  double truth = 0.0;
};

std::vector<CountScene> count_scenes(Engine& engine, const Dataset& data, double floor,
                                     uint64_t seed, int64_t exemplars, int64_t min_instances,
                                     int64_t max_scenes) {
  std::mt19937_64 rng(seed);
  std::vector<CountScene> out;
  for (const auto& record : data.records) {
    if (max_scenes >= 0 && static_cast<int64_t>(out.size()) >= max_scenes) break;
    if (record.annotations.empty()) continue;
    const auto groups = boxes_by_category(record);
    auto target = std::max_element(groups.begin(), groups.end(), [](const auto& a, const auto& b) {
      return a.second.size() < b.second.size();
    });
    if (static_cast<int64_t>(target->second.size()) < min_instances) continue;
    std::vector<NormalizedBox> boxes = target->second;
    std::shuffle(boxes.begin(), boxes.end(), rng);
    boxes.resize(std::min<size_t>(boxes.size(), static_cast<size_t>(exemplars)));
    VisualPromptSet set;
    set.category_id = target->first;
    set.label = data.categories.at(target->first).name;
    set.boxes = boxes;
    auto session = open_record(engine, data, record);
    CountScene scene;
    scene.truth = static_cast<double>(target->second.size());
    const auto result = workflow_interactive(engine, *session, {set}, floor);
    for (const auto& d : result.detections) scene.scores.push_back(d.score);
    out.push_back(std::move(scene));
  }
  return out;
}

int64_t count_at(const CountScene& scene, double threshold) {
  return std::count_if(scene.scores.begin(), scene.scores.end(),
                       [&](double s) { return s >= threshold; });
}

}  // namespace

CountResult protocol_count(Engine& engine, const Dataset& counting, double threshold,
                           uint64_t seed, int64_t exemplars) {
  if (exemplars <= 0) throw ValidationError("counting needs an exemplar", "exemplars");
  CountResult out;
  for (const auto& scene : count_scenes(engine, counting, threshold, seed, exemplars, 0, -1)) {
    out.predicted.push_back(static_cast<double>(count_at(scene, threshold)));
    out.truth.push_back(scene.truth);
  }
  out.mae = evaluate_mae(out.predicted, out.truth);
  return out;
}

CountCalibration calibrate_count_threshold(Engine& engine, const Dataset& split,
                                           const std::vector<double>& grid,
                                           int64_t min_instances, int64_t max_scenes,
                                           uint64_t seed, int64_t exemplars) {
  if (grid.empty()) throw ValidationError("threshold grid is empty", "grid");
  if (exemplars <= 0) throw ValidationError("counting needs an exemplar", "exemplars");
  min_instances = std::max<int64_t>(min_instances, exemplars);
  const double floor = *std::min_element(grid.begin(), grid.end());
  const auto scenes = count_scenes(engine, split, floor, seed, exemplars, min_instances, max_scenes);
  if (scenes.empty())
    throw ValidationError("no scene has " + std::to_string(min_instances) + " instances of one category",
                          "min_instances");
  CountCalibration out;
  out.scenes = static_cast<int64_t>(scenes.size());
  out.mae = std::numeric_limits<double>::infinity();
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  for (double th : sorted) {
    std::vector<double> predicted, truth;
    for (const auto& scene : scenes) {
      predicted.push_back(static_cast<double>(count_at(scene, th)));
      truth.push_back(scene.truth);
    }
    const double mae = evaluate_mae(predicted, truth);
    out.mae_by_threshold[th] = mae;
    if (mae < out.mae) {
      out.mae = mae;
      out.threshold = th;
    }
  }
  return out;
}

}  // namespace promptdet
