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

#include "promptdet/training.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "promptdet/errors.h"
#include "promptdet/matching.h"

namespace promptdet {

std::string to_string(Modality modality) {
  return modality == Modality::kText ? "text" : "visual";
}

Modality modality_for_step(int64_t step) {
  return step % 2 == 0 ? Modality::kText : Modality::kVisual;
}

std::vector<VisualPromptSet> sample_visual_prompts(const DatasetRecord& record,
                                                   const CategoryTable& categories,
                                                   std::mt19937_64& rng, double point_prob) {
  if (record.annotations.empty())
    throw ValidationError("image " + std::to_string(record.id) + " has no annotations",
                          "annotations");
  std::map<int64_t, std::vector<NormalizedBox>> by_category;
  for (const auto& a : record.annotations) by_category[a.category_id].push_back(a.box);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<VisualPromptSet> out;
  for (auto& [category, boxes] : by_category) {
    std::uniform_int_distribution<size_t> count(1, boxes.size());
    const size_t k = count(rng);
    std::vector<size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(k);
    std::sort(order.begin(), order.end());
    VisualPromptSet set;
    set.category_id = category;
    set.label = categories.contains(category) ? categories.at(category).name
                                              : std::to_string(category);
    for (size_t i : order) set.boxes.push_back(boxes[i]);
    if (unit(rng) < point_prob) set = set.as_points();
    out.push_back(std::move(set));
  }
  return out;
}

bool GlobalDictionary::contains(const std::string& name) const {
  return std::binary_search(names.begin(), names.end(), name);
}

GlobalDictionary build_global_dictionary(const Dataset& corpus, int64_t min_count) {
  GlobalDictionary out;
  for (const auto& [id, count] : corpus.category_counts())
    out.counts[corpus.categories.at(id).name] += count;
  for (const auto& [name, count] : out.counts)
    if (count > min_count) out.names.push_back(name);
  return out;
}

std::vector<std::string> TextPrompts::all() const {
  std::vector<std::string> out = positives;
  out.insert(out.end(), negatives.begin(), negatives.end());
  return out;
}

std::vector<bool> TextPrompts::positive_mask() const {
  std::vector<bool> out(positives.size(), true);
  out.resize(positives.size() + negatives.size(), false);
  return out;
}

TextPrompts sample_text_prompts(const DatasetRecord& record, const CategoryTable& categories,
                                const GlobalDictionary& dictionary, int64_t num_negatives,
                                std::mt19937_64& rng) {
  if (dictionary.empty()) throw ValidationError("global dictionary is empty", "dictionary");
  TextPrompts out;
  std::set<std::string> present;
  for (int64_t id : record.present_categories()) {
    const auto& name = categories.at(id).name;
    if (present.insert(name).second) out.positives.push_back(name);
  }
  std::vector<std::string> pool;
  for (const auto& name : dictionary.names)
    if (!present.count(name)) pool.push_back(name);
  std::shuffle(pool.begin(), pool.end(), rng);
  if (static_cast<int64_t>(pool.size()) > num_negatives) pool.resize(std::max<int64_t>(0, num_negatives));
  out.negatives = std::move(pool);
  return out;
}

nlohmann::json TrainBatchPlan::to_json() const {
  nlohmann::json imgs = nlohmann::json::array();
  for (const auto& im : images) {
    nlohmann::json sets = nlohmann::json::array();
    for (const auto& s : im.visual) {
      nlohmann::json coords = nlohmann::json::array();
      if (s.kind == PromptKind::kBox)
        for (const auto& b : s.boxes) coords.push_back({b.cx, b.cy, b.w, b.h});
      else
        for (const auto& p : s.points) coords.push_back({p.x, p.y});
      sets.push_back({{"kind", promptdet::to_string(s.kind)},
                      {"category_id", s.category_id},
                      {"label", s.label},
                      {"coords", coords}});
    }
    imgs.push_back({{"record_index", im.record_index},
                    {"hflip", im.hflip},
                    {"visual", sets},
                    {"positives", im.text.positives},
                    {"negatives", im.text.negatives}});
  }
  return {{"step", step}, {"modality", promptdet::to_string(modality)}, {"images", imgs}};
}

TrainBatchPlan plan_batch(int64_t step, const std::vector<size_t>& record_indices,
                          const Dataset& dataset, const GlobalDictionary& dictionary,
                          const TrainConfig& config, std::mt19937_64& rng) {
  TrainBatchPlan plan;
  plan.step = step;
  plan.modality = modality_for_step(step);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (size_t idx : record_indices) {
    const auto& record = dataset.records.at(idx);
    ImagePlan im;
    im.record_index = idx;
    im.hflip = config.hflip && unit(rng) < 0.5;
    im.visual = sample_visual_prompts(record, dataset.categories, rng, config.point_prob);
    im.text = sample_text_prompts(record, dataset.categories, dictionary, config.num_negatives, rng);
    plan.images.push_back(std::move(im));
  }
  return plan;
}

std::vector<std::string> build_vocab(const CategoryTable& categories) {
  std::set<std::string> words;
  for (const auto& c : categories.items())
    for (const auto& w : Tokenizer::split_words(c.name)) words.insert(w);
  return {words.begin(), words.end()};
}

ImageCache::ImageCache(const Dataset& dataset) {
  if (dataset.records.empty()) {
    pixels_ = torch::zeros({0, 3, 1, 1}, torch::kUInt8);
    return;
  }
  const int h = dataset.records.front().height;
  const int w = dataset.records.front().width;
  pixels_ = torch::empty({static_cast<int64_t>(dataset.records.size()), 3, h, w}, torch::kUInt8);
  for (size_t i = 0; i < dataset.records.size(); ++i) {
    const Image img = read_image(dataset.image_path(dataset.records[i]));
    if (img.width != w || img.height != h)
      throw DatasetError("training images must share one size; " + dataset.records[i].file_name +
                         " differs");
    pixels_[static_cast<int64_t>(i)].copy_(
        torch::from_blob(const_cast<uint8_t*>(img.rgb.data()), {h, w, 3}, torch::kUInt8)
            .permute({2, 0, 1}));
  }
}

torch::Tensor ImageCache::batch(const std::vector<size_t>& indices,
                                const std::vector<bool>& hflip) const {
  std::vector<torch::Tensor> rows;
  for (size_t i = 0; i < indices.size(); ++i) {
    auto t = pixels_[static_cast<int64_t>(indices[i])];
    if (i < hflip.size() && hflip[i]) t = t.flip({2});
    rows.push_back(t);
  }
  auto x = torch::stack(rows).to(torch::kFloat32);
  return (x / 255.0 - 0.5) / 0.25;
}

std::unique_ptr<torch::optim::AdamW> make_optimizer(DetectorModel& model, const TrainConfig& config) {
  std::vector<torch::optim::OptimizerParamGroup> groups;
  auto fast = std::make_unique<torch::optim::AdamWOptions>(config.lr);
  fast->weight_decay(config.weight_decay);
  auto slow = std::make_unique<torch::optim::AdamWOptions>(config.lr_backbone);
  slow->weight_decay(config.weight_decay);
  groups.emplace_back(model->fast_parameters(), std::move(fast));
  groups.emplace_back(model->slow_parameters(), std::move(slow));
  return std::make_unique<torch::optim::AdamW>(
      groups, torch::optim::AdamWOptions(config.lr).weight_decay(config.weight_decay));
}

double lr_scale(int64_t step, int64_t total_steps, const TrainConfig& config) {
  double scale = step < config.warmup_steps ? double(step + 1) / config.warmup_steps : 1.0;
  const auto drop_step = static_cast<int64_t>(std::llround(config.lr_drop_at * total_steps));
  if (step >= drop_step) scale *= config.lr_drop_factor;
  return scale;
}

void set_learning_rates(torch::optim::AdamW& optimizer, double scale, const TrainConfig& config) {
  auto& groups = optimizer.param_groups();
  static_cast<torch::optim::AdamWOptions&>(groups[0].options()).lr(config.lr * scale);
  static_cast<torch::optim::AdamWOptions&>(groups[1].options()).lr(config.lr_backbone * scale);
}

namespace {

NormalizedBox flip_box(const NormalizedBox& b) { return {1.0 - b.cx, b.cy, b.w, b.h}; }

VisualPromptSet flip_set(VisualPromptSet s) {
  for (auto& b : s.boxes) b = flip_box(b);
  for (auto& p : s.points) p.x = 1.0 - p.x;
  return s;
}

torch::Tensor boxes_tensor(const std::vector<NormalizedBox>& boxes) {
  std::vector<float> flat;
  for (const auto& b : boxes) {
    flat.push_back(static_cast<float>(b.cx));
    flat.push_back(static_cast<float>(b.cy));
    flat.push_back(static_cast<float>(b.w));
    flat.push_back(static_cast<float>(b.h));
  }
  return torch::tensor(flat).view({static_cast<int64_t>(boxes.size()), 4});
}

void accumulate(LossBreakdown& acc, const LossBreakdown& x) {
  auto add = [](torch::Tensor& a, const torch::Tensor& b) { a = a.defined() ? a + b : b; };
  add(acc.cls, x.cls);
  add(acc.l1, x.l1);
  add(acc.giou, x.giou);
}

// Encodes every visual set of the batch, grouped by prompt kind, and returns
// the embeddings in plan order.
torch::Tensor encode_plan_visual(DetectorModel& model, const std::vector<VisualPromptSet>& sets,
                                 const std::vector<int64_t>& image_index,
                                 const MultiScaleFeatures& features) {
  std::vector<torch::Tensor> rows(sets.size());
  for (PromptKind kind : {PromptKind::kBox, PromptKind::kPoint}) {
    std::vector<VisualPromptSet> group;
    std::vector<int64_t> group_image;
    std::vector<size_t> where;
    for (size_t i = 0; i < sets.size(); ++i) {
      if (sets[i].kind != kind) continue;
      group.push_back(sets[i]);
      group_image.push_back(image_index[i]);
      where.push_back(i);
    }
    if (group.empty()) continue;
    auto emb = model->encode_visual(PromptBatch::from_sets(group, group_image), features);
    for (size_t j = 0; j < where.size(); ++j) rows[where[j]] = emb[static_cast<int64_t>(j)];
  }
  return torch::stack(rows);
}

}  // namespace

LossBreakdown compute_loss(DetectorModel& model, const TrainBatchPlan& plan, const Dataset& dataset,
                           const ImageCache& images, const TrainConfig& config) {
  const auto& mc = model->config();
  const int64_t batch = static_cast<int64_t>(plan.images.size());
  if (batch == 0) throw ValidationError("empty batch plan", "images");
  std::vector<size_t> indices;
  std::vector<bool> flips;
  for (const auto& im : plan.images) {
    indices.push_back(im.record_index);
    flips.push_back(im.hflip);
  }
  auto features = model->encode_image(images.batch(indices, flips));

  // Ground truth and visual sets in image coordinates after flipping.
  std::vector<std::vector<NormalizedBox>> gt_boxes(batch);
  std::vector<std::vector<int64_t>> gt_categories(batch);
  std::vector<VisualPromptSet> sets;
  std::vector<int64_t> set_image;
  int64_t total_gt = 0;
  for (int64_t b = 0; b < batch; ++b) {
    const auto& im = plan.images[b];
    for (const auto& a : dataset.records.at(im.record_index).annotations) {
      gt_boxes[b].push_back(im.hflip ? flip_box(a.box) : a.box);
      gt_categories[b].push_back(a.category_id);
    }
    total_gt += static_cast<int64_t>(gt_boxes[b].size());
    for (const auto& s : im.visual) {
      sets.push_back(im.hflip ? flip_set(s) : s);
      set_image.push_back(b);
    }
  }

  const bool visual_step = plan.modality == Modality::kVisual;
  std::set<int64_t> distinct;
  for (const auto& s : sets) distinct.insert(s.category_id);
  const bool want_align = config.use_align && distinct.size() >= 2 &&
                          (visual_step ? config.align_on_visual_steps : config.align_on_text_steps);

  torch::Tensor visual;
  if (!sets.empty() && (visual_step || want_align))
    visual = encode_plan_visual(model, sets, set_image, features);

  // Unique text prompts of the batch, encoded once.
  std::vector<std::string> text_names;
  std::map<std::string, int64_t> text_index;
  auto want_text = [&](const std::string& name) {
    if (text_index.emplace(name, static_cast<int64_t>(text_names.size())).second)
      text_names.push_back(name);
  };
  if (!visual_step)
    for (const auto& im : plan.images)
      for (const auto& n : im.text.all()) want_text(n);
  if (want_align)
    for (const auto& s : sets) want_text(dataset.categories.at(s.category_id).name);
  torch::Tensor text;
  if (!text_names.empty()) text = model->encode_text(text_names);

  // Per-image classification weights and GT class indices.
  std::vector<torch::Tensor> prompt_rows(batch);
  std::vector<torch::Tensor> gt_labels(batch);
  int64_t max_classes = 1;
  size_t set_cursor = 0;
  for (int64_t b = 0; b < batch; ++b) {
    const auto& im = plan.images[b];
    std::map<int64_t, int64_t> class_of;
    if (visual_step) {
      std::vector<int64_t> rows;
      for (size_t i = 0; i < im.visual.size(); ++i, ++set_cursor) {
        class_of[im.visual[i].category_id] = static_cast<int64_t>(i);
        rows.push_back(static_cast<int64_t>(set_cursor));
      }
      prompt_rows[b] = visual.index_select(0, torch::tensor(rows, torch::kLong));
    } else {
      const auto names = im.text.all();
      std::vector<int64_t> rows;
      for (size_t i = 0; i < names.size(); ++i) rows.push_back(text_index.at(names[i]));
      for (size_t i = 0; i < im.text.positives.size(); ++i)
        class_of[*dataset.categories.find_name(im.text.positives[i])] = static_cast<int64_t>(i);
      prompt_rows[b] = text.index_select(0, torch::tensor(rows, torch::kLong));
    }
    std::vector<int64_t> labels;
    for (int64_t c : gt_categories[b]) labels.push_back(class_of.at(c));
    gt_labels[b] = torch::tensor(labels, torch::kLong);
    max_classes = std::max(max_classes, prompt_rows[b].size(0));
  }
  auto prompts = torch::zeros({batch, max_classes, mc.dim}, features.flat.options());
  auto padding = torch::ones({batch, max_classes}, torch::kBool);
  {
    std::vector<torch::Tensor> padded;
    for (int64_t b = 0; b < batch; ++b) {
      const int64_t c = prompt_rows[b].size(0);
      padded.push_back(torch::constant_pad_nd(prompt_rows[b], {0, 0, 0, max_classes - c}));
      padding[b].slice(0, 0, c).fill_(false);
    }
    prompts = torch::stack(padded);
  }

  auto out = model->detect(features, prompts, padding);
  const double normalizer = static_cast<double>(std::max<int64_t>(total_gt, 1));

  auto image_losses = [&](const torch::Tensor& logits, const torch::Tensor& boxes) {
    LossBreakdown acc;
    for (int64_t b = 0; b < batch; ++b) {
      const int64_t c = prompt_rows[b].size(0);
      auto lg = logits[b].slice(1, 0, c);
      auto bx = boxes[b];
      DetectionTargets targets{gt_labels[b], boxes_tensor(gt_boxes[b])};
      MatchResult match;
      {
        torch::NoGradGuard no_grad;
        match = hungarian_match(lg.detach(), bx.detach(), targets.labels, targets.boxes,
                                mc.focal_alpha, mc.focal_gamma);
      }
      accumulate(acc, detection_loss(match, lg, bx, targets, normalizer, mc.focal_alpha,
                                     mc.focal_gamma));
    }
    return acc;
  };

  std::vector<LossBreakdown> layers;
  for (size_t l = 0; l < out.layer_logits.size(); ++l)
    layers.push_back(image_losses(out.layer_logits[l], out.decoded.boxes[l]));
  LossBreakdown encoder_aux = image_losses(out.selection.logits, out.selection.boxes);

  torch::Tensor align;
  if (want_align) {
    std::vector<int64_t> rows, labels;
    for (const auto& s : sets) {
      rows.push_back(text_index.at(dataset.categories.at(s.category_id).name));
      labels.push_back(s.category_id);
    }
    align = infonce_align(visual, text.index_select(0, torch::tensor(rows, torch::kLong)), labels,
                          mc.temperature);
  }
  return total_loss(layers, &encoder_aux, align);
}

LossBreakdown train_step(DetectorModel& model, torch::optim::AdamW& optimizer,
                         const TrainBatchPlan& plan, const Dataset& dataset,
                         const ImageCache& images, const TrainConfig& config,
                         const std::string& dump_path) {
  model->train();
  optimizer.zero_grad();
  LossBreakdown loss = compute_loss(model, plan, dataset, images, config);
  const double value = loss.total.item<double>();
  if (!std::isfinite(value)) {
    nlohmann::json dump = {{"plan", plan.to_json()}, {"loss", loss.to_json()}};
    if (!dump_path.empty()) {
      std::ofstream(dump_path) << dump.dump(1) << "\n";
    }
    throw TrainingError("non-finite loss at step " + std::to_string(plan.step) +
                        (dump_path.empty() ? "" : "; batch written to " + dump_path));
  }
  loss.total.backward();
  if (config.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(model->parameters(), config.grad_clip);
  optimizer.step();
  return loss;
}

TrainResult train(RunConfig config, const Dataset& train_set, const std::string& output_dir,
                  const LogSink& sink) {
  if (train_set.records.empty()) throw TrainingError("training set is empty");
  if (config.model.vocab.empty()) config.model.vocab = build_vocab(train_set.categories);
  const auto& tc = config.train;
  std::filesystem::create_directories(output_dir);
  save_run_config(config, (std::filesystem::path(output_dir) / "config.json").string());

  torch::manual_seed(tc.seed);
  DetectorModel model(config.model);
  const GlobalDictionary dictionary = build_global_dictionary(train_set, tc.min_count);
  if (dictionary.empty())
    throw TrainingError("global dictionary is empty; lower train.min_count");
  const ImageCache images(train_set);
  auto optimizer = make_optimizer(model, tc);
  std::mt19937_64 rng(tc.seed);

  const int64_t n = static_cast<int64_t>(train_set.records.size());
  const int64_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const int64_t total_steps = tc.max_steps > 0 ? tc.max_steps : tc.epochs * steps_per_epoch;

  std::ofstream log(std::filesystem::path(output_dir) / "train_log.jsonl");
  const std::string dump_path = (std::filesystem::path(output_dir) / "nan_batch.json").string();
  nlohmann::json extra = {{"categories", train_set.categories.names()}, {"seed", tc.seed}};
  TrainResult result;
  std::vector<size_t> order(static_cast<size_t>(n));
  int64_t step = 0;
  for (int64_t epoch = 0; step < total_steps; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int64_t start = 0; start < n && step < total_steps; start += tc.batch_size, ++step) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<size_t> idx(order.begin() + start,
                              order.begin() + std::min<int64_t>(n, start + tc.batch_size));
      const auto plan = plan_batch(step, idx, train_set, dictionary, tc, rng);
      const double scale = lr_scale(step, total_steps, tc);
      set_learning_rates(*optimizer, scale, tc);
      const auto loss = train_step(model, *optimizer, plan, train_set, images, tc, dump_path);
      const double value = loss.value(loss.total);
      if (step == 0) result.first_loss = value;
      result.last_loss = value;
      nlohmann::json entry = loss.to_json();
      entry["step"] = step;
      entry["epoch"] = epoch;
      entry["modality"] = to_string(plan.modality);
      entry["lr"] = tc.lr * scale;
      entry["ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
      log << entry.dump() << "\n";
      if (sink) sink(entry);
    }
    log.flush();
    if (tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 && step < total_steps) {
      save_checkpoint(model,
                      (std::filesystem::path(output_dir) /
                       ("checkpoint_epoch" + std::to_string(epoch + 1) + ".pt"))
                          .string(),
                      extra);
    }
  }
  result.steps = step;
  extra["steps"] = step;
  result.checkpoint = (std::filesystem::path(output_dir) / "model.pt").string();
  save_checkpoint(model, result.checkpoint, extra);
  return result;
}

}  // namespace promptdet
