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

#include "promptdet/dataset.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

namespace promptdet {

std::string to_string(FrequencyBucket bucket) {
  switch (bucket) {
    case FrequencyBucket::kFrequent:
      return "f";
    case FrequencyBucket::kCommon:
      return "c";
    case FrequencyBucket::kRare:
      return "r";
  }
  return "c";
}

FrequencyBucket bucket_from_string(const std::string& s) {
  if (s == "f" || s == "frequent") return FrequencyBucket::kFrequent;
  if (s == "c" || s == "common") return FrequencyBucket::kCommon;
  if (s == "r" || s == "rare") return FrequencyBucket::kRare;
  throw DatasetError("unknown frequency bucket '" + s + "'");
}

CategoryTable::CategoryTable(std::vector<Category> items) : items_(std::move(items)) {
  for (size_t i = 0; i < items_.size(); ++i) {
    if (!index_.emplace(items_[i].id, i).second)
      throw DatasetError("duplicate category id " + std::to_string(items_[i].id));
  }
}

const Category& CategoryTable::at(int64_t id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw DatasetError("unknown category id " + std::to_string(id));
  return items_[it->second];
}

std::optional<int64_t> CategoryTable::find_name(const std::string& name) const {
  for (const auto& c : items_)
    if (c.name == name) return c.id;
  return std::nullopt;
}

std::vector<std::string> CategoryTable::names() const {
  std::vector<std::string> out;
  for (const auto& c : items_) out.push_back(c.name);
  return out;
}

bool CategoryTable::operator==(const CategoryTable& other) const {
  if (items_.size() != other.items_.size()) return false;
  for (size_t i = 0; i < items_.size(); ++i) {
    const auto& a = items_[i];
    const auto& b = other.items_[i];
    if (a.id != b.id || a.name != b.name || a.bucket != b.bucket) return false;
  }
  return true;
}

std::vector<int64_t> DatasetRecord::present_categories() const {
  std::set<int64_t> ids;
  for (const auto& a : annotations) ids.insert(a.category_id);
  return {ids.begin(), ids.end()};
}

std::string Dataset::image_path(const DatasetRecord& record) const {
  if (image_root.empty()) return record.file_name;
  return (std::filesystem::path(image_root) / record.file_name).string();
}

std::map<int64_t, int64_t> Dataset::category_counts() const {
  std::map<int64_t, int64_t> counts;
  for (const auto& c : categories.items()) counts[c.id] = 0;
  for (const auto& r : records)
    for (const auto& a : r.annotations) ++counts[a.category_id];
  return counts;
}

nlohmann::json dataset_to_json(const Dataset& dataset) {
  nlohmann::json images = nlohmann::json::array();
  nlohmann::json annotations = nlohmann::json::array();
  for (const auto& r : dataset.records) {
    images.push_back(
        {{"id", r.id}, {"file_name", r.file_name}, {"width", r.width}, {"height", r.height}});
    for (const auto& a : r.annotations) {
      const Corners c = to_corners(a.box);
      const double pw = a.box.w * r.width;
      const double ph = a.box.h * r.height;
      annotations.push_back({{"id", a.id},
                             {"image_id", r.id},
                             {"category_id", a.category_id},
                             {"bbox", {c.x0 * r.width, c.y0 * r.height, pw, ph}},
                             {"bbox_norm", {a.box.cx, a.box.cy, a.box.w, a.box.h}},
                             {"area", pw * ph},
                             {"iscrowd", 0}});
    }
  }
  nlohmann::json categories = nlohmann::json::array();
  for (const auto& c : dataset.categories.items())
    categories.push_back({{"id", c.id}, {"name", c.name}, {"frequency", to_string(c.bucket)}});
  return {{"info", dataset.info},
          {"images", images},
          {"annotations", annotations},
          {"categories", categories}};
}

Dataset dataset_from_json(const nlohmann::json& doc, const std::string& image_root) {
  Dataset out;
  out.image_root = image_root;
  if (!doc.is_object()) throw DatasetError("dataset document must be an object");
  if (doc.contains("info")) out.info = doc.at("info");
  std::vector<Category> cats;
  const auto& jcats = doc.value("categories", nlohmann::json::array());
  for (size_t i = 0; i < jcats.size(); ++i) {
    try {
      Category c;
      c.id = jcats[i].at("id").get<int64_t>();
      c.name = jcats[i].at("name").get<std::string>();
      c.bucket = bucket_from_string(jcats[i].value("frequency", std::string("c")));
      cats.push_back(c);
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("category record " + std::to_string(i) + ": " + e.what());
    }
  }
  out.categories = CategoryTable(std::move(cats));

  std::map<int64_t, size_t> image_index;
  const auto& jimages = doc.value("images", nlohmann::json::array());
  for (size_t i = 0; i < jimages.size(); ++i) {
    try {
      DatasetRecord r;
      r.id = jimages[i].at("id").get<int64_t>();
      r.file_name = jimages[i].at("file_name").get<std::string>();
      r.width = jimages[i].at("width").get<int>();
      r.height = jimages[i].at("height").get<int>();
      if (r.width <= 0 || r.height <= 0) throw DatasetError("non-positive image size");
      if (!image_index.emplace(r.id, out.records.size()).second)
        throw DatasetError("duplicate image id " + std::to_string(r.id));
      out.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw DatasetError("image record " + std::to_string(i) + ": " + e.what());
    }
  }

  const auto& janns = doc.value("annotations", nlohmann::json::array());
  for (size_t i = 0; i < janns.size(); ++i) {
    const auto& ja = janns[i];
    int64_t category_id = 0;
    int64_t image_id = 0;
    Annotation a;
    try {
      a.id = ja.at("id").get<int64_t>();
      image_id = ja.at("image_id").get<int64_t>();
      category_id = ja.at("category_id").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError("annotation record " + std::to_string(i) + ": " + e.what());
    }
    if (!out.categories.contains(category_id))
      throw DatasetError("annotation record " + std::to_string(i) +
                         " references unknown category id " + std::to_string(category_id));
    auto it = image_index.find(image_id);
    if (it == image_index.end())
      throw DatasetError("annotation record " + std::to_string(i) +
                         " references unknown image id " + std::to_string(image_id));
    auto& record = out.records[it->second];
    a.category_id = category_id;
    try {
      if (ja.contains("bbox_norm")) {
        const auto v = ja.at("bbox_norm").get<std::vector<double>>();
        if (v.size() != 4) throw DatasetError("bbox_norm needs 4 values");
        a.box = {v[0], v[1], v[2], v[3]};
      } else {
        const auto v = ja.at("bbox").get<std::vector<double>>();
        if (v.size() != 4) throw DatasetError("bbox needs 4 values");
        a.box = from_corners({v[0] / record.width, v[1] / record.height,
                              (v[0] + v[2]) / record.width, (v[1] + v[3]) / record.height});
      }
    } catch (const std::exception& e) {
      throw DatasetError("annotation record " + std::to_string(i) + ": " + e.what());
    }
    if (!is_valid(a.box))
      throw DatasetError("annotation record " + std::to_string(i) + " has an invalid box");
    record.annotations.push_back(a);
  }
  return out;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write " + path);
  out << dataset_to_json(dataset).dump(1) << "\n";
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open dataset " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError("malformed dataset " + path + ": " + e.what());
  }
  return dataset_from_json(doc, std::filesystem::path(path).parent_path().string());
}

CategoryTable assign_buckets(const std::vector<Category>& categories,
                             const std::map<int64_t, int64_t>& counts) {
  std::vector<Category> sorted = categories;
  auto count_of = [&](int64_t id) {
    auto it = counts.find(id);
    return it == counts.end() ? int64_t{0} : it->second;
  };
  std::stable_sort(sorted.begin(), sorted.end(), [&](const Category& a, const Category& b) {
    const auto ca = count_of(a.id), cb = count_of(b.id);
    return ca != cb ? ca > cb : a.id < b.id;
  });
  const size_t n = sorted.size();
  std::map<int64_t, FrequencyBucket> bucket;
  for (size_t rank = 0; rank < n; ++rank) {
    // Terciles: ranks [0, n/3) frequent, [n/3, 2n/3) common, rest rare.
    const size_t third = rank * 3 / std::max<size_t>(n, 1);
    bucket[sorted[rank].id] = third == 0   ? FrequencyBucket::kFrequent
                              : third == 1 ? FrequencyBucket::kCommon
                                           : FrequencyBucket::kRare;
  }
  std::vector<Category> out = categories;
  for (auto& c : out) c.bucket = bucket[c.id];
  return CategoryTable(std::move(out));
}

std::string ShapeStyle::name() const {
  return striped ? color_name + " striped " + shape : color_name + " " + shape;
}

const std::vector<ShapeStyle>& style_catalogue() {
  static const std::vector<ShapeStyle> kStyles = {
      {"circle", {220, 40, 40}, "red", false},
      {"square", {40, 80, 220}, "blue", false},
      {"triangle", {40, 170, 60}, "green", false},
      {"star", {230, 200, 30}, "yellow", false},
      {"diamond", {140, 60, 190}, "purple", false},
      {"hexagon", {240, 130, 30}, "orange", false},
      {"cross", {30, 190, 200}, "cyan", false},
      {"ring", {240, 110, 180}, "pink", false},
      {"square", {220, 40, 40}, "red", true},
      {"circle", {40, 80, 220}, "blue", true},
      {"triangle", {140, 60, 190}, "purple", true},
      {"star", {40, 170, 60}, "green", true},
  };
  return kStyles;
}

std::vector<double> zipf_probabilities(int64_t n, double exponent) {
  std::vector<double> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[i] = 1.0 / std::pow(static_cast<double>(i + 1), exponent);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= total;
  return p;
}

namespace {

struct PlacedShape {
  int64_t category_index;
  double cx, cy, half_w, half_h;  // pixels
};

const std::vector<std::pair<double, double>>& star_polygon() {
  static const std::vector<std::pair<double, double>> kStar = [] {
    std::vector<std::pair<double, double>> pts;
    for (int i = 0; i < 10; ++i) {
      const double r = i % 2 == 0 ? 1.0 : 0.45;
      const double a = -M_PI / 2.0 + i * M_PI / 5.0;
      pts.emplace_back(r * std::cos(a), r * std::sin(a));
    }
    double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
    for (const auto& [x, y] : pts) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
    // Stretch so the polygon spans exactly [-1, 1] on both axes.
    for (auto& [x, y] : pts) {
      x = 2.0 * (x - x0) / (x1 - x0) - 1.0;
      y = 2.0 * (y - y0) / (y1 - y0) - 1.0;
    }
    return pts;
  }();
  return kStar;
}

bool inside_polygon(const std::vector<std::pair<double, double>>& poly, double u, double v) {
  bool in = false;
  for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

// u, v in the shape's local frame, where the bounding box is [-1, 1]^2.
bool inside_shape(const std::string& shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  if (au > 1.0 || av > 1.0) return false;
  if (shape == "circle") return u * u + v * v <= 1.0;
  if (shape == "square") return true;
  if (shape == "triangle") return v >= 2.0 * au - 1.0;
  if (shape == "diamond") return au + av <= 1.0;
  if (shape == "hexagon") return av <= 2.0 * (1.0 - au);
  if (shape == "cross") return au <= 0.34 || av <= 0.34;
  if (shape == "ring") {
    const double r2 = u * u + v * v;
    return r2 <= 1.0 && r2 >= 0.3;
  }
  if (shape == "star") return inside_polygon(star_polygon(), u, v);
  return false;
}

class Canvas {
 public:
  Canvas(int size, std::mt19937_64& rng) : size_(size), owner_(static_cast<size_t>(size) * size, -1) {
    std::uniform_int_distribution<int> base(170, 230);
    std::uniform_int_distribution<int> tint(-12, 12);
    std::uniform_real_distribution<double> grad(-18.0, 18.0);
    const int g = base(rng);
    const int tr = tint(rng), tg = tint(rng), tb = tint(rng);
    const double gx = grad(rng), gy = grad(rng);
    image_ = Image::filled(size, size, 0, 0, 0);
    std::uniform_int_distribution<int> noise(-6, 6);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double shade = gx * (x / double(size) - 0.5) + gy * (y / double(size) - 0.5);
        uint8_t* px = image_.pixel(x, y);
        const int n = noise(rng);
        px[0] = clamp8(g + tr + shade + n);
        px[1] = clamp8(g + tg + shade + n);
        px[2] = clamp8(g + tb + shade + n);
      }
    }
  }

  static uint8_t clamp8(double v) { return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5); }

  // Pixel centers covered by the shape.
  std::vector<size_t> footprint(const PlacedShape& s, const ShapeStyle& style) const {
    std::vector<size_t> out;
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - s.half_w)));
    const int x1 = std::min(size_ - 1, static_cast<int>(std::ceil(s.cx + s.half_w)));
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - s.half_h)));
    const int y1 = std::min(size_ - 1, static_cast<int>(std::ceil(s.cy + s.half_h)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (inside_shape(style.shape, (x + 0.5 - s.cx) / s.half_w, (y + 0.5 - s.cy) / s.half_h))
          out.push_back(static_cast<size_t>(y) * size_ + x);
    return out;
  }

  // Draws with 2x2 supersampled edges and records pixel ownership.
  void draw(const PlacedShape& s, const ShapeStyle& style, int64_t owner, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> jitter(-10, 10);
    const int dr = jitter(rng), dg = jitter(rng), db = jitter(rng);
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - s.half_w)));
    const int x1 = std::min(size_ - 1, static_cast<int>(std::ceil(s.cx + s.half_w)));
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - s.half_h)));
    const int y1 = std::min(size_ - 1, static_cast<int>(std::ceil(s.cy + s.half_h)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int hits = 0;
        for (double oy : {0.25, 0.75})
          for (double ox : {0.25, 0.75})
            hits += inside_shape(style.shape, (x + ox - s.cx) / s.half_w,
                                 (y + oy - s.cy) / s.half_h);
        if (hits == 0) continue;
        double r = style.color[0] + dr, g = style.color[1] + dg, b = style.color[2] + db;
        if (style.striped && ((x + y) / 3) % 2 == 0) {
          r *= 0.5;
          g *= 0.5;
          b *= 0.5;
        }
        const double alpha = hits / 4.0;
        uint8_t* px = image_.pixel(x, y);
        px[0] = clamp8(alpha * r + (1 - alpha) * px[0]);
        px[1] = clamp8(alpha * g + (1 - alpha) * px[1]);
        px[2] = clamp8(alpha * b + (1 - alpha) * px[2]);
        if (inside_shape(style.shape, (x + 0.5 - s.cx) / s.half_w, (y + 0.5 - s.cy) / s.half_h))
          owner_[static_cast<size_t>(y) * size_ + x] = owner;
      }
    }
  }

  const std::vector<int64_t>& owner() const { return owner_; }
  Image& image() { return image_; }

 private:
  int size_;
  Image image_;
  std::vector<int64_t> owner_;
};

NormalizedBox to_normalized(const PlacedShape& s, int size) {
  return {s.cx / size, s.cy / size, 2.0 * s.half_w / size, 2.0 * s.half_h / size};
}

int64_t sample_category(const std::vector<double>& probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  for (size_t i = 0; i < probs.size(); ++i) {
    r -= probs[i];
    if (r < 0.0) return static_cast<int64_t>(i);
  }
  return static_cast<int64_t>(probs.size()) - 1;
}

}  // namespace

RenderedScene render_scene(const SyntheticConfig& config, const std::vector<double>& category_probs,
                           std::mt19937_64& rng, int64_t dense_target, int64_t dense_count) {
  const auto& styles = style_catalogue();
  const int size = config.image_size;
  Canvas canvas(size, rng);
  std::vector<PlacedShape> placed;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  if (dense_target >= 0) {
    std::uniform_int_distribution<int64_t> distractor_count(0, 4);
    const int64_t distractors = config.num_categories > 1 ? distractor_count(rng) : 0;
    const int64_t total = dense_count + distractors;
    const int grid = static_cast<int>(std::ceil(std::sqrt(total * 1.25)));
    const double cell = static_cast<double>(size) / grid;
    if (cell < 8.0)
      throw std::invalid_argument("dense scene with " + std::to_string(total) +
                                  " objects does not fit a " + std::to_string(size) + "px image");
    std::vector<int> cells(static_cast<size_t>(grid) * grid);
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    std::uniform_int_distribution<int64_t> other(0, config.num_categories - 2);
    for (int64_t i = 0; i < total; ++i) {
      int64_t cat = dense_target;
      if (i >= dense_count) {
        cat = other(rng);
        if (cat >= dense_target) ++cat;
      }
      const double s = cell * (0.6 + 0.2 * unit(rng));
      const double slack = (cell - s) * 0.8;
      const int c = cells[i];
      PlacedShape p{cat, (c % grid + 0.5) * cell + (unit(rng) - 0.5) * slack,
                    (c / grid + 0.5) * cell + (unit(rng) - 0.5) * slack, 0.5 * s, 0.5 * s};
      placed.push_back(p);
    }
  } else {
    std::uniform_int_distribution<int64_t> count_dist(1, config.max_objects);
    const int64_t wanted = count_dist(rng);
    std::uniform_real_distribution<double> size_dist(config.min_object_px, config.max_object_px);
    std::uniform_real_distribution<double> aspect_dist(std::log(0.8), std::log(1.25));
    std::vector<std::vector<size_t>> footprints;
    for (int64_t n = 0; n < wanted; ++n) {
      const int64_t cat = sample_category(category_probs, rng);
      for (int attempt = 0; attempt < 30; ++attempt) {
        const double s = size_dist(rng);
        const double aspect = std::exp(aspect_dist(rng));
        const double w = std::min<double>(s * std::sqrt(aspect), config.max_object_px);
        const double h = std::min<double>(s / std::sqrt(aspect), config.max_object_px);
        std::uniform_real_distribution<double> xd(w / 2, size - w / 2), yd(h / 2, size - h / 2);
        PlacedShape cand{cat, xd(rng), yd(rng), w / 2, h / 2};
        const NormalizedBox cand_box = to_normalized(cand, size);
        bool ok = true;
        for (const auto& p : placed)
          if (iou(cand_box, to_normalized(p, size)) > 0.5) ok = false;
        if (!ok) continue;
        // Visibility check: every earlier object keeps enough uncovered pixels.
        auto fp = canvas.footprint(cand, styles[cat]);
        if (fp.empty()) continue;
        std::vector<char> covered(static_cast<size_t>(size) * size, 0);
        for (size_t idx : fp) covered[idx] = 1;
        for (size_t j = 0; j < placed.size() && ok; ++j) {
          size_t visible = 0;
          for (size_t idx : footprints[j]) {
            // An earlier pixel stays visible unless a later shape covers it.
            bool hidden = covered[idx];
            for (size_t k = j + 1; k < placed.size() && !hidden; ++k)
              hidden = std::binary_search(footprints[k].begin(), footprints[k].end(), idx);
            visible += hidden ? 0 : 1;
          }
          if (visible < (1.0 - config.max_occlusion) * footprints[j].size()) ok = false;
        }
        if (!ok) continue;
        placed.push_back(cand);
        footprints.push_back(std::move(fp));
        break;
      }
    }
  }

  RenderedScene scene;
  for (size_t i = 0; i < placed.size(); ++i) {
    canvas.draw(placed[i], styles[placed[i].category_index], static_cast<int64_t>(i), rng);
    Annotation a;
    a.id = static_cast<int64_t>(i);
    a.category_id = placed[i].category_index + 1;
    a.box = clamp_to_unit(to_normalized(placed[i], size));
    scene.annotations.push_back(a);
  }
  scene.image = std::move(canvas.image());
  return scene;
}

Dataset generate_synthetic_split(const SyntheticConfig& config, const std::string& root,
                                 const std::string& split) {
  if (config.num_categories < 2) throw std::invalid_argument("need at least 2 categories");
  if (config.num_categories > static_cast<int64_t>(style_catalogue().size()))
    throw std::invalid_argument("at most " + std::to_string(style_catalogue().size()) +
                                " categories are available");
  if (config.dense_fraction > 0.0) {
    const int grid = static_cast<int>(std::ceil(std::sqrt((config.dense_max + 4) * 1.25)));
    if (config.dense_min < 1 || config.dense_max < config.dense_min ||
        static_cast<double>(config.image_size) / grid < 8.0)
      throw std::invalid_argument("requested density cannot be satisfied at this image size");
  }
  if (config.max_objects < 1 || config.min_object_px < 4 ||
      config.max_object_px > config.image_size / 2 || config.min_object_px > config.max_object_px)
    throw std::invalid_argument("object size or count range cannot be satisfied");

  std::filesystem::create_directories(std::filesystem::path(root) / "images");
  const auto probs = zipf_probabilities(config.num_categories, config.zipf_exponent);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int64_t> dense_count(config.dense_min, config.dense_max);

  Dataset out;
  out.image_root = root;
  std::vector<Category> cats;
  for (int64_t i = 0; i < config.num_categories; ++i)
    cats.push_back({i + 1, style_catalogue()[i].name(), FrequencyBucket::kCommon});
  out.categories = CategoryTable(cats);
  int64_t next_ann = 1;
  char name[64];
  for (int64_t i = 0; i < config.num_images; ++i) {
    const bool dense = unit(rng) < config.dense_fraction;
    RenderedScene scene;
    if (dense) {
      const int64_t target = sample_category(probs, rng);
      scene = render_scene(config, probs, rng, target, dense_count(rng));
    } else {
      scene = render_scene(config, probs, rng);
    }
    std::snprintf(name, sizeof(name), "images/%s_%05lld.png", split.c_str(),
                  static_cast<long long>(i + 1));
    write_png(scene.image, (std::filesystem::path(root) / name).string());
    DatasetRecord r;
    r.id = i + 1;
    r.file_name = name;
    r.width = config.image_size;
    r.height = config.image_size;
    for (auto a : scene.annotations) {
      a.id = next_ann++;
      r.annotations.push_back(a);
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

CorpusConfig default_corpus_config(uint64_t seed) {
  CorpusConfig c;
  c.train.num_images = 2000;
  c.train.dense_fraction = 0.1;
  c.train.seed = seed * 3 + 1;
  c.test = c.train;
  c.test.num_images = 500;
  c.test.seed = seed * 3 + 2;
  c.counting = c.train;
  c.counting.num_images = 100;
  c.counting.dense_fraction = 1.0;
  c.counting.seed = seed * 3 + 3;
  return c;
}

CorpusPaths generate_corpus(const CorpusConfig& config, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Dataset train = generate_synthetic_split(config.train, out_dir, "train");
  Dataset test = generate_synthetic_split(config.test, out_dir, "test");
  Dataset counting = generate_synthetic_split(config.counting, out_dir, "count");
  const CategoryTable table = assign_buckets(train.categories.items(), train.category_counts());
  auto info = [](const SyntheticConfig& c, const std::string& split) {
    return nlohmann::json{{"split", split},
                          {"seed", c.seed},
                          {"num_images", c.num_images},
                          {"zipf_exponent", c.zipf_exponent},
                          {"dense_fraction", c.dense_fraction},
                          {"image_size", c.image_size}};
  };
  train.categories = table;
  test.categories = table;
  counting.categories = table;
  train.info = info(config.train, "train");
  test.info = info(config.test, "test");
  counting.info = info(config.counting, "counting");
  CorpusPaths paths{(std::filesystem::path(out_dir) / "train.json").string(),
                    (std::filesystem::path(out_dir) / "test.json").string(),
                    (std::filesystem::path(out_dir) / "counting.json").string()};
  save_dataset(train, paths.train);
  save_dataset(test, paths.test);
  save_dataset(counting, paths.counting);
  return paths;
}

}  // namespace promptdet
