#include "ltrp/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ltrp/errors.hpp"
#include "ltrp/image_io.hpp"
#include "ltrp/rng.hpp"

namespace ltrp {

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Disc: return "disc";
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Ring: return "ring";
  }
  return "disc";
}

std::string to_string(BackgroundMode m) {
  switch (m) {
    case BackgroundMode::Flat: return "flat";
    case BackgroundMode::Gradient: return "gradient";
    case BackgroundMode::Noise: return "noise";
    case BackgroundMode::Mixed: return "mixed";
  }
  return "mixed";
}

BackgroundMode parse_background_mode(const std::string& s) {
  if (s == "flat") return BackgroundMode::Flat;
  if (s == "gradient") return BackgroundMode::Gradient;
  if (s == "noise") return BackgroundMode::Noise;
  if (s == "mixed") return BackgroundMode::Mixed;
  throw InvalidInput("unknown background mode '" + s + "'");
}

void SyntheticDatasetSpec::validate() const {
  if (count < 1) throw InvalidInput("dataset count must be positive");
  if (image_size < 8) throw InvalidInput("image_size must be at least 8");
  if (num_classes < 1 || num_classes > kShapeKinds) throw InvalidInput("num_classes must be in [1, 4]");
  if (min_shapes < 1 || max_shapes < min_shapes) throw InvalidInput("bad shapes-per-image range");
  if (distractor_prob < 0 || distractor_prob > 1) throw InvalidInput("distractor_prob must be in [0, 1]");
  if (distractor_prob > 0 && num_classes == kShapeKinds)
    throw InvalidInput("distractors need a shape kind outside the class set");
  if (heldout_fraction < 0 || heldout_fraction >= 1) throw InvalidInput("heldout_fraction must be in [0, 1)");
  if (image_format != "ppm" && image_format != "png") throw InvalidInput("image_format must be ppm or png");
}

nlohmann::json SyntheticDatasetSpec::to_json() const {
  return {{"count", count},
          {"image_size", image_size},
          {"num_classes", num_classes},
          {"min_shapes", min_shapes},
          {"max_shapes", max_shapes},
          {"background", ltrp::to_string(background)},
          {"distractor_prob", distractor_prob},
          {"heldout_fraction", heldout_fraction},
          {"image_format", image_format},
          {"seed", seed}};
}

SyntheticDatasetSpec SyntheticDatasetSpec::from_json(const nlohmann::json& j) {
  SyntheticDatasetSpec s;
  s.count = j.value("count", s.count);
  s.image_size = j.value("image_size", s.image_size);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.min_shapes = j.value("min_shapes", s.min_shapes);
  s.max_shapes = j.value("max_shapes", s.max_shapes);
  s.background = parse_background_mode(j.value("background", ltrp::to_string(s.background)));
  s.distractor_prob = j.value("distractor_prob", s.distractor_prob);
  s.heldout_fraction = j.value("heldout_fraction", s.heldout_fraction);
  s.image_format = j.value("image_format", s.image_format);
  s.seed = j.value("seed", s.seed);
  return s;
}

std::vector<Image> Dataset::images(std::size_t begin, std::size_t end) const {
  std::vector<Image> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(samples[i].image);
  return out;
}

std::vector<Category> shape_categories(int num_classes) {
  std::vector<Category> cats;
  for (int k = 0; k < kShapeKinds; ++k)
    cats.push_back(Category{k + 1, to_string(static_cast<ShapeKind>(k)), k < num_classes});
  return cats;
}

namespace {

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

// params: disc {cx, cy, r}; rectangle {x0, y0, x1, y1}; triangle {x0,y0,x1,y1,x2,y2}; ring {cx, cy, r_in, r_out}
BinaryMask rasterize_shape(ShapeKind kind, const std::vector<double>& p, int height, int width) {
  BinaryMask m(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double x = c + 0.5, y = r + 0.5;
      bool in = false;
      switch (kind) {
        case ShapeKind::Disc: {
          const double dx = x - p[0], dy = y - p[1];
          in = dx * dx + dy * dy <= p[2] * p[2];
          break;
        }
        case ShapeKind::Rectangle:
          in = x >= p[0] && x < p[2] && y >= p[1] && y < p[3];
          break;
        case ShapeKind::Triangle: {
          const double e0 = edge(p[0], p[1], p[2], p[3], x, y);
          const double e1 = edge(p[2], p[3], p[4], p[5], x, y);
          const double e2 = edge(p[4], p[5], p[0], p[1], x, y);
          in = (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
          break;
        }
        case ShapeKind::Ring: {
          const double dx = x - p[0], dy = y - p[1];
          const double d2 = dx * dx + dy * dy;
          in = d2 <= p[3] * p[3] && d2 >= p[2] * p[2];
          break;
        }
      }
      m.at(r, c) = in ? 1 : 0;
    }
  }
  return m;
}

namespace {

std::vector<double> random_shape_params(ShapeKind kind, int size, Rng& rng) {
  const double s = size;
  switch (kind) {
    case ShapeKind::Disc: {
      const double r = rng.uniform(0.12, 0.22) * s;
      return {rng.uniform(r, s - r), rng.uniform(r, s - r), r};
    }
    case ShapeKind::Rectangle: {
      const double w = rng.uniform(0.2, 0.45) * s, h = rng.uniform(0.2, 0.45) * s;
      const double x0 = rng.uniform(0, s - w), y0 = rng.uniform(0, s - h);
      return {x0, y0, x0 + w, y0 + h};
    }
    case ShapeKind::Triangle: {
      const double side = rng.uniform(0.3, 0.5) * s;
      const double x0 = rng.uniform(0, s - side), y0 = rng.uniform(0, s - side);
      // apex up or down
      if (rng.uniform() < 0.5) return {x0, y0 + side, x0 + side, y0 + side, x0 + side / 2, y0};
      return {x0, y0, x0 + side, y0, x0 + side / 2, y0 + side};
    }
    case ShapeKind::Ring: {
      const double ro = rng.uniform(0.18, 0.28) * s;
      return {rng.uniform(ro, s - ro), rng.uniform(ro, s - ro), ro * rng.uniform(0.45, 0.65), ro};
    }
  }
  return {};
}

std::array<float, 3> random_color(Rng& rng) {
  // saturated: one channel high, one low, one anywhere
  std::array<float, 3> c{};
  const int hi = static_cast<int>(rng.below(3));
  const int lo = (hi + 1 + static_cast<int>(rng.below(2))) % 3;
  for (int k = 0; k < 3; ++k) c[k] = static_cast<float>(rng.uniform(0.0, 1.0));
  c[hi] = static_cast<float>(rng.uniform(0.8, 1.0));
  c[lo] = static_cast<float>(rng.uniform(0.0, 0.2));
  return c;
}

void paint_background(Image& img, BackgroundMode mode, Rng& rng) {
  if (mode == BackgroundMode::Mixed) mode = static_cast<BackgroundMode>(rng.below(3));
  const float base = static_cast<float>(rng.uniform(0.3, 0.6));
  std::array<float, 3> tint;
  for (auto& t : tint) t = base + static_cast<float>(rng.uniform(-0.05, 0.05));
  const double angle = rng.uniform(0, 2 * 3.14159265358979);
  const double gx = std::cos(angle), gy = std::sin(angle);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      float shift = 0.0f;
      if (mode == BackgroundMode::Gradient)
        shift = static_cast<float>(0.15 * ((c + 0.5) / img.width - 0.5) * 2 * gx +
                                   0.15 * ((r + 0.5) / img.height - 0.5) * 2 * gy);
      else if (mode == BackgroundMode::Noise)
        shift = static_cast<float>(rng.uniform(-0.06, 0.06));
      for (int ch = 0; ch < img.channels; ++ch) img.at(r, c, ch) = std::clamp(tint[ch] + shift, 0.0f, 1.0f);
    }
  }
}

void quantize(Image& img) {
  for (auto& v : img.pixels) v = static_cast<float>(to_byte(v)) / 255.0f;
}

}  // namespace

Sample generate_sample(const SyntheticDatasetSpec& spec, int index) {
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
  const int n = spec.image_size;
  Sample s;
  s.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
  s.image = Image(n, n, 3);
  char id[32];
  std::snprintf(id, sizeof id, "%06d", index);
  s.image.id = id;
  s.annotation.image_id = index;
  s.annotation.height = n;
  s.annotation.width = n;
  paint_background(s.image, spec.background, rng);

  std::vector<ShapeKind> kinds;
  const int shapes = spec.min_shapes + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_shapes - spec.min_shapes + 1)));
  for (int k = 0; k < shapes; ++k) kinds.push_back(static_cast<ShapeKind>(s.label));
  if (spec.distractor_prob > 0 && rng.uniform() < spec.distractor_prob) {
    const int unseen = kShapeKinds - spec.num_classes;
    kinds.push_back(static_cast<ShapeKind>(spec.num_classes + static_cast<int>(rng.below(static_cast<std::uint64_t>(unseen)))));
  }
  for (ShapeKind kind : kinds) {
    const auto params = random_shape_params(kind, n, rng);
    const auto color = random_color(rng);
    BinaryMask mask = rasterize_shape(kind, params, n, n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        if (mask.at(r, c))
          for (int ch = 0; ch < 3; ++ch) s.image.at(r, c, ch) = color[ch];
    ObjectAnnotation obj;
    obj.category_id = static_cast<int>(kind) + 1;
    obj.box = mask_bounds(mask);
    obj.mask = std::move(mask);
    if (obj.box) s.annotation.objects.push_back(std::move(obj));
  }
  quantize(s.image);
  return s;
}

Dataset generate_dataset(const SyntheticDatasetSpec& spec) {
  spec.validate();
  Dataset d;
  d.categories = shape_categories(spec.num_classes);
  d.num_classes = spec.num_classes;
  d.samples.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) d.samples.push_back(generate_sample(spec, i));
  d.train_count = static_cast<std::size_t>(spec.count - round_half_up(spec.heldout_fraction * spec.count));
  return d;
}

void write_dataset(const Dataset& dataset, const SyntheticDatasetSpec& spec, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw InvalidInput("cannot create dataset directory " + dir.string() + ": " + ec.message());

  AnnotationSet set;
  set.categories = dataset.categories;
  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw InvalidInput("cannot write to " + dir.string());
  labels << "image_id,file_name,label,split\n";
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& s = dataset.samples[i];
    const std::string file = "images/" + s.image.id + "." + spec.image_format;
    write_image(dir / file, s.image);
    set.images.push_back(ImageRecord{s.annotation.image_id, file, s.image.width, s.image.height});
    set.objects[s.annotation.image_id] = s.annotation.objects;
    labels << s.annotation.image_id << ',' << file << ',' << s.label << ','
           << (i < dataset.train_count ? "train" : "heldout") << '\n';
  }
  std::ofstream(dir / "annotations.json") << to_json(set).dump(1) << '\n';
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : dataset.categories) cats.push_back({{"id", c.id}, {"name", c.name}, {"learned", c.learned}});
  std::ofstream(dir / "categories.json") << cats.dump(1) << '\n';
  std::ofstream(dir / "spec.json") << spec.to_json().dump(1) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const AnnotationSet set = load_annotations(dir / "annotations.json", dir / "categories.json");
  Dataset d;
  d.categories = set.categories;
  for (const auto& c : d.categories)
    if (c.learned) ++d.num_classes;
  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw InvalidInput("missing labels.csv in " + dir.string());
  std::string line;
  std::getline(labels, line);
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, file, label, split;
    std::getline(ss, id, ',');
    std::getline(ss, file, ',');
    std::getline(ss, label, ',');
    std::getline(ss, split, ',');
    Sample s;
    s.image = read_image(dir / file);
    s.image.id = std::filesystem::path(file).stem().string();
    s.label = std::stoi(label);
    s.annotation = set.for_image(std::stoi(id));
    if (split != "heldout") d.train_count = d.samples.size() + 1;
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace ltrp
