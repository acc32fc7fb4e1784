#include "ltrp/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ltrp/errors.hpp"
#include "ltrp/image_io.hpp"

namespace ltrp {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

const Category* AnnotationSet::category(int id) const {
  for (const auto& c : categories)
    if (c.id == id) return &c;
  return nullptr;
}

ForegroundAnnotation AnnotationSet::for_image(int image_id) const {
  ForegroundAnnotation fa;
  fa.image_id = image_id;
  for (const auto& rec : images) {
    if (rec.id == image_id) {
      fa.height = rec.height;
      fa.width = rec.width;
    }
  }
  if (auto it = objects.find(image_id); it != objects.end()) fa.objects = it->second;
  return fa;
}

CategoryFilter parse_category_filter(const std::string& s) {
  if (s == "all") return CategoryFilter::All;
  if (s == "learned") return CategoryFilter::Learned;
  if (s == "unseen") return CategoryFilter::Unseen;
  throw InvalidInput("unknown category filter '" + s + "'");
}

std::string to_string(CategoryFilter f) {
  switch (f) {
    case CategoryFilter::All: return "all";
    case CategoryFilter::Learned: return "learned";
    case CategoryFilter::Unseen: return "unseen";
  }
  return "all";
}

ForegroundSource parse_foreground_source(const std::string& s) {
  if (s == "auto") return ForegroundSource::Auto;
  if (s == "boxes") return ForegroundSource::Boxes;
  if (s == "masks") return ForegroundSource::Masks;
  throw InvalidInput("unknown foreground source '" + s + "'");
}

std::string to_string(ForegroundSource s) {
  switch (s) {
    case ForegroundSource::Auto: return "auto";
    case ForegroundSource::Boxes: return "boxes";
    case ForegroundSource::Masks: return "masks";
  }
  return "auto";
}

std::vector<std::uint32_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::uint32_t> counts;
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int c = 0; c < mask.width; ++c) {
    for (int r = 0; r < mask.height; ++r) {
      const std::uint8_t v = mask.at(r, c) ? 1 : 0;
      if (v != current) {
        counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  counts.push_back(run);
  return counts;
}

BinaryMask rle_decode(const std::vector<std::uint32_t>& counts, int height, int width) {
  BinaryMask mask(height, width);
  const std::size_t total = static_cast<std::size_t>(height) * width;
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : counts) {
    if (pos + run > total) throw InvalidInput("RLE counts exceed the mask size");
    for (std::uint32_t k = 0; k < run; ++k, ++pos) {
      const std::size_t r = pos % height, c = pos / height;
      mask.at(static_cast<int>(r), static_cast<int>(c)) = value;
    }
    value ^= 1;
  }
  if (pos != total) throw InvalidInput("RLE counts do not cover the mask");
  return mask;
}

std::string rle_to_string(const std::vector<std::uint32_t>& counts) {
  std::string s;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    long x = static_cast<long>(counts[i]);
    if (i > 2) x -= static_cast<long>(counts[i - 2]);
    bool more = true;
    while (more) {
      char c = static_cast<char>(x & 0x1f);
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      s.push_back(static_cast<char>(c + 48));
    }
  }
  return s;
}

std::vector<std::uint32_t> rle_from_string(const std::string& s) {
  std::vector<std::uint32_t> counts;
  std::size_t p = 0;
  while (p < s.size()) {
    long x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw InvalidInput("truncated compressed RLE string");
      const long c = s[p] - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1L << (5 * k);
    }
    if (counts.size() > 2) x += static_cast<long>(counts[counts.size() - 2]);
    if (x < 0) throw InvalidInput("negative run in compressed RLE string");
    counts.push_back(static_cast<std::uint32_t>(x));
  }
  return counts;
}

BinaryMask rasterize_box(const Box& box, int height, int width) {
  BinaryMask mask(height, width);
  const int c0 = std::max(0, static_cast<int>(std::ceil(box.x - 0.5)));
  const int c1 = std::min(width, static_cast<int>(std::ceil(box.x + box.w - 0.5)));
  const int r0 = std::max(0, static_cast<int>(std::ceil(box.y - 0.5)));
  const int r1 = std::min(height, static_cast<int>(std::ceil(box.y + box.h - 0.5)));
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) mask.at(r, c) = 1;
  return mask;
}

std::optional<Box> mask_bounds(const BinaryMask& mask) {
  int r0 = mask.height, r1 = -1, c0 = mask.width, c1 = -1;
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c)
      if (mask.at(r, c)) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  if (r1 < 0) return std::nullopt;
  return Box{static_cast<double>(c0), static_cast<double>(r0), static_cast<double>(c1 - c0 + 1),
             static_cast<double>(r1 - r0 + 1)};
}

namespace {

BinaryMask parse_segmentation(const nlohmann::json& seg, int height, int width) {
  const auto size = seg.at("size");
  const int h = size.at(0).get<int>(), w = size.at(1).get<int>();
  if (h != height || w != width) throw InvalidInput("segmentation size does not match the image");
  const auto& counts = seg.at("counts");
  if (counts.is_string()) return rle_decode(rle_from_string(counts.get<std::string>()), h, w);
  return rle_decode(counts.get<std::vector<std::uint32_t>>(), h, w);
}

BinaryMask load_mask_file(const std::filesystem::path& path, int height, int width) {
  const Image img = read_image(path);
  if (img.height != height || img.width != width) throw InvalidInput("mask file size mismatch: " + path.string());
  BinaryMask mask(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) mask.at(r, c) = img.at(r, c, 0) > 0.5f ? 1 : 0;
  return mask;
}

}  // namespace

AnnotationSet parse_annotations(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  AnnotationSet set;
  for (const auto& c : doc.value("categories", nlohmann::json::array()))
    set.categories.push_back(Category{c.at("id").get<int>(), c.value("name", std::string{}), c.value("learned", true)});
  std::map<int, std::pair<int, int>> dims;
  for (const auto& im : doc.at("images")) {
    ImageRecord rec{im.at("id").get<int>(), im.value("file_name", std::string{}), im.at("width").get<int>(),
                    im.at("height").get<int>()};
    dims[rec.id] = {rec.height, rec.width};
    set.images.push_back(rec);
  }
  for (const auto& a : doc.value("annotations", nlohmann::json::array())) {
    const int image_id = a.at("image_id").get<int>();
    auto it = dims.find(image_id);
    if (it == dims.end()) throw InvalidInput("annotation references unknown image " + std::to_string(image_id));
    const auto [h, w] = it->second;
    ObjectAnnotation obj;
    obj.category_id = a.value("category_id", 0);
    if (a.contains("bbox")) {
      const auto& b = a["bbox"];
      Box box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
      if (box.w < 0 || box.h < 0 || box.x < 0 || box.y < 0 || box.x + box.w > w + 1e-9 || box.y + box.h > h + 1e-9)
        throw InvalidInput("bounding box outside image " + std::to_string(image_id));
      obj.box = box;
    }
    if (a.contains("mask_file")) {
      obj.mask = load_mask_file(base_dir / a["mask_file"].get<std::string>(), h, w);
    } else if (a.contains("segmentation") && a["segmentation"].is_object()) {
      obj.mask = parse_segmentation(a["segmentation"], h, w);
    }
    // polygon segmentations are expected pre-rasterized into mask files; the box is used otherwise
    set.objects[image_id].push_back(std::move(obj));
  }
  return set;
}

AnnotationSet load_annotations(const std::filesystem::path& path,
                               const std::optional<std::filesystem::path>& categories_file) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open annotations " + path.string());
  AnnotationSet set = parse_annotations(nlohmann::json::parse(in), path.parent_path());
  if (categories_file) {
    std::ifstream cin(*categories_file);
    if (!cin) throw InvalidInput("cannot open categories file " + categories_file->string());
    const auto doc = nlohmann::json::parse(cin);
    const auto& list = doc.is_array() ? doc : doc.at("categories");
    for (const auto& c : list) {
      const int id = c.at("id").get<int>();
      auto it = std::find_if(set.categories.begin(), set.categories.end(), [&](const Category& k) { return k.id == id; });
      if (it == set.categories.end()) {
        set.categories.push_back(Category{id, c.value("name", std::string{}), c.value("learned", true)});
      } else {
        it->learned = c.value("learned", it->learned);
        if (c.contains("name")) it->name = c["name"].get<std::string>();
      }
    }
  }
  return set;
}

nlohmann::json to_json(const AnnotationSet& set) {
  nlohmann::json doc;
  doc["categories"] = nlohmann::json::array();
  for (const auto& c : set.categories)
    doc["categories"].push_back({{"id", c.id}, {"name", c.name}, {"learned", c.learned}});
  doc["images"] = nlohmann::json::array();
  for (const auto& im : set.images)
    doc["images"].push_back({{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
  doc["annotations"] = nlohmann::json::array();
  int ann_id = 1;
  for (const auto& [image_id, objs] : set.objects) {
    for (const auto& o : objs) {
      nlohmann::json a{{"id", ann_id++}, {"image_id", image_id}, {"category_id", o.category_id}};
      if (o.box) a["bbox"] = {o.box->x, o.box->y, o.box->w, o.box->h};
      if (o.mask) {
        a["segmentation"] = {{"size", {o.mask->height, o.mask->width}}, {"counts", rle_encode(*o.mask)}};
        a["area"] = o.mask->count();
      }
      doc["annotations"].push_back(std::move(a));
    }
  }
  return doc;
}

}  // namespace ltrp
