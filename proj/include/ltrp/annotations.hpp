#pragma once

// COCO-style annotation subset: images, boxes, binary masks (RLE or a mask
// file next to the annotation JSON) and categories carrying a "learned" flag.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ltrp {

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

/// Pixel box in COCO order: left, top, width, height.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;
};

struct ObjectAnnotation {
  int category_id = 0;
  std::optional<Box> box;
  std::optional<BinaryMask> mask;
};

struct Category {
  int id = 0;
  std::string name;
  bool learned = true;
};

struct ForegroundAnnotation {
  int image_id = 0;
  int height = 0;
  int width = 0;
  std::vector<ObjectAnnotation> objects;
};

struct ImageRecord {
  int id = 0;
  std::string file_name;
  int width = 0;
  int height = 0;
};

struct AnnotationSet {
  std::vector<Category> categories;
  std::vector<ImageRecord> images;
  std::map<int, std::vector<ObjectAnnotation>> objects;  // by image id

  const Category* category(int id) const;
  ForegroundAnnotation for_image(int image_id) const;
};

enum class CategoryFilter { All, Learned, Unseen };
enum class ForegroundSource { Auto, Boxes, Masks };

CategoryFilter parse_category_filter(const std::string& s);
std::string to_string(CategoryFilter f);
ForegroundSource parse_foreground_source(const std::string& s);
std::string to_string(ForegroundSource s);

/// Column-major run lengths starting with a zero run, as in COCO uncompressed RLE.
std::vector<std::uint32_t> rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const std::vector<std::uint32_t>& counts, int height, int width);

/// COCO compressed RLE string codec.
std::string rle_to_string(const std::vector<std::uint32_t>& counts);
std::vector<std::uint32_t> rle_from_string(const std::string& s);

/// Pixel (r, c) is covered when its center (c + 0.5, r + 0.5) lies in [x, x+w) x [y, y+h).
BinaryMask rasterize_box(const Box& box, int height, int width);

/// Tight bounding box of the set pixels; nullopt for an empty mask.
std::optional<Box> mask_bounds(const BinaryMask& mask);

/// Parses a COCO-style document. Mask files referenced by "mask_file" are
/// resolved against `base_dir`.
AnnotationSet parse_annotations(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});

/// Loads annotations; a separate categories file, when given, overrides the
/// "learned" flags by category id.
AnnotationSet load_annotations(const std::filesystem::path& path,
                               const std::optional<std::filesystem::path>& categories_file = std::nullopt);

nlohmann::json to_json(const AnnotationSet& set);

}  // namespace ltrp
