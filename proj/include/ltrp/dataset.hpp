#pragma once

// Synthetic shapes dataset: each image carries 1-3 shapes of its class type,
// optionally one distractor shape of a category that is never a class label.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltrp/annotations.hpp"
#include "ltrp/grid.hpp"

namespace ltrp {

enum class ShapeKind { Disc = 0, Rectangle = 1, Triangle = 2, Ring = 3 };
enum class BackgroundMode { Flat, Gradient, Noise, Mixed };

inline constexpr int kShapeKinds = 4;
std::string to_string(ShapeKind k);
std::string to_string(BackgroundMode m);
BackgroundMode parse_background_mode(const std::string& s);

struct SyntheticDatasetSpec {
  int count = 2000;
  int image_size = 32;
  int num_classes = 3;  // classes are the first num_classes shape kinds
  int min_shapes = 1;
  int max_shapes = 3;
  BackgroundMode background = BackgroundMode::Mixed;
  double distractor_prob = 0.0;  // needs num_classes < 4
  double heldout_fraction = 0.2;
  std::string image_format = "ppm";
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticDatasetSpec from_json(const nlohmann::json& j);
};

struct Sample {
  Image image;  // quantized to 8 bits so on-disk and in-memory copies agree
  int label = 0;
  ForegroundAnnotation annotation;
};

struct Dataset {
  std::vector<Category> categories;
  std::vector<Sample> samples;
  int num_classes = 0;
  std::size_t train_count = 0;  // samples [0, train_count) train, the rest are held out

  std::vector<Image> images(std::size_t begin, std::size_t end) const;
  std::vector<Image> train_images() const { return images(0, train_count); }
  std::vector<Image> heldout_images() const { return images(train_count, samples.size()); }
};

/// Exact pixel-center rasterization of one shape.
BinaryMask rasterize_shape(ShapeKind kind, const std::vector<double>& params, int height, int width);

Sample generate_sample(const SyntheticDatasetSpec& spec, int index);
Dataset generate_dataset(const SyntheticDatasetSpec& spec);

/// Writes images/, annotations.json, labels.csv, categories.json and spec.json.
void write_dataset(const Dataset& dataset, const SyntheticDatasetSpec& spec, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<Category> shape_categories(int num_classes);

}  // namespace ltrp
