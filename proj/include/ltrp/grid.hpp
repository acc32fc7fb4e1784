#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ltrp {

/// Row-major image with channels innermost; values are expected in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;
  std::string id;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f, std::string image_id = {})
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill),
        id(std::move(image_id)) {}

  std::size_t index(int r, int c, int ch) const {
    return (static_cast<std::size_t>(r) * width + c) * channels + ch;
  }
  float& at(int r, int c, int ch) { return pixels[index(r, c, ch)]; }
  float at(int r, int c, int ch) const { return pixels[index(r, c, ch)]; }
  std::size_t size() const { return pixels.size(); }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

/// Throws InvalidInput if any pixel is non-finite or outside [0, 1].
void validate_image(const Image& image);

/// One flattened patch per row.
using Patches = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GridSpec {
  int patch_size = 1;
  int rows = 0;
  int cols = 0;
  int channels = 3;

  int n_total() const { return rows * cols; }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int image_height() const { return rows * patch_size; }
  int image_width() const { return cols * patch_size; }
  int row_of(int index) const { return index / cols; }
  int col_of(int index) const { return index % cols; }

  void validate() const;

  /// Grid covering an image of the given size. Dimensions must divide evenly.
  static GridSpec for_image(int height, int width, int channels, int patch_size);

  bool operator==(const GridSpec&) const = default;
};

struct MaskPlan {
  std::vector<int> visible;
  std::vector<int> masked;
  double masking_ratio = 0.0;
  std::uint64_t seed = 0;

  int n_visible() const { return static_cast<int>(visible.size()); }
  bool operator==(const MaskPlan&) const = default;
};

/// floor(x + 0.5) with a tiny guard against products such as 0.1 * 5 landing
/// just below a half.
long round_half_up(double x);

/// max(1, round_half_up((1 - ratio) * n_total)).
int visible_count(int n_total, double masking_ratio);

/// Patch i holds grid cell (i / cols, i % cols); within a patch, pixels are
/// row-major with channels innermost.
Patches patchify(const Image& image, const GridSpec& grid);

Image unpatchify(const Patches& patches, const GridSpec& grid, std::string id = {});

/// Copies a single patch into a row vector without patchifying the full image.
Eigen::RowVectorXf extract_patch(const Image& image, const GridSpec& grid, int index);

void write_patch(Image& image, const GridSpec& grid, int index, const float* values);

MaskPlan sample_mask(const GridSpec& grid, double masking_ratio, std::uint64_t seed);

/// Plan with the patch at visible-set position `position` moved to the masked set.
MaskPlan remove_patch(const MaskPlan& plan, int position);

/// Plan with every patch visible.
MaskPlan full_plan(const GridSpec& grid);

/// Checks that the plan partitions the grid and both lists are strictly increasing.
void validate_plan(const MaskPlan& plan, const GridSpec& grid);

}  // namespace ltrp
