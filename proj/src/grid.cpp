#include "ltrp/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ltrp/errors.hpp"
#include "ltrp/rng.hpp"

namespace ltrp {

void validate_image(const Image& image) {
  if (image.height <= 0 || image.width <= 0 || image.channels <= 0)
    throw InvalidInput("image has empty dimensions");
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * image.channels)
    throw InvalidInput("image pixel buffer does not match its dimensions");
  for (float v : image.pixels) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw InvalidInput("image '" + image.id + "' has a pixel outside [0, 1]");
  }
}

void GridSpec::validate() const {
  if (patch_size < 1) throw InvalidInput("patch_size must be at least 1");
  if (rows < 1 || cols < 1 || rows * cols < 2) throw InvalidInput("grid needs at least two patches");
  if (channels < 1) throw InvalidInput("grid needs at least one channel");
}

GridSpec GridSpec::for_image(int height, int width, int channels, int patch_size) {
  if (patch_size < 1) throw InvalidInput("patch_size must be at least 1");
  if (height % patch_size != 0 || width % patch_size != 0)
    throw InvalidInput("image size " + std::to_string(height) + "x" + std::to_string(width) +
                       " is not divisible by patch size " + std::to_string(patch_size));
  return GridSpec{patch_size, height / patch_size, width / patch_size, channels};
}

long round_half_up(double x) { return static_cast<long>(std::floor(x + 0.5 + 1e-9)); }

int visible_count(int n_total, double masking_ratio) {
  return static_cast<int>(std::max<long>(1, round_half_up((1.0 - masking_ratio) * n_total)));
}

namespace {

void check_image_matches(const Image& image, const GridSpec& grid) {
  if (image.height != grid.image_height() || image.width != grid.image_width() ||
      image.channels != grid.channels)
    throw InvalidInput("image '" + image.id + "' dimensions do not match the grid");
  if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * image.channels)
    throw InvalidInput("image pixel buffer does not match its dimensions");
}

}  // namespace

Eigen::RowVectorXf extract_patch(const Image& image, const GridSpec& grid, int index) {
  Eigen::RowVectorXf out(grid.patch_dim());
  const int p = grid.patch_size;
  const int r0 = grid.row_of(index) * p;
  const int c0 = grid.col_of(index) * p;
  const int row_len = p * grid.channels;
  for (int dr = 0; dr < p; ++dr) {
    const float* src = &image.pixels[image.index(r0 + dr, c0, 0)];
    std::copy(src, src + row_len, out.data() + dr * row_len);
  }
  return out;
}

void write_patch(Image& image, const GridSpec& grid, int index, const float* values) {
  const int p = grid.patch_size;
  const int r0 = grid.row_of(index) * p;
  const int c0 = grid.col_of(index) * p;
  const int row_len = p * grid.channels;
  for (int dr = 0; dr < p; ++dr)
    std::copy(values + dr * row_len, values + (dr + 1) * row_len, &image.pixels[image.index(r0 + dr, c0, 0)]);
}

Patches patchify(const Image& image, const GridSpec& grid) {
  grid.validate();
  check_image_matches(image, grid);
  Patches out(grid.n_total(), grid.patch_dim());
  for (int i = 0; i < grid.n_total(); ++i) out.row(i) = extract_patch(image, grid, i);
  return out;
}

Image unpatchify(const Patches& patches, const GridSpec& grid, std::string id) {
  grid.validate();
  if (patches.rows() != grid.n_total())
    throw InvalidInput("expected " + std::to_string(grid.n_total()) + " patches, got " +
                       std::to_string(patches.rows()));
  if (patches.cols() != grid.patch_dim())
    throw InvalidInput("expected patch length " + std::to_string(grid.patch_dim()) + ", got " +
                       std::to_string(patches.cols()));
  Image image(grid.image_height(), grid.image_width(), grid.channels, 0.0f, std::move(id));
  for (int i = 0; i < grid.n_total(); ++i) write_patch(image, grid, i, patches.row(i).data());
  return image;
}

MaskPlan sample_mask(const GridSpec& grid, double masking_ratio, std::uint64_t seed) {
  grid.validate();
  if (!(masking_ratio > 0.0 && masking_ratio < 1.0))
    throw InvalidInput("masking ratio must lie in (0, 1)");
  const int n_total = grid.n_total();
  const int n_visible = visible_count(n_total, masking_ratio);

  // Partial Fisher-Yates: the first n_visible slots become the visible set.
  std::vector<int> order(n_total);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = 0; i < n_visible; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_total - i)));
    std::swap(order[i], order[j]);
  }
  MaskPlan plan;
  plan.masking_ratio = masking_ratio;
  plan.seed = seed;
  plan.visible.assign(order.begin(), order.begin() + n_visible);
  plan.masked.assign(order.begin() + n_visible, order.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  return plan;
}

MaskPlan remove_patch(const MaskPlan& plan, int position) {
  if (position < 0 || position >= plan.n_visible())
    throw InvalidInput("visible position " + std::to_string(position) + " out of range [0, " +
                       std::to_string(plan.n_visible()) + ")");
  MaskPlan out = plan;
  const int index = out.visible[position];
  out.visible.erase(out.visible.begin() + position);
  out.masked.insert(std::lower_bound(out.masked.begin(), out.masked.end(), index), index);
  return out;
}

MaskPlan full_plan(const GridSpec& grid) {
  MaskPlan plan;
  plan.visible.resize(grid.n_total());
  std::iota(plan.visible.begin(), plan.visible.end(), 0);
  return plan;
}

void validate_plan(const MaskPlan& plan, const GridSpec& grid) {
  std::vector<int> seen(grid.n_total(), 0);
  auto check_list = [&](const std::vector<int>& list, const char* name) {
    for (std::size_t k = 0; k < list.size(); ++k) {
      const int v = list[k];
      if (v < 0 || v >= grid.n_total())
        throw InvalidInput(std::string(name) + " index out of grid range");
      if (k > 0 && list[k - 1] >= v)
        throw InvalidInput(std::string(name) + " indices must be strictly increasing");
      ++seen[v];
    }
  };
  check_list(plan.visible, "visible");
  check_list(plan.masked, "masked");
  for (int v : seen)
    if (v != 1) throw InvalidInput("visible and masked sets must partition the grid");
}

}  // namespace ltrp
