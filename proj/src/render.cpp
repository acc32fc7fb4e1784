#include "ltrp/render.hpp"

#include <algorithm>
#include <array>

#include "ltrp/errors.hpp"
#include "ltrp/image_io.hpp"

namespace ltrp {

RenderMode parse_render_mode(const std::string& s) {
  if (s == "heat") return RenderMode::Heat;
  if (s == "keep") return RenderMode::Keep;
  throw InvalidInput("unknown render mode '" + s + "'");
}

namespace {

std::array<float, 3> diverging(double t) {
  constexpr std::array<float, 3> blue{0.23f, 0.30f, 0.75f}, gray{0.5f, 0.5f, 0.5f}, red{0.71f, 0.02f, 0.15f};
  const auto& [from, to] = t < 0.5 ? std::pair{blue, gray} : std::pair{gray, red};
  const float u = static_cast<float>(t < 0.5 ? 2 * t : 2 * t - 1);
  return {from[0] + u * (to[0] - from[0]), from[1] + u * (to[1] - from[1]), from[2] + u * (to[2] - from[2])};
}

float channel(const Image& img, int r, int c, int ch) { return img.at(r, c, img.channels == 1 ? 0 : ch); }

}  // namespace

Image heat_overlay(std::span<const double> scores, const GridSpec& grid) {
  if (static_cast<int>(scores.size()) != grid.n_total()) throw InvalidInput("score map does not match the grid");
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  Image out(grid.image_height(), grid.image_width(), 3);
  for (int i = 0; i < grid.n_total(); ++i) {
    const double t = *hi > *lo ? (scores[i] - *lo) / (*hi - *lo) : 0.5;
    const auto color = diverging(t);
    const int r0 = grid.row_of(i) * grid.patch_size, c0 = grid.col_of(i) * grid.patch_size;
    for (int r = r0; r < r0 + grid.patch_size; ++r)
      for (int c = c0; c < c0 + grid.patch_size; ++c)
        for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = color[ch];
  }
  return out;
}

Image render_heat(const Image& image, std::span<const double> scores, const GridSpec& grid, double alpha) {
  if (image.height != grid.image_height() || image.width != grid.image_width())
    throw InvalidInput("image does not match the grid");
  const Image overlay = heat_overlay(scores, grid);
  Image out(image.height, image.width, 3, 0.0f, image.id);
  const auto a = static_cast<float>(alpha);
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = (1 - a) * channel(image, r, c, ch) + a * overlay.at(r, c, ch);
  return out;
}

Image render_keep(const Image& image, std::span<const int> kept, const GridSpec& grid) {
  if (image.height != grid.image_height() || image.width != grid.image_width())
    throw InvalidInput("image does not match the grid");
  std::vector<char> keep(static_cast<std::size_t>(grid.n_total()), 0);
  for (int k : kept) {
    if (k < 0 || k >= grid.n_total()) throw InvalidInput("kept index out of range");
    keep[static_cast<std::size_t>(k)] = 1;
  }
  Image out(image.height, image.width, 3, 0.0f, image.id);
  const int p = grid.patch_size;
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const int idx = (r / p) * grid.cols + c / p;
      const bool on = keep[static_cast<std::size_t>(idx)];
      const bool border = r % p == 0 || r % p == p - 1 || c % p == 0 || c % p == p - 1;
      for (int ch = 0; ch < 3; ++ch) {
        if (on && border) out.at(r, c, ch) = ch == 1 ? 1.0f : 0.0f;
        else out.at(r, c, ch) = on ? channel(image, r, c, ch) : 0.3f * channel(image, r, c, ch);
      }
    }
  }
  return out;
}

void save_render(const std::filesystem::path& path, const Image& rendered) {
  if (path.extension() == ".png" && !png_supported()) {
    std::filesystem::path alt = path;
    write_image(alt.replace_extension(".ppm"), rendered);
    return;
  }
  write_image(path, rendered);
}

}  // namespace ltrp
