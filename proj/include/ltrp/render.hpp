#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "ltrp/grid.hpp"

namespace ltrp {

enum class RenderMode { Heat, Keep };

RenderMode parse_render_mode(const std::string& s);

/// Per-cell diverging colors (blue low, gray middle, red high) of min-max
/// normalized scores. A constant map is all 0.5 gray.
Image heat_overlay(std::span<const double> scores, const GridSpec& grid);

/// Image blended with the heat overlay; `alpha` is the overlay weight.
Image render_heat(const Image& image, std::span<const double> scores, const GridSpec& grid, double alpha = 0.6);

/// Retained patches at full brightness with a green 1-pixel outline; the rest dimmed to 30%.
Image render_keep(const Image& image, std::span<const int> kept, const GridSpec& grid);

/// Writes PPM, or PNG when the extension asks for it and PNG support is built in.
void save_render(const std::filesystem::path& path, const Image& rendered);

}  // namespace ltrp
