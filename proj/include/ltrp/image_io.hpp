#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ltrp/grid.hpp"

namespace ltrp {

/// 8-bit quantization used for every on-disk image: round(v * 255), clamped.
std::uint8_t to_byte(float v);

/// Binary PPM (P6) for 3 channels, PGM (P5) for 1.
void write_pnm(const std::filesystem::path& path, const Image& image);
Image read_pnm(const std::filesystem::path& path);

bool png_supported();
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Dispatches on the file extension (.ppm/.pgm/.pnm or .png).
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);

}  // namespace ltrp
