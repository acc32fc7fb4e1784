#include "ltrp/image_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "ltrp/errors.hpp"

#ifdef LTRP_HAVE_PNG
#include <png.h>
#endif

namespace ltrp {

std::uint8_t to_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw InvalidInput("PNM output needs 1 or 3 channels");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << "\n" << image.width << " " << image.height << "\n255\n";
  std::vector<char> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(to_byte(image.pixels[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  const std::string magic = next_token(in);
  int channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw InvalidInput("unsupported PNM type in " + path.string());
  const int width = std::stoi(next_token(in));
  const int height = std::stoi(next_token(in));
  const int maxval = std::stoi(next_token(in));
  if (maxval != 255) throw InvalidInput("only 8-bit PNM files are supported");
  Image img(height, width, channels, 0.0f, path.stem().string());
  std::vector<unsigned char> bytes(img.pixels.size());
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw InvalidInput("truncated PNM file " + path.string());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

#ifdef LTRP_HAVE_PNG

bool png_supported() { return true; }

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw InvalidInput("PNG output needs 1 or 3 channels");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, image.width, image.height, 8, image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * image.channels);
  for (int r = 0; r < image.height; ++r) {
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = to_byte(image.pixels[r * row.size() + i]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw InvalidInput("cannot read PNG " + path.string());
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw InvalidInput("cannot decode PNG " + path.string());
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width), gray ? 1 : 3, 0.0f, path.stem().string());
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = static_cast<float>(buffer[i]) / 255.0f;
  return out;
}

#else

bool png_supported() { return false; }

void write_png(const std::filesystem::path&, const Image&) {
  throw UnsupportedOperation("built without libpng; use PPM output");
}

Image read_png(const std::filesystem::path&) { throw UnsupportedOperation("built without libpng"); }

#endif

void write_image(const std::filesystem::path& path, const Image& image) {
  if (path.extension() == ".png") write_png(path, image);
  else write_pnm(path, image);
}

Image read_image(const std::filesystem::path& path) {
  if (path.extension() == ".png") return read_png(path);
  return read_pnm(path);
}

}  // namespace ltrp
