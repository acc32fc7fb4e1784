#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "ltrp/errors.hpp"
#include "ltrp/image_io.hpp"
#include "ltrp/render.hpp"

using namespace ltrp;
namespace fs = std::filesystem;

namespace {

const GridSpec kGrid{4, 3, 3, 3};

Image tiny_image() {
  Image img(12, 12, 3);
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 12; ++c) {
      img.at(r, c, 0) = static_cast<float>(r) / 11.0f;
      img.at(r, c, 1) = static_cast<float>(c) / 11.0f;
      img.at(r, c, 2) = (r + c) % 3 == 0 ? 1.0f : 0.25f;
    }
  return img;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Set LTRP_UPDATE_GOLDEN=1 to regenerate the stored references.
void check_golden(const Image& rendered, const std::string& name) {
  const fs::path golden = fs::path(LTRP_TEST_DATA) / name;
  if (std::getenv("LTRP_UPDATE_GOLDEN")) write_image(golden, rendered);
  REQUIRE(fs::exists(golden));
  const fs::path tmp = fs::temp_directory_path() / ("ltrp_render_" + name);
  save_render(tmp, rendered);
  CHECK(slurp(tmp) == slurp(golden));
  fs::remove(tmp);
}

}  // namespace

TEST_CASE("constant scores give a uniform mid-gray overlay") {
  const std::vector<double> scores(9, 3.0);
  const Image overlay = heat_overlay(scores, kGrid);
  for (float v : overlay.pixels) CHECK(v == 0.5f);
}

TEST_CASE("heat overlay runs from blue to red") {
  std::vector<double> scores{0, 1, 2, 3, 4, 5, 6, 7, 8};
  const Image overlay = heat_overlay(scores, kGrid);
  CHECK(overlay.at(0, 0, 2) > overlay.at(0, 0, 0));  // lowest cell is blue
  CHECK(overlay.at(11, 11, 0) > overlay.at(11, 11, 2));  // highest is red
  CHECK(overlay.at(5, 5, 0) == 0.5f);  // middle score
  // scaling and shifting the scores changes nothing
  for (double& s : scores) s = 3 * s - 7;
  CHECK(heat_overlay(scores, kGrid).pixels == overlay.pixels);
}

TEST_CASE("keep mode with every patch kept is the image plus outlines") {
  const Image img = tiny_image();
  const std::vector<int> all{0, 1, 2, 3, 4, 5, 6, 7, 8};
  const Image out = render_keep(img, all, kGrid);
  for (int r = 0; r < 12; ++r)
    for (int c = 0; c < 12; ++c) {
      const bool border = r % 4 == 0 || r % 4 == 3 || c % 4 == 0 || c % 4 == 3;
      for (int ch = 0; ch < 3; ++ch) {
        if (border) CHECK(out.at(r, c, ch) == (ch == 1 ? 1.0f : 0.0f));
        else CHECK(out.at(r, c, ch) == img.at(r, c, ch));
      }
    }
}

TEST_CASE("keep mode dims dropped patches") {
  const Image img = tiny_image();
  const std::vector<int> kept{4};
  const Image out = render_keep(img, kept, kGrid);
  CHECK(out.at(1, 1, 0) == doctest::Approx(0.3f * img.at(1, 1, 0)));
  CHECK(out.at(5, 5, 2) == img.at(5, 5, 2));
  CHECK_THROWS_AS(render_keep(img, std::vector<int>{9}, kGrid), InvalidInput);
}

TEST_CASE("golden renders") {
  const Image img = tiny_image();
  const std::vector<double> scores{0.1, 0.9, 0.4, 0.0, 0.7, 0.3, 0.2, 0.8, 0.5};
  check_golden(render_heat(img, scores, kGrid), "golden_heat.ppm");
  check_golden(render_keep(img, std::vector<int>{1, 4, 7, 8}, kGrid), "golden_keep.ppm");
}
