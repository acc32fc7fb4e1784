#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "ltrp/errors.hpp"
#include "ltrp/grid.hpp"
#include "ltrp/rng.hpp"

using namespace ltrp;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed) {
  Image img(h, w, c);
  Rng rng(seed);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("patchify orders patches row-major with channels innermost") {
  Image img(4, 4, 1);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) img.at(r, c, 0) = static_cast<float>(r * 4 + c) / 16.0f;
  const GridSpec grid = GridSpec::for_image(4, 4, 1, 2);
  const Patches p = patchify(img, grid);
  REQUIRE(p.rows() == 4);
  REQUIRE(p.cols() == 4);
  // pixel indices by hand: patch 0 = {0,1,4,5}, patch 1 = {2,3,6,7}, patch 3 = {10,11,14,15}
  const int expected[3][4] = {{0, 1, 4, 5}, {2, 3, 6, 7}, {10, 11, 14, 15}};
  const int patch_ids[3] = {0, 1, 3};
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 4; ++j) CHECK(p(patch_ids[k], j) == static_cast<float>(expected[k][j]) / 16.0f);

  const Image back = unpatchify(p, grid);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("channels are innermost inside a patch") {
  Image img(2, 4, 3);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i) / 24.0f;
  const Patches p = patchify(img, GridSpec::for_image(2, 4, 3, 2));
  REQUIRE(p.rows() == 2);
  // patch 0 covers (0,0),(0,1),(1,0),(1,1); each pixel contributes r,g,b in turn
  const int flat[12] = {0, 1, 2, 3, 4, 5, 12, 13, 14, 15, 16, 17};
  for (int j = 0; j < 12; ++j) CHECK(p(0, j) == img.pixels[flat[j]]);
}

TEST_CASE("full-side patch gives a single flattened patch") {
  // GridSpec requires two patches, so a 2x1 grid of full-height patches is the smallest case.
  const Image img = random_image(4, 8, 3, 7);
  const GridSpec grid = GridSpec::for_image(4, 8, 3, 4);
  const Patches p = patchify(img, grid);
  CHECK(p.rows() == 2);
  CHECK(p.cols() == 48);
  CHECK(unpatchify(p, grid).pixels == img.pixels);
}

TEST_CASE("patchify/unpatchify round trip is bit exact") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Image img = random_image(12, 8, 3, seed);
    const GridSpec grid = GridSpec::for_image(12, 8, 3, 4);
    CHECK(unpatchify(patchify(img, grid), grid).pixels == img.pixels);
  }
}

TEST_CASE("unpatchify of zero patches is a zero image") {
  const GridSpec grid{2, 3, 3, 3};
  const Image img = unpatchify(Patches::Zero(9, 12), grid);
  for (float v : img.pixels) CHECK(v == 0.0f);
}

TEST_CASE("dimension errors are rejected") {
  const Image img = random_image(6, 6, 3, 1);
  CHECK_THROWS_AS(GridSpec::for_image(6, 6, 3, 4), InvalidInput);
  CHECK_THROWS_AS(patchify(img, GridSpec{2, 2, 2, 3}), InvalidInput);
  const GridSpec grid{2, 3, 3, 3};
  CHECK_THROWS_AS(unpatchify(Patches::Zero(8, 12), grid), InvalidInput);
  CHECK_THROWS_AS(unpatchify(Patches::Zero(9, 11), grid), InvalidInput);
}

TEST_CASE("sample_mask visible counts") {
  CHECK(sample_mask(GridSpec{16, 14, 14, 3}, 0.9, 3).visible.size() == 20);
  CHECK(sample_mask(GridSpec{1, 4, 4, 1}, 0.75, 3).visible.size() == 4);
  CHECK(sample_mask(GridSpec{1, 2, 2, 1}, 0.99, 3).visible.size() == 1);
  CHECK(visible_count(64, 0.9) == 6);
  CHECK_THROWS_AS(sample_mask(GridSpec{1, 4, 4, 1}, 0.0, 0), InvalidInput);
  CHECK_THROWS_AS(sample_mask(GridSpec{1, 4, 4, 1}, 1.0, 0), InvalidInput);
}

TEST_CASE("sample_mask partitions the grid and is deterministic") {
  const GridSpec grid{1, 6, 5, 1};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const MaskPlan a = sample_mask(grid, 0.6, seed);
    const MaskPlan b = sample_mask(grid, 0.6, seed);
    CHECK(a == b);
    CHECK_NOTHROW(validate_plan(a, grid));
  }
}

TEST_CASE("sample_mask is uniform over positions") {
  const GridSpec grid{1, 4, 4, 1};
  const double ratio = 0.75;
  const int seeds = 20000;
  std::vector<int> counts(16, 0);
  for (int s = 0; s < seeds; ++s)
    for (int v : sample_mask(grid, ratio, static_cast<std::uint64_t>(s)).visible) ++counts[v];
  const double p = 1.0 - ratio;
  const double sigma = std::sqrt(seeds * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - seeds * p) < 3 * sigma);
}

TEST_CASE("remove_patch moves one visible index to the masked set") {
  MaskPlan plan;
  plan.visible = {2, 5, 9};
  plan.masked = {0, 1, 3, 4, 6, 7, 8};
  const MaskPlan before = plan;
  const MaskPlan out = remove_patch(plan, 1);
  CHECK(out.visible == std::vector<int>{2, 9});
  CHECK(out.masked == std::vector<int>{0, 1, 3, 4, 5, 6, 7, 8});
  CHECK(plan == before);
  CHECK_THROWS_AS(remove_patch(plan, 3), InvalidInput);
  CHECK_THROWS_AS(remove_patch(plan, -1), InvalidInput);

  MaskPlan single;
  single.visible = {3};
  single.masked = {0, 1, 2};
  const MaskPlan empty = remove_patch(single, 0);
  CHECK(empty.visible.empty());
  CHECK(empty.masked == std::vector<int>{0, 1, 2, 3});

  const MaskPlan big = sample_mask(GridSpec{1, 5, 5, 1}, 0.5, 11);
  for (int i = 0; i < big.n_visible(); ++i) CHECK(remove_patch(big, i).n_visible() == big.n_visible() - 1);
}

TEST_CASE("validate_image rejects out-of-range pixels") {
  Image img(2, 2, 1, 0.5f);
  CHECK_NOTHROW(validate_image(img));
  img.pixels[1] = 1.5f;
  CHECK_THROWS_AS(validate_image(img), InvalidInput);
  img.pixels[1] = std::nanf("");
  CHECK_THROWS_AS(validate_image(img), InvalidInput);
}
