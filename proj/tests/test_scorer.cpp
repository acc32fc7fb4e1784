#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ltrp/errors.hpp"
#include "ltrp/rng.hpp"
#include "ltrp/scorer.hpp"

using namespace ltrp;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed) {
  Image img(h, w, c);
  Rng rng(seed);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

// Single-window SSIM written out from the definition.
double ssim_window(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double va = 0, vb = 0, cov = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    va += (a[i] - ma) * (a[i] - ma) / n;
    vb += (b[i] - mb) * (b[i] - mb) / n;
    cov += (a[i] - ma) * (b[i] - mb) / n;
  }
  const double c1 = 1e-4, c2 = 9e-4;
  return (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
}

}  // namespace

TEST_CASE("distance worked examples") {
  const Image zeros(4, 4, 3, 0.0f), ones(4, 4, 3, 1.0f);
  for (auto m : {DistanceMetric::L1, DistanceMetric::PSNR, DistanceMetric::SSIM}) {
    const Image r = random_image(8, 8, 3, 1);
    CHECK(image_distance(r, r, m) == 0.0);
  }
  CHECK(image_distance(zeros, ones, DistanceMetric::L1) == 1.0);
  CHECK(image_distance(zeros, ones, DistanceMetric::PSNR) == 100.0);
  Image a(2, 2, 1, 0.0f), b(2, 2, 1, 0.0f);
  b.pixels[0] = 0.5f;
  CHECK(image_distance(a, b, DistanceMetric::L1) == 0.125);
  CHECK_THROWS_AS(image_distance(a, zeros, DistanceMetric::L1), InvalidInput);
  CHECK_THROWS_AS(parse_distance_metric("lpips"), InvalidInput);
}

TEST_CASE("ssim on one window matches the definition") {
  const Image a = random_image(8, 8, 1, 2), b = random_image(8, 8, 1, 3);
  const std::vector<double> va(a.pixels.begin(), a.pixels.end()), vb(b.pixels.begin(), b.pixels.end());
  CHECK(ssim(a, b) == doctest::Approx(ssim_window(va, vb)).epsilon(1e-9));
}

TEST_CASE("windowed ssim averages 8x8 windows at stride 4 and over channels") {
  const Image a = random_image(12, 16, 2, 4), b = random_image(12, 16, 2, 5);
  double total = 0;
  int count = 0;
  for (int ch = 0; ch < 2; ++ch)
    for (int r0 : {0, 4})
      for (int c0 : {0, 4, 8}) {
        std::vector<double> wa, wb;
        for (int r = r0; r < r0 + 8; ++r)
          for (int c = c0; c < c0 + 8; ++c) {
            wa.push_back(a.at(r, c, ch));
            wb.push_back(b.at(r, c, ch));
          }
        total += ssim_window(wa, wb);
        ++count;
      }
  CHECK(ssim(a, b) == doctest::Approx(total / count).epsilon(1e-9));
}

TEST_CASE("distance properties on random pairs") {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const Image a = random_image(8, 8, 3, 100 + t), b = random_image(8, 8, 3, 200 + t);
    for (auto m : {DistanceMetric::L1, DistanceMetric::PSNR, DistanceMetric::SSIM}) CHECK(image_distance(a, b, m) >= 0.0);
    CHECK(image_distance(a, b, DistanceMetric::L1) == image_distance(b, a, DistanceMetric::L1));
    CHECK(image_distance(a, b, DistanceMetric::SSIM) == doctest::Approx(image_distance(b, a, DistanceMetric::SSIM)));
    CHECK(image_distance(a, b, DistanceMetric::L1) > 0.0);
  }
}

namespace {

// Constant background with one bright patch at `bright`; visible set covers it plus background patches.
Image bright_patch_image(const GridSpec& grid, int bright, float bg, float fg) {
  Image img(grid.image_height(), grid.image_width(), grid.channels, bg);
  const int r0 = grid.row_of(bright) * grid.patch_size, c0 = grid.col_of(bright) * grid.patch_size;
  for (int r = r0; r < r0 + grid.patch_size; ++r)
    for (int c = c0; c < c0 + grid.patch_size; ++c)
      for (int ch = 0; ch < grid.channels; ++ch) img.at(r, c, ch) = fg;
  return img;
}

}  // namespace

TEST_CASE("the unique informative patch gets the top score") {
  // Background visible patches fill the right-most column, so each one has a
  // duplicate neighbor that takes over its region when it is removed; the
  // bright patch sits alone in the left half.
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    const int rows = 3 + static_cast<int>(rng.below(6)), cols = 4 + static_cast<int>(rng.below(5));
    const GridSpec grid{2, rows, cols, 3};
    SyntheticReconstructor rec(grid);
    const int bright = static_cast<int>(rng.below(static_cast<std::uint64_t>(rows))) * cols +
                       static_cast<int>(rng.below(static_cast<std::uint64_t>(cols / 2)));
    std::vector<int> visible{bright};
    for (int r = 0; r < rows; ++r) visible.push_back(r * cols + cols - 1);
    std::sort(visible.begin(), visible.end());
    MaskPlan plan;
    plan.visible = visible;
    for (int i = 0; i < grid.n_total(); ++i)
      if (!std::binary_search(visible.begin(), visible.end(), i)) plan.masked.push_back(i);
    const float bg = static_cast<float>(rng.uniform(0.0, 0.4)), fg = static_cast<float>(rng.uniform(0.6, 1.0));
    const Image img = bright_patch_image(grid, bright, bg, fg);
    const int pos = static_cast<int>(std::find(visible.begin(), visible.end(), bright) - visible.begin());
    for (auto m : {DistanceMetric::L1, DistanceMetric::PSNR, DistanceMetric::SSIM}) {
      const ScoreVector s = semantic_density_scores(rec, img, plan, m, RemovalPhase::BeforeDecoder);
      for (int i = 0; i < plan.n_visible(); ++i)
        if (i != pos) CHECK(s.scores[pos] > s.scores[i]);
    }
  }
}

TEST_CASE("constant images score zero everywhere") {
  const GridSpec grid{2, 4, 4, 3};
  SyntheticReconstructor rec(grid);
  const Image img(8, 8, 3, 0.4f);
  MaskPlan plan;
  plan.visible = {5, 6};
  for (int i = 0; i < 16; ++i)
    if (i != 5 && i != 6) plan.masked.push_back(i);
  for (auto m : {DistanceMetric::L1, DistanceMetric::PSNR, DistanceMetric::SSIM})
    for (float v : semantic_density_scores(rec, img, plan, m, RemovalPhase::BeforeEncoder).scores) CHECK(v == 0.0f);
  CHECK_THROWS_AS(semantic_density_scores(rec, img, remove_patch(plan, 0), DistanceMetric::L1, RemovalPhase::BeforeEncoder),
                  InvalidInput);
}

TEST_CASE("batched and sequential scoring agree") {
  MAEConfig cfg;
  cfg.image_size = 16;
  cfg.encoder = {1, 32, 4, 4};
  cfg.decoder = {1, 16, 2, 4};
  const MaskedAutoencoder mae(cfg);
  const Image img = random_image(16, 16, 3, 8);
  const MaskPlan plan = sample_mask(mae.grid(), 0.6, 9);
  for (auto phase : {RemovalPhase::BeforeEncoder, RemovalPhase::BeforeDecoder}) {
    const auto a = semantic_density_scores(mae, img, plan, DistanceMetric::L1, phase, true);
    const auto b = semantic_density_scores(mae, img, plan, DistanceMetric::L1, phase, false);
    for (std::size_t i = 0; i < a.scores.size(); ++i) CHECK(std::abs(a.scores[i] - b.scores[i]) <= 1e-5);
  }
}

TEST_CASE("training instances are deterministic and round trip through jsonl") {
  const GridSpec grid{16, 14, 14, 3};
  SyntheticReconstructor rec(grid);
  Image img = random_image(224, 224, 3, 10);
  img.id = "img-\"7\"";
  const RankingInstance a = build_training_instance(img, grid, 0.9, 42, rec, DistanceMetric::L1, RemovalPhase::BeforeDecoder);
  const RankingInstance b = build_training_instance(img, grid, 0.9, 42, rec, DistanceMetric::L1, RemovalPhase::BeforeDecoder);
  CHECK(a.scores.scores.size() == 20);
  CHECK(a.plan == b.plan);
  CHECK(a.scores == b.scores);
  CHECK(a.visible_patches().rows() == 20);

  const std::string line = to_jsonl(a);
  const RankingInstance c = parse_jsonl(line, grid, &img);
  CHECK(c.image_id == a.image_id);
  CHECK(c.plan == a.plan);
  CHECK(c.scores == a.scores);
  CHECK(c.phase == a.phase);
  CHECK(c.patches == a.patches);
  CHECK(to_jsonl(c) == line);

  const auto path = std::filesystem::temp_directory_path() / "ltrp_test_scores.jsonl";
  write_score_cache(path, {a, b});
  const auto back = read_score_cache(path, grid);
  REQUIRE(back.size() == 2);
  CHECK(back[1].scores == b.scores);
  std::filesystem::remove(path);
}
