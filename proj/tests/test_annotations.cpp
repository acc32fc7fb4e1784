#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ltrp/annotations.hpp"
#include "ltrp/dataset.hpp"
#include "ltrp/errors.hpp"
#include "ltrp/evaluator.hpp"
#include "ltrp/image_io.hpp"
#include "ltrp/rng.hpp"

using namespace ltrp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("uncompressed rle is column-major and starts with zeros") {
  BinaryMask m(2, 3);
  m.at(0, 0) = 1;
  m.at(1, 2) = 1;
  // column-major: 1,0 | 0,0 | 0,1
  CHECK(rle_encode(m) == std::vector<std::uint32_t>{0, 1, 4, 1});
  CHECK(rle_decode({0, 1, 4, 1}, 2, 3) == m);
  CHECK_THROWS_AS(rle_decode({3, 4}, 2, 3), InvalidInput);
  CHECK_THROWS_AS(rle_decode({1, 1}, 2, 3), InvalidInput);

  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    BinaryMask r(1 + static_cast<int>(rng.below(9)), 1 + static_cast<int>(rng.below(9)));
    for (auto& v : r.data) v = rng.uniform() < 0.4;
    CHECK(rle_decode(rle_encode(r), r.height, r.width) == r);
    const auto counts = rle_encode(r);
    CHECK(rle_from_string(rle_to_string(counts)) == counts);
  }
}

TEST_CASE("compressed rle strings, hand encoded") {
  // 5, 3, 1 each fit one 5-bit group without continuation
  CHECK(rle_to_string({5, 3, 1}) == "531");
  // 100 = 3 * 32 + 4: low group 4 with continuation (36 -> 'T'), then 3
  CHECK(rle_to_string({100}) == "T3");
  // the fourth count is stored as 1 - 3 = -2: group 30 with the sign bit set -> 'N'
  CHECK(rle_to_string({2, 3, 4, 1}) == "234N");
  CHECK(rle_from_string("234N") == std::vector<std::uint32_t>{2, 3, 4, 1});
  CHECK(rle_from_string("T3") == std::vector<std::uint32_t>{100});
  CHECK_THROWS_AS(rle_from_string("T"), InvalidInput);
}

TEST_CASE("box rasterization uses pixel centers") {
  CHECK(rasterize_box(Box{0, 0, 16, 16}, 16, 16).count() == 256);
  CHECK(rasterize_box(Box{0.6, 0, 1, 1}, 4, 4).count() == 1);  // only the center 1.5 falls inside [0.6, 1.6)
  CHECK(rasterize_box(Box{0.4, 0, 0.2, 1}, 4, 4).count() == 1);
  CHECK(rasterize_box(Box{0.6, 0, 0.2, 1}, 4, 4).count() == 0);
  CHECK(rasterize_box(Box{2, 1, 3, 2}, 4, 8).count() == 6);
  const auto b = mask_bounds(rasterize_box(Box{2, 1, 3, 2}, 4, 8));
  REQUIRE(b);
  CHECK(b->x == 2);
  CHECK(b->w == 3);
  CHECK_FALSE(mask_bounds(BinaryMask(3, 3)).has_value());
}

TEST_CASE("parsing a coco-style document") {
  const fs::path dir = temp_dir("ltrp_test_coco");
  Image mask_img(4, 6, 1, 0.0f);
  mask_img.at(1, 2, 0) = 1.0f;
  mask_img.at(2, 2, 0) = 1.0f;
  write_image(dir / "m.pgm", mask_img);
  const nlohmann::json doc = {
      {"images", {{{"id", 7}, {"file_name", "a.ppm"}, {"width", 6}, {"height", 4}}}},
      {"categories", {{{"id", 1}, {"name", "cat"}}, {{"id", 2}, {"name", "zebra"}, {"learned", false}}}},
      {"annotations",
       {{{"image_id", 7}, {"category_id", 1}, {"bbox", {0, 0, 2, 2}}},
        {{"image_id", 7}, {"category_id", 2}, {"segmentation", {{"size", {4, 6}}, {"counts", "53`0"}}}},
        {{"image_id", 7}, {"category_id", 1}, {"mask_file", "m.pgm"}},
        {{"image_id", 7}, {"category_id", 1}, {"segmentation", {{{1, 1, 3, 1, 3, 3}}}}, {"bbox", {3, 0, 1, 1}}}}}};
  std::ofstream(dir / "ann.json") << doc.dump();
  std::ofstream(dir / "cats.json") << nlohmann::json::array({{{"id", 1}, {"learned", false}}}).dump();

  const AnnotationSet set = parse_annotations(doc, dir);
  CHECK(set.category(2)->learned == false);
  const ForegroundAnnotation fa = set.for_image(7);
  REQUIRE(fa.objects.size() == 4);
  CHECK(fa.objects[0].box->w == 2);
  CHECK_FALSE(fa.objects[0].mask.has_value());
  CHECK_THROWS_AS(parse_annotations(nlohmann::json{{"images", {{{"id", 1}, {"width", 2}, {"height", 2}}}},
                                                   {"annotations", {{{"image_id", 1}, {"bbox", {0, 0, 3, 1}}}}}}),
                  InvalidInput);
  // 16 needs a continuation: group 16 has the sign bit, so it is written as 48 -> '`' then '0'
  CHECK(rle_to_string({5, 3, 16}) == "53`0");
  REQUIRE(fa.objects[1].mask.has_value());
  CHECK(fa.objects[1].mask->count() == 3);
  CHECK(fa.objects[1].mask->at(1, 1) == 1);  // pixels 5..7 in column-major order: (1,1), (2,1), (3,1)
  REQUIRE(fa.objects[2].mask.has_value());
  CHECK(fa.objects[2].mask->count() == 2);
  CHECK_FALSE(fa.objects[3].mask.has_value());  // polygons fall back to the box

  const AnnotationSet over = load_annotations(dir / "ann.json", dir / "cats.json");
  CHECK(over.category(1)->learned == false);
  fs::remove_all(dir);
}

TEST_CASE("generated shapes are rasterized exactly") {
  SyntheticDatasetSpec spec;
  spec.count = 50;
  spec.min_shapes = spec.max_shapes = 1;
  spec.num_classes = 1;  // discs only
  spec.background = BackgroundMode::Flat;
  spec.seed = 9;
  const Dataset d = generate_dataset(spec);
  for (const auto& s : d.samples) {
    REQUIRE(s.annotation.objects.size() == 1);
    const auto& obj = s.annotation.objects[0];
    CHECK(obj.category_id == 1);
    const BinaryMask fg = foreground_mask(s.annotation, 32, 32, d.categories, CategoryFilter::All, ForegroundSource::Masks);
    CHECK(fg.count() == obj.mask->count());
    // on a flat background the painted pixels are exactly the ones that differ from the corner color
    std::size_t differ = 0;
    for (int r = 0; r < 32; ++r)
      for (int c = 0; c < 32; ++c) {
        bool same = true;
        for (int ch = 0; ch < 3; ++ch) same &= s.image.at(r, c, ch) == s.image.at(0, 0, ch);
        differ += !same;
      }
    if (!obj.mask->at(0, 0)) CHECK(differ <= obj.mask->count());
  }
  const BinaryMask disc = rasterize_shape(ShapeKind::Disc, {4.0, 4.0, 2.0}, 8, 8);
  CHECK(disc.count() == 12);  // centers within radius 2 of (4, 4): 4 inner + 8 edge pixels
}

TEST_CASE("class histogram is close to uniform") {
  SyntheticDatasetSpec spec;
  spec.count = 2000;
  spec.num_classes = 3;
  spec.image_size = 8;
  std::vector<int> counts(3, 0);
  for (int i = 0; i < spec.count; ++i) ++counts[generate_sample(spec, i).label];
  const double p = 1.0 / 3, sigma = std::sqrt(2000 * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - 2000 * p) < 3 * sigma);
}

TEST_CASE("datasets are byte-identical across runs and reload exactly") {
  SyntheticDatasetSpec spec;
  spec.count = 12;
  spec.distractor_prob = 0.5;
  spec.seed = 5;
  const fs::path a = temp_dir("ltrp_test_ds_a"), b = temp_dir("ltrp_test_ds_b");
  write_dataset(generate_dataset(spec), spec, a);
  write_dataset(generate_dataset(spec), spec, b);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  const Dataset orig = generate_dataset(spec);
  const Dataset back = load_dataset(a);
  REQUIRE(back.samples.size() == 12);
  CHECK(back.train_count == orig.train_count);
  CHECK(back.num_classes == 3);
  bool saw_unseen = false;
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(back.samples[i].image.pixels == orig.samples[i].image.pixels);
    CHECK(back.samples[i].label == orig.samples[i].label);
    REQUIRE(back.samples[i].annotation.objects.size() == orig.samples[i].annotation.objects.size());
    for (std::size_t k = 0; k < orig.samples[i].annotation.objects.size(); ++k) {
      CHECK(*back.samples[i].annotation.objects[k].mask == *orig.samples[i].annotation.objects[k].mask);
      saw_unseen |= orig.samples[i].annotation.objects[k].category_id == 4;
    }
  }
  CHECK(saw_unseen);
  CHECK_FALSE(back.categories[3].learned);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("dataset spec validation") {
  SyntheticDatasetSpec spec;
  spec.num_classes = 4;
  spec.distractor_prob = 0.2;
  CHECK_THROWS_AS(spec.validate(), InvalidInput);
  spec = {};
  spec.count = 0;
  CHECK_THROWS_AS(spec.validate(), InvalidInput);
  spec = {};
  CHECK(SyntheticDatasetSpec::from_json(spec.to_json()).to_json() == spec.to_json());
}
