#include "ltrp/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "ltrp/errors.hpp"

namespace ltrp {

std::string to_string(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::L1: return "l1";
    case DistanceMetric::PSNR: return "psnr";
    case DistanceMetric::SSIM: return "ssim";
  }
  return "l1";
}

DistanceMetric parse_distance_metric(const std::string& s) {
  if (s == "l1") return DistanceMetric::L1;
  if (s == "psnr") return DistanceMetric::PSNR;
  if (s == "ssim") return DistanceMetric::SSIM;
  throw InvalidInput("unknown metric '" + s + "'");
}

namespace {

void check_same(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw InvalidInput("image dimensions differ");
  if (a.pixels.empty()) throw InvalidInput("empty image");
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_same(a, b);
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.pixels.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const Image& a, const Image& b) {
  check_same(a, b);
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int wh = std::min(8, a.height), ww = std::min(8, a.width);
  double total = 0.0;
  long windows = 0;
  for (int ch = 0; ch < a.channels; ++ch) {
    for (int r0 = 0; r0 + wh <= a.height; r0 += 4) {
      for (int c0 = 0; c0 + ww <= a.width; c0 += 4) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int r = r0; r < r0 + wh; ++r)
          for (int c = c0; c < c0 + ww; ++c) {
            const double x = a.at(r, c, ch), y = b.at(r, c, ch);
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
          }
        const double n = static_cast<double>(wh) * ww;
        const double ma = sa / n, mb = sb / n;
        const double va = saa / n - ma * ma, vb = sbb / n - mb * mb, cov = sab / n - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    }
  }
  return total / static_cast<double>(windows);
}

double image_distance(const Image& a, const Image& b, DistanceMetric metric) {
  check_same(a, b);
  switch (metric) {
    case DistanceMetric::L1: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(static_cast<double>(a.pixels[i]) - b.pixels[i]);
      return s / static_cast<double>(a.pixels.size());
    }
    case DistanceMetric::PSNR:
      return kPsnrCap - psnr(a, b);
    case DistanceMetric::SSIM:
      if (a.pixels == b.pixels) return 0.0;
      // rounding in the window sums can push SSIM a hair above 1
      return std::max(0.0, 1.0 - ssim(a, b));
  }
  return 0.0;
}

Patches RankingInstance::visible_patches() const {
  Patches out(plan.n_visible(), patches.cols());
  for (int i = 0; i < plan.n_visible(); ++i) out.row(i) = patches.row(plan.visible[i]);
  return out;
}

ScoreVector semantic_density_scores(const Reconstructor& model, const Image& image, const MaskPlan& plan,
                                    DistanceMetric metric, RemovalPhase phase, bool batched) {
  validate_plan(plan, model.grid());
  if (plan.n_visible() < 2) throw InvalidInput("scoring needs at least two visible patches");
  const Image anchor = model.reconstruct(image, plan);
  std::vector<Image> removed;
  if (batched) {
    removed = model.leave_one_out_all(image, plan, phase);
  } else {
    for (int i = 0; i < plan.n_visible(); ++i) removed.push_back(model.leave_one_out(image, plan, i, phase));
  }
  ScoreVector out;
  out.metric = metric;
  out.scores.reserve(removed.size());
  for (const auto& r : removed) out.scores.push_back(static_cast<float>(image_distance(anchor, r, metric)));
  return out;
}

RankingInstance build_training_instance(const Image& image, const GridSpec& grid, double masking_ratio,
                                        std::uint64_t seed, const Reconstructor& model, DistanceMetric metric,
                                        RemovalPhase phase) {
  if (!(grid == model.grid())) throw InvalidInput("grid does not match the reconstructor");
  RankingInstance inst;
  inst.image_id = image.id;
  inst.plan = sample_mask(grid, masking_ratio, seed);
  inst.scores = semantic_density_scores(model, image, inst.plan, metric, phase);
  inst.phase = phase;
  inst.patches = patchify(image, grid);
  return inst;
}

namespace {

std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string to_jsonl(const RankingInstance& inst) {
  std::string s = "{\"image_id\":" + nlohmann::json(inst.image_id).dump();
  s += ",\"seed\":" + std::to_string(inst.plan.seed);
  s += ",\"masking_ratio\":" + fmt9(inst.plan.masking_ratio);
  s += ",\"visible\":[";
  for (std::size_t i = 0; i < inst.plan.visible.size(); ++i) s += (i ? "," : "") + std::to_string(inst.plan.visible[i]);
  s += "],\"scores\":[";
  for (std::size_t i = 0; i < inst.scores.scores.size(); ++i) s += (i ? "," : "") + fmt9(inst.scores.scores[i]);
  s += "],\"metric\":\"" + to_string(inst.scores.metric) + "\",\"phase\":\"" + to_string(inst.phase) + "\"}";
  return s;
}

RankingInstance parse_jsonl(const std::string& line, const GridSpec& grid, const Image* image) {
  const auto j = nlohmann::json::parse(line);
  RankingInstance inst;
  inst.image_id = j.at("image_id").get<std::string>();
  inst.plan.seed = j.at("seed").get<std::uint64_t>();
  inst.plan.masking_ratio = j.at("masking_ratio").get<double>();
  inst.plan.visible = j.at("visible").get<std::vector<int>>();
  std::vector<char> is_visible(static_cast<std::size_t>(grid.n_total()), 0);
  for (int v : inst.plan.visible) {
    if (v < 0 || v >= grid.n_total()) throw InvalidInput("visible index out of range in score cache");
    is_visible[static_cast<std::size_t>(v)] = 1;
  }
  for (int i = 0; i < grid.n_total(); ++i)
    if (!is_visible[static_cast<std::size_t>(i)]) inst.plan.masked.push_back(i);
  validate_plan(inst.plan, grid);
  for (const auto& v : j.at("scores")) inst.scores.scores.push_back(static_cast<float>(v.get<double>()));
  if (inst.scores.scores.size() != inst.plan.visible.size()) throw InvalidInput("score/visible length mismatch");
  inst.scores.metric = parse_distance_metric(j.at("metric").get<std::string>());
  inst.phase = parse_removal_phase(j.at("phase").get<std::string>());
  if (image) inst.patches = patchify(*image, grid);
  return inst;
}

void write_score_cache(const std::filesystem::path& path, const std::vector<RankingInstance>& instances) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write score cache " + path.string());
  for (const auto& inst : instances) out << to_jsonl(inst) << '\n';
}

std::vector<RankingInstance> read_score_cache(const std::filesystem::path& path, const GridSpec& grid) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open score cache " + path.string());
  std::vector<RankingInstance> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_jsonl(line, grid));
  return out;
}

}  // namespace ltrp
