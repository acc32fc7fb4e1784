#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ltrp/grid.hpp"
#include "ltrp/oracle.hpp"

namespace ltrp {

enum class DistanceMetric { L1, PSNR, SSIM };

std::string to_string(DistanceMetric m);
DistanceMetric parse_distance_metric(const std::string& s);

inline constexpr double kPsnrCap = 100.0;

/// Always a dissimilarity. L1: mean absolute difference. PSNR: cap minus the
/// capped PSNR. SSIM: one minus mean SSIM over 8x8 windows at stride 4,
/// averaged over channels.
double image_distance(const Image& a, const Image& b, DistanceMetric metric);

/// Mean SSIM over the window grid described above (images smaller than a
/// window use one window covering the whole image).
double ssim(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);

struct ScoreVector {
  std::vector<float> scores;  // aligned with plan.visible
  DistanceMetric metric = DistanceMetric::L1;

  bool operator==(const ScoreVector&) const = default;
};

struct RankingInstance {
  std::string image_id;
  MaskPlan plan;
  ScoreVector scores;
  RemovalPhase phase = RemovalPhase::BeforeDecoder;
  Patches patches;  // every grid cell; visible_patches() gives the sparse payload

  Patches visible_patches() const;
};

/// scores[i] = distance(anchor, leave-one-out reconstruction without visible patch i).
/// `batched` routes through leave_one_out_all, otherwise one call per patch.
ScoreVector semantic_density_scores(const Reconstructor& model, const Image& image, const MaskPlan& plan,
                                    DistanceMetric metric, RemovalPhase phase, bool batched = true);

RankingInstance build_training_instance(const Image& image, const GridSpec& grid, double masking_ratio,
                                        std::uint64_t seed, const Reconstructor& model, DistanceMetric metric,
                                        RemovalPhase phase);

/// One JSON object per line; floats with 9 significant digits.
std::string to_jsonl(const RankingInstance& instance);
/// Parses one cache line. Patch payloads are not stored; they are filled in
/// from `image` when given.
RankingInstance parse_jsonl(const std::string& line, const GridSpec& grid, const Image* image = nullptr);

void write_score_cache(const std::filesystem::path& path, const std::vector<RankingInstance>& instances);
std::vector<RankingInstance> read_score_cache(const std::filesystem::path& path, const GridSpec& grid);

}  // namespace ltrp
