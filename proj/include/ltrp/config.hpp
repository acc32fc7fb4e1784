#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltrp/annotations.hpp"
#include "ltrp/dataset.hpp"
#include "ltrp/evaluator.hpp"
#include "ltrp/oracle.hpp"
#include "ltrp/ranker.hpp"
#include "ltrp/scorer.hpp"
#include "ltrp/selector.hpp"

namespace ltrp {

enum class ReconstructorKind { MAE, Synthetic };

struct ScorerSettings {
  ReconstructorKind reconstructor = ReconstructorKind::MAE;
  DistanceMetric metric = DistanceMetric::L1;
  double masking_ratio = 0.9;
  RemovalPhase phase = RemovalPhase::BeforeDecoder;
  bool resample_each_epoch = true;  // fresh masks and scores every ranker epoch
};

struct EvalSettings {
  CategoryFilter category_filter = CategoryFilter::All;
  ForegroundSource foreground = ForegroundSource::Auto;
  bool probe = true;
  int probe_seeds = 3;
  bool attention_distance = true;
  int visualize = 4;  // held-out images rendered per keep ratio
};

/// Everything a pipeline run depends on. Module configs take their grid from
/// `image_size`/`patch_size` and their seeds from `seed` via derive_seed with
/// the stage name, so neither appears in the per-module sections.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string out = "runs/ltrp";
  int workers = 1;

  int image_size = 32;
  int patch_size = 4;

  std::string data_source;  // existing dataset directory; empty means generate
  SyntheticDatasetSpec data;
  MAEConfig mae;
  ScorerSettings scorer;
  RankerConfig ranker;
  std::vector<double> keep_ratios{0.75, 0.5, 0.25};
  double clustering_ratio = 0.2;
  int knn_k = 5;
  ProbeConfig probe;
  EvalSettings eval;

  /// Strict: unknown keys and wrong types are ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  /// FNV-1a over the canonical JSON without `out` and `workers`.
  std::string hash() const;

  GridSpec grid() const { return GridSpec::for_image(image_size, image_size, 3, patch_size); }
  std::uint64_t stage_seed(const std::string& stage) const;
  SyntheticDatasetSpec dataset_spec() const;
  MAEConfig mae_config() const;
  RankerConfig ranker_config() const;
  ProbeConfig probe_config(int repeat) const;
  SelectionConfig selection(double keep_ratio) const;
};

std::string to_string(ReconstructorKind k);
ReconstructorKind parse_reconstructor_kind(const std::string& s);

/// defaults <- file <- patch. `patch` uses the same key schema as the file.
PipelineConfig load_config(const std::optional<std::filesystem::path>& file, const nlohmann::json& patch = {});

}  // namespace ltrp
