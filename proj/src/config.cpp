#include "ltrp/config.hpp"

#include <cstdio>
#include <fstream>

#include "ltrp/errors.hpp"
#include "ltrp/json_util.hpp"
#include "ltrp/rng.hpp"

namespace ltrp {

std::string to_string(ReconstructorKind k) { return k == ReconstructorKind::MAE ? "mae" : "synthetic"; }

ReconstructorKind parse_reconstructor_kind(const std::string& s) {
  if (s == "mae") return ReconstructorKind::MAE;
  if (s == "synthetic") return ReconstructorKind::Synthetic;
  throw InvalidInput("unknown reconstructor '" + s + "' (expected mae or synthetic)");
}

namespace {

const char* const kGridKeys[] = {"image_size", "channels", "patch_size", "seed"};

nlohmann::json without_grid(nlohmann::json j) {
  for (const char* k : kGridKeys) j.erase(k);
  return j;
}

// Every key in `j` must exist in `schema`; objects are checked recursively.
void check_keys(const nlohmann::json& j, const nlohmann::json& schema, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where.empty() ? "config must be a JSON object" : where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (schema[key].is_object()) check_keys(value, schema[key], path);
  }
}

}  // namespace

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json data_j = without_grid(data.to_json());
  data_j["source"] = data_source;
  nlohmann::json probe_j = without_grid(probe.to_json());
  probe_j["enabled"] = eval.probe;
  probe_j["seeds"] = eval.probe_seeds;
  return {{"seed", seed},
          {"out", out},
          {"workers", workers},
          {"grid", {{"image_size", image_size}, {"patch_size", patch_size}}},
          {"data", data_j},
          {"mae", without_grid(mae.to_json())},
          {"scorer",
           {{"reconstructor", to_string(scorer.reconstructor)},
            {"metric", to_string(scorer.metric)},
            {"masking_ratio", scorer.masking_ratio},
            {"phase", to_string(scorer.phase)},
            {"resample_each_epoch", scorer.resample_each_epoch}}},
          {"ranker", without_grid(ranker.to_json())},
          {"selection", {{"keep_ratios", keep_ratios}, {"clustering_ratio", clustering_ratio}, {"knn_k", knn_k}}},
          {"probe", probe_j},
          {"eval",
           {{"category_filter", to_string(eval.category_filter)},
            {"foreground", to_string(eval.foreground)},
            {"attention_distance", eval.attention_distance},
            {"visualize", eval.visualize}}}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& in) {
  const PipelineConfig defaults;
  const nlohmann::json schema = defaults.to_json();
  check_keys(in, schema, "");
  nlohmann::json j = schema;
  j.merge_patch(in);
  PipelineConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out = j.at("out").get<std::string>();
    c.workers = j.at("workers").get<int>();
    c.image_size = j.at("grid").at("image_size").get<int>();
    c.patch_size = j.at("grid").at("patch_size").get<int>();
    c.data_source = j.at("data").at("source").get<std::string>();
    c.data = SyntheticDatasetSpec::from_json(j.at("data"));
    c.mae = MAEConfig::from_json(j.at("mae"));
    const auto& s = j.at("scorer");
    c.scorer.reconstructor = parse_reconstructor_kind(s.at("reconstructor").get<std::string>());
    c.scorer.metric = parse_distance_metric(s.at("metric").get<std::string>());
    c.scorer.masking_ratio = s.at("masking_ratio").get<double>();
    c.scorer.phase = parse_removal_phase(s.at("phase").get<std::string>());
    c.scorer.resample_each_epoch = s.at("resample_each_epoch").get<bool>();
    c.ranker = RankerConfig::from_json(j.at("ranker"));
    const auto& sel = j.at("selection");
    c.keep_ratios = sel.at("keep_ratios").get<std::vector<double>>();
    c.clustering_ratio = sel.at("clustering_ratio").get<double>();
    c.knn_k = sel.at("knn_k").get<int>();
    c.probe = ProbeConfig::from_json(j.at("probe"));
    c.eval.probe = j.at("probe").at("enabled").get<bool>();
    c.eval.probe_seeds = j.at("probe").at("seeds").get<int>();
    const auto& e = j.at("eval");
    c.eval.category_filter = parse_category_filter(e.at("category_filter").get<std::string>());
    c.eval.foreground = parse_foreground_source(e.at("foreground").get<std::string>());
    c.eval.attention_distance = e.at("attention_distance").get<bool>();
    c.eval.visualize = e.at("visualize").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad config value: ") + ex.what());
  } catch (const InvalidInput& ex) {
    throw ConfigError(ex.what());
  }
  // keep the module configs self-consistent for direct use
  c.data.image_size = c.image_size;
  c.mae.image_size = c.ranker.image_size = c.image_size;
  c.mae.patch_size = c.ranker.patch_size = c.patch_size;
  c.mae.channels = c.ranker.channels = 3;
  c.data.seed = c.mae.seed = c.ranker.seed = c.probe.seed = 0;
  return c;
}

void PipelineConfig::validate() const {
  try {
    grid().validate();
    dataset_spec().validate();
    mae_config().validate();
    ranker_config().validate();
    SelectionConfig{0.5, clustering_ratio, knn_k}.validate();
  } catch (const InvalidInput& ex) {
    throw ConfigError(ex.what());
  }
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (keep_ratios.empty()) throw ConfigError("selection.keep_ratios must not be empty");
  for (double kr : keep_ratios)
    if (!(kr > 0.0 && kr <= 1.0)) throw ConfigError("keep ratios must lie in (0, 1]");
  if (!(scorer.masking_ratio > 0.0 && scorer.masking_ratio < 1.0))
    throw ConfigError("scorer.masking_ratio must lie in (0, 1)");
  if (visible_count(grid().n_total(), scorer.masking_ratio) < 2)
    throw ConfigError("scorer.masking_ratio leaves fewer than two visible patches to rank");
  if (eval.probe_seeds < 1) throw ConfigError("probe.seeds must be at least 1");
  if (eval.visualize < 0) throw ConfigError("eval.visualize must be non-negative");
  if (ranker.init_from_encoder) {
    if (scorer.reconstructor != ReconstructorKind::MAE)
      throw ConfigError("ranker.init_from_encoder needs the mae reconstructor");
    if (!(ranker.stack.depth == mae.encoder.depth && ranker.stack.width == mae.encoder.width &&
          ranker.stack.heads == mae.encoder.heads && ranker.stack.mlp_ratio == mae.encoder.mlp_ratio))
      throw ConfigError("ranker.init_from_encoder needs the ranker stack to match mae.encoder");
  }
  if (!data_source.empty() && !std::filesystem::is_directory(data_source))
    throw ConfigError("data.source '" + data_source + "' is not a directory");
}

std::string PipelineConfig::hash() const {
  nlohmann::json j = to_json();
  j.erase("out");
  j.erase("workers");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

std::uint64_t PipelineConfig::stage_seed(const std::string& stage) const { return derive_seed(seed, stage); }

SyntheticDatasetSpec PipelineConfig::dataset_spec() const {
  SyntheticDatasetSpec s = data;
  s.image_size = image_size;
  s.seed = stage_seed("gen-data");
  return s;
}

MAEConfig PipelineConfig::mae_config() const {
  MAEConfig m = mae;
  m.image_size = image_size;
  m.channels = 3;
  m.patch_size = patch_size;
  m.seed = stage_seed("pretrain-mae");
  return m;
}

RankerConfig PipelineConfig::ranker_config() const {
  RankerConfig r = ranker;
  r.image_size = image_size;
  r.channels = 3;
  r.patch_size = patch_size;
  r.seed = stage_seed("train-ranker");
  return r;
}

ProbeConfig PipelineConfig::probe_config(int repeat) const {
  ProbeConfig p = probe;
  p.seed = derive_seed(stage_seed("evaluate"), static_cast<std::uint64_t>(repeat));
  return p;
}

SelectionConfig PipelineConfig::selection(double keep_ratio) const {
  return SelectionConfig{keep_ratio, clustering_ratio, knn_k};
}

PipelineConfig load_config(const std::optional<std::filesystem::path>& file, const nlohmann::json& patch) {
  nlohmann::json j = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& ex) {
      throw ConfigError("config file " + file->string() + " is not valid JSON: " + ex.what());
    }
    check_keys(j, PipelineConfig{}.to_json(), "");
  }
  if (!patch.is_null()) {
    check_keys(patch, PipelineConfig{}.to_json(), "");
    j.merge_patch(patch);
  }
  PipelineConfig c = PipelineConfig::from_json(j);
  c.validate();
  return c;
}

}  // namespace ltrp
