// ltrp: runs the patch-ranking pipeline stage by stage.
//
//   ltrp sweep --config cfg.json --kr 0.75,0.5,0.25
//   ltrp train-ranker --loss listnet --out runs/listnet
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ltrp/config.hpp"
#include "ltrp/errors.hpp"
#include "ltrp/pipeline.hpp"

namespace {

struct Flags {
  std::optional<std::string> config, out, metric, loss, phase, target;
  std::optional<std::uint64_t> seed;
  std::optional<double> masking_ratio, clustering_ratio;
  std::optional<bool> sparse;
  std::optional<int> workers;
  std::vector<double> kr;
  bool force = false;
};

nlohmann::json overrides(const Flags& f) {
  nlohmann::json p = nlohmann::json::object();
  if (f.seed) p["seed"] = *f.seed;
  if (f.out) p["out"] = *f.out;
  if (f.workers) p["workers"] = *f.workers;
  if (!f.kr.empty()) p["selection"]["keep_ratios"] = f.kr;
  if (f.clustering_ratio) p["selection"]["clustering_ratio"] = *f.clustering_ratio;
  if (f.metric) p["scorer"]["metric"] = *f.metric;
  if (f.masking_ratio) p["scorer"]["masking_ratio"] = *f.masking_ratio;
  if (f.phase) p["scorer"]["phase"] = *f.phase;
  if (f.loss) p["ranker"]["loss"] = *f.loss;
  if (f.sparse) p["ranker"]["sparse"] = *f.sparse;
  if (f.target) p["mae"]["target"] = *f.target;
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised patch ranking: pseudo scores, ranker training, selection and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  Flags f;
  app.add_option("--config", f.config, "JSON config file");
  app.add_option("--seed", f.seed, "global seed");
  app.add_option("--out", f.out, "output directory (default: $LTRP_OUT or the config value)");
  app.add_option("--kr", f.kr, "keep ratios, comma separated")->delimiter(',');
  app.add_option("--metric", f.metric, "pseudo-score distance")->check(CLI::IsMember({"l1", "psnr", "ssim"}));
  app.add_option("--loss", f.loss, "ranking loss")
      ->check(CLI::IsMember({"listmle", "listnet", "ranknet", "regression"}));
  app.add_option("--masking-ratio", f.masking_ratio, "masking ratio used for pseudo scores");
  app.add_option("--clustering-ratio", f.clustering_ratio, "share of kept patches taken from clusters");
  app.add_option("--phase", f.phase, "leave-one-out removal phase")->check(CLI::IsMember({"encoder", "decoder"}));
  app.add_option("--sparse", f.sparse, "ranker sees only visible patches");
  app.add_option("--target", f.target, "MAE reconstruction target")->check(CLI::IsMember({"raw", "norm"}));
  app.add_option("--workers", f.workers, "worker threads for data-parallel work");
  app.add_flag("--force", f.force, "rerun the stage even if its outputs are up to date");

  std::vector<std::pair<CLI::App*, std::optional<ltrp::Stage>>> commands;
  auto add = [&](const std::string& name, const std::string& help, std::optional<ltrp::Stage> stage) {
    commands.emplace_back(app.add_subcommand(name, help), stage);
  };
  add("gen-data", "generate (or check) the dataset", ltrp::Stage::GenData);
  add("pretrain-mae", "pretrain the masked autoencoder", ltrp::Stage::PretrainMAE);
  add("gen-pseudo", "compute leave-one-out pseudo scores", ltrp::Stage::GenPseudo);
  add("train-ranker", "train the ranking model", ltrp::Stage::TrainRanker);
  add("select", "select patches for every keep ratio", ltrp::Stage::Select);
  add("evaluate", "patch metrics, probe accuracy, FLOPs", ltrp::Stage::Evaluate);
  add("visualize", "render score maps and selections", ltrp::Stage::Visualize);
  add("report", "write report.json and report.csv", ltrp::Stage::Report);
  add("sweep", "run every stage over the keep-ratio sweep", std::nullopt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    nlohmann::json patch = overrides(f);
    if (!f.out) {
      // LTRP_OUT replaces the built-in default, not a value from the config file
      const char* env = std::getenv("LTRP_OUT");
      bool file_sets_out = false;
      if (f.config) {
        std::ifstream in(*f.config);
        if (in) {
          const auto j = nlohmann::json::parse(in, nullptr, false);
          file_sets_out = j.is_object() && j.contains("out");
        }
      }
      if (env && *env && !file_sets_out) patch["out"] = env;
    }
    const ltrp::PipelineConfig config =
        ltrp::load_config(f.config ? std::optional<std::filesystem::path>(*f.config) : std::nullopt, patch);
    ltrp::Pipeline pipeline(config, &std::cerr);
    for (const auto& [cmd, stage] : commands) {
      if (!cmd->parsed()) continue;
      if (stage) pipeline.run(*stage, f.force);
      else pipeline.run_all(f.force);
    }
    std::cout << "config " << config.hash() << "  out " << config.out << "\n";
    return 0;
  } catch (const ltrp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ltrp::StageFailure& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
