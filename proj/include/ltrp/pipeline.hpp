#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltrp/config.hpp"
#include "ltrp/dataset.hpp"
#include "ltrp/oracle.hpp"
#include "ltrp/ranker.hpp"

namespace ltrp {

inline constexpr const char* kVersion = "0.1.0";

enum class Stage { GenData, PretrainMAE, GenPseudo, TrainRanker, Select, Evaluate, Visualize, Report };

std::string to_string(Stage s);
Stage parse_stage(const std::string& s);
const std::vector<Stage>& all_stages();

/// Stage-addressed artifacts under config.out:
///   config.json, data/, mae/, pseudo/, ranker/, select/, eval/, vis/, report.json, report.csv
/// Each stage directory gets a stage.json stamp holding a fingerprint of the
/// config sections the stage depends on. A stage with a matching stamp is
/// skipped unless forced; a stage that fails leaves no stamp, so its partial
/// outputs are redone on the next run.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, std::ostream* log = nullptr);

  const PipelineConfig& config() const { return config_; }
  std::filesystem::path out() const { return config_.out; }

  /// Runs `stage` after making sure its upstream stages are done. Returns
  /// false when the stage was skipped. Failures surface as StageFailure.
  bool run(Stage stage, bool force = false);

  /// Every stage in order; `force` reruns all of them.
  void run_all(bool force = false);

  bool is_done(Stage stage) const;
  std::string fingerprint(Stage stage) const;

  const Dataset& dataset();
  const Reconstructor& reconstructor();
  const RankerModel& ranker();

 private:
  bool run_stage(Stage stage, bool force, bool requested);
  void execute(Stage stage);
  void gen_data();
  void pretrain_mae();
  void gen_pseudo();
  void train_ranker();
  void select();
  void evaluate();
  void visualize();
  void report();

  std::filesystem::path stage_dir(Stage stage) const;
  std::vector<RankingInstance> load_instances(const std::filesystem::path& file);
  std::vector<double> ranker_scores(std::size_t sample);
  void say(const std::string& line) const;

  PipelineConfig config_;
  std::ostream* log_;
  std::optional<Dataset> dataset_;
  std::unique_ptr<Reconstructor> reconstructor_;
  std::optional<RankerModel> ranker_;
};

/// Report without the header, for comparisons across runs.
nlohmann::json report_body(const nlohmann::json& report);

}  // namespace ltrp
