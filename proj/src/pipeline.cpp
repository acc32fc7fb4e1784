#include "ltrp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>

#include <Eigen/Core>

#include "ltrp/errors.hpp"
#include "ltrp/evaluator.hpp"
#include "ltrp/image_io.hpp"
#include "ltrp/parallel.hpp"
#include "ltrp/render.hpp"
#include "ltrp/rng.hpp"
#include "ltrp/selector.hpp"

namespace ltrp {

namespace fs = std::filesystem;

namespace {

const std::vector<Stage> kStages = {Stage::GenData, Stage::PretrainMAE, Stage::GenPseudo, Stage::TrainRanker,
                                    Stage::Select,  Stage::Evaluate,    Stage::Visualize, Stage::Report};

std::vector<Stage> upstream(Stage s) {
  switch (s) {
    case Stage::GenData: return {};
    case Stage::PretrainMAE: return {Stage::GenData};
    case Stage::GenPseudo: return {Stage::PretrainMAE};
    case Stage::TrainRanker: return {Stage::GenPseudo};
    case Stage::Select: return {Stage::TrainRanker};
    case Stage::Evaluate: return {Stage::Select};
    case Stage::Visualize: return {Stage::Select};
    case Stage::Report: return {Stage::Evaluate};
  }
  return {};
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << content;
    if (!out) throw InvalidInput("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("missing " + path.string());
  return nlohmann::json::parse(in);
}

std::string kr_tag(double kr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "kr_%g", kr);
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

struct MetricSums {
  double iou = 0, f1 = 0, precision = 0, recall = 0;
  void add(const PatchMetrics& m) {
    iou += m.iou;
    f1 += m.f1;
    precision += m.precision;
    recall += m.recall;
  }
  nlohmann::json mean(std::size_t n) const {
    const double d = n ? static_cast<double>(n) : 1.0;
    return {{"iou", iou / d}, {"f1", f1 / d}, {"precision", precision / d}, {"recall", recall / d}};
  }
};

struct SelectionRecord {
  std::vector<int> ltrp;  // ranked picks first
  std::vector<int> random;
};

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::GenData: return "gen-data";
    case Stage::PretrainMAE: return "pretrain-mae";
    case Stage::GenPseudo: return "gen-pseudo";
    case Stage::TrainRanker: return "train-ranker";
    case Stage::Select: return "select";
    case Stage::Evaluate: return "evaluate";
    case Stage::Visualize: return "visualize";
    case Stage::Report: return "report";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  for (Stage st : kStages)
    if (to_string(st) == s) return st;
  throw InvalidInput("unknown stage '" + s + "'");
}

const std::vector<Stage>& all_stages() { return kStages; }

Pipeline::Pipeline(PipelineConfig config, std::ostream* log) : config_(std::move(config)), log_(log) {
  config_.validate();
}

void Pipeline::say(const std::string& line) const {
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  if (log_) *log_ << line << std::endl;
}

fs::path Pipeline::stage_dir(Stage stage) const {
  switch (stage) {
    case Stage::GenData: return out() / "data";
    case Stage::PretrainMAE: return out() / "mae";
    case Stage::GenPseudo: return out() / "pseudo";
    case Stage::TrainRanker: return out() / "ranker";
    case Stage::Select: return out() / "select";
    case Stage::Evaluate: return out() / "eval";
    case Stage::Visualize: return out() / "vis";
    case Stage::Report: return out() / "report";
  }
  return out();
}

std::string Pipeline::fingerprint(Stage stage) const {
  // cumulative: every stage depends on the sections of the stages before it
  const nlohmann::json full = config_.to_json();
  nlohmann::json part{{"seed", full["seed"]}, {"grid", full["grid"]}, {"data", full["data"]}};
  auto with = [&](Stage upto) {
    if (upto >= Stage::PretrainMAE) {
      part["mae"] = full["mae"];
      part["reconstructor"] = full["scorer"]["reconstructor"];
    }
    if (upto >= Stage::GenPseudo) {
      part["scorer"] = full["scorer"];
      part["ranker_epochs"] = full["ranker"]["epochs"];
    }
    if (upto >= Stage::TrainRanker) part["ranker"] = full["ranker"];
    if (upto >= Stage::Select) part["selection"] = full["selection"];
    if (upto >= Stage::Evaluate) {
      part["probe"] = full["probe"];
      part["eval"] = full["eval"];
    }
  };
  with(stage);
  part["stage"] = to_string(stage);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(part.dump())));
  return buf;
}

bool Pipeline::is_done(Stage stage) const {
  const fs::path stamp = stage_dir(stage) / "stage.json";
  if (!fs::exists(stamp)) return false;
  try {
    return read_json(stamp).value("fingerprint", "") == fingerprint(stage);
  } catch (const std::exception&) {
    return false;
  }
}

bool Pipeline::run(Stage stage, bool force) { return run_stage(stage, force, true); }

bool Pipeline::run_stage(Stage stage, bool force, bool requested) {
  for (Stage up : upstream(stage)) run_stage(up, false, false);
  if (!force && is_done(stage)) {
    if (requested) say("[" + to_string(stage) + "] up to date, skipping");
    return false;
  }
  say("[" + to_string(stage) + "] running");
  fs::create_directories(stage_dir(stage));
  write_file(out() / "config.json", config_.to_json().dump(2) + "\n");
  fs::remove(stage_dir(stage) / "stage.json");
  const auto t0 = std::chrono::steady_clock::now();
  try {
    execute(stage);
  } catch (const StageFailure&) {
    throw;
  } catch (const std::exception& ex) {
    throw StageFailure(to_string(stage), ex.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(stage_dir(stage) / "stage.json",
             nlohmann::json{{"stage", to_string(stage)}, {"fingerprint", fingerprint(stage)}, {"seconds", secs}}
                     .dump(2) +
                 "\n");
  say("[" + to_string(stage) + "] done in " + fmt(secs) + " s");
  return true;
}

void Pipeline::run_all(bool force) {
  for (Stage s : kStages) run(s, force);
}

void Pipeline::execute(Stage stage) {
  switch (stage) {
    case Stage::GenData: return gen_data();
    case Stage::PretrainMAE: return pretrain_mae();
    case Stage::GenPseudo: return gen_pseudo();
    case Stage::TrainRanker: return train_ranker();
    case Stage::Select: return select();
    case Stage::Evaluate: return evaluate();
    case Stage::Visualize: return visualize();
    case Stage::Report: return report();
  }
}

// ---------------------------------------------------------------------------
// Lazily loaded artifacts

const Dataset& Pipeline::dataset() {
  if (!dataset_) {
    const fs::path dir = config_.data_source.empty() ? stage_dir(Stage::GenData) : fs::path(config_.data_source);
    dataset_ = load_dataset(dir);
    for (const auto& s : dataset_->samples)
      if (s.image.height != config_.image_size || s.image.width != config_.image_size || s.image.channels != 3)
        throw InvalidInput("dataset image " + s.image.id + " does not match the configured grid");
    if (dataset_->train_count == 0 || dataset_->train_count == dataset_->samples.size())
      throw InvalidInput("dataset needs both a train and a held-out split");
  }
  return *dataset_;
}

const Reconstructor& Pipeline::reconstructor() {
  if (!reconstructor_) {
    if (config_.scorer.reconstructor == ReconstructorKind::Synthetic)
      reconstructor_ = std::make_unique<SyntheticReconstructor>(config_.grid());
    else
      reconstructor_ = std::make_unique<MaskedAutoencoder>(
          MaskedAutoencoder::load(stage_dir(Stage::PretrainMAE) / "model.ckpt", config_.mae_config()));
  }
  return *reconstructor_;
}

const RankerModel& Pipeline::ranker() {
  if (!ranker_) ranker_ = RankerModel::load(stage_dir(Stage::TrainRanker) / "model.ckpt", config_.ranker_config());
  return *ranker_;
}

// ---------------------------------------------------------------------------
// Stages

void Pipeline::gen_data() {
  dataset_.reset();
  if (!config_.data_source.empty()) {
    const Dataset& d = dataset();
    write_file(stage_dir(Stage::GenData) / "source.json",
               nlohmann::json{{"source", config_.data_source}, {"images", d.samples.size()}}.dump(2) + "\n");
    return;
  }
  const SyntheticDatasetSpec spec = config_.dataset_spec();
  write_dataset(generate_dataset(spec), spec, stage_dir(Stage::GenData));
  say("[gen-data] wrote " + std::to_string(spec.count) + " images");
}

void Pipeline::pretrain_mae() {
  reconstructor_.reset();
  const fs::path dir = stage_dir(Stage::PretrainMAE);
  if (config_.scorer.reconstructor != ReconstructorKind::MAE) {
    write_file(dir / "summary.json", nlohmann::json{{"skipped", true}, {"reconstructor", "synthetic"}}.dump(2) + "\n");
    return;
  }
  const Dataset& d = dataset();
  const std::vector<Image> train = d.train_images(), heldout = d.heldout_images();
  MAETrainResult r = ltrp::pretrain_mae(train, heldout, config_.mae_config(), [&](int epoch, double loss) {
    say("[pretrain-mae] epoch " + std::to_string(epoch) + " loss " + fmt(loss));
  });
  r.model.save(dir / "model.ckpt");
  std::string log = "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) log += std::to_string(e) + "," + fmt(r.epoch_losses[e]) + "\n";
  write_file(dir / "train_log.csv", log);
  write_file(dir / "summary.json", nlohmann::json{{"untrained_heldout_loss", r.untrained_heldout_loss},
                                                  {"heldout_loss", r.heldout_loss},
                                                  {"epochs", r.epoch_losses.size()},
                                                  {"parameters", r.model.parameter_count()}}
                                           .dump(2) +
                                       "\n");
  say("[pretrain-mae] held-out loss " + fmt(r.untrained_heldout_loss) + " -> " + fmt(r.heldout_loss));
}

void Pipeline::gen_pseudo() {
  const Dataset& d = dataset();
  const Reconstructor& model = reconstructor();
  const GridSpec grid = config_.grid();
  const auto& sc = config_.scorer;
  const std::uint64_t base = config_.stage_seed("gen-pseudo");
  const fs::path dir = stage_dir(Stage::GenPseudo);

  // slot 0 is the held-out set; training epoch e uses slot e + 1
  auto generate = [&](std::size_t begin, std::size_t end, std::uint64_t slot) {
    std::vector<RankingInstance> out(end - begin);
    parallel_for(out.size(), config_.workers, [&](std::size_t k) {
      const std::size_t i = begin + k;
      out[k] = build_training_instance(d.samples[i].image, grid, sc.masking_ratio, derive_seed(base, i, slot), model,
                                       sc.metric, sc.phase);
    });
    return out;
  };
  write_score_cache(dir / "heldout.jsonl", generate(d.train_count, d.samples.size(), 0));
  const int files = sc.resample_each_epoch ? config_.ranker.epochs : 1;
  for (int e = 0; e < files; ++e) {
    const std::string name = sc.resample_each_epoch ? "epoch_" + std::to_string(e) + ".jsonl" : "train.jsonl";
    write_score_cache(dir / name, generate(0, d.train_count, static_cast<std::uint64_t>(e) + 1));
    say("[gen-pseudo] wrote " + name);
  }
}

std::vector<RankingInstance> Pipeline::load_instances(const fs::path& file) {
  const Dataset& d = dataset();
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < d.samples.size(); ++i) by_id[d.samples[i].image.id] = i;
  std::vector<RankingInstance> instances = read_score_cache(file, config_.grid());
  for (auto& inst : instances) {
    const auto it = by_id.find(inst.image_id);
    if (it == by_id.end()) throw InvalidInput("score cache names unknown image " + inst.image_id);
    inst.patches = patchify(d.samples[it->second].image, config_.grid());
  }
  return instances;
}

void Pipeline::train_ranker() {
  ranker_.reset();
  const fs::path pseudo = stage_dir(Stage::GenPseudo), dir = stage_dir(Stage::TrainRanker);
  const std::vector<RankingInstance> heldout = load_instances(pseudo / "heldout.jsonl");
  const bool fresh = config_.scorer.resample_each_epoch;
  std::vector<RankingInstance> fixed;
  if (!fresh) fixed = load_instances(pseudo / "train.jsonl");
  const InstanceSource source = [&](int epoch) {
    return fresh ? load_instances(pseudo / ("epoch_" + std::to_string(epoch) + ".jsonl")) : fixed;
  };
  const MaskedAutoencoder* encoder = nullptr;
  if (config_.ranker.init_from_encoder) encoder = dynamic_cast<const MaskedAutoencoder*>(&reconstructor());
  RankerTrainResult r = ltrp::train_ranker(source, heldout, config_.ranker_config(), encoder, [&](const RankerLogRow& row) {
    say("[train-ranker] epoch " + std::to_string(row.epoch) + " loss " + fmt(row.loss) + " held-out tau " +
        fmt(row.heldout_kendall_tau));
  });
  r.model.save(dir / "model.ckpt");
  write_training_log(dir / "train_log.csv", r.log);
  write_file(dir / "summary.json", nlohmann::json{{"untrained_heldout_tau", r.untrained_heldout_tau},
                                                  {"heldout_tau", r.heldout_tau},
                                                  {"final_loss", r.log.empty() ? 0.0 : r.log.back().loss}}
                                           .dump(2) +
                                       "\n");
}

std::vector<double> Pipeline::ranker_scores(std::size_t sample) {
  const std::vector<float> s = ranker().score_image(dataset().samples[sample].image);
  return {s.begin(), s.end()};
}

namespace {

std::uint64_t random_baseline_seed(std::uint64_t base, std::size_t sample, double kr) {
  return derive_seed(base, sample, static_cast<std::uint64_t>(std::llround(kr * 1e6)));
}

std::map<std::string, SelectionRecord> read_selections(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw InvalidInput("missing selection file " + file.string());
  std::map<std::string, SelectionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out[j.at("image_id").get<std::string>()] = {j.at("indices").get<std::vector<int>>(),
                                                j.at("random").get<std::vector<int>>()};
  }
  return out;
}

}  // namespace

void Pipeline::select() {
  const Dataset& d = dataset();
  ranker();
  const GridSpec grid = config_.grid();
  const std::size_t n = d.samples.size();
  std::vector<std::vector<double>> scores(n);
  parallel_for(n, config_.workers, [&](std::size_t i) { scores[i] = ranker_scores(i); });
  const std::uint64_t base = config_.stage_seed("select");
  for (double kr : config_.keep_ratios) {
    std::vector<std::string> lines(n);
    parallel_for(n, config_.workers, [&](std::size_t i) {
      const FeatureMatrix features = patchify(d.samples[i].image, grid).cast<double>();
      const SelectionResult sel = select_patches(scores[i], features, config_.selection(kr));
      const SelectionResult rnd = random_selection(grid.n_total(), kr, random_baseline_seed(base, i, kr));
      nlohmann::json prov = nlohmann::json::array();
      for (Provenance p : sel.provenance) prov.push_back(to_string(p));
      lines[i] = nlohmann::json{{"image_id", d.samples[i].image.id},
                                {"indices", sel.indices},
                                {"provenance", prov},
                                {"random", rnd.indices}}
                     .dump();
    });
    std::string text;
    for (const auto& l : lines) text += l + "\n";
    write_file(stage_dir(Stage::Select) / (kr_tag(kr) + ".jsonl"), text);
    say("[select] " + kr_tag(kr));
  }
}

void Pipeline::evaluate() {
  const Dataset& d = dataset();
  const GridSpec grid = config_.grid();
  const std::size_t n = d.samples.size(), train_n = d.train_count, held_n = n - train_n;
  const EvalSettings& ev = config_.eval;

  std::vector<BinaryMask> fg(held_n);
  parallel_for(held_n, config_.workers, [&](std::size_t k) {
    fg[k] = foreground_mask(d.samples[train_n + k].annotation, grid.image_height(), grid.image_width(), d.categories,
                            ev.category_filter, ev.foreground);
  });

  struct KrData {
    double kr = 0;
    std::vector<std::vector<int>> ltrp, random;  // per sample, sorted
  };
  std::vector<KrData> krs;
  for (double kr : config_.keep_ratios) {
    const auto sel = read_selections(stage_dir(Stage::Select) / (kr_tag(kr) + ".jsonl"));
    KrData kd{kr, std::vector<std::vector<int>>(n), std::vector<std::vector<int>>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      const auto it = sel.find(d.samples[i].image.id);
      if (it == sel.end()) throw InvalidInput("no selection for image " + d.samples[i].image.id);
      kd.ltrp[i] = it->second.ltrp;
      kd.random[i] = it->second.random;
      std::sort(kd.ltrp[i].begin(), kd.ltrp[i].end());
      std::sort(kd.random[i].begin(), kd.random[i].end());
    }
    krs.push_back(std::move(kd));
  }

  // probe runs: (kr, method, repeat), independent, each writes its own slot
  const int repeats = ev.probe ? ev.probe_seeds : 0;
  const std::size_t runs = krs.size() * 2 * static_cast<std::size_t>(repeats);
  std::vector<double> acc(runs, 0.0);
  parallel_for(runs, config_.workers, [&](std::size_t job) {
    const std::size_t q = job / (2 * repeats), m = (job / repeats) % 2;
    const int rep = static_cast<int>(job % repeats);
    const auto& kept = m == 0 ? krs[q].ltrp : krs[q].random;
    std::vector<ProbeSample> samples(n);
    for (std::size_t i = 0; i < n; ++i) samples[i] = {&d.samples[i].image, d.samples[i].label, kept[i]};
    const std::span<const ProbeSample> all(samples);
    acc[job] = train_probe(all.first(train_n), all.subspan(train_n), d.num_classes, grid, config_.probe_config(rep))
                   .accuracy;
    say("[evaluate] probe " + kr_tag(krs[q].kr) + (m == 0 ? " ltrp" : " random") + " seed " +
        std::to_string(rep) + " accuracy " + fmt(acc[job]));
  });

  const RankerConfig rc = config_.ranker_config();
  // the score head emits one value per token, charged as a head of n outputs
  const double ranker_flops =
      flops_estimate(FlopsModel{rc.stack, grid.patch_dim(), grid.n_total(), false}, grid.n_total()).total();
  const FlopsModel probe_model{config_.probe.stack, grid.patch_dim(), d.num_classes, false};
  const double full_flops = flops_estimate(probe_model, grid.n_total()).total();

  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t q = 0; q < krs.size(); ++q) {
    MetricSums lt, rn;
    for (std::size_t k = 0; k < held_n; ++k) {
      lt.add(patch_metrics(selection_mask(krs[q].ltrp[train_n + k], grid), fg[k]));
      rn.add(patch_metrics(selection_mask(krs[q].random[train_n + k], grid), fg[k]));
    }
    const int k = keep_count(grid.n_total(), krs[q].kr);
    nlohmann::json row{{"keep_ratio", krs[q].kr},
                       {"k", k},
                       {"h", cluster_count(k, config_.clustering_ratio)},
                       {"ltrp", lt.mean(held_n)},
                       {"random", rn.mean(held_n)}};
    if (repeats > 0) {
      double a = 0, b = 0;
      std::vector<double> la, ra;
      for (int rep = 0; rep < repeats; ++rep) {
        la.push_back(acc[(q * 2 + 0) * repeats + rep]);
        ra.push_back(acc[(q * 2 + 1) * repeats + rep]);
        a += la.back();
        b += ra.back();
      }
      row["ltrp"]["probe_acc"] = a / repeats;
      row["ltrp"]["probe_acc_runs"] = la;
      row["random"]["probe_acc"] = b / repeats;
      row["random"]["probe_acc_runs"] = ra;
    } else {
      row["ltrp"]["probe_acc"] = nullptr;
      row["random"]["probe_acc"] = nullptr;
    }
    const double clf = flops_estimate(probe_model, k).total();
    const int vit_tokens = static_cast<int>(round_half_up(krs[q].kr * 196)) + 1;
    row["flops"] = {{"classifier", clf},
                    {"ranker", ranker_flops},
                    {"total", clf + ranker_flops},
                    {"classifier_all_patches", full_flops},
                    {"vit_b_classifier", flops_estimate(vit_base(), vit_tokens).total()}};
    rows.push_back(row);
  }

  nlohmann::json attention = nlohmann::json::object();
  if (ev.attention_distance) {
    const std::size_t m = std::min<std::size_t>(held_n, 32);
    const std::vector<Image> imgs = d.images(train_n, train_n + m);
    attention["ranker"] = matrix_json(attention_distance(ranker(), imgs, grid));
    if (config_.scorer.reconstructor == ReconstructorKind::MAE)
      attention["mae_encoder"] = matrix_json(attention_distance(reconstructor(), imgs, grid));
  }

  const nlohmann::json metrics{{"heldout_images", held_n},
                               {"category_filter", to_string(ev.category_filter)},
                               {"foreground", to_string(ev.foreground)},
                               {"rows", rows},
                               {"attention_distance", attention}};
  write_file(stage_dir(Stage::Evaluate) / "metrics.json", metrics.dump(2) + "\n");
}

void Pipeline::visualize() {
  const Dataset& d = dataset();
  const GridSpec grid = config_.grid();
  const std::size_t held_n = d.samples.size() - d.train_count;
  const std::size_t count = std::min<std::size_t>(held_n, static_cast<std::size_t>(config_.eval.visualize));
  const std::string ext = config_.data.image_format == "png" && png_supported() ? ".png" : ".ppm";
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = d.train_count + k;
    const Image& img = d.samples[i].image;
    save_render(stage_dir(Stage::Visualize) / (img.id + "_heat" + ext), render_heat(img, ranker_scores(i), grid));
  }
  for (double kr : config_.keep_ratios) {
    const auto sel = read_selections(stage_dir(Stage::Select) / (kr_tag(kr) + ".jsonl"));
    const fs::path dir = stage_dir(Stage::Visualize) / kr_tag(kr);
    for (std::size_t k = 0; k < count; ++k) {
      const Image& img = d.samples[d.train_count + k].image;
      const SelectionRecord& rec = sel.at(img.id);
      save_render(dir / (img.id + "_keep" + ext), render_keep(img, rec.ltrp, grid));
      save_render(dir / (img.id + "_random" + ext), render_keep(img, rec.random, grid));
    }
  }
  say("[visualize] rendered " + std::to_string(count) + " images per keep ratio");
}

void Pipeline::report() {
  const nlohmann::json metrics = read_json(stage_dir(Stage::Evaluate) / "metrics.json");
  nlohmann::json cfg = config_.to_json();
  cfg.erase("out");
  cfg.erase("workers");
  nlohmann::json versions{{"ltrp", kVersion},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                        "." + std::to_string(EIGEN_MINOR_VERSION)},
                          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                          {"compiler", __VERSION__},
                          {"png", png_supported()}};
  const nlohmann::json report{
      {"header", {{"generated_at", utc_timestamp()}}},
      {"config_hash", config_.hash()},
      {"versions", versions},
      {"conventions",
       {{"flops", "multiply-accumulates of attention, projections, MLP, patch embedding and head; layer norm, "
                  "softmax and activations excluded"},
        {"empty_foreground", "images without foreground count with recall 1"},
        {"metrics", "means over held-out images; probe accuracy is the mean over seeds"}}},
      {"config", cfg},
      {"mae", read_json(stage_dir(Stage::PretrainMAE) / "summary.json")},
      {"ranker", read_json(stage_dir(Stage::TrainRanker) / "summary.json")},
      {"evaluation", metrics}};
  write_file(out() / "report.json", report.dump(2) + "\n");

  std::string csv =
      "keep_ratio,k,iou,f1,precision,recall,probe_acc,flops,random_iou,random_f1,random_precision,random_recall,"
      "random_probe_acc\n";
  auto num = [](const nlohmann::json& v) { return v.is_null() ? std::string() : fmt(v.get<double>()); };
  for (const auto& row : metrics.at("rows")) {
    const auto& l = row.at("ltrp");
    const auto& r = row.at("random");
    csv += fmt(row.at("keep_ratio").get<double>()) + "," + std::to_string(row.at("k").get<int>()) + "," +
           num(l.at("iou")) + "," + num(l.at("f1")) + "," + num(l.at("precision")) + "," + num(l.at("recall")) + "," +
           num(l.at("probe_acc")) + "," + num(row.at("flops").at("total")) + "," + num(r.at("iou")) + "," +
           num(r.at("f1")) + "," + num(r.at("precision")) + "," + num(r.at("recall")) + "," +
           num(r.at("probe_acc")) + "\n";
  }
  write_file(out() / "report.csv", csv);
  say("[report] wrote " + (out() / "report.json").string());
}

nlohmann::json report_body(const nlohmann::json& report) {
  nlohmann::json body = report;
  body.erase("header");
  return body;
}

}  // namespace ltrp
