#include "ltrp/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "ltrp/checkpoint.hpp"
#include "ltrp/errors.hpp"
#include "ltrp/json_util.hpp"
#include "ltrp/oracle.hpp"
#include "ltrp/rng.hpp"

namespace ltrp {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::ListMLE: return "listmle";
    case LossKind::ListNet: return "listnet";
    case LossKind::RankNet: return "ranknet";
    case LossKind::Regression: return "regression";
  }
  return "listmle";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "listmle") return LossKind::ListMLE;
  if (s == "listnet") return LossKind::ListNet;
  if (s == "ranknet") return LossKind::RankNet;
  if (s == "regression") return LossKind::Regression;
  throw InvalidInput("unknown loss '" + s + "'");
}

std::vector<int> descending_permutation(std::span<const double> y) {
  std::vector<int> pi(y.size());
  std::iota(pi.begin(), pi.end(), 0);
  std::stable_sort(pi.begin(), pi.end(), [&](int a, int b) { return y[a] > y[b]; });
  return pi;
}

namespace {

void check_inputs(std::span<const double> s, std::span<const double> y) {
  if (s.size() != y.size()) throw InvalidInput("score and label lengths differ");
  if (s.empty()) throw InvalidInput("ranking loss needs at least one item");
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!std::isfinite(s[i]) || !std::isfinite(y[i])) throw InvalidInput("non-finite ranking input");
}

std::vector<double> softmax(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) z += out[i] = std::exp(v[i] - m);
  for (auto& o : out) o /= z;
  return out;
}

double log_softmax_at(std::span<const double> v, std::size_t i) {
  const double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - m);
  return v[i] - m - std::log(z);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::vector<double> regression_targets(std::span<const double> y) {
  const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
  std::vector<double> t(y.size(), 0.5);
  if (*hi > *lo)
    for (std::size_t i = 0; i < y.size(); ++i) t[i] = (y[i] - *lo) / (*hi - *lo);
  return t;
}

}  // namespace

double ranking_loss(LossKind kind, std::span<const double> s, std::span<const double> y) {
  check_inputs(s, y);
  const std::size_t n = s.size();
  switch (kind) {
    case LossKind::ListMLE: {
      const auto pi = descending_permutation(y);
      // suffix log-sum-exp, accumulated from the back with a running max
      double loss = 0.0, m = -std::numeric_limits<double>::infinity(), z = 0.0;
      for (std::size_t k = n; k-- > 0;) {
        const double v = s[static_cast<std::size_t>(pi[k])];
        if (v > m) {
          z = z * std::exp(m - v) + 1.0;
          m = v;
        } else {
          z += std::exp(v - m);
        }
        loss += m + std::log(z) - v;
      }
      return loss;
    }
    case LossKind::ListNet: {
      const auto p = softmax(y);
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) loss -= p[i] * log_softmax_at(s, i);
      return loss;
    }
    case LossKind::RankNet: {
      double sum = 0.0;
      std::size_t pairs = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (y[i] > y[j]) {
            sum += softplus(-(s[i] - s[j]));
            ++pairs;
          }
      return pairs ? sum / static_cast<double>(pairs) : 0.0;
    }
    case LossKind::Regression: {
      const auto t = regression_targets(y);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += (s[i] - t[i]) * (s[i] - t[i]);
      return sum / static_cast<double>(n);
    }
  }
  return 0.0;
}

std::vector<double> loss_gradient(LossKind kind, std::span<const double> s, std::span<const double> y) {
  check_inputs(s, y);
  const std::size_t n = s.size();
  std::vector<double> g(n, 0.0);
  switch (kind) {
    case LossKind::ListMLE: {
      const auto pi = descending_permutation(y);
      // d/ds_pi(j) = sum_{i<=j} exp(s_pi(j)) / Z_i - 1, with Z_i the suffix sum from i
      const double m = *std::max_element(s.begin(), s.end());
      std::vector<double> suffix(n + 1, 0.0);
      for (std::size_t k = n; k-- > 0;) suffix[k] = suffix[k + 1] + std::exp(s[static_cast<std::size_t>(pi[k])] - m);
      double inv_acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        inv_acc += 1.0 / suffix[j];
        const auto idx = static_cast<std::size_t>(pi[j]);
        g[idx] = std::exp(s[idx] - m) * inv_acc - 1.0;
      }
      return g;
    }
    case LossKind::ListNet: {
      const auto p = softmax(y);
      const auto q = softmax(s);
      for (std::size_t i = 0; i < n; ++i) g[i] = q[i] - p[i];
      return g;
    }
    case LossKind::RankNet: {
      std::size_t pairs = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (y[i] > y[j]) {
            const double w = sigmoid(-(s[i] - s[j]));
            g[i] -= w;
            g[j] += w;
            ++pairs;
          }
      if (pairs)
        for (auto& v : g) v /= static_cast<double>(pairs);
      return g;
    }
    case LossKind::Regression: {
      const auto t = regression_targets(y);
      for (std::size_t i = 0; i < n; ++i) g[i] = 2.0 * (s[i] - t[i]) / static_cast<double>(n);
      return g;
    }
  }
  return g;
}

std::optional<double> kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("kendall_tau: length mismatch");
  long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j], db = b[i] - b[j];
      if (da == 0 && db == 0) continue;
      if (da == 0) {
        ++ties_a;
      } else if (db == 0) {
        ++ties_b;
      } else if ((da > 0) == (db > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n0 = static_cast<double>(concordant + discordant);
  const double denom = std::sqrt((n0 + ties_a) * (n0 + ties_b));
  if (denom == 0.0) return std::nullopt;
  return static_cast<double>(concordant - discordant) / denom;
}

void RankerConfig::validate() const {
  grid().validate();
  validate_stack(stack, "ranker");
  if (epochs < 0) throw InvalidInput("ranker epochs must be non-negative");
  if (batch_size < 1) throw InvalidInput("ranker batch_size must be positive");
  if (!(lr > 0)) throw InvalidInput("ranker lr must be positive");
}

nlohmann::json RankerConfig::to_json() const {
  return {{"image_size", image_size},
          {"channels", channels},
          {"patch_size", patch_size},
          {"stack", ltrp::to_json(stack)},
          {"sparse", sparse},
          {"position_agnostic", position_agnostic},
          {"loss", ltrp::to_string(loss)},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_epochs", warmup_epochs},
          {"init_from_encoder", init_from_encoder},
          {"seed", seed}};
}

RankerConfig RankerConfig::from_json(const nlohmann::json& j) {
  RankerConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.channels = j.value("channels", c.channels);
  c.patch_size = j.value("patch_size", c.patch_size);
  if (j.contains("stack")) c.stack = stack_shape_from_json(j["stack"], c.stack);
  c.sparse = j.value("sparse", c.sparse);
  c.position_agnostic = j.value("position_agnostic", c.position_agnostic);
  c.loss = parse_loss_kind(j.value("loss", ltrp::to_string(c.loss)));
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.init_from_encoder = j.value("init_from_encoder", c.init_from_encoder);
  c.seed = j.value("seed", c.seed);
  return c;
}

RankerModel::RankerModel(RankerConfig config) : config_(config) {
  config_.validate();
  grid_ = config_.grid();
  Rng rng(derive_seed(config_.seed, "ranker.init"));
  const int d = config_.stack.width;
  embed_ = nn::Linear<float>("patch_embed", grid_.patch_dim(), d, rng);
  pos_ = nn::Param<float>("pos_embed", grid_.n_total(), d);
  nn::normal_init(pos_.value, rng, 0.02);
  mask_token_ = nn::Param<float>("mask_token", 1, d);
  nn::normal_init(mask_token_.value, rng, 0.02);
  stack_ = nn::TransformerStack<float>("encoder", config_.stack, rng);
  head_ = nn::Linear<float>("score_head", d, 1, rng);
}

RankerModel::Tokens RankerModel::tokens(const Patches& patches, const MaskPlan& plan) const {
  if (patches.rows() != grid_.n_total() || patches.cols() != grid_.patch_dim())
    throw InvalidInput("ranker: patch matrix does not match the grid");
  Tokens t;
  if (config_.sparse) {
    t.positions = plan.visible;
    t.x.resize(static_cast<Eigen::Index>(plan.visible.size()), patches.cols());
    for (std::size_t k = 0; k < plan.visible.size(); ++k) {
      t.x.row(static_cast<Eigen::Index>(k)) = patches.row(plan.visible[k]);
      t.scored.push_back(static_cast<int>(k));
    }
    t.is_mask.assign(plan.visible.size(), 0);
  } else {
    t.x = patches;
    t.positions.resize(static_cast<std::size_t>(grid_.n_total()));
    std::iota(t.positions.begin(), t.positions.end(), 0);
    t.is_mask.assign(static_cast<std::size_t>(grid_.n_total()), 1);
    for (int v : plan.visible) t.is_mask[static_cast<std::size_t>(v)] = 0;
    t.scored = plan.visible;
  }
  return t;
}

nn::Mat<float> RankerModel::embed(const Tokens& t) const {
  nn::Mat<float> h = embed_.forward(t.x);
  for (std::size_t k = 0; k < t.positions.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    if (t.is_mask[k]) h.row(row) = mask_token_.value.row(0);
    if (!config_.position_agnostic) h.row(row) += pos_.value.row(t.positions[k]);
  }
  return h;
}

std::vector<float> RankerModel::score_visible(const Patches& patches, const MaskPlan& plan) const {
  const Tokens t = tokens(patches, plan);
  const nn::Mat<float> out = head_.forward(stack_.forward(embed(t), {}, nullptr));
  std::vector<float> s;
  s.reserve(t.scored.size());
  for (int r : t.scored) s.push_back(out(r, 0));
  return s;
}

std::vector<float> RankerModel::score_patches(const Patches& patches) const {
  return score_visible(patches, full_plan(grid_));
}

std::vector<float> RankerModel::score_image(const Image& image) const { return score_patches(patchify(image, grid_)); }

AttentionMaps RankerModel::attention_maps(const Image& image) const {
  const Tokens t = tokens(patchify(image, grid_), full_plan(grid_));
  std::vector<std::vector<nn::Mat<float>>> attn;
  stack_.forward(embed(t), {}, nullptr, &attn);
  AttentionMaps maps;
  maps.token_positions = t.positions;
  for (auto& layer : attn) {
    maps.layers.emplace_back();
    for (auto& head : layer) maps.layers.back().emplace_back(std::move(head));
  }
  return maps;
}

double RankerModel::accumulate_gradients(const RankingInstance& instance, LossKind kind, float weight) {
  const Tokens t = tokens(instance.patches, instance.plan);
  const nn::Mat<float> h0 = embed(t);
  nn::StackCache<float> cache;
  const nn::Mat<float> h = stack_.forward(h0, {}, &cache);
  const nn::Mat<float> out = head_.forward(h);

  std::vector<double> s, y(instance.scores.scores.begin(), instance.scores.scores.end());
  for (int r : t.scored) s.push_back(out(r, 0));
  const double loss = ranking_loss(kind, s, y);
  const auto g = loss_gradient(kind, s, y);

  nn::Mat<float> dout = nn::Mat<float>::Zero(out.rows(), 1);
  for (std::size_t k = 0; k < t.scored.size(); ++k) dout(t.scored[k], 0) = static_cast<float>(g[k]) * weight;
  nn::Mat<float> dh0 = stack_.backward(cache, head_.backward(h, dout));
  for (std::size_t k = 0; k < t.positions.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    if (!config_.position_agnostic) pos_.grad.row(t.positions[k]) += dh0.row(row);
    if (t.is_mask[k]) {
      mask_token_.grad.row(0) += dh0.row(row);
      dh0.row(row).setZero();
    }
  }
  embed_.backward(t.x, dh0);
  return loss;
}

void RankerModel::init_from_encoder(const MaskedAutoencoder& mae) {
  const auto arrays = export_params(mae);
  for_each_param([&](nn::Param<float>& p) {
    if (p.name.rfind("encoder.", 0) != 0 && p.name.rfind("patch_embed.", 0) != 0) return;
    for (const auto& a : arrays) {
      if (a.name != p.name) continue;
      if (a.rows != p.value.rows() || a.cols != p.value.cols())
        throw InvalidInput("encoder parameter '" + p.name + "' does not match the ranker shape");
      std::copy(a.data.begin(), a.data.end(), p.value.data());
    }
  });
}

void RankerModel::save(const std::filesystem::path& path) const {
  save_checkpoint(path, Checkpoint{{{"kind", "ranker"}, {"config", config_.to_json()}}, export_params(*this)});
}

RankerModel RankerModel::load(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.config.value("kind", "") != "ranker") throw InvalidInput("not a ranker checkpoint: " + path.string());
  RankerModel m(RankerConfig::from_json(ck.config.at("config")));
  import_params(m, ck.arrays);
  return m;
}

RankerModel RankerModel::load(const std::filesystem::path& path, const RankerConfig& expected) {
  const Checkpoint ck = load_checkpoint(path, nlohmann::json{{"kind", "ranker"}, {"config", expected.to_json()}});
  RankerModel m(expected);
  import_params(m, ck.arrays);
  return m;
}

double mean_kendall_tau(const RankerModel& model, std::span<const RankingInstance> instances) {
  double sum = 0.0;
  int count = 0;
  for (const auto& inst : instances) {
    const auto s = model.score_visible(inst.patches, inst.plan);
    const std::vector<double> sd(s.begin(), s.end());
    const std::vector<double> y(inst.scores.scores.begin(), inst.scores.scores.end());
    if (const auto tau = kendall_tau(sd, y)) {
      sum += *tau;
      ++count;
    }
  }
  return count ? sum / count : 0.0;
}

RankerTrainResult train_ranker(const InstanceSource& source, std::span<const RankingInstance> heldout,
                               const RankerConfig& config, const MaskedAutoencoder* init_encoder,
                               const std::function<void(const RankerLogRow&)>& on_epoch) {
  config.validate();
  RankerTrainResult result{RankerModel(config), {}, 0.0, 0.0};
  RankerModel& model = result.model;
  if (config.init_from_encoder) {
    if (!init_encoder) throw InvalidInput("init_from_encoder requested without an encoder");
    model.init_from_encoder(*init_encoder);
  }
  result.untrained_heldout_tau = mean_kendall_tau(model, heldout);

  auto params = nn::collect_params<float>(model);
  nn::AdamOptions opts;
  opts.lr = config.lr;
  opts.weight_decay = config.weight_decay;
  nn::AdamW<float> optimizer(params, opts);

  std::size_t step = 0, total_steps = 0, warmup = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<RankingInstance> instances = source(epoch);
    if (instances.empty()) throw InvalidInput("train_ranker: empty dataset");
    for (const auto& inst : instances)
      if (inst.plan.n_visible() < 2) throw InvalidInput("train_ranker: instances need at least two visible patches");
    const std::size_t n = instances.size();
    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    const std::size_t steps_per_epoch = (n + batch - 1) / batch;
    if (epoch == 0) {
      total_steps = steps_per_epoch * static_cast<std::size_t>(config.epochs);
      warmup = steps_per_epoch * static_cast<std::size_t>(config.warmup_epochs);
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), 0x7a4bULL));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::size_t end = std::min(n, start + batch);
      nn::zero_grad(params);
      double batch_sum = 0.0;
      for (std::size_t k = start; k < end; ++k) batch_sum += model.accumulate_gradients(instances[order[k]], config.loss, 1.0f);
      if (!std::isfinite(batch_sum)) throw TrainingDiverged("ranker training produced a non-finite loss", step);
      optimizer.step(nn::warmup_cosine_lr(config.lr, step, warmup, total_steps), 1.0 / static_cast<double>(end - start));
      epoch_sum += batch_sum;
    }
    RankerLogRow row{epoch, epoch_sum / static_cast<double>(n), mean_kendall_tau(model, heldout)};
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  result.heldout_tau = mean_kendall_tau(model, heldout);
  return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<RankerLogRow>& log) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write training log " + path.string());
  out << "epoch,loss,heldout_kendall_tau\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", r.epoch, r.loss, r.heldout_kendall_tau);
    out << buf;
  }
}

}  // namespace ltrp
