#include "ltrp/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ltrp/errors.hpp"
#include "ltrp/json_util.hpp"
#include "ltrp/rng.hpp"

namespace ltrp {

BinaryMask foreground_mask(const ForegroundAnnotation& annotation, int height, int width,
                           std::span<const Category> categories, CategoryFilter filter, ForegroundSource source) {
  BinaryMask out(height, width);
  for (const auto& obj : annotation.objects) {
    bool learned = true;
    for (const auto& c : categories)
      if (c.id == obj.category_id) learned = c.learned;
    if (filter == CategoryFilter::Learned && !learned) continue;
    if (filter == CategoryFilter::Unseen && learned) continue;

    const bool use_mask = obj.mask && (source != ForegroundSource::Boxes || !obj.box);
    if (use_mask) {
      if (obj.mask->height != height || obj.mask->width != width) throw InvalidInput("mask does not match image size");
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] |= obj.mask->data[i];
    } else if (obj.box) {
      const BinaryMask b = rasterize_box(*obj.box, height, width);
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] |= b.data[i];
    }
  }
  return out;
}

BinaryMask selection_mask(std::span<const int> indices, const GridSpec& grid) {
  BinaryMask m(grid.image_height(), grid.image_width());
  for (int idx : indices) {
    if (idx < 0 || idx >= grid.n_total()) throw InvalidInput("selection index out of range");
    const int r0 = grid.row_of(idx) * grid.patch_size, c0 = grid.col_of(idx) * grid.patch_size;
    for (int r = r0; r < r0 + grid.patch_size; ++r)
      for (int c = c0; c < c0 + grid.patch_size; ++c) m.at(r, c) = 1;
  }
  return m;
}

PatchMetrics patch_metrics(std::size_t s, std::size_t f, std::size_t both) {
  PatchMetrics m;
  m.precision = s ? static_cast<double>(both) / static_cast<double>(s) : 0.0;
  m.recall = f ? static_cast<double>(both) / static_cast<double>(f) : 1.0;
  const std::size_t uni = s + f - both;
  m.iou = uni ? static_cast<double>(both) / static_cast<double>(uni) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

PatchMetrics patch_metrics(const BinaryMask& selection, const BinaryMask& foreground) {
  if (selection.height != foreground.height || selection.width != foreground.width)
    throw InvalidInput("patch_metrics: mask sizes differ");
  std::size_t s = 0, f = 0, both = 0;
  for (std::size_t i = 0; i < selection.data.size(); ++i) {
    s += selection.data[i];
    f += foreground.data[i];
    both += selection.data[i] & foreground.data[i];
  }
  return patch_metrics(s, f, both);
}

nlohmann::json ProbeConfig::to_json() const {
  return {{"stack", ltrp::to_json(stack)}, {"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr},
          {"weight_decay", weight_decay}, {"warmup_epochs", warmup_epochs}, {"seed", seed}};
}

ProbeConfig ProbeConfig::from_json(const nlohmann::json& j) {
  ProbeConfig c;
  if (j.contains("stack")) c.stack = stack_shape_from_json(j["stack"], c.stack);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.seed = j.value("seed", c.seed);
  return c;
}

ProbeClassifier::ProbeClassifier(const GridSpec& grid, int num_classes, const ProbeConfig& config) : grid_(grid) {
  validate_stack(config.stack, "probe");
  if (num_classes < 2) throw InvalidInput("probe needs at least two classes");
  Rng rng(derive_seed(config.seed, "probe.init"));
  const int d = config.stack.width;
  embed_ = nn::Linear<float>("patch_embed", grid.patch_dim(), d, rng);
  pos_ = nn::Param<float>("pos_embed", grid.n_total(), d);
  nn::normal_init(pos_.value, rng, 0.02);
  stack_ = nn::TransformerStack<float>("blocks", config.stack, rng);
  head_ = nn::Linear<float>("head", d, num_classes, rng);
}

nn::Mat<float> ProbeClassifier::tokens(const Patches& patches, std::span<const int> kept) const {
  if (kept.empty()) throw InvalidInput("probe needs at least one retained patch");
  nn::Mat<float> x(static_cast<Eigen::Index>(kept.size()), patches.cols());
  for (std::size_t k = 0; k < kept.size(); ++k) x.row(static_cast<Eigen::Index>(k)) = patches.row(kept[k]);
  return x;
}

Eigen::VectorXf ProbeClassifier::logits(const Patches& patches, std::span<const int> kept) const {
  const nn::Mat<float> x = tokens(patches, kept);
  nn::Mat<float> h = embed_.forward(x);
  for (std::size_t k = 0; k < kept.size(); ++k) h.row(static_cast<Eigen::Index>(k)) += pos_.value.row(kept[k]);
  const nn::Mat<float> pooled = stack_.forward(h, {}, nullptr).colwise().mean();
  return head_.forward(pooled).row(0).transpose();
}

int ProbeClassifier::predict(const Patches& patches, std::span<const int> kept) const {
  const Eigen::VectorXf z = logits(patches, kept);
  Eigen::Index arg = 0;
  z.maxCoeff(&arg);
  return static_cast<int>(arg);
}

double ProbeClassifier::accumulate_gradients(const Patches& patches, std::span<const int> kept, int label,
                                             float weight) {
  const nn::Mat<float> x = tokens(patches, kept);
  nn::Mat<float> h0 = embed_.forward(x);
  for (std::size_t k = 0; k < kept.size(); ++k) h0.row(static_cast<Eigen::Index>(k)) += pos_.value.row(kept[k]);
  nn::StackCache<float> cache;
  const nn::Mat<float> h = stack_.forward(h0, {}, &cache);
  const nn::Mat<float> pooled = h.colwise().mean();
  const nn::Mat<float> z = head_.forward(pooled);

  const float m = z.maxCoeff();
  const Eigen::RowVectorXf e = (z.row(0).array() - m).exp().matrix();
  const float sum = e.sum();
  const double loss = -(static_cast<double>(z(0, label)) - m - std::log(static_cast<double>(sum)));
  nn::Mat<float> dz = e / sum;
  dz(0, label) -= 1.0f;
  dz *= weight;
  const nn::Mat<float> dpooled = head_.backward(pooled, dz);
  const nn::Mat<float> dh = dpooled.replicate(h.rows(), 1) / static_cast<float>(h.rows());
  const nn::Mat<float> dh0 = stack_.backward(cache, dh);
  for (std::size_t k = 0; k < kept.size(); ++k) pos_.grad.row(kept[k]) += dh0.row(static_cast<Eigen::Index>(k));
  embed_.backward(x, dh0);
  return loss;
}

ProbeResult train_probe(std::span<const ProbeSample> train, std::span<const ProbeSample> heldout, int num_classes,
                        const GridSpec& grid, const ProbeConfig& config) {
  if (train.empty()) throw InvalidInput("train_probe: empty dataset");
  std::vector<Patches> train_patches, heldout_patches;
  for (const auto& s : train) train_patches.push_back(patchify(*s.image, grid));
  for (const auto& s : heldout) heldout_patches.push_back(patchify(*s.image, grid));

  ProbeClassifier model(grid, num_classes, config);
  auto params = nn::collect_params<float>(model);
  nn::AdamOptions opts;
  opts.lr = config.lr;
  opts.weight_decay = config.weight_decay;
  nn::AdamW<float> optimizer(params, opts);

  ProbeResult result;
  const std::size_t n = train.size(), batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(config.epochs);
  const std::size_t warmup = steps_per_epoch * static_cast<std::size_t>(config.warmup_epochs);
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), 0x9a0bULL));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::size_t end = std::min(n, start + batch);
      nn::zero_grad(params);
      double batch_sum = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train[order[k]];
        batch_sum += model.accumulate_gradients(train_patches[order[k]], s.kept, s.label, 1.0f);
      }
      if (!std::isfinite(batch_sum)) throw TrainingDiverged("probe training produced a non-finite loss", step);
      optimizer.step(nn::warmup_cosine_lr(config.lr, step, warmup, total), 1.0 / static_cast<double>(end - start));
      sum += batch_sum;
    }
    result.epoch_losses.push_back(sum / static_cast<double>(n));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < heldout.size(); ++i)
    correct += model.predict(heldout_patches[i], heldout[i].kept) == heldout[i].label;
  result.accuracy = heldout.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(heldout.size());
  return result;
}

FlopsEstimate flops_estimate(const FlopsModel& model, int tokens) {
  if (tokens < 1) throw InvalidInput("flops_estimate: token count must be positive");
  validate_stack(model.stack, "flops model");
  const nn::StackFlops s = nn::stack_flops(model.stack, tokens);
  FlopsEstimate f;
  f.attention = s.attention;
  f.projections = s.projections;
  f.mlp = s.mlp;
  const double patch_tokens = tokens - (model.class_token ? 1 : 0);
  f.embed_head = patch_tokens * model.patch_dim * model.stack.width +
                 static_cast<double>(model.stack.width) * model.num_classes;
  return f;
}

Eigen::MatrixXd attention_distance(const AttentionMaps& maps, const GridSpec& grid) {
  const std::size_t layers = maps.layers.size();
  const std::size_t heads = layers ? maps.layers[0].size() : 0;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(layers), static_cast<Eigen::Index>(heads));
  const auto& pos = maps.token_positions;
  const auto t = static_cast<Eigen::Index>(pos.size());
  Eigen::MatrixXd dist(t, t);
  for (Eigen::Index q = 0; q < t; ++q)
    for (Eigen::Index k = 0; k < t; ++k) {
      const double dr = (grid.row_of(pos[q]) - grid.row_of(pos[k])) * static_cast<double>(grid.patch_size);
      const double dc = (grid.col_of(pos[q]) - grid.col_of(pos[k])) * static_cast<double>(grid.patch_size);
      dist(q, k) = std::sqrt(dr * dr + dc * dc);
    }
  for (std::size_t l = 0; l < layers; ++l) {
    if (maps.layers[l].size() != heads) throw InvalidInput("attention maps have uneven head counts");
    for (std::size_t h = 0; h < heads; ++h) {
      const auto& w = maps.layers[l][h];
      if (w.rows() != t || w.cols() != t) throw InvalidInput("attention map does not match the token list");
      out(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(h)) =
          (w.cast<double>().array() * dist.array()).sum() / static_cast<double>(t);
    }
  }
  return out;
}

Eigen::MatrixXd attention_distance(const AttentionIntrospection& model, std::span<const Image> images,
                                   const GridSpec& grid) {
  if (images.empty()) throw InvalidInput("attention_distance: no images");
  Eigen::MatrixXd sum;
  for (const auto& img : images) {
    const Eigen::MatrixXd d = attention_distance(model.attention_maps(img), grid);
    if (sum.size() == 0) sum = d;
    else sum += d;
  }
  return sum / static_cast<double>(images.size());
}

}  // namespace ltrp
