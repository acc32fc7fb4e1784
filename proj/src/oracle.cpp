#include "ltrp/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ltrp/checkpoint.hpp"
#include "ltrp/errors.hpp"
#include "ltrp/json_util.hpp"
#include "ltrp/rng.hpp"

namespace ltrp {

std::string to_string(TargetTransform t) { return t == TargetTransform::RawPixels ? "raw" : "norm"; }

std::string to_string(RemovalPhase p) { return p == RemovalPhase::BeforeEncoder ? "encoder" : "decoder"; }

TargetTransform parse_target_transform(const std::string& s) {
  if (s == "raw" || s == "raw_pixels") return TargetTransform::RawPixels;
  if (s == "norm" || s == "per_patch_norm") return TargetTransform::PerPatchNorm;
  throw InvalidInput("unknown reconstruction target '" + s + "' (expected raw or norm)");
}

RemovalPhase parse_removal_phase(const std::string& s) {
  if (s == "encoder" || s == "before_encoder") return RemovalPhase::BeforeEncoder;
  if (s == "decoder" || s == "before_decoder") return RemovalPhase::BeforeDecoder;
  throw InvalidInput("unknown removal phase '" + s + "' (expected encoder or decoder)");
}

AttentionMaps AttentionIntrospection::attention_maps(const Image&) const {
  throw UnsupportedOperation("this model does not expose attention weights");
}

Image Reconstructor::leave_one_out(const Image& image, const MaskPlan& plan, int position, RemovalPhase) const {
  return reconstruct(image, remove_patch(plan, position));
}

std::vector<Image> Reconstructor::leave_one_out_all(const Image& image, const MaskPlan& plan,
                                                    RemovalPhase phase) const {
  std::vector<Image> out;
  out.reserve(plan.visible.size());
  for (int i = 0; i < plan.n_visible(); ++i) out.push_back(leave_one_out(image, plan, i, phase));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic reconstructor

Image synthetic_reconstruct(const Image& image, const GridSpec& grid, const MaskPlan& plan) {
  if (image.height != grid.image_height() || image.width != grid.image_width() || image.channels != grid.channels)
    throw InvalidInput("image dimensions do not match the grid");
  validate_plan(plan, grid);
  if (plan.visible.empty()) return Image(image.height, image.width, image.channels, 0.5f, image.id);

  Image out = image;
  for (int m : plan.masked) {
    const int mr = grid.row_of(m), mc = grid.col_of(m);
    int best = -1;
    long best_d2 = std::numeric_limits<long>::max();
    for (int v : plan.visible) {  // ascending, so strict < keeps the lower index on ties
      const long dr = grid.row_of(v) - mr, dc = grid.col_of(v) - mc;
      const long d2 = dr * dr + dc * dc;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = v;
      }
    }
    const Eigen::RowVectorXf src = extract_patch(image, grid, best);
    write_patch(out, grid, m, src.data());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

void MAEConfig::validate() const {
  if (image_size < 1 || channels < 1 || patch_size < 1) throw InvalidInput("MAE config: non-positive dimensions");
  grid().validate();
  validate_stack(encoder, "MAE encoder");
  validate_stack(decoder, "MAE decoder");
  if (encoder.width % 4 != 0 || decoder.width % 4 != 0)
    throw InvalidInput("MAE widths must be divisible by 4 for sin-cos positions");
  if (decoder.width > encoder.width || decoder.depth > encoder.depth)
    throw InvalidInput("MAE decoder must not be wider or deeper than the encoder");
  if (!(masking_ratio > 0.0 && masking_ratio < 1.0)) throw InvalidInput("MAE masking ratio must lie in (0, 1)");
  if (epochs < 0 || batch_size < 1 || !(lr > 0.0) || weight_decay < 0.0 || warmup_epochs < 0)
    throw InvalidInput("MAE config: invalid optimizer settings");
}

nlohmann::json MAEConfig::to_json() const {
  return {{"image_size", image_size},
          {"channels", channels},
          {"patch_size", patch_size},
          {"encoder", ltrp::to_json(encoder)},
          {"decoder", ltrp::to_json(decoder)},
          {"target", to_string(target)},
          {"masking_ratio", masking_ratio},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"warmup_epochs", warmup_epochs},
          {"seed", seed}};
}

MAEConfig MAEConfig::from_json(const nlohmann::json& j) {
  MAEConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.channels = j.value("channels", c.channels);
  c.patch_size = j.value("patch_size", c.patch_size);
  if (j.contains("encoder")) c.encoder = stack_shape_from_json(j["encoder"], c.encoder);
  if (j.contains("decoder")) c.decoder = stack_shape_from_json(j["decoder"], c.decoder);
  c.target = parse_target_transform(j.value("target", to_string(c.target)));
  c.masking_ratio = j.value("masking_ratio", c.masking_ratio);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.seed = j.value("seed", c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Masked autoencoder

namespace {

GridSpec checked_grid(const MAEConfig& config) {
  config.validate();
  return config.grid();
}

nn::Mat<float> gather_rows(const Patches& patches, const std::vector<int>& rows) {
  nn::Mat<float> out(static_cast<Eigen::Index>(rows.size()), patches.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = patches.row(rows[k]);
  return out;
}

void patch_stats(const Eigen::RowVectorXf& patch, float& mean, float& stddev) {
  mean = patch.mean();
  const float var = (patch.array() - mean).square().mean();
  stddev = std::sqrt(var + 1e-6f);
}

}  // namespace

Eigen::RowVectorXf transform_target(const Eigen::RowVectorXf& patch, TargetTransform target) {
  if (target == TargetTransform::RawPixels) return patch;
  float mean, stddev;
  patch_stats(patch, mean, stddev);
  return (patch.array() - mean) / stddev;
}

MaskedAutoencoder::MaskedAutoencoder(MAEConfig config) : config_(config), grid_(checked_grid(config)) {
  Rng rng(derive_seed(config_.seed, "mae.init"));
  const int pd = grid_.patch_dim();
  patch_embed_ = nn::Linear<float>("patch_embed", pd, config_.encoder.width, rng);
  encoder_pos_ = nn::sincos_position_embedding<float>(grid_.rows, grid_.cols, config_.encoder.width);
  encoder_ = nn::TransformerStack<float>("encoder", config_.encoder, rng);
  decoder_embed_ = nn::Linear<float>("decoder_embed", config_.encoder.width, config_.decoder.width, rng);
  mask_token_ = nn::Param<float>("mask_token", 1, config_.decoder.width);
  nn::normal_init(mask_token_.value, rng, 0.02);
  decoder_pos_ = nn::sincos_position_embedding<float>(grid_.rows, grid_.cols, config_.decoder.width);
  decoder_ = nn::TransformerStack<float>("decoder", config_.decoder, rng);
  head_ = nn::Linear<float>("decoder_pred", config_.decoder.width, pd, rng);
}

std::size_t MaskedAutoencoder::parameter_count() const {
  std::size_t n = 0;
  for_each_param([&](const nn::Param<float>& p) { n += static_cast<std::size_t>(p.value.size()); });
  return n;
}

nn::Mat<float> MaskedAutoencoder::encode(const Patches& patches, const std::vector<int>& visible,
                                         nn::StackCache<float>* cache,
                                         std::vector<std::vector<nn::Mat<float>>>* attention) const {
  const nn::Mat<float> x = gather_rows(patches, visible);
  nn::Mat<float> emb = patch_embed_.forward(x);
  for (std::size_t k = 0; k < visible.size(); ++k) emb.row(static_cast<Eigen::Index>(k)) += encoder_pos_.row(visible[k]);
  return encoder_.forward(emb, {}, cache, attention);
}

nn::Mat<float> MaskedAutoencoder::decoder_input(const nn::Mat<float>& latent_embedded, const MaskPlan& plan,
                                                int extra_slot) const {
  const int n_total = grid_.n_total();
  nn::Mat<float> in(n_total + (extra_slot >= 0 ? 1 : 0), config_.decoder.width);
  for (int m : plan.masked) in.row(m) = mask_token_.value.row(0);
  for (std::size_t k = 0; k < plan.visible.size(); ++k)
    in.row(plan.visible[k]) = latent_embedded.row(static_cast<Eigen::Index>(k));
  in.topRows(n_total) += decoder_pos_;
  if (extra_slot >= 0) in.row(n_total) = mask_token_.value.row(0) + decoder_pos_.row(extra_slot);
  return in;
}

nn::Mat<float> MaskedAutoencoder::decode(const nn::Mat<float>& dec_in, const nn::KeyMask& mask,
                                         nn::StackCache<float>* cache) const {
  return head_.forward(decoder_.forward(dec_in, mask, cache));
}

nn::Mat<float> MaskedAutoencoder::predict(const Patches& patches, const MaskPlan& plan) const {
  nn::Mat<float> z(0, config_.decoder.width);
  if (!plan.visible.empty()) z = decoder_embed_.forward(encode(patches, plan.visible, nullptr));
  return decode(decoder_input(z, plan, -1), {}, nullptr);
}

Image MaskedAutoencoder::assemble(const Image& image, const Patches& patches, const nn::Mat<float>& predictions,
                                  const MaskPlan& plan) const {
  Image out = image;
  Eigen::RowVectorXf values(grid_.patch_dim());
  for (int m : plan.masked) {
    values = predictions.row(m);
    if (config_.target == TargetTransform::PerPatchNorm) {
      // De-normalized with the original patch statistics.
      float mean, stddev;
      patch_stats(patches.row(m), mean, stddev);
      values = values.array() * stddev + mean;
    }
    values = values.cwiseMax(0.0f).cwiseMin(1.0f);
    write_patch(out, grid_, m, values.data());
  }
  return out;
}

Image MaskedAutoencoder::reconstruct(const Image& image, const MaskPlan& plan) const {
  validate_plan(plan, grid_);
  const Patches patches = patchify(image, grid_);
  return assemble(image, patches, predict(patches, plan), plan);
}

Image MaskedAutoencoder::loo_before_decoder(const Image& image, const Patches& patches, const MaskPlan& plan,
                                            const nn::Mat<float>& latent_embedded, int position) const {
  const int n_total = grid_.n_total();
  const int removed = plan.visible[position];
  nn::KeyMask mask(n_total + 1, 1);
  mask[removed] = 0;
  nn::Mat<float> pred = decode(decoder_input(latent_embedded, plan, removed), mask, nullptr);
  pred.row(removed) = pred.row(n_total);
  return assemble(image, patches, pred.topRows(n_total), remove_patch(plan, position));
}

Image MaskedAutoencoder::leave_one_out(const Image& image, const MaskPlan& plan, int position,
                                       RemovalPhase phase) const {
  validate_plan(plan, grid_);
  if (position < 0 || position >= plan.n_visible())
    throw InvalidInput("leave-one-out position " + std::to_string(position) + " out of range");
  if (phase == RemovalPhase::BeforeEncoder) return reconstruct(image, remove_patch(plan, position));
  const Patches patches = patchify(image, grid_);
  const nn::Mat<float> z = decoder_embed_.forward(encode(patches, plan.visible, nullptr));
  return loo_before_decoder(image, patches, plan, z, position);
}

std::vector<Image> MaskedAutoencoder::leave_one_out_all(const Image& image, const MaskPlan& plan,
                                                        RemovalPhase phase) const {
  validate_plan(plan, grid_);
  std::vector<Image> out;
  out.reserve(plan.visible.size());
  if (phase == RemovalPhase::BeforeEncoder) {
    for (int i = 0; i < plan.n_visible(); ++i) out.push_back(reconstruct(image, remove_patch(plan, i)));
    return out;
  }
  if (plan.visible.empty()) return out;
  const Patches patches = patchify(image, grid_);
  const nn::Mat<float> z = decoder_embed_.forward(encode(patches, plan.visible, nullptr));
  for (int i = 0; i < plan.n_visible(); ++i) out.push_back(loo_before_decoder(image, patches, plan, z, i));
  return out;
}

Image MaskedAutoencoder::leave_one_out_by_deletion(const Image& image, const MaskPlan& plan, int position) const {
  validate_plan(plan, grid_);
  if (position < 0 || position >= plan.n_visible())
    throw InvalidInput("leave-one-out position " + std::to_string(position) + " out of range");
  const Patches patches = patchify(image, grid_);
  const nn::Mat<float> z = decoder_embed_.forward(encode(patches, plan.visible, nullptr));
  nn::Mat<float> kept(z.rows() - 1, z.cols());
  for (Eigen::Index k = 0, r = 0; k < z.rows(); ++k)
    if (k != position) kept.row(r++) = z.row(k);
  const MaskPlan reduced = remove_patch(plan, position);
  return assemble(image, patches, decode(decoder_input(kept, reduced, -1), {}, nullptr), reduced);
}

AttentionMaps MaskedAutoencoder::attention_maps(const Image& image) const {
  const Patches patches = patchify(image, grid_);
  const MaskPlan plan = full_plan(grid_);
  std::vector<std::vector<nn::Mat<float>>> raw;
  encode(patches, plan.visible, nullptr, &raw);
  AttentionMaps maps;
  maps.token_positions = plan.visible;
  for (auto& layer : raw) {
    maps.layers.emplace_back();
    for (auto& head : layer) maps.layers.back().push_back(head);
  }
  return maps;
}

double MaskedAutoencoder::masked_loss(const Patches& patches, const MaskPlan& plan) const {
  if (plan.masked.empty()) return 0.0;
  const nn::Mat<float> pred = predict(patches, plan);
  double sum = 0.0;
  for (int m : plan.masked) {
    const Eigen::RowVectorXf target = transform_target(patches.row(m), config_.target);
    sum += static_cast<double>((pred.row(m) - target).squaredNorm());
  }
  return sum / (static_cast<double>(plan.masked.size()) * grid_.patch_dim());
}

double MaskedAutoencoder::accumulate_gradients(const Patches& patches, const MaskPlan& plan, float weight) {
  if (plan.masked.empty()) return 0.0;
  const bool has_visible = !plan.visible.empty();
  nn::Mat<float> x, latent, z(0, config_.decoder.width);
  nn::StackCache<float> enc_cache, dec_cache;
  if (has_visible) {
    x = gather_rows(patches, plan.visible);
    nn::Mat<float> emb = patch_embed_.forward(x);
    for (std::size_t k = 0; k < plan.visible.size(); ++k)
      emb.row(static_cast<Eigen::Index>(k)) += encoder_pos_.row(plan.visible[k]);
    latent = encoder_.forward(emb, {}, &enc_cache);
    z = decoder_embed_.forward(latent);
  }
  const nn::Mat<float> dec_in = decoder_input(z, plan, -1);
  const nn::Mat<float> h = decoder_.forward(dec_in, {}, &dec_cache);
  const nn::Mat<float> pred = head_.forward(h);

  const double denom = static_cast<double>(plan.masked.size()) * grid_.patch_dim();
  double sum = 0.0;
  nn::Mat<float> dpred = nn::Mat<float>::Zero(pred.rows(), pred.cols());
  const float g = static_cast<float>(2.0 / denom) * weight;
  for (int m : plan.masked) {
    const Eigen::RowVectorXf diff = pred.row(m) - transform_target(patches.row(m), config_.target);
    sum += static_cast<double>(diff.squaredNorm());
    dpred.row(m) = diff * g;
  }

  const nn::Mat<float> dh = head_.backward(h, dpred);
  const nn::Mat<float> ddec_in = decoder_.backward(dec_cache, dh);
  for (int m : plan.masked) mask_token_.grad.row(0) += ddec_in.row(m);
  if (has_visible) {
    nn::Mat<float> dz(z.rows(), z.cols());
    for (std::size_t k = 0; k < plan.visible.size(); ++k)
      dz.row(static_cast<Eigen::Index>(k)) = ddec_in.row(plan.visible[k]);
    const nn::Mat<float> dlatent = decoder_embed_.backward(latent, dz);
    const nn::Mat<float> demb = encoder_.backward(enc_cache, dlatent);
    patch_embed_.backward(x, demb);
  }
  return sum / denom;
}

void MaskedAutoencoder::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.config = {{"kind", "mae"}, {"config", config_.to_json()}};
  ck.arrays = export_params(*this);
  save_checkpoint(path, ck);
}

MaskedAutoencoder MaskedAutoencoder::load(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.config.value("kind", "") != "mae") throw InvalidInput("not an MAE checkpoint: " + path.string());
  MaskedAutoencoder model(MAEConfig::from_json(ck.config.at("config")));
  import_params(model, ck.arrays);
  return model;
}

MaskedAutoencoder MaskedAutoencoder::load(const std::filesystem::path& path, const MAEConfig& expected) {
  const Checkpoint ck = load_checkpoint(path, nlohmann::json{{"kind", "mae"}, {"config", expected.to_json()}});
  MaskedAutoencoder model(expected);
  import_params(model, ck.arrays);
  return model;
}

// ---------------------------------------------------------------------------
// Training

double evaluate_masked_loss(const MaskedAutoencoder& model, std::span<const Image> images, double masking_ratio,
                            std::uint64_t seed) {
  if (images.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const MaskPlan plan = sample_mask(model.grid(), masking_ratio, derive_seed(seed, i));
    total += model.masked_loss(patchify(images[i], model.grid()), plan);
  }
  return total / static_cast<double>(images.size());
}

MAETrainResult pretrain_mae(std::span<const Image> train, std::span<const Image> heldout, const MAEConfig& config,
                            const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw InvalidInput("pretrain_mae: empty dataset");
  const GridSpec grid = config.grid();
  std::vector<Patches> patches;
  patches.reserve(train.size());
  for (const auto& img : train) patches.push_back(patchify(img, grid));
  for (const auto& img : heldout) patchify(img, grid);  // dimension check

  const std::uint64_t heldout_seed = derive_seed(config.seed, "mae.heldout");
  MAETrainResult result{MaskedAutoencoder(config), {}, 0.0, 0.0};
  MaskedAutoencoder& model = result.model;
  result.untrained_heldout_loss = evaluate_masked_loss(model, heldout, config.masking_ratio, heldout_seed);

  auto params = nn::collect_params<float>(model);
  nn::AdamOptions opts;
  opts.lr = config.lr;
  opts.beta2 = 0.95;
  opts.weight_decay = config.weight_decay;
  nn::AdamW<float> optimizer(params, opts);

  const std::size_t n = train.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(config.epochs);
  const std::size_t warmup = steps_per_epoch * static_cast<std::size_t>(config.warmup_epochs);
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), 0x5eedULL));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::size_t end = std::min(n, start + batch);
      nn::zero_grad(params);
      double batch_sum = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const MaskPlan plan =
            sample_mask(grid, config.masking_ratio, derive_seed(config.seed, static_cast<std::uint64_t>(epoch), idx));
        batch_sum += model.accumulate_gradients(patches[idx], plan);
      }
      if (!std::isfinite(batch_sum)) throw TrainingDiverged("MAE pretraining produced a non-finite loss", step);
      const double count = static_cast<double>(end - start);
      optimizer.step(nn::warmup_cosine_lr(config.lr, step, warmup, total_steps), 1.0 / count);
      epoch_sum += batch_sum;
    }
    const double epoch_loss = epoch_sum / static_cast<double>(n);
    result.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  result.heldout_loss = evaluate_masked_loss(model, heldout, config.masking_ratio, heldout_seed);
  return result;
}

double scoring_flops(const MAEConfig& config, int n_visible, RemovalPhase phase) {
  const GridSpec grid = config.grid();
  const double pd = grid.patch_dim();
  const double n_total = grid.n_total();
  const double de = config.encoder.width, dd = config.decoder.width;
  auto encode_cost = [&](double tokens) {
    return tokens * pd * de + nn::stack_flops(config.encoder, tokens).total() + tokens * de * dd;
  };
  auto decode_cost = [&](double tokens) { return nn::stack_flops(config.decoder, tokens).total() + tokens * dd * pd; };
  const double n = n_visible;
  const double anchor = encode_cost(n) + decode_cost(n_total);
  if (phase == RemovalPhase::BeforeEncoder) return anchor + n * (encode_cost(n - 1) + decode_cost(n_total));
  return anchor + n * decode_cost(n_total + 1);
}

}  // namespace ltrp
