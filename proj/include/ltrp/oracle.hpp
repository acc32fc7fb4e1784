#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ltrp/grid.hpp"
#include "ltrp/nn.hpp"

namespace ltrp {

enum class TargetTransform { RawPixels, PerPatchNorm };
enum class RemovalPhase { BeforeEncoder, BeforeDecoder };

std::string to_string(TargetTransform t);
std::string to_string(RemovalPhase p);
TargetTransform parse_target_transform(const std::string& s);
RemovalPhase parse_removal_phase(const std::string& s);

/// Attention weights of one forward pass: layers x heads, each (queries x keys),
/// plus the grid index of every token.
struct AttentionMaps {
  std::vector<std::vector<Eigen::MatrixXf>> layers;
  std::vector<int> token_positions;
};

/// Models that can report their attention weights override `attention_maps`.
class AttentionIntrospection {
 public:
  virtual ~AttentionIntrospection() = default;
  virtual AttentionMaps attention_maps(const Image& image) const;
};

/// Anything that can fill in the masked patches of an image from its visible ones.
class Reconstructor : public AttentionIntrospection {
 public:
  virtual const GridSpec& grid() const = 0;

  /// Full-size image. Visible positions carry the original pixels.
  virtual Image reconstruct(const Image& image, const MaskPlan& plan) const = 0;

  /// Reconstruction with visible position `position` excluded. The default
  /// re-runs `reconstruct` on the reduced plan for either phase.
  virtual Image leave_one_out(const Image& image, const MaskPlan& plan, int position, RemovalPhase phase) const;

  /// All n leave-one-out reconstructions, sharing whatever work the phase allows.
  virtual std::vector<Image> leave_one_out_all(const Image& image, const MaskPlan& plan, RemovalPhase phase) const;
};

/// Nearest-visible-patch interpolation: every masked patch copies the visible
/// patch closest in grid Euclidean distance (ties to the lower index). With no
/// visible patches the result is a uniform 0.5 gray image.
Image synthetic_reconstruct(const Image& image, const GridSpec& grid, const MaskPlan& plan);

class SyntheticReconstructor final : public Reconstructor {
 public:
  explicit SyntheticReconstructor(GridSpec grid) : grid_(grid) {}
  const GridSpec& grid() const override { return grid_; }
  Image reconstruct(const Image& image, const MaskPlan& plan) const override {
    return synthetic_reconstruct(image, grid_, plan);
  }

 private:
  GridSpec grid_;
};

struct MAEConfig {
  int image_size = 32;
  int channels = 3;
  int patch_size = 4;
  nn::StackShape encoder{4, 128, 4, 4};
  nn::StackShape decoder{2, 64, 2, 4};
  TargetTransform target = TargetTransform::RawPixels;
  double masking_ratio = 0.75;
  int epochs = 50;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.05;
  int warmup_epochs = 2;
  std::uint64_t seed = 0;

  GridSpec grid() const { return GridSpec::for_image(image_size, image_size, channels, patch_size); }
  void validate() const;
  nlohmann::json to_json() const;
  static MAEConfig from_json(const nlohmann::json& j);
};

/// Desk-scale masked autoencoder: linear patch embedding, fixed 2-D sin-cos
/// positions, pre-norm transformer encoder over visible patches, lightweight
/// decoder over the full grid with a learned mask token, linear pixel head.
class MaskedAutoencoder final : public Reconstructor {
 public:
  explicit MaskedAutoencoder(MAEConfig config);

  const MAEConfig& config() const { return config_; }
  const GridSpec& grid() const override { return grid_; }

  Image reconstruct(const Image& image, const MaskPlan& plan) const override;

  /// before_encoder: re-encodes the n-1 remaining patches. before_decoder:
  /// encodes all n patches once, then decodes with an extra mask-token slot at
  /// the removed position while the removed token is hidden from every query
  /// by the attention mask.
  Image leave_one_out(const Image& image, const MaskPlan& plan, int position, RemovalPhase phase) const override;
  std::vector<Image> leave_one_out_all(const Image& image, const MaskPlan& plan, RemovalPhase phase) const override;

  /// before_decoder removal realized by physically replacing the removed
  /// token's decoder slot with a mask token; used to check the masked path.
  Image leave_one_out_by_deletion(const Image& image, const MaskPlan& plan, int position) const;

  /// Encoder attention with every patch visible.
  AttentionMaps attention_maps(const Image& image) const override;

  /// Raw head output for every grid cell (n_total x patch_dim), in target space.
  nn::Mat<float> predict(const Patches& patches, const MaskPlan& plan) const;

  /// Encoder output for the given grid indices, one row each.
  nn::Mat<float> encode_patches(const Patches& patches, const std::vector<int>& indices) const {
    return encode(patches, indices, nullptr);
  }

  /// Mean masked-patch MSE for one image and plan.
  double masked_loss(const Patches& patches, const MaskPlan& plan) const;

  /// Same loss; also accumulates d(loss * weight)/d(theta) into the parameter gradients.
  double accumulate_gradients(const Patches& patches, const MaskPlan& plan, float weight = 1.0f);

  template <class F>
  void for_each_param(F&& f) {
    patch_embed_.for_each_param(f);
    encoder_.for_each_param(f);
    decoder_embed_.for_each_param(f);
    f(mask_token_);
    decoder_.for_each_param(f);
    head_.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    patch_embed_.for_each_param(f);
    encoder_.for_each_param(f);
    decoder_embed_.for_each_param(f);
    f(mask_token_);
    decoder_.for_each_param(f);
    head_.for_each_param(f);
  }

  void save(const std::filesystem::path& path) const;
  static MaskedAutoencoder load(const std::filesystem::path& path);
  /// Rejects a checkpoint whose stored config differs from `expected`.
  static MaskedAutoencoder load(const std::filesystem::path& path, const MAEConfig& expected);

  std::size_t parameter_count() const;

 private:
  nn::Mat<float> encode(const Patches& patches, const std::vector<int>& visible, nn::StackCache<float>* cache,
                        std::vector<std::vector<nn::Mat<float>>>* attention = nullptr) const;
  nn::Mat<float> decoder_input(const nn::Mat<float>& latent_embedded, const MaskPlan& plan, int extra_slot) const;
  nn::Mat<float> decode(const nn::Mat<float>& dec_in, const nn::KeyMask& mask, nn::StackCache<float>* cache) const;
  Image assemble(const Image& image, const Patches& patches, const nn::Mat<float>& predictions,
                 const MaskPlan& plan) const;
  Image loo_before_decoder(const Image& image, const Patches& patches, const MaskPlan& plan,
                           const nn::Mat<float>& latent_embedded, int position) const;

  MAEConfig config_;
  GridSpec grid_;
  nn::Linear<float> patch_embed_;
  nn::Mat<float> encoder_pos_;
  nn::TransformerStack<float> encoder_;
  nn::Linear<float> decoder_embed_;
  nn::Param<float> mask_token_;
  nn::Mat<float> decoder_pos_;
  nn::TransformerStack<float> decoder_;
  nn::Linear<float> head_;
};

/// Target for one patch under the configured transform.
Eigen::RowVectorXf transform_target(const Eigen::RowVectorXf& patch, TargetTransform target);

struct MAETrainResult {
  MaskedAutoencoder model;
  std::vector<double> epoch_losses;  // mean training loss per epoch
  double untrained_heldout_loss = 0.0;
  double heldout_loss = 0.0;
};

/// Mean masked-patch loss over `images`, each with a mask seeded from `seed` and its index.
double evaluate_masked_loss(const MaskedAutoencoder& model, std::span<const Image> images, double masking_ratio,
                            std::uint64_t seed);

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Minimizes the masked-patch MSE between target-transformed masked patches and
/// predictions. Throws TrainingDiverged on a non-finite loss.
MAETrainResult pretrain_mae(std::span<const Image> train, std::span<const Image> heldout, const MAEConfig& config,
                            const EpochCallback& on_epoch = {});

/// FLOPs of scoring one instance with n visible patches: the anchor
/// reconstruction plus all n leave-one-out reconstructions in the given phase.
double scoring_flops(const MAEConfig& config, int n_visible, RemovalPhase phase);

}  // namespace ltrp
