#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltrp/grid.hpp"
#include "ltrp/nn.hpp"
#include "ltrp/scorer.hpp"

namespace ltrp {

class MaskedAutoencoder;

enum class LossKind { ListMLE, ListNet, RankNet, Regression };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

/// Positions 0..n-1 ordered by descending y; ties by ascending position.
std::vector<int> descending_permutation(std::span<const double> y);

/// ListMLE: -log P_s(pi). ListNet: CE(softmax(y), softmax(s)). RankNet: mean
/// softplus(-(s_i - s_j)) over pairs with y_i > y_j. Regression: MSE against
/// min-max normalized y (all 0.5 when y is constant).
double ranking_loss(LossKind kind, std::span<const double> s, std::span<const double> y);
std::vector<double> loss_gradient(LossKind kind, std::span<const double> s, std::span<const double> y);

/// Kendall tau-b. nullopt when either sequence is constant.
std::optional<double> kendall_tau(std::span<const double> a, std::span<const double> b);

struct RankerConfig {
  int image_size = 32;
  int channels = 3;
  int patch_size = 4;
  nn::StackShape stack{4, 128, 4, 4};
  bool sparse = true;
  bool position_agnostic = false;
  LossKind loss = LossKind::ListMLE;
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.05;
  int warmup_epochs = 2;
  bool init_from_encoder = false;
  std::uint64_t seed = 0;

  GridSpec grid() const { return GridSpec::for_image(image_size, image_size, channels, patch_size); }
  void validate() const;
  nlohmann::json to_json() const;
  static RankerConfig from_json(const nlohmann::json& j);
};

/// Linear patch embedding, learned positional embeddings over the full grid,
/// pre-norm transformer, one scalar per token.
class RankerModel final : public AttentionIntrospection {
 public:
  explicit RankerModel(RankerConfig config);

  const RankerConfig& config() const { return config_; }
  const GridSpec& grid() const { return grid_; }

  /// Scores for the visible positions of `plan`, in plan order. In sparse mode
  /// only visible patches are tokens; otherwise every cell is a token and the
  /// masked ones carry a learned mask embedding instead of pixels.
  std::vector<float> score_visible(const Patches& patches, const MaskPlan& plan) const;

  /// One score per grid cell with every patch visible.
  std::vector<float> score_image(const Image& image) const;
  std::vector<float> score_patches(const Patches& patches) const;

  /// Attention with every patch visible.
  AttentionMaps attention_maps(const Image& image) const override;

  /// Loss on one instance; accumulates d(loss * weight)/d(theta).
  double accumulate_gradients(const RankingInstance& instance, LossKind kind, float weight);

  /// Copies patch embedding and transformer blocks from an MAE encoder of the same shape.
  void init_from_encoder(const MaskedAutoencoder& mae);

  template <class F>
  void for_each_param(F&& f) {
    embed_.for_each_param(f);
    f(pos_);
    f(mask_token_);
    stack_.for_each_param(f);
    head_.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    embed_.for_each_param(f);
    f(pos_);
    f(mask_token_);
    stack_.for_each_param(f);
    head_.for_each_param(f);
  }

  void save(const std::filesystem::path& path) const;
  static RankerModel load(const std::filesystem::path& path);
  static RankerModel load(const std::filesystem::path& path, const RankerConfig& expected);

 private:
  struct Tokens {
    nn::Mat<float> x;
    std::vector<int> positions;
    std::vector<int> scored;  // token rows whose scores are returned
    std::vector<char> is_mask;
  };
  Tokens tokens(const Patches& patches, const MaskPlan& plan) const;
  nn::Mat<float> embed(const Tokens& t) const;

  RankerConfig config_;
  GridSpec grid_;
  nn::Linear<float> embed_;
  nn::Param<float> pos_;
  nn::Param<float> mask_token_;
  nn::TransformerStack<float> stack_;
  nn::Linear<float> head_;
};

struct RankerLogRow {
  int epoch = 0;
  double loss = 0.0;
  double heldout_kendall_tau = 0.0;
};

struct RankerTrainResult {
  RankerModel model;
  std::vector<RankerLogRow> log;
  double untrained_heldout_tau = 0.0;
  double heldout_tau = 0.0;
};

/// Instances for one epoch; called once per epoch so pseudo scores can be regenerated.
using InstanceSource = std::function<std::vector<RankingInstance>(int epoch)>;

/// Mean Kendall tau between model scores and pseudo scores; instances whose
/// pseudo scores are all tied are skipped.
double mean_kendall_tau(const RankerModel& model, std::span<const RankingInstance> instances);

RankerTrainResult train_ranker(const InstanceSource& source, std::span<const RankingInstance> heldout,
                               const RankerConfig& config, const MaskedAutoencoder* init_encoder = nullptr,
                               const std::function<void(const RankerLogRow&)>& on_epoch = {});

void write_training_log(const std::filesystem::path& path, const std::vector<RankerLogRow>& log);

}  // namespace ltrp
