#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "ltrp/annotations.hpp"
#include "ltrp/grid.hpp"
#include "ltrp/nn.hpp"
#include "ltrp/oracle.hpp"
#include "ltrp/selector.hpp"

namespace ltrp {

/// Union of the objects whose category passes `filter`. Categories missing
/// from `categories` count as learned.
BinaryMask foreground_mask(const ForegroundAnnotation& annotation, int height, int width,
                           std::span<const Category> categories, CategoryFilter filter = CategoryFilter::All,
                           ForegroundSource source = ForegroundSource::Auto);

BinaryMask selection_mask(std::span<const int> indices, const GridSpec& grid);
inline BinaryMask selection_mask(const SelectionResult& r, const GridSpec& grid) { return selection_mask(r.indices, grid); }

struct PatchMetrics {
  double iou = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Pixel-level agreement of selection S with foreground F. An empty F gives recall 1.
PatchMetrics patch_metrics(const BinaryMask& selection, const BinaryMask& foreground);
PatchMetrics patch_metrics(std::size_t selected, std::size_t foreground, std::size_t overlap);

struct ProbeConfig {
  nn::StackShape stack{2, 64, 4, 4};
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.05;
  int warmup_epochs = 1;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ProbeConfig from_json(const nlohmann::json& j);
};

/// Transformer classifier over a subset of patches placed at their grid
/// positions with learned embeddings; mean-pooled into a linear head.
class ProbeClassifier {
 public:
  ProbeClassifier(const GridSpec& grid, int num_classes, const ProbeConfig& config);

  Eigen::VectorXf logits(const Patches& patches, std::span<const int> kept) const;
  int predict(const Patches& patches, std::span<const int> kept) const;
  /// Cross-entropy; accumulates d(loss * weight)/d(theta).
  double accumulate_gradients(const Patches& patches, std::span<const int> kept, int label, float weight);

  template <class F>
  void for_each_param(F&& f) {
    embed_.for_each_param(f);
    f(pos_);
    stack_.for_each_param(f);
    head_.for_each_param(f);
  }

 private:
  nn::Mat<float> tokens(const Patches& patches, std::span<const int> kept) const;

  GridSpec grid_;
  nn::Linear<float> embed_;
  nn::Param<float> pos_;
  nn::TransformerStack<float> stack_;
  nn::Linear<float> head_;
};

struct ProbeSample {
  const Image* image = nullptr;
  int label = 0;
  std::vector<int> kept;  // retained grid indices
};

struct ProbeResult {
  double accuracy = 0.0;
  std::vector<double> epoch_losses;
};

ProbeResult train_probe(std::span<const ProbeSample> train, std::span<const ProbeSample> heldout, int num_classes,
                        const GridSpec& grid, const ProbeConfig& config);

struct FlopsModel {
  nn::StackShape stack;
  int patch_dim = 0;
  int num_classes = 0;
  bool class_token = false;
};

struct FlopsEstimate {
  double attention = 0.0;
  double projections = 0.0;
  double mlp = 0.0;
  double embed_head = 0.0;
  double total() const { return attention + projections + mlp + embed_head; }
};

/// Multiply-accumulate count: per block 12*n*d^2 (at MLP ratio 4) plus
/// 2*n^2*d, a patch embedding per patch token and a linear head. Norms,
/// softmax and activations are excluded.
FlopsEstimate flops_estimate(const FlopsModel& model, int tokens);

inline FlopsModel vit_base() { return FlopsModel{{12, 768, 12, 4}, 16 * 16 * 3, 1000, true}; }

/// Mean over queries and images of the attention-weighted pixel distance
/// between patch centers, per (layer, head).
Eigen::MatrixXd attention_distance(const AttentionMaps& maps, const GridSpec& grid);
Eigen::MatrixXd attention_distance(const AttentionIntrospection& model, std::span<const Image> images,
                                   const GridSpec& grid);

}  // namespace ltrp
