#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ltrp {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ClusterResult {
  std::vector<int> centers;  // ordered by descending gamma, ties by index
  std::vector<int> assignment;  // center index for every point
  std::vector<double> rho;
  std::vector<double> delta;
  std::vector<double> gamma;
  std::vector<int> nearest_higher;  // -1 for the global density peak
};

/// Density peaks with kNN density. Point j is "higher" than i when
/// rho_j > rho_i, or rho_j == rho_i and j < i.
ClusterResult dpc_knn(const FeatureMatrix& points, int k, int knn_k);

struct SelectionConfig {
  double keep_ratio = 0.5;
  double clustering_ratio = 0.2;
  int knn_k = 5;  // clamped to N - 1

  void validate() const;
};

enum class Provenance { Ranked, Cluster };

struct SelectionResult {
  std::vector<int> indices;  // ranked picks first, then cluster representatives
  std::vector<Provenance> provenance;

  std::vector<int> sorted_indices() const;
};

int keep_count(int n_total, double keep_ratio);
int cluster_count(int k, double clustering_ratio);

/// Indices ordered by descending score, ties by ascending index.
std::vector<int> rank_by_score(std::span<const double> scores);

SelectionResult select_patches(std::span<const double> scores, const FeatureMatrix& features,
                               const SelectionConfig& config);

/// k indices drawn uniformly without replacement.
SelectionResult random_selection(int n_total, double keep_ratio, std::uint64_t seed);

std::string to_string(Provenance p);

}  // namespace ltrp
