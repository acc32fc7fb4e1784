#include "ltrp/selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ltrp/errors.hpp"
#include "ltrp/grid.hpp"
#include "ltrp/rng.hpp"

namespace ltrp {

namespace {

double squared_distance(const FeatureMatrix& x, int i, int j) {
  double s = 0.0;
  for (Eigen::Index d = 0; d < x.cols(); ++d) {
    const double v = x(i, d) - x(j, d);
    s += v * v;
  }
  return s;
}

}  // namespace

ClusterResult dpc_knn(const FeatureMatrix& points, int k, int knn_k) {
  const int n = static_cast<int>(points.rows());
  if (n < 1) throw InvalidInput("dpc_knn: no points");
  if (k < 1 || k > n) throw InvalidInput("dpc_knn: cluster count must be in [1, N]");
  if (n > 1 && (knn_k < 1 || knn_k >= n)) throw InvalidInput("dpc_knn: knn_k must be in [1, N)");

  std::vector<double> d2(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) d2[i * n + j] = d2[j * n + i] = squared_distance(points, i, j);

  ClusterResult res;
  res.rho.assign(n, 1.0);
  std::vector<int> others;
  for (int i = 0; i < n && n > 1; ++i) {
    others.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    std::stable_sort(others.begin(), others.end(), [&](int a, int b) { return d2[i * n + a] < d2[i * n + b]; });
    double sum = 0.0;
    for (int m = 0; m < knn_k; ++m) sum += d2[i * n + others[m]];
    res.rho[i] = std::exp(-sum / knn_k);
  }

  auto higher = [&](int j, int i) { return res.rho[j] > res.rho[i] || (res.rho[j] == res.rho[i] && j < i); };
  res.delta.assign(n, 0.0);
  res.nearest_higher.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    double best = 0.0, far = 0.0;
    int arg = -1;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      far = std::max(far, d2[i * n + j]);
      if (higher(j, i) && (arg < 0 || d2[i * n + j] < best)) {
        best = d2[i * n + j];
        arg = j;
      }
    }
    res.nearest_higher[i] = arg;
    res.delta[i] = std::sqrt(arg < 0 ? far : best);
  }

  res.gamma.resize(n);
  for (int i = 0; i < n; ++i) res.gamma[i] = res.rho[i] * res.delta[i];
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return res.gamma[a] > res.gamma[b]; });
  res.centers.assign(order.begin(), order.begin() + k);

  res.assignment.assign(n, -1);
  for (int c : res.centers) res.assignment[c] = c;
  std::vector<int> by_density(n);
  std::iota(by_density.begin(), by_density.end(), 0);
  std::sort(by_density.begin(), by_density.end(), [&](int a, int b) { return higher(a, b); });
  for (int i : by_density) {
    if (res.assignment[i] >= 0) continue;
    // the global peak always wins the gamma ranking, so nearest_higher is set here
    res.assignment[i] = res.assignment[res.nearest_higher[i]];
  }
  return res;
}

void SelectionConfig::validate() const {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw InvalidInput("keep_ratio must be in (0, 1]");
  if (!(clustering_ratio >= 0.0 && clustering_ratio <= 1.0)) throw InvalidInput("clustering_ratio must be in [0, 1]");
  if (knn_k < 1) throw InvalidInput("knn_k must be positive");
}

int keep_count(int n_total, double keep_ratio) {
  return std::max(1, static_cast<int>(round_half_up(keep_ratio * n_total)));
}

int cluster_count(int k, double clustering_ratio) {
  return std::min(k, static_cast<int>(round_half_up(clustering_ratio * k)));
}

std::vector<int> rank_by_score(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<int> SelectionResult::sorted_indices() const {
  std::vector<int> s = indices;
  std::sort(s.begin(), s.end());
  return s;
}

std::string to_string(Provenance p) { return p == Provenance::Ranked ? "ranked" : "cluster"; }

SelectionResult select_patches(std::span<const double> scores, const FeatureMatrix& features,
                               const SelectionConfig& config) {
  config.validate();
  const int n = static_cast<int>(scores.size());
  if (n < 1) throw InvalidInput("select_patches: empty score map");
  if (features.rows() != n) throw InvalidInput("select_patches: feature count differs from score count");
  const int k = keep_count(n, config.keep_ratio);
  const int h = cluster_count(k, config.clustering_ratio);

  const auto ranked = rank_by_score(scores);
  SelectionResult out;
  std::vector<char> taken(n, 0);
  auto take = [&](int idx, Provenance p) {
    taken[idx] = 1;
    out.indices.push_back(idx);
    out.provenance.push_back(p);
  };
  for (int i = 0; i < k - h; ++i) take(ranked[i], Provenance::Ranked);
  if (h == 0) return out;

  const ClusterResult cl = dpc_knn(features, k, n > 1 ? std::min(config.knn_k, n - 1) : 1);
  std::vector<std::vector<int>> members(n);
  for (int i = 0; i < n; ++i) members[cl.assignment[i]].push_back(i);
  std::vector<int> groups = cl.centers;
  std::sort(groups.begin(), groups.end(), [&](int a, int b) {
    if (members[a].size() != members[b].size()) return members[a].size() > members[b].size();
    return a < b;
  });

  int picked = 0;
  for (std::size_t g = 0; g < groups.size() && picked < h; ++g) {
    const int c = groups[g];
    int best = -1;
    double best_d = 0.0;
    for (int m : members[c]) {  // members are in ascending index order
      if (taken[m]) continue;
      const double d = squared_distance(features, m, c);
      if (best < 0 || d < best_d) {
        best = m;
        best_d = d;
      }
    }
    if (best < 0) continue;
    take(best, Provenance::Cluster);
    ++picked;
  }
  for (int idx : ranked) {
    if (picked == h) break;
    if (taken[idx]) continue;
    take(idx, Provenance::Ranked);
    ++picked;
  }
  return out;
}

SelectionResult random_selection(int n_total, double keep_ratio, std::uint64_t seed) {
  const int k = keep_count(n_total, keep_ratio);
  std::vector<int> idx(n_total);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (int i = 0; i < k; ++i) std::swap(idx[i], idx[i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_total - i)))]);
  SelectionResult out;
  out.indices.assign(idx.begin(), idx.begin() + k);
  out.provenance.assign(k, Provenance::Ranked);
  return out;
}

}  // namespace ltrp
