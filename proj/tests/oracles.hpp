#pragma once

// Brute-force reference implementations. Written independently of the
// library code: direct products instead of log-space sums, full
// enumeration, explicit recursion.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <tuple>
#include <vector>

#include <Eigen/Core>

namespace oracle {

/// P_s(pi) as a plain product of softmax factors over shrinking suffixes.
inline double plackett_luce_probability(const std::vector<double>& s, const std::vector<int>& pi) {
  double p = 1.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    double denom = 0.0;
    for (std::size_t j = i; j < pi.size(); ++j) denom += std::exp(s[pi[j]]);
    p *= std::exp(s[pi[i]]) / denom;
  }
  return p;
}

/// Descending order of y by selection sort; ties keep the lower position first.
inline std::vector<int> true_order(const std::vector<double>& y) {
  std::vector<int> left(y.size());
  std::iota(left.begin(), left.end(), 0);
  std::vector<int> out;
  while (!left.empty()) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < left.size(); ++k)
      if (y[left[k]] > y[left[best]]) best = k;
    out.push_back(left[best]);
    left.erase(left.begin() + static_cast<long>(best));
  }
  return out;
}

inline double listmle_brute(const std::vector<double>& s, const std::vector<double>& y) {
  return -std::log(plackett_luce_probability(s, true_order(y)));
}

inline double permutation_mass(const std::vector<double>& s) {
  std::vector<int> pi(s.size());
  std::iota(pi.begin(), pi.end(), 0);
  double total = 0.0;
  do {
    total += plackett_luce_probability(s, pi);
  } while (std::next_permutation(pi.begin(), pi.end()));
  return total;
}

inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

struct Dpc {
  std::vector<double> rho, delta, gamma;
  std::vector<int> centers, assignment;
};

/// Density peaks, straight from the definitions.
inline Dpc dpc_brute(const std::vector<std::vector<double>>& x, int k, int knn_k) {
  const int n = static_cast<int>(x.size());
  auto d2 = [&](int i, int j) {
    double s = 0.0;
    for (std::size_t t = 0; t < x[i].size(); ++t) s += (x[i][t] - x[j][t]) * (x[i][t] - x[j][t]);
    return s;
  };
  Dpc r;
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> nb;
    for (int j = 0; j < n; ++j)
      if (j != i) nb.emplace_back(d2(i, j), j);
    std::sort(nb.begin(), nb.end());
    double sum = 0.0;
    for (int m = 0; m < knn_k; ++m) sum += nb[m].first;
    r.rho.push_back(std::exp(-sum / knn_k));
  }
  std::vector<int> parent(n, -1);
  for (int i = 0; i < n; ++i) {
    double best = INFINITY, far = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      far = std::max(far, d2(i, j));
      const bool higher = r.rho[j] > r.rho[i] || (r.rho[j] == r.rho[i] && j < i);
      if (higher && d2(i, j) < best) {
        best = d2(i, j);
        parent[i] = j;
      }
    }
    r.delta.push_back(std::sqrt(parent[i] < 0 ? far : best));
    r.gamma.push_back(r.rho[i] * r.delta[i]);
  }
  std::vector<std::pair<double, int>> g;
  for (int i = 0; i < n; ++i) g.emplace_back(-r.gamma[i], i);
  std::sort(g.begin(), g.end());
  for (int c = 0; c < k; ++c) r.centers.push_back(g[c].second);
  std::function<int(int)> root = [&](int i) -> int {
    if (std::find(r.centers.begin(), r.centers.end(), i) != r.centers.end()) return i;
    return root(parent[i]);
  };
  for (int i = 0; i < n; ++i) r.assignment.push_back(root(i));
  return r;
}

/// Nearest visible cell by exhaustive search; ties to the lower index.
inline std::vector<int> nearest_visible_table(int rows, int cols, const std::vector<int>& visible) {
  std::vector<int> out(rows * cols, -1);
  for (int i = 0; i < rows * cols; ++i) {
    long best = -1;
    for (int v : visible) {
      const long dr = i / cols - v / cols, dc = i % cols - v % cols;
      const long d = dr * dr + dc * dc;
      if (best < 0 || d < best || (d == best && v < out[i])) {
        best = d;
        out[i] = v;
      }
    }
  }
  return out;
}

}  // namespace oracle
