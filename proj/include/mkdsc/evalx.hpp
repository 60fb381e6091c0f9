/*
 * Copyright 2026 The mkdsc Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#pragma once

#include "mkdsc/common.hpp"
#include "mkdsc/kernels.hpp"
#include "mkdsc/mtsdata.hpp"

#include <Eigen/Eigenvalues>

#include <limits>
#include <map>
#include <span>

namespace mkdsc {

// ----------------------------------------------------------------------
// Assignment
// ----------------------------------------------------------------------

/// Hungarian algorithm (shortest augmenting paths with potentials) for a
/// square cost matrix. Returns the column assigned to every row.
inline std::vector<Index> min_cost_assignment(const Matrix& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw ConfigError("min_cost_assignment: cost matrix must be square");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; p[j] is the row matched to column j.
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<std::size_t>(n + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> rowToCol(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= n; ++j)
    if (p[static_cast<std::size_t>(j)] > 0) rowToCol[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return rowToCol;
}

// ----------------------------------------------------------------------
// Clustering metrics
// ----------------------------------------------------------------------

/// Counts of (cluster, class) pairs over densely relabelled partitions.
inline Matrix contingency(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw DataError("contingency: partitions have different sizes");
  std::map<int, Index> pi, ti;
  for (int p : pred) pi.emplace(p, 0);
  for (int t : truth) ti.emplace(t, 0);
  Index k = 0;
  for (auto& [key, idx] : pi) idx = k++;
  k = 0;
  for (auto& [key, idx] : ti) idx = k++;
  Matrix c = Matrix::Zero(static_cast<Index>(pi.size()), static_cast<Index>(ti.size()));
  for (std::size_t i = 0; i < pred.size(); ++i) c(pi[pred[i]], ti[truth[i]]) += 1.0;
  return c;
}

/// 1 - (best one-to-one cluster/class matching count) / n.
inline double clustering_error(std::span<const int> pred, std::span<const int> truth) {
  if (pred.empty()) throw DataError("clustering_error: empty partitions");
  const Matrix c = contingency(pred, truth);
  const Index s = std::max(c.rows(), c.cols());
  Matrix padded = Matrix::Zero(s, s);
  padded.topLeftCorner(c.rows(), c.cols()) = c;
  const Matrix cost = Matrix::Constant(s, s, padded.maxCoeff()) - padded;
  const auto match = min_cost_assignment(cost);
  double matched = 0.0;
  for (Index r = 0; r < s; ++r) matched += padded(r, match[static_cast<std::size_t>(r)]);
  return 1.0 - matched / static_cast<double>(pred.size());
}

/// Mutual information normalised by the geometric mean of the entropies.
inline double nmi(std::span<const int> pred, std::span<const int> truth) {
  if (pred.empty()) throw DataError("nmi: empty partitions");
  const Matrix c = contingency(pred, truth);
  const double n = static_cast<double>(pred.size());
  const Vector rows = c.rowwise().sum();
  const Vector cols = c.colwise().sum().transpose();
  auto entropy = [n](const Vector& counts) {
    double h = 0.0;
    for (Index i = 0; i < counts.size(); ++i)
      if (counts[i] > 0) h -= counts[i] / n * std::log(counts[i] / n);
    return h;
  };
  const double hp = entropy(rows), ht = entropy(cols);
  if (c.rows() == 1 && c.cols() == 1) return 1.0;
  if (hp <= 0.0 || ht <= 0.0) return 0.0;
  double mi = 0.0;
  for (Index i = 0; i < c.rows(); ++i)
    for (Index j = 0; j < c.cols(); ++j)
      if (c(i, j) > 0) mi += c(i, j) / n * std::log(c(i, j) * n / (rows[i] * cols[j]));
  return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

struct ClusterScore {
  double ce = 0.0;
  double nmi = 0.0;
  Matrix contingency;
};

inline ClusterScore score_clustering(std::span<const int> pred, std::span<const int> truth) {
  return {clustering_error(pred, truth), nmi(pred, truth), contingency(pred, truth)};
}

/// Aligns two id-keyed assignments; the id sets must be identical.
inline ClusterScore score_clustering(const std::map<std::string, int>& pred, const std::map<std::string, int>& truth) {
  if (pred.size() != truth.size()) throw DataError("score: prediction and truth cover different sequences");
  std::vector<int> p, t;
  for (const auto& [id, label] : truth) {
    const auto it = pred.find(id);
    if (it == pred.end()) throw DataError("score: sequence '" + id + "' has no predicted cluster");
    p.push_back(it->second);
    t.push_back(label);
  }
  return score_clustering(p, t);
}

// ----------------------------------------------------------------------
// k-means and the spectral baseline
// ----------------------------------------------------------------------

/// Lloyd's k-means on the rows of `points`, k-means++ seeding, best of
/// `restarts` by inertia.
inline std::vector<int> kmeans(const Matrix& points, int k, std::uint64_t seed, int restarts = 10, int maxIters = 100) {
  const Index n = points.rows();
  if (k < 1 || k > n) throw ConfigError("kmeans: need 1 <= k <= number of points");
  Rng rng(seed);
  std::vector<int> best;
  double bestInertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    Matrix centres(k, points.cols());
    centres.row(0) = points.row(static_cast<Index>(rng.below(static_cast<std::size_t>(n))));
    Vector d2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
    for (int c = 1; c < k; ++c) {
      for (Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (points.row(i) - centres.row(c - 1)).squaredNorm());
      const double total = d2.sum();
      Index pick = 0;
      if (total > 0.0) {
        double target = rng.uniform() * total;
        for (pick = 0; pick < n - 1; ++pick) {
          target -= d2[pick];
          if (target < 0.0) break;
        }
      } else {
        pick = static_cast<Index>(rng.below(static_cast<std::size_t>(n)));
      }
      centres.row(c) = points.row(pick);
    }
    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    double inertia = 0.0;
    for (int it = 0; it < maxIters; ++it) {
      bool changed = false;
      inertia = 0.0;
      for (Index i = 0; i < n; ++i) {
        int bc = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double dd = (points.row(i) - centres.row(c)).squaredNorm();
          if (dd < bd) {
            bd = dd;
            bc = c;
          }
        }
        inertia += bd;
        if (assign[static_cast<std::size_t>(i)] != bc) {
          assign[static_cast<std::size_t>(i)] = bc;
          changed = true;
        }
      }
      if (!changed) break;
      Matrix sums = Matrix::Zero(k, points.cols());
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      for (Index i = 0; i < n; ++i) {
        sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
        ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
      }
      for (int c = 0; c < k; ++c)
        if (counts[static_cast<std::size_t>(c)]) centres.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    }
    if (inertia < bestInertia) {
      bestInertia = inertia;
      best = assign;
    }
  }
  return best;
}

/// Spectral clustering of a symmetric non-negative affinity matrix:
/// normalised affinity D^-1/2 S D^-1/2, its leading `numClusters`
/// eigenvectors (the bottom of the normalised Laplacian), row
/// normalisation, then k-means.
inline std::vector<int> spectral_clustering(const Matrix& affinity, int numClusters, std::uint64_t seed) {
  const Index n = affinity.rows();
  if (numClusters < 2) throw ConfigError("spectral: numClusters must be >= 2");
  if (numClusters > n) throw ConfigError("spectral: more clusters than points");
  const Vector deg = affinity.rowwise().sum();
  Vector inv = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) inv[i] = deg[i] > 0.0 ? 1.0 / std::sqrt(deg[i]) : 0.0;
  const Matrix m = inv.asDiagonal() * affinity * inv.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
  if (eig.info() != Eigen::Success) throw NumericalError("spectral: eigensolver failed");
  Matrix emb = eig.eigenvectors().rightCols(numClusters);
  for (Index i = 0; i < n; ++i) {
    const double norm = emb.row(i).norm();
    if (norm > 0.0) emb.row(i) /= norm;
  }
  return kmeans(emb, numClusters, seed);
}

/// Affinity (1/f) sum_l exp(-dtw_l(Z_i, Z_j) / delta_l) between unseen
/// sequences.
inline Matrix unseen_affinity(const Dataset& unseen, std::span<const double> bandwidths) {
  if (static_cast<Index>(bandwidths.size()) != unseen.dims()) throw ConfigError("spectral: bandwidth count mismatch");
  const Index n = unseen.size();
  Matrix s = Matrix::Zero(n, n);
  for (Index l = 0; l < unseen.dims(); ++l)
    s += gaussian_kernel(pairwise_dtw(unseen, l), bandwidths[static_cast<std::size_t>(l)]);
  return s / static_cast<double>(unseen.dims());
}

inline std::vector<int> spectral_baseline(const Dataset& unseen, std::span<const double> bandwidths, int numClusters,
                                          std::uint64_t seed) {
  return spectral_clustering(unseen_affinity(unseen, bandwidths), numClusters, seed);
}

}  // namespace mkdsc
