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

// Multiple-kernel dictionary: atom t is the feature-space vector
//
//   D_t = [ sqrt(B(1,t)) Phi_1(Y) a_t ; ... ; sqrt(B(f,t)) Phi_f(Y) a_t ]
//
// with non-negative sample weights a_t (column t of A) and dimension
// weights B(:,t). Everything below is expressed through the per-dimension
// Gram matrices K_l = Phi_l(Y)' Phi_l(Y); the reconstruction target of a
// sample is the unweighted concatenation of its f feature maps.

#include "mkdsc/common.hpp"
#include "mkdsc/kernels.hpp"
#include "mkdsc/mtsdata.hpp"
#include "mkdsc/nqp.hpp"

#include <limits>
#include <map>
#include <optional>

namespace mkdsc {

struct Dictionary {
  Matrix A;  // N x k
  Matrix B;  // f x k
  std::string datasetHash;

  Index atoms() const { return A.cols(); }
  Index samples() const { return A.rows(); }
  Index dims() const { return B.rows(); }
};

struct SparseCode {
  Vector x;
  std::string datasetHash;
};

struct TrainConfig {
  int k = 8;
  int tx = 3;     ///< max nonzeros per code
  int ta = 0;     ///< max nonzeros per sample-weight column; 0 = ceil(N/10)
  int tbeta = 0;  ///< max nonzeros per dimension-weight column; 0 = f
  int maxIters = 30;
  double tol = 1e-4;
  std::uint64_t seed = 1;

  int effective_ta(Index n) const {
    return ta > 0 ? ta : std::max(1, static_cast<int>((n + 9) / 10));
  }
  int effective_tbeta(Index f) const { return tbeta > 0 ? std::min<int>(tbeta, static_cast<int>(f)) : static_cast<int>(f); }

  void validate() const {
    if (k < 1) throw ConfigError("train: k must be >= 1");
    if (tx < 1) throw ConfigError("train: tx must be >= 1");
    if (ta < 0 || tbeta < 0) throw ConfigError("train: sparsity bounds must be >= 1 (or 0 for the default)");
    if (maxIters < 1) throw ConfigError("train: maxIters must be >= 1");
    if (!(tol > 0.0)) throw ConfigError("train: tol must be > 0");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"k", c.k}, {"tx", c.tx}, {"ta", c.ta}, {"tbeta", c.tbeta}, {"max_iters", c.maxIters}, {"tol", c.tol}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.k = j.value("k", c.k);
  c.tx = j.value("tx", c.tx);
  c.ta = j.value("ta", c.ta);
  c.tbeta = j.value("tbeta", c.tbeta);
  c.maxIters = j.value("max_iters", c.maxIters);
  c.tol = j.value("tol", c.tol);
  c.seed = j.value("seed", c.seed);
}

namespace detail {
inline void check_shapes(const Dictionary& d, const KernelSet& ks) {
  if (d.A.cols() != d.B.cols()) throw ConfigError("dictionary: A and B have different atom counts");
  if (d.A.rows() != ks.size() || d.B.rows() != ks.dims())
    throw ConfigError("dictionary shape (" + std::to_string(d.A.rows()) + "x" + std::to_string(d.B.rows()) +
                      ") does not match kernel set (" + std::to_string(ks.size()) + "x" + std::to_string(ks.dims()) + ")");
}

/// Weighted Gram sum_l w_l K_l.
inline Matrix combined_kernel(const KernelSet& ks, const Eigen::Ref<const Vector>& weights) {
  Matrix out = Matrix::Zero(ks.size(), ks.size());
  for (Index l = 0; l < ks.dims(); ++l)
    if (weights[l] != 0.0) out += weights[l] * ks.K[static_cast<std::size_t>(l)];
  return out;
}

inline double atom_norm_sq(const KernelSet& ks, const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& beta) {
  double s = 0.0;
  for (Index l = 0; l < ks.dims(); ++l)
    if (beta[l] != 0.0) s += beta[l] * a.dot(ks.K[static_cast<std::size_t>(l)] * a);
  return s;
}
}  // namespace detail

/// k x k inner products of the atoms in feature space.
inline Matrix atom_gram(const Dictionary& d, const KernelSet& ks) {
  detail::check_shapes(d, ks);
  const Matrix s = d.B.cwiseSqrt();
  Matrix g = Matrix::Zero(d.atoms(), d.atoms());
  for (Index l = 0; l < ks.dims(); ++l) {
    const Matrix m = d.A.transpose() * ks.K[static_cast<std::size_t>(l)] * d.A;
    const Vector sl = s.row(l).transpose();
    g += (sl * sl.transpose()).cwiseProduct(m);
  }
  return 0.5 * (g + g.transpose());
}

/// k x N inner products between atoms and the training samples.
inline Matrix atom_data_cross(const Dictionary& d, const KernelSet& ks) {
  detail::check_shapes(d, ks);
  const Matrix s = d.B.cwiseSqrt();
  Matrix c = Matrix::Zero(d.atoms(), d.samples());
  for (Index l = 0; l < ks.dims(); ++l)
    c += s.row(l).transpose().asDiagonal() * (d.A.transpose() * ks.K[static_cast<std::size_t>(l)]);
  return c;
}

/// Inner products between the atoms and one external sequence.
inline Vector atom_cross_projection(const Dictionary& d, const CrossKernel& ck) {
  if (ck.dims() != d.dims() || (ck.dims() > 0 && ck.values.front().size() != d.samples()))
    throw ConfigError("cross kernel shape does not match the dictionary");
  const Matrix s = d.B.cwiseSqrt();
  Vector c = Vector::Zero(d.atoms());
  for (Index l = 0; l < d.dims(); ++l)
    c += s.row(l).transpose().cwiseProduct(d.A.transpose() * ck.values[static_cast<std::size_t>(l)]);
  return c;
}

/// Per-dimension squared residual || Phi_l(Z) - sum_t x_t sqrt(B(l,t)) Phi_l(Y) a_t ||^2
/// (unclamped).
inline Vector dimension_residuals(const Dictionary& d, const KernelSet& ks, const CrossKernel& ck, const Vector& x) {
  detail::check_shapes(d, ks);
  const Matrix s = d.B.cwiseSqrt();
  Vector r(d.dims());
  for (Index l = 0; l < d.dims(); ++l) {
    const Vector w = d.A * s.row(l).transpose().cwiseProduct(x);
    r[l] = ck.selfK[l] - 2.0 * w.dot(ck.values[static_cast<std::size_t>(l)]) + w.dot(ks.K[static_cast<std::size_t>(l)] * w);
  }
  return r;
}

/// Squared residual of every training sample under codes X (k x N).
inline Vector sample_errors(const Dictionary& d, const KernelSet& ks, const Matrix& x) {
  const Matrix g = atom_gram(d, ks);
  const Matrix c = atom_data_cross(d, ks);
  Vector e(d.samples());
  for (Index n = 0; n < d.samples(); ++n) {
    double self = 0.0;
    for (Index l = 0; l < ks.dims(); ++l) self += ks.K[static_cast<std::size_t>(l)](n, n);
    e[n] = self - 2.0 * x.col(n).dot(c.col(n)) + x.col(n).dot(g * x.col(n));
  }
  return e;
}

/// Feature-space reconstruction loss || Phi(Y) - D X ||_F^2, clamped at 0.
inline double compute_loss(const Dictionary& d, const KernelSet& ks, const Matrix& x) {
  if (x.rows() != d.atoms() || x.cols() != d.samples()) throw ConfigError("compute_loss: code matrix has the wrong shape");
  double self = 0.0;
  for (const auto& k : ks.K) self += k.diagonal().sum();
  const Matrix g = atom_gram(d, ks);
  const Matrix c = atom_data_cross(d, ks);
  const double loss = self - 2.0 * x.cwiseProduct(c).sum() + x.cwiseProduct(g * x).sum();
  return std::max(0.0, loss);
}

/// Sparse non-negative code for a target given the atom Gram and the
/// atom-target inner products.
inline Vector sparse_code(const Matrix& gram, const Vector& projection, int tx) {
  QuadProgram p{gram, -projection, tx};
  return nqp_solve(p);
}

/// Codes for all training samples, one independent NQP per column.
inline Matrix update_codes(const Dictionary& d, const KernelSet& ks, int tx) {
  if (tx < 1) throw ConfigError("update_codes: tx must be >= 1");
  const Matrix g = atom_gram(d, ks);
  const Matrix c = atom_data_cross(d, ks);
  Matrix x = Matrix::Zero(d.atoms(), d.samples());
  std::vector<Vector> cols(static_cast<std::size_t>(d.samples()));
  parallel_for(cols.size(), [&](std::size_t n) { cols[n] = sparse_code(g, c.col(static_cast<Index>(n)), tx); });
  for (Index n = 0; n < d.samples(); ++n) x.col(n) = cols[static_cast<std::size_t>(n)];
  return x;
}

enum class AtomUpdate { updated, kept, reinitialized };

inline std::string_view to_string(AtomUpdate u) {
  switch (u) {
    case AtomUpdate::updated: return "updated";
    case AtomUpdate::kept: return "kept";
    case AtomUpdate::reinitialized: return "reinitialized";
  }
  return "?";
}

/// Per-dimension squared residual of every training sample, N x f.
inline Matrix sample_dimension_errors(const Dictionary& d, const KernelSet& ks, const Matrix& x) {
  detail::check_shapes(d, ks);
  const Matrix s = d.B.cwiseSqrt();
  Matrix e(d.samples(), d.dims());
  for (Index l = 0; l < d.dims(); ++l) {
    const Matrix& k = ks.K[static_cast<std::size_t>(l)];
    const Matrix w = d.A * s.row(l).transpose().asDiagonal() * x;
    const Matrix kw = k * w;
    e.col(l) = k.diagonal() - 2.0 * kw.diagonal() + (w.transpose() * kw).diagonal();
  }
  return e;
}

/// Replaces atom i by the single training sample with the largest current
/// reconstruction error, unit norm. Row i of X is zeroed first. Samples
/// listed in `taken` are skipped and the choice is appended to it. The
/// dimension weights are all ones, or with tbeta < f the tbeta dimensions of
/// that sample that are worst reconstructed.
inline void reinitialize_atom(Dictionary& d, const KernelSet& ks, Matrix& x, Index i, std::vector<Index>* taken = nullptr,
                              int tbeta = -1) {
  x.row(i).setZero();
  const Vector err = sample_errors(d, ks, x);
  Index worst = -1;
  for (Index n = 0; n < err.size(); ++n) {
    if (taken && std::find(taken->begin(), taken->end(), n) != taken->end()) continue;
    if (worst < 0 || err[n] > err[worst]) worst = n;
  }
  if (worst < 0) worst = 0;
  if (taken) taken->push_back(worst);
  d.A.col(i).setZero();
  double norm2 = 0.0;
  if (tbeta < 0 || tbeta >= d.dims()) {
    d.B.col(i).setOnes();
    for (const auto& k : ks.K) norm2 += k(worst, worst);
  } else {
    const Vector de = sample_dimension_errors(d, ks, x).row(worst).transpose();
    std::vector<Index> dims(static_cast<std::size_t>(d.dims()));
    for (Index l = 0; l < d.dims(); ++l) dims[static_cast<std::size_t>(l)] = l;
    std::stable_sort(dims.begin(), dims.end(), [&](Index a, Index b) { return de[a] > de[b]; });
    d.B.col(i).setZero();
    for (int j = 0; j < tbeta; ++j) {
      const Index l = dims[static_cast<std::size_t>(j)];
      d.B(l, i) = 1.0;
      norm2 += ks.K[static_cast<std::size_t>(l)](worst, worst);
    }
  }
  if (!(norm2 > 0.0)) throw NumericalError("reinitialize_atom: sample has zero feature norm");
  d.A(worst, i) = 1.0 / std::sqrt(norm2);
}

namespace detail {
/// v_l = x_i' - sum_{t != i} sqrt(B(l,t)) (x_i . x_t) a_t, the common
/// ingredient of both block updates for atom i.
inline std::vector<Vector> residual_directions(const Dictionary& d, const Matrix& x, Index i) {
  const Matrix s = d.B.cwiseSqrt();
  Vector w = x * x.row(i).transpose();  // w_t = sum_n x_in x_tn
  w[i] = 0.0;
  std::vector<Vector> v;
  v.reserve(static_cast<std::size_t>(d.dims()));
  for (Index l = 0; l < d.dims(); ++l) v.push_back(x.row(i).transpose() - d.A * s.row(l).transpose().cwiseProduct(w));
  return v;
}
}  // namespace detail

/// Block update of the sample weights a_i with B and the other atoms fixed.
/// The minimiser is taken only if it does not increase the loss, then
/// renormalised with row i of X rescaled so that the product is unchanged.
inline AtomUpdate update_atom_samples(Dictionary& d, const KernelSet& ks, Matrix& x, Index i, int ta,
                                      std::vector<Index>* taken = nullptr, int tbeta = -1) {
  detail::check_shapes(d, ks);
  const double xx = x.row(i).squaredNorm();
  if (xx == 0.0) {
    reinitialize_atom(d, ks, x, i, taken, tbeta);
    return AtomUpdate::reinitialized;
  }
  const Matrix s = d.B.cwiseSqrt();
  const auto v = detail::residual_directions(d, x, i);
  Vector c = Vector::Zero(d.samples());
  for (Index l = 0; l < d.dims(); ++l)
    if (s(l, i) != 0.0) c -= s(l, i) * (ks.K[static_cast<std::size_t>(l)] * v[static_cast<std::size_t>(l)]);
  QuadProgram p{xx * detail::combined_kernel(ks, d.B.col(i)), c, ta};
  p.H = 0.5 * (p.H + p.H.transpose());
  const Vector y = nqp_solve(p);
  const bool feasible = (d.A.col(i).array() != 0.0).count() <= ta;
  if (feasible && quad_objective(p, y) > quad_objective(p, d.A.col(i))) return AtomUpdate::kept;
  if (y.isZero(0.0)) {
    reinitialize_atom(d, ks, x, i, taken, tbeta);
    return AtomUpdate::reinitialized;
  }
  const double norm = std::sqrt(detail::atom_norm_sq(ks, y, d.B.col(i)));
  if (!(norm > 0.0)) {
    reinitialize_atom(d, ks, x, i, taken, tbeta);
    return AtomUpdate::reinitialized;
  }
  d.A.col(i) = y / norm;
  x.row(i) *= norm;
  return AtomUpdate::updated;
}

/// Block update of the dimension weights B(:,i), solved in u = sqrt(B(:,i))
/// where the program is diagonal.
inline AtomUpdate update_atom_dims(Dictionary& d, const KernelSet& ks, Matrix& x, Index i, int tbeta,
                                   std::vector<Index>* taken = nullptr) {
  detail::check_shapes(d, ks);
  const double xx = x.row(i).squaredNorm();
  if (xx == 0.0) {
    reinitialize_atom(d, ks, x, i, taken, tbeta);
    return AtomUpdate::reinitialized;
  }
  const auto v = detail::residual_directions(d, x, i);
  const Vector a = d.A.col(i);
  QuadProgram p{Matrix::Zero(d.dims(), d.dims()), Vector::Zero(d.dims()), tbeta};
  for (Index l = 0; l < d.dims(); ++l) {
    const Vector ka = ks.K[static_cast<std::size_t>(l)] * a;
    p.H(l, l) = 2.0 * xx * a.dot(ka);
    p.c[l] = -2.0 * ka.dot(v[static_cast<std::size_t>(l)]);
  }
  const Vector u = nqp_solve(p);
  const Vector currentU = d.B.col(i).cwiseSqrt();
  // An over-dense current column (e.g. fresh all-ones weights under a
  // tighter bound) is not a feasible incumbent; the solution replaces it.
  const bool feasible = (currentU.array() != 0.0).count() <= tbeta;
  if (feasible && quad_objective(p, u) > quad_objective(p, currentU)) return AtomUpdate::kept;
  if (u.isZero(0.0)) {
    reinitialize_atom(d, ks, x, i, taken, tbeta);
    return AtomUpdate::reinitialized;
  }
  const Vector beta = u.cwiseProduct(u);
  const double norm = std::sqrt(detail::atom_norm_sq(ks, a, beta));
  if (!(norm > 0.0)) {
    reinitialize_atom(d, ks, x, i, taken, tbeta);
    return AtomUpdate::reinitialized;
  }
  d.B.col(i) = beta;
  d.A.col(i) = a / norm;
  x.row(i) *= norm;
  return AtomUpdate::updated;
}

/// Rescales every atom to unit feature-space norm, compensating in X.
inline void normalize_atoms(Dictionary& d, const KernelSet& ks, Matrix* x = nullptr) {
  for (Index t = 0; t < d.atoms(); ++t) {
    const double norm = std::sqrt(detail::atom_norm_sq(ks, d.A.col(t), d.B.col(t)));
    if (!(norm > 0.0)) throw NumericalError("normalize_atoms: atom " + std::to_string(t) + " has zero norm");
    d.A.col(t) /= norm;
    if (x) x->row(t) *= norm;
  }
}

/// Atoms a_t = e_{j_t} for distinct seeded draws j_t, all-ones dimension
/// weights, unit norm.
///
/// With tbeta < f the dimensions are cut into g = ceil(f / tbeta) cyclic
/// blocks of tbeta and atom t covers block t mod g of sample j_{t / g}; the
/// samples are then chosen farthest-first in feature space from a seeded
/// start.
inline Dictionary initial_dictionary(const KernelSet& ks, int k, std::uint64_t seed, int tbeta = -1) {
  const Index n = ks.size();
  const Index f = ks.dims();
  if (k > n) throw ConfigError("train: k = " + std::to_string(k) + " exceeds the number of training samples (" +
                               std::to_string(n) + ")");
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  Dictionary d;
  d.datasetHash = ks.datasetHash;
  d.A = Matrix::Zero(n, k);
  d.B = Matrix::Ones(f, k);
  if (tbeta < 0 || tbeta >= f) {
    for (Index t = 0; t < k; ++t) d.A(order[static_cast<std::size_t>(t)], t) = 1.0;
    normalize_atoms(d, ks);
    return d;
  }
  const Index g = (f + tbeta - 1) / tbeta;
  const Index m = (k + g - 1) / g;
  Vector self = Vector::Zero(n);
  for (const auto& kl : ks.K) self += kl.diagonal();
  std::vector<Index> picks{order.front()};
  Vector nearest = Vector::Constant(n, std::numeric_limits<double>::infinity());
  while (static_cast<Index>(picks.size()) < m) {
    const Index last = picks.back();
    for (Index j = 0; j < n; ++j) {
      double dist = self[j] + self[last];
      for (const auto& kl : ks.K) dist -= 2.0 * kl(j, last);
      nearest[j] = std::min(nearest[j], dist);
    }
    for (Index p : picks) nearest[p] = -1.0;
    Index best = 0;
    for (Index j = 1; j < n; ++j)
      if (nearest[j] > nearest[best]) best = j;
    picks.push_back(best);
  }
  d.B.setZero();
  for (Index t = 0; t < k; ++t) {
    d.A(picks[static_cast<std::size_t>(t / g)], t) = 1.0;
    for (Index j = 0; j < tbeta; ++j) d.B(((t % g) * tbeta + j) % f, t) = 1.0;
  }
  normalize_atoms(d, ks);
  return d;
}

struct TrainResult {
  Dictionary dictionary;
  Matrix codes;
  /// trace[0]: loss after coding with the initial dictionary; then one
  /// entry per outer iteration.
  std::vector<double> lossTrace;
  int reinitializations = 0;
};

/// Alternating minimisation: per outer iteration, all codes, then a sweep
/// over the atoms updating samples then dimensions.
inline TrainResult train_from(Dictionary d, const KernelSet& ks, const TrainConfig& cfg) {
  cfg.validate();
  detail::check_shapes(d, ks);
  const int ta = cfg.effective_ta(ks.size());
  const int tbeta = cfg.effective_tbeta(ks.dims());
  TrainResult out;
  Matrix x = update_codes(d, ks, cfg.tx);
  out.lossTrace.push_back(compute_loss(d, ks, x));
  for (int it = 0; it < cfg.maxIters; ++it) {
    if (it > 0) x = update_codes(d, ks, cfg.tx);
    std::vector<Index> taken;
    for (Index i = 0; i < d.atoms(); ++i) {
      if (update_atom_samples(d, ks, x, i, ta, &taken, tbeta) == AtomUpdate::reinitialized) {
        ++out.reinitializations;
        continue;
      }
      if (update_atom_dims(d, ks, x, i, tbeta, &taken) == AtomUpdate::reinitialized) ++out.reinitializations;
    }
    const double loss = compute_loss(d, ks, x);
    const double prev = out.lossTrace.back();
    out.lossTrace.push_back(loss);
    if (loss <= 1e-14 || std::abs(prev - loss) <= cfg.tol * std::max(prev, 1e-300)) break;
  }
  out.dictionary = std::move(d);
  out.codes = std::move(x);
  return out;
}

inline TrainResult train(const KernelSet& ks, const TrainConfig& cfg) {
  cfg.validate();
  return train_from(initial_dictionary(ks, cfg.k, cfg.seed, cfg.effective_tbeta(ks.dims())), ks, cfg);
}

inline TrainResult train(const Dataset& seen, const KernelSet& ks, const TrainConfig& cfg) {
  if (seen.size() != ks.size()) throw DataError("train: kernel set does not match the dataset size");
  if (dataset_hash(seen) != ks.datasetHash) throw DataError("train: kernel set was built from a different dataset");
  return train(ks, cfg);
}

// ----------------------------------------------------------------------
// Cross-validated selection of k and tx
// ----------------------------------------------------------------------

struct TuneGrid {
  std::vector<int> k;
  std::vector<int> tx;
};

inline void from_json(const nlohmann::json& j, TuneGrid& g) {
  g.k = j.at("k").get<std::vector<int>>();
  g.tx = j.at("tx").get<std::vector<int>>();
}

struct TuneScore {
  int k;
  int tx;
  double heldOutError;  // +inf when the point is infeasible for some fold
};

struct TuneResult {
  TrainConfig best;
  std::vector<TuneScore> scores;
  bool stratified = true;
};

/// Fold index per sample. Stratified by label when every class has at least
/// `folds` members; otherwise a plain seeded shuffle.
inline std::vector<int> assign_folds(const std::vector<int>& labels, int folds, std::uint64_t seed, bool* stratified = nullptr) {
  std::map<int, std::vector<Index>> byClass;
  for (std::size_t i = 0; i < labels.size(); ++i) byClass[labels[i]].push_back(static_cast<Index>(i));
  bool strat = true;
  for (const auto& [label, members] : byClass)
    if (static_cast<int>(members.size()) < folds) strat = false;
  Rng rng(seed);
  std::vector<int> fold(labels.size(), 0);
  if (strat) {
    std::size_t offset = 0;
    for (auto& [label, members] : byClass) {
      rng.shuffle(members);
      for (std::size_t m = 0; m < members.size(); ++m)
        fold[static_cast<std::size_t>(members[m])] = static_cast<int>((m + offset) % static_cast<std::size_t>(folds));
      offset += members.size();
    }
  } else {
    warn("tune: a class has fewer samples than folds, using unstratified folds");
    std::vector<Index> all(labels.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
    rng.shuffle(all);
    for (std::size_t m = 0; m < all.size(); ++m) fold[static_cast<std::size_t>(all[m])] = static_cast<int>(m % static_cast<std::size_t>(folds));
  }
  if (stratified) *stratified = strat;
  return fold;
}

/// 5-fold selection of (k, tx) by mean held-out relative reconstruction
/// error over all dimensions. Ties go to smaller k, then smaller tx.
inline TuneResult tune(const Dataset& seen, const KernelSet& ks, const TuneGrid& grid, const TrainConfig& base) {
  constexpr int kFolds = 5;
  if (seen.size() < 10) throw DataError("tune: at least 10 training sequences are required");
  if (grid.k.empty() || grid.tx.empty()) throw ConfigError("tune: empty grid");
  TuneResult out;
  const auto fold = assign_folds(seen.labels(), kFolds, base.seed, &out.stratified);

  std::vector<int> ks_sorted = grid.k, tx_sorted = grid.tx;
  std::sort(ks_sorted.begin(), ks_sorted.end());
  std::sort(tx_sorted.begin(), tx_sorted.end());
  ks_sorted.erase(std::unique(ks_sorted.begin(), ks_sorted.end()), ks_sorted.end());
  tx_sorted.erase(std::unique(tx_sorted.begin(), tx_sorted.end()), tx_sorted.end());

  double bestError = std::numeric_limits<double>::infinity();
  out.best = base;
  out.best.k = ks_sorted.front();
  out.best.tx = tx_sorted.front();
  for (int k : ks_sorted) {
    for (int tx : tx_sorted) {
      TrainConfig cfg = base;
      cfg.k = k;
      cfg.tx = tx;
      double total = 0.0;
      std::size_t count = 0;
      bool feasible = true;
      for (int f = 0; f < kFolds && feasible; ++f) {
        std::vector<Index> trainIdx, testIdx;
        for (Index n = 0; n < seen.size(); ++n) (fold[static_cast<std::size_t>(n)] == f ? testIdx : trainIdx).push_back(n);
        if (static_cast<Index>(trainIdx.size()) < k) {
          feasible = false;
          break;
        }
        const KernelSet sub = ks.subset(trainIdx);
        const auto model = train(sub, cfg);
        const Matrix g = atom_gram(model.dictionary, sub);
        for (Index n : testIdx) {
          const auto ck = cross_kernel_from_gram(ks, trainIdx, n, sub.datasetHash);
          const Vector x = sparse_code(g, atom_cross_projection(model.dictionary, ck), tx);
          const Vector r = dimension_residuals(model.dictionary, sub, ck, x);
          total += std::max(0.0, r.sum()) / ck.selfK.sum();
          ++count;
        }
      }
      const double err = feasible && count ? total / static_cast<double>(count) : std::numeric_limits<double>::infinity();
      out.scores.push_back({k, tx, err});
      if (err < bestError) {
        bestError = err;
        out.best = cfg;
      }
    }
  }
  if (!std::isfinite(bestError)) throw ConfigError("tune: no grid point is feasible for the fold sizes");
  return out;
}

// ----------------------------------------------------------------------
// Persistence: meta.json plus A.bin / B.bin in the binary matrix format.
// ----------------------------------------------------------------------

struct Model {
  Dictionary dictionary;
  TrainConfig config;
  std::vector<double> bandwidths;
  nlohmann::json meta;
};

inline void save_model(const std::filesystem::path& dir, const Dictionary& d, const TrainConfig& cfg,
                       const std::vector<double>& bandwidths, const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  write_matrix(dir / "A.bin", d.A);
  write_matrix(dir / "B.bin", d.B);
  nlohmann::json meta = extra;
  meta["format_version"] = kFormatVersion;
  meta["k"] = d.atoms();
  meta["N"] = d.samples();
  meta["f"] = d.dims();
  meta["train"] = cfg;
  meta["effective_ta"] = cfg.effective_ta(d.samples());
  meta["effective_tbeta"] = cfg.effective_tbeta(d.dims());
  meta["dataset_hash"] = d.datasetHash;
  meta["bandwidths"] = bandwidths;
  std::ofstream os(dir / "meta.json", std::ios::trunc);
  os << meta.dump(2) << '\n';
  if (!os) throw DataError("cannot write " + (dir / "meta.json").string());
}

inline Model load_model(const std::filesystem::path& dir) {
  Model m;
  m.meta = read_json_file(dir / "meta.json");
  m.dictionary.A = read_matrix(dir / "A.bin");
  m.dictionary.B = read_matrix(dir / "B.bin");
  m.dictionary.datasetHash = m.meta.at("dataset_hash").get<std::string>();
  m.config = m.meta.at("train").get<TrainConfig>();
  m.bandwidths = m.meta.at("bandwidths").get<std::vector<double>>();
  if (m.dictionary.A.cols() != m.dictionary.B.cols()) throw DataError("model: A and B disagree on the atom count");
  return m;
}

}  // namespace mkdsc
