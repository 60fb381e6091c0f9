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
#include "mkdsc/mtsdata.hpp"

#include <Eigen/Eigenvalues>

#include <optional>
#include <span>

namespace mkdsc {

/// Dynamic time warping with squared-difference local cost, no window and
/// the step set {(1,0), (0,1), (1,1)}. Returns the accumulated cost of the
/// optimal alignment.
inline double dtw(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ConfigError("dtw: empty input");
  // Keep the shorter series along the row buffer.
  if (b.size() > a.size()) std::swap(a, b);
  const std::size_t m = b.size();
  std::vector<double> prev(m), curr(m);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double diff = a[i] - b[j];
      const double cost = diff * diff;
      double best;
      if (i == 0 && j == 0)
        best = 0.0;
      else if (i == 0)
        best = curr[j - 1];
      else if (j == 0)
        best = prev[j];
      else
        best = std::min({prev[j - 1], prev[j], curr[j - 1]});
      curr[j] = best + cost;
    }
    std::swap(prev, curr);
  }
  return prev[m - 1];
}

inline double dtw(const std::vector<double>& a, const std::vector<double>& b) {
  return dtw(std::span<const double>(a), std::span<const double>(b));
}

// ----------------------------------------------------------------------
// PSD repair
// ----------------------------------------------------------------------

struct PsdRepair {
  Matrix matrix;
  /// Magnitude of the most negative eigenvalue that was clipped (0 if none).
  double shift = 0.0;
};

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues to zero. Inputs that are already PSD are returned unchanged.
inline PsdRepair psd_repair(const Matrix& m) {
  if (m.rows() != m.cols()) throw ConfigError("psd_repair: matrix is not square");
  if (!m.allFinite()) throw NumericalError("psd_repair: non-finite input");
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericalError("psd_repair: eigendecomposition failed");
  const Vector& values = eig.eigenvalues();
  PsdRepair out;
  if (values.size() == 0 || values.minCoeff() >= 0.0) {
    out.matrix = m;
    return out;
  }
  out.shift = -values.minCoeff();
  const Vector clipped = values.cwiseMax(0.0);
  Matrix rebuilt = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  out.matrix = 0.5 * (rebuilt + rebuilt.transpose());
  return out;
}

// ----------------------------------------------------------------------
// Kernel sets
// ----------------------------------------------------------------------

struct BandwidthRule {
  enum class Kind { median, fixed };
  Kind kind = Kind::median;
  double value = 1.0;

  static BandwidthRule parse(const std::string& text) {
    if (text == "median") return {};
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used == text.size() && v > 0.0 && std::isfinite(v)) return {Kind::fixed, v};
    } catch (const std::exception&) {
    }
    throw ConfigError("bandwidth must be 'median' or a positive number, got '" + text + "'");
  }

  std::string str() const {
    if (kind == Kind::median) return "median";
    std::ostringstream os;
    os.precision(17);
    os << value;
    return os.str();
  }
};

/// Per-dimension Gaussian-of-DTW Gram matrices over the seen set.
struct KernelSet {
  std::vector<Matrix> K;
  std::vector<double> bandwidths;
  std::vector<double> repairShift;
  std::string datasetHash;

  Index size() const { return K.empty() ? 0 : K.front().rows(); }
  Index dims() const { return static_cast<Index>(K.size()); }

  /// Restriction to a subset of samples (used for cross-validation folds).
  KernelSet subset(const std::vector<Index>& idx) const {
    KernelSet out;
    out.bandwidths = bandwidths;
    out.repairShift = repairShift;
    out.datasetHash = datasetHash + ":subset";
    for (const auto& k : K) {
      Matrix s(static_cast<Index>(idx.size()), static_cast<Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < idx.size(); ++j)
          s(static_cast<Index>(i), static_cast<Index>(j)) = k(idx[i], idx[j]);
      out.K.push_back(std::move(s));
    }
    return out;
  }
};

/// Kernel values between the seen set and one further sequence.
struct CrossKernel {
  std::vector<Vector> values;  // values[l][j] = K_l(Y_j, Z)
  Vector selfK;                // K_l(Z, Z)
  std::string datasetHash;

  Index dims() const { return static_cast<Index>(values.size()); }
};

/// Pairwise DTW distances on dimension l, computed in parallel over pairs.
inline Matrix pairwise_dtw(const Dataset& ds, Index l) {
  const Index n = ds.size();
  Matrix d = Matrix::Zero(n, n);
  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  std::vector<double> values(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t p) {
    values[p] = dtw(ds[pairs[p].first].dim(l), ds[pairs[p].second].dim(l));
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    d(pairs[p].first, pairs[p].second) = values[p];
    d(pairs[p].second, pairs[p].first) = values[p];
  }
  return d;
}

/// Median of the off-diagonal distances. Falls back to the median of the
/// positive distances when more than half are zero, and to 1 when all are.
inline double median_bandwidth(const Matrix& distances, Index dim = -1) {
  std::vector<double> off;
  for (Index i = 0; i < distances.rows(); ++i)
    for (Index j = i + 1; j < distances.cols(); ++j) off.push_back(distances(i, j));
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  std::vector<double> positive;
  std::copy_if(off.begin(), off.end(), std::back_inserter(positive), [](double v) { return v > 0.0; });
  if (positive.empty()) {
    warn("dimension " + std::to_string(dim) + ": all pairwise distances are zero, using bandwidth 1");
    return 1.0;
  }
  const double m = median(off);
  return m > 0.0 ? m : median(positive);
}

inline Matrix gaussian_kernel(const Matrix& distances, double bandwidth) {
  return (-distances.array() / bandwidth).exp().matrix();
}

struct KernelOptions {
  BandwidthRule bandwidth;
  bool repair = true;
};

inline KernelSet build_kernelset(const Dataset& seen, const KernelOptions& opts = {}) {
  if (seen.size() < 2) throw DataError("build_kernelset: at least two sequences are required");
  KernelSet ks;
  ks.datasetHash = dataset_hash(seen);
  for (Index l = 0; l < seen.dims(); ++l) {
    const Matrix d = pairwise_dtw(seen, l);
    const double delta =
        opts.bandwidth.kind == BandwidthRule::Kind::median ? median_bandwidth(d, l) : opts.bandwidth.value;
    Matrix k = gaussian_kernel(d, delta);
    double shift = 0.0;
    if (opts.repair) {
      auto repaired = psd_repair(k);
      k = std::move(repaired.matrix);
      shift = repaired.shift;
    }
    ks.K.push_back(std::move(k));
    ks.bandwidths.push_back(delta);
    ks.repairShift.push_back(shift);
  }
  return ks;
}

inline CrossKernel cross_kernel(const Dataset& seen, const TimeSeries& z, std::span<const double> bandwidths) {
  if (z.dims() != seen.dims())
    throw DataError("cross_kernel: sequence '" + z.id + "' has " + std::to_string(z.dims()) +
                    " dimensions, seen set has " + std::to_string(seen.dims()));
  if (static_cast<Index>(bandwidths.size()) != seen.dims()) throw ConfigError("cross_kernel: bandwidth count mismatch");
  CrossKernel ck;
  ck.datasetHash = dataset_hash(seen);
  ck.selfK = Vector::Ones(seen.dims());
  for (Index l = 0; l < seen.dims(); ++l) {
    Vector v(seen.size());
    for (Index j = 0; j < seen.size(); ++j) v[j] = std::exp(-dtw(z.dim(l), seen[j].dim(l)) / bandwidths[static_cast<std::size_t>(l)]);
    ck.values.push_back(std::move(v));
  }
  return ck;
}

/// Cross kernel of seen sample n against the rest, read off the Gram
/// matrices; `rows` selects the reference samples.
inline CrossKernel cross_kernel_from_gram(const KernelSet& ks, const std::vector<Index>& rows, Index n,
                                          const std::string& hash) {
  CrossKernel ck;
  ck.datasetHash = hash;
  ck.selfK.resize(ks.dims());
  for (Index l = 0; l < ks.dims(); ++l) {
    const Matrix& k = ks.K[static_cast<std::size_t>(l)];
    Vector v(static_cast<Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) v[static_cast<Index>(j)] = k(rows[j], n);
    ck.values.push_back(std::move(v));
    ck.selfK[l] = k(n, n);
  }
  return ck;
}

// ----------------------------------------------------------------------
// On-disk cache: meta.json plus K_<l>.bin per dimension.
// ----------------------------------------------------------------------

inline void save_kernel_cache(const std::filesystem::path& dir, const KernelSet& ks, const std::string& bandwidthRule) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (Index l = 0; l < ks.dims(); ++l) {
    const std::string name = "K_" + std::to_string(l) + ".bin";
    write_matrix(dir / name, ks.K[static_cast<std::size_t>(l)]);
    files.push_back(name);
  }
  nlohmann::json meta{{"format_version", kFormatVersion},
                      {"N", ks.size()},
                      {"f", ks.dims()},
                      {"bandwidths", ks.bandwidths},
                      {"bandwidth_rule", bandwidthRule},
                      {"repair_shift", ks.repairShift},
                      {"dataset_hash", ks.datasetHash},
                      {"files", files}};
  std::ofstream os(dir / "meta.json", std::ios::trunc);
  os << meta.dump(2) << '\n';
  if (!os) throw DataError("cannot write " + (dir / "meta.json").string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("missing file: " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Loads a cache; returns nullopt when the cache is absent or was built
/// from different data or a different bandwidth rule. An empty expected
/// hash accepts any cache.
inline std::optional<KernelSet> load_kernel_cache(const std::filesystem::path& dir, const std::string& expectedHash = {},
                                                  const std::string& bandwidthRule = {}) {
  if (!std::filesystem::exists(dir / "meta.json")) return std::nullopt;
  const auto meta = read_json_file(dir / "meta.json");
  const auto hash = meta.at("dataset_hash").get<std::string>();
  if (!expectedHash.empty() && hash != expectedHash) return std::nullopt;
  if (!bandwidthRule.empty() && meta.value("bandwidth_rule", std::string{}) != bandwidthRule) return std::nullopt;
  KernelSet ks;
  ks.datasetHash = hash;
  ks.bandwidths = meta.at("bandwidths").get<std::vector<double>>();
  ks.repairShift = meta.at("repair_shift").get<std::vector<double>>();
  const auto n = meta.at("N").get<Index>();
  for (const auto& name : meta.at("files")) {
    Matrix k = read_matrix(dir / name.get<std::string>());
    if (k.rows() != n || k.cols() != n) throw DataError("kernel cache: bad matrix shape in " + name.get<std::string>());
    ks.K.push_back(std::move(k));
  }
  if (ks.dims() != meta.at("f").get<Index>()) throw DataError("kernel cache: dimension count mismatch");
  return ks;
}

}  // namespace mkdsc
