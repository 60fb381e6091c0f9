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

#include "mkdsc/mkd.hpp"

#include <optional>
#include <set>

namespace mkdsc {

/// N x f descriptor: R(j, l) is the weight of training sample j in the
/// reconstruction of dimension l.
struct EncodingMatrix {
  Matrix R;
  std::string sourceId;
};

struct ReconstructionReport {
  Vector perDimError;
  double dra = 0.0;
  std::vector<std::optional<int>> perDimAttribution;
  double threshold = 0.1;
  /// Largest magnitude by which an expanded residual dipped below zero.
  double clampMagnitude = 0.0;
};

/// Encodes external sequences against a fixed dictionary; caches the atom
/// Gram matrix.
class Encoder {
 public:
  Encoder(const Dictionary& d, const KernelSet& ks) : dict_(d), gram_(atom_gram(d, ks)) {
    if (d.datasetHash != ks.datasetHash) throw DataError("encoder: dictionary and kernel set come from different datasets");
  }

  SparseCode encode(const CrossKernel& ck, int tx) const {
    if (ck.datasetHash != dict_.datasetHash) throw DataError("encode: cross kernel was built against a different seen set");
    if (tx < 1) throw ConfigError("encode: tx must be >= 1");
    return {sparse_code(gram_, atom_cross_projection(dict_, ck), tx), dict_.datasetHash};
  }

  const Matrix& gram() const { return gram_; }

 private:
  const Dictionary& dict_;
  Matrix gram_;
};

inline SparseCode encode(const Dictionary& d, const KernelSet& ks, const CrossKernel& ck, int tx) {
  return Encoder(d, ks).encode(ck, tx);
}

/// Squared feature-space residual of the full reconstruction (unclamped sum
/// over dimensions, then clamped).
inline double encode_residual(const Dictionary& d, const KernelSet& ks, const CrossKernel& ck, const Vector& x) {
  return std::max(0.0, dimension_residuals(d, ks, ck, x).sum());
}

/// Relative reconstruction error restricted to the dimension subset S.
inline double partial_error(const Dictionary& d, const KernelSet& ks, const CrossKernel& ck, const Vector& x,
                            const std::set<Index>& dims, double* clamp = nullptr) {
  if (dims.empty()) throw ConfigError("partial_error: empty dimension set");
  const Vector r = dimension_residuals(d, ks, ck, x);
  double num = 0.0, den = 0.0;
  for (Index l : dims) {
    if (l < 0 || l >= d.dims()) throw ConfigError("partial_error: dimension index out of range");
    num += r[l];
    den += ck.selfK[l];
  }
  const double e = num / den;
  if (clamp) *clamp = e < 0.0 ? -e : 0.0;
  return std::max(0.0, e);
}

inline EncodingMatrix encoding_matrix(const Dictionary& d, const Vector& x, std::string sourceId = {}) {
  if (x.size() != d.atoms()) throw ConfigError("encoding_matrix: code length does not match the atom count");
  return {d.A * x.asDiagonal() * d.B.transpose(), std::move(sourceId)};
}

/// Per-dimension errors, DRA at the threshold, and for each passing
/// dimension the seen class contributing most weight to it (lowest label on
/// ties).
inline ReconstructionReport reconstruction_report(const Dictionary& d, const KernelSet& ks, const CrossKernel& ck,
                                                  const Vector& x, const std::vector<int>& seenLabels,
                                                  double threshold = 0.1) {
  if (static_cast<Index>(seenLabels.size()) != d.samples())
    throw DataError("reconstruction_report: labels do not cover the seen samples");
  ReconstructionReport rep;
  rep.threshold = threshold;
  rep.perDimError.resize(d.dims());
  rep.perDimAttribution.assign(static_cast<std::size_t>(d.dims()), std::nullopt);
  const Vector r = dimension_residuals(d, ks, ck, x);
  const Matrix enc = encoding_matrix(d, x).R;
  std::set<int> classes(seenLabels.begin(), seenLabels.end());
  Index passing = 0;
  for (Index l = 0; l < d.dims(); ++l) {
    const double e = r[l] / ck.selfK[l];
    if (e < 0.0) rep.clampMagnitude = std::max(rep.clampMagnitude, -e);
    rep.perDimError[l] = std::max(0.0, e);
    if (rep.perDimError[l] > threshold) continue;
    ++passing;
    std::optional<int> best;
    double bestWeight = -1.0;
    for (int c : classes) {
      double w = 0.0;
      for (Index j = 0; j < d.samples(); ++j)
        if (seenLabels[static_cast<std::size_t>(j)] == c) w += enc(j, l);
      if (w > bestWeight) {
        bestWeight = w;
        best = c;
      }
    }
    rep.perDimAttribution[static_cast<std::size_t>(l)] = best;
  }
  rep.dra = static_cast<double>(passing) / static_cast<double>(d.dims());
  if (rep.clampMagnitude > 0.0 && rep.clampMagnitude > 1e-8)
    warn("reconstruction residual clamped at zero (magnitude " + std::to_string(rep.clampMagnitude) + ")");
  return rep;
}

inline nlohmann::json to_json(const ReconstructionReport& r) {
  nlohmann::json attribution = nlohmann::json::array();
  for (const auto& a : r.perDimAttribution) attribution.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
  return {{"per_dim_error", std::vector<double>(r.perDimError.data(), r.perDimError.data() + r.perDimError.size())},
          {"dra", r.dra},
          {"per_dim_attribution", attribution},
          {"threshold", r.threshold},
          {"clamp_magnitude", r.clampMagnitude}};
}

}  // namespace mkdsc
