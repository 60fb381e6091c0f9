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

namespace mkdsc {

/// min 1/2 y'Hy + c'y  s.t.  y >= 0, ||y||_0 <= sparsity.
struct QuadProgram {
  Matrix H;
  Vector c;
  int sparsity = 1;

  Index size() const { return c.size(); }

  void validate() const {
    if (H.rows() != H.cols() || H.rows() != c.size()) throw ConfigError("nqp: H and c have inconsistent shapes");
    if (sparsity < 1) throw ConfigError("nqp: sparsity must be >= 1");
    const double scale = std::max(1.0, H.cwiseAbs().maxCoeff());
    if (H.size() > 0 && (H - H.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw ConfigError("nqp: H is not symmetric");
    if (!H.allFinite() || !c.allFinite()) throw NumericalError("nqp: non-finite program");
  }
};

inline double quad_objective(const QuadProgram& p, const Vector& y) { return 0.5 * y.dot(p.H * y) + p.c.dot(y); }

struct NqpOptions {
  double cdTolerance = 1e-10;
  double minDecrease = 1e-12;
  int maxSweeps = 20000;
};

namespace detail {

/// Objective restricted to the listed coordinates (y is zero elsewhere).
inline double restricted_objective(const QuadProgram& p, const std::vector<Index>& support, const Vector& y) {
  double obj = 0.0;
  for (Index i : support) {
    double hy = 0.0;
    for (Index j : support) hy += p.H(i, j) * y[j];
    obj += y[i] * (0.5 * hy + p.c[i]);
  }
  return obj;
}

/// Cyclic non-negative coordinate descent on the support, warm-started
/// from y. Coordinates with a vanishing diagonal are left untouched.
inline void restricted_descent(const QuadProgram& p, const std::vector<Index>& support, Vector& y,
                               const NqpOptions& opts) {
  for (int sweep = 0; sweep < opts.maxSweeps; ++sweep) {
    double maxStep = 0.0;
    double maxVal = 1.0;
    for (Index j : support) {
      const double hjj = p.H(j, j);
      if (hjj <= 1e-14) continue;
      double g = p.c[j];
      for (Index i : support)
        if (i != j) g += p.H(j, i) * y[i];
      const double next = std::max(0.0, -g / hjj);
      maxStep = std::max(maxStep, std::abs(next - y[j]));
      y[j] = next;
      maxVal = std::max(maxVal, next);
    }
    if (maxStep <= opts.cdTolerance * maxVal) return;
  }
}

}  // namespace detail

/// Per-admission objective values; trace[0] = 0 for the empty support.
struct NqpTrace {
  std::vector<double> objective;
  std::vector<Index> admitted;
};

/// Non-negative quadratic pursuit. Greedily grows the support: every
/// candidate is scored by fully re-solving the restricted non-negative
/// problem, and the one with the largest decrease is admitted (lowest index
/// on ties). Stops at the sparsity bound or when nothing decreases the
/// objective by more than minDecrease.
inline Vector nqp_solve(const QuadProgram& p, const NqpOptions& opts = {}, NqpTrace* trace = nullptr) {
  p.validate();
  const Index n = p.size();
  const auto budget = std::min<Index>(p.sparsity, n);
  Vector y = Vector::Zero(n);
  std::vector<Index> support;
  std::vector<bool> inSupport(static_cast<std::size_t>(n), false);
  double current = 0.0;
  if (trace) {
    trace->objective.assign(1, 0.0);
    trace->admitted.clear();
  }

  while (static_cast<Index>(support.size()) < budget) {
    Index bestIndex = -1;
    double bestObjective = current;
    Vector bestY;
    for (Index j = 0; j < n; ++j) {
      if (inSupport[static_cast<std::size_t>(j)] || p.H(j, j) <= 1e-14) continue;
      // Gradient at the current optimum; a non-negative one cannot improve.
      double g = p.c[j];
      for (Index i : support) g += p.H(j, i) * y[i];
      if (g >= 0.0) continue;
      std::vector<Index> trial = support;
      trial.push_back(j);
      Vector yt = y;
      detail::restricted_descent(p, trial, yt, opts);
      const double obj = detail::restricted_objective(p, trial, yt);
      if (obj < bestObjective) {
        bestObjective = obj;
        bestIndex = j;
        bestY = std::move(yt);
      }
    }
    if (bestIndex < 0 || current - bestObjective <= opts.minDecrease) break;
    support.push_back(bestIndex);
    inSupport[static_cast<std::size_t>(bestIndex)] = true;
    y = std::move(bestY);
    current = bestObjective;
    if (trace) {
      trace->objective.push_back(current);
      trace->admitted.push_back(bestIndex);
    }
  }
  return y;
}

}  // namespace mkdsc
