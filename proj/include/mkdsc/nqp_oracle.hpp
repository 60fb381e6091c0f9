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

// Exhaustive reference solver for small sparse non-negative quadratic
// programs. Used by the test suites to check nqp_solve.

#include "mkdsc/nqp.hpp"

#include <Eigen/QR>

namespace mkdsc {

namespace detail {

inline void for_each_support(Index n, Index maxSize, const std::function<void(const std::vector<Index>&)>& fn) {
  std::vector<Index> current;
  std::function<void(Index)> rec = [&](Index start) {
    fn(current);
    if (static_cast<Index>(current.size()) == maxSize) return;
    for (Index j = start; j < n; ++j) {
      current.push_back(j);
      rec(j + 1);
      current.pop_back();
    }
  };
  rec(0);
}

/// Dense sub-problem on a support: returns (objective, y on the support).
struct SubSolution {
  double objective;
  Vector y;
};

inline double sub_objective(const Matrix& h, const Vector& c, const Vector& y) { return 0.5 * y.dot(h * y) + c.dot(y); }

inline Vector sub_descent(const Matrix& h, const Vector& c, Vector y) {
  for (int sweep = 0; sweep < 200000; ++sweep) {
    double step = 0.0;
    for (Index j = 0; j < y.size(); ++j) {
      if (h(j, j) <= 1e-14) continue;
      const double g = c[j] + h.row(j).dot(y) - h(j, j) * y[j];
      const double next = std::max(0.0, -g / h(j, j));
      step = std::max(step, std::abs(next - y[j]));
      y[j] = next;
    }
    if (step <= 1e-12 * std::max(1.0, y.cwiseAbs().maxCoeff())) break;
  }
  return y;
}

inline SubSolution solve_on_support(const Matrix& h, const Vector& c, Rng& rng) {
  SubSolution best{0.0, Vector::Zero(c.size())};
  auto consider = [&](const Vector& y) {
    if (!y.allFinite() || y.minCoeff() < 0.0) return;
    const double obj = sub_objective(h, c, y);
    if (obj < best.objective) best = {obj, y};
  };
  // Stationary point of the unconstrained restriction.
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(h);
  const Vector stationary = cod.solve(-c);
  if ((h * stationary + c).norm() <= 1e-9 * std::max(1.0, c.norm())) consider(stationary);
  // Coordinate descent from several starts.
  consider(sub_descent(h, c, Vector::Zero(c.size())));
  consider(sub_descent(h, c, Vector::Ones(c.size())));
  for (int s = 0; s < 3; ++s) {
    Vector start(c.size());
    for (Index i = 0; i < start.size(); ++i) start[i] = 2.0 * rng.uniform();
    consider(sub_descent(h, c, start));
  }
  return best;
}

}  // namespace detail

/// Global optimum over all supports of size <= sparsity (n <= 12, T <= 4).
inline Vector nqp_oracle(const QuadProgram& p) {
  p.validate();
  const Index n = p.size();
  if (n > 12 || p.sparsity > 4) throw ConfigError("nqp_oracle: limited to n <= 12 and sparsity <= 4");
  Rng rng(0x5eed);
  Vector best = Vector::Zero(n);
  double bestObjective = 0.0;
  detail::for_each_support(n, std::min<Index>(p.sparsity, n), [&](const std::vector<Index>& support) {
    if (support.empty()) return;
    const auto m = static_cast<Index>(support.size());
    Matrix h(m, m);
    Vector c(m);
    for (Index a = 0; a < m; ++a) {
      c[a] = p.c[support[static_cast<std::size_t>(a)]];
      for (Index b = 0; b < m; ++b) h(a, b) = p.H(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(b)]);
    }
    const auto sol = detail::solve_on_support(h, c, rng);
    if (sol.objective < bestObjective) {
      bestObjective = sol.objective;
      best.setZero();
      for (Index a = 0; a < m; ++a) best[support[static_cast<std::size_t>(a)]] = sol.y[a];
    }
  });
  return best;
}

}  // namespace mkdsc
