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

#include <gtest/gtest.h>

#include "mkdsc/nqp.hpp"
#include "mkdsc/nqp_oracle.hpp"
#include "oracles.hpp"

using namespace mkdsc;

namespace {

QuadProgram random_program(Rng& rng, bool diagonal) {
  const Index n = 1 + static_cast<Index>(rng.below(8));
  QuadProgram p;
  p.sparsity = 1 + static_cast<int>(rng.below(3));
  if (diagonal) {
    p.H = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) p.H(i, i) = rng.uniform(0.1, 3.0);
  } else {
    p.H = oracle::random_psd(rng, n, 1 + static_cast<Index>(rng.below(static_cast<std::size_t>(n + 2))));
  }
  p.c.resize(n);
  for (Index i = 0; i < n; ++i) p.c[i] = rng.normal();
  return p;
}

}  // namespace

TEST(Nqp, SingleCoordinateClosedForm) {
  QuadProgram p{Matrix::Identity(3, 3), Vector(3), 1};
  p.c << -1, 0, 0;
  const Vector y = nqp_solve(p);
  EXPECT_EQ(y, (Vector(3) << 1, 0, 0).finished());
  EXPECT_DOUBLE_EQ(quad_objective(p, y), -0.5);
}

TEST(Nqp, PicksTheLargerDecrease) {
  QuadProgram p{Matrix::Identity(2, 2), Vector(2), 1};
  p.c << -1, -2;
  const Vector expected = (Vector(2) << 0, 2).finished();
  EXPECT_TRUE(nqp_solve(p).isApprox(expected));
  EXPECT_TRUE(nqp_oracle(p).isApprox(expected));
}

TEST(Nqp, NonNegativeLinearTermGivesZero) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    QuadProgram p = random_program(rng, false);
    p.c = p.c.cwiseAbs();
    EXPECT_TRUE(nqp_solve(p).isZero(0.0));
  }
}

TEST(Nqp, RejectsInvalidPrograms) {
  QuadProgram p{Matrix::Identity(2, 2), Vector::Zero(2), 0};
  EXPECT_THROW(nqp_solve(p), ConfigError);
  p.sparsity = 1;
  p.H(0, 1) = 0.5;
  EXPECT_THROW(nqp_solve(p), ConfigError);
  QuadProgram big{Matrix::Identity(13, 13), Vector::Zero(13), 2};
  EXPECT_THROW(nqp_oracle(big), ConfigError);
}

TEST(Nqp, OracleRecoversFeasibleUnconstrainedOptimum) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(4));
    QuadProgram p{oracle::random_psd(rng, n, n + 3), Vector(n), static_cast<int>(n)};
    Vector ystar(n);
    for (Index i = 0; i < n; ++i) ystar[i] = rng.uniform(0.1, 2.0);
    p.c = -p.H * ystar;
    const Vector y = nqp_oracle(p);
    EXPECT_NEAR(quad_objective(p, y), -0.5 * ystar.dot(p.H * ystar), 1e-9);
  }
}

TEST(Nqp, FeasibleMonotoneAndNeverBetterThanOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const QuadProgram p = random_program(rng, false);
    NqpTrace trace;
    const Vector y = nqp_solve(p, {}, &trace);
    EXPECT_GE(y.minCoeff(), 0.0);
    EXPECT_LE((y.array() != 0.0).count(), p.sparsity);
    for (std::size_t s = 1; s < trace.objective.size(); ++s) EXPECT_LE(trace.objective[s], trace.objective[s - 1]);
    EXPECT_LE(quad_objective(p, y), 1e-15);
    const Vector o = nqp_oracle(p);
    EXPECT_LE(quad_objective(p, o), quad_objective(p, y) + 1e-9);
  }
}

TEST(Nqp, DiagonalProgramsMatchTheOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const QuadProgram p = random_program(rng, true);
    const Vector y = nqp_solve(p);
    const Vector o = nqp_oracle(p);
    EXPECT_LE((y - o).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Nqp, SparsityAboveSizeIsClamped) {
  QuadProgram p{Matrix::Identity(2, 2), Vector(2), 5};
  p.c << -1, -1;
  EXPECT_TRUE(nqp_solve(p).isApprox(Vector::Ones(2)));
}
