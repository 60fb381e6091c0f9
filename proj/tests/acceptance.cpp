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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include "mkdsc/experiment.hpp"
#include "mkdsc/nqp_oracle.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

using namespace mkdsc;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

int failures = 0;

void report(int id, const char* name, Outcome& o, double secs, double limit) {
  if (limit > 0.0) o.check(secs < limit, "runtime " + std::to_string(secs) + "s over " + std::to_string(limit) + "s");
  if (!o.pass) ++failures;
  std::printf("%s criterion %d: %s (%s%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.str().c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void kernel_algebra() {
  Clock clock;
  Outcome o;
  Rng rng(101);
  double worst = 0.0;
  constexpr int instances = 150;
  for (int trial = 0; trial < instances; ++trial) {
    const auto in = oracle::random_instance(rng);
    worst = std::max(worst, (atom_gram(in.d, in.ks) - in.gram()).cwiseAbs().maxCoeff());
    worst = std::max(worst, (atom_data_cross(in.d, in.ks) - in.cross()).cwiseAbs().maxCoeff());
    worst = std::max(worst, std::abs(compute_loss(in.d, in.ks, in.x) - in.loss()));
    double total = 0.0, self = 0.0;
    for (Index l = 0; l < in.f(); ++l) {
      total += in.query_residual(l);
      self += in.ck.selfK[l];
    }
    worst = std::max(worst, std::abs(encode_residual(in.d, in.ks, in.ck, in.code) - std::max(0.0, total)));
    // Every non-empty dimension subset.
    for (unsigned mask = 1; mask < (1u << in.f()); ++mask) {
      std::set<Index> dims;
      double num = 0.0, den = 0.0;
      for (Index l = 0; l < in.f(); ++l)
        if (mask & (1u << l)) {
          dims.insert(l);
          num += in.query_residual(l);
          den += in.ck.selfK[l];
        }
      worst = std::max(worst, std::abs(partial_error(in.d, in.ks, in.ck, in.code, dims) - std::max(0.0, num / den)));
    }
    (void)self;
  }
  o.check(worst <= 1e-8, "max deviation " + fmt(worst));
  o.detail << instances << " instances, max deviation " << fmt(worst) << ", tol 1e-8; ";
  report(1, "kernel algebra matches explicit embeddings", o, clock.seconds(), 60.0);
}

void dtw_exactness() {
  Clock clock;
  Outcome o;
  Rng rng(202);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> a(1 + rng.below(6)), b(1 + rng.below(6));
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    if (dtw(a, b) != oracle::dtw_paths(a, b)) ++mismatches;
  }
  o.check(mismatches == 0, std::to_string(mismatches) + " mismatches");
  o.detail << "500 pairs, " << mismatches << " mismatches; ";
  report(2, "DTW equals exhaustive path enumeration", o, clock.seconds(), 60.0);
}

void nqp() {
  Clock clock;
  Outcome o;
  Rng rng(303);
  int infeasible = 0, diagonal = 0, diagonalMismatch = 0;
  double worstGap = 0.0, gapSum = 0.0;
  int scored = 0, overLimit = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(8));
    QuadProgram p;
    p.sparsity = 1 + static_cast<int>(rng.below(3));
    const bool diag = trial % 4 == 0;
    if (diag) {
      p.H = Matrix::Zero(n, n);
      for (Index i = 0; i < n; ++i) p.H(i, i) = rng.uniform(0.05, 4.0);
    } else {
      // Full-rank Gram so that every instance has a finite optimum.
      p.H = oracle::random_psd(rng, n, n + 1 + static_cast<Index>(rng.below(static_cast<std::size_t>(n))));
    }
    p.c.resize(n);
    for (Index i = 0; i < n; ++i) p.c[i] = rng.normal();
    const Vector y = nqp_solve(p);
    if (y.minCoeff() < 0.0 || (y.array() != 0.0).count() > p.sparsity) ++infeasible;
    const Vector best = nqp_oracle(p);
    const double fy = quad_objective(p, y), fo = quad_objective(p, best);
    if (diag) {
      ++diagonal;
      if ((y - best).cwiseAbs().maxCoeff() > 1e-9) ++diagonalMismatch;
    }
    if (fo < -1e-12) {
      const double gap = (fy - fo) / std::abs(fo);
      worstGap = std::max(worstGap, gap);
      gapSum += gap;
      ++scored;
      if (gap > 0.10) ++overLimit;
    }
  }
  o.check(infeasible == 0, std::to_string(infeasible) + " infeasible");
  o.check(diagonalMismatch == 0, std::to_string(diagonalMismatch) + " diagonal mismatches");
  o.check(worstGap <= 0.10, "worst gap " + fmt(worstGap));
  o.detail << "1000 instances, " << infeasible << " infeasible, " << diagonalMismatch << "/" << diagonal
           << " diagonal mismatches, worst relative gap " << fmt(worstGap) << " (limit 0.1), mean gap "
           << fmt(scored ? gapSum / scored : 0.0) << ", " << overLimit << "/" << scored << " over the limit; ";
  report(3, "NQP feasibility, diagonal exactness and optimality gap", o, clock.seconds(), 120.0);
}

void monotonicity() {
  Clock clock;
  Outcome o;
  Rng rng(404);
  double worstIncrease = 0.0, worstScale = 0.0;
  int updates = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto in = oracle::random_instance(rng);
    const int ta = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(in.n())));
    const int tb = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(in.f())));
    for (Index t = 0; t < in.k(); ++t) {
      for (Index j = 0, kept = 0; j < in.n(); ++j)
        if (in.d.A(j, t) != 0.0 && ++kept > ta) in.d.A(j, t) = 0.0;
      for (Index l = 0, kept = 0; l < in.f(); ++l)
        if (in.d.B(l, t) != 0.0 && ++kept > tb) in.d.B(l, t) = 0.0;
    }
    normalize_atoms(in.d, in.ks, &in.x);

    Matrix x = in.x;
    Dictionary d = in.d;
    for (Index t = 0; t < in.k(); ++t) {
      const double s = rng.uniform(0.2, 5.0);
      d.A.col(t) *= s;
      x.row(t) /= s;
    }
    normalize_atoms(d, in.ks, &x);
    worstScale = std::max(worstScale, std::abs(compute_loss(d, in.ks, x) - compute_loss(in.d, in.ks, in.x)));

    x = in.x;
    for (Index i = 0; i < in.k(); ++i) {
      double before = compute_loss(in.d, in.ks, x);
      update_atom_samples(in.d, in.ks, x, i, ta, nullptr, tb);
      double after = compute_loss(in.d, in.ks, x);
      worstIncrease = std::max(worstIncrease, after - before);
      before = after;
      update_atom_dims(in.d, in.ks, x, i, tb);
      after = compute_loss(in.d, in.ks, x);
      worstIncrease = std::max(worstIncrease, after - before);
      updates += 2;
    }
  }
  o.check(worstIncrease <= 1e-9, "loss increase " + fmt(worstIncrease));
  o.check(worstScale <= 1e-10, "scale deviation " + fmt(worstScale));
  o.detail << "50 instances, " << updates << " updates, worst increase " << fmt(worstIncrease)
           << " (tol 1e-9), scale deviation " << fmt(worstScale) << " (tol 1e-10); ";
  report(4, "atom updates never increase the loss; scale compensation", o, clock.seconds(), 0.0);
}

ExperimentConfig zero_shot_config(double noise) {
  ExperimentConfig cfg;
  cfg.synth.numSeenClasses = 4;
  cfg.synth.numUnseenClasses = 2;
  cfg.synth.samplesPerClass = 20;
  cfg.synth.noiseStd = noise;
  cfg.train.k = 16;
  cfg.train.tx = 4;
  cfg.train.tbeta = 1;
  return cfg;
}

void zero_shot_clustering() {
  Clock clock;
  Outcome o;
  for (double noise : {0.05, 0.0}) {
    const auto res = run_experiment(zero_shot_config(noise));
    const auto& c = res.report.at("clustering");
    const double ce = c.at("mkd").at("ce"), nmiv = c.at("mkd").at("nmi"), sce = c.at("spectral").at("ce");
    const std::string tag = "noise " + fmt(noise);
    o.check(ce <= 0.10, tag + " CE " + fmt(ce));
    o.check(nmiv >= 0.90, tag + " NMI " + fmt(nmiv));
    o.check(ce < sce || (ce == 0.0 && sce == 0.0), tag + " CE " + fmt(ce) + " vs spectral " + fmt(sce));
    o.detail << tag << ": CE " << fmt(ce) << " NMI " << fmt(nmiv) << " spectral CE " << fmt(sce) << " clusters "
             << c.at("mkd").at("num_clusters").get<int>() << "; ";
  }
  report(5, "zero-shot clustering CE <= 10%, NMI >= 0.9, not worse than spectral", o, clock.seconds(), 300.0);
}

void reconstruction_accuracy() {
  Clock clock;
  Outcome o;
  {
    const auto res = run_experiment(zero_shot_config(0.0));
    const auto& r = res.report.at("reconstruction");
    double minDra = 1.0;
    std::size_t passing = 0, matched = 0;
    for (const auto& s : r.at("per_sequence")) {
      minDra = std::min(minDra, s.at("dra").get<double>());
      const auto& prov = s.at("provenance");
      const auto& attr = s.at("per_dim_attribution");
      for (std::size_t l = 0; l < attr.size(); ++l) {
        if (attr[l].is_null()) continue;
        ++passing;
        if (attr[l].get<int>() == prov[l].get<int>()) ++matched;
      }
    }
    o.check(minDra == 1.0, "zero-noise minimum DRA " + fmt(minDra));
    o.check(matched == passing, "attribution " + std::to_string(matched) + "/" + std::to_string(passing));
    o.detail << "noise 0: min DRA " << fmt(100.0 * minDra) << "%, attribution " << matched << "/" << passing << "; ";
  }
  {
    const auto res = run_experiment(zero_shot_config(0.1));
    const double dra = res.report.at("reconstruction").at("mean_dra");
    o.check(dra >= 0.60, "noise 0.1 DRA " + fmt(dra));
    o.detail << "noise 0.1: mean DRA " << fmt(100.0 * dra) << "% (limit 60%); ";
  }
  report(6, "DRA 100% with matching attribution at zero noise, >= 60% at noise 0.1", o, clock.seconds(), 180.0);
}

void cluster_caches() {
  Clock clock;
  Outcome o;
  Rng rng(707);
  Dendrogram tree;
  Matrix centres[5];
  for (auto& c : centres) {
    c.resize(3, 2);
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform(-5.0, 5.0);
  }
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    Matrix r = centres[rng.below(5)];
    const double spread = rng.uniform(0.05, 1.5);
    for (Index j = 0; j < r.size(); ++j) r.data()[j] += spread * rng.normal();
    tree.insert("s" + std::to_string(i), r);
  }
  for (int id : tree.alive_nodes()) {
    const auto members = tree.subtree_items(id);
    const auto& n = tree.node(id);
    if (members.size() != n.count) o.check(false, "count of node " + std::to_string(id));
    Matrix mean = Matrix::Zero(3, 2);
    for (std::size_t m : members) mean += tree.items()[m].R;
    mean /= static_cast<double>(members.size());
    double intra = 0.0;
    for (std::size_t m : members) intra += (tree.items()[m].R - mean).squaredNorm();
    intra /= static_cast<double>(members.size());
    worst = std::max(worst, (n.mean() - mean).cwiseAbs().maxCoeff());
    worst = std::max(worst, std::abs(n.intra() - intra));
  }
  std::vector<int> hits(500, 0);
  std::size_t rootTotal = 0;
  for (int r : tree.roots()) {
    rootTotal += tree.node(r).count;
    for (std::size_t m : tree.subtree_items(r)) ++hits[m];
  }
  const bool conserved = rootTotal == 500 && std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; });
  o.check(worst <= 1e-10, "cache deviation " + fmt(worst));
  o.check(conserved, "membership not conserved");
  o.detail << "500 inserts, " << tree.alive_nodes().size() << " nodes, max cache deviation " << fmt(worst)
           << " (tol 1e-10), conservation " << (conserved ? "exact" : "broken") << "; ";
  report(7, "incremental clustering caches and membership conservation", o, clock.seconds(), 0.0);
}

void metric_sanity() {
  Clock clock;
  Outcome o;
  Rng rng(808);
  std::vector<int> truth(120), pred(120);
  for (auto& t : truth) t = static_cast<int>(rng.below(4));
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = rng.uniform() < 0.7 ? truth[i] : static_cast<int>(rng.below(5));
  const double ce = clustering_error(pred, truth), mi = nmi(pred, truth);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> perm{0, 1, 2, 3, 4};
    rng.shuffle(perm);
    std::vector<int> p2(pred.size()), t2(truth.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      p2[i] = 7 * perm[static_cast<std::size_t>(pred[i])] - 3;
      t2[i] = perm[static_cast<std::size_t>(truth[i])] + 100;
    }
    worst = std::max({worst, std::abs(clustering_error(p2, truth) - ce), std::abs(nmi(p2, truth) - mi),
                      std::abs(clustering_error(pred, t2) - ce), std::abs(nmi(pred, t2) - mi)});
  }
  int mismatches = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 3 + rng.below(30);
    const int kp = 1 + static_cast<int>(rng.below(5)), kt = 1 + static_cast<int>(rng.below(5));
    std::vector<int> p(n), t(n);
    for (auto& v : p) v = static_cast<int>(rng.below(static_cast<std::size_t>(kp)));
    for (auto& v : t) v = static_cast<int>(rng.below(static_cast<std::size_t>(kt)));
    if (std::abs(clustering_error(p, t) - oracle::brute_force_ce(p, t)) > 1e-12) ++mismatches;
  }
  o.check(worst <= 1e-12, "relabeling deviation " + fmt(worst));
  o.check(mismatches == 0, std::to_string(mismatches) + " CE mismatches");
  o.detail << "100 relabelings, max deviation " << fmt(worst) << "; 300 brute-force CE comparisons, " << mismatches
           << " mismatches; ";
  report(8, "metric permutation invariance and brute-force CE agreement", o, clock.seconds(), 0.0);
}

void determinism() {
  Clock clock;
  Outcome o;
  auto cfg = zero_shot_config(0.05);
  cfg.synth.samplesPerClass = 10;
  std::vector<ExperimentResult> runs;
  for (unsigned threads : {1u, 4u}) {
    set_num_threads(threads);
    runs.push_back(run_experiment(cfg));
  }
  set_num_threads(0);
  const auto& a = runs[0];
  const auto& b = runs[1];
  o.check(a.report.dump() == b.report.dump(), "reports differ");
  o.check(a.tree.to_json().dump() == b.tree.to_json().dump(), "trees differ");
  o.check(bitwise_equal(a.trained.dictionary.A, b.trained.dictionary.A) &&
              bitwise_equal(a.trained.dictionary.B, b.trained.dictionary.B) && bitwise_equal(a.trained.codes, b.trained.codes),
          "dictionaries differ");
  bool kernels = true, encodings = a.encoded.size() == b.encoded.size();
  for (std::size_t l = 0; l < a.kernels.K.size(); ++l) kernels = kernels && bitwise_equal(a.kernels.K[l], b.kernels.K[l]);
  for (std::size_t i = 0; encodings && i < a.encoded.size(); ++i)
    encodings = bitwise_equal(a.encoded[i].R.R, b.encoded[i].R.R) && bitwise_equal(a.encoded[i].code, b.encoded[i].code);
  o.check(kernels, "kernels differ");
  o.check(encodings, "encodings differ");
  o.detail << "threads 1 vs 4: report, tree, kernels, dictionary, codes and encodings "
           << (o.pass ? "bit-identical" : "differ") << "; ";
  report(9, "bit-identical outputs independent of thread count", o, clock.seconds(), 0.0);
}

}  // namespace

int main() {
  warning_sink() = [](std::string_view) {};
  const std::pair<const char*, void (*)()> criteria[] = {
      {"1", kernel_algebra}, {"2", dtw_exactness},           {"3", nqp},           {"4", monotonicity}, {"5", zero_shot_clustering},
      {"6", reconstruction_accuracy}, {"7", cluster_caches}, {"8", metric_sanity}, {"9", determinism}};
  for (const auto& [id, fn] : criteria) {
    try {
      fn();
    } catch (const std::exception& e) {
      ++failures;
      std::printf("FAIL criterion %s: exception: %s\n", id, e.what());
    }
  }
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
