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

// End-to-end pipeline: data -> kernels -> (tune) -> train -> encode ->
// incremental clustering -> scores, with the spectral baseline alongside.

#include "mkdsc/evalx.hpp"
#include "mkdsc/inclust.hpp"
#include "mkdsc/kernels.hpp"
#include "mkdsc/mkd.hpp"
#include "mkdsc/mtsdata.hpp"
#include "mkdsc/zeroshot.hpp"

#include <chrono>
#include <optional>

namespace mkdsc {

struct ExperimentConfig {
  SynthConfig synth;
  /// When both are set the data is loaded instead of generated.
  std::optional<std::filesystem::path> seenManifest;
  std::optional<std::filesystem::path> unseenManifest;
  BandwidthRule bandwidth;
  TrainConfig train;
  std::optional<TuneGrid> tune;
  ClusterConfig cluster;
  double threshold = 0.1;
  /// Insertion order of unseen sequences: seeded shuffle, or file order.
  bool shuffle = true;
  std::uint64_t orderSeed = 1;
  std::uint64_t spectralSeed = 1;
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j{{"synth", c.synth},
                   {"bandwidth", c.bandwidth.str()},
                   {"train", c.train},
                   {"cluster", c.cluster},
                   {"threshold", c.threshold},
                   {"order", c.shuffle ? "shuffle:" + std::to_string(c.orderSeed) : std::string("file")},
                   {"spectral_seed", c.spectralSeed}};
  if (c.seenManifest) j["seen_manifest"] = c.seenManifest->string();
  if (c.unseenManifest) j["unseen_manifest"] = c.unseenManifest->string();
  if (c.tune) j["tune"] = {{"k", c.tune->k}, {"tx", c.tune->tx}};
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("synth")) c.synth = j["synth"].get<SynthConfig>();
  if (j.contains("seen_manifest")) c.seenManifest = j["seen_manifest"].get<std::string>();
  if (j.contains("unseen_manifest")) c.unseenManifest = j["unseen_manifest"].get<std::string>();
  if (j.contains("bandwidth")) c.bandwidth = BandwidthRule::parse(j["bandwidth"].get<std::string>());
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
  if (j.contains("tune")) c.tune = j["tune"].get<TuneGrid>();
  if (j.contains("cluster")) c.cluster = j["cluster"].get<ClusterConfig>();
  c.threshold = j.value("threshold", c.threshold);
  if (j.contains("order")) {
    const auto order = j["order"].get<std::string>();
    if (order == "file") {
      c.shuffle = false;
    } else if (order.rfind("shuffle:", 0) == 0) {
      c.shuffle = true;
      c.orderSeed = std::stoull(order.substr(8));
    } else {
      throw ConfigError("order must be 'file' or 'shuffle:SEED'");
    }
  }
  c.spectralSeed = j.value("spectral_seed", c.spectralSeed);
  return c;
}

/// Re-throws an exception with the failing stage prefixed, preserving its
/// category.
template <class Fn>
auto run_stage(std::string_view stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(stage) + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(stage) + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(std::string(stage) + ": " + e.what());
  }
}

/// Encoding of one unseen sequence.
struct EncodedSequence {
  std::string id;
  std::optional<int> label;
  Vector code;
  EncodingMatrix R;
  ReconstructionReport report;
};

inline std::vector<EncodedSequence> encode_dataset(const Dictionary& d, const KernelSet& ks, const Dataset& seen,
                                                   const Dataset& unseen, int tx, double threshold) {
  const Encoder encoder(d, ks);
  const auto labels = seen.labels();
  std::vector<EncodedSequence> out(static_cast<std::size_t>(unseen.size()));
  parallel_for(out.size(), [&](std::size_t i) {
    const auto& z = unseen[static_cast<Index>(i)];
    const auto ck = cross_kernel(seen, z, ks.bandwidths);
    auto code = encoder.encode(ck, tx);
    out[i].id = z.id;
    out[i].label = z.label;
    out[i].R = encoding_matrix(d, code.x, z.id);
    out[i].report = reconstruction_report(d, ks, ck, code.x, labels, threshold);
    out[i].code = std::move(code.x);
  });
  return out;
}

inline std::vector<std::size_t> insertion_order(std::size_t n, bool shuffle, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  return order;
}

struct ExperimentResult {
  nlohmann::json report;  ///< deterministic content
  nlohmann::json timing;  ///< wall-clock seconds per stage
  Dendrogram tree;
  std::vector<EncodedSequence> encoded;
  TrainResult trained;
  KernelSet kernels;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  using clock = std::chrono::steady_clock;
  ExperimentResult res;
  auto tick = clock::now();
  auto lap = [&](const char* name) {
    const auto now = clock::now();
    res.timing[name] = std::chrono::duration<double>(now - tick).count();
    tick = now;
  };

  cfg.cluster.validate();
  cfg.train.validate();

  Dataset seen, unseen;
  std::optional<SynthResult> synth;
  run_stage("data", [&] {
    if (cfg.seenManifest && cfg.unseenManifest) {
      LabelMap labels;
      seen = load_dataset(*cfg.seenManifest, Role::seen, &labels);
      unseen = load_dataset(*cfg.unseenManifest, Role::unseen, &labels);
    } else {
      synth = synth_dataset(cfg.synth);
      seen = synth->seen;
      unseen = synth->unseen;
    }
    if (unseen.sequences.empty()) throw DataError("no unseen sequences");
    check_disjoint_labels(seen, unseen);
  });
  lap("data");

  res.kernels = run_stage("kernels", [&] { return build_kernelset(seen, {cfg.bandwidth, true}); });
  lap("kernels");

  TrainConfig trainCfg = cfg.train;
  nlohmann::json tuneJson;
  if (cfg.tune) {
    const auto tuned = run_stage("tune", [&] { return tune(seen, res.kernels, *cfg.tune, cfg.train); });
    trainCfg = tuned.best;
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& s : tuned.scores)
      scores.push_back({{"k", s.k}, {"tx", s.tx}, {"held_out_error", std::isfinite(s.heldOutError) ? nlohmann::json(s.heldOutError) : nlohmann::json(nullptr)}});
    tuneJson = {{"selected", {{"k", trainCfg.k}, {"tx", trainCfg.tx}}}, {"stratified", tuned.stratified}, {"scores", scores}};
    lap("tune");
  }

  res.trained = run_stage("train", [&] { return train(seen, res.kernels, trainCfg); });
  lap("train");

  res.encoded = run_stage("encode", [&] {
    return encode_dataset(res.trained.dictionary, res.kernels, seen, unseen, trainCfg.tx, cfg.threshold);
  });
  lap("encode");

  res.tree = Dendrogram(cfg.cluster);
  run_stage("cluster", [&] {
    for (std::size_t i : insertion_order(res.encoded.size(), cfg.shuffle, cfg.orderSeed))
      res.tree.insert(res.encoded[i].id, res.encoded[i].R.R);
  });
  lap("cluster");

  nlohmann::json report;
  report["version"] = std::string(kVersion);
  report["config"] = to_json(cfg);
  report["seen"] = {{"N", seen.size()}, {"f", seen.dims()}, {"classes", seen.labelSet}, {"hash", dataset_hash(seen)}};
  report["unseen"] = {{"N", unseen.size()}, {"classes", unseen.labelSet}, {"hash", dataset_hash(unseen)}};
  report["kernels"] = {{"bandwidths", res.kernels.bandwidths}, {"repair_shift", res.kernels.repairShift}};
  if (!tuneJson.is_null()) report["tune"] = tuneJson;
  report["train"] = {{"effective", trainCfg},
                     {"loss_trace", res.trained.lossTrace},
                     {"initial_loss", res.trained.lossTrace.front()},
                     {"final_loss", res.trained.lossTrace.back()},
                     {"reinitializations", res.trained.reinitializations}};

  // Reconstruction and attribution.
  double draSum = 0.0;
  std::size_t attributed = 0, attributedCorrect = 0;
  nlohmann::json perSeq = nlohmann::json::array();
  for (const auto& e : res.encoded) {
    draSum += e.report.dra;
    nlohmann::json j = to_json(e.report);
    j["id"] = e.id;
    j["label"] = e.label ? nlohmann::json(*e.label) : nlohmann::json(nullptr);
    if (synth && e.label) {
      const auto& prov = synth->provenance_of(*e.label);
      j["provenance"] = prov.dimSource;
      for (std::size_t l = 0; l < prov.dimSource.size(); ++l) {
        const auto& a = e.report.perDimAttribution[l];
        if (!a) continue;
        ++attributed;
        if (*a == prov.dimSource[l]) ++attributedCorrect;
      }
    }
    perSeq.push_back(std::move(j));
  }
  report["reconstruction"] = {{"threshold", cfg.threshold},
                              {"mean_dra", draSum / static_cast<double>(res.encoded.size())},
                              {"per_sequence", perSeq}};
  if (synth)
    report["reconstruction"]["attribution_accuracy"] =
        attributed ? static_cast<double>(attributedCorrect) / static_cast<double>(attributed) : 1.0;

  // Clustering scores.
  const auto flat = res.tree.flat_clusters();
  std::set<int> roots;
  for (const auto& [id, c] : flat) roots.insert(c);
  nlohmann::json clustering{{"mkd", {{"num_clusters", roots.size()}}}};
  clustering["metric_definitions"] = {{"ce", "1 - optimal one-to-one cluster/class matching accuracy"},
                                      {"nmi", "I(pred; truth) / sqrt(H(pred) H(truth)), natural log"}};
  const bool labelled = std::all_of(unseen.sequences.begin(), unseen.sequences.end(), [](const auto& s) { return s.label.has_value(); });
  if (labelled) {
    std::map<std::string, int> truth, pred;
    for (const auto& s : unseen.sequences) truth[s.id] = *s.label;
    for (const auto& [id, c] : flat) pred[id] = c;
    const auto mkdScore = score_clustering(pred, truth);
    clustering["mkd"]["ce"] = mkdScore.ce;
    clustering["mkd"]["nmi"] = mkdScore.nmi;
    const int numClasses = static_cast<int>(unseen.labelSet.size());
    if (numClasses >= 2) {
      const auto spectral = run_stage("spectral", [&] {
        return spectral_baseline(unseen, res.kernels.bandwidths, numClasses, cfg.spectralSeed);
      });
      const auto t = unseen.labels();
      const auto sScore = score_clustering(spectral, t);
      clustering["spectral"] = {{"ce", sScore.ce}, {"nmi", sScore.nmi}, {"num_clusters", numClasses}};
    }
  }
  report["clustering"] = clustering;
  lap("score");
  res.report = std::move(report);
  return res;
}

/// Plain-text summary of a report produced by run_experiment.
inline std::string render_report_text(const nlohmann::json& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "mkdsc report (version " << r.value("version", std::string("?")) << ")\n";
  os << "seen: N=" << r["seen"]["N"] << " f=" << r["seen"]["f"] << "   unseen: N=" << r["unseen"]["N"] << "\n";
  const auto& tr = r["train"];
  os << "training: k=" << tr["effective"]["k"] << " tx=" << tr["effective"]["tx"] << "  loss "
     << tr["initial_loss"].get<double>() << " -> " << tr["final_loss"].get<double>() << " over "
     << tr["loss_trace"].size() - 1 << " iterations\n";
  const auto& rec = r["reconstruction"];
  os << "reconstruction: mean DRA " << 100.0 * rec["mean_dra"].get<double>() << " % at threshold "
     << rec["threshold"].get<double>() << "\n";
  if (rec.contains("attribution_accuracy"))
    os << "attribution agreement with provenance: " << 100.0 * rec["attribution_accuracy"].get<double>() << " %\n";
  const auto& cl = r["clustering"];
  os << "clustering (incremental): " << cl["mkd"]["num_clusters"] << " top-level clusters";
  if (cl["mkd"].contains("ce"))
    os << ", CE " << 100.0 * cl["mkd"]["ce"].get<double>() << " %, NMI " << cl["mkd"]["nmi"].get<double>();
  os << "\n";
  if (cl.contains("spectral"))
    os << "clustering (spectral baseline): CE " << 100.0 * cl["spectral"]["ce"].get<double>() << " %, NMI "
       << cl["spectral"]["nmi"].get<double>() << "\n";
  return os.str();
}

/// CSV table: sequence, dimension, error, attributed class, provenance class.
inline std::string render_attribution_csv(const nlohmann::json& r) {
  std::ostringstream os;
  os.precision(17);
  os << "sequence,label,dimension,error,attributed_class,provenance_class\n";
  for (const auto& s : r["reconstruction"]["per_sequence"]) {
    const auto& err = s["per_dim_error"];
    for (std::size_t l = 0; l < err.size(); ++l) {
      os << s["id"].get<std::string>() << ',' << (s["label"].is_null() ? std::string() : s["label"].dump()) << ',' << l
         << ',' << err[l].get<double>() << ',';
      const auto& a = s["per_dim_attribution"][l];
      if (!a.is_null()) os << a.get<int>();
      os << ',';
      if (s.contains("provenance")) os << s["provenance"][l].get<int>();
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace mkdsc
