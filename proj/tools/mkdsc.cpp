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

// mkdsc command-line tool: synth, kernels, train, encode, cluster, eval,
// report, and a one-shot experiment runner.

#include <CLI11.hpp>

#include "mkdsc/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace mkdsc::cli {
namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  os << text;
  if (!os) throw DataError("cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

/// Option values of a subcommand after parsing, defaults included.
json effective_options(const CLI::App& app) {
  json out = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_lnames().empty() ? std::string{} : opt->get_lnames().front();
    if (name.empty() || name == "help") continue;
    if (opt->get_type_size() == 0) {
      out[name] = opt->count() > 0;
      continue;
    }
    if (opt->count() == 0) {
      const std::string def = opt->get_default_str();
      out[name] = def.empty() ? json(nullptr) : json(def);
      continue;
    }
    const auto& res = opt->results();
    out[name] = res.size() == 1 ? json(res.front()) : json(res);
  }
  return out;
}

/// config.json for an output directory: command, effective options and the
/// tool and format versions.
void write_run_config(const fs::path& dir, const CLI::App& sub, const json& extra = json::object()) {
  json j{{"command", sub.get_name()},
         {"options", effective_options(sub)},
         {"tool_version", std::string(kVersion)},
         {"format_version", kFormatVersion}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json(dir / "config.json", j);
}

std::string scalar_arg(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

/// Turns the JSON config for subcommand `sub` into command-line tokens.
/// Accepts {"options": {...}} (the layout written into output directories),
/// {"<sub>": {...}} or a flat object of option names.
std::vector<std::string> config_tokens(const json& cfg, const std::string& sub) {
  const json* section = &cfg;
  if (cfg.contains("options") && cfg["options"].is_object()) {
    section = &cfg["options"];
  } else if (cfg.contains(sub) && cfg[sub].is_object()) {
    section = &cfg[sub];
  }
  std::vector<std::string> out;
  for (const auto& [key, value] : section->items()) {
    if (key == "config" || key == "threads" || value.is_null() || value.is_object()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back("--" + key);
      continue;
    }
    if (value.is_array()) {
      for (const auto& v : value) {
        out.push_back("--" + key);
        out.push_back(scalar_arg(v));
      }
      continue;
    }
    out.push_back("--" + key);
    out.push_back(scalar_arg(value));
  }
  return out;
}

json read_config_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw ConfigError("cannot open config file " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + p.string() + ": " + e.what());
  }
}

LabelMap read_labels(const fs::path& p) {
  LabelMap m;
  if (fs::exists(p)) m.names = read_json_file(p).at("names").get<std::vector<std::string>>();
  return m;
}

void write_labels(const fs::path& dir, const LabelMap& m) {
  if (!m.empty()) write_json(dir / "labels.json", {{"names", m.names}});
}

ExperimentConfig parse_order(ExperimentConfig c, const std::string& order) {
  if (order == "file") {
    c.shuffle = false;
  } else if (order.rfind("shuffle:", 0) == 0) {
    c.shuffle = true;
    try {
      c.orderSeed = std::stoull(order.substr(8));
    } catch (const std::exception&) {
      throw ConfigError("--order: bad seed in '" + order + "'");
    }
  } else {
    throw ConfigError("--order must be 'file' or 'shuffle:SEED'");
  }
  return c;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  SynthConfig cfg;
  fs::path out;
};

void run_synth(const SynthArgs& a, const CLI::App& sub) {
  a.cfg.validate();
  const auto s = synth_dataset(a.cfg);
  fs::create_directories(a.out);
  save_dataset(s.seen, a.out, "seen");
  save_dataset(s.unseen, a.out, "unseen");
  write_json(a.out / "provenance.json", s.provenance_json());
  write_run_config(a.out, sub, {{"synth", a.cfg}});
}

// -------------------------------------------------------------- kernels

struct KernelArgs {
  fs::path manifest;
  fs::path out;
  std::string bandwidth = "median";
};

void run_kernels(const KernelArgs& a, const CLI::App& sub) {
  const auto rule = BandwidthRule::parse(a.bandwidth);
  LabelMap labels;
  const Dataset seen = load_dataset(a.manifest, Role::seen, &labels);
  const KernelSet ks = build_kernelset(seen, {rule, true});
  save_kernel_cache(a.out, ks, rule.str());
  write_labels(a.out, labels);
  write_run_config(a.out, sub, {{"dataset_hash", ks.datasetHash}});
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path kernels;
  fs::path manifest;
  fs::path out;
  std::optional<fs::path> tuneGrid;
  TrainConfig cfg;
};

void run_train(const TrainArgs& a, const CLI::App& sub) {
  a.cfg.validate();
  LabelMap labels;
  const Dataset seen = load_dataset(a.manifest, Role::seen, &labels);
  const auto ks = load_kernel_cache(a.kernels);
  if (!ks) throw DataError("no kernel cache in " + a.kernels.string());
  if (ks->datasetHash != dataset_hash(seen))
    throw DataError("kernel cache " + a.kernels.string() + " was built from a different seen set");
  TrainConfig cfg = a.cfg;
  json extra{{"seen_manifest", fs::absolute(a.manifest).lexically_normal().string()},
             {"kernel_dir", fs::absolute(a.kernels).lexically_normal().string()}};
  if (a.tuneGrid) {
    const auto grid = read_json_file(*a.tuneGrid).get<TuneGrid>();
    const auto tuned = tune(seen, *ks, grid, cfg);
    cfg = tuned.best;
    json scores = json::array();
    for (const auto& s : tuned.scores)
      scores.push_back({{"k", s.k}, {"tx", s.tx},
                        {"held_out_error", std::isfinite(s.heldOutError) ? json(s.heldOutError) : json(nullptr)}});
    extra["tune"] = {{"selected", {{"k", cfg.k}, {"tx", cfg.tx}}}, {"stratified", tuned.stratified}, {"scores", scores}};
  }
  const auto result = train(seen, *ks, cfg);
  extra["loss_trace"] = result.lossTrace;
  extra["reinitializations"] = result.reinitializations;
  save_model(a.out, result.dictionary, cfg, ks->bandwidths, extra);
  write_matrix(a.out / "codes.bin", result.codes);
  write_labels(a.out, labels);
  write_run_config(a.out, sub, {{"train", cfg}});
}

// --------------------------------------------------------------- encode

struct EncodeArgs {
  fs::path model;
  fs::path manifest;
  fs::path out;
  int tx = 0;
  double threshold = 0.1;
};

void run_encode(const EncodeArgs& a, const CLI::App& sub) {
  if (!(a.threshold > 0.0)) throw ConfigError("--threshold must be > 0");
  const Model m = load_model(a.model);
  LabelMap labels = read_labels(a.model / "labels.json");
  const fs::path seenManifest = m.meta.at("seen_manifest").get<std::string>();
  const fs::path kernelDir = m.meta.at("kernel_dir").get<std::string>();
  const Dataset seen = load_dataset(seenManifest, Role::seen, &labels);
  const Dataset unseen = load_dataset(a.manifest, Role::unseen, &labels);
  check_disjoint_labels(seen, unseen);
  const auto ks = load_kernel_cache(kernelDir, m.dictionary.datasetHash);
  if (!ks) throw DataError("kernel cache " + kernelDir.string() + " is missing or does not match the model");
  const int tx = a.tx > 0 ? a.tx : m.config.tx;
  const auto encoded = encode_dataset(m.dictionary, *ks, seen, unseen, tx, a.threshold);

  fs::create_directories(a.out);
  std::ostringstream index;
  for (const auto& e : encoded) {
    json code{{"id", e.id},
              {"x", std::vector<double>(e.code.data(), e.code.data() + e.code.size())},
              {"dataset_hash", m.dictionary.datasetHash}};
    write_json(a.out / (e.id + ".code.json"), code);
    write_matrix(a.out / (e.id + ".R.bin"), e.R.R);
    json rep = to_json(e.report);
    rep["id"] = e.id;
    write_json(a.out / (e.id + ".report.json"), rep);
    json rec{{"id", e.id}, {"code", e.id + ".code.json"}, {"R", e.id + ".R.bin"}, {"report", e.id + ".report.json"},
             {"dra", e.report.dra}};
    if (e.label) rec["label"] = *e.label;
    index << rec.dump() << '\n';
  }
  write_text(a.out / "index.jsonl", index.str());
  write_labels(a.out, labels);
  write_run_config(a.out, sub, {{"tx", tx}});
}

// -------------------------------------------------------------- cluster

struct ClusterArgs {
  fs::path enc;
  fs::path out;
  std::optional<fs::path> dot;
  std::string order = "file";
  ClusterConfig cfg;
};

void run_cluster(const ClusterArgs& a, const CLI::App& sub) {
  a.cfg.validate();
  const ExperimentConfig ord = parse_order({}, a.order);
  std::ifstream is(a.enc / "index.jsonl");
  if (!is) throw DataError("missing " + (a.enc / "index.jsonl").string());
  std::vector<std::pair<std::string, Matrix>> items;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError((a.enc / "index.jsonl").string() + ": " + e.what());
    }
    items.emplace_back(rec.at("id").get<std::string>(), read_matrix(a.enc / rec.at("R").get<std::string>()));
  }
  if (items.empty()) throw DataError("no encodings in " + a.enc.string());
  Dendrogram tree(a.cfg);
  for (std::size_t i : insertion_order(items.size(), ord.shuffle, ord.orderSeed)) tree.insert(items[i].first, items[i].second);
  write_json(a.out, tree.to_json());
  if (a.dot) write_text(*a.dot, tree.to_dot());
  const fs::path dir = a.out.has_parent_path() ? a.out.parent_path() : fs::path(".");
  write_run_config(dir, sub, {{"cluster", a.cfg}});
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
  fs::path tree;
  fs::path truth;
  fs::path out;
};

void run_eval(const EvalArgs& a, const CLI::App& sub) {
  const auto pred = flat_clusters_from_json(read_json_file(a.tree));
  LabelMap labels;
  const Dataset truthSet = load_dataset(a.truth, Role::unseen, &labels);
  std::map<std::string, int> truth;
  for (const auto& s : truthSet.sequences) {
    if (!s.label) throw DataError("truth manifest: sequence '" + s.id + "' has no label");
    truth[s.id] = *s.label;
  }
  const auto score = score_clustering(pred, truth);
  std::set<int> clusters;
  for (const auto& [id, c] : pred) clusters.insert(c);
  write_json(a.out, {{"ce", score.ce},
                     {"nmi", score.nmi},
                     {"num_clusters", clusters.size()},
                     {"num_classes", truthSet.labelSet.size()},
                     {"num_sequences", truth.size()}});
  const fs::path dir = a.out.has_parent_path() ? a.out.parent_path() : fs::path(".");
  write_run_config(dir, sub);
}

// ----------------------------------------------------------- experiment

struct ExperimentArgs {
  std::optional<fs::path> plan;
  fs::path out;
  std::optional<double> noise;
  std::optional<std::uint64_t> synthSeed;
  std::optional<int> k, tx, tbeta;
  std::optional<std::string> order;
};

void run_experiment_cmd(const ExperimentArgs& a, const CLI::App& sub) {
  ExperimentConfig c = a.plan ? experiment_config_from_json(read_config_file(*a.plan)) : ExperimentConfig{};
  if (a.noise) c.synth.noiseStd = *a.noise;
  if (a.synthSeed) c.synth.seed = *a.synthSeed;
  if (a.k) c.train.k = *a.k;
  if (a.tx) c.train.tx = *a.tx;
  if (a.tbeta) c.train.tbeta = *a.tbeta;
  if (a.order) c = parse_order(c, *a.order);
  c.synth.validate();
  const auto res = run_experiment(c);
  fs::create_directories(a.out);
  write_json(a.out / "report.json", res.report);
  write_json(a.out / "timing.json", res.timing);
  write_json(a.out / "tree.json", res.tree.to_json());
  write_run_config(a.out, sub, {{"experiment", to_json(c)}});
}

// --------------------------------------------------------------- report

void run_report(const fs::path& run, const CLI::App& sub) {
  const json r = read_json_file(run / "report.json");
  const std::string text = render_report_text(r);
  write_text(run / "summary.txt", text);
  write_text(run / "attribution.csv", render_attribution_csv(r));
  std::cout << text;
  (void)sub;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Multiple-kernel dictionary learning for zero-shot multivariate time series clustering", "mkdsc"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  unsigned threads = 0;
  std::string configPath;
  app.add_option("--threads", threads, "Worker threads (0 = available parallelism)");
  app.add_option("--config", configPath, "JSON config; explicit flags win");
  app.set_version_flag("--version", std::string("mkdsc ") + std::string(kVersion) + " (format " +
                                        std::to_string(kFormatVersion) + ")");

  SynthArgs synthA;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic seen/unseen composite dataset");
  synth->add_option("--out", synthA.out, "Output directory")->required();
  synth->add_option("--seed", synthA.cfg.seed, "Random seed");
  synth->add_option("--noise", synthA.cfg.noiseStd, "Additive noise standard deviation");
  synth->add_option("--seen-classes", synthA.cfg.numSeenClasses, "Number of seen classes");
  synth->add_option("--unseen-classes", synthA.cfg.numUnseenClasses, "Number of composite unseen classes");
  synth->add_option("--dims", synthA.cfg.dims, "Dimensions per sequence");
  synth->add_option("--samples", synthA.cfg.samplesPerClass, "Sequences per class");
  synth->add_option("--min-length", synthA.cfg.lengthMin, "Shortest base length");
  synth->add_option("--max-length", synthA.cfg.lengthMax, "Longest base length");

  KernelArgs kernA;
  auto* kern = app.add_subcommand("kernels", "Compute per-dimension DTW kernel matrices of a seen set");
  kern->add_option("--manifest", kernA.manifest, "Seen manifest (JSON lines)")->required();
  kern->add_option("--out", kernA.out, "Kernel cache directory")->required();
  kern->add_option("--bandwidth", kernA.bandwidth, "'median' or a positive bandwidth");

  TrainArgs trainA;
  std::string tuneGrid;
  auto* trn = app.add_subcommand("train", "Learn a multiple-kernel dictionary");
  trn->add_option("--kernels", trainA.kernels, "Kernel cache directory")->required();
  trn->add_option("--manifest", trainA.manifest, "Seen manifest")->required();
  trn->add_option("--out", trainA.out, "Model directory")->required();
  trn->add_option("--k", trainA.cfg.k, "Number of atoms");
  trn->add_option("--tx", trainA.cfg.tx, "Code sparsity");
  trn->add_option("--ta", trainA.cfg.ta, "Sample-weight sparsity (0 = ceil(N/10))");
  trn->add_option("--tbeta", trainA.cfg.tbeta, "Dimension-weight sparsity (0 = f)");
  trn->add_option("--iters", trainA.cfg.maxIters, "Maximum outer iterations");
  trn->add_option("--tol", trainA.cfg.tol, "Relative loss-change tolerance");
  trn->add_option("--seed", trainA.cfg.seed, "Initialization seed");
  trn->add_option("--tune", tuneGrid, "Grid JSON {\"k\": [...], \"tx\": [...]} for 5-fold selection");

  EncodeArgs encA;
  auto* enc = app.add_subcommand("encode", "Encode unseen sequences and report reconstruction");
  enc->add_option("--model", encA.model, "Model directory")->required();
  enc->add_option("--manifest", encA.manifest, "Unseen manifest")->required();
  enc->add_option("--out", encA.out, "Encoding directory")->required();
  enc->add_option("--tx", encA.tx, "Code sparsity (0 = model's)");
  enc->add_option("--threshold", encA.threshold, "Relative error threshold for DRA");

  ClusterArgs clA;
  std::string dotPath;
  auto* cl = app.add_subcommand("cluster", "Incrementally cluster encodings into a dendrogram");
  cl->add_option("--enc", clA.enc, "Encoding directory")->required();
  cl->add_option("--out", clA.out, "Tree JSON path")->required();
  cl->add_option("--order", clA.order, "Insertion order: file or shuffle:SEED");
  cl->add_option("--kclust", clA.cfg.kClust, "Child-creation ratio threshold");
  cl->add_option("--krmv", clA.cfg.kRmv, "Replacement ratio threshold");
  cl->add_option("--gamma", clA.cfg.gamma, "Singleton floor factor");
  cl->add_option("--dot", dotPath, "Also write a Graphviz description");

  EvalArgs evA;
  auto* ev = app.add_subcommand("eval", "Score a tree against ground-truth labels");
  ev->add_option("--tree", evA.tree, "Tree JSON")->required();
  ev->add_option("--truth", evA.truth, "Labelled manifest")->required();
  ev->add_option("--out", evA.out, "Score JSON path")->required();

  std::string runDir;
  auto* rep = app.add_subcommand("report", "Render a run's report as text and CSV");
  rep->add_option("--run", runDir, "Run directory containing report.json")->required();

  ExperimentArgs exA;
  std::string plan, order;
  double noise = 0.0;
  std::uint64_t synthSeed = 0;
  int k = 0, tx = 0, tbeta = 0;
  auto* ex = app.add_subcommand("experiment", "Run synth, kernels, train, encode, cluster and scoring in one go");
  ex->add_option("--plan", plan, "Experiment JSON");
  ex->add_option("--out", exA.out, "Run directory")->required();
  auto* noiseOpt = ex->add_option("--noise", noise, "Override the synthetic noise level");
  auto* seedOpt = ex->add_option("--synth-seed", synthSeed, "Override the synthetic seed");
  auto* kOpt = ex->add_option("--k", k, "Override the atom count");
  auto* txOpt = ex->add_option("--tx", tx, "Override the code sparsity");
  auto* tbOpt = ex->add_option("--tbeta", tbeta, "Override the dimension-weight sparsity");
  auto* orderOpt = ex->add_option("--order", order, "Override the insertion order");

  // Config file values are injected right after the subcommand name so that
  // explicit flags, parsed later, take precedence.
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) configPath = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) configPath = args[i].substr(9);
  }
  if (!configPath.empty()) {
    const json cfg = read_config_file(configPath);
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i].rfind("-", 0) == 0) {
        if (args[i] == "--config" || args[i] == "--threads") ++i;
        continue;
      }
      const auto tokens = config_tokens(cfg, args[i]);
      args.insert(args.begin() + static_cast<std::ptrdiff_t>(i) + 1, tokens.begin(), tokens.end());
      if (cfg.contains("threads") && cfg["threads"].is_number_unsigned())
        threads = cfg["threads"].get<unsigned>();
      break;
    }
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return kExitUsage;
  }
  set_num_threads(threads);

  if (*synth) {
    run_synth(synthA, *synth);
  } else if (*kern) {
    run_kernels(kernA, *kern);
  } else if (*trn) {
    if (!tuneGrid.empty()) trainA.tuneGrid = tuneGrid;
    run_train(trainA, *trn);
  } else if (*enc) {
    run_encode(encA, *enc);
  } else if (*cl) {
    if (!dotPath.empty()) clA.dot = dotPath;
    run_cluster(clA, *cl);
  } else if (*ev) {
    run_eval(evA, *ev);
  } else if (*rep) {
    run_report(runDir, *rep);
  } else if (*ex) {
    if (!plan.empty()) exA.plan = plan;
    if (noiseOpt->count()) exA.noise = noise;
    if (seedOpt->count()) exA.synthSeed = synthSeed;
    if (kOpt->count()) exA.k = k;
    if (txOpt->count()) exA.tx = tx;
    if (tbOpt->count()) exA.tbeta = tbeta;
    if (orderOpt->count()) exA.order = order;
    run_experiment_cmd(exA, *ex);
  }
  return 0;
}

}  // namespace
}  // namespace mkdsc::cli

int main(int argc, char** argv) {
  using namespace mkdsc;
  try {
    return cli::dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "mkdsc: configuration error: " << e.what() << "\n";
    return cli::kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "mkdsc: data error: " << e.what() << "\n";
    return cli::kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "mkdsc: numerical failure: " << e.what() << "\n";
    return cli::kExitNumerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "mkdsc: data error: " << e.what() << "\n";
    return cli::kExitData;
  } catch (const std::exception& e) {
    std::cerr << "mkdsc: data error: " << e.what() << "\n";
    return cli::kExitData;
  }
}
