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

#include "json.hpp"

#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <span>

namespace mkdsc {

/// f x T values, one row per dimension. Row-major so that each dimension is
/// a contiguous span.
using SeriesMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TimeSeries {
  std::string id;
  SeriesMatrix values;
  std::optional<int> label;

  Index dims() const { return values.rows(); }
  Index length() const { return values.cols(); }
  std::span<const double> dim(Index l) const {
    return {values.row(l).data(), static_cast<std::size_t>(values.cols())};
  }
};

enum class Role { seen, unseen };

inline std::string_view to_string(Role r) { return r == Role::seen ? "seen" : "unseen"; }

struct Dataset {
  std::vector<TimeSeries> sequences;
  Role role = Role::seen;
  std::set<int> labelSet;

  Index size() const { return static_cast<Index>(sequences.size()); }
  Index dims() const { return sequences.empty() ? 0 : sequences.front().dims(); }
  const TimeSeries& operator[](Index i) const { return sequences[static_cast<std::size_t>(i)]; }

  /// Labels in sequence order; throws if any is missing.
  std::vector<int> labels() const {
    std::vector<int> out;
    out.reserve(sequences.size());
    for (const auto& s : sequences) {
      if (!s.label) throw DataError("sequence '" + s.id + "' has no label");
      out.push_back(*s.label);
    }
    return out;
  }

  /// Checks the dataset invariants and recomputes labelSet.
  void validate() {
    if (sequences.empty()) throw DataError("empty dataset");
    const Index f = sequences.front().dims();
    labelSet.clear();
    for (const auto& s : sequences) {
      if (s.dims() < 1 || s.length() < 1) throw DataError("sequence '" + s.id + "' is empty");
      if (s.dims() != f)
        throw DataError("dimension mismatch: sequence '" + s.id + "' has " + std::to_string(s.dims()) +
                        " dimensions, expected " + std::to_string(f));
      if (!s.values.allFinite()) throw DataError("sequence '" + s.id + "' contains non-finite values");
      if (s.label) {
        if (*s.label < 0) throw DataError("sequence '" + s.id + "' has a negative label");
        labelSet.insert(*s.label);
      } else if (role == Role::seen) {
        throw DataError("seen sequence '" + s.id + "' has no label");
      }
    }
  }
};

/// Content hash over ids, labels, shapes and raw values.
inline std::string dataset_hash(const Dataset& ds) {
  Fnv1a h;
  h.u64(static_cast<std::uint64_t>(ds.size()));
  for (const auto& s : ds.sequences) {
    h.str(s.id);
    h.u64(s.label ? static_cast<std::uint64_t>(*s.label) + 1 : 0);
    h.u64(static_cast<std::uint64_t>(s.dims()));
    h.u64(static_cast<std::uint64_t>(s.length()));
    for (Index l = 0; l < s.dims(); ++l)
      for (double v : s.dim(l)) h.f64(v);
  }
  return h.hex();
}

/// Raises if the unseen label set intersects the seen one.
inline void check_disjoint_labels(const Dataset& seen, const Dataset& unseen) {
  for (int q : unseen.labelSet)
    if (seen.labelSet.count(q))
      throw DataError("unseen label " + std::to_string(q) + " also occurs in the seen set");
}

// ----------------------------------------------------------------------
// CSV sequence files: one row per time step, one column per dimension.
// ----------------------------------------------------------------------

namespace detail {
inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    auto cell = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    cells.push_back(cell);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}
}  // namespace detail

inline SeriesMatrix read_sequence_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("missing sequence file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineNo = 0;
  std::size_t width = 0;
  while (std::getline(is, line)) {
    ++lineNo;
    std::string_view view(line);
    if (view.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto cells = detail::split_csv_line(view);
    std::vector<double> row(cells.size());
    std::size_t bad = 0;
    for (std::size_t c = 0; c < cells.size(); ++c)
      if (!detail::parse_double(cells[c], row[c])) ++bad;
    // A fully non-numeric first row is a header.
    if (rows.empty() && bad == cells.size() && width == 0) {
      width = cells.size();
      continue;
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[c], v))
        throw DataError(path.string() + ": row " + std::to_string(lineNo) + ", column " + std::to_string(c + 1) +
                        ": cannot parse '" + std::string(cells[c]) + "'");
      if (!std::isfinite(v))
        throw DataError(path.string() + ": row " + std::to_string(lineNo) + ", column " + std::to_string(c + 1) +
                        ": non-finite value");
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw DataError(path.string() + ": row " + std::to_string(lineNo) + " has " + std::to_string(cells.size()) +
                      " columns, expected " + std::to_string(width));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + ": no data rows");
  SeriesMatrix m(static_cast<Index>(width), static_cast<Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t l = 0; l < width; ++l) m(static_cast<Index>(l), static_cast<Index>(t)) = rows[t][l];
  return m;
}

inline void write_sequence_csv(const std::filesystem::path& path, const SeriesMatrix& values) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  char buf[64];
  for (Index t = 0; t < values.cols(); ++t) {
    for (Index l = 0; l < values.rows(); ++l) {
      const auto res = std::to_chars(buf, buf + sizeof buf, values(l, t));
      if (l) os.put(',');
      os.write(buf, res.ptr - buf);
    }
    os.put('\n');
  }
  if (!os) throw DataError("failed writing " + path.string());
}

// ----------------------------------------------------------------------
// Manifests: JSON lines {"id": .., "path": .., "label": ..?}. Relative paths
// resolve against the manifest's directory.
// ----------------------------------------------------------------------

/// Interned label names. Integer labels are used verbatim unless a manifest
/// contains string labels, in which case every label is interned in
/// first-seen order.
struct LabelMap {
  std::vector<std::string> names;

  bool empty() const { return names.empty(); }
  int intern(const std::string& name) {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    names.push_back(name);
    return static_cast<int>(names.size() - 1);
  }
};

inline Dataset load_dataset(const std::filesystem::path& manifestPath, Role role, LabelMap* labelMap = nullptr) {
  std::ifstream is(manifestPath);
  if (!is) throw DataError("missing manifest: " + manifestPath.string());
  const auto base = manifestPath.parent_path();

  struct Record {
    std::string id;
    std::filesystem::path path;
    std::optional<nlohmann::json> label;
  };
  std::vector<Record> records;
  bool stringLabels = false;
  std::string line;
  std::size_t lineNo = 0;
  while (std::getline(is, line)) {
    ++lineNo;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(manifestPath.string() + ": line " + std::to_string(lineNo) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("path") || !j["path"].is_string())
      throw DataError(manifestPath.string() + ": line " + std::to_string(lineNo) + ": record needs a string 'path'");
    Record r;
    r.path = j["path"].get<std::string>();
    if (r.path.is_relative()) r.path = base / r.path;
    r.id = j.contains("id") ? j["id"].get<std::string>() : r.path.stem().string();
    if (j.contains("label") && !j["label"].is_null()) {
      if (j["label"].is_string()) {
        stringLabels = true;
      } else if (!j["label"].is_number_integer()) {
        throw DataError(manifestPath.string() + ": line " + std::to_string(lineNo) + ": label must be integer or string");
      }
      r.label = j["label"];
    }
    records.push_back(std::move(r));
  }

  Dataset ds;
  ds.role = role;
  LabelMap localMap;
  LabelMap& map = labelMap ? *labelMap : localMap;
  if (!map.empty()) stringLabels = true;
  for (auto& r : records) {
    TimeSeries s;
    s.id = r.id;
    s.values = read_sequence_csv(r.path);
    if (r.label) {
      if (stringLabels)
        s.label = map.intern(r.label->is_string() ? r.label->get<std::string>() : r.label->dump());
      else
        s.label = r.label->get<int>();
    }
    if (!ds.sequences.empty() && s.dims() != ds.sequences.front().dims())
      throw DataError("dimension mismatch: " + r.path.string() + " has " + std::to_string(s.dims()) +
                      " dimensions, expected " + std::to_string(ds.sequences.front().dims()));
    ds.sequences.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

/// Writes <dir>/<name>/<id>.csv per sequence and the manifest <dir>/<name>.jsonl.
/// Returns the manifest path.
inline std::filesystem::path save_dataset(const Dataset& ds, const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir / name);
  const auto manifest = dir / (name + ".jsonl");
  std::ofstream os(manifest, std::ios::trunc);
  if (!os) throw DataError("cannot write " + manifest.string());
  for (const auto& s : ds.sequences) {
    const auto rel = std::filesystem::path(name) / (s.id + ".csv");
    write_sequence_csv(dir / rel, s.values);
    nlohmann::json j{{"id", s.id}, {"path", rel.generic_string()}};
    if (s.label) j["label"] = *s.label;
    os << j.dump() << '\n';
  }
  return manifest;
}

// ----------------------------------------------------------------------
// Synthetic composite datasets
// ----------------------------------------------------------------------

struct SynthConfig {
  int numSeenClasses = 4;
  int numUnseenClasses = 2;
  int dims = 4;
  int lengthMin = 30;
  int lengthMax = 50;
  int samplesPerClass = 20;
  double noiseStd = 0.05;
  std::uint64_t seed = 7;

  void validate() const {
    if (numSeenClasses < 2) throw ConfigError("synth: numSeenClasses must be >= 2");
    if (numUnseenClasses < 0) throw ConfigError("synth: numUnseenClasses must be >= 0");
    if (dims < 2) throw ConfigError("synth: dims must be >= 2");
    if (lengthMin < 2 || lengthMax < lengthMin) throw ConfigError("synth: invalid length range");
    if (samplesPerClass < 1) throw ConfigError("synth: samplesPerClass must be >= 1");
    if (!(noiseStd >= 0.0)) throw ConfigError("synth: noiseStd must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"num_seen_classes", c.numSeenClasses}, {"num_unseen_classes", c.numUnseenClasses},
       {"dims", c.dims},
       {"length_range", {c.lengthMin, c.lengthMax}},
       {"samples_per_class", c.samplesPerClass},
       {"noise_std", c.noiseStd},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.numSeenClasses = j.value("num_seen_classes", c.numSeenClasses);
  c.numUnseenClasses = j.value("num_unseen_classes", c.numUnseenClasses);
  c.dims = j.value("dims", c.dims);
  if (j.contains("length_range")) {
    c.lengthMin = j["length_range"].at(0).get<int>();
    c.lengthMax = j["length_range"].at(1).get<int>();
  }
  c.samplesPerClass = j.value("samples_per_class", c.samplesPerClass);
  c.noiseStd = j.value("noise_std", c.noiseStd);
  c.seed = j.value("seed", c.seed);
}

/// One smooth prototype on normalized time [0, 1].
struct Template {
  enum class Family { sinusoid, ramp, plateau, bump };
  Family family = Family::sinusoid;
  double p0 = 0, p1 = 0, p2 = 0, offset = 0;

  double operator()(double tau) const {
    switch (family) {
      case Family::sinusoid:  // amplitude, cycles, phase
        return offset + p0 * std::sin(2.0 * 3.14159265358979323846 * p1 * tau + p2);
      case Family::ramp:  // slope, curvature
        return offset + p0 * (tau - 0.5) + p1 * (tau - 0.5) * (tau - 0.5);
      case Family::plateau:  // height, position, sharpness
        return offset + p0 * std::tanh(p2 * (tau - p1));
      case Family::bump:  // height, centre, width
        return offset + p0 * std::exp(-0.5 * (tau - p1) * (tau - p1) / (p2 * p2));
    }
    return 0.0;
  }

  /// Samples the template on a uniform grid of the given length.
  Vector sample(Index length) const {
    Vector v(length);
    for (Index t = 0; t < length; ++t)
      v[t] = (*this)(length == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(length - 1));
    return v;
  }
};

/// Which seen class each dimension of an unseen class was copied from.
struct UnseenProvenance {
  int label = 0;
  std::vector<int> dimSource;
};

struct SynthResult {
  Dataset seen;
  Dataset unseen;
  std::vector<UnseenProvenance> provenance;
  /// templates[c][l] is the prototype of seen class c on dimension l.
  std::vector<std::vector<Template>> templates;

  const UnseenProvenance& provenance_of(int label) const {
    for (const auto& p : provenance)
      if (p.label == label) return p;
    throw DataError("no provenance for label " + std::to_string(label));
  }

  nlohmann::json provenance_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : provenance) arr.push_back({{"label", p.label}, {"dim_source", p.dimSource}});
    return {{"format_version", kFormatVersion}, {"unseen_classes", arr}};
  }
};

namespace detail {
/// Ordered seen-class pairs: disjoint consecutive pairs first, then the
/// remaining ordered pairs lexicographically.
inline std::vector<std::pair<int, int>> composite_pairs(int numSeen) {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a + 1 < numSeen; a += 2) out.emplace_back(a, a + 1);
  for (int a = 0; a < numSeen; ++a)
    for (int b = 0; b < numSeen; ++b)
      if (a != b && std::find(out.begin(), out.end(), std::pair{a, b}) == out.end()) out.emplace_back(a, b);
  return out;
}

inline TimeSeries render_sample(const std::vector<const Template*>& dimTemplates, Index baseLength, double noiseStd,
                                Rng& rng) {
  const Index f = static_cast<Index>(dimTemplates.size());
  Index length = baseLength;
  std::vector<double> tau(static_cast<std::size_t>(length));
  if (noiseStd > 0.0) {
    // Random monotone time warp with at most 20 % length change.
    length = std::max<Index>(2, static_cast<Index>(std::lround(static_cast<double>(baseLength) * rng.uniform(0.8, 1.2))));
    std::vector<double> steps(static_cast<std::size_t>(length - 1));
    for (auto& s : steps) s = rng.uniform(0.5, 1.5);
    tau.assign(static_cast<std::size_t>(length), 0.0);
    double total = 0.0;
    for (double s : steps) total += s;
    double acc = 0.0;
    for (Index t = 1; t < length; ++t) {
      acc += steps[static_cast<std::size_t>(t - 1)];
      tau[static_cast<std::size_t>(t)] = acc / total;
    }
  } else {
    for (Index t = 0; t < length; ++t)
      tau[static_cast<std::size_t>(t)] = length == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(length - 1);
  }
  TimeSeries s;
  s.values.resize(f, length);
  for (Index l = 0; l < f; ++l)
    for (Index t = 0; t < length; ++t) {
      double v = (*dimTemplates[static_cast<std::size_t>(l)])(tau[static_cast<std::size_t>(t)]);
      if (noiseStd > 0.0) v += noiseStd * rng.normal();
      s.values(l, t) = v;
    }
  return s;
}
}  // namespace detail

/// Seen classes get one prototype per dimension; unseen classes copy
/// dimensions 1..ceil(f/2) from one seen class and the rest from another.
inline SynthResult synth_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const auto pairs = detail::composite_pairs(cfg.numSeenClasses);
  if (static_cast<std::size_t>(cfg.numUnseenClasses) > pairs.size())
    throw ConfigError("synth: " + std::to_string(cfg.numUnseenClasses) + " unseen classes requested but only " +
                      std::to_string(pairs.size()) + " seen-class combinations exist");

  Rng rng(cfg.seed);
  SynthResult out;
  out.templates.resize(static_cast<std::size_t>(cfg.numSeenClasses));
  for (int c = 0; c < cfg.numSeenClasses; ++c) {
    for (int l = 0; l < cfg.dims; ++l) {
      Template t;
      t.family = static_cast<Template::Family>((c + 2 * l) % 4);
      t.offset = rng.uniform(-0.3, 0.3);
      switch (t.family) {
        case Template::Family::sinusoid:
          t.p0 = rng.uniform(0.8, 1.4);
          t.p1 = rng.uniform(1.0, 2.5);
          t.p2 = rng.uniform(0.0, 6.283185307179586);
          break;
        case Template::Family::ramp:
          t.p0 = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(1.5, 2.5);
          t.p1 = rng.uniform(-1.5, 1.5);
          break;
        case Template::Family::plateau:
          t.p0 = rng.uniform(0.8, 1.3);
          t.p1 = rng.uniform(0.3, 0.7);
          t.p2 = rng.uniform(6.0, 14.0);
          break;
        case Template::Family::bump:
          t.p0 = rng.uniform(1.2, 2.0);
          t.p1 = rng.uniform(0.25, 0.75);
          t.p2 = rng.uniform(0.06, 0.15);
          break;
      }
      out.templates[static_cast<std::size_t>(c)].push_back(t);
    }
  }

  auto draw_length = [&] {
    return static_cast<Index>(cfg.lengthMin) +
           static_cast<Index>(rng.below(static_cast<std::size_t>(cfg.lengthMax - cfg.lengthMin + 1)));
  };

  out.seen.role = Role::seen;
  for (int c = 0; c < cfg.numSeenClasses; ++c) {
    std::vector<const Template*> dimTemplates;
    for (const auto& t : out.templates[static_cast<std::size_t>(c)]) dimTemplates.push_back(&t);
    for (int i = 0; i < cfg.samplesPerClass; ++i) {
      auto s = detail::render_sample(dimTemplates, draw_length(), cfg.noiseStd, rng);
      s.id = "seen_c" + std::to_string(c) + "_" + std::to_string(i);
      s.label = c;
      out.seen.sequences.push_back(std::move(s));
    }
  }

  out.unseen.role = Role::unseen;
  const int half = (cfg.dims + 1) / 2;
  for (int u = 0; u < cfg.numUnseenClasses; ++u) {
    const auto [a, b] = pairs[static_cast<std::size_t>(u)];
    UnseenProvenance prov;
    prov.label = cfg.numSeenClasses + u;
    std::vector<const Template*> dimTemplates;
    for (int l = 0; l < cfg.dims; ++l) {
      const int src = l < half ? a : b;
      prov.dimSource.push_back(src);
      dimTemplates.push_back(&out.templates[static_cast<std::size_t>(src)][static_cast<std::size_t>(l)]);
    }
    for (int i = 0; i < cfg.samplesPerClass; ++i) {
      auto s = detail::render_sample(dimTemplates, draw_length(), cfg.noiseStd, rng);
      s.id = "unseen_u" + std::to_string(u) + "_" + std::to_string(i);
      s.label = prov.label;
      out.unseen.sequences.push_back(std::move(s));
    }
    out.provenance.push_back(std::move(prov));
  }
  out.seen.validate();
  if (!out.unseen.sequences.empty()) out.unseen.validate();
  return out;
}

}  // namespace mkdsc
