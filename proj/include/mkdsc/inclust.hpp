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

// Online hierarchical clustering of encoding matrices. Each node keeps the
// running sum and sum of squared norms of the encodings in its subtree, so
// its mean and mean squared distance to the mean are available in O(N f).

#include "mkdsc/common.hpp"
#include "mkdsc/zeroshot.hpp"

#include "json.hpp"

#include <limits>
#include <map>
#include <optional>

namespace mkdsc {

struct ClusterConfig {
  double kClust = 0.7;
  double kRmv = 0.3;
  /// Scales the running mean join distance used as the acceptance floor of
  /// nodes whose own spread is smaller.
  double gamma = 1.0;
  /// Leaves smaller than this are never split.
  std::size_t minSplitSize = 4;
  /// Tentative splits with a smaller part are discarded.
  std::size_t minPartSize = 1;
  /// Discard tentative splits whose part means lie within gamma times the
  /// mean join distance of each other.
  bool separationGate = true;
  int kmeansIters = 50;

  void validate() const {
    if (!(kClust > 0.0 && kClust <= 1.0)) throw ConfigError("cluster: k_clust must be in (0, 1]");
    if (!(kRmv > 0.0 && kRmv <= 1.0)) throw ConfigError("cluster: k_rmv must be in (0, 1]");
    if (kRmv > kClust) throw ConfigError("cluster: k_rmv must not exceed k_clust");
    if (!(gamma > 0.0)) throw ConfigError("cluster: gamma must be > 0");
    if (minPartSize < 1) throw ConfigError("cluster: min_part_size must be >= 1");
    if (minSplitSize < 2 * minPartSize) throw ConfigError("cluster: min_split_size must be >= 2 * min_part_size");
    if (kmeansIters < 1) throw ConfigError("cluster: kmeansIters must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const ClusterConfig& c) {
  j = {{"k_clust", c.kClust}, {"k_rmv", c.kRmv}, {"gamma", c.gamma}, {"min_split_size", c.minSplitSize},
       {"min_part_size", c.minPartSize}, {"separation_gate", c.separationGate},
       {"kmeans_iters", c.kmeansIters}};
}

inline void from_json(const nlohmann::json& j, ClusterConfig& c) {
  c.kClust = j.value("k_clust", c.kClust);
  c.kRmv = j.value("k_rmv", c.kRmv);
  c.gamma = j.value("gamma", c.gamma);
  c.minSplitSize = j.value("min_split_size", c.minSplitSize);
  c.minPartSize = j.value("min_part_size", c.minPartSize);
  c.separationGate = j.value("separation_gate", c.separationGate);
  c.kmeansIters = j.value("kmeans_iters", c.kmeansIters);
}

enum class InsertPath { joinedLeaf, newChild, newTopLevel };
enum class SplitOutcome { none, discarded, children, replaced };

inline std::string_view to_string(InsertPath p) {
  switch (p) {
    case InsertPath::joinedLeaf: return "joined_leaf";
    case InsertPath::newChild: return "new_child";
    case InsertPath::newTopLevel: return "new_top_level";
  }
  return "?";
}

inline std::string_view to_string(SplitOutcome s) {
  switch (s) {
    case SplitOutcome::none: return "none";
    case SplitOutcome::discarded: return "discarded";
    case SplitOutcome::children: return "children";
    case SplitOutcome::replaced: return "replaced";
  }
  return "?";
}

struct Placement {
  InsertPath path = InsertPath::newTopLevel;
  SplitOutcome split = SplitOutcome::none;
  int node = -1;             ///< node the sequence was added to or matched against
  std::vector<int> created;  ///< ids of nodes created by this insert
  double distance = 0.0;     ///< d(z, winner); 0 for a new top-level leaf
  double ratio = std::numeric_limits<double>::quiet_NaN();  ///< split ratio if a split was evaluated
};

/// Result of a 2-means split on a set of encodings.
struct TwoMeans {
  std::vector<int> assignment;  // 0 or 1 per point
  std::size_t sizes[2] = {0, 0};
};

/// Lloyd's 2-means under the Frobenius geometry, initialised with the
/// farthest pair (lowest indices on ties).
inline TwoMeans two_means(const std::vector<const Matrix*>& points, int maxIters) {
  const std::size_t m = points.size();
  TwoMeans out;
  out.assignment.assign(m, 0);
  if (m < 2) {
    out.sizes[0] = m;
    return out;
  }
  std::size_t pa = 0, pb = 1;
  double farthest = -1.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const double d = (*points[i] - *points[j]).squaredNorm();
      if (d > farthest) {
        farthest = d;
        pa = i;
        pb = j;
      }
    }
  Matrix centres[2] = {*points[pa], *points[pb]};
  std::vector<int> prev;
  for (int it = 0; it < maxIters; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      const double d0 = (*points[i] - centres[0]).squaredNorm();
      const double d1 = (*points[i] - centres[1]).squaredNorm();
      out.assignment[i] = d1 < d0 ? 1 : 0;
    }
    if (out.assignment == prev) break;
    prev = out.assignment;
    for (int c = 0; c < 2; ++c) {
      Matrix sum = Matrix::Zero(points[0]->rows(), points[0]->cols());
      std::size_t count = 0;
      for (std::size_t i = 0; i < m; ++i)
        if (out.assignment[i] == c) {
          sum += *points[i];
          ++count;
        }
      if (count) centres[c] = sum / static_cast<double>(count);
    }
  }
  out.sizes[0] = out.sizes[1] = 0;
  for (int a : out.assignment) ++out.sizes[a];
  return out;
}

/// Mean squared Frobenius distance of the points to their mean.
inline double mean_spread(const std::vector<const Matrix*>& points) {
  if (points.empty()) return 0.0;
  Matrix mean = Matrix::Zero(points[0]->rows(), points[0]->cols());
  for (const auto* p : points) mean += *p;
  mean /= static_cast<double>(points.size());
  double s = 0.0;
  for (const auto* p : points) s += (*p - mean).squaredNorm();
  return s / static_cast<double>(points.size());
}

class Dendrogram {
 public:
  struct Node {
    int id = -1;
    int parent = -1;
    std::vector<int> children;
    std::vector<std::size_t> members;  // direct members (leaves only)
    std::size_t count = 0;             // subtree size
    Matrix sum;
    double sumSq = 0.0;
    bool alive = true;

    bool leaf() const { return children.empty(); }
    Matrix mean() const { return sum / static_cast<double>(count); }
    /// Mean squared distance of the subtree's encodings to its mean.
    double intra() const {
      const double v = sumSq / static_cast<double>(count) - (sum / static_cast<double>(count)).squaredNorm();
      return std::max(0.0, v);
    }
  };

  struct Item {
    std::string sourceId;
    Matrix R;
  };

  explicit Dendrogram(ClusterConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const ClusterConfig& config() const { return cfg_; }
  const std::vector<int>& roots() const { return roots_; }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<Item>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  std::vector<int> alive_nodes() const {
    std::vector<int> out;
    for (const auto& n : nodes_)
      if (n.alive) out.push_back(n.id);
    return out;
  }

  double mean_join_distance() const { return joinCount_ ? joinSum_ / static_cast<double>(joinCount_) : 0.0; }

  /// Squared Frobenius distance to the node's cached mean.
  double dist(const Matrix& r, int id) const {
    const Node& n = node(id);
    if (n.count == 0) throw ConfigError("dist: empty node");
    if (r.rows() != n.sum.rows() || r.cols() != n.sum.cols()) throw ConfigError("dist: encoding shape mismatch");
    return (r - n.mean()).squaredNorm();
  }

  /// Acceptance radius of a node: its spread, floored at gamma times the
  /// running mean join distance (or, before any join, the query's distance
  /// to its nearest node).
  double effective_intra(int id, double bootstrap) const {
    const double floor = joinCount_ ? mean_join_distance() : bootstrap;
    return std::max(node(id).intra(), cfg_.gamma * floor);
  }

  Placement insert(std::string sourceId, Matrix r) {
    if (!items_.empty() && (r.rows() != items_.front().R.rows() || r.cols() != items_.front().R.cols()))
      throw ConfigError("insert: encoding shape differs from the tree's encodings");
    const std::size_t item = items_.size();
    items_.push_back({std::move(sourceId), std::move(r)});
    const Matrix& enc = items_.back().R;

    Placement out;
    const auto candidates = alive_nodes();
    if (candidates.empty()) {
      out.node = new_leaf(-1, {item});
      roots_.push_back(out.node);
      out.created.push_back(out.node);
      return out;
    }

    std::vector<double> d(candidates.size());
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      d[c] = dist(enc, candidates[c]);
      nearest = std::min(nearest, d[c]);
    }
    int winner = -1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (d[c] <= effective_intra(candidates[c], nearest) && d[c] < best) {
        best = d[c];
        winner = candidates[c];
      }
    }

    if (winner < 0) {
      out.node = new_leaf(-1, {item});
      roots_.push_back(out.node);
      out.created.push_back(out.node);
      return out;
    }

    out.node = winner;
    out.distance = best;
    joinSum_ += best;
    ++joinCount_;

    if (!node(winner).leaf()) {
      out.path = InsertPath::newChild;
      const int child = new_leaf(winner, {item});
      nodes_[static_cast<std::size_t>(winner)].children.push_back(child);
      add_to_ancestors(winner, enc);
      out.created.push_back(child);
      return out;
    }

    out.path = InsertPath::joinedLeaf;
    nodes_[static_cast<std::size_t>(winner)].members.push_back(item);
    add_to_ancestors(winner, enc);
    try_split(winner, out);
    return out;
  }

  /// Every sequence mapped to the id of its top-level ancestor, in insertion
  /// order.
  std::vector<std::pair<std::string, int>> flat_clusters() const {
    std::vector<int> cluster(items_.size(), -1);
    for (int root : roots_) {
      std::vector<int> stack{root};
      while (!stack.empty()) {
        const Node& n = node(stack.back());
        stack.pop_back();
        for (std::size_t m : n.members) cluster[m] = root;
        for (int c : n.children) stack.push_back(c);
      }
    }
    std::vector<std::pair<std::string, int>> out;
    out.reserve(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) out.emplace_back(items_[i].sourceId, cluster[i]);
    return out;
  }

  /// All encodings stored in the subtree of `id`.
  std::vector<std::size_t> subtree_items(int id) const {
    std::vector<std::size_t> out;
    std::vector<int> stack{id};
    while (!stack.empty()) {
      const Node& n = node(stack.back());
      stack.pop_back();
      out.insert(out.end(), n.members.begin(), n.members.end());
      for (int c : n.children) stack.push_back(c);
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json roots = nlohmann::json::array();
    for (int r : roots_) roots.push_back(node_json(r));
    return {{"format_version", kFormatVersion},
            {"config", cfg_},
            {"items", items_.size()},
            {"mean_join_distance", mean_join_distance()},
            {"roots", roots}};
  }

  /// Graphviz description of the tree.
  std::string to_dot() const {
    std::ostringstream os;
    os << "digraph dendrogram {\n  node [shape=box];\n";
    for (const auto& n : nodes_) {
      if (!n.alive) continue;
      os << "  n" << n.id << " [label=\"C" << n.id << "\\nn=" << n.count << "\\nspread=" << n.intra() << "\"];\n";
      for (int c : n.children) os << "  n" << n.id << " -> n" << c << ";\n";
    }
    os << "}\n";
    return os.str();
  }

 private:
  int new_leaf(int parent, std::vector<std::size_t> members) {
    Node n;
    n.id = static_cast<int>(nodes_.size());
    n.parent = parent;
    n.members = std::move(members);
    n.sum = Matrix::Zero(items_.front().R.rows(), items_.front().R.cols());
    for (std::size_t m : n.members) {
      n.sum += items_[m].R;
      n.sumSq += items_[m].R.squaredNorm();
    }
    n.count = n.members.size();
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
  }

  void add_to_ancestors(int id, const Matrix& r) {
    const double sq = r.squaredNorm();
    for (int cur = id; cur >= 0; cur = nodes_[static_cast<std::size_t>(cur)].parent) {
      Node& n = nodes_[static_cast<std::size_t>(cur)];
      n.sum += r;
      n.sumSq += sq;
      ++n.count;
    }
  }

  /// Tentative 2-means split of a leaf, kept as replacement siblings or as
  /// children depending on the spread ratio.
  void try_split(int id, Placement& out) {
    const Node& leaf = node(id);
    if (leaf.members.size() < cfg_.minSplitSize) return;
    out.split = SplitOutcome::discarded;
    std::vector<const Matrix*> pts;
    for (std::size_t m : leaf.members) pts.push_back(&items_[m].R);
    const auto split = two_means(pts, cfg_.kmeansIters);
    if (split.sizes[0] < cfg_.minPartSize || split.sizes[1] < cfg_.minPartSize) return;
    const double whole = leaf.intra();
    if (!(whole > 0.0)) return;
    std::vector<std::size_t> parts[2];
    std::vector<const Matrix*> partPts[2];
    for (std::size_t i = 0; i < leaf.members.size(); ++i) {
      parts[split.assignment[i]].push_back(leaf.members[i]);
      partPts[split.assignment[i]].push_back(pts[i]);
    }
    const double ratio = (mean_spread(partPts[0]) + mean_spread(partPts[1])) / (2.0 * whole);
    out.ratio = ratio;
    if (cfg_.separationGate && joinCount_) {
      Matrix mu[2];
      for (int c = 0; c < 2; ++c) {
        mu[c] = Matrix::Zero(pts[0]->rows(), pts[0]->cols());
        for (const Matrix* q : partPts[c]) mu[c] += *q;
        mu[c] /= static_cast<double>(partPts[c].size());
      }
      if ((mu[0] - mu[1]).squaredNorm() <= cfg_.gamma * mean_join_distance()) return;
    }
    if (ratio <= cfg_.kRmv) {
      const int parent = leaf.parent;
      const int a = new_leaf(parent, parts[0]);
      const int b = new_leaf(parent, parts[1]);
      Node& old = nodes_[static_cast<std::size_t>(id)];
      old.alive = false;
      old.members.clear();
      auto& siblings = parent < 0 ? roots_ : nodes_[static_cast<std::size_t>(parent)].children;
      auto pos = std::find(siblings.begin(), siblings.end(), id);
      pos = siblings.erase(pos);
      siblings.insert(pos, {a, b});
      out.split = SplitOutcome::replaced;
      out.created = {a, b};
    } else if (ratio <= cfg_.kClust) {
      const int a = new_leaf(id, parts[0]);
      const int b = new_leaf(id, parts[1]);
      Node& n = nodes_[static_cast<std::size_t>(id)];
      n.members.clear();
      n.children = {a, b};
      out.split = SplitOutcome::children;
      out.created = {a, b};
    }
  }

  nlohmann::json node_json(int id) const {
    const Node& n = node(id);
    const Matrix mean = n.mean();
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(mean.size()));
    for (Index r = 0; r < mean.rows(); ++r)
      for (Index c = 0; c < mean.cols(); ++c) flat.push_back(mean(r, c));
    nlohmann::json members = nlohmann::json::array();
    for (std::size_t m : n.members) members.push_back(items_[m].sourceId);
    nlohmann::json children = nlohmann::json::array();
    for (int c : n.children) children.push_back(node_json(c));
    return {{"id", n.id},
            {"count", n.count},
            {"intra", n.intra()},
            {"mean", {{"rows", mean.rows()}, {"cols", mean.cols()}, {"data", flat}}},
            {"members", members},
            {"children", children}};
  }

  ClusterConfig cfg_;
  std::vector<Node> nodes_;
  std::vector<int> roots_;
  std::vector<Item> items_;
  double joinSum_ = 0.0;
  std::size_t joinCount_ = 0;
};

/// Flat clusters of a serialized tree: member id -> top-level node id.
inline std::map<std::string, int> flat_clusters_from_json(const nlohmann::json& tree) {
  std::map<std::string, int> out;
  for (const auto& root : tree.at("roots")) {
    const int id = root.at("id").get<int>();
    std::vector<const nlohmann::json*> stack{&root};
    while (!stack.empty()) {
      const auto* n = stack.back();
      stack.pop_back();
      for (const auto& m : n->at("members")) {
        if (!out.emplace(m.get<std::string>(), id).second)
          throw DataError("tree: member '" + m.get<std::string>() + "' appears more than once");
      }
      for (const auto& c : n->at("children")) stack.push_back(&c);
    }
  }
  return out;
}

}  // namespace mkdsc
