#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "isac/bqp.hpp"
#include "isac/rng.hpp"
#include "json.hpp"

namespace isac {

/// Attributed undirected graph of one instance. Node features:
/// (tanh-normalized diagonal, degree, constraint-participation count);
/// edge feature: tanh-normalized off-diagonal value. No stored self-loops.
struct InstanceGraph {
  std::string instance_id;
  int node_count = 0;
  std::vector<std::array<double, 3>> node_features;
  struct Edge {
    int u, v;  // u < v
    double w;
  };
  std::vector<Edge> edges;
  int label = -1;  // -1 = absent
};

struct SampledGraph {
  std::string parent_id;
  std::vector<int> kept_nodes;  // ascending parent indices
  InstanceGraph graph;          // induced; features copied from the parent
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Node i carries (tanh(Q_ii / median |diag|), degree(i), #constraints
/// touching i); medians are over nonzero magnitudes with divisor 1 when
/// all entries vanish.
inline InstanceGraph to_graph(const BqpInstance& inst, int label = -1) {
  InstanceGraph g;
  g.instance_id = inst.id;
  g.node_count = inst.n;
  g.label = label;
  std::vector<double> diag(static_cast<size_t>(inst.n), 0.0);
  std::vector<double> abs_diag, abs_off;
  for (const auto& e : inst.q) {
    if (e.i == e.j) {
      diag[static_cast<size_t>(e.i)] = e.v;
      if (e.v != 0.0) abs_diag.push_back(std::fabs(e.v));
    } else if (e.v != 0.0) {
      abs_off.push_back(std::fabs(e.v));
    }
  }
  double mad = abs_diag.empty() ? 1.0 : detail::median_of(abs_diag);
  double mao = abs_off.empty() ? 1.0 : detail::median_of(abs_off);
  std::vector<int> degree(static_cast<size_t>(inst.n), 0);
  for (const auto& e : inst.q)
    if (e.i != e.j && e.v != 0.0) {
      g.edges.push_back({e.i, e.j, std::tanh(e.v / mao)});
      ++degree[static_cast<size_t>(e.i)];
      ++degree[static_cast<size_t>(e.j)];
    }
  std::sort(g.edges.begin(), g.edges.end(), [](const auto& a, const auto& b) {
    return a.u != b.u ? a.u < b.u : a.v < b.v;
  });
  std::vector<int> participation(static_cast<size_t>(inst.n), 0);
  for (const auto& e : inst.a)
    if (e.v != 0.0) ++participation[static_cast<size_t>(e.j)];
  g.node_features.resize(static_cast<size_t>(inst.n));
  for (int i = 0; i < inst.n; ++i)
    g.node_features[static_cast<size_t>(i)] = {
        std::tanh(diag[static_cast<size_t>(i)] / mad),
        static_cast<double>(degree[static_cast<size_t>(i)]),
        static_cast<double>(participation[static_cast<size_t>(i)])};
  return g;
}

/// `count` independent samples of ceil(rate * n) nodes without
/// replacement; induced edges only where both endpoints survive. Node
/// features are copied from the parent, so degree keeps the parent-size
/// signal. Deterministic per (seed, sample index).
inline std::vector<SampledGraph> sample_nodes(const InstanceGraph& g, double rate = 0.10,
                                              int count = 20, uint64_t seed = 0) {
  if (g.node_count < 1) throw std::invalid_argument("sample_nodes: empty graph");
  if (!(rate > 0.0) || rate > 1.0)
    throw std::invalid_argument("sample_nodes: rate must be in (0,1]");
  const size_t n = static_cast<size_t>(g.node_count);
  const size_t keep = std::min(
      n, static_cast<size_t>(std::max(
             1.0, std::ceil(rate * static_cast<double>(n) - 1e-9))));
  std::vector<SampledGraph> out;
  out.reserve(static_cast<size_t>(count));
  std::vector<int> pool(n);
  for (int s = 0; s < count; ++s) {
    Rng rng(hash_combine(seed, static_cast<uint64_t>(s)));
    std::iota(pool.begin(), pool.end(), 0);
    for (size_t i = 0; i < keep; ++i) {
      size_t j = i + rng.index(n - i);
      std::swap(pool[i], pool[j]);
    }
    SampledGraph sg;
    sg.parent_id = g.instance_id;
    sg.kept_nodes.assign(pool.begin(), pool.begin() + static_cast<long>(keep));
    std::sort(sg.kept_nodes.begin(), sg.kept_nodes.end());
    std::vector<int> remap(n, -1);
    for (size_t i = 0; i < keep; ++i)
      remap[static_cast<size_t>(sg.kept_nodes[i])] = static_cast<int>(i);
    auto& ind = sg.graph;
    ind.instance_id = g.instance_id;
    ind.node_count = static_cast<int>(keep);
    ind.label = g.label;
    ind.node_features.resize(keep);
    for (size_t i = 0; i < keep; ++i)
      ind.node_features[i] = g.node_features[static_cast<size_t>(sg.kept_nodes[i])];
    for (const auto& e : g.edges) {
      int u = remap[static_cast<size_t>(e.u)], v = remap[static_cast<size_t>(e.v)];
      if (u >= 0 && v >= 0) ind.edges.push_back({std::min(u, v), std::max(u, v), e.w});
    }
    out.push_back(std::move(sg));
  }
  return out;
}

struct DatasetSplit {
  std::vector<int> train;       // indices into the input graph list
  std::vector<int> validation;
};

/// Class balancing to at most balance_factor x the smallest class, then a
/// stratified train/validation split. Deterministic per seed.
inline DatasetSplit build_dataset(const std::vector<InstanceGraph>& graphs,
                                  double balance_factor = 1.2,
                                  double train_fraction = 0.9, uint64_t seed = 0) {
  if (graphs.empty()) throw std::invalid_argument("build_dataset: empty graph list");
  int num_classes = 0;
  for (const auto& g : graphs) {
    if (g.label < 0) throw std::invalid_argument("build_dataset: unlabeled graph");
    num_classes = std::max(num_classes, g.label + 1);
  }
  std::vector<std::vector<int>> members(static_cast<size_t>(num_classes));
  for (size_t i = 0; i < graphs.size(); ++i)
    members[static_cast<size_t>(graphs[i].label)].push_back(static_cast<int>(i));
  size_t smallest = graphs.size();
  for (int c = 0; c < num_classes; ++c) {
    if (members[static_cast<size_t>(c)].empty())
      throw std::invalid_argument("build_dataset: class " + std::to_string(c) + " is empty");
    smallest = std::min(smallest, members[static_cast<size_t>(c)].size());
  }
  const size_t cap = static_cast<size_t>(
      std::llround(balance_factor * static_cast<double>(smallest)));
  Rng rng(seed);
  DatasetSplit split;
  for (int c = 0; c < num_classes; ++c) {
    auto& m = members[static_cast<size_t>(c)];
    rng.shuffle(m);
    size_t kept = std::min(m.size(), cap);
    size_t n_train = static_cast<size_t>(
        std::llround(train_fraction * static_cast<double>(kept)));
    if (kept >= 2) n_train = std::min(n_train, kept - 1);  // keep validation nonempty
    n_train = std::max<size_t>(n_train, kept >= 2 ? 1 : kept);
    for (size_t i = 0; i < kept; ++i)
      (i < n_train ? split.train : split.validation).push_back(m[i]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Graph file format: {nodes: [[f1,f2,f3]...], edges: [[i,j,w]...], label}
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const InstanceGraph& g) {
  nlohmann::json j;
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (const auto& f : g.node_features) nodes.push_back({f[0], f[1], f[2]});
  auto& edges = j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges) edges.push_back({e.u, e.v, e.w});
  if (g.label >= 0) j["label"] = g.label;
  j["id"] = g.instance_id;
  return j;
}

inline InstanceGraph graph_from_json(const nlohmann::json& j) {
  InstanceGraph g;
  g.instance_id = j.value("id", std::string{});
  for (const auto& f : j.at("nodes"))
    g.node_features.push_back({f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>()});
  g.node_count = static_cast<int>(g.node_features.size());
  for (const auto& e : j.at("edges"))
    g.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()});
  g.label = j.value("label", -1);
  return g;
}

}  // namespace isac
