#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "isac/embed.hpp"

namespace isac {

struct ClusterConfig {
  int min_cluster_size = 5;  // paper scale uses 30
  int min_samples = 5;
  double cluster_selection_epsilon = 0.0;

  void validate() const {
    if (min_cluster_size < 2)
      throw std::invalid_argument("ClusterConfig: min_cluster_size must be >= 2");
    if (min_samples < 1)
      throw std::invalid_argument("ClusterConfig: min_samples must be >= 1");
    if (cluster_selection_epsilon != 0.0)
      throw std::invalid_argument(
          "ClusterConfig: only cluster_selection_epsilon = 0 is supported");
  }
};

/// Final labeling: every point carries a class in {0..L-1}; raw HDBSCAN
/// noise points are reassigned to the nearest labeled point and flagged.
struct ClusterModel {
  std::vector<int> labels;
  int L = 1;
  std::vector<std::vector<double>> medoids;  // per class, embedding coords
  std::vector<bool> noise_reassigned;
};

namespace detail {

inline constexpr double kLambdaCap = 1e12;

struct MstEdge {
  int u, v;
  double w;
};

/// Prim over the complete mutual-reachability graph, O(N^2).
inline std::vector<MstEdge> prim_mst(const std::vector<std::vector<double>>& d_mr) {
  const size_t n = d_mr.size();
  std::vector<char> in_tree(n, 0);
  std::vector<double> key(n, std::numeric_limits<double>::infinity());
  std::vector<int> parent(n, -1);
  key[0] = 0.0;
  std::vector<MstEdge> edges;
  for (size_t round = 0; round < n; ++round) {
    size_t best = n;
    for (size_t i = 0; i < n; ++i)
      if (!in_tree[i] && (best == n || key[i] < key[best])) best = i;
    in_tree[best] = 1;
    if (parent[best] >= 0)
      edges.push_back({parent[best], static_cast<int>(best), key[best]});
    for (size_t j = 0; j < n; ++j)
      if (!in_tree[j] && d_mr[best][j] < key[j]) {
        key[j] = d_mr[best][j];
        parent[j] = static_cast<int>(best);
      }
  }
  return edges;
}

}  // namespace detail

/// Mutual reachability distance matrix: max(core_a, core_b, d(a,b)) with
/// core = distance to the min_samples-th nearest other point.
inline std::vector<std::vector<double>> mutual_reachability(
    const std::vector<std::vector<double>>& coords, int min_samples) {
  const size_t n = coords.size();
  const size_t dim = coords.empty() ? 0 : coords[0].size();
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      double d = std::sqrt(detail::sq_dist(coords[i].data(), coords[j].data(), dim));
      dist[i][j] = dist[j][i] = d;
    }
  std::vector<double> core(n, 0.0);
  size_t k = std::min<size_t>(static_cast<size_t>(min_samples), n - 1);
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> ds;
    ds.reserve(n - 1);
    for (size_t j = 0; j < n; ++j)
      if (j != i) ds.push_back(dist[i][j]);
    std::nth_element(ds.begin(), ds.begin() + static_cast<long>(k - 1), ds.end());
    core[i] = ds[k - 1];
  }
  std::vector<std::vector<double>> mr(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j)
      if (i != j) mr[i][j] = std::max({core[i], core[j], dist[i][j]});
  return mr;
}

/// HDBSCAN: mutual-reachability MST, single-linkage hierarchy, condensed
/// tree at min_cluster_size, excess-of-mass cluster extraction, then
/// nearest-neighbor reassignment of noise points.
inline ClusterModel hdbscan(const std::vector<EmbeddingPoint>& points,
                            const ClusterConfig& cfg) {
  cfg.validate();
  const size_t n = points.size();
  ClusterModel model;
  model.labels.assign(n, 0);
  model.noise_reassigned.assign(n, false);

  auto finish_single = [&]() {
    model.L = 1;
    std::fill(model.labels.begin(), model.labels.end(), 0);
    std::fill(model.noise_reassigned.begin(), model.noise_reassigned.end(), false);
    model.medoids.clear();
    if (n > 0) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      const size_t dim = points[0].coords.size();
      for (size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < n; ++j)
          acc += std::sqrt(detail::sq_dist(points[i].coords.data(), points[j].coords.data(), dim));
        if (acc < best) {
          best = acc;
          arg = static_cast<int>(i);
        }
      }
      model.medoids.push_back(points[static_cast<size_t>(arg)].coords);
    }
    return model;
  };

  if (n < static_cast<size_t>(cfg.min_cluster_size) || n < 2) return finish_single();

  std::vector<std::vector<double>> coords(n);
  for (size_t i = 0; i < n; ++i) coords[i] = points[i].coords;
  auto mr = mutual_reachability(coords, cfg.min_samples);
  auto mst = detail::prim_mst(mr);
  std::sort(mst.begin(), mst.end(), [](const detail::MstEdge& a, const detail::MstEdge& b) {
    if (a.w != b.w) return a.w < b.w;
    return a.u != b.u ? a.u < b.u : a.v < b.v;
  });

  // Single-linkage hierarchy: leaves 0..n-1, internal nodes n..2n-2.
  const size_t total_nodes = 2 * n - 1;
  std::vector<int> left(total_nodes, -1), right(total_nodes, -1);
  std::vector<double> height(total_nodes, 0.0);
  std::vector<int> size(total_nodes, 1);
  std::vector<int> uf_parent(total_nodes);
  std::iota(uf_parent.begin(), uf_parent.end(), 0);
  std::vector<int> top(total_nodes);  // current top hierarchy node of a component
  std::iota(top.begin(), top.end(), 0);
  std::function<int(int)> find = [&](int a) {
    while (uf_parent[static_cast<size_t>(a)] != a) {
      uf_parent[static_cast<size_t>(a)] = uf_parent[static_cast<size_t>(uf_parent[static_cast<size_t>(a)])];
      a = uf_parent[static_cast<size_t>(a)];
    }
    return a;
  };
  int next_node = static_cast<int>(n);
  for (const auto& e : mst) {
    int ra = find(e.u), rb = find(e.v);
    int node = next_node++;
    left[static_cast<size_t>(node)] = top[static_cast<size_t>(ra)];
    right[static_cast<size_t>(node)] = top[static_cast<size_t>(rb)];
    height[static_cast<size_t>(node)] = e.w;
    size[static_cast<size_t>(node)] = size[static_cast<size_t>(top[static_cast<size_t>(ra)])] +
                                      size[static_cast<size_t>(top[static_cast<size_t>(rb)])];
    uf_parent[static_cast<size_t>(ra)] = rb;
    top[static_cast<size_t>(rb)] = node;
  }
  const int root = next_node - 1;

  // Condensed tree.
  struct Condensed {
    double birth_lambda = 0.0;
    std::vector<std::pair<int, double>> fallouts;  // (point, lambda at exit)
    std::vector<int> children;
    int parent = -1;
  };
  std::vector<Condensed> cond;
  cond.push_back({0.0, {}, {}, -1});
  auto lambda_of = [&](double dist) {
    return dist > 0.0 ? std::min(1.0 / dist, detail::kLambdaCap) : detail::kLambdaCap;
  };
  auto collect_leaves = [&](int node, std::vector<int>& out) {
    std::vector<int> stack{node};
    while (!stack.empty()) {
      int cur = stack.back();
      stack.pop_back();
      if (cur < static_cast<int>(n)) {
        out.push_back(cur);
      } else {
        stack.push_back(left[static_cast<size_t>(cur)]);
        stack.push_back(right[static_cast<size_t>(cur)]);
      }
    }
  };
  {
    std::vector<std::pair<int, int>> stack{{root, 0}};  // (hierarchy node, condensed id)
    while (!stack.empty()) {
      auto [node, cid] = stack.back();
      stack.pop_back();
      double lam = lambda_of(height[static_cast<size_t>(node)]);
      int l = left[static_cast<size_t>(node)], r = right[static_cast<size_t>(node)];
      int sl = size[static_cast<size_t>(l)], sr = size[static_cast<size_t>(r)];
      bool l_big = sl >= cfg.min_cluster_size, r_big = sr >= cfg.min_cluster_size;
      if (l_big && r_big) {
        for (int child : {l, r}) {
          int new_id = static_cast<int>(cond.size());
          cond.push_back({lam, {}, {}, cid});
          cond[static_cast<size_t>(cid)].children.push_back(new_id);
          if (child >= static_cast<int>(n)) stack.emplace_back(child, new_id);
          // A hierarchy leaf cannot reach min_cluster_size >= 2 on its own.
        }
      } else {
        for (int child : {l, r}) {
          int sz = size[static_cast<size_t>(child)];
          if (sz >= cfg.min_cluster_size) {
            stack.emplace_back(child, cid);  // same condensed cluster continues
          } else {
            std::vector<int> pts;
            collect_leaves(child, pts);
            for (int p : pts)
              cond[static_cast<size_t>(cid)].fallouts.emplace_back(p, lam);
          }
        }
      }
    }
  }

  // Stability and excess-of-mass selection (root excluded).
  const size_t nc = cond.size();
  std::vector<double> stability(nc, 0.0);
  for (size_t c = 0; c < nc; ++c) {
    double birth = cond[c].birth_lambda;
    for (const auto& [p, lam] : cond[c].fallouts) stability[c] += lam - birth;
    for (int ch : cond[c].children) {
      // Points surviving into a child exit this cluster at the child's birth.
      std::vector<int> stack{ch};
      int child_points = 0;
      while (!stack.empty()) {
        int cur = stack.back();
        stack.pop_back();
        child_points += static_cast<int>(cond[static_cast<size_t>(cur)].fallouts.size());
        for (int g : cond[static_cast<size_t>(cur)].children) stack.push_back(g);
      }
      stability[c] += static_cast<double>(child_points) *
                      (cond[static_cast<size_t>(ch)].birth_lambda - birth);
    }
  }
  std::vector<char> selected(nc, 0);
  std::vector<double> subtree_value(nc, 0.0);
  for (size_t c = nc; c-- > 0;) {  // children have larger ids than parents
    if (cond[c].children.empty()) {
      selected[c] = 1;
      subtree_value[c] = stability[c];
      continue;
    }
    double child_sum = 0.0;
    for (int ch : cond[c].children) child_sum += subtree_value[static_cast<size_t>(ch)];
    if (c != 0 && stability[c] > child_sum) {
      selected[c] = 1;
      subtree_value[c] = stability[c];
    } else {
      subtree_value[c] = child_sum;
    }
  }
  // Keep only the highest selected cluster on each root path.
  std::vector<int> cluster_of(nc, -1);
  std::vector<int> chosen;
  {
    std::vector<std::pair<int, int>> stack{{0, -1}};  // (condensed id, owning chosen)
    while (!stack.empty()) {
      auto [c, owner] = stack.back();
      stack.pop_back();
      int own = owner;
      if (own < 0 && selected[static_cast<size_t>(c)] && c != 0) {
        own = static_cast<int>(chosen.size());
        chosen.push_back(c);
      }
      cluster_of[static_cast<size_t>(c)] = own;
      for (int ch : cond[static_cast<size_t>(c)].children) stack.emplace_back(ch, own);
    }
  }
  if (chosen.empty()) return finish_single();

  std::vector<int> raw(n, -1);
  for (size_t c = 0; c < nc; ++c)
    if (cluster_of[c] >= 0)
      for (const auto& [p, lam] : cond[c].fallouts) raw[static_cast<size_t>(p)] = cluster_of[c];

  // Label indices by descending cluster size; stable tie-break by first point.
  std::vector<int> counts(chosen.size(), 0);
  std::vector<int> first_point(chosen.size(), static_cast<int>(n));
  for (size_t p = 0; p < n; ++p)
    if (raw[p] >= 0) {
      ++counts[static_cast<size_t>(raw[p])];
      first_point[static_cast<size_t>(raw[p])] =
          std::min(first_point[static_cast<size_t>(raw[p])], static_cast<int>(p));
    }
  std::vector<int> order(chosen.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (counts[static_cast<size_t>(a)] != counts[static_cast<size_t>(b)])
      return counts[static_cast<size_t>(a)] > counts[static_cast<size_t>(b)];
    return first_point[static_cast<size_t>(a)] < first_point[static_cast<size_t>(b)];
  });
  std::vector<int> relabel(chosen.size());
  for (size_t r = 0; r < order.size(); ++r) relabel[static_cast<size_t>(order[r])] = static_cast<int>(r);

  model.L = static_cast<int>(chosen.size());
  const size_t dim = points[0].coords.size();
  for (size_t p = 0; p < n; ++p) {
    if (raw[p] >= 0) {
      model.labels[p] = relabel[static_cast<size_t>(raw[p])];
    } else {
      double best = std::numeric_limits<double>::infinity();
      int arg = -1;
      for (size_t q = 0; q < n; ++q) {
        if (raw[q] < 0) continue;
        double d = detail::sq_dist(points[p].coords.data(), points[q].coords.data(), dim);
        if (d < best) {
          best = d;
          arg = static_cast<int>(q);
        }
      }
      model.labels[p] = relabel[static_cast<size_t>(raw[static_cast<size_t>(arg)])];
      model.noise_reassigned[p] = true;
    }
  }

  model.medoids.assign(static_cast<size_t>(model.L), {});
  for (int cl = 0; cl < model.L; ++cl) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (size_t i = 0; i < n; ++i) {
      if (model.labels[i] != cl) continue;
      double acc = 0.0;
      for (size_t j = 0; j < n; ++j)
        if (model.labels[j] == cl)
          acc += std::sqrt(detail::sq_dist(points[i].coords.data(), points[j].coords.data(), dim));
      if (acc < best) {
        best = acc;
        arg = static_cast<int>(i);
      }
    }
    model.medoids[static_cast<size_t>(cl)] = points[static_cast<size_t>(arg)].coords;
  }
  return model;
}

inline void write_labels_csv(const std::vector<EmbeddingPoint>& points,
                             const ClusterModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "instance_id,class,noise_reassigned\n";
  for (size_t i = 0; i < points.size(); ++i)
    f << points[i].instance_id << ',' << model.labels[i] << ','
      << (model.noise_reassigned[i] ? 1 : 0) << '\n';
}

}  // namespace isac
