#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "isac/features.hpp"
#include "isac/rng.hpp"

namespace isac {

struct EmbedConfig {
  int n_neighbors = 30;
  double min_dist = 0.0;
  int n_components = 3;
  int epochs = 500;
  double learning_rate = 1.0;
  int negative_samples = 5;
  uint64_t seed = 0;
};

struct EmbeddingPoint {
  std::string instance_id;
  std::vector<double> coords;
};

namespace detail {

inline double sq_dist(const double* a, const double* b, size_t dim) {
  double acc = 0.0;
  for (size_t d = 0; d < dim; ++d) {
    double t = a[d] - b[d];
    acc += t * t;
  }
  return acc;
}

/// Least-squares fit of the layout curve 1/(1 + a d^{2b}) to the
/// membership target exp(-(d - min_dist)) (1 below min_dist) on a grid.
/// Coarse grid search refined twice; deterministic.
inline std::pair<double, double> fit_ab(double min_dist) {
  min_dist = std::max(min_dist, 1e-3);  // closed-form limit at the 0 singularity
  const int grid_n = 300;
  std::vector<double> xs(grid_n), ys(grid_n);
  for (int i = 0; i < grid_n; ++i) {
    double d = 3.0 * (static_cast<double>(i) + 0.5) / grid_n;
    xs[static_cast<size_t>(i)] = d;
    ys[static_cast<size_t>(i)] = d <= min_dist ? 1.0 : std::exp(-(d - min_dist));
  }
  auto sse = [&](double a, double b) {
    double acc = 0.0;
    for (int i = 0; i < grid_n; ++i) {
      double f = 1.0 / (1.0 + a * std::pow(xs[static_cast<size_t>(i)], 2.0 * b));
      double r = f - ys[static_cast<size_t>(i)];
      acc += r * r;
    }
    return acc;
  };
  double best_a = 1.0, best_b = 1.0, best = sse(1.0, 1.0);
  double alo = 0.2, ahi = 5.0, blo = 0.2, bhi = 2.5;
  for (int round = 0; round < 3; ++round) {
    const int steps = 40;
    double na = best_a, nb = best_b;
    for (int ia = 0; ia <= steps; ++ia)
      for (int ib = 0; ib <= steps; ++ib) {
        double a = alo + (ahi - alo) * ia / steps;
        double b = blo + (bhi - blo) * ib / steps;
        double s = sse(a, b);
        if (s < best) {
          best = s;
          na = a;
          nb = b;
        }
      }
    best_a = na;
    best_b = nb;
    double aw = (ahi - alo) / steps, bw = (bhi - blo) / steps;
    alo = std::max(1e-3, best_a - 2 * aw);
    ahi = best_a + 2 * aw;
    blo = std::max(1e-3, best_b - 2 * bw);
    bhi = best_b + 2 * bw;
  }
  return {best_a, best_b};
}

/// Solves sigma so that sum_j exp(-max(0, d_j - rho)/sigma) = log2(k).
inline double smooth_knn_sigma(const std::vector<double>& dists, double rho,
                               double target) {
  auto weight_sum = [&](double sigma) {
    double acc = 0.0;
    for (double d : dists) acc += std::exp(-std::max(0.0, d - rho) / sigma);
    return acc;
  };
  double lo = 1e-12, hi = 1.0;
  for (int i = 0; i < 64 && weight_sum(hi) < target; ++i) hi *= 2.0;
  if (weight_sum(hi) < target) return hi;     // unreachable target: flat tail
  if (weight_sum(lo) >= target) return lo;    // all neighbors at rho
  for (int i = 0; i < 100; ++i) {
    double mid = 0.5 * (lo + hi);
    if (weight_sum(mid) < target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-12) break;
  }
  return hi;
}

}  // namespace detail

struct FuzzyEdge {
  int i, j;
  double w;
};

/// Exact k-NN fuzzy simplicial set: per-point membership weights
/// w_ij = exp(-max(0, d_ij - rho_i)/sigma_i) with rho_i the nearest
/// distance and sigma_i solved so the weights sum to log2(k), then
/// symmetrized w + w^T - w.w^T.
inline std::vector<FuzzyEdge> fuzzy_neighbor_graph(
    const std::vector<std::vector<double>>& rows, int n_neighbors) {
  const size_t n = rows.size();
  const size_t dim = rows.empty() ? 0 : rows[0].size();
  const size_t k = static_cast<size_t>(n_neighbors);
  if (k < 2 || k >= n)
    throw std::invalid_argument("fuzzy_neighbor_graph: need 2 <= n_neighbors < rows");
  std::vector<std::vector<std::pair<double, int>>> knn(n);
  for (size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> ds;
    ds.reserve(n - 1);
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      ds.emplace_back(std::sqrt(detail::sq_dist(rows[i].data(), rows[j].data(), dim)),
                      static_cast<int>(j));
    }
    std::partial_sort(ds.begin(), ds.begin() + static_cast<long>(k), ds.end());
    knn[i].assign(ds.begin(), ds.begin() + static_cast<long>(k));
  }
  // Directed membership weights.
  std::vector<std::vector<double>> w(n, std::vector<double>(k, 0.0));
  const double target = std::log2(static_cast<double>(k));
  for (size_t i = 0; i < n; ++i) {
    double rho = knn[i][0].first;
    std::vector<double> dists(k);
    for (size_t t = 0; t < k; ++t) dists[t] = knn[i][t].first;
    double sigma = detail::smooth_knn_sigma(dists, rho, target);
    for (size_t t = 0; t < k; ++t)
      w[i][t] = std::exp(-std::max(0.0, dists[t] - rho) / sigma);
  }
  // Symmetrize over the union of directed edges: canonicalize each pair
  // (u < v) with its forward/backward weights, then w + w^T - w.w^T.
  struct DirEdge {
    int u, v;
    double fwd, bwd;
  };
  std::vector<DirEdge> pairs;
  pairs.reserve(n * k);
  for (size_t i = 0; i < n; ++i)
    for (size_t t = 0; t < k; ++t) {
      int j = knn[i][t].second;
      if (static_cast<int>(i) < j)
        pairs.push_back({static_cast<int>(i), j, w[i][t], 0.0});
      else
        pairs.push_back({j, static_cast<int>(i), 0.0, w[i][t]});
    }
  std::sort(pairs.begin(), pairs.end(), [](const DirEdge& a, const DirEdge& b) {
    return a.u != b.u ? a.u < b.u : a.v < b.v;
  });
  std::vector<FuzzyEdge> edges;
  for (size_t p = 0; p < pairs.size();) {
    size_t q = p;
    double fwd = 0.0, bwd = 0.0;
    while (q < pairs.size() && pairs[q].u == pairs[p].u && pairs[q].v == pairs[p].v) {
      fwd += pairs[q].fwd;
      bwd += pairs[q].bwd;
      ++q;
    }
    double sym = fwd + bwd - fwd * bwd;
    if (sym > 0.0) edges.push_back({pairs[p].u, pairs[p].v, sym});
    p = q;
  }
  return edges;
}

/// Projects standardized features to cfg.n_components dimensions:
/// fuzzy neighbor graph, random init in [-10,10], then negative-sampling
/// SGD on the cross-entropy layout objective. Single-threaded and
/// deterministic per seed.
inline std::vector<EmbeddingPoint> embed(const std::vector<FeatureVector>& corpus,
                                         const EmbedConfig& cfg) {
  const size_t n = corpus.size();
  if (static_cast<int>(n) <= cfg.n_neighbors)
    throw std::invalid_argument("embed: corpus rows must exceed n_neighbors");
  std::vector<std::vector<double>> rows(n);
  for (size_t i = 0; i < n; ++i)
    rows[i].assign(corpus[i].values.begin(), corpus[i].values.end());
  auto edges = fuzzy_neighbor_graph(rows, cfg.n_neighbors);
  auto [a, b] = detail::fit_ab(cfg.min_dist);
  const size_t dim = static_cast<size_t>(cfg.n_components);

  Rng rng(cfg.seed);
  std::vector<double> y(n * dim);
  for (auto& v : y) v = rng.uniform(-10.0, 10.0);

  double max_w = 0.0;
  for (const auto& e : edges) max_w = std::max(max_w, e.w);
  // Edge e is processed every max_w / w_e epochs, so the strongest edge is
  // updated each epoch and weaker ones proportionally less often.
  std::vector<double> epochs_per_sample(edges.size());
  std::vector<double> next_due(edges.size());
  for (size_t e = 0; e < edges.size(); ++e) {
    epochs_per_sample[e] = max_w / edges[e].w;
    next_due[e] = epochs_per_sample[e];
  }
  auto clamp4 = [](double v) { return std::max(-4.0, std::min(4.0, v)); };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double alpha = cfg.learning_rate *
                   (1.0 - static_cast<double>(epoch - 1) / static_cast<double>(cfg.epochs));
    for (size_t e = 0; e < edges.size(); ++e) {
      if (next_due[e] > static_cast<double>(epoch)) continue;
      double* yi = &y[static_cast<size_t>(edges[e].i) * dim];
      double* yj = &y[static_cast<size_t>(edges[e].j) * dim];
      double d2 = detail::sq_dist(yi, yj, dim);
      if (d2 > 0.0) {
        double coef = -2.0 * a * b * std::pow(d2, b - 1.0) / (1.0 + a * std::pow(d2, b));
        for (size_t d = 0; d < dim; ++d) {
          double g = clamp4(coef * (yi[d] - yj[d]));
          yi[d] += alpha * g;
          yj[d] -= alpha * g;
        }
      }
      next_due[e] += epochs_per_sample[e];
      for (int neg = 0; neg < cfg.negative_samples; ++neg) {
        size_t t = rng.index(n);
        if (t == static_cast<size_t>(edges[e].i)) continue;
        double* yt = &y[t * dim];
        double nd2 = detail::sq_dist(yi, yt, dim);
        if (nd2 <= 0.0) continue;
        double coef = 2.0 * b / ((0.001 + nd2) * (1.0 + a * std::pow(nd2, b)));
        for (size_t d = 0; d < dim; ++d) {
          double g = clamp4(coef * (yi[d] - yt[d]));
          yi[d] += alpha * g;
        }
      }
    }
  }

  std::vector<EmbeddingPoint> out(n);
  for (size_t i = 0; i < n; ++i) {
    out[i].instance_id = corpus[i].instance_id;
    out[i].coords.assign(y.begin() + static_cast<long>(i * dim),
                         y.begin() + static_cast<long>((i + 1) * dim));
  }
  return out;
}

/// Standard trustworthiness statistic in [0,1]: penalizes low-dimensional
/// neighbors that were not high-dimensional neighbors, weighted by their
/// high-dimensional rank beyond k.
inline double trustworthiness(const std::vector<std::vector<double>>& high,
                              const std::vector<std::vector<double>>& low, int k) {
  const size_t n = high.size();
  if (low.size() != n) throw std::invalid_argument("trustworthiness: row count mismatch");
  if (k < 1 || static_cast<size_t>(k) >= n)
    throw std::invalid_argument("trustworthiness: need 1 <= k < rows");
  const size_t kk = static_cast<size_t>(k);
  auto neighbor_order = [](const std::vector<std::vector<double>>& rows, size_t i) {
    std::vector<std::pair<double, size_t>> ds;
    const size_t dim = rows[0].size();
    for (size_t j = 0; j < rows.size(); ++j) {
      if (j == i) continue;
      ds.emplace_back(detail::sq_dist(rows[i].data(), rows[j].data(), dim), j);
    }
    std::sort(ds.begin(), ds.end());
    return ds;
  };
  double penalty = 0.0;
  for (size_t i = 0; i < n; ++i) {
    auto horder = neighbor_order(high, i);
    auto lorder = neighbor_order(low, i);
    std::vector<size_t> hrank(n, 0);  // 1-based rank in high space
    for (size_t r = 0; r < horder.size(); ++r) hrank[horder[r].second] = r + 1;
    std::vector<char> in_high(n, 0);
    for (size_t r = 0; r < kk; ++r) in_high[horder[r].second] = 1;
    for (size_t r = 0; r < kk; ++r) {
      size_t j = lorder[r].second;
      if (!in_high[j])
        penalty += static_cast<double>(hrank[j]) - static_cast<double>(kk);
    }
  }
  double nn = static_cast<double>(n), kd = static_cast<double>(kk);
  return 1.0 - 2.0 / (nn * kd * (2.0 * nn - 3.0 * kd - 1.0)) * penalty;
}

inline void write_embedding_csv(const std::vector<EmbeddingPoint>& pts,
                                const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "instance_id,x,y,z\n";
  for (const auto& p : pts) {
    f << p.instance_id;
    for (double c : p.coords) f << ',' << format_double(c);
    for (size_t d = p.coords.size(); d < 3; ++d) f << ",0";
    f << '\n';
  }
}

}  // namespace isac
