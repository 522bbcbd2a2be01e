#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "isac/rng.hpp"
#include "json.hpp"

namespace isac {

enum class ProblemTag { QKP, TSP, MIXED };

inline const char* to_string(ProblemTag t) {
  switch (t) {
    case ProblemTag::QKP: return "QKP";
    case ProblemTag::TSP: return "TSP";
    default: return "MIXED";
  }
}

inline ProblemTag problem_tag_from(const std::string& s) {
  if (s == "QKP") return ProblemTag::QKP;
  if (s == "TSP") return ProblemTag::TSP;
  if (s == "MIXED") return ProblemTag::MIXED;
  throw std::invalid_argument("unknown problem_tag: " + s);
}

/// One stored entry of the upper triangle of Q (i <= j).
struct QEntry {
  int i, j;
  double v;
};

/// One stored entry of the constraint matrix A.
struct AEntry {
  int k, j;  // row, column
  double v;
};

using BitVec = std::vector<uint8_t>;

/// Binary quadratic program: minimize x^T Q x + c0 subject to A x <= b,
/// x in {0,1}^n. Q is symmetric with only the upper triangle stored;
/// off-diagonal entries count twice in the objective (full-matrix
/// convention). c0 is a constant carried by penalty reformulations.
struct BqpInstance {
  std::string id;
  int n = 0;
  int m = 0;
  std::vector<QEntry> q;  // upper triangle incl. diagonal, unique coords
  std::vector<AEntry> a;
  std::vector<double> b;
  double c0 = 0.0;
  ProblemTag tag = ProblemTag::MIXED;

  void validate() const {
    if (n < 1) throw std::invalid_argument(id + ": n must be >= 1");
    if (m < 0 || static_cast<int>(b.size()) != m)
      throw std::invalid_argument(id + ": b size must equal m");
    std::vector<std::pair<int, int>> seen;
    seen.reserve(q.size());
    for (const auto& e : q) {
      if (e.i < 0 || e.j < e.i || e.j >= n)
        throw std::invalid_argument(id + ": Q entry out of range or lower triangle");
      if (!std::isfinite(e.v)) throw std::invalid_argument(id + ": non-finite Q entry");
      seen.emplace_back(e.i, e.j);
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
      throw std::invalid_argument(id + ": duplicate Q coordinate");
    std::vector<char> row_nonzero(static_cast<size_t>(std::max(m, 0)), 0);
    for (const auto& e : a) {
      if (e.k < 0 || e.k >= m || e.j < 0 || e.j >= n)
        throw std::invalid_argument(id + ": A entry out of range");
      if (!std::isfinite(e.v)) throw std::invalid_argument(id + ": non-finite A entry");
      if (e.v != 0.0) row_nonzero[static_cast<size_t>(e.k)] = 1;
    }
    for (int k = 0; k < m; ++k) {
      if (!row_nonzero[static_cast<size_t>(k)])
        throw std::invalid_argument(id + ": all-zero constraint row " + std::to_string(k));
      if (!std::isfinite(b[static_cast<size_t>(k)]))
        throw std::invalid_argument(id + ": non-finite b entry");
    }
    if (!std::isfinite(c0)) throw std::invalid_argument(id + ": non-finite c0");
  }
};

/// A candidate assignment with its objective value and feasibility flag.
struct Solution {
  BitVec x;
  double cost = 0.0;
  bool feasible = false;
};

/// x^T Q x + c0 with off-diagonals counted twice. Single summation path;
/// everything that reports costs goes through here.
inline double evaluate_objective(const BqpInstance& inst, const BitVec& x) {
  if (static_cast<int>(x.size()) != inst.n)
    throw std::invalid_argument("evaluate_objective: x has length " +
                                std::to_string(x.size()) + ", expected " +
                                std::to_string(inst.n));
  double acc = 0.0;
  for (const auto& e : inst.q) {
    if (!x[static_cast<size_t>(e.i)] || !x[static_cast<size_t>(e.j)]) continue;
    acc += (e.i == e.j) ? e.v : 2.0 * e.v;
  }
  return acc + inst.c0;
}

/// Returns (feasible, total violation), violation = sum_k max(0, (Ax-b)_k).
inline std::pair<bool, double> check_feasibility(const BqpInstance& inst,
                                                 const BitVec& x) {
  if (static_cast<int>(x.size()) != inst.n)
    throw std::invalid_argument("check_feasibility: x has length " +
                                std::to_string(x.size()) + ", expected " +
                                std::to_string(inst.n));
  std::vector<double> ax(static_cast<size_t>(inst.m), 0.0);
  for (const auto& e : inst.a)
    if (x[static_cast<size_t>(e.j)]) ax[static_cast<size_t>(e.k)] += e.v;
  double violation = 0.0;
  for (int k = 0; k < inst.m; ++k)
    violation += std::max(0.0, ax[static_cast<size_t>(k)] - inst.b[static_cast<size_t>(k)]);
  return {violation == 0.0, violation};
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Quadratic knapsack instance, converted to minimization.
///
/// Draw order (tests replay it): item profits p_i ~ U{1..100}, weights
/// w_i ~ U{1..50}, then for each pair i<j a Bernoulli(density) keep draw
/// followed (when kept) by a pair profit U{1..100}. Q_ii = -p_i and
/// Q_ij = -p_ij/2 so the doubled off-diagonal contributes -p_ij; capacity
/// is ceil(0.5 * sum w).
inline BqpInstance generate_qkp(int n, double density, uint64_t seed,
                                const std::string& id = "") {
  if (n < 2) throw std::invalid_argument("generate_qkp: n must be >= 2");
  if (!(density > 0.0) || density > 1.0)
    throw std::invalid_argument("generate_qkp: density must be in (0,1]");
  Rng rng(seed);
  BqpInstance inst;
  inst.id = id.empty() ? ("qkp_n" + std::to_string(n) + "_s" + std::to_string(seed)) : id;
  inst.n = n;
  inst.m = 1;
  inst.tag = ProblemTag::QKP;
  std::vector<long long> profit(static_cast<size_t>(n));
  std::vector<long long> weight(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) profit[static_cast<size_t>(i)] = rng.uniform_int(1, 100);
  for (int i = 0; i < n; ++i) weight[static_cast<size_t>(i)] = rng.uniform_int(1, 50);
  for (int i = 0; i < n; ++i)
    inst.q.push_back({i, i, -static_cast<double>(profit[static_cast<size_t>(i)])});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.bernoulli(density)) {
        double pij = static_cast<double>(rng.uniform_int(1, 100));
        inst.q.push_back({i, j, -pij / 2.0});
      }
  long long wsum = 0;
  for (long long w : weight) wsum += w;
  double capacity = std::ceil(0.5 * static_cast<double>(wsum));
  for (int i = 0; i < n; ++i)
    inst.a.push_back({0, i, static_cast<double>(weight[static_cast<size_t>(i)])});
  inst.b.push_back(capacity);
  inst.validate();
  return inst;
}

using Coord = std::array<double, 2>;

/// Uniform random city coordinates in the unit square.
inline std::vector<Coord> generate_tsp(int cities, uint64_t seed) {
  if (cities < 3) throw std::invalid_argument("generate_tsp: need at least 3 cities");
  Rng rng(seed);
  std::vector<Coord> pts(static_cast<size_t>(cities));
  for (auto& p : pts) {
    p[0] = rng.uniform();
    p[1] = rng.uniform();
  }
  return pts;
}

inline double euclid(const Coord& a, const Coord& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

/// Penalty large enough that every optimum of the QUBO is a valid tour.
inline double default_tsp_penalty(const std::vector<Coord>& coords) {
  double dmax = 0.0;
  for (size_t i = 0; i < coords.size(); ++i)
    for (size_t j = i + 1; j < coords.size(); ++j)
      dmax = std::max(dmax, euclid(coords[i], coords[j]));
  return 2.0 * dmax * static_cast<double>(coords.size());
}

/// Permutation-matrix QUBO over x_{c,t} (variable index c*C + t):
/// tour-length couplings between consecutive time slots plus
/// penalty * sum of (row one-hot)^2 and (column one-hot)^2 terms.
/// The expansion's constant 2*C*penalty is carried in c0, so a valid tour
/// evaluates to exactly its tour length and all-zeros to the penalty
/// constants alone.
inline BqpInstance tsp_to_bqp(const std::vector<Coord>& coords, double penalty,
                              const std::string& id = "") {
  const int C = static_cast<int>(coords.size());
  if (C < 3) throw std::invalid_argument("tsp_to_bqp: need at least 3 cities");
  if (!(penalty > 0.0)) throw std::invalid_argument("tsp_to_bqp: penalty must be > 0");
  BqpInstance inst;
  inst.id = id.empty() ? ("tsp_c" + std::to_string(C)) : id;
  inst.n = C * C;
  inst.m = 0;
  inst.tag = ProblemTag::TSP;
  auto vid = [C](int c, int t) { return c * C + t; };
  // Accumulate upper-triangle coefficients, then emit sorted unique entries.
  std::vector<std::vector<std::pair<int, double>>> rows(static_cast<size_t>(inst.n));
  auto add = [&](int u, int v, double w) {
    if (u > v) std::swap(u, v);
    rows[static_cast<size_t>(u)].emplace_back(v, w);
  };
  for (int t = 0; t < C; ++t) {
    int t2 = (t + 1) % C;
    for (int c = 0; c < C; ++c)
      for (int c2 = 0; c2 < C; ++c2)
        if (c != c2) add(vid(c, t), vid(c2, t2), euclid(coords[static_cast<size_t>(c)],
                                                        coords[static_cast<size_t>(c2)]) / 2.0);
  }
  for (int c = 0; c < C; ++c) {
    for (int t = 0; t < C; ++t) add(vid(c, t), vid(c, t), -penalty);
    for (int t = 0; t < C; ++t)
      for (int t2 = t + 1; t2 < C; ++t2) add(vid(c, t), vid(c, t2), penalty);
  }
  for (int t = 0; t < C; ++t) {
    for (int c = 0; c < C; ++c) add(vid(c, t), vid(c, t), -penalty);
    for (int c = 0; c < C; ++c)
      for (int c2 = c + 1; c2 < C; ++c2) add(vid(c, t), vid(c2, t), penalty);
  }
  for (int u = 0; u < inst.n; ++u) {
    auto& r = rows[static_cast<size_t>(u)];
    std::sort(r.begin(), r.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    for (size_t p = 0; p < r.size();) {
      size_t p2 = p;
      double w = 0.0;
      while (p2 < r.size() && r[p2].first == r[p].first) w += r[p2++].second;
      if (w != 0.0) inst.q.push_back({u, r[p].first, w});
      p = p2;
    }
  }
  inst.c0 = 2.0 * static_cast<double>(C) * penalty;
  inst.validate();
  return inst;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const BqpInstance& inst) {
  nlohmann::json j;
  j["id"] = inst.id;
  j["n"] = inst.n;
  j["m"] = inst.m;
  auto& q = j["q"] = nlohmann::json::array();
  for (const auto& e : inst.q) q.push_back({e.i, e.j, e.v});
  auto& a = j["a"] = nlohmann::json::array();
  for (const auto& e : inst.a) a.push_back({e.k, e.j, e.v});
  j["b"] = inst.b;
  j["problem_tag"] = to_string(inst.tag);
  if (inst.c0 != 0.0) j["c0"] = inst.c0;
  return j;
}

inline BqpInstance instance_from_json(const nlohmann::json& j) {
  BqpInstance inst;
  inst.id = j.at("id").get<std::string>();
  inst.n = j.at("n").get<int>();
  inst.m = j.at("m").get<int>();
  for (const auto& e : j.at("q"))
    inst.q.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()});
  for (const auto& e : j.at("a"))
    inst.a.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()});
  inst.b = j.at("b").get<std::vector<double>>();
  inst.tag = problem_tag_from(j.at("problem_tag").get<std::string>());
  inst.c0 = j.value("c0", 0.0);
  inst.validate();
  return inst;
}

inline void save_instance(const BqpInstance& inst, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << to_json(inst).dump(2) << '\n';
}

inline BqpInstance load_instance(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open instance file: " + path);
  nlohmann::json j;
  f >> j;
  return instance_from_json(j);
}

inline void save_coords(const std::vector<Coord>& pts, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : pts) j.push_back({p[0], p[1]});
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << j.dump(2) << '\n';
}

inline std::vector<Coord> load_coords(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open coords file: " + path);
  nlohmann::json j;
  f >> j;
  std::vector<Coord> pts;
  for (const auto& p : j) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return pts;
}

}  // namespace isac
