#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "isac/bqp.hpp"
#include "isac/rng.hpp"
#include "json.hpp"

namespace isac {

/// The three tunable solver parameters.
struct SolverParams {
  int num_run = 16;
  int gs_level = 5;
  int gs_cutoff = 8000;

  bool operator==(const SolverParams&) const = default;
};

struct ParamRange {
  long long lo = 1;
  long long hi = 1;
  bool log_scale = false;
};

/// Search space per parameter; gs_cutoff is sampled on a log axis.
struct ParamSpace {
  ParamRange num_run{1, 100, false};
  ParamRange gs_level{1, 100, false};
  ParamRange gs_cutoff{1, 10000, true};

  void validate() const {
    for (const ParamRange* r : {&num_run, &gs_level, &gs_cutoff}) {
      if (r->lo < 1 || r->hi < r->lo)
        throw std::invalid_argument("ParamSpace: require 1 <= lo <= hi");
    }
  }

  bool contains(const SolverParams& p) const {
    return p.num_run >= num_run.lo && p.num_run <= num_run.hi &&
           p.gs_level >= gs_level.lo && p.gs_level <= gs_level.hi &&
           p.gs_cutoff >= gs_cutoff.lo && p.gs_cutoff <= gs_cutoff.hi;
  }
};

struct UpdateEvent {
  double cost = 0.0;
  long long t_ms = 0;
};

struct PoolEntry {
  BitVec x;
  double cost = 0.0;
};

/// Log of one seeded solver execution: best-feasible update history plus
/// the capacity-bounded feasible-solution pool (ascending cost).
struct RunLog {
  uint64_t seed = 0;
  long long wall_limit_ms = 0;
  std::vector<UpdateEvent> update_history;
  std::vector<PoolEntry> pool;
  size_t pool_capacity = 1000;
  long long epochs_executed = 0;

  long long last_update_ms() const {
    return update_history.empty() ? 0 : update_history.back().t_ms;
  }
  bool has_feasible() const { return !pool.empty(); }
  double best_cost() const {
    return pool.empty() ? std::numeric_limits<double>::quiet_NaN() : pool.front().cost;
  }
};

/// The solver budget runs on a deterministic virtual clock: work units
/// (roughly one neighbor-array touch each) divided by this nominal rate.
/// Identical seeds therefore reproduce identical pools, histories and
/// timestamps, and a longer budget extends the same solution sequence.
inline constexpr long long kWorkUnitsPerMs = 250000;

namespace detail {

struct CsrView {
  std::vector<int> offsets;  // n+1
  std::vector<int> cols;
  std::vector<double> vals;
};

inline CsrView full_adjacency(const BqpInstance& inst) {
  std::vector<int> deg(static_cast<size_t>(inst.n), 0);
  for (const auto& e : inst.q)
    if (e.i != e.j) {
      ++deg[static_cast<size_t>(e.i)];
      ++deg[static_cast<size_t>(e.j)];
    }
  CsrView v;
  v.offsets.assign(static_cast<size_t>(inst.n) + 1, 0);
  for (int i = 0; i < inst.n; ++i)
    v.offsets[static_cast<size_t>(i) + 1] = v.offsets[static_cast<size_t>(i)] + deg[static_cast<size_t>(i)];
  v.cols.resize(static_cast<size_t>(v.offsets.back()));
  v.vals.resize(v.cols.size());
  std::vector<int> fill(v.offsets.begin(), v.offsets.end() - 1);
  for (const auto& e : inst.q)
    if (e.i != e.j) {
      int pi = fill[static_cast<size_t>(e.i)]++;
      v.cols[static_cast<size_t>(pi)] = e.j;
      v.vals[static_cast<size_t>(pi)] = e.v;
      int pj = fill[static_cast<size_t>(e.j)]++;
      v.cols[static_cast<size_t>(pj)] = e.i;
      v.vals[static_cast<size_t>(pj)] = e.v;
    }
  return v;
}

inline CsrView column_view(const BqpInstance& inst) {
  std::vector<int> deg(static_cast<size_t>(inst.n), 0);
  for (const auto& e : inst.a) ++deg[static_cast<size_t>(e.j)];
  CsrView v;
  v.offsets.assign(static_cast<size_t>(inst.n) + 1, 0);
  for (int i = 0; i < inst.n; ++i)
    v.offsets[static_cast<size_t>(i) + 1] = v.offsets[static_cast<size_t>(i)] + deg[static_cast<size_t>(i)];
  v.cols.resize(static_cast<size_t>(v.offsets.back()));
  v.vals.resize(v.cols.size());
  std::vector<int> fill(v.offsets.begin(), v.offsets.end() - 1);
  for (const auto& e : inst.a) {
    int p = fill[static_cast<size_t>(e.j)]++;
    v.cols[static_cast<size_t>(p)] = e.k;
    v.vals[static_cast<size_t>(p)] = e.v;
  }
  return v;
}

}  // namespace detail

/// Runs num_run logically parallel annealing runs against a shared
/// feasible-solution pool until the virtual wall budget elapses.
///
/// Each epoch restarts a run from fresh random values and performs up to
/// n * gs_level single-bit-flip Metropolis iterations under geometric
/// cooling, ending early after gs_cutoff consecutive iterations without
/// improving that epoch's best penalized cost. Penalized cost is
/// objective + w * violation with w doubled whenever an epoch ends with
/// no feasible solution. Runs execute round-robin with per-run RNG
/// streams seeded hash(seed, run_index), so the solution sequence is
/// independent of any physical parallelism.
inline RunLog solve(const BqpInstance& inst, const SolverParams& params,
                    long long wall_limit_ms, uint64_t seed,
                    size_t pool_capacity = 1000) {
  ParamSpace space;
  if (!space.contains(params))
    throw std::invalid_argument("solve: params outside Table-2 ranges");
  if (wall_limit_ms <= 0) throw std::invalid_argument("solve: wall_limit_ms must be > 0");
  inst.validate();

  const int n = inst.n;
  const auto adj = detail::full_adjacency(inst);
  const auto acol = detail::column_view(inst);
  std::vector<double> diag(static_cast<size_t>(n), 0.0);
  for (const auto& e : inst.q)
    if (e.i == e.j) diag[static_cast<size_t>(e.i)] = e.v;

  double max_abs_q = 0.0;
  for (const auto& e : inst.q) max_abs_q = std::max(max_abs_q, std::fabs(e.v));
  double w = max_abs_q > 0.0 ? 10.0 * max_abs_q : 10.0;

  RunLog log;
  log.seed = seed;
  log.wall_limit_ms = wall_limit_ms;
  log.pool_capacity = pool_capacity;

  const unsigned long long budget_units =
      static_cast<unsigned long long>(wall_limit_ms) *
      static_cast<unsigned long long>(kWorkUnitsPerMs);
  unsigned long long units = 0;
  auto now_ms = [&]() {
    return static_cast<long long>(units / static_cast<unsigned long long>(kWorkUnitsPerMs));
  };

  std::vector<Rng> run_rng;
  run_rng.reserve(static_cast<size_t>(params.num_run));
  for (int r = 0; r < params.num_run; ++r)
    run_rng.emplace_back(hash_combine(seed, static_cast<uint64_t>(r)));

  double global_best = std::numeric_limits<double>::infinity();

  auto offer_to_pool = [&](const BitVec& x) {
    double cost = evaluate_objective(inst, x);
    units += inst.q.size() + 8;
    auto lo = std::lower_bound(log.pool.begin(), log.pool.end(), cost,
                               [](const PoolEntry& p, double c) { return p.cost < c; });
    auto hi = std::upper_bound(lo, log.pool.end(), cost,
                               [](double c, const PoolEntry& p) { return c < p.cost; });
    for (auto it = lo; it != hi; ++it)
      if (it->x == x) return;  // dedupe identical bit-vectors
    if (log.pool.size() < pool_capacity) {
      log.pool.insert(hi, PoolEntry{x, cost});
    } else if (cost < log.pool.back().cost) {
      log.pool.pop_back();
      log.pool.insert(hi, PoolEntry{x, cost});
    }
  };

  // Epoch-local state, reused across epochs to avoid reallocation.
  BitVec x(static_cast<size_t>(n), 0);
  std::vector<double> s(static_cast<size_t>(n), 0.0);
  std::vector<double> ax(static_cast<size_t>(inst.m), 0.0);
  BitVec epoch_best_x;
  std::vector<double> probe(32, 0.0);

  auto run_epoch = [&](int r) {
    Rng& rng = run_rng[static_cast<size_t>(r)];
    // Fresh random initial values.
    for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
    std::fill(s.begin(), s.end(), 0.0);
    std::fill(ax.begin(), ax.end(), 0.0);
    units += static_cast<unsigned long long>(n);
    double obj = inst.c0;
    for (int i = 0; i < n; ++i) {
      if (!x[static_cast<size_t>(i)]) continue;
      obj += diag[static_cast<size_t>(i)];
      for (int p = adj.offsets[static_cast<size_t>(i)]; p < adj.offsets[static_cast<size_t>(i) + 1]; ++p)
        s[static_cast<size_t>(adj.cols[static_cast<size_t>(p)])] += adj.vals[static_cast<size_t>(p)];
      for (int p = acol.offsets[static_cast<size_t>(i)]; p < acol.offsets[static_cast<size_t>(i) + 1]; ++p)
        ax[static_cast<size_t>(acol.cols[static_cast<size_t>(p)])] += acol.vals[static_cast<size_t>(p)];
      units += static_cast<unsigned long long>(
          adj.offsets[static_cast<size_t>(i) + 1] - adj.offsets[static_cast<size_t>(i)] +
          acol.offsets[static_cast<size_t>(i) + 1] - acol.offsets[static_cast<size_t>(i)]);
    }
    // Sum of neighbor sums over set bits counts each pair twice, which is
    // the full-matrix convention.
    for (int i = 0; i < n; ++i)
      if (x[static_cast<size_t>(i)]) obj += s[static_cast<size_t>(i)];
    double violation = 0.0;
    for (int k = 0; k < inst.m; ++k)
      violation += std::max(0.0, ax[static_cast<size_t>(k)] - inst.b[static_cast<size_t>(k)]);

    auto flip_delta = [&](int v, double& dobj, double& dviol) {
      double d = x[static_cast<size_t>(v)] ? -1.0 : 1.0;
      dobj = d * (diag[static_cast<size_t>(v)] + 2.0 * s[static_cast<size_t>(v)]);
      dviol = 0.0;
      for (int p = acol.offsets[static_cast<size_t>(v)]; p < acol.offsets[static_cast<size_t>(v) + 1]; ++p) {
        int k = acol.cols[static_cast<size_t>(p)];
        double before = ax[static_cast<size_t>(k)] - inst.b[static_cast<size_t>(k)];
        double after = before + d * acol.vals[static_cast<size_t>(p)];
        dviol += std::max(0.0, after) - std::max(0.0, before);
      }
    };

    // Initial temperature from the median sampled |delta|.
    size_t nprobe = std::min<size_t>(32, static_cast<size_t>(n));
    for (size_t p = 0; p < nprobe; ++p) {
      int v = static_cast<int>(rng.index(static_cast<size_t>(n)));
      double dobj, dviol;
      flip_delta(v, dobj, dviol);
      probe[p] = std::fabs(dobj + w * dviol);
      units += 4 + static_cast<unsigned long long>(
                       acol.offsets[static_cast<size_t>(v) + 1] - acol.offsets[static_cast<size_t>(v)]);
    }
    std::sort(probe.begin(), probe.begin() + static_cast<long>(nprobe));
    double temp = probe[nprobe / 2];
    if (!(temp > 0.0)) temp = 1.0;

    double pen = obj + w * violation;
    double best_pen = pen;
    double epoch_best = std::numeric_limits<double>::infinity();
    bool found_feasible = false;
    auto note_state = [&]() {
      if (violation != 0.0) return;
      found_feasible = true;
      if (obj < epoch_best) {
        epoch_best = obj;
        epoch_best_x = x;
        units += static_cast<unsigned long long>(n / 16 + 1);
      }
      if (obj < global_best) {
        global_best = obj;
        log.update_history.push_back({obj, now_ms()});
      }
    };
    note_state();

    const unsigned long long max_iters =
        static_cast<unsigned long long>(n) * static_cast<unsigned long long>(params.gs_level);
    long long stall = 0;
    for (unsigned long long it = 0; it < max_iters; ++it) {
      if (units >= budget_units) break;
      int v = static_cast<int>(rng.index(static_cast<size_t>(n)));
      double dobj, dviol;
      flip_delta(v, dobj, dviol);
      double dpen = dobj + w * dviol;
      units += 4 + static_cast<unsigned long long>(
                       acol.offsets[static_cast<size_t>(v) + 1] - acol.offsets[static_cast<size_t>(v)]);
      bool accept = dpen <= 0.0 || rng.uniform() < std::exp(-dpen / temp);
      bool improved = false;
      if (accept) {
        double d = x[static_cast<size_t>(v)] ? -1.0 : 1.0;
        x[static_cast<size_t>(v)] ^= 1;
        obj += dobj;
        violation = std::max(0.0, violation + dviol);
        pen += dpen;
        for (int p = adj.offsets[static_cast<size_t>(v)]; p < adj.offsets[static_cast<size_t>(v) + 1]; ++p)
          s[static_cast<size_t>(adj.cols[static_cast<size_t>(p)])] += d * adj.vals[static_cast<size_t>(p)];
        for (int p = acol.offsets[static_cast<size_t>(v)]; p < acol.offsets[static_cast<size_t>(v) + 1]; ++p)
          ax[static_cast<size_t>(acol.cols[static_cast<size_t>(p)])] += d * acol.vals[static_cast<size_t>(p)];
        units += static_cast<unsigned long long>(
            adj.offsets[static_cast<size_t>(v) + 1] - adj.offsets[static_cast<size_t>(v)]);
        if (pen < best_pen) {
          best_pen = pen;
          improved = true;
        }
        note_state();
      }
      if (improved) {
        stall = 0;
      } else if (++stall >= params.gs_cutoff) {
        break;
      }
      if ((it + 1) % static_cast<unsigned long long>(n) == 0) temp *= 0.95;
    }

    if (found_feasible) offer_to_pool(epoch_best_x);
    ++log.epochs_executed;
    return found_feasible;
  };

  while (units < budget_units) {
    for (int r = 0; r < params.num_run; ++r) {
      if (units >= budget_units) break;
      if (!run_epoch(r)) w = std::min(w * 2.0, 1e30);
    }
  }
  return log;
}

/// Exact feasible minimizer by exhaustive enumeration; test oracle.
/// Returns nullopt when the feasible set is empty.
inline std::optional<Solution> brute_force(const BqpInstance& inst) {
  if (inst.n > 24)
    throw std::invalid_argument("brute_force: n must be <= 24, got " + std::to_string(inst.n));
  inst.validate();
  std::optional<Solution> best;
  BitVec x(static_cast<size_t>(inst.n), 0);
  const uint64_t total = 1ULL << inst.n;
  for (uint64_t mask = 0; mask < total; ++mask) {
    for (int i = 0; i < inst.n; ++i) x[static_cast<size_t>(i)] = (mask >> i) & 1ULL;
    auto [feasible, viol] = check_feasibility(inst, x);
    if (!feasible) continue;
    double cost = evaluate_objective(inst, x);
    if (!best || cost < best->cost) best = Solution{x, cost, true};
  }
  return best;
}

// ---------------------------------------------------------------------------
// RunLog serialization (hand-off to the features stage)
// ---------------------------------------------------------------------------

inline std::string bits_to_string(const BitVec& x) {
  std::string s(x.size(), '0');
  for (size_t i = 0; i < x.size(); ++i)
    if (x[i]) s[i] = '1';
  return s;
}

inline BitVec bits_from_string(const std::string& s) {
  BitVec x(s.size(), 0);
  for (size_t i = 0; i < s.size(); ++i) x[i] = s[i] == '1';
  return x;
}

inline nlohmann::json to_json(const RunLog& log) {
  nlohmann::json j;
  j["seed"] = log.seed;
  j["wall_limit_ms"] = log.wall_limit_ms;
  auto& hist = j["update_history"] = nlohmann::json::array();
  for (const auto& u : log.update_history) hist.push_back({u.cost, u.t_ms});
  auto& pool = j["pool"] = nlohmann::json::array();
  for (const auto& p : log.pool) pool.push_back({bits_to_string(p.x), p.cost});
  j["pool_capacity"] = log.pool_capacity;
  j["epochs_executed"] = log.epochs_executed;
  return j;
}

inline RunLog runlog_from_json(const nlohmann::json& j) {
  RunLog log;
  log.seed = j.at("seed").get<uint64_t>();
  log.wall_limit_ms = j.at("wall_limit_ms").get<long long>();
  for (const auto& u : j.at("update_history"))
    log.update_history.push_back({u.at(0).get<double>(), u.at(1).get<long long>()});
  for (const auto& p : j.at("pool"))
    log.pool.push_back({bits_from_string(p.at(0).get<std::string>()), p.at(1).get<double>()});
  log.pool_capacity = j.at("pool_capacity").get<size_t>();
  log.epochs_executed = j.at("epochs_executed").get<long long>();
  return log;
}

}  // namespace isac
