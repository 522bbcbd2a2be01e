#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "isac/annealer.hpp"
#include "isac/bqp.hpp"
#include "isac/features.hpp"
#include "isac/rng.hpp"

namespace isac {

/// Sentinel performance for trials that found no feasible solution.
inline constexpr double kInfeasibleCost = 1e18;

struct TrialRecord {
  SolverParams theta;
  double y = 0.0;
  std::vector<std::pair<double, long long>> per_instance;  // (E_trial, T_trial ms)
};

struct TpeConfig {
  int n_trials = 500;
  int n_startup_random = 100;
  double gamma = 0.25;
  int n_candidates = 24;
  double alpha = 0.001;
  uint64_t seed = 0;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0))
      throw std::invalid_argument("TpeConfig: gamma must be in (0,1)");
    if (n_startup_random > n_trials)
      throw std::invalid_argument("TpeConfig: n_startup_random must be <= n_trials");
    if (n_trials < 1 || n_candidates < 1)
      throw std::invalid_argument("TpeConfig: n_trials and n_candidates must be >= 1");
  }
};

/// Eq.-style expected-improvement proxy: EI is proportional to
/// (gamma + (g/l)(1-gamma))^-1, so minimizing the density ratio g/l
/// maximizes EI.
inline double ei_from_ratio(double ratio, double gamma) {
  return 1.0 / (gamma + ratio * (1.0 - gamma));
}

/// Parzen mixture of truncated Gaussians at the observed values plus a
/// uniform prior component, all equally weighted at 1/(size+1).
/// Works on the (possibly log-transformed) axis.
struct ParzenMixture {
  double lo = 0.0, hi = 1.0;  // transformed-axis bounds
  double bandwidth = 1.0;
  std::vector<double> centers;

  static ParzenMixture build(const std::vector<double>& observations, double lo,
                             double hi) {
    ParzenMixture m;
    m.lo = lo;
    m.hi = hi;
    m.centers = observations;
    double range = hi - lo;
    m.bandwidth = observations.empty()
                      ? range
                      : std::max(1e-9 * std::max(range, 1.0),
                                 range / std::sqrt(static_cast<double>(observations.size())));
    return m;
  }

  static double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

  double pdf(double x) const {
    if (x < lo || x > hi) return 0.0;
    double range = hi - lo;
    double uniform_pdf = range > 0.0 ? 1.0 / range : 1.0;
    double wsum = 1.0 / static_cast<double>(centers.size() + 1);
    double acc = uniform_pdf * wsum;
    for (double c : centers) {
      double z = (x - c) / bandwidth;
      double norm = norm_cdf((hi - c) / bandwidth) - norm_cdf((lo - c) / bandwidth);
      if (norm <= 0.0) continue;
      double g = std::exp(-0.5 * z * z) / (bandwidth * std::sqrt(2.0 * M_PI));
      acc += wsum * g / norm;
    }
    return acc;
  }

  double sample(Rng& rng) const {
    size_t comp = rng.index(centers.size() + 1);
    if (comp == 0) return rng.uniform(lo, hi);
    double c = centers[comp - 1];
    for (int tries = 0; tries < 100; ++tries) {
      double x = c + bandwidth * rng.normal();
      if (x >= lo && x <= hi) return x;
    }
    return std::max(lo, std::min(hi, c));
  }
};

namespace detail {

inline double transform(double v, const ParamRange& r) {
  return r.log_scale ? std::log(v) : v;
}

inline long long untransform_round_clamp(double t, const ParamRange& r) {
  double v = r.log_scale ? std::exp(t) : t;
  long long iv = std::llround(v);
  return std::max(r.lo, std::min(r.hi, iv));
}

inline long long sample_uniform(Rng& rng, const ParamRange& r) {
  if (r.log_scale) {
    double t = rng.uniform(std::log(static_cast<double>(r.lo)),
                           std::log(static_cast<double>(r.hi)));
    return untransform_round_clamp(t, r);
  }
  return rng.uniform_int(r.lo, r.hi);
}

}  // namespace detail

/// One TPE proposal. Startup trials draw uniformly (log-uniform on log
/// axes); afterwards history splits at the gamma-quantile by rank into
/// good/bad sets, candidates are drawn from the good density l and the
/// one minimizing g/l (maximizing EI) is returned, rounded and clamped.
inline SolverParams tpe_suggest(const std::vector<TrialRecord>& history,
                                const ParamSpace& space, const TpeConfig& cfg,
                                Rng& rng) {
  space.validate();
  const std::array<const ParamRange*, 3> ranges = {&space.num_run, &space.gs_level,
                                                   &space.gs_cutoff};
  auto get = [](const SolverParams& p, size_t d) {
    return d == 0 ? p.num_run : d == 1 ? p.gs_level : p.gs_cutoff;
  };
  auto set = [](SolverParams& p, size_t d, long long v) {
    (d == 0 ? p.num_run : d == 1 ? p.gs_level : p.gs_cutoff) = static_cast<int>(v);
  };

  if (static_cast<int>(history.size()) < cfg.n_startup_random || history.empty()) {
    SolverParams p;
    for (size_t d = 0; d < 3; ++d) set(p, d, detail::sample_uniform(rng, *ranges[d]));
    return p;
  }

  std::vector<size_t> idx(history.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return history[a].y < history[b].y; });
  size_t n_good = std::max<size_t>(
      1, std::min(history.size() - 1,
                  static_cast<size_t>(std::ceil(cfg.gamma * static_cast<double>(history.size())))));

  std::array<ParzenMixture, 3> good, bad;
  for (size_t d = 0; d < 3; ++d) {
    double lo = detail::transform(static_cast<double>(ranges[d]->lo), *ranges[d]);
    double hi = detail::transform(static_cast<double>(ranges[d]->hi), *ranges[d]);
    std::vector<double> gobs, bobs;
    for (size_t r = 0; r < idx.size(); ++r) {
      double t = detail::transform(static_cast<double>(get(history[idx[r]].theta, d)), *ranges[d]);
      (r < n_good ? gobs : bobs).push_back(t);
    }
    good[d] = ParzenMixture::build(gobs, lo, hi);
    bad[d] = ParzenMixture::build(bobs, lo, hi);
  }

  SolverParams best;
  double best_ratio = std::numeric_limits<double>::infinity();
  for (int c = 0; c < cfg.n_candidates; ++c) {
    SolverParams cand;
    for (size_t d = 0; d < 3; ++d)
      set(cand, d, detail::untransform_round_clamp(good[d].sample(rng), *ranges[d]));
    double ratio = 1.0;
    for (size_t d = 0; d < 3; ++d) {
      double t = detail::transform(static_cast<double>(get(cand, d)), *ranges[d]);
      double l = good[d].pdf(t);
      double g = bad[d].pdf(t);
      ratio *= l > 0.0 ? g / l : std::numeric_limits<double>::infinity();
    }
    if (ratio < best_ratio) {
      best_ratio = ratio;
      best = cand;
    }
  }
  return best;
}

/// Normalized trial objective of one parameter setting, averaged over the
/// tuning instances: (E - mean_default)/std_default + alpha*(T - limit)/limit.
inline double objective(const std::vector<std::pair<double, long long>>& results,
                        const std::vector<std::pair<double, double>>& default_stats,
                        long long t_limit_ms, double alpha) {
  if (results.empty()) throw std::invalid_argument("objective: empty results");
  if (default_stats.size() != results.size())
    throw std::invalid_argument("objective: stats/results size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < results.size(); ++i) {
    double std_dev = default_stats[i].second > 0.0 ? default_stats[i].second : 1.0;
    double cost_term = (results[i].first - default_stats[i].first) / std_dev;
    double time_term = alpha *
                       (static_cast<double>(results[i].second) - static_cast<double>(t_limit_ms)) /
                       static_cast<double>(t_limit_ms);
    acc += cost_term + time_term;
  }
  return acc / static_cast<double>(results.size());
}

/// Hardness probe: run the solver with default parameters for the probe
/// budget and rank members by last-update time, hardest (latest) first.
/// Callers exclude noise-reassigned members before calling.
inline std::vector<std::string> select_hard_instances(
    const std::vector<const BqpInstance*>& members, size_t k,
    long long probe_budget_ms, uint64_t seed, int class_id = -1) {
  if (members.empty())
    throw std::runtime_error("select_hard_instances: class " + std::to_string(class_id) +
                             " has no members after noise exclusion");
  std::vector<std::pair<long long, size_t>> ranked(members.size());
  std::vector<std::future<long long>> jobs(members.size());
  for (size_t i = 0; i < members.size(); ++i)
    jobs[i] = std::async(std::launch::async, [&, i]() {
      RunLog log = solve(*members[i], SolverParams{}, probe_budget_ms,
                         hash_combine(seed, fnv1a(members[i]->id)));
      return log.last_update_ms();
    });
  for (size_t i = 0; i < members.size(); ++i) ranked[i] = {jobs[i].get(), i};
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> out;
  for (size_t i = 0; i < std::min(k, ranked.size()); ++i)
    out.push_back(members[ranked[i].second]->id);
  return out;
}

/// Evaluates one (instance, params) pair: returns (best feasible cost or
/// the infeasible sentinel, last-update time).
using TrialEvalFn =
    std::function<std::pair<double, long long>(const BqpInstance&, const SolverParams&)>;

struct TuneResult {
  SolverParams best;
  int best_trial = -1;
  std::vector<TrialRecord> trials;
};

/// Per-class SMBO loop: n_trials iterations of suggest -> evaluate each
/// hard instance -> Eq.-(4) objective; returns the argmin-y parameters
/// (ties resolve to the earliest trial).
inline TuneResult tune_class(const std::vector<const BqpInstance*>& instances,
                             const std::vector<std::pair<double, double>>& default_stats,
                             long long t_limit_ms, const ParamSpace& space,
                             const TpeConfig& cfg, const TrialEvalFn& eval) {
  cfg.validate();
  if (instances.empty()) throw std::invalid_argument("tune_class: no instances");
  if (default_stats.size() != instances.size())
    throw std::invalid_argument("tune_class: stats size mismatch");
  Rng rng(cfg.seed);
  TuneResult result;
  for (int t = 0; t < cfg.n_trials; ++t) {
    SolverParams theta = tpe_suggest(result.trials, space, cfg, rng);
    TrialRecord rec;
    rec.theta = theta;
    rec.per_instance.resize(instances.size());
    std::vector<std::future<std::pair<double, long long>>> jobs(instances.size());
    for (size_t i = 0; i < instances.size(); ++i)
      jobs[i] = std::async(std::launch::async,
                           [&, i]() { return eval(*instances[i], theta); });
    try {
      for (size_t i = 0; i < instances.size(); ++i) rec.per_instance[i] = jobs[i].get();
    } catch (const std::exception& e) {
      throw std::runtime_error("tune_class: trial " + std::to_string(t) +
                               " failed: " + e.what());
    }
    rec.y = objective(rec.per_instance, default_stats, t_limit_ms, cfg.alpha);
    result.trials.push_back(std::move(rec));
    if (result.best_trial < 0 || result.trials[static_cast<size_t>(t)].y <
                                     result.trials[static_cast<size_t>(result.best_trial)].y) {
      result.best_trial = t;
      result.best = theta;
    }
  }
  return result;
}

inline void write_trials_csv(const TuneResult& result, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "trial,num_run,gs_level,gs_cutoff,y";
  size_t ni = result.trials.empty() ? 0 : result.trials[0].per_instance.size();
  for (size_t i = 0; i < ni; ++i) f << ",E_" << i << ",T_ms_" << i;
  f << '\n';
  for (size_t t = 0; t < result.trials.size(); ++t) {
    const auto& r = result.trials[t];
    f << t << ',' << r.theta.num_run << ',' << r.theta.gs_level << ','
      << r.theta.gs_cutoff << ',' << format_double(r.y);
    for (const auto& [e, tm] : r.per_instance) f << ',' << format_double(e) << ',' << tm;
    f << '\n';
  }
}

}  // namespace isac
