#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "isac/annealer.hpp"

namespace isac {

inline constexpr size_t kFeatureDim = 18;

inline const std::array<const char*, kFeatureDim>& feature_names() {
  static const std::array<const char*, kFeatureDim> names = {
      "pool_count",      "pool_cost_max",    "pool_cost_median", "pool_cost_q1",
      "pool_cost_q3",    "hamming_max",      "hamming_median",   "hamming_q1",
      "hamming_q3",      "identical_ratio",  "update_count",     "update_t_min",
      "update_t_max",    "update_t_median",  "update_t_q1",      "update_t_q3",
      "best_cost",       "mean_epochs"};
  return names;
}

/// Fixed-order summary statistics of one instance's multi-seed solver logs.
struct FeatureVector {
  std::string instance_id;
  std::array<double, kFeatureDim> values{};
  bool standardized = false;
};

/// Quantile with linear interpolation between closest ranks; input sorted.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  if (sorted.size() == 1) return sorted[0];
  double pos = p * static_cast<double>(sorted.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  if (lo >= sorted.size() - 1) return sorted.back();
  double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac;
}

/// Summary statistics of the concatenated logs (all seeds). Degenerate
/// logs produce zero-valued statistics and identical_ratio 1.0 so the
/// downstream embedding input stays finite.
inline FeatureVector extract_features(const std::vector<RunLog>& logs,
                                      const std::string& instance_id) {
  if (logs.empty()) throw std::invalid_argument("extract_features: need at least one RunLog");
  FeatureVector fv;
  fv.instance_id = instance_id;
  auto& v = fv.values;

  std::vector<double> costs;
  std::vector<const PoolEntry*> entries;
  for (const auto& log : logs)
    for (const auto& p : log.pool) {
      costs.push_back(p.cost);
      entries.push_back(&p);
    }
  std::sort(costs.begin(), costs.end());
  v[0] = static_cast<double>(costs.size());
  if (!costs.empty()) {
    v[1] = costs.back();
    v[2] = quantile_sorted(costs, 0.50);
    v[3] = quantile_sorted(costs, 0.25);
    v[4] = quantile_sorted(costs, 0.75);
  }

  if (!entries.empty()) {
    // Reference = minimum-cost solution; ties broken by lexicographically
    // smallest bit-vector so seed order cannot change the result.
    const PoolEntry* ref = entries[0];
    for (const PoolEntry* e : entries)
      if (e->cost < ref->cost || (e->cost == ref->cost && e->x < ref->x)) ref = e;
    std::vector<double> ham;
    ham.reserve(entries.size());
    for (const PoolEntry* e : entries) {
      size_t d = 0;
      for (size_t i = 0; i < e->x.size(); ++i) d += e->x[i] != ref->x[i];
      ham.push_back(static_cast<double>(d));
    }
    std::sort(ham.begin(), ham.end());
    v[5] = ham.back();
    v[6] = quantile_sorted(ham, 0.50);
    v[7] = quantile_sorted(ham, 0.25);
    v[8] = quantile_sorted(ham, 0.75);
    size_t nvar = ref->x.size();
    size_t same = 0;
    for (size_t i = 0; i < nvar; ++i) {
      uint8_t first = entries[0]->x[i];
      bool all_equal = true;
      for (const PoolEntry* e : entries)
        if (e->x[i] != first) {
          all_equal = false;
          break;
        }
      same += all_equal;
    }
    v[9] = nvar ? static_cast<double>(same) / static_cast<double>(nvar) : 1.0;
  } else {
    v[9] = 1.0;
  }

  std::vector<double> times;
  for (const auto& log : logs)
    for (const auto& u : log.update_history) times.push_back(static_cast<double>(u.t_ms));
  std::sort(times.begin(), times.end());
  v[10] = static_cast<double>(times.size());
  if (!times.empty()) {
    v[11] = times.front();
    v[12] = times.back();
    v[13] = quantile_sorted(times, 0.50);
    v[14] = quantile_sorted(times, 0.25);
    v[15] = quantile_sorted(times, 0.75);
  }

  if (!costs.empty()) {
    v[16] = costs.front();
  } else {
    double best = 0.0;
    bool found = false;
    for (const auto& log : logs)
      if (!log.update_history.empty()) {
        double c = log.update_history.back().cost;
        if (!found || c < best) best = c;
        found = true;
      }
    v[16] = found ? best : 0.0;
  }
  double epochs = 0.0;
  for (const auto& log : logs) epochs += static_cast<double>(log.epochs_executed);
  v[17] = epochs / static_cast<double>(logs.size());
  return fv;
}

struct StandardizeStats {
  std::array<double, kFeatureDim> mean{};
  std::array<double, kFeatureDim> stddev{};  // population; 0 marks constant columns
};

inline StandardizeStats standardize_stats(const std::vector<FeatureVector>& corpus) {
  if (corpus.size() < 2)
    throw std::invalid_argument("standardize: need at least 2 feature vectors");
  StandardizeStats st;
  const double n = static_cast<double>(corpus.size());
  for (size_t c = 0; c < kFeatureDim; ++c) {
    double mean = 0.0;
    for (const auto& fv : corpus) mean += fv.values[c];
    mean /= n;
    double var = 0.0;
    for (const auto& fv : corpus) {
      double d = fv.values[c] - mean;
      var += d * d;
    }
    st.mean[c] = mean;
    st.stddev[c] = std::sqrt(var / n);
  }
  return st;
}

inline FeatureVector apply_standardization(const FeatureVector& fv,
                                           const StandardizeStats& st) {
  FeatureVector out = fv;
  for (size_t c = 0; c < kFeatureDim; ++c)
    out.values[c] = st.stddev[c] > 0.0 ? (fv.values[c] - st.mean[c]) / st.stddev[c] : 0.0;
  out.standardized = true;
  return out;
}

/// Per-column z-score with population sigma; zero-variance columns map to 0.
inline std::vector<FeatureVector> standardize(const std::vector<FeatureVector>& corpus) {
  StandardizeStats st = standardize_stats(corpus);
  std::vector<FeatureVector> out;
  out.reserve(corpus.size());
  for (const auto& fv : corpus) out.push_back(apply_standardization(fv, st));
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_features_csv(const std::vector<FeatureVector>& corpus,
                               const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << "instance_id";
  for (const char* name : feature_names()) f << ',' << name;
  f << '\n';
  for (const auto& fv : corpus) {
    f << fv.instance_id;
    for (double v : fv.values) f << ',' << format_double(v);
    f << '\n';
  }
}

inline std::vector<FeatureVector> read_features_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open features csv: " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty features csv: " + path);
  std::vector<FeatureVector> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    FeatureVector fv;
    size_t pos = line.find(',');
    fv.instance_id = line.substr(0, pos);
    for (size_t c = 0; c < kFeatureDim; ++c) {
      size_t next = line.find(',', pos + 1);
      fv.values[c] = std::stod(line.substr(pos + 1, next - pos - 1));
      pos = next;
    }
    out.push_back(std::move(fv));
  }
  return out;
}

}  // namespace isac
