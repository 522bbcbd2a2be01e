#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "isac/graphify.hpp"
#include "isac/rng.hpp"
#include "json.hpp"

namespace isac {

struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}
  double& at(int r, int c) { return d[static_cast<size_t>(r) * static_cast<size_t>(cols) + static_cast<size_t>(c)]; }
  double at(int r, int c) const { return d[static_cast<size_t>(r) * static_cast<size_t>(cols) + static_cast<size_t>(c)]; }
};

struct GatConfig {
  int in_dim = 3;
  int hidden = 8;   // per-head channels in both layers
  int heads = 4;
  double dropout = 0.3;
  double leaky_slope = 0.2;
  bool sigmoid_activation = false;  // Eq.-(5) sigmoid variant; default ReLU stack
};

/// One attention layer: a value projection W shared across heads plus
/// per-head attention vectors over [W h_v || W h_u || W_e e_vu] and
/// per-head scalar edge projections.
struct GatLayer {
  int in_dim = 0, out_dim = 0, heads = 1;
  bool concat = true;  // concat heads (layer 1) vs average (layer 2)
  Mat W;               // out_dim x in_dim
  Mat attn;            // heads x (2*out_dim + 1)
  std::vector<double> edge_proj;  // heads

  int combined_dim() const { return concat ? out_dim * heads : out_dim; }
};

/// Two-layer GAT classifier with a mean-pool head.
struct GatModel {
  GatConfig cfg;
  int num_classes = 0;
  GatLayer l1, l2;
  Mat head_w;                  // num_classes x hidden
  std::vector<double> head_b;  // num_classes
};

struct TrainConfig {
  int epochs = 500;
  int batch_size = 32;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 0;

  void validate() const {
    if (epochs < 0 || batch_size < 1 || !(learning_rate > 0.0))
      throw std::invalid_argument("TrainConfig: nonpositive field");
  }
};

namespace gat_detail {

inline void glorot_init(Mat& m, int fan_in, int fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : m.d) v = rng.uniform(-limit, limit);
}

/// Flattened N(v) u {v} lists; the self entry comes first with edge
/// feature 0.
struct Neighborhood {
  std::vector<int> off;   // node_count + 1
  std::vector<int> nbr;
  std::vector<double> w;
};

inline Neighborhood build_neighborhood(const InstanceGraph& g) {
  const size_t n = static_cast<size_t>(g.node_count);
  std::vector<int> deg(n, 1);  // self loop
  for (const auto& e : g.edges) {
    ++deg[static_cast<size_t>(e.u)];
    ++deg[static_cast<size_t>(e.v)];
  }
  Neighborhood nb;
  nb.off.assign(n + 1, 0);
  for (size_t i = 0; i < n; ++i) nb.off[i + 1] = nb.off[i] + deg[i];
  nb.nbr.resize(static_cast<size_t>(nb.off.back()));
  nb.w.resize(nb.nbr.size());
  std::vector<int> fill(n);
  for (size_t i = 0; i < n; ++i) {
    fill[i] = nb.off[i];
    nb.nbr[static_cast<size_t>(fill[i])] = static_cast<int>(i);
    nb.w[static_cast<size_t>(fill[i])] = 0.0;
    ++fill[i];
  }
  for (const auto& e : g.edges) {
    nb.nbr[static_cast<size_t>(fill[static_cast<size_t>(e.u)])] = e.v;
    nb.w[static_cast<size_t>(fill[static_cast<size_t>(e.u)]++)] = e.w;
    nb.nbr[static_cast<size_t>(fill[static_cast<size_t>(e.v)])] = e.u;
    nb.w[static_cast<size_t>(fill[static_cast<size_t>(e.v)]++)] = e.w;
  }
  return nb;
}

struct LayerCache {
  Mat X;   // input, n x in_dim
  Mat Z;   // W-projected input, n x out_dim
  // Per head, flattened over neighborhood entries.
  std::vector<std::vector<double>> score;       // pre-LeakyReLU
  std::vector<std::vector<double>> alpha;       // softmax, pre-dropout
  std::vector<std::vector<double>> alpha_used;  // post-dropout (== alpha in eval)
  std::vector<Mat> m;                           // aggregated pre-activation, n x out_dim
  Mat out;                                      // combined post-activation
};

}  // namespace gat_detail

struct ForwardCache {
  gat_detail::Neighborhood nb;
  gat_detail::LayerCache c1, c2;
  std::vector<double> pooled_raw;   // pre-dropout pooled vector
  std::vector<double> pool_mask;    // dropout scale per dim (1 in eval)
  std::vector<double> pooled;
  std::vector<double> logits;
  std::vector<double> probs;
  double min_abs_preact = std::numeric_limits<double>::infinity();
};

inline GatModel init_gat(const GatConfig& cfg, int num_classes, uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("init_gat: need at least 2 classes");
  Rng rng(seed);
  GatModel m;
  m.cfg = cfg;
  m.num_classes = num_classes;
  auto make_layer = [&](int in, int out, bool concat) {
    GatLayer l;
    l.in_dim = in;
    l.out_dim = out;
    l.heads = cfg.heads;
    l.concat = concat;
    l.W = Mat(out, in);
    gat_detail::glorot_init(l.W, in, out, rng);
    l.attn = Mat(cfg.heads, 2 * out + 1);
    gat_detail::glorot_init(l.attn, 2 * out + 1, 1, rng);
    l.edge_proj.resize(static_cast<size_t>(cfg.heads));
    for (auto& v : l.edge_proj) v = rng.uniform(-1.0, 1.0);
    return l;
  };
  m.l1 = make_layer(cfg.in_dim, cfg.hidden, true);
  m.l2 = make_layer(cfg.hidden * cfg.heads, cfg.hidden, false);
  m.head_w = Mat(num_classes, cfg.hidden);
  gat_detail::glorot_init(m.head_w, cfg.hidden, num_classes, rng);
  m.head_b.assign(static_cast<size_t>(num_classes), 0.0);
  return m;
}

inline GatModel zeros_like(const GatModel& m) {
  GatModel z = m;
  auto clear_layer = [](GatLayer& l) {
    std::fill(l.W.d.begin(), l.W.d.end(), 0.0);
    std::fill(l.attn.d.begin(), l.attn.d.end(), 0.0);
    std::fill(l.edge_proj.begin(), l.edge_proj.end(), 0.0);
  };
  clear_layer(z.l1);
  clear_layer(z.l2);
  std::fill(z.head_w.d.begin(), z.head_w.d.end(), 0.0);
  std::fill(z.head_b.begin(), z.head_b.end(), 0.0);
  return z;
}

/// Pointers to every trainable parameter in a fixed order.
inline std::vector<double*> param_ptrs(GatModel& m) {
  std::vector<double*> out;
  auto add_layer = [&](GatLayer& l) {
    for (auto& v : l.W.d) out.push_back(&v);
    for (auto& v : l.attn.d) out.push_back(&v);
    for (auto& v : l.edge_proj) out.push_back(&v);
  };
  add_layer(m.l1);
  add_layer(m.l2);
  for (auto& v : m.head_w.d) out.push_back(&v);
  for (auto& v : m.head_b) out.push_back(&v);
  return out;
}

inline size_t param_count(const GatModel& m) {
  return param_ptrs(const_cast<GatModel&>(m)).size();
}

namespace gat_detail {

inline void run_layer(const GatLayer& l, const GatConfig& cfg, const Neighborhood& nb,
                      const Mat& X, LayerCache& cache, bool training, Rng* rng,
                      double& min_abs_preact) {
  const int n = X.rows;
  const int D = l.out_dim;
  cache.X = X;
  cache.Z = Mat(n, D);
  for (int v = 0; v < n; ++v)
    for (int o = 0; o < D; ++o) {
      double acc = 0.0;
      for (int i = 0; i < l.in_dim; ++i) acc += l.W.at(o, i) * X.at(v, i);
      cache.Z.at(v, o) = acc;
    }
  const size_t entries = nb.nbr.size();
  cache.score.assign(static_cast<size_t>(l.heads), std::vector<double>(entries, 0.0));
  cache.alpha = cache.score;
  cache.alpha_used = cache.score;
  cache.m.assign(static_cast<size_t>(l.heads), Mat(n, D));
  cache.out = Mat(n, l.combined_dim());
  const double keep = 1.0 - cfg.dropout;

  for (int h = 0; h < l.heads; ++h) {
    const double* a1 = &l.attn.d[static_cast<size_t>(h) * static_cast<size_t>(l.attn.cols)];
    const double* a2 = a1 + D;
    const double a3 = a1[2 * D];
    const double ep = l.edge_proj[static_cast<size_t>(h)];
    auto& score = cache.score[static_cast<size_t>(h)];
    auto& alpha = cache.alpha[static_cast<size_t>(h)];
    auto& alpha_used = cache.alpha_used[static_cast<size_t>(h)];
    auto& mout = cache.m[static_cast<size_t>(h)];
    for (int v = 0; v < n; ++v) {
      double av = 0.0;
      for (int o = 0; o < D; ++o) av += a1[o] * cache.Z.at(v, o);
      int lo = nb.off[static_cast<size_t>(v)], hi = nb.off[static_cast<size_t>(v) + 1];
      double smax = -std::numeric_limits<double>::infinity();
      for (int p = lo; p < hi; ++p) {
        int u = nb.nbr[static_cast<size_t>(p)];
        double au = 0.0;
        for (int o = 0; o < D; ++o) au += a2[o] * cache.Z.at(u, o);
        double s = av + au + a3 * ep * nb.w[static_cast<size_t>(p)];
        min_abs_preact = std::min(min_abs_preact, std::fabs(s));
        double t = s > 0.0 ? s : cfg.leaky_slope * s;
        score[static_cast<size_t>(p)] = s;
        alpha[static_cast<size_t>(p)] = t;
        smax = std::max(smax, t);
      }
      double denom = 0.0;
      for (int p = lo; p < hi; ++p) {
        alpha[static_cast<size_t>(p)] = std::exp(alpha[static_cast<size_t>(p)] - smax);
        denom += alpha[static_cast<size_t>(p)];
      }
      for (int p = lo; p < hi; ++p) {
        alpha[static_cast<size_t>(p)] /= denom;
        double used = alpha[static_cast<size_t>(p)];
        if (training && cfg.dropout > 0.0)
          used = rng->bernoulli(keep) ? used / keep : 0.0;
        alpha_used[static_cast<size_t>(p)] = used;
      }
      for (int o = 0; o < D; ++o) {
        double acc = 0.0;
        for (int p = lo; p < hi; ++p)
          acc += alpha_used[static_cast<size_t>(p)] * cache.Z.at(nb.nbr[static_cast<size_t>(p)], o);
        mout.at(v, o) = acc;
        min_abs_preact = std::min(min_abs_preact, std::fabs(acc));
      }
    }
  }

  auto act = [&](double x) {
    if (cfg.sigmoid_activation) return 1.0 / (1.0 + std::exp(-x));
    return x > 0.0 ? x : 0.0;
  };
  if (l.concat) {
    for (int v = 0; v < n; ++v)
      for (int h = 0; h < l.heads; ++h)
        for (int o = 0; o < D; ++o)
          cache.out.at(v, h * D + o) = act(cache.m[static_cast<size_t>(h)].at(v, o));
  } else {
    for (int v = 0; v < n; ++v)
      for (int o = 0; o < D; ++o) {
        double acc = 0.0;
        for (int h = 0; h < l.heads; ++h) acc += act(cache.m[static_cast<size_t>(h)].at(v, o));
        cache.out.at(v, o) = acc / static_cast<double>(l.heads);
      }
  }
}

}  // namespace gat_detail

/// Full forward pass; training=true applies attention and pooled-vector
/// dropout from drop_rng. Output is a probability simplex of length L.
inline ForwardCache forward(const GatModel& model, const InstanceGraph& g,
                            bool training = false, Rng* drop_rng = nullptr) {
  if (g.node_count < 1) throw std::invalid_argument("forward: empty graph");
  for (const auto& f : g.node_features)
    if (static_cast<int>(f.size()) != model.cfg.in_dim)
      throw std::invalid_argument("forward: node feature dim mismatch");
  if (training && model.cfg.dropout > 0.0 && !drop_rng)
    throw std::invalid_argument("forward: training mode needs an RNG");
  ForwardCache c;
  c.nb = gat_detail::build_neighborhood(g);
  const int n = g.node_count;
  Mat X(n, model.cfg.in_dim);
  for (int v = 0; v < n; ++v)
    for (int i = 0; i < model.cfg.in_dim; ++i)
      X.at(v, i) = g.node_features[static_cast<size_t>(v)][static_cast<size_t>(i)];
  gat_detail::run_layer(model.l1, model.cfg, c.nb, X, c.c1, training, drop_rng,
                        c.min_abs_preact);
  gat_detail::run_layer(model.l2, model.cfg, c.nb, c.c1.out, c.c2, training, drop_rng,
                        c.min_abs_preact);

  const int D = model.cfg.hidden;
  c.pooled_raw.assign(static_cast<size_t>(D), 0.0);
  for (int v = 0; v < n; ++v)
    for (int o = 0; o < D; ++o) c.pooled_raw[static_cast<size_t>(o)] += c.c2.out.at(v, o);
  for (auto& x : c.pooled_raw) x /= static_cast<double>(n);

  c.pool_mask.assign(static_cast<size_t>(D), 1.0);
  if (training && model.cfg.dropout > 0.0) {
    double keep = 1.0 - model.cfg.dropout;
    for (auto& mskv : c.pool_mask) mskv = drop_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
  }
  c.pooled.resize(static_cast<size_t>(D));
  for (int o = 0; o < D; ++o)
    c.pooled[static_cast<size_t>(o)] = c.pooled_raw[static_cast<size_t>(o)] * c.pool_mask[static_cast<size_t>(o)];

  c.logits.assign(static_cast<size_t>(model.num_classes), 0.0);
  for (int k = 0; k < model.num_classes; ++k) {
    double acc = model.head_b[static_cast<size_t>(k)];
    for (int o = 0; o < D; ++o) acc += model.head_w.at(k, o) * c.pooled[static_cast<size_t>(o)];
    c.logits[static_cast<size_t>(k)] = acc;
  }
  double lmax = *std::max_element(c.logits.begin(), c.logits.end());
  double denom = 0.0;
  c.probs.resize(c.logits.size());
  for (size_t k = 0; k < c.logits.size(); ++k) {
    c.probs[k] = std::exp(c.logits[k] - lmax);
    denom += c.probs[k];
  }
  for (auto& p : c.probs) p /= denom;
  return c;
}

/// Cross-entropy against the true label; probability clamped at 1e-12.
inline double loss(const std::vector<double>& probs, int label) {
  if (label < 0 || static_cast<size_t>(label) >= probs.size())
    throw std::invalid_argument("loss: label out of range");
  return -std::log(std::max(probs[static_cast<size_t>(label)], 1e-12));
}

namespace gat_detail {

inline void backward_layer(const GatLayer& l, const GatConfig& cfg, const Neighborhood& nb,
                           const LayerCache& cache, const Mat& dout, GatLayer& grad,
                           Mat& dX) {
  const int n = cache.X.rows;
  const int D = l.out_dim;
  Mat dZ(n, D);
  auto act_deriv = [&](double pre) {
    if (cfg.sigmoid_activation) {
      double s = 1.0 / (1.0 + std::exp(-pre));
      return s * (1.0 - s);
    }
    return pre > 0.0 ? 1.0 : 0.0;
  };

  std::vector<double> dalpha_used(nb.nbr.size());
  std::vector<double> dm(static_cast<size_t>(D));
  for (int h = 0; h < l.heads; ++h) {
    const double* a1 = &l.attn.d[static_cast<size_t>(h) * static_cast<size_t>(l.attn.cols)];
    const double* a2 = a1 + D;
    const double a3 = a1[2 * D];
    const double ep = l.edge_proj[static_cast<size_t>(h)];
    double* da1 = &grad.attn.d[static_cast<size_t>(h) * static_cast<size_t>(grad.attn.cols)];
    double* da2 = da1 + D;
    double& da3 = da1[2 * D];
    double& dep = grad.edge_proj[static_cast<size_t>(h)];
    const auto& score = cache.score[static_cast<size_t>(h)];
    const auto& alpha = cache.alpha[static_cast<size_t>(h)];
    const auto& alpha_used = cache.alpha_used[static_cast<size_t>(h)];
    const auto& mpre = cache.m[static_cast<size_t>(h)];

    for (int v = 0; v < n; ++v) {
      // Gradient w.r.t. this head's aggregated pre-activation.
      for (int o = 0; o < D; ++o) {
        double g = l.concat ? dout.at(v, h * D + o)
                            : dout.at(v, o) / static_cast<double>(l.heads);
        dm[static_cast<size_t>(o)] = g * act_deriv(mpre.at(v, o));
      }
      int lo = nb.off[static_cast<size_t>(v)], hi = nb.off[static_cast<size_t>(v) + 1];
      double dot_sum = 0.0;  // sum_u alpha_vu * dalpha_vu for softmax backprop
      for (int p = lo; p < hi; ++p) {
        int u = nb.nbr[static_cast<size_t>(p)];
        double da_used = 0.0;
        for (int o = 0; o < D; ++o) {
          da_used += dm[static_cast<size_t>(o)] * cache.Z.at(u, o);
          dZ.at(u, o) += alpha_used[static_cast<size_t>(p)] * dm[static_cast<size_t>(o)];
        }
        // Undo the dropout scaling: alpha_used = alpha * mask/keep.
        double da = alpha[static_cast<size_t>(p)] > 0.0
                        ? da_used * alpha_used[static_cast<size_t>(p)] / alpha[static_cast<size_t>(p)]
                        : 0.0;
        dalpha_used[static_cast<size_t>(p)] = da;
        dot_sum += alpha[static_cast<size_t>(p)] * da;
      }
      for (int p = lo; p < hi; ++p) {
        int u = nb.nbr[static_cast<size_t>(p)];
        double dt = alpha[static_cast<size_t>(p)] * (dalpha_used[static_cast<size_t>(p)] - dot_sum);
        double s = score[static_cast<size_t>(p)];
        double ds = dt * (s > 0.0 ? 1.0 : cfg.leaky_slope);
        for (int o = 0; o < D; ++o) {
          da1[o] += ds * cache.Z.at(v, o);
          da2[o] += ds * cache.Z.at(u, o);
          dZ.at(v, o) += ds * a1[o];
          dZ.at(u, o) += ds * a2[o];
        }
        da3 += ds * ep * nb.w[static_cast<size_t>(p)];
        dep += ds * a3 * nb.w[static_cast<size_t>(p)];
      }
    }
  }

  dX = Mat(n, l.in_dim);
  for (int v = 0; v < n; ++v)
    for (int o = 0; o < D; ++o) {
      double g = dZ.at(v, o);
      if (g == 0.0) continue;
      for (int i = 0; i < l.in_dim; ++i) {
        grad.W.at(o, i) += g * cache.X.at(v, i);
        dX.at(v, i) += g * l.W.at(o, i);
      }
    }
}

}  // namespace gat_detail

/// Accumulates dLoss/dparams into `grads` (shapes mirror the model).
inline void backward(const GatModel& model, const ForwardCache& c, int label,
                     GatModel& grads) {
  const int n = c.c1.X.rows;
  const int D = model.cfg.hidden;
  std::vector<double> dlogits(c.probs);
  dlogits[static_cast<size_t>(label)] -= 1.0;

  std::vector<double> dpooled(static_cast<size_t>(D), 0.0);
  for (int k = 0; k < model.num_classes; ++k) {
    grads.head_b[static_cast<size_t>(k)] += dlogits[static_cast<size_t>(k)];
    for (int o = 0; o < D; ++o) {
      grads.head_w.at(k, o) += dlogits[static_cast<size_t>(k)] * c.pooled[static_cast<size_t>(o)];
      dpooled[static_cast<size_t>(o)] += dlogits[static_cast<size_t>(k)] * model.head_w.at(k, o);
    }
  }
  Mat dout2(n, D);
  for (int v = 0; v < n; ++v)
    for (int o = 0; o < D; ++o)
      dout2.at(v, o) = dpooled[static_cast<size_t>(o)] * c.pool_mask[static_cast<size_t>(o)] /
                       static_cast<double>(n);

  Mat dout1;
  gat_detail::backward_layer(model.l2, model.cfg, c.nb, c.c2, dout2, grads.l2, dout1);
  Mat dX0;
  gat_detail::backward_layer(model.l1, model.cfg, c.nb, c.c1, dout1, grads.l1, dX0);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace gat_detail {

struct Adam {
  GatModel m, v;
  long long t = 0;

  explicit Adam(const GatModel& model) : m(zeros_like(model)), v(zeros_like(model)) {}

  void step(GatModel& model, GatModel& grads, const TrainConfig& cfg) {
    ++t;
    auto mp = param_ptrs(model);
    auto gp = param_ptrs(grads);
    auto m1 = param_ptrs(m);
    auto m2 = param_ptrs(v);
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t i = 0; i < mp.size(); ++i) {
      double g = *gp[i];
      *m1[i] = cfg.beta1 * *m1[i] + (1.0 - cfg.beta1) * g;
      *m2[i] = cfg.beta2 * *m2[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = *m1[i] / bc1;
      double vhat = *m2[i] / bc2;
      *mp[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
};

}  // namespace gat_detail

inline double validation_accuracy(const GatModel& model,
                                  const std::vector<const InstanceGraph*>& graphs) {
  if (graphs.empty()) return 0.0;
  size_t correct = 0;
  for (const auto* g : graphs) {
    auto c = forward(model, *g, false);
    int arg = 0;
    for (size_t k = 1; k < c.probs.size(); ++k)
      if (c.probs[k] > c.probs[static_cast<size_t>(arg)]) arg = static_cast<int>(k);
    correct += arg == g->label;
  }
  return static_cast<double>(correct) / static_cast<double>(graphs.size());
}

/// Minibatch Adam over the shuffled train split; returns the checkpoint
/// with the highest validation accuracy (ties resolve to the earlier
/// epoch). Deterministic per seed; NaN loss aborts.
inline GatModel train(GatModel model, const std::vector<const InstanceGraph*>& train_set,
                      const std::vector<const InstanceGraph*>& val_set,
                      const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("train: both splits must be nonempty");
  for (const auto* g : train_set)
    if (g->label < 0 || g->label >= model.num_classes)
      throw std::invalid_argument("train: label outside {0..L-1}");
  if (cfg.epochs == 0) return model;

  Rng rng(cfg.seed);
  gat_detail::Adam adam(model);
  GatModel best = model;
  double best_acc = -1.0;
  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      GatModel grads = zeros_like(model);
      double batch_loss = 0.0;
      for (size_t i = start; i < stop; ++i) {
        const InstanceGraph& g = *train_set[order[i]];
        auto cache = forward(model, g, true, &rng);
        batch_loss += loss(cache.probs, g.label);
        backward(model, cache, g.label, grads);
      }
      double scale = 1.0 / static_cast<double>(stop - start);
      for (double* p : param_ptrs(grads)) *p *= scale;
      batch_loss *= scale;
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: NaN loss at epoch " + std::to_string(epoch) +
                                 " batch " + std::to_string(start / static_cast<size_t>(cfg.batch_size)));
      adam.step(model, grads, cfg);
    }
    double acc = validation_accuracy(model, val_set);
    if (acc > best_acc) {
      best_acc = acc;
      best = model;
    }
  }
  return best;
}

/// Modal class of a vote tally; ties resolve to the smallest class index.
inline int modal_vote(const std::vector<int>& votes) {
  int best = 0;
  for (size_t k = 1; k < votes.size(); ++k)
    if (votes[k] > votes[static_cast<size_t>(best)]) best = static_cast<int>(k);
  return best;
}

/// Majority vote over `count` node-sampled subgraphs (dropout off).
inline int predict_majority(const GatModel& model, const InstanceGraph& g, int count = 20,
                            double rate = 0.10, uint64_t seed = 0) {
  if (g.node_count < 1) throw std::invalid_argument("predict_majority: empty graph");
  auto samples = sample_nodes(g, rate, count, seed);
  std::vector<int> votes(static_cast<size_t>(model.num_classes), 0);
  for (const auto& s : samples) {
    auto c = forward(model, s.graph, false);
    int arg = 0;
    for (size_t k = 1; k < c.probs.size(); ++k)
      if (c.probs[k] > c.probs[static_cast<size_t>(arg)]) arg = static_cast<int>(k);
    ++votes[static_cast<size_t>(arg)];
  }
  return modal_vote(votes);
}

/// Loss-only forward recomputed in scalar type T. The finite-difference
/// oracle runs this in extended precision so difference quotients of
/// near-zero gradients are not drowned by double rounding.
template <typename T>
T forward_loss(const GatModel& model, const InstanceGraph& g, int label) {
  const auto nb = gat_detail::build_neighborhood(g);
  const int n = g.node_count;
  const int H = model.cfg.heads;
  auto layer_pass = [&](const GatLayer& l, const std::vector<T>& X) {
    const int D = l.out_dim;
    const int F = l.in_dim;
    std::vector<T> Z(static_cast<size_t>(n) * static_cast<size_t>(D), T(0));
    for (int v = 0; v < n; ++v)
      for (int o = 0; o < D; ++o) {
        T acc(0);
        for (int i = 0; i < F; ++i)
          acc += T(l.W.at(o, i)) * X[static_cast<size_t>(v) * static_cast<size_t>(F) + static_cast<size_t>(i)];
        Z[static_cast<size_t>(v) * static_cast<size_t>(D) + static_cast<size_t>(o)] = acc;
      }
    auto act = [&](T x) {
      if (model.cfg.sigmoid_activation) return T(1) / (T(1) + std::exp(-x));
      return x > T(0) ? x : T(0);
    };
    std::vector<T> out(static_cast<size_t>(n) * static_cast<size_t>(l.combined_dim()), T(0));
    std::vector<T> t(nb.nbr.size());
    for (int h = 0; h < H; ++h) {
      const double* a1 = &l.attn.d[static_cast<size_t>(h) * static_cast<size_t>(l.attn.cols)];
      const double* a2 = a1 + D;
      const T a3 = T(a1[2 * D]);
      const T ep = T(l.edge_proj[static_cast<size_t>(h)]);
      for (int v = 0; v < n; ++v) {
        int lo = nb.off[static_cast<size_t>(v)], hi = nb.off[static_cast<size_t>(v) + 1];
        T av(0);
        for (int o = 0; o < D; ++o)
          av += T(a1[o]) * Z[static_cast<size_t>(v) * static_cast<size_t>(D) + static_cast<size_t>(o)];
        T smax = -std::numeric_limits<T>::infinity();
        for (int p = lo; p < hi; ++p) {
          int u = nb.nbr[static_cast<size_t>(p)];
          T au(0);
          for (int o = 0; o < D; ++o)
            au += T(a2[o]) * Z[static_cast<size_t>(u) * static_cast<size_t>(D) + static_cast<size_t>(o)];
          T s = av + au + a3 * ep * T(nb.w[static_cast<size_t>(p)]);
          t[static_cast<size_t>(p)] = s > T(0) ? s : T(model.cfg.leaky_slope) * s;
          smax = std::max(smax, t[static_cast<size_t>(p)]);
        }
        T denom(0);
        for (int p = lo; p < hi; ++p) {
          t[static_cast<size_t>(p)] = std::exp(t[static_cast<size_t>(p)] - smax);
          denom += t[static_cast<size_t>(p)];
        }
        for (int o = 0; o < D; ++o) {
          T acc(0);
          for (int p = lo; p < hi; ++p)
            acc += t[static_cast<size_t>(p)] / denom *
                   Z[static_cast<size_t>(nb.nbr[static_cast<size_t>(p)]) * static_cast<size_t>(D) + static_cast<size_t>(o)];
          T a = act(acc);
          if (l.concat)
            out[static_cast<size_t>(v) * static_cast<size_t>(l.combined_dim()) + static_cast<size_t>(h * D + o)] = a;
          else
            out[static_cast<size_t>(v) * static_cast<size_t>(D) + static_cast<size_t>(o)] += a / T(H);
        }
      }
    }
    return out;
  };

  std::vector<T> X0(static_cast<size_t>(n) * static_cast<size_t>(model.cfg.in_dim));
  for (int v = 0; v < n; ++v)
    for (int i = 0; i < model.cfg.in_dim; ++i)
      X0[static_cast<size_t>(v) * static_cast<size_t>(model.cfg.in_dim) + static_cast<size_t>(i)] =
          T(g.node_features[static_cast<size_t>(v)][static_cast<size_t>(i)]);
  auto h1 = layer_pass(model.l1, X0);
  auto h2 = layer_pass(model.l2, h1);
  const int D = model.cfg.hidden;
  std::vector<T> pooled(static_cast<size_t>(D), T(0));
  for (int v = 0; v < n; ++v)
    for (int o = 0; o < D; ++o)
      pooled[static_cast<size_t>(o)] += h2[static_cast<size_t>(v) * static_cast<size_t>(D) + static_cast<size_t>(o)];
  for (auto& x : pooled) x /= T(n);
  std::vector<T> logits(static_cast<size_t>(model.num_classes));
  for (int k = 0; k < model.num_classes; ++k) {
    T acc = T(model.head_b[static_cast<size_t>(k)]);
    for (int o = 0; o < D; ++o) acc += T(model.head_w.at(k, o)) * pooled[static_cast<size_t>(o)];
    logits[static_cast<size_t>(k)] = acc;
  }
  T lmax = *std::max_element(logits.begin(), logits.end());
  T denom(0);
  for (auto& l : logits) denom += std::exp(l - lmax);
  T p = std::exp(logits[static_cast<size_t>(label)] - lmax) / denom;
  return -std::log(std::max(p, T(1e-12)));
}

/// Central finite differences over every parameter against the analytic
/// gradient; returns max |g_an - g_fd| / max(1e-8, |g_an| + |g_fd|).
/// Call with dropout off and away from activation kinks.
inline double grad_check(const GatModel& model, const InstanceGraph& g, int label,
                         double h = 1e-5) {
  GatModel work = model;
  GatModel grads = zeros_like(work);
  auto cache = forward(work, g, false);
  backward(work, cache, label, grads);
  auto wp = param_ptrs(work);
  auto gp = param_ptrs(grads);
  double worst = 0.0;
  for (size_t i = 0; i < wp.size(); ++i) {
    double orig = *wp[i];
    *wp[i] = orig + h;
    long double fplus = forward_loss<long double>(work, g, label);
    *wp[i] = orig - h;
    long double fminus = forward_loss<long double>(work, g, label);
    *wp[i] = orig;
    double fd = static_cast<double>((fplus - fminus) / (2.0L * static_cast<long double>(h)));
    double an = *gp[i];
    double rel = std::fabs(an - fd) / std::max(1e-8, std::fabs(an) + std::fabs(fd));
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Mat mat_from_json(const nlohmann::json& j) {
  Mat m(static_cast<int>(j.size()), j.empty() ? 0 : static_cast<int>(j.at(0).size()));
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) m.at(r, c) = j.at(static_cast<size_t>(r)).at(static_cast<size_t>(c)).get<double>();
  return m;
}

inline nlohmann::json to_json(const GatModel& m) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["config"] = {{"in_dim", m.cfg.in_dim},       {"hidden", m.cfg.hidden},
                 {"heads", m.cfg.heads},         {"dropout", m.cfg.dropout},
                 {"leaky_slope", m.cfg.leaky_slope},
                 {"sigmoid_activation", m.cfg.sigmoid_activation}};
  j["num_classes"] = m.num_classes;
  auto layer_json = [](const GatLayer& l) {
    nlohmann::json lj;
    lj["in_dim"] = l.in_dim;
    lj["out_dim"] = l.out_dim;
    lj["heads"] = l.heads;
    lj["concat"] = l.concat;
    lj["W"] = to_json(l.W);
    lj["attn"] = to_json(l.attn);
    lj["edge_proj"] = l.edge_proj;
    return lj;
  };
  j["layer1"] = layer_json(m.l1);
  j["layer2"] = layer_json(m.l2);
  j["head_w"] = to_json(m.head_w);
  j["head_b"] = m.head_b;
  return j;
}

inline GatModel gat_from_json(const nlohmann::json& j) {
  if (j.at("schema_version").get<int>() != 1)
    throw std::runtime_error("gat_from_json: unsupported schema version");
  GatModel m;
  const auto& cj = j.at("config");
  m.cfg.in_dim = cj.at("in_dim").get<int>();
  m.cfg.hidden = cj.at("hidden").get<int>();
  m.cfg.heads = cj.at("heads").get<int>();
  m.cfg.dropout = cj.at("dropout").get<double>();
  m.cfg.leaky_slope = cj.at("leaky_slope").get<double>();
  m.cfg.sigmoid_activation = cj.at("sigmoid_activation").get<bool>();
  m.num_classes = j.at("num_classes").get<int>();
  auto layer_from = [](const nlohmann::json& lj) {
    GatLayer l;
    l.in_dim = lj.at("in_dim").get<int>();
    l.out_dim = lj.at("out_dim").get<int>();
    l.heads = lj.at("heads").get<int>();
    l.concat = lj.at("concat").get<bool>();
    l.W = mat_from_json(lj.at("W"));
    l.attn = mat_from_json(lj.at("attn"));
    l.edge_proj = lj.at("edge_proj").get<std::vector<double>>();
    return l;
  };
  m.l1 = layer_from(j.at("layer1"));
  m.l2 = layer_from(j.at("layer2"));
  m.head_w = mat_from_json(j.at("head_w"));
  m.head_b = j.at("head_b").get<std::vector<double>>();
  return m;
}

inline void save_model(const GatModel& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << to_json(m).dump(2) << '\n';
}

inline GatModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file: " + path);
  nlohmann::json j;
  f >> j;
  return gat_from_json(j);
}

}  // namespace isac
