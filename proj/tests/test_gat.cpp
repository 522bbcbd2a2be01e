#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "isac/gat.hpp"

using namespace isac;

namespace {

/// Random attributed graph in the node-feature schema.
InstanceGraph random_graph(int n, double edge_p, uint64_t seed, int label = -1) {
  Rng rng(seed);
  InstanceGraph g;
  g.instance_id = "rg" + std::to_string(seed);
  g.node_count = n;
  g.label = label;
  for (int i = 0; i < n; ++i)
    g.node_features.push_back({std::tanh(rng.normal()), static_cast<double>(rng.index(8)),
                               static_cast<double>(rng.index(3))});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.bernoulli(edge_p)) g.edges.push_back({i, j, std::tanh(rng.normal())});
  return g;
}

/// Four synthetic families separable by edge weight and feature signs.
InstanceGraph family_graph(int label, uint64_t seed) {
  Rng rng(seed);
  InstanceGraph g;
  g.instance_id = "f" + std::to_string(label) + "_" + std::to_string(seed);
  g.node_count = 6 + static_cast<int>(rng.index(4));
  g.label = label;
  double sign = label % 2 ? 1.0 : -1.0;
  double density = label < 2 ? 0.9 : 0.3;
  for (int i = 0; i < g.node_count; ++i)
    g.node_features.push_back({sign * 0.7 + 0.05 * rng.normal(),
                               static_cast<double>(g.node_count - 1),
                               label < 2 ? 1.0 : 0.0});
  for (int i = 0; i < g.node_count; ++i)
    for (int j = i + 1; j < g.node_count; ++j)
      if (rng.bernoulli(density)) g.edges.push_back({i, j, sign * 0.5});
  if (g.edges.empty()) g.edges.push_back({0, 1, sign * 0.5});
  return g;
}

}  // namespace

TEST_CASE("parameter count sits in the documented band") {
  for (int L : {2, 3, 4}) {
    auto model = init_gat(GatConfig{}, L, 1);
    size_t count = param_count(model);
    CHECK(count >= 400);
    CHECK(count <= 900);
  }
  // The exact decomposition for L=4: 96 + 328 + 36.
  auto model = init_gat(GatConfig{}, 4, 1);
  CHECK(param_count(model) == 460);
}

TEST_CASE("attention rows sum to one over closed neighborhoods") {
  auto model = init_gat(GatConfig{}, 3, 5);
  for (uint64_t s = 0; s < 10; ++s) {
    auto g = random_graph(2 + static_cast<int>(s % 7), 0.4, s);
    auto c = forward(model, g, false);
    for (const auto* layer : {&c.c1, &c.c2}) {
      for (size_t h = 0; h < layer->alpha.size(); ++h)
        for (int v = 0; v < g.node_count; ++v) {
          double sum = 0.0;
          for (int p = c.nb.off[static_cast<size_t>(v)]; p < c.nb.off[static_cast<size_t>(v) + 1]; ++p)
            sum += layer->alpha[h][static_cast<size_t>(p)];
          CHECK(sum == Catch::Approx(1.0).margin(1e-9));
        }
    }
  }
}

TEST_CASE("output lies on the probability simplex") {
  auto model = init_gat(GatConfig{}, 4, 9);
  for (uint64_t s = 0; s < 20; ++s) {
    auto g = random_graph(1 + static_cast<int>(s % 9), 0.5, 1000 + s);
    auto c = forward(model, g, false);
    double sum = 0.0;
    for (double p : c.probs) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("single-node graph is well defined") {
  auto model = init_gat(GatConfig{}, 3, 2);
  InstanceGraph g;
  g.instance_id = "one";
  g.node_count = 1;
  g.node_features = {{0.5, 0.0, 1.0}};
  auto c = forward(model, g, false);
  double sum = 0.0;
  for (double p : c.probs) {
    CHECK(std::isfinite(p));
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(sum == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("identical node embeddings pool to themselves") {
  // All nodes identical and fully connected: by symmetry every node
  // embedding matches, so the pooled vector equals each one.
  auto model = init_gat(GatConfig{}, 3, 7);
  InstanceGraph g;
  g.instance_id = "sym";
  g.node_count = 4;
  for (int i = 0; i < 4; ++i) g.node_features.push_back({0.3, 3.0, 1.0});
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) g.edges.push_back({i, j, 0.2});
  auto c = forward(model, g, false);
  for (int v = 0; v < 4; ++v)
    for (int o = 0; o < model.cfg.hidden; ++o)
      CHECK(c.c2.out.at(v, o) == Catch::Approx(c.pooled_raw[static_cast<size_t>(o)]).margin(1e-12));
}

TEST_CASE("loss values") {
  CHECK(loss({0.0, 1.0}, 1) == 0.0);
  CHECK(loss({0.25, 0.25, 0.25, 0.25}, 2) == Catch::Approx(std::log(4.0)));
  CHECK(loss({1e-20, 1.0 - 1e-20}, 0) == Catch::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(loss({0.5, 0.5}, 2), std::invalid_argument);
}

TEST_CASE("node permutation leaves the pooled output unchanged") {
  auto model = init_gat(GatConfig{}, 3, 11);
  for (uint64_t s = 0; s < 8; ++s) {
    auto g = random_graph(8, 0.5, 42 + s);
    auto base = forward(model, g, false);

    std::vector<int> perm(static_cast<size_t>(g.node_count));
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    Rng rng(s);
    rng.shuffle(perm);
    InstanceGraph pg;
    pg.instance_id = g.instance_id;
    pg.node_count = g.node_count;
    pg.node_features.resize(static_cast<size_t>(g.node_count));
    for (int i = 0; i < g.node_count; ++i)
      pg.node_features[static_cast<size_t>(perm[static_cast<size_t>(i)])] =
          g.node_features[static_cast<size_t>(i)];
    for (const auto& e : g.edges) {
      int u = perm[static_cast<size_t>(e.u)], v = perm[static_cast<size_t>(e.v)];
      pg.edges.push_back({std::min(u, v), std::max(u, v), e.w});
    }
    auto permuted = forward(model, pg, false);
    for (size_t k = 0; k < base.probs.size(); ++k)
      CHECK(std::fabs(base.probs[k] - permuted.probs[k]) <= 1e-6);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  for (uint64_t s = 0; s < 6; ++s) {
    GatModel model = init_gat(GatConfig{}, 3, 100 + s);
    InstanceGraph g;
    double worst = 1.0;
    // Resample until clear of activation kinks.
    for (uint64_t attempt = 0;; ++attempt) {
      g = random_graph(5, 0.5, 500 + 31 * s + attempt);
      auto c = forward(model, g, false);
      if (c.min_abs_preact >= 1e-3) break;
      REQUIRE(attempt < 200);
    }
    worst = grad_check(model, g, static_cast<int>(s % 3));
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("linear-head gradients are exact to 1e-6") {
  GatModel model = init_gat(GatConfig{}, 4, 77);
  auto g = random_graph(6, 0.4, 901);
  GatModel grads = zeros_like(model);
  auto cache = forward(model, g, false);
  backward(model, cache, 1, grads);
  GatModel work = model;
  auto wp = param_ptrs(work);
  auto gp = param_ptrs(grads);
  size_t head_params = static_cast<size_t>(model.num_classes * model.cfg.hidden + model.num_classes);
  const double h = 1e-5;
  for (size_t i = wp.size() - head_params; i < wp.size(); ++i) {
    double orig = *wp[i];
    *wp[i] = orig + h;
    double fp = loss(forward(work, g, false).probs, 1);
    *wp[i] = orig - h;
    double fm = loss(forward(work, g, false).probs, 1);
    *wp[i] = orig;
    double fd = (fp - fm) / (2 * h);
    CHECK(std::fabs(*gp[i] - fd) / std::max(1e-8, std::fabs(*gp[i]) + std::fabs(fd)) <= 1e-6);
  }
}

TEST_CASE("near-converged model still passes the gradient check") {
  // Overfit a single graph briefly, then re-check gradients.
  GatModel model = init_gat(GatConfig{}, 2, 13);
  auto g = random_graph(5, 0.6, 303, 1);
  gat_detail::Adam adam(model);
  TrainConfig step_cfg;
  for (int it = 0; it < 150; ++it) {
    GatModel grads = zeros_like(model);
    auto cache = forward(model, g, false);
    backward(model, cache, 1, grads);
    adam.step(model, grads, step_cfg);
  }
  auto cache = forward(model, g, false);
  CHECK(cache.probs[1] > 0.95);
  if (cache.min_abs_preact >= 1e-3) CHECK(grad_check(model, g, 1) <= 1e-4);
}

TEST_CASE("training overfits a small synthetic dataset") {
  std::vector<InstanceGraph> graphs;
  for (int label = 0; label < 4; ++label)
    for (int i = 0; i < 10; ++i) graphs.push_back(family_graph(label, static_cast<uint64_t>(label * 100 + i)));
  std::vector<const InstanceGraph*> train_set, val_set;
  for (size_t i = 0; i < graphs.size(); ++i)
    (i % 10 < 9 ? train_set : val_set).push_back(&graphs[i]);
  GatModel model = init_gat(GatConfig{}, 4, 5);
  TrainConfig tc;
  tc.epochs = 300;
  tc.seed = 2;
  auto trained = train(model, train_set, val_set, tc);
  CHECK(validation_accuracy(trained, train_set) >= 0.95);
}

TEST_CASE("zero epochs returns the initialized model unchanged") {
  GatModel model = init_gat(GatConfig{}, 3, 21);
  auto g = random_graph(5, 0.5, 7, 0);
  std::vector<const InstanceGraph*> set{&g};
  TrainConfig tc;
  tc.epochs = 0;
  auto out = train(model, set, set, tc);
  CHECK(to_json(out).dump() == to_json(model).dump());
}

TEST_CASE("training is deterministic per seed") {
  std::vector<InstanceGraph> graphs;
  for (int label = 0; label < 2; ++label)
    for (int i = 0; i < 6; ++i) graphs.push_back(family_graph(label, static_cast<uint64_t>(label * 50 + i)));
  std::vector<const InstanceGraph*> train_set, val_set;
  for (size_t i = 0; i < graphs.size(); ++i)
    (i % 6 < 5 ? train_set : val_set).push_back(&graphs[i]);
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = 9;
  auto a = train(init_gat(GatConfig{}, 2, 3), train_set, val_set, tc);
  auto b = train(init_gat(GatConfig{}, 2, 3), train_set, val_set, tc);
  CHECK(to_json(a).dump() == to_json(b).dump());
}

TEST_CASE("nan loss aborts training with location info") {
  // The sigmoid variant propagates NaN through to the loss (ReLU maps a
  // NaN pre-activation to 0, so the poisoned value must survive the
  // activation to be observable).
  InstanceGraph g = random_graph(4, 0.5, 61, 0);
  g.node_features[0][0] = std::numeric_limits<double>::quiet_NaN();
  InstanceGraph ok = random_graph(4, 0.5, 62, 1);
  std::vector<const InstanceGraph*> set{&g, &ok};
  TrainConfig tc;
  tc.epochs = 1;
  GatConfig cfg;
  cfg.sigmoid_activation = true;
  GatModel model = init_gat(cfg, 2, 1);
  CHECK_THROWS_WITH(train(model, set, set, tc), Catch::Matchers::ContainsSubstring("epoch"));
}

TEST_CASE("constant model votes its class regardless of sampling") {
  GatModel model = init_gat(GatConfig{}, 4, 17);
  std::fill(model.head_w.d.begin(), model.head_w.d.end(), 0.0);
  model.head_b = {0.0, 0.0, 5.0, 0.0};
  auto g = random_graph(40, 0.3, 11);
  CHECK(predict_majority(model, g, 20, 0.10, 3) == 2);
}

TEST_CASE("vote ties resolve to the smallest class") {
  CHECK(modal_vote({10, 10}) == 0);
  CHECK(modal_vote({0, 7, 7}) == 1);
  CHECK(modal_vote({1, 3, 2}) == 1);
}

TEST_CASE("repeated inference with one seed is identical") {
  GatModel model = init_gat(GatConfig{}, 3, 23);
  auto g = random_graph(30, 0.4, 19);
  int a = predict_majority(model, g, 20, 0.10, 5);
  int b = predict_majority(model, g, 20, 0.10, 5);
  CHECK(a == b);
}

TEST_CASE("model json round trip reproduces predictions") {
  GatModel model = init_gat(GatConfig{}, 3, 29);
  auto back = gat_from_json(to_json(model));
  for (uint64_t s = 0; s < 10; ++s) {
    auto g = random_graph(6, 0.5, 700 + s);
    auto p1 = forward(model, g, false).probs;
    auto p2 = forward(back, g, false).probs;
    CHECK(p1 == p2);
  }
}

TEST_CASE("feature dimension mismatch is rejected") {
  GatModel model = init_gat(GatConfig{}, 3, 31);
  InstanceGraph g;
  g.node_count = 1;
  g.node_features = {{0.1, 0.2, 0.3}};
  CHECK_NOTHROW(forward(model, g, false));
  GatConfig wide;
  wide.in_dim = 4;
  CHECK_THROWS_AS(forward(init_gat(wide, 3, 1), g, false), std::invalid_argument);
}
