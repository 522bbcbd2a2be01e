#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "isac/bqp.hpp"

using namespace isac;

namespace {

BqpInstance tiny(int n, std::vector<QEntry> q, std::vector<AEntry> a = {},
                 std::vector<double> b = {}) {
  BqpInstance inst;
  inst.id = "tiny";
  inst.n = n;
  inst.m = static_cast<int>(b.size());
  inst.q = std::move(q);
  inst.a = std::move(a);
  inst.b = std::move(b);
  inst.validate();
  return inst;
}

/// Naive dense oracle: materialize the full symmetric matrix and run the
/// double loop.
double dense_objective(const BqpInstance& inst, const BitVec& x) {
  std::vector<std::vector<double>> q(static_cast<size_t>(inst.n),
                                     std::vector<double>(static_cast<size_t>(inst.n), 0.0));
  for (const auto& e : inst.q) {
    q[static_cast<size_t>(e.i)][static_cast<size_t>(e.j)] = e.v;
    q[static_cast<size_t>(e.j)][static_cast<size_t>(e.i)] = e.v;
  }
  double acc = 0.0;
  for (int i = 0; i < inst.n; ++i)
    for (int j = 0; j < inst.n; ++j)
      acc += q[static_cast<size_t>(i)][static_cast<size_t>(j)] * x[static_cast<size_t>(i)] *
             x[static_cast<size_t>(j)];
  return acc + inst.c0;
}

}  // namespace

TEST_CASE("objective: diagonal sum") {
  auto inst = tiny(2, {{0, 0, 1.0}, {1, 1, 1.0}});
  CHECK(evaluate_objective(inst, {1, 1}) == 2.0);
}

TEST_CASE("objective: zero vector") {
  auto inst = tiny(3, {{0, 0, 4.0}, {0, 2, -2.0}, {1, 2, 5.0}});
  CHECK(evaluate_objective(inst, {0, 0, 0}) == 0.0);
}

TEST_CASE("objective: off-diagonal counted twice") {
  auto inst = tiny(2, {{0, 1, 3.0}});
  CHECK(evaluate_objective(inst, {1, 1}) == 6.0);
}

TEST_CASE("objective: dimension mismatch") {
  auto inst = tiny(2, {{0, 0, 1.0}});
  CHECK_THROWS_AS(evaluate_objective(inst, {1, 0, 1}), std::invalid_argument);
}

TEST_CASE("objective matches dense oracle on random instances") {
  Rng rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    int n = 2 + static_cast<int>(rng.index(12));
    std::vector<QEntry> q;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        if (rng.bernoulli(0.6)) q.push_back({i, j, rng.uniform(-5.0, 5.0)});
    if (q.empty()) q.push_back({0, 0, 1.0});
    auto inst = tiny(n, q);
    BitVec x(static_cast<size_t>(n));
    for (auto& b : x) b = rng.bernoulli(0.5);
    double got = evaluate_objective(inst, x);
    double want = dense_objective(inst, x);
    CHECK(std::fabs(got - want) <= 1e-9 * std::max(1.0, std::fabs(want)));
  }
}

TEST_CASE("feasibility: no constraints") {
  auto inst = tiny(2, {{0, 0, 1.0}});
  auto [ok, viol] = check_feasibility(inst, {1, 1});
  CHECK(ok);
  CHECK(viol == 0.0);
}

TEST_CASE("feasibility: violated knapsack") {
  auto inst = tiny(2, {{0, 0, 1.0}}, {{0, 0, 1.0}, {0, 1, 1.0}}, {1.0});
  auto [ok, viol] = check_feasibility(inst, {1, 1});
  CHECK_FALSE(ok);
  CHECK(viol == 1.0);
}

TEST_CASE("feasibility: boundary satisfied") {
  auto inst = tiny(2, {{0, 0, 1.0}}, {{0, 0, 1.0}, {0, 1, 1.0}}, {2.0});
  auto [ok, viol] = check_feasibility(inst, {1, 1});
  CHECK(ok);
  CHECK(viol == 0.0);
}

TEST_CASE("qkp: off-diagonal density near target") {
  auto inst = generate_qkp(1000, 0.25, 7);
  double off = 0.0;
  for (const auto& e : inst.q)
    if (e.i != e.j) off += 1.0;
  double expect = 0.25 * 1000.0 * 999.0 / 2.0;
  CHECK(std::fabs(off - expect) <= 0.03 * expect);
}

TEST_CASE("qkp: minimal size forces one pair") {
  auto inst = generate_qkp(2, 1.0, 0);
  int off = 0;
  for (const auto& e : inst.q) off += e.i != e.j;
  CHECK(off == 1);
  CHECK(inst.m == 1);
}

TEST_CASE("qkp: deterministic serialization") {
  auto a = to_json(generate_qkp(50, 0.5, 11)).dump(2);
  auto b = to_json(generate_qkp(50, 0.5, 11)).dump(2);
  CHECK(a == b);
}

TEST_CASE("qkp: density validation") {
  CHECK_THROWS_AS(generate_qkp(10, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_qkp(10, 1.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_qkp(1, 0.5, 1), std::invalid_argument);
}

TEST_CASE("qkp: exhaustive argmin equals original argmax profit") {
  // Replays the generator's documented draw order to rebuild profits and
  // weights independently of the stored matrix.
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const int n = 10;
    const double density = 0.5;
    auto inst = generate_qkp(n, density, seed);
    Rng rng(seed);
    std::vector<long long> profit(n), weight(n);
    for (int i = 0; i < n; ++i) profit[static_cast<size_t>(i)] = rng.uniform_int(1, 100);
    for (int i = 0; i < n; ++i) weight[static_cast<size_t>(i)] = rng.uniform_int(1, 50);
    std::vector<std::vector<long long>> pair(static_cast<size_t>(n),
                                             std::vector<long long>(static_cast<size_t>(n), 0));
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.bernoulli(density))
          pair[static_cast<size_t>(i)][static_cast<size_t>(j)] = rng.uniform_int(1, 100);
    long long wsum = std::accumulate(weight.begin(), weight.end(), 0LL);
    double capacity = std::ceil(0.5 * static_cast<double>(wsum));

    double best_profit = -1.0;
    uint64_t best_mask = 0;
    double best_bqp = std::numeric_limits<double>::infinity();
    uint64_t best_bqp_mask = 0;
    for (uint64_t mask = 0; mask < (1ULL << n); ++mask) {
      long long w = 0;
      for (int i = 0; i < n; ++i)
        if ((mask >> i) & 1ULL) w += weight[static_cast<size_t>(i)];
      if (static_cast<double>(w) > capacity) continue;
      double p = 0.0;
      for (int i = 0; i < n; ++i) {
        if (!((mask >> i) & 1ULL)) continue;
        p += static_cast<double>(profit[static_cast<size_t>(i)]);
        for (int j = i + 1; j < n; ++j)
          if ((mask >> j) & 1ULL) p += static_cast<double>(pair[static_cast<size_t>(i)][static_cast<size_t>(j)]);
      }
      if (p > best_profit) {
        best_profit = p;
        best_mask = mask;
      }
      BitVec x(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) x[static_cast<size_t>(i)] = (mask >> i) & 1ULL;
      double cost = evaluate_objective(inst, x);
      if (cost < best_bqp) {
        best_bqp = cost;
        best_bqp_mask = mask;
      }
    }
    CHECK(best_mask == best_bqp_mask);
    CHECK(best_bqp == -best_profit);
  }
}

TEST_CASE("tsp: coordinates in range and deterministic") {
  auto a = generate_tsp(20, 1);
  auto b = generate_tsp(20, 1);
  REQUIRE(a.size() == 20);
  for (const auto& p : a) {
    CHECK((p[0] >= 0.0 && p[0] < 1.0));
    CHECK((p[1] >= 0.0 && p[1] < 1.0));
  }
  CHECK(a == b);
  CHECK_THROWS_AS(generate_tsp(2, 1), std::invalid_argument);
}

TEST_CASE("tsp: small instance has pairwise distinct points") {
  auto pts = generate_tsp(3, 5);
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) CHECK(pts[i] != pts[j]);
}

TEST_CASE("tsp_to_bqp: valid tour evaluates to exact tour length") {
  std::vector<Coord> coords = {{0.0, 0.0}, {0.5, 0.0}, {1.0, 0.0}};
  double penalty = default_tsp_penalty(coords);
  auto inst = tsp_to_bqp(coords, penalty);
  REQUIRE(inst.n == 9);
  // Tour 0 -> 1 -> 2 -> 0: city c at time c.
  BitVec x(9, 0);
  for (int c = 0; c < 3; ++c) x[static_cast<size_t>(c * 3 + c)] = 1;
  double tour = 0.5 + 0.5 + 1.0;
  CHECK(evaluate_objective(inst, x) == Catch::Approx(tour).margin(1e-12));
}

TEST_CASE("tsp_to_bqp: all-zeros sits at the penalty constants") {
  std::vector<Coord> coords = {{0.0, 0.0}, {0.5, 0.0}, {1.0, 0.0}};
  double penalty = default_tsp_penalty(coords);
  auto inst = tsp_to_bqp(coords, penalty);
  BitVec zeros(9, 0);
  double zero_cost = evaluate_objective(inst, zeros);
  CHECK(zero_cost == 2.0 * 3.0 * penalty);
  BitVec tour(9, 0);
  for (int c = 0; c < 3; ++c) tour[static_cast<size_t>(c * 3 + c)] = 1;
  CHECK(zero_cost > evaluate_objective(inst, tour));
}

TEST_CASE("tsp_to_bqp: n is cities squared") {
  auto inst = tsp_to_bqp(generate_tsp(4, 0), 10.0);
  CHECK(inst.n == 16);
  CHECK(inst.m == 0);
  CHECK_THROWS_AS(tsp_to_bqp({{0, 0}, {1, 1}}, 1.0), std::invalid_argument);
}

TEST_CASE("tsp_to_bqp: permutation ranking matches tour-length ranking") {
  auto coords = generate_tsp(5, 9);
  auto inst = tsp_to_bqp(coords, default_tsp_penalty(coords));
  const int C = 5;
  std::vector<int> perm(C);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::pair<double, double>> costs;  // (tour length, bqp objective)
  do {
    double tour = 0.0;
    for (int t = 0; t < C; ++t)
      tour += euclid(coords[static_cast<size_t>(perm[static_cast<size_t>(t)])],
                     coords[static_cast<size_t>(perm[static_cast<size_t>((t + 1) % C)])]);
    BitVec x(static_cast<size_t>(C * C), 0);
    for (int t = 0; t < C; ++t) x[static_cast<size_t>(perm[static_cast<size_t>(t)] * C + t)] = 1;
    costs.emplace_back(tour, evaluate_objective(inst, x));
  } while (std::next_permutation(perm.begin(), perm.end()));
  auto by_tour = costs;
  std::sort(by_tour.begin(), by_tour.end());
  for (size_t i = 1; i < by_tour.size(); ++i)
    CHECK(by_tour[i - 1].second <= by_tour[i].second + 1e-9);
}

TEST_CASE("instance json round trip") {
  auto inst = generate_qkp(30, 0.4, 3);
  auto back = instance_from_json(to_json(inst));
  CHECK(back.id == inst.id);
  CHECK(back.n == inst.n);
  CHECK(back.m == inst.m);
  CHECK(back.q.size() == inst.q.size());
  CHECK(to_json(back).dump() == to_json(inst).dump());

  auto tsp = tsp_to_bqp(generate_tsp(3, 2), 5.0);
  auto tsp_back = instance_from_json(to_json(tsp));
  CHECK(tsp_back.c0 == tsp.c0);
}

TEST_CASE("validation rejects malformed instances") {
  BqpInstance inst;
  inst.id = "bad";
  inst.n = 2;
  inst.q = {{0, 1, 1.0}, {0, 1, 2.0}};
  CHECK_THROWS_AS(inst.validate(), std::invalid_argument);
  inst.q = {{1, 0, 1.0}};
  CHECK_THROWS_AS(inst.validate(), std::invalid_argument);
  inst.q = {{0, 1, 1.0}};
  inst.m = 1;
  inst.b = {1.0};
  CHECK_THROWS_AS(inst.validate(), std::invalid_argument);  // all-zero A row
}
