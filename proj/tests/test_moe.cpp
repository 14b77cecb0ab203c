// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "gradcheck.hpp"
#include "mtad/moe.hpp"

using namespace mtad;
using mtad::testing::fill_uniform;

namespace {

struct ExpertFixture {
  ParameterStore<double> store;
  std::vector<std::array<int, 4>> ids;  // per expert: w1 b1 w2 b2

  ExpertFixture(int experts, int d, int hidden, std::uint64_t seed) {
    Rng rng(seed);
    for (int e = 0; e < experts; ++e) {
      std::array<int, 4> id{};
      id[0] = store.add("e" + std::to_string(e) + ".w1", d, hidden);
      id[1] = store.add("e" + std::to_string(e) + ".b1", 1, hidden);
      id[2] = store.add("e" + std::to_string(e) + ".w2", hidden, d);
      id[3] = store.add("e" + std::to_string(e) + ".b2", 1, d);
      for (int k = 0; k < 4; ++k) fill_uniform(store[id[k]].value, rng);
      ids.push_back(id);
    }
  }

  std::vector<ExpertLeaves<double>> leaves(Graph<double>& g) {
    std::vector<ExpertLeaves<double>> out;
    for (const auto& id : ids)
      out.push_back({g.leaf(store[id[0]]), g.leaf(store[id[1]]), g.leaf(store[id[2]]),
                     g.leaf(store[id[3]])});
    return out;
  }
};

}  // namespace

TEST_CASE("expert assignment follows the block/round-robin rule") {
  SUBCASE("K=5: one distinct expert per task") {
    auto a = assign_experts(5);
    for (int t = 0; t < kNumTasks; ++t) {
      REQUIRE(a.task_experts[t].size() == 1);
      CHECK(a.task_experts[t][0] == t);
    }
  }
  SUBCASE("K=10: disjoint pairs") {
    auto a = assign_experts(10);
    std::vector<int> seen;
    for (int t = 0; t < kNumTasks; ++t) {
      REQUIRE(a.task_experts[t].size() == 2);
      CHECK(a.task_experts[t][0] == 2 * t);
      CHECK(a.task_experts[t][1] == 2 * t + 1);
      for (int e : a.task_experts[t]) seen.push_back(e);
    }
    std::sort(seen.begin(), seen.end());
    CHECK(std::unique(seen.begin(), seen.end()) == seen.end());
  }
  SUBCASE("K=7: first two tasks get the extra experts") {
    auto a = assign_experts(7);
    CHECK(a.task_experts[0] == std::vector<int>{0, 1});
    CHECK(a.task_experts[1] == std::vector<int>{2, 3});
    CHECK(a.task_experts[2] == std::vector<int>{4});
    CHECK(a.task_experts[3] == std::vector<int>{5});
    CHECK(a.task_experts[4] == std::vector<int>{6});
  }
  SUBCASE("K=2: shared round-robin") {
    auto a = assign_experts(2);
    CHECK(a.task_experts[0] == std::vector<int>{0});
    CHECK(a.task_experts[1] == std::vector<int>{1});
    CHECK(a.task_experts[2] == std::vector<int>{0});
    CHECK(a.task_experts[3] == std::vector<int>{1});
    CHECK(a.task_experts[4] == std::vector<int>{0});
  }
  SUBCASE("K=0 rejected") { CHECK_THROWS_AS(assign_experts(0), ConfigError); }
}

TEST_CASE("moe forward equals its experts where it must") {
  const int d = 2, hidden = 3;
  ExpertFixture fx(2, d, hidden, 42);
  auto assignment = assign_experts(5);
  // task 0 -> expert 0 only under K=5; craft a custom assignment with both
  ExpertAssignment both;
  both.num_experts = 2;
  for (int t = 0; t < kNumTasks; ++t) both.task_experts[t] = {0, 1};

  Matrix<double> x(1, d);
  x << 0.3, -0.7;

  SUBCASE("single assigned expert: output equals that expert") {
    ExpertAssignment single;
    single.num_experts = 2;
    for (int t = 0; t < kNumTasks; ++t) single.task_experts[t] = {1};
    Graph<double> g;
    auto leaves = fx.leaves(g);
    Var<double> out = moe_forward(g.constant(x), TaskId::kMim, single, nullptr, leaves);
    Var<double> direct =
        feed_forward(g.constant(x), leaves[1].w1, leaves[1].b1, leaves[1].w2, leaves[1].b2);
    CHECK((out.val() - direct.val()).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("two identical experts: mean equals either") {
    for (int k = 0; k < 4; ++k) fx.store[fx.ids[1][k]].value = fx.store[fx.ids[0][k]].value;
    Graph<double> g;
    auto leaves = fx.leaves(g);
    Var<double> out = moe_forward(g.constant(x), TaskId::kMim, both, nullptr, leaves);
    Var<double> direct =
        feed_forward(g.constant(x), leaves[0].w1, leaves[0].b1, leaves[0].w2, leaves[0].b2);
    CHECK((out.val() - direct.val()).cwiseAbs().maxCoeff() < 1e-15);
  }

  SUBCASE("two experts on one token match a straight-line two-matmul oracle") {
    Graph<double> g;
    auto leaves = fx.leaves(g);
    Var<double> out = moe_forward(g.constant(x), TaskId::kJigsaw, both, nullptr, leaves);

    auto ffn_oracle = [&](int e) {
      Eigen::RowVectorXd h = x.row(0) * fx.store[fx.ids[e][0]].value;
      h += fx.store[fx.ids[e][1]].value.row(0);
      for (int i = 0; i < h.size(); ++i)
        h(i) = 0.5 * h(i) * (1.0 + std::erf(h(i) * 0.7071067811865475));
      Eigen::RowVectorXd y = h * fx.store[fx.ids[e][2]].value;
      y += fx.store[fx.ids[e][3]].value.row(0);
      return y;
    };
    Eigen::RowVectorXd expect = 0.5 * (ffn_oracle(0) + ffn_oracle(1));
    CHECK((out.val().row(0) - expect).cwiseAbs().maxCoeff() < 1e-14);
  }

  SUBCASE("averaging linearity: scaling one expert's contribution") {
    Graph<double> g;
    auto leaves = fx.leaves(g);
    Var<double> base = moe_forward(g.constant(x), TaskId::kMim, both, nullptr, leaves);
    Var<double> e0 =
        feed_forward(g.constant(x), leaves[0].w1, leaves[0].b1, leaves[0].w2, leaves[0].b2);
    // doubling expert 0's output layer doubles its term in the 2-expert mean
    fx.store[fx.ids[0][2]].value *= 2.0;
    fx.store[fx.ids[0][3]].value *= 2.0;
    Graph<double> g2;
    auto leaves2 = fx.leaves(g2);
    Var<double> scaled = moe_forward(g2.constant(x), TaskId::kMim, both, nullptr, leaves2);
    Matrix<double> expect = base.val() + 0.5 * e0.val();
    CHECK((scaled.val() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("mask deactivating all experts of a task is an invariant violation") {
    Graph<double> g;
    auto leaves = fx.leaves(g);
    std::vector<std::uint8_t> none = {0, 0};
    CHECK_THROWS_AS(moe_forward(g.constant(x), TaskId::kMim, both, &none, leaves),
                    InvariantError);
  }
}

TEST_CASE("expert dropout sampling") {
  SUBCASE("rate 0 keeps everything active") {
    Rng rng(1);
    auto a = assign_experts(10);
    auto mask = sample_dropout(0.0, a, 3, rng);
    for (const auto& layer : mask.active)
      for (auto v : layer) CHECK(v == 1);
  }

  SUBCASE("rate 0.99 with K=5 forces reinstatement, never starves a task") {
    Rng rng(2);
    auto a = assign_experts(5);
    for (int i = 0; i < 2000; ++i) {
      auto mask = sample_dropout(0.99, a, 2, rng);
      CHECK(mask.valid_for(a));
    }
  }

  SUBCASE("empirical drop frequency matches the rate before reinstatement") {
    Rng rng(3);
    auto a = assign_experts(10);
    const int samples = 10000;
    const double rate = 0.10;
    std::vector<int> dropped(10, 0);
    for (int i = 0; i < samples; ++i) {
      auto mask = sample_dropout(rate, a, 1, rng);
      for (int e = 0; e < 10; ++e) dropped[e] += mask.initially_dropped[0][e];
      CHECK(mask.valid_for(a));
    }
    for (int e = 0; e < 10; ++e) {
      double freq = static_cast<double>(dropped[e]) / samples;
      CHECK(std::abs(freq - rate) < 0.02);
    }
  }

  SUBCASE("invalid rates rejected") {
    Rng rng(4);
    auto a = assign_experts(5);
    CHECK_THROWS_AS(sample_dropout(1.0, a, 1, rng), ConfigError);
    CHECK_THROWS_AS(sample_dropout(-0.1, a, 1, rng), ConfigError);
  }
}

TEST_CASE("mask validity over many samples at several rates") {
  Rng rng(5);
  auto a = assign_experts(7);
  for (double rate : {0.05, 0.5, 0.9}) {
    for (int i = 0; i < 20000; ++i) {
      auto mask = sample_dropout(rate, a, 1, rng);
      REQUIRE(mask.valid_for(a));
    }
  }
}

TEST_CASE("activation counters accumulate and export") {
  ActivationCounters counters(2, 3);
  counters.record(0, 1, TaskId::kJigsaw, 17);
  counters.record(0, 1, TaskId::kJigsaw, 3);
  CHECK(counters.count(0, 1, TaskId::kJigsaw) == 20);
  CHECK(counters.count(1, 2, TaskId::kMim) == 0);
  std::string csv = counters.to_csv();
  CHECK(csv.find("0,1,jigsaw,20") != std::string::npos);
  counters.reset();
  CHECK(counters.count(0, 1, TaskId::kJigsaw) == 0);
}
