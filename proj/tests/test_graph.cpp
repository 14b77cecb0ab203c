// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "gradcheck.hpp"
#include "mtad/nn_ops.hpp"

using namespace mtad;
using mtad::testing::fill_uniform;
using mtad::testing::gradcheck;

namespace {

// store with a single tensor, uniformly filled
int add_random(ParameterStore<double>& store, const std::string& name, int rows, int cols,
               std::uint64_t seed) {
  int id = store.add(name, rows, cols);
  Rng rng(seed);
  fill_uniform(store[id].value, rng);
  return id;
}

}  // namespace

TEST_CASE("gradient of squared norm is 2 theta") {
  ParameterStore<double> store;
  int id = add_random(store, "theta", 3, 4, 1);
  Graph<double> g;
  Var<double> loss = sum_squares(g.leaf(store[id]));
  g.backward(loss.id);
  Matrix<double> expect = 2.0 * store[id].value;
  CHECK((store[id].grad - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward without a recorded forward is a state error") {
  Graph<double> g;
  CHECK_THROWS_AS(g.backward(0), StateError);
  Var<double> c = g.constant_scalar(1.0);
  CHECK_THROWS_AS(g.backward(c.id), StateError);  // no parameter dependence
}

TEST_CASE("basic op gradients agree with finite differences") {
  ParameterStore<double> store;
  int a = add_random(store, "a", 3, 4, 2);
  int b = add_random(store, "b", 4, 2, 3);
  int bias = add_random(store, "bias", 1, 2, 4);
  auto build = [&](Graph<double>& g) {
    Var<double> x = matmul(g.leaf(store[a]), g.leaf(store[b]));
    x = add_rowvec(x, g.leaf(store[bias]));
    x = gelu(x);
    x = scale(x, 1.7);
    Var<double> y = hadamard(x, x);
    y = sub(y, x);
    return sum_squares(y);
  };
  auto r = gradcheck(store, build);
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("softmax, sigmoid and log gradients") {
  ParameterStore<double> store;
  int a = add_random(store, "a", 5, 7, 5);
  auto build = [&](Graph<double>& g) {
    Var<double> x = softmax_rows(g.leaf(store[a]));
    x = sigmoid(x);
    x = clamp_min(x, 1e-9);
    x = log_elem(x);
    return sum_squares(x);
  };
  auto r = gradcheck(store, build);
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("layer norm gradient and statistics") {
  ParameterStore<double> store;
  int x = add_random(store, "x", 6, 8, 7);
  int gm = add_random(store, "gamma", 1, 8, 8);
  int bt = add_random(store, "beta", 1, 8, 9);
  auto build = [&](Graph<double>& g) {
    Var<double> y = layer_norm(g.leaf(store[x]), g.leaf(store[gm]), g.leaf(store[bt]));
    return sum_squares(y);
  };
  auto r = gradcheck(store, build);
  CHECK(r.max_rel_err < 1e-6);

  // pre-affine rows are standardized
  EncodeInspector<double> insp;
  Graph<double> g;
  layer_norm(g.leaf(store[x]), g.leaf(store[gm]), g.leaf(store[bt]), 1e-10, &insp);
  REQUIRE(insp.ln_normalized.size() == 1);
  const auto& xh = insp.ln_normalized[0];
  for (Eigen::Index rr = 0; rr < xh.rows(); ++rr) {
    CHECK(std::abs(xh.row(rr).mean()) < 1e-5);
    double var = (xh.row(rr).array() - xh.row(rr).mean()).square().mean();
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("multi-head attention gradient agrees with finite differences") {
  const int batch = 2, seq = 3, d = 4, heads = 2;
  ParameterStore<double> store;
  int x = add_random(store, "x", batch * seq, d, 10);
  int wq = add_random(store, "wq", d, d, 11);
  int bq = add_random(store, "bq", 1, d, 12);
  int wk = add_random(store, "wk", d, d, 13);
  int bk = add_random(store, "bk", 1, d, 14);
  int wv = add_random(store, "wv", d, d, 15);
  int bv = add_random(store, "bv", 1, d, 16);
  int wo = add_random(store, "wo", d, d, 17);
  int bo = add_random(store, "bo", 1, d, 18);
  auto build = [&](Graph<double>& g) {
    Var<double> y = multi_head_attention(
        g.leaf(store[x]), batch, seq, heads, g.leaf(store[wq]), g.leaf(store[bq]),
        g.leaf(store[wk]), g.leaf(store[bk]), g.leaf(store[wv]), g.leaf(store[bv]),
        g.leaf(store[wo]), g.leaf(store[bo]));
    return sum_squares(y);
  };
  auto r = gradcheck(store, build);
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("attention rows are probability distributions") {
  const int batch = 2, seq = 5, d = 8, heads = 4;
  ParameterStore<double> store;
  int x = add_random(store, "x", batch * seq, d, 20);
  std::vector<int> w;
  for (int i = 0; i < 4; ++i) w.push_back(add_random(store, "w" + std::to_string(i), d, d, 21 + i));
  std::vector<int> b;
  for (int i = 0; i < 4; ++i) b.push_back(add_random(store, "b" + std::to_string(i), 1, d, 25 + i));
  EncodeInspector<double> insp;
  Graph<double> g;
  multi_head_attention(g.leaf(store[x]), batch, seq, heads, g.leaf(store[w[0]]),
                       g.leaf(store[b[0]]), g.leaf(store[w[1]]), g.leaf(store[b[1]]),
                       g.leaf(store[w[2]]), g.leaf(store[b[2]]), g.leaf(store[w[3]]),
                       g.leaf(store[b[3]]), &insp);
  REQUIRE(insp.attention_rows.size() == static_cast<std::size_t>(batch * heads));
  for (const auto& a : insp.attention_rows)
    for (Eigen::Index rr = 0; rr < a.rows(); ++rr) {
      CHECK(std::abs(a.row(rr).sum() - 1.0) < 1e-6);
      CHECK(a.row(rr).minCoeff() >= 0.0);
    }
}

TEST_CASE("structural op gradients") {
  const int batch = 2, n = 3, d = 4;
  ParameterStore<double> store;
  int x = add_random(store, "x", batch * n, d, 30);
  int cls = add_random(store, "cls", 1, d, 31);
  int pos = add_random(store, "pos", n + 1, d, 32);
  auto build = [&](Graph<double>& g) {
    Var<double> v = prepend_cls(g.leaf(store[x]), g.leaf(store[cls]), batch);
    v = add_positional(v, g.leaf(store[pos]), batch);
    Var<double> c = rows_cls(v, batch, n + 1);
    Var<double> p = rows_drop_cls(v, batch, n + 1);
    Var<double> pooled = group_mean_rows(p, n);
    return add(sum_squares(c), add(sum_squares(p), sum_squares(pooled)));
  };
  auto r = gradcheck(store, build);
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gathered positional and masked-sequence assembly gradients") {
  const int batch = 2, n = 4, visible = 2, d = 3;
  ParameterStore<double> store;
  int x = add_random(store, "x", batch * visible, d, 40);
  int pos = add_random(store, "pos", n, d, 41);
  int mask_tok = add_random(store, "mask", 1, d, 42);
  std::vector<int> slots = {0, 3, 1, 2};  // per-image visible patch ids
  auto build = [&](Graph<double>& g) {
    Var<double> v = add_positional_gathered(g.leaf(store[x]), g.leaf(store[pos]), slots);
    v = assemble_masked_sequence(v, g.leaf(store[mask_tok]), slots, batch, n);
    return sum_squares(v);
  };
  auto r = gradcheck(store, build);
  CHECK(r.max_rel_err < 1e-6);

  // value check: visible rows land at their slots, others carry the token
  Graph<double> g;
  Var<double> v = assemble_masked_sequence(g.leaf(store[x]), g.leaf(store[mask_tok]), slots,
                                           batch, n);
  CHECK(v.val().row(0) == store[x].value.row(0));   // image 0, slot 0
  CHECK(v.val().row(3) == store[x].value.row(1));   // image 0, slot 3
  CHECK(v.val().row(1) == store[mask_tok].value.row(0));
  CHECK(v.val().row(4 + 1) == store[x].value.row(2));  // image 1, slot 1
}

TEST_CASE("loss op gradients") {
  ParameterStore<double> store;
  int recon = add_random(store, "recon", 6, 5, 50);
  int probs_src = add_random(store, "probs_src", 4, 4, 51);
  int logits = add_random(store, "logits", 3, 1, 52);

  Matrix<double> target(6, 5);
  Rng rng(53);
  fill_uniform(target, rng);
  std::vector<int> masked = {1, 4};

  Matrix<double> onehot = Matrix<double>::Zero(4, 4);
  for (int i = 0; i < 4; ++i) onehot(i, (i + 1) % 4) = 1.0;
  Matrix<double> labels(3, 1);
  labels << 1, 0, 1;

  auto build = [&](Graph<double>& g) {
    Var<double> l1 = masked_reconstruction_loss(g.leaf(store[recon]), target, masked);
    Var<double> p = sigmoid(g.leaf(store[probs_src]));
    Var<double> l2 = bce_mean_rows(p, onehot, false);
    Var<double> l3 = bce_mean_rows(p, onehot, true);
    Var<double> l4 = bce_with_logits(g.leaf(store[logits]), labels);
    return add(add(l1, l2), add(l3, l4));
  };
  auto r = gradcheck(store, build);
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("masked reconstruction loss ignores unmasked rows") {
  ParameterStore<double> store;
  int recon = add_random(store, "recon", 4, 3, 60);
  Matrix<double> target = Matrix<double>::Zero(4, 3);
  std::vector<int> masked = {2};
  Graph<double> g;
  Var<double> l = masked_reconstruction_loss(g.leaf(store[recon]), target, masked);
  double before = l.scalar();
  store[recon].value.row(0).setConstant(99.0);  // unmasked row
  Graph<double> g2;
  double after = masked_reconstruction_loss(g2.leaf(store[recon]), target, masked).scalar();
  CHECK(before == after);
}
