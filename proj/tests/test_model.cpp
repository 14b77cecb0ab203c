// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "gradcheck.hpp"
#include "mtad/tasks.hpp"

using namespace mtad;
using mtad::testing::gradcheck;

namespace {

Image random_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size, 3);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.patch_size = 4;
  cfg.num_experts = 5;
  cfg.ffn_hidden_mult = 2;
  cfg.decoder_depth = 1;
  cfg.decoder_width = 8;
  cfg.decoder_heads = 2;
  return cfg;
}

template <typename S>
Matrix<S> encode_patches(Model<S>& model, const Image& img) {
  return to_patch_matrix<S>(img, model.config().patch_size);
}

}  // namespace

TEST_CASE("embed shape contract at paper scale") {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.width = 128;
  cfg.heads = 4;
  cfg.patch_size = 16;
  Model<float> model(cfg, 256, 3, 4, 1);
  CHECK(model.num_patches() == 256);
  Image img = random_image(256, 2);
  Graph<float> g;
  TokenBatch<float> tokens = model.embed(g, encode_patches(model, img), 1, TaskId::kMim, true);
  CHECK(tokens.tokens.rows() == 257);
  CHECK(tokens.tokens.cols() == 128);
}

TEST_CASE("zero patches, zero bias, no positional: only the class token is nonzero") {
  Model<double> model(tiny_config(), 16, 3, 2, 3);
  Graph<double> g;
  Matrix<double> zeros = Matrix<double>::Zero(model.num_patches(), model.patch_dim());
  TokenBatch<double> tokens = model.embed(g, zeros, 1, TaskId::kJigsaw, false);
  int cls_id = model.params().find("cls_token");
  REQUIRE(cls_id >= 0);
  CHECK((tokens.tokens.val().row(0) - model.params()[cls_id].value.row(0))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK(tokens.tokens.val().bottomRows(model.num_patches()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("positional flag changes tokens by exactly the positional table") {
  Model<double> model(tiny_config(), 16, 3, 2, 4);
  Image img = random_image(16, 5);
  Matrix<double> patches = encode_patches(model, img);
  Graph<double> g;
  Var<double> with = model.embed(g, patches, 1, TaskId::kMim, true).tokens;
  Var<double> without = model.embed(g, patches, 1, TaskId::kMim, false).tokens;
  int pos_id = model.params().find("pos_embed");
  Matrix<double> diff = with.val() - without.val();
  CHECK((diff - model.params()[pos_id].value).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("encode preserves shape and is deterministic") {
  Model<double> model(tiny_config(), 16, 3, 2, 6);
  Image img = random_image(16, 7);
  Matrix<double> patches = encode_patches(model, img);
  Graph<double> g;
  TokenBatch<double> tokens = model.embed(g, patches, 1, TaskId::kDeMixUp, true);
  TokenBatch<double> out1 = model.encode(tokens, nullptr);
  TokenBatch<double> out2 = model.encode(tokens, nullptr);
  CHECK(out1.tokens.rows() == tokens.tokens.rows());
  CHECK(out1.tokens.cols() == tokens.tokens.cols());
  CHECK((out1.tokens.val() - out2.tokens.val()).cwiseAbs().maxCoeff() == 0.0);
}

// Straight-line re-implementation of one pre-norm block with plain Eigen
// loops, reading parameters by name. Covers embed + MHSA + MoE routing.
TEST_CASE("single-layer encode matches an independent straight-line oracle") {
  EncoderConfig cfg = tiny_config();
  cfg.width = 4;
  cfg.heads = 2;
  cfg.patch_size = 2;
  Model<double> model(cfg, 4, 3, 1, 8);  // N = 4 patches of dim 12
  const int n = model.num_patches();
  const int d = cfg.width;

  Image img = random_image(4, 9);
  Matrix<double> patches = encode_patches(model, img);

  auto P = [&](const std::string& name) -> const Matrix<double>& {
    int id = model.params().find(name);
    REQUIRE(id >= 0);
    return model.params()[id].value;
  };

  auto ln_oracle = [&](const Matrix<double>& x, const Matrix<double>& gm,
                       const Matrix<double>& bt) {
    Matrix<double> out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      double mu = x.row(r).mean();
      double var = (x.row(r).array() - mu).square().mean();
      out.row(r) = (((x.row(r).array() - mu) / std::sqrt(var + 1e-8)) * gm.row(0).array() +
                    bt.row(0).array())
                       .matrix();
    }
    return out;
  };
  auto gelu_oracle = [](Matrix<double> x) {
    for (Eigen::Index i = 0; i < x.size(); ++i)
      x(i) = 0.5 * x(i) * (1.0 + std::erf(x(i) * 0.7071067811865475));
    return x;
  };

  auto oracle = [&](TaskId task, bool forced_uniform_attention) {
    // embed
    Matrix<double> x(n + 1, d);
    x.row(0) = P("cls_token").row(0);
    Matrix<double> proj = patches * P("patch_proj.w");
    proj.rowwise() += Eigen::RowVectorXd(P("patch_proj.b").row(0));
    x.bottomRows(n) = proj;
    x += P("pos_embed");
    // attention
    Matrix<double> h = ln_oracle(x, P("enc.0.ln1.g"), P("enc.0.ln1.b"));
    Matrix<double> q = h * P("enc.0.attn.wq");
    q.rowwise() += Eigen::RowVectorXd(P("enc.0.attn.bq").row(0));
    Matrix<double> k = h * P("enc.0.attn.wk");
    k.rowwise() += Eigen::RowVectorXd(P("enc.0.attn.bk").row(0));
    Matrix<double> v = h * P("enc.0.attn.wv");
    v.rowwise() += Eigen::RowVectorXd(P("enc.0.attn.bv").row(0));
    const int dh = d / cfg.heads;
    Matrix<double> o(n + 1, d);
    for (int head = 0; head < cfg.heads; ++head) {
      Matrix<double> scores = q.middleCols(head * dh, dh) *
                              k.middleCols(head * dh, dh).transpose() / std::sqrt(double(dh));
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        if (forced_uniform_attention) {
          scores.row(r).setConstant(1.0 / scores.cols());
        } else {
          scores.row(r) = (scores.row(r).array() - scores.row(r).maxCoeff()).exp().matrix();
          scores.row(r) /= scores.row(r).sum();
        }
      }
      o.middleCols(head * dh, dh) = scores * v.middleCols(head * dh, dh);
    }
    Matrix<double> attn = o * P("enc.0.attn.wo");
    attn.rowwise() += Eigen::RowVectorXd(P("enc.0.attn.bo").row(0));
    x += attn;
    // task-routed expert (K = 5: task t owns expert t)
    Matrix<double> f = ln_oracle(x, P("enc.0.ln2.g"), P("enc.0.ln2.b"));
    std::string e = "enc.0.moe." + std::to_string(task_index(task));
    Matrix<double> hid = f * P(e + ".w1");
    hid.rowwise() += Eigen::RowVectorXd(P(e + ".b1").row(0));
    hid = gelu_oracle(hid);
    Matrix<double> ffn = hid * P(e + ".w2");
    ffn.rowwise() += Eigen::RowVectorXd(P(e + ".b2").row(0));
    return Matrix<double>(x + ffn);
  };

  SUBCASE("general weights, two tasks route to different experts") {
    for (TaskId task : {TaskId::kMim, TaskId::kGenCls}) {
      Graph<double> g;
      TokenBatch<double> tokens = model.embed(g, patches, 1, task, true);
      TokenBatch<double> out = model.encode(tokens, nullptr);
      CHECK((out.tokens.val() - oracle(task, false)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  SUBCASE("query = key = 0 forces uniform attention") {
    for (const char* name : {"enc.0.attn.wq", "enc.0.attn.bq", "enc.0.attn.wk",
                             "enc.0.attn.bk"}) {
      model.params()[model.params().find(name)].value.setZero();
    }
    EncodeInspector<double> insp;
    model.inspector = &insp;
    Graph<double> g;
    TokenBatch<double> tokens = model.embed(g, patches, 1, TaskId::kMim, true);
    TokenBatch<double> out = model.encode(tokens, nullptr);
    model.inspector = nullptr;
    CHECK((out.tokens.val() - oracle(TaskId::kMim, true)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(!insp.attention_rows.empty());
    for (const auto& a : insp.attention_rows)
      for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a(i) == a(0));  // all rows uniform
  }
}

TEST_CASE("without positional embeddings encode is permutation equivariant") {
  EncoderConfig cfg = tiny_config();
  cfg.depth = 2;
  Model<double> model(cfg, 16, 3, 2, 10);
  const int n = model.num_patches();
  Image img = random_image(16, 11);
  Matrix<double> patches = encode_patches(model, img);

  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng(12);
  rng.shuffle(perm);
  Matrix<double> permuted(n, patches.cols());
  for (int i = 0; i < n; ++i) permuted.row(i) = patches.row(perm[static_cast<std::size_t>(i)]);

  Graph<double> g;
  auto out_base = model.encode(model.embed(g, patches, 1, TaskId::kJigsaw, false), nullptr);
  auto out_perm = model.encode(model.embed(g, permuted, 1, TaskId::kJigsaw, false), nullptr);

  // class token unchanged, patch outputs permuted identically
  CHECK((out_base.tokens.val().row(0) - out_perm.tokens.val().row(0)).cwiseAbs().maxCoeff() <
        1e-10);
  for (int i = 0; i < n; ++i) {
    CHECK((out_perm.tokens.val().row(i + 1) -
           out_base.tokens.val().row(perm[static_cast<std::size_t>(i)] + 1))
              .cwiseAbs()
              .maxCoeff() < 1e-10);
  }
}

TEST_CASE("layer norm statistics hold inside encode") {
  Model<double> model(tiny_config(), 16, 3, 2, 13);
  Image img = random_image(16, 14);
  EncodeInspector<double> insp;
  model.inspector = &insp;
  Graph<double> g;
  model.encode(model.embed(g, encode_patches(model, img), 1, TaskId::kMim, true), nullptr);
  model.inspector = nullptr;
  REQUIRE(insp.ln_normalized.size() == 2);  // two LN per block, depth 1
  for (const auto& xh : insp.ln_normalized)
    for (Eigen::Index r = 0; r < xh.rows(); ++r) {
      CHECK(std::abs(xh.row(r).mean()) < 1e-5);
      double var = (xh.row(r).array() - xh.row(r).mean()).square().mean();
      CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("non-finite activations raise a numeric error naming the layer") {
  Model<double> model(tiny_config(), 16, 3, 2, 15);
  int id = model.params().find("enc.0.attn.wo");
  model.params()[id].value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Image img = random_image(16, 16);
  Graph<double> g;
  TokenBatch<double> tokens = model.embed(g, encode_patches(model, img), 1, TaskId::kMim, true);
  CHECK_THROWS_WITH_AS(model.encode(tokens, nullptr),
                       doctest::Contains("layer 1"), NumericError);
}

TEST_CASE("analytic gradients of all five losses match finite differences") {
  Model<double> model(tiny_config(), 16, 3, 2, 17);
  const int p = model.config().patch_size;
  Image a = random_image(16, 18), b = random_image(16, 19);
  PatchSequence seq_a = patchify(a, p), seq_b = patchify(b, p);

  Rng rng(20);
  std::vector<std::pair<TaskId, TaskBatch<double>>> cases;
  cases.emplace_back(TaskId::kMim, build_mim_batch<double>(seq_a, 0.4, rng));
  cases.emplace_back(TaskId::kJigsaw, build_jigsaw_batch<double>(seq_a, 2, rng));
  cases.emplace_back(TaskId::kDeMixUp, build_demixup_batch<double>(seq_a, seq_b, 0.25, rng));
  cases.emplace_back(TaskId::kAugCls, build_cls_batch<double>({&a}, {1}, p));
  cases.emplace_back(TaskId::kGenCls, build_cls_batch<double>({&b}, {0}, p));

  for (const auto& [task, batch] : cases) {
    CAPTURE(task_name(task));
    auto build = [&](Graph<double>& g) {
      return forward_task(model, g, task, batch, nullptr).loss;
    };
    auto r = gradcheck(model.params(), build, 1e-5);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("experts outside the batch task receive exactly zero gradient") {
  Model<double> model(tiny_config(), 16, 3, 2, 21);
  Image a = random_image(16, 22);
  Rng rng(23);
  TaskBatch<double> batch = build_mim_batch<double>(patchify(a, 4), 0.4, rng);

  model.params().zero_grads();
  Graph<double> g;
  auto fwd = forward_task(model, g, TaskId::kMim, batch, nullptr);
  g.backward(fwd.loss.id);

  const auto& assignment = model.assignment();
  for (int t = 0; t < kNumTasks; ++t) {
    for (int e : assignment.task_experts[t]) {
      double mass = 0.0;
      for (int pid : model.expert_param_ids(0, e))
        mass += model.params()[pid].grad.cwiseAbs().sum();
      if (t == task_index(TaskId::kMim)) {
        CHECK(mass > 0.0);
      } else {
        CHECK(mass == 0.0);
      }
    }
  }
  // untouched heads stay at zero too
  for (TaskId t : {TaskId::kJigsaw, TaskId::kDeMixUp, TaskId::kAugCls, TaskId::kGenCls}) {
    double mass = 0.0;
    for (int pid : model.head_param_ids(t)) mass += model.params()[pid].grad.cwiseAbs().sum();
    CHECK(mass == 0.0);
  }
}

TEST_CASE("cross-task counter entries stay zero during routed forwards") {
  Model<float> model(tiny_config(), 16, 3, 2, 24);
  Image a = random_image(16, 25);
  Rng rng(26);
  model.counters().reset();
  for (TaskId task : {TaskId::kMim, TaskId::kJigsaw}) {
    TaskBatch<float> batch =
        task == TaskId::kMim
            ? TaskBatch<float>(build_mim_batch<float>(patchify(a, 4), 0.4, rng))
            : TaskBatch<float>(build_jigsaw_batch<float>(patchify(a, 4), 2, rng));
    Graph<float> g;
    forward_task(model, g, task, batch, nullptr);
  }
  const auto& assignment = model.assignment();
  for (int l = 0; l < model.config().depth; ++l)
    for (int e = 0; e < model.config().num_experts; ++e)
      for (int t = 0; t < kNumTasks; ++t) {
        bool owned = false;
        for (int oe : assignment.task_experts[t]) owned |= oe == e;
        if (!owned) CHECK(model.counters().count(l, e, static_cast<TaskId>(t)) == 0);
      }
}
