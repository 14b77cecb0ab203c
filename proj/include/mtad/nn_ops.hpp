// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "mtad/graph.hpp"

namespace mtad {

// Captures intermediate activations for the numeric-contract tests
// (layer-norm statistics, attention row distributions).
template <typename S>
struct EncodeInspector {
  std::vector<Matrix<S>> ln_normalized;   // pre-affine, one entry per LN call
  std::vector<Matrix<S>> attention_rows;  // one T x T matrix per (image, head)
};

// Exact (erf-based) GeLU.
template <typename S>
Var<S> gelu(Var<S> x) {
  Graph<S>& g = *x.graph;
  const S inv_sqrt2 = S(0.7071067811865475);
  Matrix<S> out = x.val().unaryExpr(
      [inv_sqrt2](S v) { return S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); });
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  int id = g.add(
      std::move(out), ng,
      ng ? typename Graph<S>::BackFn([xi, inv_sqrt2](Graph<S>& gr, const Matrix<S>& go) {
        const S inv_sqrt2pi = S(0.3989422804014327);
        Matrix<S> d = gr.val(xi).unaryExpr([inv_sqrt2, inv_sqrt2pi](S v) {
          return S(0.5) * (S(1) + std::erf(v * inv_sqrt2)) +
                 v * inv_sqrt2pi * std::exp(-v * v * S(0.5));
        });
        gr.accum(xi, go.cwiseProduct(d));
      })
         : nullptr);
  return {&g, id};
}

template <typename S>
Var<S> sigmoid(Var<S> x) {
  Graph<S>& g = *x.graph;
  Matrix<S> out = (S(1) / (S(1) + (-x.val().array()).exp())).matrix();
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  Matrix<S> saved = out;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn(
                          [xi, y = std::move(saved)](Graph<S>& gr, const Matrix<S>& go) {
                            Matrix<S> d = y.array() * (S(1) - y.array());
                            gr.accum(xi, go.cwiseProduct(d));
                          })
                    : nullptr);
  return {&g, id};
}

template <typename S>
Var<S> softmax_rows(Var<S> x) {
  Graph<S>& g = *x.graph;
  Matrix<S> out = x.val();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r).array();
    row -= row.maxCoeff();
    row = row.exp();
    row /= row.sum();
  }
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  Matrix<S> saved = out;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn(
                          [xi, y = std::move(saved)](Graph<S>& gr, const Matrix<S>& go) {
                            Matrix<S> gi(y.rows(), y.cols());
                            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                              S dot = go.row(r).dot(y.row(r));
                              gi.row(r) =
                                  y.row(r).cwiseProduct(go.row(r) - Matrix<S>::Constant(
                                                                        1, y.cols(), dot));
                            }
                            gr.accum(xi, std::move(gi));
                          })
                    : nullptr);
  return {&g, id};
}

// Rowwise layer normalization with learned scale/offset (population variance).
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-8),
                  EncodeInspector<S>* inspector = nullptr) {
  Graph<S>& g = *x.graph;
  const Eigen::Index R = x.rows(), D = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != D || beta.rows() != 1 || beta.cols() != D)
    throw ShapeError("layer_norm: scale/offset must be 1 x d");

  Matrix<S> xhat(R, D);
  Matrix<S> inv_std(R, 1);
  for (Eigen::Index r = 0; r < R; ++r) {
    S mu = x.val().row(r).mean();
    S var = (x.val().row(r).array() - mu).square().mean();
    S istd = S(1) / std::sqrt(var + eps);
    inv_std(r, 0) = istd;
    xhat.row(r) = (x.val().row(r).array() - mu) * istd;
  }
  if (inspector) inspector->ln_normalized.push_back(xhat);

  Matrix<S> out = xhat;
  out.array().rowwise() *= gamma.val().row(0).array();
  out.array().rowwise() += beta.val().row(0).array();

  bool ng = g.needs_grad(x.id) || g.needs_grad(gamma.id) || g.needs_grad(beta.id);
  int xi = x.id, gi_ = gamma.id, bi = beta.id;
  int id = g.add(
      std::move(out), ng,
      ng ? typename Graph<S>::BackFn([xi, gi_, bi, xh = std::move(xhat),
                                      istd = std::move(inv_std)](Graph<S>& gr,
                                                                 const Matrix<S>& go) {
        const Eigen::Index D2 = xh.cols();
        gr.accum(gi_, go.cwiseProduct(xh).colwise().sum());
        gr.accum(bi, go.colwise().sum());
        if (!gr.needs_grad(xi)) return;
        Matrix<S> dxhat = go;
        dxhat.array().rowwise() *= gr.val(gi_).row(0).array();
        Matrix<S> gx(xh.rows(), D2);
        for (Eigen::Index r = 0; r < xh.rows(); ++r) {
          S m1 = dxhat.row(r).mean();
          S m2 = dxhat.row(r).cwiseProduct(xh.row(r)).mean();
          gx.row(r) = istd(r, 0) * (dxhat.row(r).array() - m1 - xh.row(r).array() * m2);
        }
        gr.accum(xi, std::move(gx));
      })
         : nullptr);
  return {&g, id};
}

// Multi-head self-attention over B stacked sequences of T tokens:
// x is (B*T) x d; per image and head, softmax(Q K^T / sqrt(d_h)) V.
template <typename S>
Var<S> multi_head_attention(Var<S> x, int batch, int seq_len, int heads, Var<S> wq, Var<S> bq,
                            Var<S> wk, Var<S> bk, Var<S> wv, Var<S> bv, Var<S> wo, Var<S> bo,
                            EncodeInspector<S>* inspector = nullptr) {
  Graph<S>& g = *x.graph;
  const Eigen::Index d = x.cols();
  if (x.rows() != static_cast<Eigen::Index>(batch) * seq_len)
    throw ShapeError("attention: rows != batch * seq_len");
  if (d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const Eigen::Index dh = d / heads;
  const S alpha = S(1) / std::sqrt(static_cast<S>(dh));

  Matrix<S> Q = x.val() * wq.val();
  Q.rowwise() += Eigen::RowVector<S, Eigen::Dynamic>(bq.val().row(0));
  Matrix<S> K = x.val() * wk.val();
  K.rowwise() += Eigen::RowVector<S, Eigen::Dynamic>(bk.val().row(0));
  Matrix<S> V = x.val() * wv.val();
  V.rowwise() += Eigen::RowVector<S, Eigen::Dynamic>(bv.val().row(0));

  Matrix<S> O(x.rows(), d);
  std::vector<Matrix<S>> probs;  // one per (image, head)
  probs.reserve(static_cast<std::size_t>(batch) * heads);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq_len;
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
      Matrix<S> scores =
          alpha * (Q.block(r0, c0, seq_len, dh) * K.block(r0, c0, seq_len, dh).transpose());
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        auto row = scores.row(r).array();
        row -= row.maxCoeff();
        row = row.exp();
        row /= row.sum();
      }
      if (inspector) inspector->attention_rows.push_back(scores);
      O.block(r0, c0, seq_len, dh).noalias() = scores * V.block(r0, c0, seq_len, dh);
      probs.push_back(std::move(scores));
    }
  }
  Matrix<S> out = O * wo.val();
  out.rowwise() += Eigen::RowVector<S, Eigen::Dynamic>(bo.val().row(0));

  bool ng = g.needs_grad(x.id) || g.needs_grad(wq.id) || g.needs_grad(wk.id) ||
            g.needs_grad(wv.id) || g.needs_grad(wo.id);
  if (!ng) return {&g, g.add(std::move(out), false)};

  int xi = x.id;
  int wqi = wq.id, bqi = bq.id, wki = wk.id, bki = bk.id, wvi = wv.id, bvi = bv.id, woi = wo.id,
      boi = bo.id;
  auto back = [=, Q = std::move(Q), K = std::move(K), V = std::move(V), O = std::move(O),
               probs = std::move(probs)](Graph<S>& gr, const Matrix<S>& go) {
    gr.accum(woi, O.transpose() * go);
    gr.accum(boi, go.colwise().sum());
    Matrix<S> dO = go * gr.val(woi).transpose();

    Matrix<S> dQ = Matrix<S>::Zero(dO.rows(), d);
    Matrix<S> dK = Matrix<S>::Zero(dO.rows(), d);
    Matrix<S> dV = Matrix<S>::Zero(dO.rows(), d);
    for (int b = 0; b < batch; ++b) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(b) * seq_len;
      for (int h = 0; h < heads; ++h) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dh;
        const Matrix<S>& A = probs[static_cast<std::size_t>(b) * heads + h];
        Matrix<S> dOb = dO.block(r0, c0, seq_len, dh);
        Matrix<S> dA = dOb * V.block(r0, c0, seq_len, dh).transpose();
        dV.block(r0, c0, seq_len, dh).noalias() = A.transpose() * dOb;
        Matrix<S> dS(seq_len, seq_len);
        for (Eigen::Index r = 0; r < seq_len; ++r) {
          S dot = dA.row(r).dot(A.row(r));
          dS.row(r) =
              A.row(r).cwiseProduct(dA.row(r) - Matrix<S>::Constant(1, seq_len, dot));
        }
        dS *= alpha;
        dQ.block(r0, c0, seq_len, dh).noalias() = dS * K.block(r0, c0, seq_len, dh);
        dK.block(r0, c0, seq_len, dh).noalias() = dS.transpose() * Q.block(r0, c0, seq_len, dh);
      }
    }
    const Matrix<S>& xv = gr.val(xi);
    gr.accum(wqi, xv.transpose() * dQ);
    gr.accum(bqi, dQ.colwise().sum());
    gr.accum(wki, xv.transpose() * dK);
    gr.accum(bki, dK.colwise().sum());
    gr.accum(wvi, xv.transpose() * dV);
    gr.accum(bvi, dV.colwise().sum());
    if (gr.needs_grad(xi)) {
      Matrix<S> dx = dQ * gr.val(wqi).transpose();
      dx.noalias() += dK * gr.val(wki).transpose();
      dx.noalias() += dV * gr.val(wvi).transpose();
      gr.accum(xi, std::move(dx));
    }
  };
  return {&g, g.add(std::move(out), true, std::move(back))};
}

// ---------------------------------------------------------------------------
// Structural ops for stacked token sequences.
// ---------------------------------------------------------------------------

// (B*N) x d patch tokens -> (B*(N+1)) x d with a learned class token at the
// head of every image block.
template <typename S>
Var<S> prepend_cls(Var<S> x, Var<S> cls, int batch) {
  Graph<S>& g = *x.graph;
  if (cls.rows() != 1 || cls.cols() != x.cols()) throw ShapeError("prepend_cls: bad cls shape");
  const Eigen::Index n = x.rows() / batch;
  if (x.rows() != n * batch) throw ShapeError("prepend_cls: rows not divisible by batch");
  Matrix<S> out(x.rows() + batch, x.cols());
  for (int b = 0; b < batch; ++b) {
    out.row(b * (n + 1)) = cls.val().row(0);
    out.middleRows(b * (n + 1) + 1, n) = x.val().middleRows(b * n, n);
  }
  bool ng = g.needs_grad(x.id) || g.needs_grad(cls.id);
  int xi = x.id, ci = cls.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi, ci, batch, n](Graph<S>& gr,
                                                                   const Matrix<S>& go) {
                   Matrix<S> dx(batch * n, go.cols());
                   Matrix<S> dc = Matrix<S>::Zero(1, go.cols());
                   for (int b = 0; b < batch; ++b) {
                     dc += go.row(b * (n + 1));
                     dx.middleRows(b * n, n) = go.middleRows(b * (n + 1) + 1, n);
                   }
                   gr.accum(xi, std::move(dx));
                   gr.accum(ci, std::move(dc));
                 })
                    : nullptr);
  return {&g, id};
}

// Adds a T x d positional table to each image block of a (B*T) x d matrix.
template <typename S>
Var<S> add_positional(Var<S> x, Var<S> pos, int batch) {
  Graph<S>& g = *x.graph;
  const Eigen::Index t = pos.rows();
  if (x.rows() != t * batch || x.cols() != pos.cols())
    throw ShapeError("add_positional: table does not match sequence");
  Matrix<S> out = x.val();
  for (int b = 0; b < batch; ++b) out.middleRows(b * t, t) += pos.val();
  bool ng = g.needs_grad(x.id) || g.needs_grad(pos.id);
  int xi = x.id, pi = pos.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi, pi, batch, t](Graph<S>& gr,
                                                                   const Matrix<S>& go) {
                   gr.accum(xi, go);
                   Matrix<S> dp = Matrix<S>::Zero(t, go.cols());
                   for (int b = 0; b < batch; ++b) dp += go.middleRows(b * t, t);
                   gr.accum(pi, std::move(dp));
                 })
                    : nullptr);
  return {&g, id};
}

// Row i of x receives pos.row(index[i]); used when only a subset of patch
// positions is present (masked-modeling visible tokens).
template <typename S>
Var<S> add_positional_gathered(Var<S> x, Var<S> pos, std::vector<int> index) {
  Graph<S>& g = *x.graph;
  if (static_cast<Eigen::Index>(index.size()) != x.rows())
    throw ShapeError("add_positional_gathered: index size mismatch");
  Matrix<S> out = x.val();
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    out.row(r) += pos.val().row(index[static_cast<std::size_t>(r)]);
  bool ng = g.needs_grad(x.id) || g.needs_grad(pos.id);
  int xi = x.id, pi = pos.id;
  Eigen::Index prows = pos.rows();
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi, pi, prows, idx = std::move(index)](
                                                    Graph<S>& gr, const Matrix<S>& go) {
                   gr.accum(xi, go);
                   Matrix<S> dp = Matrix<S>::Zero(prows, go.cols());
                   for (Eigen::Index r = 0; r < go.rows(); ++r)
                     dp.row(idx[static_cast<std::size_t>(r)]) += go.row(r);
                   gr.accum(pi, std::move(dp));
                 })
                    : nullptr);
  return {&g, id};
}

// Extracts the class-token row of each image block: (B*T) x d -> B x d.
template <typename S>
Var<S> rows_cls(Var<S> x, int batch, int seq_len) {
  Graph<S>& g = *x.graph;
  Matrix<S> out(batch, x.cols());
  for (int b = 0; b < batch; ++b) out.row(b) = x.val().row(b * seq_len);
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  Eigen::Index xrows = x.rows();
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi, batch, seq_len, xrows](
                                                    Graph<S>& gr, const Matrix<S>& go) {
                   Matrix<S> dx = Matrix<S>::Zero(xrows, go.cols());
                   for (int b = 0; b < batch; ++b) dx.row(b * seq_len) = go.row(b);
                   gr.accum(xi, std::move(dx));
                 })
                    : nullptr);
  return {&g, id};
}

// Drops the class token of each image block: (B*T) x d -> (B*(T-1)) x d.
template <typename S>
Var<S> rows_drop_cls(Var<S> x, int batch, int seq_len) {
  Graph<S>& g = *x.graph;
  const int n = seq_len - 1;
  Matrix<S> out(static_cast<Eigen::Index>(batch) * n, x.cols());
  for (int b = 0; b < batch; ++b)
    out.middleRows(b * n, n) = x.val().middleRows(b * seq_len + 1, n);
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  Eigen::Index xrows = x.rows();
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi, batch, seq_len, n, xrows](
                                                    Graph<S>& gr, const Matrix<S>& go) {
                   Matrix<S> dx = Matrix<S>::Zero(xrows, go.cols());
                   for (int b = 0; b < batch; ++b)
                     dx.middleRows(b * seq_len + 1, n) = go.middleRows(b * n, n);
                   gr.accum(xi, std::move(dx));
                 })
                    : nullptr);
  return {&g, id};
}

// Averages consecutive groups of `group` rows (jigsaw tile pooling).
template <typename S>
Var<S> group_mean_rows(Var<S> x, int group) {
  Graph<S>& g = *x.graph;
  if (group <= 0 || x.rows() % group != 0)
    throw ShapeError("group_mean_rows: rows not divisible by group");
  const Eigen::Index out_rows = x.rows() / group;
  Matrix<S> out = Matrix<S>::Zero(out_rows, x.cols());
  for (Eigen::Index r = 0; r < out_rows; ++r) {
    for (int k = 0; k < group; ++k) out.row(r) += x.val().row(r * group + k);
    out.row(r) /= static_cast<S>(group);
  }
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi, group](Graph<S>& gr, const Matrix<S>& go) {
                   Matrix<S> dx(go.rows() * group, go.cols());
                   for (Eigen::Index r = 0; r < go.rows(); ++r)
                     for (int k = 0; k < group; ++k)
                       dx.row(r * group + k) = go.row(r) / static_cast<S>(group);
                   gr.accum(xi, std::move(dx));
                 })
                    : nullptr);
  return {&g, id};
}

// Builds the masked-modeling decoder input: visible rows are scattered to
// their patch slots, masked slots receive the shared mask token.
// x_visible is (B*V) x d grouped by image; index lists each row's patch slot.
template <typename S>
Var<S> assemble_masked_sequence(Var<S> x_visible, Var<S> mask_token, std::vector<int> index,
                                int batch, int num_patches) {
  Graph<S>& g = *x_visible.graph;
  if (mask_token.rows() != 1 || mask_token.cols() != x_visible.cols())
    throw ShapeError("assemble_masked_sequence: bad mask token shape");
  const int visible = static_cast<int>(x_visible.rows()) / batch;
  if (static_cast<Eigen::Index>(index.size()) != x_visible.rows())
    throw ShapeError("assemble_masked_sequence: index size mismatch");
  Matrix<S> out(static_cast<Eigen::Index>(batch) * num_patches, x_visible.cols());
  for (int b = 0; b < batch; ++b)
    for (int p = 0; p < num_patches; ++p) out.row(b * num_patches + p) = mask_token.val().row(0);
  for (Eigen::Index r = 0; r < x_visible.rows(); ++r) {
    int b = static_cast<int>(r) / visible;
    out.row(static_cast<Eigen::Index>(b) * num_patches + index[static_cast<std::size_t>(r)]) =
        x_visible.val().row(r);
  }
  bool ng = g.needs_grad(x_visible.id) || g.needs_grad(mask_token.id);
  int xi = x_visible.id, mi = mask_token.id;
  int id = g.add(
      std::move(out), ng,
      ng ? typename Graph<S>::BackFn([xi, mi, batch, num_patches, visible,
                                      idx = std::move(index)](Graph<S>& gr, const Matrix<S>& go) {
        Matrix<S> dx(static_cast<Eigen::Index>(batch) * visible, go.cols());
        std::vector<bool> taken(static_cast<std::size_t>(batch) * num_patches, false);
        for (Eigen::Index r = 0; r < dx.rows(); ++r) {
          int b = static_cast<int>(r) / visible;
          std::size_t slot = static_cast<std::size_t>(b) * num_patches +
                             static_cast<std::size_t>(idx[static_cast<std::size_t>(r)]);
          dx.row(r) = go.row(static_cast<Eigen::Index>(slot));
          taken[slot] = true;
        }
        Matrix<S> dm = Matrix<S>::Zero(1, go.cols());
        for (std::size_t slot = 0; slot < taken.size(); ++slot)
          if (!taken[slot]) dm += go.row(static_cast<Eigen::Index>(slot));
        gr.accum(xi, std::move(dx));
        gr.accum(mi, std::move(dm));
      })
         : nullptr);
  return {&g, id};
}

// ---------------------------------------------------------------------------
// Losses (scalar-valued nodes).
// ---------------------------------------------------------------------------

// Mean over masked rows of the squared L2 distance between prediction and
// target rows. `masked` lists (B*M) absolute row indices into the stacked
// (B*N) x patch_dim matrices.
template <typename S>
Var<S> masked_reconstruction_loss(Var<S> pred, const Matrix<S>& target, std::vector<int> masked) {
  Graph<S>& g = *pred.graph;
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeError("masked_reconstruction_loss: prediction/target shape mismatch");
  if (masked.empty()) throw InvariantError("masked_reconstruction_loss: empty mask set");
  const S inv = S(1) / static_cast<S>(masked.size());
  Matrix<S> out(1, 1);
  S acc = S(0);
  for (int r : masked) acc += (pred.val().row(r) - target.row(r)).squaredNorm();
  out(0, 0) = acc * inv;
  bool ng = g.needs_grad(pred.id);
  int pi = pred.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([pi, inv, t = target, idx = std::move(masked)](
                                                    Graph<S>& gr, const Matrix<S>& go) {
                   Matrix<S> dp = Matrix<S>::Zero(t.rows(), t.cols());
                   const S c = S(2) * inv * go(0, 0);
                   for (int r : idx) dp.row(r) = c * (gr.val(pi).row(r) - t.row(r));
                   gr.accum(pi, std::move(dp));
                 })
                    : nullptr);
  return {&g, id};
}

// Binary cross-entropy over probabilities, normalized by the ROW count:
//   -(1/R) * sum_ij [ y log p + (1-y) log(1-p) ]        (full)
//   -(1/R) * sum_ij [ y log p ]                         (positive_only)
// Probabilities are clamped to [eps, 1-eps]; the gradient is blocked where
// the clamp binds.
template <typename S>
Var<S> bce_mean_rows(Var<S> probs, const Matrix<S>& targets, bool positive_only = false,
                     S eps = S(1e-7)) {
  Graph<S>& g = *probs.graph;
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
    throw ShapeError("bce: probability/target shape mismatch");
  const S inv = S(1) / static_cast<S>(probs.rows());
  Matrix<S> pc = probs.val().cwiseMax(eps).cwiseMin(S(1) - eps);
  S acc = S(0);
  for (Eigen::Index r = 0; r < pc.rows(); ++r)
    for (Eigen::Index c = 0; c < pc.cols(); ++c) {
      acc -= targets(r, c) * std::log(pc(r, c));
      if (!positive_only) acc -= (S(1) - targets(r, c)) * std::log(S(1) - pc(r, c));
    }
  Matrix<S> out(1, 1);
  out(0, 0) = acc * inv;
  bool ng = g.needs_grad(probs.id);
  int pi = probs.id;
  int id = g.add(
      std::move(out), ng,
      ng ? typename Graph<S>::BackFn([pi, inv, positive_only, eps,
                                      t = targets](Graph<S>& gr, const Matrix<S>& go) {
        const Matrix<S>& p = gr.val(pi);
        Matrix<S> dp = Matrix<S>::Zero(p.rows(), p.cols());
        const S c0 = go(0, 0) * inv;
        for (Eigen::Index r = 0; r < p.rows(); ++r)
          for (Eigen::Index c = 0; c < p.cols(); ++c) {
            S pv = p(r, c);
            if (pv <= eps || pv >= S(1) - eps) continue;
            S d = -t(r, c) / pv;
            if (!positive_only) d += (S(1) - t(r, c)) / (S(1) - pv);
            dp(r, c) = c0 * d;
          }
        gr.accum(pi, std::move(dp));
      })
         : nullptr);
  return {&g, id};
}

// Numerically stable BCE on raw logits, mean over all entries.
template <typename S>
Var<S> bce_with_logits(Var<S> logits, const Matrix<S>& targets) {
  Graph<S>& g = *logits.graph;
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw ShapeError("bce_with_logits: shape mismatch");
  const S inv = S(1) / static_cast<S>(logits.val().size());
  S acc = S(0);
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      S z = logits.val()(r, c);
      acc += std::max(z, S(0)) - z * targets(r, c) + std::log1p(std::exp(-std::abs(z)));
    }
  Matrix<S> out(1, 1);
  out(0, 0) = acc * inv;
  bool ng = g.needs_grad(logits.id);
  int li = logits.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn(
                          [li, inv, t = targets](Graph<S>& gr, const Matrix<S>& go) {
                            const Matrix<S>& z = gr.val(li);
                            Matrix<S> sig = (S(1) / (S(1) + (-z.array()).exp())).matrix();
                            gr.accum(li, (go(0, 0) * inv) * (sig - t));
                          })
                    : nullptr);
  return {&g, id};
}

}  // namespace mtad
