// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mtad/core.hpp"

namespace mtad {

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over dense Eigen matrices. A Graph is a tape of
// nodes built during the forward pass; backward() walks it in reverse.
// Graphs are rebuilt per step and cleared afterwards.
// ---------------------------------------------------------------------------

template <typename S>
class Graph;

template <typename S>
struct Var {
  Graph<S>* graph = nullptr;
  int id = -1;

  const Matrix<S>& val() const { return graph->val(id); }
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  S scalar() const { return val()(0, 0); }
};

// A named trainable tensor with its gradient and optimizer slots.
template <typename S>
struct Tensor {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;
  Matrix<S> opt_m;  // momentum buffer / Adam first moment
  Matrix<S> opt_v;  // Adam second moment

  void zero_grad() { grad.setZero(); }
};

template <typename S>
class ParameterStore {
 public:
  int add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    Tensor<S> t;
    t.name = name;
    t.value = Matrix<S>::Zero(rows, cols);
    t.grad = Matrix<S>::Zero(rows, cols);
    t.opt_m = Matrix<S>::Zero(rows, cols);
    t.opt_v = Matrix<S>::Zero(rows, cols);
    tensors_.push_back(std::move(t));
    return static_cast<int>(tensors_.size()) - 1;
  }

  Tensor<S>& operator[](int i) { return tensors_[static_cast<std::size_t>(i)]; }
  const Tensor<S>& operator[](int i) const { return tensors_[static_cast<std::size_t>(i)]; }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  int count() const { return static_cast<int>(tensors_.size()); }

  void zero_grads() {
    for (auto& t : tensors_) t.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

 private:
  std::vector<Tensor<S>> tensors_;
};

template <typename S>
class Graph {
 public:
  using Mat = Matrix<S>;
  using BackFn = std::function<void(Graph&, const Mat&)>;

  struct Node {
    Mat val;
    const Mat* external = nullptr;  // leaves alias parameter storage
    Mat grad;
    bool needs_grad = false;
    BackFn back;
  };

  int add(Mat val, bool needs_grad, BackFn back = nullptr) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Var<S> constant(Mat val) { return {this, add(std::move(val), false)}; }

  Var<S> constant_scalar(S v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  // Leaf aliasing a parameter tensor; backward accumulates into tensor.grad.
  Var<S> leaf(Tensor<S>& t) {
    Node n;
    n.external = &t.value;
    n.needs_grad = true;
    Tensor<S>* tp = &t;
    n.back = [tp](Graph&, const Mat& g) { tp->grad += g; };
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& val(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.val;
  }

  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  void accum(int id, const Mat& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Seeds d(root)/d(root) = 1 and propagates to all reachable leaves.
  void backward(int root) {
    if (root < 0 || root >= static_cast<int>(nodes_.size()))
      throw StateError("backward: invalid root node");
    if (val(root).size() != 1) throw ShapeError("backward: root must be a scalar");
    if (!nodes_[static_cast<std::size_t>(root)].needs_grad)
      throw StateError("backward: root does not depend on any parameter");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[static_cast<std::size_t>(root)].grad = Mat::Ones(1, 1);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() != 0 && n.back) n.back(*this, n.grad);
    }
  }

  void clear() {
    nodes_.clear();
    uid_ = next_uid();
  }
  std::size_t size() const { return nodes_.size(); }
  // Unique per tape generation (fresh after clear()), so leaf caches can
  // detect both graph reuse and a new graph at a recycled address.
  std::uint64_t uid() const { return uid_; }

 private:
  static std::uint64_t next_uid() {
    static std::uint64_t counter = 0;
    return ++counter;
  }
  std::vector<Node> nodes_;
  std::uint64_t uid_ = next_uid();
};

// ---------------------------------------------------------------------------
// Basic ops. Each returns a new node; backward closures capture parent ids
// and whatever forward results they need.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.graph;
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix<S> out = a.val() * b.val();
  bool ng = g.needs_grad(a.id) || g.needs_grad(b.id);
  int ai = a.id, bi = b.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([ai, bi](Graph<S>& gr, const Matrix<S>& go) {
                   gr.accum(ai, go * gr.val(bi).transpose());
                   gr.accum(bi, gr.val(ai).transpose() * go);
                 })
                    : nullptr);
  return {&g, id};
}

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.graph;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("add: shape mismatch");
  bool ng = g.needs_grad(a.id) || g.needs_grad(b.id);
  int ai = a.id, bi = b.id;
  int id = g.add(a.val() + b.val(), ng,
                 ng ? typename Graph<S>::BackFn([ai, bi](Graph<S>& gr, const Matrix<S>& go) {
                   gr.accum(ai, go);
                   gr.accum(bi, go);
                 })
                    : nullptr);
  return {&g, id};
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.graph;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("sub: shape mismatch");
  bool ng = g.needs_grad(a.id) || g.needs_grad(b.id);
  int ai = a.id, bi = b.id;
  int id = g.add(a.val() - b.val(), ng,
                 ng ? typename Graph<S>::BackFn([ai, bi](Graph<S>& gr, const Matrix<S>& go) {
                   gr.accum(ai, go);
                   gr.accum(bi, -go);
                 })
                    : nullptr);
  return {&g, id};
}

// Broadcasts a 1 x k row over every row of x.
template <typename S>
Var<S> add_rowvec(Var<S> x, Var<S> row) {
  Graph<S>& g = *x.graph;
  if (row.rows() != 1 || row.cols() != x.cols()) throw ShapeError("add_rowvec: bad bias shape");
  Matrix<S> out = x.val();
  out.rowwise() += Eigen::RowVector<S, Eigen::Dynamic>(row.val().row(0));
  bool ng = g.needs_grad(x.id) || g.needs_grad(row.id);
  int xi = x.id, ri = row.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi, ri](Graph<S>& gr, const Matrix<S>& go) {
                   gr.accum(xi, go);
                   gr.accum(ri, go.colwise().sum());
                 })
                    : nullptr);
  return {&g, id};
}

template <typename S>
Var<S> scale(Var<S> x, S c) {
  Graph<S>& g = *x.graph;
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  int id = g.add(x.val() * c, ng,
                 ng ? typename Graph<S>::BackFn([xi, c](Graph<S>& gr, const Matrix<S>& go) {
                   gr.accum(xi, go * c);
                 })
                    : nullptr);
  return {&g, id};
}

template <typename S>
Var<S> hadamard(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.graph;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("hadamard: shape mismatch");
  bool ng = g.needs_grad(a.id) || g.needs_grad(b.id);
  int ai = a.id, bi = b.id;
  int id = g.add(a.val().cwiseProduct(b.val()), ng,
                 ng ? typename Graph<S>::BackFn([ai, bi](Graph<S>& gr, const Matrix<S>& go) {
                   gr.accum(ai, go.cwiseProduct(gr.val(bi)));
                   gr.accum(bi, go.cwiseProduct(gr.val(ai)));
                 })
                    : nullptr);
  return {&g, id};
}

// max(x, lo) elementwise; gradient is blocked where the clamp binds.
template <typename S>
Var<S> clamp_min(Var<S> x, S lo) {
  Graph<S>& g = *x.graph;
  Matrix<S> out = x.val().cwiseMax(lo);
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi, lo](Graph<S>& gr, const Matrix<S>& go) {
                   Matrix<S> gi =
                       (gr.val(xi).array() > lo).template cast<S>().matrix().cwiseProduct(go);
                   gr.accum(xi, std::move(gi));
                 })
                    : nullptr);
  return {&g, id};
}

template <typename S>
Var<S> log_elem(Var<S> x) {
  Graph<S>& g = *x.graph;
  Matrix<S> out = x.val().array().log().matrix();
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi](Graph<S>& gr, const Matrix<S>& go) {
                   gr.accum(xi, go.cwiseQuotient(gr.val(xi)));
                 })
                    : nullptr);
  return {&g, id};
}

// Frobenius norm squared -> 1x1.
template <typename S>
Var<S> sum_squares(Var<S> x) {
  Graph<S>& g = *x.graph;
  Matrix<S> out(1, 1);
  out(0, 0) = x.val().squaredNorm();
  bool ng = g.needs_grad(x.id);
  int xi = x.id;
  int id = g.add(std::move(out), ng,
                 ng ? typename Graph<S>::BackFn([xi](Graph<S>& gr, const Matrix<S>& go) {
                   gr.accum(xi, (S(2) * go(0, 0)) * gr.val(xi));
                 })
                    : nullptr);
  return {&g, id};
}

}  // namespace mtad
