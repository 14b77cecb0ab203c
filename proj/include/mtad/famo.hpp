// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <iostream>
#include <vector>

#include <Eigen/Dense>

#include "mtad/core.hpp"

namespace mtad {

using VecD = Eigen::VectorXd;

// Dynamic task weighting: softmax weights over learnable logits, updated
// from per-task relative loss changes so all losses decrease at an equal
// relative rate. Logits start at zero (uniform weights).
class FamoState {
 public:
  FamoState(int num_tasks, double beta = 0.025, double loss_floor = 1e-8)
      : logits_(VecD::Zero(num_tasks)), beta_(beta), floor_(loss_floor) {
    if (num_tasks < 1) throw ConfigError("famo: need at least one task");
    if (beta <= 0.0) throw ConfigError("famo: beta must be positive");
  }

  int num_tasks() const { return static_cast<int>(logits_.size()); }
  const VecD& logits() const { return logits_; }
  void set_logits(VecD w) {
    if (w.size() != logits_.size()) throw ShapeError("famo: logit vector size mismatch");
    logits_ = std::move(w);
  }
  double beta() const { return beta_; }
  double loss_floor() const { return floor_; }
  bool has_previous() const { return has_prev_; }
  const VecD& previous_losses() const { return prev_; }

  // p = softmax(w), max-subtracted.
  VecD weights() const {
    if (!logits_.allFinite()) throw NumericError("famo: non-finite logits");
    VecD e = (logits_.array() - logits_.maxCoeff()).exp();
    return e / e.sum();
  }

  VecD clamp_losses(const VecD& losses) const {
    VecD out = losses;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      if (!std::isfinite(out(i)) || out(i) < floor_) out(i) = floor_;
    }
    return out;
  }

  // Stores L^t ahead of the first update.
  void observe(const VecD& losses) {
    if (losses.size() != logits_.size()) throw ShapeError("famo: loss vector size mismatch");
    prev_ = clamp_losses(losses);
    has_prev_ = true;
  }

  // w <- w - beta * (dp/dw)^T log(L^t / L^{t+1}); then L^t <- L^{t+1}.
  void update(const VecD& new_losses) {
    if (!has_prev_) throw StateError("famo: update before any observed losses");
    if (new_losses.size() != logits_.size()) throw ShapeError("famo: loss vector size mismatch");
    VecD next = clamp_losses(new_losses);
    VecD r(logits_.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      double v = std::log(prev_(i)) - std::log(next(i));
      r(i) = std::isfinite(v) ? v : 0.0;
    }
    VecD p = weights();
    // Jacobian of softmax: diag(p) - p p^T (symmetric)
    VecD jt_r = p.cwiseProduct(r) - p * p.dot(r);
    logits_ -= beta_ * jt_r;
    prev_ = next;
  }

 private:
  VecD logits_;
  VecD prev_;
  double beta_;
  double floor_;
  bool has_prev_ = false;
};

// Normalization constant: c = (sum_i p_i / L_i)^{-1}, which makes the
// parameter gradient of the combined loss a convex combination of the task
// gradients (coefficients c * p_i / L_i sum to one).
inline double famo_normalization(const VecD& p, const VecD& losses_clamped) {
  double denom = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) denom += p(i) / losses_clamped(i);
  return 1.0 / denom;
}

struct FamoCombined {
  double value = 0.0;
  double c = 0.0;
  VecD grad_coefficients;  // c * p_i / L_i, the weights on each task gradient
};

// c * sum_i p_i log L_i with losses clamped to the floor.
inline FamoCombined famo_combined_loss(const VecD& losses, const VecD& p, double loss_floor) {
  if (losses.size() != p.size()) throw ShapeError("famo: loss/weight size mismatch");
  VecD clamped = losses;
  bool all_floor = true;
  for (Eigen::Index i = 0; i < clamped.size(); ++i) {
    if (!std::isfinite(clamped(i)) || clamped(i) < loss_floor) clamped(i) = loss_floor;
    all_floor &= clamped(i) <= loss_floor;
  }
  if (all_floor)
    std::cerr << "warning: famo combined loss evaluated with all losses at the floor\n";
  FamoCombined out;
  out.c = famo_normalization(p, clamped);
  for (Eigen::Index i = 0; i < p.size(); ++i) out.value += p(i) * std::log(clamped(i));
  out.value *= out.c;
  out.grad_coefficients = out.c * p.cwiseQuotient(clamped);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark: conflicting quadratics with known minima, used to
// demonstrate the equal-relative-rate property against uniform weighting.
// ---------------------------------------------------------------------------

struct QuadraticProblem {
  std::vector<double> curvature;   // loss_i = curvature_i * ||theta - minimum_i||^2
  std::vector<VecD> minima;

  int tasks() const { return static_cast<int>(curvature.size()); }
  double loss(int i, const VecD& theta) const {
    return curvature[static_cast<std::size_t>(i)] *
           (theta - minima[static_cast<std::size_t>(i)]).squaredNorm();
  }
  VecD grad(int i, const VecD& theta) const {
    return 2.0 * curvature[static_cast<std::size_t>(i)] *
           (theta - minima[static_cast<std::size_t>(i)]);
  }
};

struct RateTrace {
  std::vector<VecD> losses;   // per step, before the update
  std::vector<VecD> rates;    // per step: (L^t - L^{t+1}) / L^t
  std::vector<VecD> weights;  // per step, the p in effect

  // mean over the last half of the per-step std of task rates
  double dispersion_last_half() const {
    if (rates.empty()) return 0.0;
    std::size_t start = rates.size() / 2;
    double acc = 0.0;
    for (std::size_t s = start; s < rates.size(); ++s) {
      double mean = rates[s].mean();
      acc += std::sqrt((rates[s].array() - mean).square().mean());
    }
    return acc / static_cast<double>(rates.size() - start);
  }
};

// Gradient descent on the FAMO combined loss (or the plain mean when
// `use_famo` is false), reporting per-step relative decrease rates.
inline RateTrace equal_rate_bench(const QuadraticProblem& problem, VecD theta, double lr,
                                  int steps, bool use_famo, double beta = 0.025,
                                  double loss_floor = 1e-8) {
  const int m = problem.tasks();
  FamoState famo(m, beta, loss_floor);
  RateTrace trace;
  for (int step = 0; step < steps; ++step) {
    VecD losses(m);
    for (int i = 0; i < m; ++i) losses(i) = problem.loss(i, theta);
    VecD p = use_famo ? famo.weights() : VecD::Constant(m, 1.0 / m);

    VecD grad = VecD::Zero(theta.size());
    if (use_famo) {
      FamoCombined combined = famo_combined_loss(losses, p, loss_floor);
      for (int i = 0; i < m; ++i) grad += combined.grad_coefficients(i) * problem.grad(i, theta);
    } else {
      for (int i = 0; i < m; ++i) grad += p(i) * problem.grad(i, theta);
    }
    theta -= lr * grad;

    VecD new_losses(m);
    for (int i = 0; i < m; ++i) new_losses(i) = problem.loss(i, theta);
    VecD rates(m);
    for (int i = 0; i < m; ++i) {
      double denom = std::max(losses(i), loss_floor);
      rates(i) = (losses(i) - new_losses(i)) / denom;
    }
    if (use_famo) {
      famo.observe(losses);
      famo.update(new_losses);
    }
    trace.losses.push_back(losses);
    trace.rates.push_back(rates);
    trace.weights.push_back(p);
  }
  return trace;
}

}  // namespace mtad
