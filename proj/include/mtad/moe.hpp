// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mtad/core.hpp"
#include "mtad/nn_ops.hpp"
#include "mtad/task_id.hpp"

namespace mtad {

// Deterministic task -> expert routing. With K >= 5 each task owns a
// contiguous, disjoint block (the first K mod 5 tasks get one extra expert);
// with K < 5 experts are shared round-robin.
struct ExpertAssignment {
  int num_experts = 0;
  std::array<std::vector<int>, kNumTasks> task_experts;

  const std::vector<int>& experts_for(TaskId t) const { return task_experts[task_index(t)]; }
};

inline ExpertAssignment assign_experts(int num_experts) {
  if (num_experts <= 0) throw ConfigError("assign_experts: need at least one expert");
  ExpertAssignment a;
  a.num_experts = num_experts;
  if (num_experts >= kNumTasks) {
    int base = num_experts / kNumTasks;
    int extra = num_experts % kNumTasks;
    int next = 0;
    for (int t = 0; t < kNumTasks; ++t) {
      int count = base + (t < extra ? 1 : 0);
      for (int i = 0; i < count; ++i) a.task_experts[t].push_back(next++);
    }
  } else {
    for (int t = 0; t < kNumTasks; ++t) a.task_experts[t].push_back(t % num_experts);
  }
  return a;
}

// Per-step dropout decision: one row of flags per MoE layer. Reinstatement
// guarantees every task keeps at least one active assigned expert.
struct ExpertDropoutMask {
  std::vector<std::vector<std::uint8_t>> active;             // [layer][expert]
  std::vector<std::vector<std::uint8_t>> initially_dropped;  // pre-reinstatement Bernoulli draw

  bool valid_for(const ExpertAssignment& a) const {
    for (const auto& layer : active) {
      for (int t = 0; t < kNumTasks; ++t) {
        bool any = false;
        for (int e : a.task_experts[t]) any |= layer[static_cast<std::size_t>(e)] != 0;
        if (!any) return false;
      }
    }
    return true;
  }
};

inline ExpertDropoutMask sample_dropout(double rate, const ExpertAssignment& assignment,
                                        int num_moe_layers, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("expert dropout rate must be in [0, 1)");
  ExpertDropoutMask mask;
  mask.active.resize(static_cast<std::size_t>(num_moe_layers));
  mask.initially_dropped.resize(static_cast<std::size_t>(num_moe_layers));
  for (int l = 0; l < num_moe_layers; ++l) {
    auto& act = mask.active[static_cast<std::size_t>(l)];
    auto& dropped = mask.initially_dropped[static_cast<std::size_t>(l)];
    act.assign(static_cast<std::size_t>(assignment.num_experts), 1);
    dropped.assign(static_cast<std::size_t>(assignment.num_experts), 0);
    for (int e = 0; e < assignment.num_experts; ++e) {
      if (rng.uniform() < rate) {
        act[static_cast<std::size_t>(e)] = 0;
        dropped[static_cast<std::size_t>(e)] = 1;
      }
    }
    for (int t = 0; t < kNumTasks; ++t) {
      const auto& owned = assignment.task_experts[t];
      bool any = false;
      for (int e : owned) any |= act[static_cast<std::size_t>(e)] != 0;
      if (!any) {
        int pick = owned[static_cast<std::size_t>(rng.below(owned.size()))];
        act[static_cast<std::size_t>(pick)] = 1;
      }
    }
  }
  return mask;
}

// (layer, expert, task) -> processed token rows; the routing-exclusivity
// audit checks that off-assignment entries stay at zero.
class ActivationCounters {
 public:
  ActivationCounters() = default;
  ActivationCounters(int layers, int experts)
      : layers_(layers),
        experts_(experts),
        counts_(static_cast<std::size_t>(layers) * experts * kNumTasks, 0) {}

  void record(int layer, int expert, TaskId task, std::uint64_t tokens) {
    counts_[index(layer, expert, task_index(task))] += tokens;
  }
  std::uint64_t count(int layer, int expert, TaskId task) const {
    return counts_[index(layer, expert, task_index(task))];
  }
  void reset() { std::fill(counts_.begin(), counts_.end(), 0); }
  int layers() const { return layers_; }
  int experts() const { return experts_; }

  std::string to_csv() const {
    std::string out = "layer,expert,task,activations\n";
    for (int l = 0; l < layers_; ++l)
      for (int e = 0; e < experts_; ++e)
        for (int t = 0; t < kNumTasks; ++t) {
          out += std::to_string(l) + "," + std::to_string(e) + "," +
                 task_name(static_cast<TaskId>(t)) + "," +
                 std::to_string(counts_[index(l, e, t)]) + "\n";
        }
    return out;
  }

 private:
  std::size_t index(int layer, int expert, int task) const {
    return (static_cast<std::size_t>(layer) * experts_ + expert) * kNumTasks + task;
  }
  int layers_ = 0;
  int experts_ = 0;
  std::vector<std::uint64_t> counts_;
};

// One expert's two-layer feed-forward weights as graph leaves.
template <typename S>
struct ExpertLeaves {
  Var<S> w1, b1, w2, b2;
};

template <typename S>
Var<S> feed_forward(Var<S> x, Var<S> w1, Var<S> b1, Var<S> w2, Var<S> b2) {
  return add_rowvec(matmul(gelu(add_rowvec(matmul(x, w1), b1)), w2), b2);
}

// Tokenwise mixture: arithmetic mean of the active assigned experts' FFN
// outputs. `active` may be null (inference: all assigned experts).
template <typename S>
Var<S> moe_forward(Var<S> x, TaskId task, const ExpertAssignment& assignment,
                   const std::vector<std::uint8_t>* active,
                   const std::vector<ExpertLeaves<S>>& experts,
                   ActivationCounters* counters = nullptr, int layer = 0) {
  const auto& owned = assignment.experts_for(task);
  if (owned.empty()) throw InvariantError("moe_forward: task has no assigned experts");
  std::vector<int> used;
  for (int e : owned)
    if (!active || (*active)[static_cast<std::size_t>(e)]) used.push_back(e);
  if (used.empty())
    throw InvariantError("moe_forward: dropout mask deactivated every expert of task " +
                         std::string(task_name(task)));
  Var<S> acc;
  for (int e : used) {
    const auto& ex = experts[static_cast<std::size_t>(e)];
    Var<S> y = feed_forward(x, ex.w1, ex.b1, ex.w2, ex.b2);
    acc = (acc.graph == nullptr) ? y : add(acc, y);
    if (counters) counters->record(layer, e, task, static_cast<std::uint64_t>(x.rows()));
  }
  return scale(acc, S(1) / static_cast<S>(used.size()));
}

}  // namespace mtad
