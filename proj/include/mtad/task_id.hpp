// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>

namespace mtad {

// The five proxy tasks. Order is load-bearing: expert assignment, loss
// vectors and weight vectors all index by it.
enum class TaskId : int { kMim = 0, kJigsaw = 1, kDeMixUp = 2, kAugCls = 3, kGenCls = 4 };

inline constexpr int kNumTasks = 5;

inline constexpr std::array<TaskId, kNumTasks> all_tasks() {
  return {TaskId::kMim, TaskId::kJigsaw, TaskId::kDeMixUp, TaskId::kAugCls, TaskId::kGenCls};
}

inline const char* task_name(TaskId t) {
  switch (t) {
    case TaskId::kMim: return "mim";
    case TaskId::kJigsaw: return "jigsaw";
    case TaskId::kDeMixUp: return "demixup";
    case TaskId::kAugCls: return "augcls";
    case TaskId::kGenCls: return "gencls";
  }
  return "?";
}

inline int task_index(TaskId t) { return static_cast<int>(t); }

}  // namespace mtad
