#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wkcl/types.hpp"

namespace wkcl {

/// One step of the class-incremental stream. Train ids carry no labels for
/// the learner; test labels are read from the bundle by the evaluator only.
struct Task {
  std::vector<ClassId> classes;
  IdList train_ids;
  IdList test_ids;
};

struct TaskStream {
  int num_classes = 0;
  std::vector<Task> tasks;

  int num_tasks() const { return static_cast<int>(tasks.size()); }

  /// Classes of tasks 0..t inclusive, in task order.
  std::vector<ClassId> classes_through(int t) const;

  /// Checks: class sets partition [0, num_classes); ids are in range and
  /// train/test ids are disjoint; when labels are given every id belongs to a
  /// class of its task.
  void validate(std::int64_t num_samples, std::span<const std::int32_t> labels = {}) const;
};

/// Equal class split across tasks (remainder classes go to the earliest tasks),
/// classes assigned in id order; per class a seeded `test_fraction` of samples
/// goes to the test split.
TaskStream make_task_stream(std::span<const std::int32_t> labels, int num_classes, int num_tasks,
                            double test_fraction, std::uint64_t seed);

void write_task_stream(const TaskStream& stream, const std::filesystem::path& path);
TaskStream read_task_stream(const std::filesystem::path& path);

}  // namespace wkcl
