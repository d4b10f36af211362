#include "wkcl/task_stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "wkcl/error.hpp"
#include "wkcl/rng.hpp"

namespace wkcl {

using nlohmann::json;

std::vector<ClassId> TaskStream::classes_through(int t) const {
  std::vector<ClassId> out;
  for (int k = 0; k <= t && k < num_tasks(); ++k) {
    out.insert(out.end(), tasks[k].classes.begin(), tasks[k].classes.end());
  }
  return out;
}

void TaskStream::validate(std::int64_t num_samples, std::span<const std::int32_t> labels) const {
  if (tasks.empty()) raise(ErrorKind::InvariantViolation, "task stream has no tasks");
  std::vector<int> owner(static_cast<std::size_t>(std::max(num_classes, 0)), -1);
  for (int t = 0; t < num_tasks(); ++t) {
    if (tasks[t].classes.empty()) raise(ErrorKind::InvariantViolation, "task " + std::to_string(t + 1) + " has no classes");
    for (ClassId c : tasks[t].classes) {
      if (c < 0 || c >= num_classes) raise(ErrorKind::LabelOutOfRange, "task class " + std::to_string(c));
      if (owner[c] >= 0) raise(ErrorKind::InvariantViolation, "class " + std::to_string(c) + " appears in two tasks");
      owner[c] = t;
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    if (owner[c] < 0) raise(ErrorKind::InvariantViolation, "class " + std::to_string(c) + " is in no task");
  }
  std::set<SampleId> seen;
  for (int t = 0; t < num_tasks(); ++t) {
    for (const IdList* ids : {&tasks[t].train_ids, &tasks[t].test_ids}) {
      for (SampleId id : *ids) {
        if (id < 0 || id >= num_samples) raise(ErrorKind::IndexOutOfRange, "sample id " + std::to_string(id));
        if (!seen.insert(id).second) {
          raise(ErrorKind::InvariantViolation, "sample id " + std::to_string(id) + " listed twice");
        }
        if (!labels.empty() && owner[labels[static_cast<std::size_t>(id)]] != t) {
          raise(ErrorKind::InvariantViolation,
                "sample " + std::to_string(id) + " does not belong to a class of task " + std::to_string(t + 1));
        }
      }
    }
  }
}

TaskStream make_task_stream(std::span<const std::int32_t> labels, int num_classes, int num_tasks,
                            double test_fraction, std::uint64_t seed) {
  if (num_tasks < 1 || num_classes < num_tasks) {
    raise(ErrorKind::ConfigError, "need 1 <= tasks <= classes");
  }
  if (!(test_fraction > 0 && test_fraction < 1)) raise(ErrorKind::ConfigError, "test fraction must be in (0, 1)");
  TaskStream stream;
  stream.num_classes = num_classes;
  stream.tasks.resize(static_cast<std::size_t>(num_tasks));
  const int base = num_classes / num_tasks;
  const int extra = num_classes % num_tasks;
  ClassId next = 0;
  std::vector<int> task_of(static_cast<std::size_t>(num_classes));
  for (int t = 0; t < num_tasks; ++t) {
    const int size = base + (t < extra ? 1 : 0);
    for (int i = 0; i < size; ++i) {
      task_of[next] = t;
      stream.tasks[t].classes.push_back(next++);
    }
  }
  std::vector<IdList> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) raise(ErrorKind::LabelOutOfRange, "label " + std::to_string(labels[i]));
    by_class[labels[i]].push_back(static_cast<SampleId>(i));
  }
  for (int c = 0; c < num_classes; ++c) {
    IdList ids = by_class[c];
    Rng rng = Rng::derive(seed, "task-split", static_cast<std::uint64_t>(c));
    rng.shuffle(ids);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
    Task& task = stream.tasks[task_of[c]];
    task.test_ids.insert(task.test_ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    task.train_ids.insert(task.train_ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  }
  for (Task& task : stream.tasks) {
    std::sort(task.train_ids.begin(), task.train_ids.end());
    std::sort(task.test_ids.begin(), task.test_ids.end());
  }
  return stream;
}

void write_task_stream(const TaskStream& stream, const std::filesystem::path& path) {
  json j;
  j["version"] = 1;
  j["num_classes"] = stream.num_classes;
  j["tasks"] = json::array();
  for (const Task& task : stream.tasks) {
    j["tasks"].push_back({{"classes", task.classes}, {"train_ids", task.train_ids}, {"test_ids", task.test_ids}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorKind::IoError, "cannot write " + path.string());
  out << j.dump(1) << "\n";
}

TaskStream read_task_stream(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::IoError, "cannot open " + path.string());
  TaskStream stream;
  try {
    const json j = json::parse(in);
    if (j.at("version").get<int>() != 1) raise(ErrorKind::BadVersion, "task stream version must be 1");
    stream.num_classes = j.at("num_classes").get<int>();
    for (const auto& t : j.at("tasks")) {
      Task task;
      task.classes = t.at("classes").get<std::vector<ClassId>>();
      task.train_ids = t.at("train_ids").get<IdList>();
      task.test_ids = t.at("test_ids").get<IdList>();
      stream.tasks.push_back(std::move(task));
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::BadManifest, "task stream " + path.string() + ": " + e.what());
  }
  return stream;
}

}  // namespace wkcl
