#include "wkcl/replay.hpp"

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>

#include "wkcl/error.hpp"
#include "wkcl/numerics.hpp"

namespace wkcl {

std::vector<ReplayEntry> select_replay(const IdList& ids, const MatF& scores, std::span<const ClassId> classes, int k,
                                       int task) {
  if (k < 0) raise(ErrorKind::ConfigError, "replay k must be >= 0");
  if (scores.rows() != static_cast<Eigen::Index>(ids.size()) ||
      scores.cols() != static_cast<Eigen::Index>(classes.size())) {
    raise(ErrorKind::ShapeMismatch, "replay score matrix shape differs from ids x classes");
  }
  std::vector<ReplayEntry> out;
  if (k == 0 || classes.empty()) return out;
  std::vector<std::vector<ReplayEntry>> per_class(classes.size());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const Eigen::Index best = argmax(scores.row(i));
    per_class[static_cast<std::size_t>(best)].push_back(
        {ids[static_cast<std::size_t>(i)], classes[static_cast<std::size_t>(best)], std::clamp(scores(i, best), -1.0f, 1.0f),
         task, SampleSource::World});
  }
  for (auto& members : per_class) {
    std::sort(members.begin(), members.end(), [](const ReplayEntry& a, const ReplayEntry& b) {
      return a.score > b.score || (a.score == b.score && a.world_id < b.world_id);
    });
    const std::size_t keep = std::min(members.size(), static_cast<std::size_t>(k));
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  return out;
}

MatF replay_scores(const MatF& prompted_features, const MatF& prototypes) {
  if (prompted_features.cols() != prototypes.cols()) raise(ErrorKind::ShapeMismatch, "feature dim differs from prototypes");
  return normalize_rows(prompted_features) * normalize_rows(prototypes).transpose();
}

void ReplayMemory::merge(const std::vector<ReplayEntry>& contribution, int task, std::int64_t world_count) {
  if (tasks_.count(task)) raise(ErrorKind::DuplicateTask, "replay contribution of task " + std::to_string(task) + " already merged");
  std::map<ClassId, int> per_class;
  for (const ReplayEntry& e : contribution) {
    if (e.source != SampleSource::World) {
      raise(ErrorKind::PrivacyViolation, "downstream sample " + std::to_string(e.world_id) + " offered to replay memory");
    }
    if (e.world_id < 0 || e.world_id >= world_count) {
      raise(ErrorKind::PrivacyViolation, "replay id " + std::to_string(e.world_id) + " is not a world sample");
    }
    if (e.task != task) raise(ErrorKind::InvariantViolation, "replay entry tagged with another task");
    if (++per_class[e.label] > cap_) {
      raise(ErrorKind::InvariantViolation, "replay contribution exceeds the per-class cap for class " + std::to_string(e.label));
    }
  }
  tasks_.insert(task);
  entries_.insert(entries_.end(), contribution.begin(), contribution.end());
}

IdList ReplayMemory::ids() const {
  IdList out;
  for (const ReplayEntry& e : entries_) out.push_back(e.world_id);
  return out;
}

std::vector<ClassId> ReplayMemory::labels() const {
  std::vector<ClassId> out;
  for (const ReplayEntry& e : entries_) out.push_back(e.label);
  return out;
}

std::size_t ReplayMemory::count_for(ClassId c) const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [c](const ReplayEntry& e) { return e.label == c; }));
}

nlohmann::json ReplayMemory::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const ReplayEntry& e : entries_) {
    entries.push_back({{"world_id", e.world_id}, {"label", e.label}, {"score", e.score}, {"task", e.task}});
  }
  return {{"cap", cap_}, {"size", entries_.size()}, {"tasks", tasks_}, {"entries", entries}};
}

ReplaySampler::ReplaySampler(const ReplayMemory& memory, Rng rng) : memory_(memory), sampler_(memory.size(), rng) {
  if (memory.empty()) raise(ErrorKind::EmptyMemory, "cannot sample from an empty replay memory");
}

std::vector<ReplayEntry> ReplaySampler::next(std::size_t batch) {
  std::vector<ReplayEntry> out;
  for (std::size_t i : sampler_.next(batch)) out.push_back(memory_.entries()[i]);
  return out;
}

}  // namespace wkcl
