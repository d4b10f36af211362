#pragma once

// Class-balanced replay memory built from auxiliary world samples relabelled
// into the downstream label space.

#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <set>
#include <span>
#include <vector>

#include "wkcl/rng.hpp"
#include "wkcl/sampler.hpp"
#include "wkcl/types.hpp"

namespace wkcl {

enum class SampleSource { World, Downstream };

struct ReplayEntry {
  SampleId world_id = 0;
  ClassId label = 0;  // assigned downstream class
  float score = 0;    // cosine to that class's prototype
  int task = 0;       // task that contributed the entry
  SampleSource source = SampleSource::World;
};

/// Assigns every sample the arg max class of `scores` ([n x classes.size()],
/// cosine similarities) and keeps, per class, the k best (ties to the lower
/// sample id). Classes with no assignments contribute nothing; k = 0 selects
/// nothing. Entries are ordered by class position, then rank.
std::vector<ReplayEntry> select_replay(const IdList& ids, const MatF& scores, std::span<const ClassId> classes, int k,
                                       int task);

/// Cosine scores of prompted features [n x d] against prototype rows.
MatF replay_scores(const MatF& prompted_features, const MatF& prototypes);

class ReplayMemory {
 public:
  explicit ReplayMemory(int cap = 10) : cap_(cap) {}

  int cap() const { return cap_; }
  const std::vector<ReplayEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::set<int>& tasks() const { return tasks_; }

  /// Adds one task's contribution. Every entry must come from that task, be a
  /// world sample with an id below `world_count`, and respect the per-class
  /// cap within the contribution.
  void merge(const std::vector<ReplayEntry>& contribution, int task, std::int64_t world_count);

  IdList ids() const;
  std::vector<ClassId> labels() const;
  std::size_t count_for(ClassId c) const;

  nlohmann::json to_json() const;

 private:
  int cap_;
  std::vector<ReplayEntry> entries_;
  std::set<int> tasks_;
};

/// Uniform draws without replacement within a pass over the memory, reshuffled
/// between passes; a batch is clamped to what remains of the pass.
class ReplaySampler {
 public:
  ReplaySampler(const ReplayMemory& memory, Rng rng);
  std::vector<ReplayEntry> next(std::size_t batch);

 private:
  const ReplayMemory& memory_;
  EpochSampler sampler_;
};

}  // namespace wkcl
