#pragma once

#include <cstdint>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <vector>

#include "wkcl/types.hpp"

namespace wkcl {

/// a[t][k]: accuracy on task t's test split after training task k (k >= t),
/// 0-based. Entries are written once and never changed.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(int num_tasks = 0);

  int num_tasks() const { return num_tasks_; }
  void set(int t, int k, double accuracy);
  bool defined(int t, int k) const;
  double at(int t, int k) const;

  /// Accuracy on the cumulative test set after task k.
  void set_cumulative(int k, double accuracy);
  bool cumulative_defined(int k) const;
  double cumulative(int k) const;

  /// Unweighted mean of a[t][k] over t <= k.
  double mean_over_tasks(int k) const;

  /// Rows as arrays with null below the diagonal.
  nlohmann::json to_json() const;

 private:
  void check(int t, int k) const;

  int num_tasks_;
  std::vector<double> values_;  // row-major [T x T], NaN when unset
  std::vector<double> cumulative_;
};

/// F(t) = max_k a[t][k] - a[t][T-1] over the defined k; Undefined for the
/// last task or when the final entry is missing. Negative values mean the
/// task improved later on.
double forgetting(const AccuracyMatrix& matrix, int t);

/// Mean of F(t) over t < T-1; 0 for a single-task stream.
double mean_forgetting(const AccuracyMatrix& matrix);

/// Full-scale trainable parameter count of the prompted model:
/// 768 T + 512 C + 39,936.
std::int64_t count_trainable_params(std::int64_t prompt_tokens, std::int64_t classes);

/// Parameters trained by the feature-space surrogate: gamma, beta, the rank-r
/// residual and the prototype rows.
std::int64_t count_surrogate_params(std::int64_t dim, std::int64_t rank, std::int64_t prototype_rows);

/// Fraction of predictions equal to the labels; EmptySplit on no samples.
double accuracy(std::span<const ClassId> predictions, std::span<const ClassId> labels);

}  // namespace wkcl
