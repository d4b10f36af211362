#include "wkcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "wkcl/error.hpp"

namespace wkcl {

namespace {
constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
}

AccuracyMatrix::AccuracyMatrix(int num_tasks)
    : num_tasks_(num_tasks),
      values_(static_cast<std::size_t>(num_tasks) * static_cast<std::size_t>(num_tasks), kUnset),
      cumulative_(static_cast<std::size_t>(num_tasks), kUnset) {
  if (num_tasks < 0) raise(ErrorKind::ConfigError, "task count must be >= 0");
}

void AccuracyMatrix::check(int t, int k) const {
  if (t < 0 || k < 0 || t >= num_tasks_ || k >= num_tasks_) {
    raise(ErrorKind::IndexOutOfRange, "accuracy entry (" + std::to_string(t) + ", " + std::to_string(k) + ") out of range");
  }
  if (k < t) raise(ErrorKind::Undefined, "accuracy of a task before it is trained is undefined");
}

void AccuracyMatrix::set(int t, int k, double value) {
  check(t, k);
  if (!(value >= 0 && value <= 1)) raise(ErrorKind::InvariantViolation, "accuracy must lie in [0, 1]");
  double& slot = values_[static_cast<std::size_t>(t * num_tasks_ + k)];
  if (!std::isnan(slot)) raise(ErrorKind::InvariantViolation, "accuracy entries are write-once");
  slot = value;
}

bool AccuracyMatrix::defined(int t, int k) const {
  if (t < 0 || k < t || k >= num_tasks_) return false;
  return !std::isnan(values_[static_cast<std::size_t>(t * num_tasks_ + k)]);
}

double AccuracyMatrix::at(int t, int k) const {
  check(t, k);
  const double v = values_[static_cast<std::size_t>(t * num_tasks_ + k)];
  if (std::isnan(v)) raise(ErrorKind::Undefined, "accuracy entry not recorded yet");
  return v;
}

void AccuracyMatrix::set_cumulative(int k, double value) {
  check(0, k);
  if (!(value >= 0 && value <= 1)) raise(ErrorKind::InvariantViolation, "accuracy must lie in [0, 1]");
  double& slot = cumulative_[static_cast<std::size_t>(k)];
  if (!std::isnan(slot)) raise(ErrorKind::InvariantViolation, "accuracy entries are write-once");
  slot = value;
}

bool AccuracyMatrix::cumulative_defined(int k) const {
  return k >= 0 && k < num_tasks_ && !std::isnan(cumulative_[static_cast<std::size_t>(k)]);
}

double AccuracyMatrix::cumulative(int k) const {
  check(0, k);
  const double v = cumulative_[static_cast<std::size_t>(k)];
  if (std::isnan(v)) raise(ErrorKind::Undefined, "cumulative accuracy not recorded yet");
  return v;
}

double AccuracyMatrix::mean_over_tasks(int k) const {
  double sum = 0;
  for (int t = 0; t <= k; ++t) sum += at(t, k);
  return sum / (k + 1);
}

nlohmann::json AccuracyMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (int t = 0; t < num_tasks_; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < num_tasks_; ++k) row.push_back(defined(t, k) ? nlohmann::json(at(t, k)) : nlohmann::json());
    rows.push_back(row);
  }
  return rows;
}

double forgetting(const AccuracyMatrix& matrix, int t) {
  const int last = matrix.num_tasks() - 1;
  if (t < 0 || t > last) raise(ErrorKind::IndexOutOfRange, "forgetting of a task outside the stream");
  if (t == last) raise(ErrorKind::Undefined, "forgetting is undefined for the last task");
  if (!matrix.defined(t, last)) raise(ErrorKind::Undefined, "final accuracy of task " + std::to_string(t) + " missing");
  double best = matrix.at(t, last);
  for (int k = t; k <= last; ++k) {
    if (matrix.defined(t, k)) best = std::max(best, matrix.at(t, k));
  }
  return best - matrix.at(t, last);
}

double mean_forgetting(const AccuracyMatrix& matrix) {
  const int n = matrix.num_tasks() - 1;
  if (n <= 0) return 0.0;
  double sum = 0;
  for (int t = 0; t < n; ++t) sum += forgetting(matrix, t);
  return sum / n;
}

std::int64_t count_trainable_params(std::int64_t prompt_tokens, std::int64_t classes) {
  return 768 * prompt_tokens + 512 * classes + 39936;
}

std::int64_t count_surrogate_params(std::int64_t dim, std::int64_t rank, std::int64_t prototype_rows) {
  return 2 * dim + rank * 2 * dim + prototype_rows * dim;
}

double accuracy(std::span<const ClassId> predictions, std::span<const ClassId> labels) {
  if (predictions.size() != labels.size()) raise(ErrorKind::ShapeMismatch, "one prediction per label expected");
  if (labels.empty()) raise(ErrorKind::EmptySplit, "accuracy of an empty split");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace wkcl
