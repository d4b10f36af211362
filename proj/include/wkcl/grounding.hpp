#pragma once

// Task-aware world-knowledge retrieval and text prototype construction.

#include <algorithm>
#include <nlohmann/json_fwd.hpp>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include "wkcl/bundle.hpp"
#include "wkcl/numerics.hpp"

namespace wkcl {

/// Cosine similarity of every downstream row against every world row.
template <typename Scalar>
Mat<Scalar> class_similarity(const Mat<Scalar>& downstream, const Mat<Scalar>& world) {
  if (downstream.cols() != world.cols()) raise(ErrorKind::ShapeMismatch, "embedding dims differ");
  const Mat<Scalar> a = normalize_rows(downstream);
  const Mat<Scalar> b = normalize_rows(world);
  Mat<Scalar> sim = a * b.transpose();
  return sim.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
}

struct Retrieved {
  ClassId world_class = 0;
  float score = 0;
};

/// Per downstream row, the K most similar world classes in descending score;
/// ties go to the lower world-class index.
template <typename Scalar>
std::vector<std::vector<Retrieved>> retrieve_topk(const Mat<Scalar>& similarity, int k) {
  if (k < 1) raise(ErrorKind::ConfigError, "retrieval K must be >= 1");
  std::vector<std::vector<Retrieved>> out(static_cast<std::size_t>(similarity.rows()));
  const auto take = static_cast<std::size_t>(std::min<Eigen::Index>(k, similarity.cols()));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(similarity.cols()));
  for (Eigen::Index i = 0; i < similarity.rows(); ++i) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        const Scalar sa = similarity(i, a), sb = similarity(i, b);
                        return sa > sb || (sa == sb && a < b);
                      });
    for (std::size_t r = 0; r < take; ++r) {
      out[static_cast<std::size_t>(i)].push_back(
          {static_cast<ClassId>(order[r]), static_cast<float>(similarity(i, order[r]))});
    }
  }
  return out;
}

struct AuxSample {
  SampleId id = 0;          // record in the world bundle
  ClassId world_label = 0;  // world class id
};

/// The auxiliary supervised pool of one task.
struct AuxiliaryPool {
  int task = 0;
  int retrieval_k = 0;
  int cap = 0;
  std::vector<ClassId> downstream_classes;
  std::vector<std::vector<Retrieved>> retrieved;  // parallel to downstream_classes
  std::vector<AuxSample> samples;                 // ascending id, no duplicates

  /// Distinct retrieved world classes in ascending id order.
  std::vector<ClassId> world_classes() const;
  IdList sample_ids() const;
};

/// Union over downstream classes of world samples whose label is retrieved,
/// keeping at most `cap` samples (lowest ids) per world class.
AuxiliaryPool build_auxiliary_pool(int task, std::span<const ClassId> downstream_classes,
                                   const std::vector<std::vector<Retrieved>>& retrieved,
                                   const EmbeddingBundle& world_images, int cap, int retrieval_k);

/// Mean of the M description embeddings, normalized to unit length.
template <typename Scalar>
Vec<Scalar> average_prototype(const Mat<Scalar>& descriptions) {
  if (descriptions.rows() < 1) raise(ErrorKind::ShapeMismatch, "need at least one description");
  Vec<Scalar> mean = Vec<Scalar>::Zero(descriptions.cols());
  for (Eigen::Index m = 0; m < descriptions.rows(); ++m) mean += descriptions.row(m).transpose();
  mean /= Scalar(descriptions.rows());
  return l2_normalize(mean);
}

/// Prototypes [classes.size() x d] from a text-description (or text-class)
/// bundle, one row per entry of `classes`.
MatF average_prototypes(const EmbeddingBundle& descriptions, std::span<const ClassId> classes);

/// World prototypes: normalized single class-name embeddings.
MatF world_prototypes(const EmbeddingBundle& world_names, std::span<const ClassId> classes);

/// Learnable text prototypes of both label spaces plus the frozen snapshot
/// taken at the end of the previous task. Rows are appended as classes first
/// appear, so snapshot rows are always a prefix of the live rows.
class PrototypeBank {
 public:
  PrototypeBank() = default;
  explicit PrototypeBank(int dim) : downstream_(0, dim), world_(0, dim) {}

  int dim() const { return static_cast<int>(downstream_.cols()); }

  /// Adds rows for classes not yet present; existing rows are left alone.
  void add_downstream(std::span<const ClassId> classes, const MatF& rows);
  void add_world(std::span<const ClassId> classes, const MatF& rows);

  const MatF& downstream() const { return downstream_; }
  const MatF& world() const { return world_; }
  MatF& downstream() { return downstream_; }
  MatF& world() { return world_; }

  const std::vector<ClassId>& downstream_classes() const { return downstream_ids_; }
  const std::vector<ClassId>& world_classes() const { return world_ids_; }

  int downstream_row(ClassId c) const;
  int world_row(ClassId c) const;
  bool has_world(ClassId c) const { return world_index_.count(c) > 0; }

  void snapshot();
  bool has_snapshot() const { return has_snapshot_; }
  const MatF& downstream_snapshot() const { return downstream_snapshot_; }
  const MatF& world_snapshot() const { return world_snapshot_; }

  void renormalize();

 private:
  MatF downstream_;
  MatF world_;
  std::vector<ClassId> downstream_ids_;
  std::vector<ClassId> world_ids_;
  std::unordered_map<ClassId, int> downstream_index_;
  std::unordered_map<ClassId, int> world_index_;
  MatF downstream_snapshot_;
  MatF world_snapshot_;
  bool has_snapshot_ = false;
};

/// class name -> ordered retrieved names with scores.
nlohmann::json retrieval_to_json(const std::vector<std::string>& downstream_names,
                                 const std::vector<std::string>& world_names,
                                 std::span<const ClassId> downstream_classes,
                                 const std::vector<std::vector<Retrieved>>& retrieved);

}  // namespace wkcl
