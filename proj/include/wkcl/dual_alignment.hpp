#pragma once

// Pseudo-labeling with the frozen vision-language features and training of the
// two linear adapters that map self-supervised features into class logits.

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "wkcl/numerics.hpp"
#include "wkcl/optimizer.hpp"
#include "wkcl/rng.hpp"

namespace wkcl {

struct PseudoLabelSet {
  IdList ids;
  std::vector<ClassId> labels;    // predicted class id
  std::vector<float> confidence;  // max cosine score
  std::vector<char> selected;

  std::size_t size() const { return ids.size(); }
  std::size_t selected_count() const;
};

/// Argmax cosine between each feature row and the prototype rows; `classes`
/// maps prototype row -> class id. Ties resolve to the lower row.
PseudoLabelSet pseudo_label(const MatF& features, const IdList& ids, const MatF& prototypes,
                            std::span<const ClassId> classes, float logit_scale);

/// Flags, per predicted class, the `k_conf` most confident samples (ties go to
/// the lower sample id).
PseudoLabelSet select_topk_confident(PseudoLabelSet set, int k_conf);

/// Bias-free linear head: logits = W^T f.
template <typename DerivedW, typename DerivedF>
Vec<typename DerivedW::Scalar> adapter_forward(const Eigen::MatrixBase<DerivedW>& weight,
                                               const Eigen::MatrixBase<DerivedF>& feature) {
  if (weight.rows() != feature.size()) raise(ErrorKind::ShapeMismatch, "adapter input dim differs from feature");
  return weight.transpose() * feature;
}

/// A linear adapter whose columns are labelled by class id. Columns are only
/// ever appended; `trained` marks columns optimized in an earlier task, which
/// stay frozen afterwards.
struct Adapter {
  MatF weight;  // [d x C]
  std::vector<ClassId> classes;
  std::vector<char> trained;

  Adapter() = default;
  explicit Adapter(int dim) : weight(dim, 0) {}

  int dim() const { return static_cast<int>(weight.rows()); }
  int num_classes() const { return static_cast<int>(weight.cols()); }
  int column(ClassId c) const;
  bool has(ClassId c) const { return index_.count(c) > 0; }

  /// Appends N(0, init_scale^2) columns for classes not yet present.
  void add_classes(std::span<const ClassId> new_classes, Rng& rng, float init_scale);

  /// Logits for every feature row, [n x C].
  MatF logits(const MatF& features) const;

 private:
  std::unordered_map<ClassId, int> index_;
};

/// L_map = mean CE(W_D^T f_D, y_D) + mean CE(W_I^T f_I, y_I); either term is
/// zero when its batch is empty. Targets are column indices.
template <typename Scalar>
Scalar map_objective(const Mat<Scalar>& w_down, const Mat<Scalar>& f_down, std::span<const ClassId> y_down,
                     const Mat<Scalar>& w_world, const Mat<Scalar>& f_world, std::span<const ClassId> y_world,
                     Mat<Scalar>* grad_down, Mat<Scalar>* grad_world) {
  Scalar loss = 0;
  Mat<Scalar> dlogits;
  if (grad_down) grad_down->setZero(w_down.rows(), w_down.cols());
  if (grad_world) grad_world->setZero(w_world.rows(), w_world.cols());
  if (f_down.rows() > 0) {
    const Mat<Scalar> logits = f_down * w_down;
    loss += mean_cross_entropy<Scalar>(logits, y_down, grad_down ? &dlogits : nullptr);
    if (grad_down) *grad_down = f_down.transpose() * dlogits;
  }
  if (f_world.rows() > 0) {
    const Mat<Scalar> logits = f_world * w_world;
    loss += mean_cross_entropy<Scalar>(logits, y_world, grad_world ? &dlogits : nullptr);
    if (grad_world) *grad_world = f_world.transpose() * dlogits;
  }
  return loss;
}

struct Stage3Config {
  int epochs = 20;
  int batch_downstream = 32;
  int batch_world = 64;
  AdamWConfig optimizer;  // decay epochs are derived from `epochs` if empty
};

struct Stage3Result {
  std::vector<double> epoch_loss;
  std::vector<std::string> warnings;
  std::int64_t steps = 0;
};

/// Trains the untrained columns of both adapters on L_map with mini-batch
/// AdamW. `y_down` / `y_world` are class ids (mapped to columns internally).
/// An empty world batch disables the world term.
Stage3Result train_dual_adapters(Adapter& phi_down, const MatF& f_down, std::span<const ClassId> y_down,
                                 Adapter& phi_world, const MatF& f_world, std::span<const ClassId> y_world,
                                 const Stage3Config& config, Rng& rng);

}  // namespace wkcl
