#include "wkcl/dual_alignment.hpp"

#include <algorithm>
#include <map>

#include "wkcl/sampler.hpp"

namespace wkcl {

std::size_t PseudoLabelSet::selected_count() const {
  return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), char{1}));
}

PseudoLabelSet pseudo_label(const MatF& features, const IdList& ids, const MatF& prototypes,
                            std::span<const ClassId> classes, float /*logit_scale*/) {
  // The logit scale is a positive multiplier, so it changes neither the argmax
  // nor the confidence reported as a raw cosine.
  if (features.rows() != static_cast<Eigen::Index>(ids.size())) {
    raise(ErrorKind::ShapeMismatch, "one id per feature row expected");
  }
  if (prototypes.rows() != static_cast<Eigen::Index>(classes.size()) || prototypes.rows() == 0) {
    raise(ErrorKind::ShapeMismatch, "one class id per prototype row expected");
  }
  const MatF scores = normalize_rows(features) * normalize_rows(prototypes).transpose();
  PseudoLabelSet out;
  out.ids = ids;
  out.labels.resize(ids.size());
  out.confidence.resize(ids.size());
  out.selected.assign(ids.size(), 0);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const Eigen::Index best = argmax(scores.row(i));
    out.labels[i] = classes[best];
    out.confidence[i] = std::clamp(scores(i, best), -1.0f, 1.0f);
  }
  return out;
}

PseudoLabelSet select_topk_confident(PseudoLabelSet set, int k_conf) {
  if (k_conf < 1) raise(ErrorKind::ConfigError, "k_conf must be >= 1");
  std::map<ClassId, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < set.size(); ++i) by_class[set.labels[i]].push_back(i);
  std::fill(set.selected.begin(), set.selected.end(), char{0});
  for (auto& [label, members] : by_class) {
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
      return set.confidence[a] > set.confidence[b] ||
             (set.confidence[a] == set.confidence[b] && set.ids[a] < set.ids[b]);
    });
    const std::size_t keep = std::min<std::size_t>(members.size(), static_cast<std::size_t>(k_conf));
    for (std::size_t r = 0; r < keep; ++r) set.selected[members[r]] = 1;
  }
  return set;
}

int Adapter::column(ClassId c) const {
  const auto it = index_.find(c);
  if (it == index_.end()) raise(ErrorKind::IndexOutOfRange, "adapter has no column for class " + std::to_string(c));
  return it->second;
}

void Adapter::add_classes(std::span<const ClassId> new_classes, Rng& rng, float init_scale) {
  for (ClassId c : new_classes) {
    if (index_.count(c)) continue;
    const Eigen::Index col = weight.cols();
    weight.conservativeResize(Eigen::NoChange, col + 1);
    for (Eigen::Index r = 0; r < weight.rows(); ++r) weight(r, col) = init_scale * static_cast<float>(rng.normal());
    index_[c] = static_cast<int>(col);
    classes.push_back(c);
    trained.push_back(0);
  }
}

MatF Adapter::logits(const MatF& features) const {
  if (features.cols() != weight.rows()) raise(ErrorKind::ShapeMismatch, "adapter input dim differs from features");
  return features * weight;
}

namespace {

// Optimizes only the columns that have not been trained before.
class ColumnTrainer {
 public:
  ColumnTrainer(Adapter& adapter, const AdamWConfig& config) : adapter_(adapter) {
    for (int c = 0; c < adapter.num_classes(); ++c) {
      if (!adapter.trained[c]) free_.push_back(c);
    }
    params_.resize(adapter.dim(), static_cast<Eigen::Index>(free_.size()));
    gather(adapter.weight, params_);
    optimizer_ = AdamW<float>(config, params_.size());
  }

  bool empty() const { return free_.empty(); }

  void step(const MatF& full_grad, double lr) {
    if (free_.empty()) return;
    MatF g(params_.rows(), params_.cols());
    gather(full_grad, g);
    optimizer_.step(params_, g, lr);
    for (std::size_t j = 0; j < free_.size(); ++j) adapter_.weight.col(free_[j]) = params_.col(static_cast<Eigen::Index>(j));
  }

  /// Freezes the free columns that received supervision.
  void finish(std::span<const ClassId> supervised_columns) {
    for (ClassId c : supervised_columns) {
      if (std::find(free_.begin(), free_.end(), c) != free_.end()) adapter_.trained[c] = 1;
    }
  }

 private:
  void gather(const MatF& src, MatF& dst) const {
    for (std::size_t j = 0; j < free_.size(); ++j) dst.col(static_cast<Eigen::Index>(j)) = src.col(free_[j]);
  }

  Adapter& adapter_;
  std::vector<int> free_;
  MatF params_;
  AdamW<float> optimizer_;
};

MatF rows_of(const MatF& m, const std::vector<std::size_t>& idx) {
  MatF out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

Stage3Result train_dual_adapters(Adapter& phi_down, const MatF& f_down, std::span<const ClassId> y_down,
                                 Adapter& phi_world, const MatF& f_world, std::span<const ClassId> y_world,
                                 const Stage3Config& config, Rng& rng) {
  if (f_down.rows() != static_cast<Eigen::Index>(y_down.size()) ||
      f_world.rows() != static_cast<Eigen::Index>(y_world.size())) {
    raise(ErrorKind::ShapeMismatch, "one target per feature row expected");
  }
  AdamWConfig opt = config.optimizer;
  if (opt.decay_epochs.empty()) opt.decay_epochs = decay_epochs_for_budget(config.epochs);

  std::vector<ClassId> col_down(y_down.size()), col_world(y_world.size());
  for (std::size_t i = 0; i < y_down.size(); ++i) col_down[i] = phi_down.column(y_down[i]);
  for (std::size_t i = 0; i < y_world.size(); ++i) col_world[i] = phi_world.column(y_world[i]);

  Stage3Result result;
  std::map<ClassId, int> per_class;
  for (ClassId y : y_down) ++per_class[y];
  for (int c = 0; c < phi_down.num_classes(); ++c) {
    if (!phi_down.trained[c] && per_class[phi_down.classes[c]] == 0) {
      result.warnings.push_back("downstream class " + std::to_string(phi_down.classes[c]) +
                                " has no confident pseudo-labelled sample");
    }
  }

  ColumnTrainer down_trainer(phi_down, opt);
  ColumnTrainer world_trainer(phi_world, opt);
  const bool use_world = f_world.rows() > 0;
  EpochSampler down_sampler(static_cast<std::size_t>(f_down.rows()), Rng(rng.next_u64()));
  EpochSampler world_sampler(static_cast<std::size_t>(f_world.rows()), Rng(rng.next_u64()));
  const std::size_t batches_per_epoch =
      f_down.rows() > 0 ? (static_cast<std::size_t>(f_down.rows()) + config.batch_downstream - 1) / config.batch_downstream
                        : (use_world ? (static_cast<std::size_t>(f_world.rows()) + config.batch_world - 1) / config.batch_world : 0);

  MatF empty_features(0, phi_world.dim());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = step_decay_lr(epoch, opt);
    double epoch_total = 0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const auto di = down_sampler.next(static_cast<std::size_t>(config.batch_downstream));
      const auto wi = use_world ? world_sampler.next(static_cast<std::size_t>(config.batch_world))
                                : std::vector<std::size_t>{};
      const MatF fd = rows_of(f_down, di);
      const MatF fw = use_world ? rows_of(f_world, wi) : empty_features;
      std::vector<ClassId> yd, yw;
      for (std::size_t i : di) yd.push_back(col_down[i]);
      for (std::size_t i : wi) yw.push_back(col_world[i]);
      MatF gd, gw;
      const float loss = map_objective<float>(phi_down.weight, fd, yd, phi_world.weight, fw, yw, &gd, &gw);
      if (!std::isfinite(loss) || !gd.allFinite() || !gw.allFinite()) {
        raise(ErrorKind::NonFiniteLoss, "L_map not finite at epoch " + std::to_string(epoch) + " batch " + std::to_string(b));
      }
      down_trainer.step(gd, lr);
      if (use_world) world_trainer.step(gw, lr);
      epoch_total += loss;
      ++result.steps;
    }
    result.epoch_loss.push_back(batches_per_epoch ? epoch_total / static_cast<double>(batches_per_epoch) : 0.0);
  }
  if (batches_per_epoch > 0) {
    down_trainer.finish(col_down);
    if (use_world) world_trainer.finish(col_world);
  }
  return result;
}

}  // namespace wkcl
