#include "wkcl/cross_domain.hpp"

#include <cmath>
#include <optional>

#include "wkcl/sampler.hpp"

namespace wkcl {

ClassId adapter_target(const Adapter& adapter, const VecF& feature, std::span<const ClassId> classes) {
  if (classes.empty()) raise(ErrorKind::ShapeMismatch, "pseudo-target space is empty");
  const VecF logits = adapter_forward(adapter.weight, feature);
  ClassId best = classes[0];
  float best_score = logits[adapter.column(classes[0])];
  for (std::size_t i = 1; i < classes.size(); ++i) {
    const float s = logits[adapter.column(classes[i])];
    if (s > best_score) {
      best_score = s;
      best = classes[i];
    }
  }
  return best;
}

namespace {

// Targets over a prototype bank from adapter logits restricted to `classes`.
class TargetMaker {
 public:
  TargetMaker(const Adapter& adapter, std::span<const ClassId> classes, std::vector<int> bank_rows, Eigen::Index bank_size,
              bool soft)
      : adapter_(adapter), classes_(classes.begin(), classes.end()), rows_(std::move(bank_rows)), bank_size_(bank_size),
        soft_(soft) {
    for (ClassId c : classes_) columns_.push_back(adapter.column(c));
  }

  HeadTargets<float> operator()(const MatF& features) const {
    HeadTargets<float> t;
    t.use_soft = soft_;
    const MatF logits = adapter_.logits(features);
    if (soft_) t.soft.setZero(features.rows(), bank_size_);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
      VecF restricted(static_cast<Eigen::Index>(columns_.size()));
      for (std::size_t j = 0; j < columns_.size(); ++j) restricted[j] = logits(i, columns_[j]);
      if (soft_) {
        const VecF p = softmax(restricted);
        for (std::size_t j = 0; j < rows_.size(); ++j) t.soft(i, rows_[j]) = p[j];
      } else {
        t.hard.push_back(rows_[static_cast<std::size_t>(argmax(restricted))]);
      }
    }
    return t;
  }

 private:
  const Adapter& adapter_;
  std::vector<ClassId> classes_;
  std::vector<int> rows_;
  std::vector<int> columns_;
  Eigen::Index bank_size_;
  bool soft_;
};

// Strong view of each record: uniform over views >= 1, view 0 if it is the only one.
MatF strong_views(const EmbeddingBundle& bundle, const IdList& ids, Rng& rng) {
  MatF out(static_cast<Eigen::Index>(ids.size()), bundle.dim());
  const int views = bundle.width();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int slot = views > 1 ? 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(views - 1))) : 0;
    out.row(static_cast<Eigen::Index>(i)) = bundle.vector(ids[i], slot).transpose();
  }
  return out;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

struct GroupOptimizers {
  AdamW<float> gamma, beta, a, b, down, world;

  GroupOptimizers(const AdamWConfig& c, const Stage4Params<float>& p)
      : gamma(c, p.encoder.gamma.size()), beta(c, p.encoder.beta.size()), a(c, p.encoder.a.size()),
        b(c, p.encoder.b.size()), down(c, p.down.size()), world(c, p.world.size()) {}

  void step(Stage4Params<float>& p, const Stage4Grad<float>& g, double lr) {
    gamma.step(p.encoder.gamma, g.encoder.gamma, lr);
    beta.step(p.encoder.beta, g.encoder.beta, lr);
    if (p.encoder.a.size() > 0) {
      a.step(p.encoder.a, g.encoder.a, lr);
      b.step(p.encoder.b, g.encoder.b, lr);
    }
    down.step(p.down, g.down, lr);
    if (p.world.size() > 0) world.step(p.world, g.world, lr);
  }
};

void check_finite(const LossTerms& t, const Stage4Grad<float>& g, int epoch) {
  const std::pair<const char*, double> named[] = {{"L_DD", t.dd}, {"L_II", t.ii},         {"L_ID", t.id},
                                                  {"L_DI", t.di}, {"L_KD", t.kd},         {"L_replay", t.replay}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) {
      raise(ErrorKind::NonFiniteLoss, std::string(name) + " is not finite at epoch " + std::to_string(epoch));
    }
  }
  if (!g.encoder.gamma.allFinite() || !g.encoder.beta.allFinite() || !g.encoder.a.allFinite() ||
      !g.encoder.b.allFinite() || !g.down.allFinite() || !g.world.allFinite()) {
    raise(ErrorKind::NonFiniteLoss, "L_total gradient is not finite at epoch " + std::to_string(epoch));
  }
}

}  // namespace

Stage4Result train_stage4(PromptedEncoder<float>& encoder, PrototypeBank& bank, const Stage4Inputs& in,
                          const Stage4Config& config, bool use_kd, Rng& rng) {
  if (!in.down_vl || !in.down_ss || !in.phi_down || !in.phi_world) {
    raise(ErrorKind::InvariantViolation, "stage-4 inputs incomplete");
  }
  const bool use_aux = !in.aux.empty();
  const bool use_replay = !in.replay_ids.empty();
  if ((use_aux || use_replay) && (!in.world_vl || !in.world_ss)) {
    raise(ErrorKind::InvariantViolation, "world bundles required for auxiliary or replay data");
  }
  if (in.replay_ids.size() != in.replay_labels.size()) raise(ErrorKind::ShapeMismatch, "one label per replay id");
  if (use_kd && !bank.has_snapshot()) raise(ErrorKind::MissingSnapshot, "KD requested without a prototype snapshot");
  if (config.batch_downstream < 1 || config.batch_aux < 1 || config.batch_replay < 1 || config.epochs < 0) {
    raise(ErrorKind::ConfigError, "stage-4 batch sizes must be >= 1");
  }

  AdamWConfig opt = config.optimizer;
  if (opt.decay_epochs.empty()) opt.decay_epochs = decay_epochs_for_budget(config.epochs);

  Stage4Params<float> params{encoder, bank.downstream(), bank.world()};
  const MatF empty(0, bank.dim());
  const MatF& snap_down = use_kd ? bank.downstream_snapshot() : empty;
  const MatF& snap_world = use_kd ? bank.world_snapshot() : empty;

  std::vector<int> down_rows, world_rows;
  for (ClassId c : in.down_classes) down_rows.push_back(bank.downstream_row(c));
  for (ClassId c : in.world_classes) world_rows.push_back(bank.world_row(c));
  const TargetMaker down_targets(*in.phi_down, in.down_classes, down_rows, params.down.rows(), config.soft_targets);
  const bool use_di = use_aux && !in.world_classes.empty();
  std::optional<TargetMaker> world_targets;
  if (use_di) world_targets.emplace(*in.phi_world, in.world_classes, world_rows, params.world.rows(), config.soft_targets);

  IdList aux_ids;
  std::vector<ClassId> aux_rows;
  for (const AuxSample& s : in.aux) {
    aux_ids.push_back(s.id);
    aux_rows.push_back(bank.world_row(s.world_label));
  }
  std::vector<ClassId> replay_rows;
  for (ClassId c : in.replay_labels) replay_rows.push_back(bank.downstream_row(c));

  const std::size_t n_down = in.down_ids.size();
  const std::size_t batch_down = std::min<std::size_t>(static_cast<std::size_t>(config.batch_downstream), std::max<std::size_t>(n_down, 1));
  EpochSampler down_sampler(n_down, Rng(rng.next_u64()));
  EpochSampler aux_sampler(aux_ids.size(), Rng(rng.next_u64()));
  EpochSampler replay_sampler(in.replay_ids.size(), Rng(rng.next_u64()));
  Rng view_rng(rng.next_u64());
  const std::size_t batches = n_down ? (n_down + batch_down - 1) / batch_down : 0;

  GroupOptimizers optimizers(opt, params);
  Stage4Result result;
  Stage4Grad<float> grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = step_decay_lr(epoch, opt);
    LossTerms sum;
    for (std::size_t step = 0; step < batches; ++step) {
      Stage4Batch<float> batch;
      const IdList ids = pick(in.down_ids, down_sampler.next(batch_down));
      batch.down = strong_views(*in.down_vl, ids, view_rng);
      const MatF ds_identity = in.down_ss->gather(ids, 0);
      batch.dd = down_targets(ds_identity);
      if (use_di) batch.di = (*world_targets)(ds_identity);

      if (use_aux) {
        const auto idx = aux_sampler.next(static_cast<std::size_t>(config.batch_aux));
        const IdList a_ids = pick(aux_ids, idx);
        batch.aux = strong_views(*in.world_vl, a_ids, view_rng);
        batch.ii.hard = pick(aux_rows, idx);
        batch.id = down_targets(in.world_ss->gather(a_ids, 0));
      } else {
        batch.aux.resize(0, bank.dim());
      }
      if (use_replay) {
        const auto idx = replay_sampler.next(static_cast<std::size_t>(config.batch_replay));
        batch.replay = strong_views(*in.world_vl, pick(in.replay_ids, idx), view_rng);
        batch.rp.hard = pick(replay_rows, idx);
      } else {
        batch.replay.resize(0, bank.dim());
      }

      const LossTerms terms = stage4_objective(params, batch, snap_down, snap_world, config.weights, &grad);
      check_finite(terms, grad, epoch);
      optimizers.step(params, grad, lr);
      params.down = normalize_rows(params.down);
      if (params.world.rows() > 0) params.world = normalize_rows(params.world);
      ++result.steps;

      sum.dd += terms.dd;
      sum.ii += terms.ii;
      sum.id += terms.id;
      sum.di += terms.di;
      sum.kd += terms.kd;
      sum.replay += terms.replay;
      sum.total += terms.total;
    }
    const double n = batches ? static_cast<double>(batches) : 1.0;
    EpochLoss row;
    row.lr = lr;
    row.terms = {sum.dd / n, sum.ii / n, sum.id / n, sum.di / n, sum.kd / n, sum.replay / n, sum.total / n};
    result.epochs.push_back(row);
  }
  encoder = params.encoder;
  bank.downstream() = params.down;
  bank.world() = params.world;
  return result;
}

}  // namespace wkcl
