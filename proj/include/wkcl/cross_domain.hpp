#pragma once

// Prompt-guided cross-domain alignment: four cosine-head cross-entropy terms
// between the prompted image features and the two prototype banks, prototype
// distillation against the previous task's snapshot, and replay rehearsal.

#include <span>
#include <string>
#include <vector>

#include "wkcl/bundle.hpp"
#include "wkcl/dual_alignment.hpp"
#include "wkcl/grounding.hpp"
#include "wkcl/optimizer.hpp"
#include "wkcl/prompted_encoder.hpp"

namespace wkcl {

/// Targets of one cosine-head term: hard row indices, or (soft mode) one
/// probability row per sample over the whole bank.
template <typename Scalar>
struct HeadTargets {
  std::vector<ClassId> hard;
  Mat<Scalar> soft;
  bool use_soft = false;

  Eigen::Index size() const { return use_soft ? soft.rows() : static_cast<Eigen::Index>(hard.size()); }
};

/// Mean CE of logit_scale * (z . t_row) against `targets`. Rows of `z` and of
/// the bank are expected to be unit length, so the logits are scaled cosines.
/// Gradients are accumulated (scaled by `weight`) into dz / dbank when given.
template <typename Scalar>
Scalar head_loss(const Mat<Scalar>& z, const Mat<Scalar>& bank, const HeadTargets<Scalar>& targets,
                 Scalar logit_scale, Scalar weight, Mat<Scalar>* dz, Mat<Scalar>* dbank) {
  if (targets.size() != z.rows()) raise(ErrorKind::ShapeMismatch, "one target per feature row expected");
  if (z.rows() == 0) return Scalar(0);
  if (z.cols() != bank.cols()) raise(ErrorKind::ShapeMismatch, "feature dim differs from prototype dim");
  for (ClassId y : targets.hard) {
    if (y < 0 || y >= bank.rows()) raise(ErrorKind::ShapeMismatch, "target row outside the prototype bank");
  }
  const Mat<Scalar> logits = logit_scale * (z * bank.transpose());
  Mat<Scalar> dlogits;
  Mat<Scalar>* want = (dz || dbank) ? &dlogits : nullptr;
  const Scalar loss = targets.use_soft ? mean_cross_entropy<Scalar>(logits, targets.soft, want)
                                       : mean_cross_entropy<Scalar>(logits, std::span<const ClassId>(targets.hard), want);
  if (want) {
    dlogits *= weight * logit_scale;
    if (dz) *dz += dlogits * bank;
    if (dbank) *dbank += dlogits.transpose() * z;
  }
  return loss;
}

/// Mean over the snapshot rows of KL(softmax(old/tau) || softmax(current/tau)),
/// with the softmax taken across embedding coordinates. Snapshot rows are the
/// leading rows of `current`.
template <typename Scalar>
Scalar kd_term(const Mat<Scalar>& snapshot, const Mat<Scalar>& current, Scalar tau, Scalar weight,
               Mat<Scalar>* dcurrent) {
  if (snapshot.rows() == 0) return Scalar(0);
  if (snapshot.rows() > current.rows() || snapshot.cols() != current.cols()) {
    raise(ErrorKind::MissingSnapshot, "snapshot rows do not match the current prototype bank");
  }
  if (!(tau > Scalar(0))) raise(ErrorKind::ConfigError, "KD temperature must be positive");
  const Scalar n = Scalar(snapshot.rows());
  Scalar total = 0;
  Vec<Scalar> g;
  for (Eigen::Index i = 0; i < snapshot.rows(); ++i) {
    total += softened_kl<Scalar>(snapshot.row(i).transpose(), current.row(i).transpose(), tau, dcurrent ? &g : nullptr);
    if (dcurrent) dcurrent->row(i) += (weight / n) * g.transpose();
  }
  return total / n;
}

/// t_D term plus t_I term.
template <typename Scalar>
Scalar loss_kd(const Mat<Scalar>& snap_down, const Mat<Scalar>& snap_world, const Mat<Scalar>& down,
               const Mat<Scalar>& world, Scalar tau) {
  return kd_term<Scalar>(snap_down, down, tau, Scalar(1), nullptr) +
         kd_term<Scalar>(snap_world, world, tau, Scalar(1), nullptr);
}

struct AlignWeights {
  double lambda1 = 1.0;  // L_II
  double lambda2 = 1.0;  // L_ID
  double lambda3 = 1.0;  // L_DI
  double lambda4 = 30.0;  // L_KD
  double tau = 2.0;
  double logit_scale = 100.0;
};

inline double loss_align(double dd, double ii, double id, double di, const AlignWeights& w) {
  if (w.lambda1 < 0 || w.lambda2 < 0 || w.lambda3 < 0) raise(ErrorKind::ConfigError, "lambda weights must be >= 0");
  return dd + w.lambda1 * ii + w.lambda2 * id + w.lambda3 * di;
}

/// One Stage-4 mini-batch. Feature rows come from the strong views of the
/// vision-language bundle; targets index rows of the two prototype banks.
template <typename Scalar>
struct Stage4Batch {
  Mat<Scalar> down;
  HeadTargets<Scalar> dd;  // -> t_D
  HeadTargets<Scalar> di;  // -> t_I, empty when no auxiliary data
  Mat<Scalar> aux;
  HeadTargets<Scalar> ii;  // -> t_I, true labels
  HeadTargets<Scalar> id;  // -> t_D
  Mat<Scalar> replay;
  HeadTargets<Scalar> rp;  // -> t_D, assigned labels

  template <typename OtherScalar>
  Stage4Batch<OtherScalar> cast() const {
    Stage4Batch<OtherScalar> out;
    auto conv = [](const HeadTargets<Scalar>& t) {
      HeadTargets<OtherScalar> o;
      o.hard = t.hard;
      o.soft = t.soft.template cast<OtherScalar>();
      o.use_soft = t.use_soft;
      return o;
    };
    out.down = down.template cast<OtherScalar>();
    out.aux = aux.template cast<OtherScalar>();
    out.replay = replay.template cast<OtherScalar>();
    out.dd = conv(dd);
    out.di = conv(di);
    out.ii = conv(ii);
    out.id = conv(id);
    out.rp = conv(rp);
    return out;
  }
};

template <typename Scalar>
struct Stage4Params {
  PromptedEncoder<Scalar> encoder;
  Mat<Scalar> down;   // t_D
  Mat<Scalar> world;  // t_I

  Eigen::Index num_params() const { return encoder.num_params() + down.size() + world.size(); }

  /// Flat layout: gamma, beta, A, B, t_D, t_I (each in storage order).
  Vec<Scalar> pack() const {
    Vec<Scalar> out(num_params());
    Eigen::Index at = 0;
    auto put = [&](const auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) out[at++] = m.data()[i];
    };
    put(encoder.gamma);
    put(encoder.beta);
    put(encoder.a);
    put(encoder.b);
    put(down);
    put(world);
    return out;
  }

  void unpack(const Vec<Scalar>& flat) {
    if (flat.size() != num_params()) raise(ErrorKind::ShapeMismatch, "flat parameter length differs");
    Eigen::Index at = 0;
    auto get = [&](auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = flat[at++];
    };
    get(encoder.gamma);
    get(encoder.beta);
    get(encoder.a);
    get(encoder.b);
    get(down);
    get(world);
  }
};

template <typename Scalar>
struct Stage4Grad {
  EncoderGrad<Scalar> encoder;
  Mat<Scalar> down, world;

  void zero_like(const Stage4Params<Scalar>& p) {
    encoder.zero_like(p.encoder);
    down.setZero(p.down.rows(), p.down.cols());
    world.setZero(p.world.rows(), p.world.cols());
  }

  Vec<Scalar> pack() const {
    Stage4Params<Scalar> tmp;
    tmp.encoder.gamma = encoder.gamma;
    tmp.encoder.beta = encoder.beta;
    tmp.encoder.a = encoder.a;
    tmp.encoder.b = encoder.b;
    tmp.down = down;
    tmp.world = world;
    return tmp.pack();
  }
};

struct LossTerms {
  double dd = 0, ii = 0, id = 0, di = 0, kd = 0, replay = 0, total = 0;
};

/// L_total = L_DD + l1 L_II + l2 L_ID + l3 L_DI + l4 L_KD + L_replay for one
/// batch, with the analytic gradient w.r.t. every parameter group. Empty
/// branches contribute zero; KD runs over the snapshot rows (empty = off).
template <typename Scalar>
LossTerms stage4_objective(const Stage4Params<Scalar>& params, const Stage4Batch<Scalar>& batch,
                           const Mat<Scalar>& snap_down, const Mat<Scalar>& snap_world, const AlignWeights& w,
                           Stage4Grad<Scalar>* grad) {
  if (grad) grad->zero_like(params);
  const Scalar scale = Scalar(w.logit_scale);
  LossTerms out;

  auto branch = [&](const Mat<Scalar>& h, auto&& terms) {
    if (h.rows() == 0) return;
    const Mat<Scalar> u = params.encoder.transform(h);
    const Mat<Scalar> z = normalize_rows(u);
    Mat<Scalar> dz;
    if (grad) dz.setZero(z.rows(), z.cols());
    terms(z, grad ? &dz : nullptr);
    if (grad) encoder_backward(params.encoder, h, u, dz, grad->encoder);
  };
  Mat<Scalar>* gdown = grad ? &grad->down : nullptr;
  Mat<Scalar>* gworld = grad ? &grad->world : nullptr;

  branch(batch.down, [&](const Mat<Scalar>& z, Mat<Scalar>* dz) {
    out.dd = head_loss(z, params.down, batch.dd, scale, Scalar(1), dz, gdown);
    if (batch.di.size() > 0) out.di = head_loss(z, params.world, batch.di, scale, Scalar(w.lambda3), dz, gworld);
  });
  branch(batch.aux, [&](const Mat<Scalar>& z, Mat<Scalar>* dz) {
    out.ii = head_loss(z, params.world, batch.ii, scale, Scalar(w.lambda1), dz, gworld);
    out.id = head_loss(z, params.down, batch.id, scale, Scalar(w.lambda2), dz, gdown);
  });
  branch(batch.replay, [&](const Mat<Scalar>& z, Mat<Scalar>* dz) {
    out.replay = head_loss(z, params.down, batch.rp, scale, Scalar(1), dz, gdown);
  });
  const Scalar tau = Scalar(w.tau);
  const Scalar l4 = Scalar(w.lambda4);
  out.kd = kd_term(snap_down, params.down, tau, l4, gdown) + kd_term(snap_world, params.world, tau, l4, gworld);
  out.total = loss_align(out.dd, out.ii, out.id, out.di, w) + w.lambda4 * out.kd + out.replay;
  return out;
}

struct Stage4Config {
  int epochs = 30;
  int batch_downstream = 256;  // clamped to the task's train size
  int batch_aux = 64;
  int batch_replay = 64;
  bool soft_targets = false;
  AlignWeights weights;
  AdamWConfig optimizer;  // decay epochs derived from `epochs` if empty
};

/// Read-only inputs of one task's Stage-4 run.
struct Stage4Inputs {
  const EmbeddingBundle* down_vl = nullptr;
  const EmbeddingBundle* down_ss = nullptr;
  const EmbeddingBundle* world_vl = nullptr;
  const EmbeddingBundle* world_ss = nullptr;
  const Adapter* phi_down = nullptr;
  const Adapter* phi_world = nullptr;
  IdList down_ids;                       // current task train samples
  std::vector<ClassId> down_classes;     // Y_D^t, pseudo-target space of the downstream adapter
  std::vector<AuxSample> aux;            // empty: auxiliary terms off
  std::vector<ClassId> world_classes;    // world classes of A^t
  IdList replay_ids;                     // world sample ids
  std::vector<ClassId> replay_labels;    // assigned downstream classes
};

struct EpochLoss {
  LossTerms terms;  // batch means
  double lr = 0;
};

struct Stage4Result {
  std::vector<EpochLoss> epochs;
  std::int64_t steps = 0;
};

/// Trains the encoder and both prototype banks of `bank` on L_total. KD uses
/// the bank's snapshot when `use_kd` is set.
Stage4Result train_stage4(PromptedEncoder<float>& encoder, PrototypeBank& bank, const Stage4Inputs& inputs,
                          const Stage4Config& config, bool use_kd, Rng& rng);

/// Hard pseudo-target: arg max of the adapter logits restricted to `classes`
/// (ties to the earlier entry), returned as a class id.
ClassId adapter_target(const Adapter& adapter, const VecF& feature, std::span<const ClassId> classes);

}  // namespace wkcl
