#include "wkcl/gradcheck_suite.hpp"

#include <algorithm>

#include "wkcl/cross_domain.hpp"
#include "wkcl/dual_alignment.hpp"
#include "wkcl/rng.hpp"

namespace wkcl {

namespace {

MatD gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

std::vector<ClassId> labels(Rng& rng, int n, int classes) {
  std::vector<ClassId> out;
  for (int i = 0; i < n; ++i) out.push_back(static_cast<ClassId>(rng.below(static_cast<std::uint64_t>(classes))));
  return out;
}

HeadTargets<double> targets(Rng& rng, int n, int classes, bool soft) {
  HeadTargets<double> t;
  t.use_soft = soft;
  if (soft) {
    t.soft = gaussian(rng, n, classes, 1.0);
    for (Eigen::Index i = 0; i < n; ++i) t.soft.row(i) = softmax(t.soft.row(i).transpose()).transpose();
  } else {
    t.hard = labels(rng, n, classes);
  }
  return t;
}

}  // namespace

GradCheckResult gradcheck_map_instance(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "gradcheck-map");
  const int d = 4 + static_cast<int>(rng.below(5));
  const int cd = 2 + static_cast<int>(rng.below(4));
  const int ci = 2 + static_cast<int>(rng.below(4));
  const int nd = 1 + static_cast<int>(rng.below(5));
  const int ni = static_cast<int>(rng.below(5));  // 0 exercises the empty world term
  const MatD fd = gaussian(rng, nd, d, 1.0);
  const MatD fw = gaussian(rng, ni, d, 1.0);
  const auto yd = labels(rng, nd, cd);
  const auto yw = labels(rng, ni, ci);
  VecD params(d * cd + d * ci);
  for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = 0.5 * rng.normal();

  const FlatLoss loss = [&](const VecD& p, VecD* grad) {
    const MatD wd = Eigen::Map<const MatD>(p.data(), d, cd);
    const MatD ww = Eigen::Map<const MatD>(p.data() + d * cd, d, ci);
    MatD gd, gw;
    const double value = map_objective<double>(wd, fd, yd, ww, fw, yw, grad ? &gd : nullptr, grad ? &gw : nullptr);
    if (grad) {
      grad->resize(p.size());
      std::copy(gd.data(), gd.data() + gd.size(), grad->data());
      std::copy(gw.data(), gw.data() + gw.size(), grad->data() + gd.size());
    }
    return value;
  };
  return fd_gradcheck_detailed(loss, params, kGradcheckEps);
}

GradCheckResult gradcheck_total_instance(std::uint64_t seed, bool soft_targets) {
  Rng rng = Rng::derive(seed, soft_targets ? "gradcheck-total-soft" : "gradcheck-total");
  const int d = 4 + static_cast<int>(rng.below(4));
  const int r = 1 + static_cast<int>(rng.below(3));
  const int cd = 2 + static_cast<int>(rng.below(4));
  const int ci = 2 + static_cast<int>(rng.below(4));
  constexpr int n = 3;

  Stage4Params<double> params;
  params.encoder.gamma = (VecD::Ones(d) + gaussian(rng, d, 1, 0.2)).eval();
  params.encoder.beta = gaussian(rng, d, 1, 0.2);
  params.encoder.a = gaussian(rng, r, d, 0.5);
  params.encoder.b = gaussian(rng, d, r, 0.5);
  params.down = normalize_rows(gaussian(rng, cd, d, 1.0));
  params.world = normalize_rows(gaussian(rng, ci, d, 1.0));

  Stage4Batch<double> batch;
  batch.down = gaussian(rng, n, d, 1.0);
  batch.aux = gaussian(rng, n, d, 1.0);
  batch.replay = gaussian(rng, n, d, 1.0);
  batch.dd = targets(rng, n, cd, soft_targets);
  batch.di = targets(rng, n, ci, soft_targets);
  batch.ii.hard = labels(rng, n, ci);
  batch.id = targets(rng, n, cd, soft_targets);
  batch.rp.hard = labels(rng, n, cd);

  const int shared_d = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cd)));
  const int shared_i = static_cast<int>(rng.below(static_cast<std::uint64_t>(ci + 1)));
  const MatD snap_down = params.down.topRows(shared_d) + gaussian(rng, shared_d, d, 0.3);
  const MatD snap_world = params.world.topRows(shared_i) + gaussian(rng, shared_i, d, 0.3);

  AlignWeights w;
  w.lambda1 = 2.0 * rng.uniform();
  w.lambda2 = 2.0 * rng.uniform();
  w.lambda3 = 2.0 * rng.uniform();
  w.lambda4 = 5.0 * rng.uniform();
  w.tau = 0.5 + 2.0 * rng.uniform();
  w.logit_scale = 2.0 + 8.0 * rng.uniform();

  Stage4Params<double> probe = params;
  const FlatLoss loss = [&](const VecD& p, VecD* grad) {
    probe.unpack(p);
    Stage4Grad<double> g;
    const LossTerms terms = stage4_objective(probe, batch, snap_down, snap_world, w, grad ? &g : nullptr);
    if (grad) *grad = g.pack();
    return terms.total;
  };
  return fd_gradcheck_detailed(loss, params.pack(), kGradcheckEps);
}

double GradcheckSummary::max() const { return std::max({max_map, max_total, max_total_soft}); }

GradcheckSummary run_gradcheck_suite(int instances, std::uint64_t base_seed) {
  GradcheckSummary s;
  s.instances = instances;
  double worst = -1;
  auto track = [&](double err, std::uint64_t seed, const char* name) {
    if (err > worst) {
      worst = err;
      s.worst_seed = seed;
      s.worst_objective = name;
    }
  };
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
    const double m = gradcheck_map_instance(seed).max_rel_error;
    const double t = gradcheck_total_instance(seed, false).max_rel_error;
    s.max_map = std::max(s.max_map, m);
    s.max_total = std::max(s.max_total, t);
    track(m, seed, "L_map");
    track(t, seed, "L_total");
    if (i % 10 == 0) {
      const double soft = gradcheck_total_instance(seed, true).max_rel_error;
      s.max_total_soft = std::max(s.max_total_soft, soft);
      track(soft, seed, "L_total (soft targets)");
    }
  }
  return s;
}

}  // namespace wkcl
