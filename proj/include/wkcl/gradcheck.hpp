#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "wkcl/error.hpp"
#include "wkcl/types.hpp"

namespace wkcl {

/// Loss evaluated at a flat parameter vector. When `grad` is non-null the
/// callee writes the analytic gradient there.
using FlatLoss = std::function<double(const VecD& params, VecD* grad)>;

struct GradCheckResult {
  double max_rel_error = 0;
  Eigen::Index worst_coordinate = -1;
  double analytic = 0;
  double numeric = 0;
};

/// Central-difference check of every coordinate. The relative error per
/// coordinate is |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|).
inline GradCheckResult fd_gradcheck_detailed(const FlatLoss& loss, const VecD& params, double eps) {
  if (!(eps >= 1e-5 && eps <= 1e-2)) {
    raise(ErrorKind::ConfigError, "finite-difference step must lie in [1e-5, 1e-2]");
  }
  VecD analytic(params.size());
  const double f0 = loss(params, &analytic);
  if (!std::isfinite(f0) || !analytic.allFinite()) {
    raise(ErrorKind::NonFiniteLoss, "loss or gradient not finite at the base point");
  }
  GradCheckResult result;
  VecD probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = loss(probe, nullptr);
    probe[i] = saved - eps;
    const double down = loss(probe, nullptr);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      raise(ErrorKind::NonFiniteLoss, "loss not finite at coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * eps);
    const double rel = std::abs(analytic[i] - numeric) /
                       std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    if (rel > result.max_rel_error || result.worst_coordinate < 0) {
      result.max_rel_error = std::max(result.max_rel_error, rel);
      if (rel >= result.max_rel_error) {
        result.worst_coordinate = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  return result;
}

inline double fd_gradcheck(const FlatLoss& loss, const VecD& params, double eps) {
  return fd_gradcheck_detailed(loss, params, eps).max_rel_error;
}

}  // namespace wkcl
