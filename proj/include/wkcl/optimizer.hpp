#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "wkcl/error.hpp"
#include "wkcl/types.hpp"

namespace wkcl {

struct AdamWConfig {
  double lr = 0.004;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double eps = 1e-8;
  double decay_factor = 0.2;
  std::vector<int> decay_epochs;
};

/// Step-decay schedule: lr * decay_factor^(number of decay epochs <= epoch).
inline double step_decay_lr(int epoch, const AdamWConfig& config) {
  int applied = 0;
  for (int e : config.decay_epochs) {
    if (e <= epoch) ++applied;
  }
  return config.lr * std::pow(config.decay_factor, applied);
}

/// Decay epochs at fixed fractions of an epoch budget (default 60% and 85%).
inline std::vector<int> decay_epochs_for_budget(int epochs, const std::vector<double>& fractions = {0.6, 0.85}) {
  std::vector<int> out;
  out.reserve(fractions.size());
  for (double f : fractions) out.push_back(static_cast<int>(std::ceil(f * epochs - 1e-9)));
  return out;
}

/// AdamW state for one parameter block. Weight decay is decoupled: it is
/// applied to the parameters directly after the bias-corrected moment update.
template <typename Scalar>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const AdamWConfig& config, Eigen::Index size)
      : config_(config), m_(Vec<Scalar>::Zero(size)), v_(Vec<Scalar>::Zero(size)) {}

  template <typename DerivedP, typename DerivedG>
  void step(Eigen::MatrixBase<DerivedP>& params, const Eigen::MatrixBase<DerivedG>& grads, double lr) {
    if (params.size() != m_.size() || grads.size() != m_.size() || grads.rows() != params.rows()) {
      raise(ErrorKind::ShapeMismatch, "AdamW parameter/gradient shape differs from optimizer state");
    }
    if (!(lr > 0)) raise(ErrorKind::ConfigError, "AdamW learning rate must be positive");
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const Scalar b1 = Scalar(config_.beta1);
    const Scalar b2 = Scalar(config_.beta2);
    const Scalar decay = Scalar(1.0 - lr * config_.weight_decay);
    // Gradients are evaluated into the parameters' own layout so that both can
    // be walked coefficient-wise in storage order.
    const typename DerivedP::PlainObject grad_eval = grads;
    Scalar* p = params.derived().data();
    const Scalar* g = grad_eval.data();
    for (Eigen::Index i = 0; i < m_.size(); ++i) {
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g[i];
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g[i] * g[i];
      const Scalar m_hat = m_[i] / Scalar(bc1);
      const Scalar v_hat = v_[i] / Scalar(bc2);
      p[i] -= Scalar(lr) * m_hat / (std::sqrt(v_hat) + Scalar(config_.eps));
      p[i] *= decay;
    }
  }

  std::int64_t steps() const { return steps_; }
  const Vec<Scalar>& first_moment() const { return m_; }
  const Vec<Scalar>& second_moment() const { return v_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  Vec<Scalar> m_;
  Vec<Scalar> v_;
  std::int64_t steps_ = 0;
};

}  // namespace wkcl
