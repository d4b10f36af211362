#pragma once

// Vector math and loss primitives shared by every training stage. Everything
// here is templated on the scalar so the same code runs in float for training
// and in double for finite-difference checks.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "wkcl/error.hpp"
#include "wkcl/types.hpp"

namespace wkcl {

inline constexpr double kMinNorm = 1e-6;
inline constexpr double kProbFloor = 1e-12;

template <typename Derived>
Vec<typename Derived::Scalar> l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar norm = v.norm();
  if (!(norm >= Scalar(kMinNorm))) {
    raise(ErrorKind::NearZeroNorm, "vector norm " + std::to_string(double(norm)) + " below 1e-6");
  }
  return v / norm;
}

/// Normalizes every row; throws NearZeroNorm naming the offending row.
template <typename Derived>
Mat<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const Scalar norm = m.row(i).norm();
    if (!(norm >= Scalar(kMinNorm))) {
      raise(ErrorKind::NearZeroNorm, "row " + std::to_string(i) + " has norm below 1e-6");
    }
    out.row(i) = m.row(i) / norm;
  }
  return out;
}

template <typename DerivedU, typename DerivedV>
typename DerivedU::Scalar cosine_sim(const Eigen::MatrixBase<DerivedU>& u,
                                     const Eigen::MatrixBase<DerivedV>& v) {
  using Scalar = typename DerivedU::Scalar;
  if (u.size() != v.size()) raise(ErrorKind::ShapeMismatch, "cosine_sim operands differ in length");
  const Scalar nu = u.norm();
  const Scalar nv = v.norm();
  if (!(nu >= Scalar(kMinNorm)) || !(nv >= Scalar(kMinNorm))) {
    raise(ErrorKind::NearZeroNorm, "cosine_sim operand norm below 1e-6");
  }
  const Scalar c = u.dot(v) / (nu * nv);
  return std::clamp(c, Scalar(-1), Scalar(1));
}

/// softmax(z / temperature) with max subtraction.
template <typename Derived>
Vec<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& z,
                                      typename Derived::Scalar temperature = 1) {
  using Scalar = typename Derived::Scalar;
  Vec<Scalar> scaled = z / temperature;
  const Scalar m = scaled.maxCoeff();
  Vec<Scalar> e = (scaled.array() - m).exp().matrix();
  Scalar sum = 0;
  for (Eigen::Index i = 0; i < e.size(); ++i) sum += e[i];
  return e / sum;
}

template <typename Derived>
Vec<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& z,
                                          typename Derived::Scalar temperature = 1) {
  using Scalar = typename Derived::Scalar;
  Vec<Scalar> scaled = z / temperature;
  Eigen::Index arg = 0;
  const Scalar m = scaled.maxCoeff(&arg);
  // log-sum-exp split as log1p(sum of the non-max terms) keeps precision when
  // one logit dominates.
  Scalar others = 0;
  for (Eigen::Index i = 0; i < scaled.size(); ++i) {
    if (i != arg) others += std::exp(scaled[i] - m);
  }
  const Scalar lse = m + std::log1p(others);
  return (scaled.array() - lse).matrix();
}

template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& logits, ClassId target) {
  if (target < 0 || target >= logits.size()) {
    raise(ErrorKind::IndexOutOfRange,
          "target " + std::to_string(target) + " outside [0, " + std::to_string(logits.size()) + ")");
  }
  using Scalar = typename Derived::Scalar;
  Eigen::Index arg = 0;
  const Scalar m = logits.maxCoeff(&arg);
  Scalar others = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (i != arg) others += std::exp(logits[i] - m);
  }
  return std::log1p(others) + (m - logits[target]);
}

template <typename DerivedL, typename DerivedP>
typename DerivedL::Scalar cross_entropy(const Eigen::MatrixBase<DerivedL>& logits,
                                        const Eigen::MatrixBase<DerivedP>& target_probs) {
  using Scalar = typename DerivedL::Scalar;
  if (logits.size() != target_probs.size()) {
    raise(ErrorKind::ShapeMismatch, "soft target length differs from logits");
  }
  const Vec<Scalar> logp = log_softmax(logits);
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < logp.size(); ++i) loss -= target_probs[i] * logp[i];
  return loss;
}

/// KL(p || q); q is clamped below at 1e-12.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_div(const Eigen::MatrixBase<DerivedP>& p,
                                 const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  if (p.size() != q.size()) raise(ErrorKind::ShapeMismatch, "kl_div operands differ in length");
  Scalar total = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= Scalar(0)) continue;
    const Scalar qi = std::max(Scalar(q[i]), Scalar(kProbFloor));
    total += p[i] * (std::log(p[i]) - std::log(qi));
  }
  return std::max(total, Scalar(0));
}

/// KL(softmax(old/tau) || softmax(current/tau)) and its gradient with respect
/// to `current`, which is (q - p) / tau.
template <typename Scalar>
Scalar softened_kl(const Eigen::Ref<const Vec<Scalar>>& old_logits,
                   const Eigen::Ref<const Vec<Scalar>>& current_logits, Scalar tau,
                   Vec<Scalar>* grad_current) {
  const Vec<Scalar> logp = log_softmax(old_logits, tau);
  const Vec<Scalar> logq = log_softmax(current_logits, tau);
  const Scalar log_floor = std::log(Scalar(kProbFloor));
  Scalar total = 0;
  for (Eigen::Index i = 0; i < logp.size(); ++i) {
    const Scalar pi = std::exp(logp[i]);
    total += pi * (logp[i] - std::max(logq[i], log_floor));
  }
  if (grad_current) {
    *grad_current = (logq.array().exp() - logp.array().exp()).matrix() / tau;
  }
  return std::max(total, Scalar(0));
}

/// Mean softmax cross-entropy over the rows of `logits` against hard targets.
/// When `dlogits` is given it receives d(mean loss)/d(logits).
template <typename Scalar>
Scalar mean_cross_entropy(const Mat<Scalar>& logits, std::span<const ClassId> targets,
                          Mat<Scalar>* dlogits) {
  const Eigen::Index n = logits.rows();
  if (static_cast<std::size_t>(n) != targets.size()) {
    raise(ErrorKind::ShapeMismatch, "target count differs from logit rows");
  }
  if (dlogits) dlogits->setZero(n, logits.cols());
  if (n == 0) return Scalar(0);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = logits.row(i).transpose();
    total += cross_entropy(row, targets[i]);
    if (dlogits) {
      Vec<Scalar> p = softmax(row);
      p[targets[i]] -= Scalar(1);
      dlogits->row(i) = p.transpose() / Scalar(n);
    }
  }
  return total / Scalar(n);
}

/// Soft-target variant: row i of `targets` is a probability vector.
template <typename Scalar>
Scalar mean_cross_entropy(const Mat<Scalar>& logits, const Mat<Scalar>& targets,
                          Mat<Scalar>* dlogits) {
  const Eigen::Index n = logits.rows();
  if (targets.rows() != n || targets.cols() != logits.cols()) {
    raise(ErrorKind::ShapeMismatch, "soft target matrix shape differs from logits");
  }
  if (dlogits) dlogits->setZero(n, logits.cols());
  if (n == 0) return Scalar(0);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = logits.row(i).transpose();
    const auto target = targets.row(i).transpose();
    total += cross_entropy(row, target);
    if (dlogits) {
      const Scalar mass = target.sum();
      dlogits->row(i) = (mass * softmax(row) - target).transpose() / Scalar(n);
    }
  }
  return total / Scalar(n);
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace wkcl
