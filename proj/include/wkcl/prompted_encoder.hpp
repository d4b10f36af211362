#pragma once

// Trainable wrapper around frozen vision-language image features:
//   z = normalize(gamma .* h + beta + B (A h))
// gamma/beta play the role of LayerNorm scale/bias, the rank-r residual the
// role of the prompt tokens.

#include "wkcl/numerics.hpp"
#include "wkcl/rng.hpp"

namespace wkcl {

template <typename Scalar>
struct PromptedEncoder {
  Vec<Scalar> gamma;  // [d]
  Vec<Scalar> beta;   // [d]
  Mat<Scalar> a;      // [r x d]
  Mat<Scalar> b;      // [d x r]

  PromptedEncoder() = default;

  /// gamma = 1, beta = 0, B = 0 and A ~ N(0, init_scale^2): the forward pass
  /// starts as plain normalization.
  static PromptedEncoder init(int dim, int rank, Rng& rng, double init_scale = 0.01) {
    PromptedEncoder p;
    p.gamma = Vec<Scalar>::Ones(dim);
    p.beta = Vec<Scalar>::Zero(dim);
    p.a.resize(rank, dim);
    for (Eigen::Index i = 0; i < p.a.size(); ++i) p.a.data()[i] = Scalar(init_scale * rng.normal());
    p.b = Mat<Scalar>::Zero(dim, rank);
    return p;
  }

  int dim() const { return static_cast<int>(gamma.size()); }
  int rank() const { return static_cast<int>(a.rows()); }
  Eigen::Index num_params() const { return gamma.size() + beta.size() + a.size() + b.size(); }

  template <typename OtherScalar>
  PromptedEncoder<OtherScalar> cast() const {
    PromptedEncoder<OtherScalar> out;
    out.gamma = gamma.template cast<OtherScalar>();
    out.beta = beta.template cast<OtherScalar>();
    out.a = a.template cast<OtherScalar>();
    out.b = b.template cast<OtherScalar>();
    return out;
  }

  /// Pre-normalization rows U for a batch H [n x d].
  Mat<Scalar> transform(const Mat<Scalar>& h) const {
    if (h.cols() != gamma.size()) raise(ErrorKind::ShapeMismatch, "prompted encoder input dim differs");
    Mat<Scalar> u = h * gamma.asDiagonal();
    u.rowwise() += beta.transpose();
    if (a.rows() > 0) u += (h * a.transpose()) * b.transpose();
    return u;
  }

  Mat<Scalar> forward(const Mat<Scalar>& h) const { return normalize_rows(transform(h)); }

  Vec<Scalar> forward(const Vec<Scalar>& h) const {
    const Mat<Scalar> row = h.transpose();
    return forward(row).row(0).transpose();
  }
};

/// Gradient buffers with the same layout as the encoder.
template <typename Scalar>
struct EncoderGrad {
  Vec<Scalar> gamma, beta;
  Mat<Scalar> a, b;

  void zero_like(const PromptedEncoder<Scalar>& p) {
    gamma.setZero(p.gamma.size());
    beta.setZero(p.beta.size());
    a.setZero(p.a.rows(), p.a.cols());
    b.setZero(p.b.rows(), p.b.cols());
  }
};

/// Accumulates into `grad` the encoder gradient for a batch whose normalized
/// outputs Z received upstream gradient dZ.
template <typename Scalar>
void encoder_backward(const PromptedEncoder<Scalar>& p, const Mat<Scalar>& h, const Mat<Scalar>& u,
                      const Mat<Scalar>& dz, EncoderGrad<Scalar>& grad) {
  if (h.rows() == 0) return;
  Mat<Scalar> du(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const Scalar norm = u.row(i).norm();
    const auto z = u.row(i) / norm;
    du.row(i) = (dz.row(i) - dz.row(i).dot(z) * z) / norm;
  }
  grad.gamma += (du.cwiseProduct(h)).colwise().sum().transpose();
  grad.beta += du.colwise().sum().transpose();
  if (p.a.rows() > 0) {
    const Mat<Scalar> proj = h * p.a.transpose();  // [n x r]
    grad.b += du.transpose() * proj;
    const Mat<Scalar> dproj = du * p.b;  // [n x r]
    grad.a += dproj.transpose() * h;
  }
}

}  // namespace wkcl
