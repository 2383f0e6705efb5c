#pragma once

#include "skipvision/numerics.hpp"

namespace skipvision {

/// Adaptive summary layer: a single 1 x C scoring row.
template <typename Scalar>
struct SummaryParams {
  RowVector<Scalar> w;

  /// Seeded Gaussian, std 0.02.
  static SummaryParams random(Eigen::Index width, std::uint64_t seed);
};

/// Softmax weights over the rows of X, scored by X * w^T.
template <typename Scalar>
RowVector<Scalar> summary_weights(const Matrix<Scalar>& x, const SummaryParams<Scalar>& params);

/// x_s = softmax(X w^T)^T X: a convex combination of the rows of X.
template <typename Scalar>
RowVector<Scalar> summarize(const Matrix<Scalar>& x, const SummaryParams<Scalar>& params);

/// Gradient of upstream . summarize(X, w) with respect to w.
template <typename Scalar>
RowVector<Scalar> summarize_grad_w(const Matrix<Scalar>& x, const SummaryParams<Scalar>& params,
                                   const RowVector<Scalar>& upstream);

}  // namespace skipvision
