#include "skipvision/summary_layer.hpp"

#include <stdexcept>

namespace skipvision {

template <typename Scalar>
SummaryParams<Scalar> SummaryParams<Scalar>::random(Eigen::Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return SummaryParams{gaussian_matrix<Scalar>(1, width, 0.02, rng)};
}

template <typename Scalar>
RowVector<Scalar> summary_weights(const Matrix<Scalar>& x, const SummaryParams<Scalar>& params) {
  if (x.rows() == 0) throw std::invalid_argument("summarize: empty token matrix");
  if (params.w.size() != x.cols()) {
    throw std::invalid_argument("summarize: weight width " + std::to_string(params.w.size()) +
                                " != token width " + std::to_string(x.cols()));
  }
  const Matrix<Scalar> scores = matmul(x, params.w.transpose());  // n x 1
  return softmax_rows(scores.transpose()).row(0);
}

template <typename Scalar>
RowVector<Scalar> summarize(const Matrix<Scalar>& x, const SummaryParams<Scalar>& params) {
  const RowVector<Scalar> a = summary_weights(x, params);
  RowVector<Scalar> out = a * x;
  ensure_finite(out, "summarize");
  return out;
}

// f = u . sum_i a_i x_i, a = softmax(s), s_i = x_i . w
// df/ds_i = a_i (g_i - sum_j a_j g_j), g_i = x_i . u
// df/dw = sum_i df/ds_i x_i
template <typename Scalar>
RowVector<Scalar> summarize_grad_w(const Matrix<Scalar>& x, const SummaryParams<Scalar>& params,
                                   const RowVector<Scalar>& upstream) {
  if (upstream.size() != x.cols()) {
    throw std::invalid_argument("summarize_grad_w: upstream width mismatch");
  }
  const RowVector<Scalar> a = summary_weights(x, params);
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g = x * upstream.transpose();
  const Scalar mean_g = a.dot(g.transpose());
  const RowVector<Scalar> ds = a.cwiseProduct(g.transpose().array().matrix() -
                                              RowVector<Scalar>::Constant(g.size(), mean_g));
  RowVector<Scalar> grad = ds * x;
  ensure_finite(grad, "summarize_grad_w");
  return grad;
}

#define SKIPVISION_INSTANTIATE(Scalar)                                                          \
  template struct SummaryParams<Scalar>;                                                        \
  template RowVector<Scalar> summary_weights<Scalar>(const Matrix<Scalar>&,                     \
                                                     const SummaryParams<Scalar>&);             \
  template RowVector<Scalar> summarize<Scalar>(const Matrix<Scalar>&,                           \
                                               const SummaryParams<Scalar>&);                   \
  template RowVector<Scalar> summarize_grad_w<Scalar>(                                          \
      const Matrix<Scalar>&, const SummaryParams<Scalar>&, const RowVector<Scalar>&);

SKIPVISION_INSTANTIATE(float)
SKIPVISION_INSTANTIATE(double)
#undef SKIPVISION_INSTANTIATE

}  // namespace skipvision
