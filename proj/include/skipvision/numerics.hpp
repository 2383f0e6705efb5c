#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace skipvision {

// Row-major storage throughout: a token is a row.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;
using RowVectorF = RowVector<float>;
using RowVectorD = RowVector<double>;

inline constexpr double kRmsNormEps = 1e-5;

// ---------------------------------------------------------------------------
// MAC instrumentation
// ---------------------------------------------------------------------------

enum class MacScope : std::uint8_t {
  AttentionProj = 0,
  AttentionScore = 1,
  Ffn = 2,
  Head = 3,
};

inline constexpr std::size_t kMacScopeCount = 4;

std::string_view to_string(MacScope scope);

/// Cumulative multiply-accumulate counts per scope. Owned by a single run
/// context; counts only ever grow until reset() is called between runs.
class MacCounter {
 public:
  void add(MacScope scope, std::uint64_t macs) noexcept {
    macs_[static_cast<std::size_t>(scope)] += macs;
  }

  std::uint64_t operator[](MacScope scope) const noexcept {
    return macs_[static_cast<std::size_t>(scope)];
  }

  /// Attention projections + attention scores + FFN. Output head excluded.
  std::uint64_t formula_total() const noexcept {
    return (*this)[MacScope::AttentionProj] + (*this)[MacScope::AttentionScore] +
           (*this)[MacScope::Ffn];
  }

  std::uint64_t total() const noexcept { return formula_total() + (*this)[MacScope::Head]; }

  void reset() noexcept { macs_.fill(0); }

 private:
  std::array<std::uint64_t, kMacScopeCount> macs_{};
};

/// Raised when power iteration fails to settle; carries the last estimate.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_estimate)
      : std::runtime_error(what), last_estimate_(last_estimate) {}
  double last_estimate() const noexcept { return last_estimate_; }

 private:
  double last_estimate_;
};

template <typename Derived>
std::string shape_string(const Eigen::DenseBase<Derived>& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

template <typename Derived>
void ensure_finite(const Eigen::DenseBase<Derived>& m, std::string_view op) {
  if (!m.derived().allFinite()) {
    throw std::domain_error(std::string(op) + ": non-finite value in result");
  }
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: dimension mismatch " + shape_string(a) + " * " +
                                shape_string(b));
  }
  Matrix<typename DerivedA::Scalar> out = a * b;
  ensure_finite(out, "matmul");
  return out;
}

/// Product with MAC accounting: adds exactly rows(a) * cols(a) * cols(b).
template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b,
                                         MacCounter& counter, MacScope scope) {
  auto out = matmul(a, b);
  counter.add(scope, static_cast<std::uint64_t>(a.rows()) * static_cast<std::uint64_t>(a.cols()) *
                         static_cast<std::uint64_t>(b.cols()));
  return out;
}

template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b,
                                         MacCounter* counter, MacScope scope) {
  return counter ? matmul(a, b, *counter, scope) : matmul(a, b);
}

// ---------------------------------------------------------------------------
// Row-wise neural primitives
// ---------------------------------------------------------------------------

/// Numerically stable row softmax. A row with every entry at -inf has no
/// distribution and is rejected.
template <typename Derived>
Matrix<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Scalar peak = m.row(r).maxCoeff();
    if (peak == -std::numeric_limits<Scalar>::infinity()) {
      throw std::invalid_argument("softmax_rows: row " + std::to_string(r) + " is entirely -inf");
    }
    Scalar sum = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const Scalar e = std::exp(m(r, c) - peak);
      out(r, c) = e;
      sum += e;
    }
    out.row(r) /= sum;
  }
  ensure_finite(out, "softmax_rows");
  return out;
}

template <typename Derived>
Matrix<typename Derived::Scalar> rms_norm(const Eigen::MatrixBase<Derived>& x,
                                          const RowVector<typename Derived::Scalar>& gain) {
  using Scalar = typename Derived::Scalar;
  if (gain.size() != x.cols()) {
    throw std::invalid_argument("rms_norm: gain length " + std::to_string(gain.size()) +
                                " != width " + std::to_string(x.cols()));
  }
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean_sq = x.row(r).squaredNorm() / static_cast<Scalar>(x.cols());
    const Scalar inv = Scalar(1) / std::sqrt(mean_sq + static_cast<Scalar>(kRmsNormEps));
    out.row(r) = (x.row(r) * inv).cwiseProduct(gain);
  }
  ensure_finite(out, "rms_norm");
  return out;
}

template <typename Scalar>
Scalar silu(Scalar v) {
  return v / (Scalar(1) + std::exp(-v));
}

/// Each row scaled to unit l2 norm; zero rows are rejected since cosine
/// similarity is undefined for them.
template <typename Derived>
Matrix<typename Derived::Scalar> normalized_rows(const Eigen::MatrixBase<Derived>& m) {
  Matrix<typename Derived::Scalar> out = m;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const auto n = out.row(r).norm();
    if (!(n > 0)) {
      throw std::invalid_argument("zero-norm row " + std::to_string(r) +
                                  ": cosine similarity undefined");
    }
    out.row(r) /= n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral norm
// ---------------------------------------------------------------------------

struct SpectralNormOptions {
  double tol = 1e-8;
  int max_iter = 1000;
  std::uint64_t seed = 0;
};

/// Largest singular value via power iteration on W^T W, evaluated in double.
/// The estimate ||W v|| with unit v is non-decreasing and never exceeds the
/// true value.
template <typename Derived>
double spectral_norm(const Eigen::MatrixBase<Derived>& w, const SpectralNormOptions& opts = {}) {
  if (w.size() == 0) throw std::invalid_argument("spectral_norm: empty matrix");
  const MatrixD a = w.template cast<double>();
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(a.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
  v.normalize();

  double estimate = (a * v).norm();
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    Eigen::VectorXd next = a.transpose() * (a * v);
    const double n = next.norm();
    if (n == 0.0) return 0.0;
    v = next / n;
    const double updated = (a * v).norm();
    if (std::abs(updated - estimate) <= opts.tol) return updated;
    estimate = updated;
  }
  throw ConvergenceError("spectral_norm: no convergence after " + std::to_string(opts.max_iter) +
                             " iterations",
                         estimate);
}

// ---------------------------------------------------------------------------
// Seeded initialisation
// ---------------------------------------------------------------------------

/// splitmix64 finaliser; derives independent stream seeds from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

template <typename Scalar>
Matrix<Scalar> gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev,
                               std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(normal(rng));
  return m;
}

/// Semi-orthogonal rows x cols matrix from the QR factorisation of a Gaussian
/// draw: orthonormal columns when rows >= cols, orthonormal rows otherwise.
/// Spectral norm is 1 either way.
template <typename Scalar>
Matrix<Scalar> orthogonal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const bool tall = rows >= cols;
  const Eigen::Index big = tall ? rows : cols;
  const Eigen::Index small = tall ? cols : rows;
  const MatrixD g = gaussian_matrix<double>(big, small, 1.0, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(small, small);
  for (Eigen::Index j = 0; j < small; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  MatrixD out = tall ? MatrixD(q) : MatrixD(q.transpose());
  return out.cast<Scalar>();
}

}  // namespace skipvision
