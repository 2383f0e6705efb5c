// Independent reference implementations used only by the tests. None of
// these call into the library's numerics; they are deliberately written the
// slow, obvious way.
#pragma once

#include "skipvision/model.hpp"
#include "skipvision/token_stream.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <set>
#include <vector>

namespace oracle {

using skipvision::MatrixD;
using LongVec = std::vector<long double>;

inline MatrixD schoolbook_matmul(const MatrixD& a, const MatrixD& b) {
  MatrixD out(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      long double acc = 0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) acc += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(acc);
    }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
  long double peak = z.front();
  for (double v : z) peak = std::max<long double>(peak, v);
  long double sum = 0;
  LongVec e;
  for (double v : z) {
    e.push_back(std::exp(static_cast<long double>(v) - peak));
    sum += e.back();
  }
  std::vector<double> out;
  for (auto v : e) out.push_back(static_cast<double>(v / sum));
  return out;
}

inline double svd_spectral_norm(const MatrixD& w) {
  Eigen::JacobiSVD<MatrixD> svd(w);
  return svd.singularValues()(0);
}

inline long double cosine(const MatrixD& x, Eigen::Index i, Eigen::Index j) {
  long double dot = 0, ni = 0, nj = 0;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    dot += static_cast<long double>(x(i, c)) * x(j, c);
    ni += static_cast<long double>(x(i, c)) * x(i, c);
    nj += static_cast<long double>(x(j, c)) * x(j, c);
  }
  return dot / std::sqrt(ni * nj);
}

/// Indices ordered by (key ascending, index ascending), built by repeatedly
/// picking the minimum.
inline std::vector<std::size_t> selection_order(const std::vector<long double>& key) {
  std::vector<std::size_t> order;
  std::vector<bool> used(key.size(), false);
  for (std::size_t round = 0; round < key.size(); ++round) {
    std::size_t best = key.size();
    for (std::size_t i = 0; i < key.size(); ++i) {
      if (used[i]) continue;
      if (best == key.size() || key[i] < key[best]) best = i;
    }
    used[best] = true;
    order.push_back(best);
  }
  return order;
}

struct Merge {
  std::vector<std::size_t> kept;  // ascending
  MatrixD merged;                 // one row per kept token, same order
};

/// The three merge steps written out literally.
inline Merge brute_merge(const MatrixD& x, std::size_t k) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<long double> mean_sim(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (n == 1) break;
    long double s = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) s += cosine(x, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    mean_sim[i] = s / static_cast<long double>(n - 1);
  }
  auto order = selection_order(mean_sim);
  Merge m;
  m.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(m.kept.begin(), m.kept.end());

  std::vector<std::vector<std::size_t>> groups(k);
  for (std::size_t g = 0; g < k; ++g) groups[g].push_back(m.kept[g]);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::find(m.kept.begin(), m.kept.end(), i) != m.kept.end()) continue;
    std::size_t best = 0;
    long double best_sim = -2;
    for (std::size_t g = 0; g < k; ++g) {
      auto s = cosine(x, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m.kept[g]));
      if (s > best_sim) {
        best_sim = s;
        best = g;
      }
    }
    groups[best].push_back(i);
  }
  m.merged.resize(static_cast<Eigen::Index>(k), x.cols());
  for (std::size_t g = 0; g < k; ++g)
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      long double s = 0;
      for (auto i : groups[g]) s += x(static_cast<Eigen::Index>(i), c);
      m.merged(static_cast<Eigen::Index>(g), c) = static_cast<double>(s / groups[g].size());
    }
  return m;
}

inline MatrixD rms_norm(const MatrixD& x, const skipvision::RowVectorD& gain) {
  MatrixD out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    long double ss = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) ss += static_cast<long double>(x(r, c)) * x(r, c);
    const long double inv = 1.0L / std::sqrt(ss / x.cols() + 1e-5L);
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) = static_cast<double>(x(r, c) * inv * gain(c));
  }
  return out;
}

inline MatrixD ffn(const MatrixD& xn, const skipvision::FfnParams<double>& p) {
  MatrixD up = schoolbook_matmul(xn, p.w_1);
  if (p.has_bias()) up.rowwise() += p.b_1;
  MatrixD act = up.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
  if (p.gated()) act = act.cwiseProduct(schoolbook_matmul(xn, p.w_gate));
  MatrixD out = schoolbook_matmul(act, p.w_2);
  if (p.has_bias()) out.rowwise() += p.b_2;
  return out;
}

/// Full recomputation without any cache: every row attends to all earlier
/// rows except `masked` (which are hidden only from rows at index >=
/// `mask_from`). Rows with route[i] == false skip the FFN. Returns the
/// final-norm + head logits of every row.
inline MatrixD full_forward(const skipvision::Model<double>& model, const MatrixD& x0,
                            const std::vector<bool>& route, const std::set<std::size_t>& masked = {},
                            std::size_t mask_from = 0) {
  const auto& cfg = model.config;
  const auto n = static_cast<std::size_t>(x0.rows());
  const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
  const auto g = cfg.group_size();
  MatrixD x = x0;
  for (const auto& layer : model.layers) {
    const auto& a = layer.attention;
    MatrixD xn = rms_norm(x, a.norm);
    MatrixD q = schoolbook_matmul(xn, a.w_q), k = schoolbook_matmul(xn, a.w_k),
            v = schoolbook_matmul(xn, a.w_v);
    MatrixD ctx = MatrixD::Zero(x.rows(), x.cols());
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const auto qo = static_cast<Eigen::Index>(h) * dk;
      const auto ko = static_cast<Eigen::Index>(h / g) * dk;
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> scores;
        std::vector<std::size_t> cols;
        for (std::size_t j = 0; j <= i; ++j) {
          if (i >= mask_from && masked.count(j)) continue;
          long double s = 0;
          for (Eigen::Index d = 0; d < dk; ++d)
            s += static_cast<long double>(q(static_cast<Eigen::Index>(i), qo + d)) * k(static_cast<Eigen::Index>(j), ko + d);
          scores.push_back(static_cast<double>(s / std::sqrt(static_cast<long double>(dk))));
          cols.push_back(j);
        }
        auto p = softmax(scores);
        for (Eigen::Index d = 0; d < dk; ++d) {
          long double acc = 0;
          for (std::size_t t = 0; t < cols.size(); ++t) acc += p[t] * v(static_cast<Eigen::Index>(cols[t]), ko + d);
          ctx(static_cast<Eigen::Index>(i), qo + d) = static_cast<double>(acc);
        }
      }
    }
    MatrixD h_attn = x + schoolbook_matmul(ctx, a.w_o);
    MatrixD delta = ffn(rms_norm(h_attn, layer.ffn.norm), layer.ffn);
    x = h_attn;
    for (std::size_t i = 0; i < n; ++i)
      if (route[i]) x.row(static_cast<Eigen::Index>(i)) += delta.row(static_cast<Eigen::Index>(i));
  }
  return schoolbook_matmul(rms_norm(x, model.final_norm), model.head().transpose());
}

inline std::int64_t argmax(const Eigen::Ref<const skipvision::RowVectorD>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

}  // namespace oracle
