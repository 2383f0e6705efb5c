#include "skipvision/error_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace skipvision {

namespace {

template <typename Scalar>
struct TracedPass {
  ForwardTrace<Scalar> trace;
  RowVector<Scalar> logits;
};

template <typename Scalar>
TracedPass<Scalar> traced_prefill(const Model<Scalar>& model, const TokenSequence<Scalar>& seq,
                                  SkipSchedule schedule) {
  schedule.skip_cache = false;
  Session<Scalar> session(model, schedule);
  TracedPass<Scalar> out;
  PrefillOptions<Scalar> opts;
  opts.trace = &out.trace;
  out.logits = session.prefill(seq, opts);
  return out;
}

std::vector<Eigen::Index> bypassed_rows(const std::vector<bool>& route) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < route.size(); ++i) {
    if (!route[i]) rows.push_back(static_cast<Eigen::Index>(i));
  }
  return rows;
}

template <typename Scalar>
double injected_error(const Matrix<Scalar>& h_attn, const std::vector<Eigen::Index>& rows,
                      const FfnParams<Scalar>& params) {
  if (rows.empty()) return 0.0;
  const Matrix<Scalar> sub = h_attn(rows, Eigen::all);
  return static_cast<double>(ffn_sublayer(sub, params).norm());
}

// log-softmax in double
Eigen::VectorXd log_softmax(const Eigen::VectorXd& z) {
  const double peak = z.maxCoeff();
  const double lse = peak + std::log((z.array() - peak).exp().sum());
  return z.array() - lse;
}

}  // namespace

template <typename Scalar>
double per_layer_skip_error(const Model<Scalar>& model, const TokenSequence<Scalar>& seq,
                            const SkipSchedule& schedule, std::size_t layer,
                            std::vector<std::string>* warnings) {
  if (layer >= model.config.layers) {
    throw std::invalid_argument("per_layer_skip_error: layer " + std::to_string(layer) +
                                " out of range");
  }
  const auto rows = bypassed_rows(ffn_routing(seq.roles, schedule));
  if (rows.empty()) {
    if (warnings) warnings->push_back("per_layer_skip_error: no bypassed tokens; error is 0");
    return 0.0;
  }
  const auto dense = traced_prefill(model, seq, SkipSchedule::dense());
  return injected_error(dense.trace.h_attn[layer], rows, model.layers[layer].ffn);
}

template <typename Scalar>
LipschitzEstimate lipschitz_estimates(const Model<Scalar>& model, const SpectralNormOptions& opts) {
  LipschitzEstimate est;
  const double sqrt_dk = std::sqrt(static_cast<double>(model.config.head_dim()));
  std::uint64_t stream = 0;
  auto sigma = [&](const Matrix<Scalar>& w) {
    SpectralNormOptions o = opts;
    o.seed = derive_seed(opts.seed ^ model.config.seed, stream++);
    return spectral_norm(w, o);
  };
  for (const auto& l : model.layers) {
    LayerLipschitz ll;
    ll.sigma_q = sigma(l.attention.w_q);
    ll.sigma_k = sigma(l.attention.w_k);
    ll.sigma_v = sigma(l.attention.w_v);
    if (l.ffn.gated()) {
      Matrix<Scalar> stacked(l.ffn.w_1.rows(), l.ffn.w_1.cols() + l.ffn.w_gate.cols());
      stacked << l.ffn.w_1, l.ffn.w_gate;
      ll.sigma_1 = sigma(stacked);
    } else {
      ll.sigma_1 = sigma(l.ffn.w_1);
    }
    ll.sigma_2 = sigma(l.ffn.w_2);
    ll.attn = ll.sigma_q * ll.sigma_k * ll.sigma_v / sqrt_dk;
    ll.ffn = ll.sigma_1 * ll.sigma_2;
    est.gamma = std::max(est.gamma, ll.combined());
    est.layers.push_back(ll);
  }
  return est;
}

double cumulative_bound(std::span<const double> eps_skip, std::span<const double> layer_constants) {
  if (eps_skip.size() != layer_constants.size()) {
    throw std::invalid_argument("cumulative_bound: " + std::to_string(eps_skip.size()) +
                                " errors for " + std::to_string(layer_constants.size()) + " layers");
  }
  const std::size_t L = eps_skip.size();
  double total = 0.0;
  for (std::size_t l = 1; l <= L; ++l) {
    double amplification = 1.0;
    for (std::size_t i = 1; i <= L - l; ++i) amplification *= layer_constants[i];  // c_{i+1}
    total += eps_skip[l - 1] * amplification;
  }
  return total;
}

double cumulative_bound(std::span<const double> eps_skip, const LipschitzEstimate& estimates) {
  std::vector<double> constants;
  for (const auto& l : estimates.layers) constants.push_back(l.combined());
  return cumulative_bound(eps_skip, constants);
}

double closed_form_bound(double eps, double gamma, std::size_t layers) {
  if (eps < 0 || gamma < 0) throw std::invalid_argument("closed_form_bound: negative input");
  if (gamma == 1.0) return eps * static_cast<double>(layers);
  return eps * (std::pow(gamma, static_cast<double>(layers)) - 1.0) / (gamma - 1.0);
}

double kl_gaussian(std::span<const double> mu_p, std::span<const double> mu_q, double sigma2) {
  if (!(sigma2 > 0)) throw std::invalid_argument("kl_gaussian: sigma2 must be > 0");
  if (mu_p.size() != mu_q.size()) throw std::invalid_argument("kl_gaussian: length mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < mu_p.size(); ++i) {
    const double d = mu_p[i] - mu_q[i];
    sq += d * d;
  }
  return sq / (2.0 * sigma2);
}

KlBounds kl_bound(double eps_total, double sigma2, double theta, double sim_scale,
                  std::vector<std::string>* warnings) {
  if (!(sigma2 > 0)) throw std::invalid_argument("kl_bound: sigma2 must be > 0");
  if (theta > 1.0) {
    if (warnings) warnings->push_back("kl_bound: theta " + std::to_string(theta) + " clamped to 1");
    theta = 1.0;
  }
  KlBounds b;
  b.eps_sim = std::sqrt(1.0 - theta) * sim_scale;
  b.eq13 = eps_total * eps_total / (2.0 * sigma2);
  b.eq14 = (eps_total + b.eps_sim) * (eps_total + b.eps_sim) / (2.0 * sigma2);
  return b;
}

KlBounds kl_bound(const ErrorReport& report, double sim_scale) {
  return kl_bound(report.eps_total_measured, report.sigma2, report.theta, sim_scale);
}

template <typename Scalar>
ErrorReport measure_skip_divergence(const Model<Scalar>& model, const TokenSequence<Scalar>& seq,
                                    const SkipSchedule& schedule, const DivergenceOptions& opts) {
  ErrorReport r;
  const auto dense = traced_prefill(model, seq, SkipSchedule::dense());
  const auto skip = traced_prefill(model, seq, schedule);
  const auto rows = bypassed_rows(ffn_routing(seq.roles, schedule));
  if (rows.empty()) r.warnings.push_back("no bypassed tokens; skip errors are 0");

  const std::size_t L = model.config.layers;
  for (std::size_t l = 0; l < L; ++l) {
    r.eps_skip.push_back(injected_error(dense.trace.h_attn[l], rows, model.layers[l].ffn));
    r.eps_layer.push_back(
        static_cast<double>((dense.trace.h_out[l] - skip.trace.h_out[l]).norm()));
  }

  const Eigen::VectorXd z_dense = dense.logits.transpose().template cast<double>();
  const Eigen::VectorXd z_skip = skip.logits.transpose().template cast<double>();
  r.eps_total_measured = (z_dense - z_skip).norm();

  const auto lip = lipschitz_estimates(model, opts.spectral);
  r.gamma = lip.gamma;
  r.eps_total_bound = cumulative_bound(r.eps_skip, lip);
  const double eps_max = r.eps_skip.empty() ? 0.0 : *std::max_element(r.eps_skip.begin(), r.eps_skip.end());
  r.eps_total_closed = closed_form_bound(eps_max, r.gamma, L);

  const Eigen::VectorXd log_p_skip = log_softmax(z_skip);
  const Eigen::VectorXd log_p_dense = log_softmax(z_dense);
  r.kl_measured = (log_p_skip.array().exp() * (log_p_skip - log_p_dense).array()).sum();

  const double mean = z_dense.mean();
  r.sigma2 = (z_dense.array() - mean).square().mean();
  r.theta = opts.theta;
  if (r.sigma2 > 0) {
    const auto kb = kl_bound(r.eps_total_measured, r.sigma2, r.theta, opts.sim_scale, &r.warnings);
    r.kl_bound13 = kb.eq13;
    r.kl_bound14 = kb.eq14;
    r.eps_sim = kb.eps_sim;
    r.theta = std::min(r.theta, 1.0);
  } else {
    r.warnings.push_back("dense logits have zero variance; KL bounds not defined");
  }
  return r;
}

std::string FfnUpdateRatios::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "layer,token,position,role,ratio\n";
  for (const auto& c : cells) {
    os << c.layer << ',' << c.token << ',' << c.position << ',' << to_string(c.role) << ','
       << c.ratio << '\n';
  }
  return os.str();
}

template <typename Scalar>
FfnUpdateRatios ffn_update_ratio(const Model<Scalar>& model, const TokenSequence<Scalar>& seq) {
  const auto dense = traced_prefill(model, seq, SkipSchedule::dense());
  FfnUpdateRatios out;
  std::map<TokenRole, std::pair<double, std::size_t>> sums;
  for (std::size_t l = 0; l < model.config.layers; ++l) {
    const auto& h = dense.trace.h_attn[l];
    const Matrix<Scalar> delta = ffn_sublayer(h, model.layers[l].ffn);
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      const double hn = static_cast<double>(h.row(i).norm());
      const double dn = static_cast<double>(delta.row(i).norm());
      const double ratio = hn > 0 ? dn / hn : 0.0;
      const auto t = static_cast<std::size_t>(i);
      out.cells.push_back({l, t, seq.positions[t], seq.roles[t], ratio});
      auto& s = sums[seq.roles[t]];
      s.first += ratio;
      ++s.second;
    }
  }
  for (const auto& [role, s] : sums) {
    out.role_means.emplace_back(role, s.first / static_cast<double>(s.second));
  }
  return out;
}

template <typename Scalar>
PairwiseCheck ffn_pairwise_lipschitz(const FfnParams<Scalar>& params, double bound,
                                     std::size_t pairs, double radius, std::uint64_t seed) {
  const Eigen::Index c = params.w_1.rows();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto sample = [&] {
    Matrix<Scalar> x(1, c);
    for (Eigen::Index i = 0; i < c; ++i) x(0, i) = static_cast<Scalar>(normal(rng));
    const double r = radius * std::pow(uniform(rng), 1.0 / static_cast<double>(c));
    x *= static_cast<Scalar>(r / static_cast<double>(x.norm()));
    return x;
  };
  PairwiseCheck check;
  check.bound = bound;
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto x = sample();
    const auto y = sample();
    const double din = static_cast<double>((x - y).norm());
    if (din == 0) continue;
    const double dout = static_cast<double>((ffn(x, params) - ffn(y, params)).norm());
    const double ratio = dout / din;
    check.max_ratio = std::max(check.max_ratio, ratio);
    if (dout > bound * din * (1.0 + 1e-4)) ++check.violations;
    ++check.pairs;
  }
  return check;
}

namespace {

template <typename Scalar>
MatrixD raw_causal_attention(const MatrixD& z, const AttentionParams<Scalar>& params,
                             const ModelConfig& cfg) {
  const MatrixD q = z * params.w_q.template cast<double>();
  const MatrixD k = z * params.w_k.template cast<double>();
  const MatrixD v = z * params.w_v.template cast<double>();
  const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
  const auto group = static_cast<Eigen::Index>(cfg.group_size());
  const Eigen::Index n = z.rows();
  MatrixD out = MatrixD::Zero(n, q.cols());
  for (Eigen::Index h = 0; h < static_cast<Eigen::Index>(cfg.n_heads); ++h) {
    const Eigen::Index kvh = h / group;
    MatrixD s = q.middleCols(h * dk, dk) * k.middleCols(kvh * dk, dk).transpose() /
                std::sqrt(static_cast<double>(dk));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = -std::numeric_limits<double>::infinity();
    }
    out.middleCols(h * dk, dk) = softmax_rows(s) * v.middleCols(kvh * dk, dk);
  }
  return out;
}

}  // namespace

template <typename Scalar>
double attention_empirical_ratio(const AttentionParams<Scalar>& params, const ModelConfig& cfg,
                                 std::size_t tokens, std::size_t pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto c = static_cast<Eigen::Index>(cfg.hidden);
  const auto n = static_cast<Eigen::Index>(tokens);
  double worst = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const MatrixD x = normalized_rows(gaussian_matrix<double>(n, c, 1.0, rng));
    const MatrixD y = normalized_rows(gaussian_matrix<double>(n, c, 1.0, rng));
    const double din = (x - y).norm();
    const double dout = (raw_causal_attention(x, params, cfg) - raw_causal_attention(y, params, cfg)).norm();
    worst = std::max(worst, dout / din);
  }
  return worst;
}

#define SKIPVISION_INSTANTIATE(Scalar)                                                           \
  template double per_layer_skip_error<Scalar>(const Model<Scalar>&, const TokenSequence<Scalar>&, \
                                               const SkipSchedule&, std::size_t,                 \
                                               std::vector<std::string>*);                       \
  template LipschitzEstimate lipschitz_estimates<Scalar>(const Model<Scalar>&,                   \
                                                         const SpectralNormOptions&);            \
  template ErrorReport measure_skip_divergence<Scalar>(                                          \
      const Model<Scalar>&, const TokenSequence<Scalar>&, const SkipSchedule&,                   \
      const DivergenceOptions&);                                                                 \
  template FfnUpdateRatios ffn_update_ratio<Scalar>(const Model<Scalar>&,                        \
                                                    const TokenSequence<Scalar>&);               \
  template PairwiseCheck ffn_pairwise_lipschitz<Scalar>(const FfnParams<Scalar>&, double,        \
                                                        std::size_t, double, std::uint64_t);     \
  template double attention_empirical_ratio<Scalar>(const AttentionParams<Scalar>&,              \
                                                    const ModelConfig&, std::size_t,             \
                                                    std::size_t, std::uint64_t);

SKIPVISION_INSTANTIATE(float)
SKIPVISION_INSTANTIATE(double)
#undef SKIPVISION_INSTANTIATE

}  // namespace skipvision
