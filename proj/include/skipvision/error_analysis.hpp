#pragma once

#include "skipvision/model.hpp"
#include "skipvision/token_stream.hpp"
#include "skipvision/transformer.hpp"

#include <span>
#include <string>
#include <vector>

namespace skipvision {

struct LayerLipschitz {
  double sigma_q = 0, sigma_k = 0, sigma_v = 0;
  double sigma_1 = 0;  // stacked [W_1 | W_gate] for the gated FFN
  double sigma_2 = 0;
  double attn = 0;     // sigma_q sigma_k sigma_v / sqrt(d_k)
  double ffn = 0;      // sigma_1 sigma_2
  double combined() const { return attn + ffn; }
};

struct LipschitzEstimate {
  std::vector<LayerLipschitz> layers;
  double gamma = 0;  // max over layers of attn + ffn
};

struct ErrorReport {
  std::vector<double> eps_layer;  // ||h_dense - h_skip||_F after each layer
  std::vector<double> eps_skip;   // injected error per layer (FFN delta on bypassed rows)
  double eps_total_measured = 0;  // l2 distance of final-position logits
  double eps_total_bound = 0;     // telescoped bound
  double eps_total_closed = 0;    // geometric closed form with eps = max eps_skip
  double gamma = 0;
  double kl_measured = 0;         // KL(p_skip || p_dense)
  double kl_bound13 = 0;
  double kl_bound14 = 0;
  double sigma2 = 0;              // variance of the dense logits
  double theta = 1;               // mean merge similarity
  double eps_sim = 0;
  std::vector<std::string> warnings;
};

/// ||FFN(h_attn)||_F over the rows the schedule bypasses at `layer`,
/// measured on the dense trajectory. Zero (with a warning) when nothing is
/// bypassed.
template <typename Scalar>
double per_layer_skip_error(const Model<Scalar>& model, const TokenSequence<Scalar>& seq,
                            const SkipSchedule& schedule, std::size_t layer,
                            std::vector<std::string>* warnings = nullptr);

template <typename Scalar>
LipschitzEstimate lipschitz_estimates(const Model<Scalar>& model,
                                      const SpectralNormOptions& opts = {});

/// sum_l eps_l * prod_{i=1}^{L-l} c_{i+1}, with c the 1-indexed per-layer
/// constants L_attn + L_ffn. The product index follows the printed formula
/// literally: term l uses layers 2 .. L-l+1.
double cumulative_bound(std::span<const double> eps_skip, std::span<const double> layer_constants);
double cumulative_bound(std::span<const double> eps_skip, const LipschitzEstimate& estimates);

/// eps * (gamma^L - 1) / (gamma - 1), and eps * L at gamma == 1.
double closed_form_bound(double eps, double gamma, std::size_t layers);

/// ||mu_p - mu_q||^2 / (2 sigma^2) for equal isotropic covariances.
double kl_gaussian(std::span<const double> mu_p, std::span<const double> mu_q, double sigma2);

struct KlBounds {
  double eq13 = 0;  // eps_total^2 / (2 sigma^2)
  double eq14 = 0;  // (eps_total + eps_sim)^2 / (2 sigma^2)
  double eps_sim = 0;
};

/// eps_sim = sqrt(1 - theta) * sim_scale. theta above 1 is clamped (warning).
KlBounds kl_bound(double eps_total, double sigma2, double theta, double sim_scale = 1.0,
                  std::vector<std::string>* warnings = nullptr);
KlBounds kl_bound(const ErrorReport& report, double sim_scale = 1.0);

struct DivergenceOptions {
  double theta = 1.0;
  double sim_scale = 1.0;
  SpectralNormOptions spectral;
};

/// Dense vs skip forward passes over the same sequence; fills every field.
template <typename Scalar>
ErrorReport measure_skip_divergence(const Model<Scalar>& model, const TokenSequence<Scalar>& seq,
                                    const SkipSchedule& schedule,
                                    const DivergenceOptions& opts = {});

struct FfnRatioCell {
  std::size_t layer = 0;
  std::size_t token = 0;
  std::size_t position = 0;
  TokenRole role = TokenRole::Text;
  double ratio = 0;
};

struct FfnUpdateRatios {
  std::vector<FfnRatioCell> cells;
  std::vector<std::pair<TokenRole, double>> role_means;

  /// layer,token,position,role,ratio
  std::string to_csv() const;
};

/// ||FFN(h_attn)|| / ||h_attn|| for every token and layer of a dense pass.
template <typename Scalar>
FfnUpdateRatios ffn_update_ratio(const Model<Scalar>& model, const TokenSequence<Scalar>& seq);

struct PairwiseCheck {
  std::size_t pairs = 0;
  std::size_t violations = 0;
  double max_ratio = 0;  // max ||f(x) - f(y)|| / ||x - y|| seen
  double bound = 0;
};

/// Samples pairs uniformly in the ball of `radius` and checks
/// ||ffn(x) - ffn(y)|| <= bound * ||x - y|| * (1 + 1e-4).
template <typename Scalar>
PairwiseCheck ffn_pairwise_lipschitz(const FfnParams<Scalar>& params, double bound,
                                     std::size_t pairs, double radius, std::uint64_t seed);

/// Largest ||Attn(X) - Attn(Y)||_F / ||X - Y||_F over sampled pairs of token
/// matrices with unit-norm rows; Attn is the raw multi-head causal attention
/// softmax(X W_Q (X W_K)^T / sqrt(d_k)) X W_V without norm, W_O or residual.
template <typename Scalar>
double attention_empirical_ratio(const AttentionParams<Scalar>& params, const ModelConfig& cfg,
                                 std::size_t tokens, std::size_t pairs, std::uint64_t seed);

}  // namespace skipvision
