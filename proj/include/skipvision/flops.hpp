#pragma once

#include "skipvision/model.hpp"

#include <cstdint>

namespace skipvision {

/// N tokens overall, N1 through attention, N2 through the FFN.
struct FlopsQuery {
  ModelConfig config;
  std::uint64_t n = 0;
  std::uint64_t n1 = 0;
  std::uint64_t n2 = 0;

  void validate() const;
};

struct ParamBreakdown {
  std::uint64_t ffn = 0;
  std::uint64_t attention = 0;
  std::uint64_t embedding = 0;
  std::uint64_t other = 0;  // norms and an untied output head
  std::uint64_t total() const { return ffn + attention + embedding + other; }

  double ffn_pct() const { return pct(ffn); }
  double attention_pct() const { return pct(attention); }
  double embedding_pct() const { return pct(embedding); }
  double other_pct() const { return pct(other); }

 private:
  double pct(std::uint64_t part) const {
    return total() == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(total());
  }
};

/// MAC counts (1 MAC = 1 FLOP unit). Output head and norms are out of scope.
struct FlopsReport {
  std::uint64_t attention_proj_per_layer = 0;   // (2 + 2/g) N1 C^2
  std::uint64_t attention_score_per_layer = 0;  // 2 N1^2 C
  std::uint64_t ffn_per_layer = 0;              // 3 N2 C M (2 N2 C M ungated)
  std::size_t layers = 0;

  std::uint64_t attention_per_layer() const { return attention_proj_per_layer + attention_score_per_layer; }
  std::uint64_t per_layer() const { return attention_per_layer() + ffn_per_layer; }
  std::uint64_t attention_total() const { return attention_per_layer() * layers; }
  std::uint64_t ffn_total() const { return ffn_per_layer * layers; }
  std::uint64_t total() const { return per_layer() * layers; }

  ParamBreakdown params;
};

/// 4NC^2 + 2N^2C + 3NCM per layer for vanilla attention; grouped-query
/// attention shrinks the K/V projections to (2 + 2/g) N C^2.
FlopsReport dense_flops(const ModelConfig& cfg, std::uint64_t n);

/// Attention over N1 tokens, FFN over N2 tokens.
FlopsReport skip_flops(const FlopsQuery& q);

/// FFN L*3CM, attention L*(2C^2 + 2*C*kv*d_k), embedding vocab*C; norms and an
/// untied output head go to `other`.
ParamBreakdown param_count(const ModelConfig& cfg);

/// Forward MACs x 3 (backward taken as twice the forward). A convention for
/// trade-off plots, not a measured quantity.
double training_flops_estimate(const FlopsQuery& q);
double training_flops_estimate(double forward_macs);

/// skip_flops(n1, n2) / dense_flops(baseline_n).
double flops_ratio(const ModelConfig& cfg, std::uint64_t baseline_n, std::uint64_t n1,
                   std::uint64_t n2);

}  // namespace skipvision
