#include "skipvision/flops.hpp"

#include <algorithm>
#include <stdexcept>

namespace skipvision {

void FlopsQuery::validate() const {
  if (n1 > n) throw std::invalid_argument("flops query: N1 > N");
  if (n2 > n1) throw std::invalid_argument("flops query: N2 > N1");
}

FlopsReport dense_flops(const ModelConfig& cfg, std::uint64_t n) {
  return skip_flops(FlopsQuery{cfg, n, n, n});
}

FlopsReport skip_flops(const FlopsQuery& q) {
  if (q.n2 > q.n1) throw std::invalid_argument("skip_flops: N2 > N1");
  q.validate();
  q.config.validate();
  const std::uint64_t c = q.config.hidden;
  const std::uint64_t m = q.config.ffn_inner;
  const std::uint64_t kv = q.config.kv_width();
  FlopsReport r;
  r.layers = q.config.layers;
  r.attention_proj_per_layer = q.n1 * (2 * c * c + 2 * c * kv);
  r.attention_score_per_layer = 2 * q.n1 * q.n1 * c;
  r.ffn_per_layer = (q.config.gated_ffn ? 3 : 2) * q.n2 * c * m;
  r.params = param_count(q.config);
  return r;
}

ParamBreakdown param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t l = cfg.layers;
  const std::uint64_t c = cfg.hidden;
  const std::uint64_t m = cfg.ffn_inner;
  const std::uint64_t kv = cfg.kv_width();
  ParamBreakdown p;
  p.ffn = l * ((cfg.gated_ffn ? 3 : 2) * c * m + (cfg.use_bias ? m + c : 0));
  p.attention = l * (2 * c * c + 2 * c * kv);
  p.embedding = cfg.vocab * c;
  p.other = l * 2 * c + c + (cfg.tie_embeddings ? 0 : cfg.vocab * c);
  return p;
}

double training_flops_estimate(const FlopsQuery& q) {
  return training_flops_estimate(static_cast<double>(skip_flops(q).total()));
}

double training_flops_estimate(double forward_macs) {
  if (forward_macs < 0) throw std::invalid_argument("training_flops_estimate: negative forward cost");
  return 3.0 * forward_macs;
}

double flops_ratio(const ModelConfig& cfg, std::uint64_t baseline_n, std::uint64_t n1,
                   std::uint64_t n2) {
  const auto dense = dense_flops(cfg, baseline_n).total();
  if (dense == 0) throw std::invalid_argument("flops_ratio: baseline has zero cost");
  const auto skip = skip_flops(FlopsQuery{cfg, std::max(baseline_n, n1), n1, n2}).total();
  return static_cast<double>(skip) / static_cast<double>(dense);
}

}  // namespace skipvision
