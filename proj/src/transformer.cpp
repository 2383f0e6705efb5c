#include "skipvision/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace skipvision {

void SkipSchedule::validate() const {
  if (skip_cache && !skip_ffn) throw std::invalid_argument("skip schedule: SK requires SF");
}

SkipSchedule SkipSchedule::all_on() {
  SkipSchedule s;
  s.skip_ffn = s.former_summary = s.latter_summary = s.merge = s.last_visual_ffn = s.skip_cache =
      true;
  return s;
}

std::vector<bool> ffn_routing(std::span<const TokenRole> roles, const SkipSchedule& schedule) {
  std::vector<bool> route(roles.size(), true);
  if (!schedule.skip_ffn) return route;
  std::ptrdiff_t last_skipped = -1;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == TokenRole::SkippedVisual) {
      route[i] = false;
      last_skipped = static_cast<std::ptrdiff_t>(i);
    }
  }
  if (schedule.last_visual_ffn && last_skipped >= 0) route[static_cast<std::size_t>(last_skipped)] = true;
  return route;
}

bool evictable(const CacheTag& tag, const SkipSchedule& schedule) {
  if (tag.role != TokenRole::SkippedVisual) return false;
  return std::any_of(schedule.prune_segments.begin(), schedule.prune_segments.end(),
                     [&](const std::string& sel) { return tag.provenance.matches(sel); });
}

namespace {

// Plain loops keep the summation order fixed no matter where a row lives in
// memory, so masking a cached row and physically evicting it give the same bits.
template <typename Scalar>
Scalar dot(const Scalar* a, const Scalar* b, std::size_t n) {
  Scalar acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> causal_attention(const Matrix<Scalar>& x, std::span<const CacheTag> tags,
                                const AttentionParams<Scalar>& params, const ModelConfig& cfg,
                                LayerCache<Scalar>& cache, const AttentionOptions& opts) {
  if (x.cols() != static_cast<Eigen::Index>(cfg.hidden)) {
    throw std::invalid_argument("causal_attention: input width " + std::to_string(x.cols()) +
                                " != hidden " + std::to_string(cfg.hidden));
  }
  if (static_cast<std::size_t>(x.rows()) != tags.size()) {
    throw std::invalid_argument("causal_attention: tags do not match input rows");
  }
  MacCounter* counter = opts.counter;
  const Matrix<Scalar> xn = rms_norm(x, params.norm);
  const Matrix<Scalar> q = matmul(xn, params.w_q, counter, MacScope::AttentionProj);
  const Matrix<Scalar> k = matmul(xn, params.w_k, counter, MacScope::AttentionProj);
  const Matrix<Scalar> v = matmul(xn, params.w_v, counter, MacScope::AttentionProj);
  cache.append(k, v, tags);

  const std::size_t n_q = tags.size();
  const std::size_t n_kv = cache.rows();
  const std::size_t heads = cfg.n_heads;
  const std::size_t dk = cfg.head_dim();
  const std::size_t group = cfg.group_size();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));
  const auto& kv_tags = cache.tags();

  std::vector<bool> masked(n_kv, false);
  for (std::size_t j = 0; j < n_kv; ++j) {
    masked[j] = std::binary_search(opts.masked_positions.begin(), opts.masked_positions.end(),
                                   kv_tags[j].position);
  }

  if (opts.capture) {
    opts.capture->heads = heads;
    opts.capture->queries = n_q;
    opts.capture->keys = n_kv;
    opts.capture->weights.assign(heads * n_q * n_kv, 0.0f);
    opts.capture->key_tags = kv_tags;
    opts.capture->query_positions.clear();
    for (const auto& t : tags) opts.capture->query_positions.push_back(t.position);
  }

  Matrix<Scalar> context = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(n_q), x.cols());
  std::vector<Scalar> score(n_kv);
  std::vector<bool> visible(n_kv);
  std::vector<Scalar> acc(dk);
  for (std::size_t i = 0; i < n_q; ++i) {
    const std::size_t pos = tags[i].position;
    bool any = false;
    for (std::size_t j = 0; j < n_kv; ++j) {
      visible[j] = kv_tags[j].position <= pos && !masked[j];
      any = any || visible[j];
    }
    if (!any) {
      throw std::invalid_argument("causal_attention: query at position " + std::to_string(pos) +
                                  " has no visible keys");
    }
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t kvh = h / group;
      const Scalar* qh = q.data() + i * cfg.hidden + h * dk;
      Scalar peak = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t j = 0; j < n_kv; ++j) {
        score[j] = dot(qh, cache.key_row(j) + kvh * dk, dk) * scale;
        if (visible[j]) peak = std::max(peak, score[j]);
      }
      Scalar sum = 0;
      for (std::size_t j = 0; j < n_kv; ++j) {
        score[j] = visible[j] ? std::exp(score[j] - peak) : Scalar(0);
        if (visible[j]) sum += score[j];
      }
      std::fill(acc.begin(), acc.end(), Scalar(0));
      for (std::size_t j = 0; j < n_kv; ++j) {
        const Scalar w = score[j] / sum;
        score[j] = w;
        const Scalar* vr = cache.value_row(j) + kvh * dk;
        for (std::size_t d = 0; d < dk; ++d) acc[d] += w * vr[d];
      }
      for (std::size_t d = 0; d < dk; ++d) {
        context(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(h * dk + d)) = acc[d];
      }
      if (opts.capture) {
        float* dst = opts.capture->weights.data() + (h * n_q + i) * n_kv;
        for (std::size_t j = 0; j < n_kv; ++j) dst[j] = static_cast<float>(score[j]);
      }
    }
  }
  // QK^T and AV over every cached row: n_q * n_kv * d_k per head, twice.
  if (counter) {
    counter->add(MacScope::AttentionScore,
                 2 * static_cast<std::uint64_t>(n_q) * n_kv * heads * dk);
  }

  Matrix<Scalar> out = x + matmul(context, params.w_o, counter, MacScope::AttentionProj);
  ensure_finite(out, "causal_attention");
  return out;
}

template <typename Scalar>
Matrix<Scalar> ffn(const Matrix<Scalar>& x, const FfnParams<Scalar>& params, MacCounter* counter) {
  Matrix<Scalar> up = matmul(x, params.w_1, counter, MacScope::Ffn);
  if (params.has_bias()) up.rowwise() += params.b_1;
  Matrix<Scalar> act = up.unaryExpr([](Scalar v) { return silu(v); });
  if (params.gated()) {
    act.array() *= matmul(x, params.w_gate, counter, MacScope::Ffn).array();
  }
  Matrix<Scalar> out = matmul(act, params.w_2, counter, MacScope::Ffn);
  if (params.has_bias()) out.rowwise() += params.b_2;
  ensure_finite(out, "ffn");
  return out;
}

template <typename Scalar>
Matrix<Scalar> ffn_sublayer(const Matrix<Scalar>& h, const FfnParams<Scalar>& params,
                            MacCounter* counter) {
  return ffn(rms_norm(h, params.norm), params, counter);
}

template <typename Scalar>
LayerOutput<Scalar> decoder_layer(const Matrix<Scalar>& x, std::span<const CacheTag> tags,
                                  const std::vector<bool>& route,
                                  const LayerWeights<Scalar>& weights, const ModelConfig& cfg,
                                  LayerCache<Scalar>& cache, const AttentionOptions& opts) {
  if (route.size() != static_cast<std::size_t>(x.rows())) {
    throw std::invalid_argument("decoder_layer: routing mask does not match rows");
  }
  LayerOutput<Scalar> out;
  out.h_attn = causal_attention(x, tags, weights.attention, cfg, cache, opts);
  out.h_out = out.h_attn;

  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < route.size(); ++i) {
    if (route[i]) rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (rows.empty()) return out;
  const Matrix<Scalar> routed = out.h_attn(rows, Eigen::placeholders::all);
  const Matrix<Scalar> delta = ffn_sublayer(routed, weights.ffn, opts.counter);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.h_out.row(rows[r]) += delta.row(static_cast<Eigen::Index>(r));
  }
  return out;
}

template <typename Scalar>
std::int64_t argmax_token(const RowVector<Scalar>& logits) {
  if (logits.size() == 0) throw std::invalid_argument("argmax_token: empty logits");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  return static_cast<std::int64_t>(best);
}

template <typename Scalar>
std::vector<std::size_t> evict_skipped(KVCache<Scalar>& cache, const SkipSchedule& schedule) {
  return cache.evict_if([&](const CacheTag& t) { return evictable(t, schedule); });
}

template <typename Scalar>
Session<Scalar>::Session(const Model<Scalar>& model, SkipSchedule schedule)
    : model_(&model),
      schedule_(std::move(schedule)),
      cache_(model.config.layers, static_cast<Eigen::Index>(model.config.kv_width())) {
  schedule_.validate();
}

template <typename Scalar>
RowVector<Scalar> Session<Scalar>::logits(const RowVector<Scalar>& hidden, MacCounter* counter) const {
  const Matrix<Scalar> normed = rms_norm(hidden, model_->final_norm);
  return matmul(normed, model_->head().transpose(), counter, MacScope::Head).row(0);
}

template <typename Scalar>
RowVector<Scalar> Session<Scalar>::prefill(const TokenSequence<Scalar>& seq,
                                           const PrefillOptions<Scalar>& opts) {
  seq.validate();
  if (seq.empty()) throw std::invalid_argument("prefill: empty sequence");
  const auto& cfg = model_->config;
  if (seq.width() != static_cast<Eigen::Index>(cfg.hidden)) {
    throw std::invalid_argument("prefill: sequence width " + std::to_string(seq.width()) +
                                " != hidden " + std::to_string(cfg.hidden));
  }
  if (!seq.positions.empty() && cache_.next_position > seq.positions.front()) {
    throw std::invalid_argument("prefill: positions overlap existing cache contents");
  }

  std::vector<CacheTag> tags(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    tags[i] = {seq.positions[i], seq.roles[i], seq.provenance[i]};
  }
  const auto route = ffn_routing(seq.roles, schedule_);

  if (opts.trace) {
    opts.trace->h_attn.clear();
    opts.trace->h_out.clear();
  }
  Matrix<Scalar> x = seq.embeddings;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    AttentionOptions att;
    att.counter = opts.counter;
    AttentionMap map;
    const bool capture =
        opts.attention_maps && std::find(opts.capture_layers.begin(), opts.capture_layers.end(), l) !=
                                   opts.capture_layers.end();
    if (capture) {
      map.layer = l;
      att.capture = &map;
    }
    auto out = decoder_layer(x, tags, route, model_->layers[l], cfg, cache_.layers[l], att);
    if (capture) opts.attention_maps->push_back(std::move(map));
    if (opts.trace) {
      opts.trace->h_attn.push_back(out.h_attn);
      opts.trace->h_out.push_back(out.h_out);
    }
    x = std::move(out.h_out);
  }
  cache_.next_position = seq.positions.back() + 1;
  last_logits_ = logits(x.row(x.rows() - 1), opts.counter);

  if (schedule_.skip_cache) {
    auto evicted = evict_skipped(cache_, schedule_);
    evicted_.insert(evicted_.end(), evicted.begin(), evicted.end());
  }
  return last_logits_;
}

template <typename Scalar>
RowVector<Scalar> Session<Scalar>::step(std::int64_t token_id, MacCounter* counter) {
  const auto& cfg = model_->config;
  if (token_id < 0 || static_cast<std::size_t>(token_id) >= cfg.vocab) {
    throw std::invalid_argument("step: token id " + std::to_string(token_id) + " outside vocab");
  }
  const CacheTag tag{cache_.next_position, TokenRole::Text, Provenance::text()};
  const std::vector<bool> route{true};
  Matrix<Scalar> x = model_->embedding.row(static_cast<Eigen::Index>(token_id));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    AttentionOptions att;
    att.counter = counter;
    att.masked_positions = decode_mask_;
    x = decoder_layer(x, std::span<const CacheTag>(&tag, 1), route, model_->layers[l], cfg,
                      cache_.layers[l], att)
            .h_out;
  }
  ++cache_.next_position;
  last_logits_ = logits(x.row(0), counter);
  return last_logits_;
}

template <typename Scalar>
std::vector<std::int64_t> Session<Scalar>::greedy_decode(std::size_t steps, MacCounter* counter) {
  std::vector<std::int64_t> ids;
  if (steps == 0) return ids;
  if (last_logits_.size() == 0) throw std::logic_error("greedy_decode: prefill first");
  ids.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto id = argmax_token(last_logits_);
    ids.push_back(id);
    step(id, counter);
  }
  return ids;
}

template <typename Scalar>
void Session<Scalar>::set_decode_mask(std::vector<std::size_t> positions) {
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  decode_mask_ = std::move(positions);
}

#define SKIPVISION_INSTANTIATE(Scalar)                                                           \
  template Matrix<Scalar> causal_attention<Scalar>(                                              \
      const Matrix<Scalar>&, std::span<const CacheTag>, const AttentionParams<Scalar>&,          \
      const ModelConfig&, LayerCache<Scalar>&, const AttentionOptions&);                         \
  template Matrix<Scalar> ffn<Scalar>(const Matrix<Scalar>&, const FfnParams<Scalar>&,           \
                                      MacCounter*);                                              \
  template Matrix<Scalar> ffn_sublayer<Scalar>(const Matrix<Scalar>&, const FfnParams<Scalar>&,  \
                                               MacCounter*);                                     \
  template LayerOutput<Scalar> decoder_layer<Scalar>(                                            \
      const Matrix<Scalar>&, std::span<const CacheTag>, const std::vector<bool>&,                \
      const LayerWeights<Scalar>&, const ModelConfig&, LayerCache<Scalar>&,                      \
      const AttentionOptions&);                                                                  \
  template std::int64_t argmax_token<Scalar>(const RowVector<Scalar>&);                          \
  template std::vector<std::size_t> evict_skipped<Scalar>(KVCache<Scalar>&, const SkipSchedule&); \
  template class Session<Scalar>;

SKIPVISION_INSTANTIATE(float)
SKIPVISION_INSTANTIATE(double)
#undef SKIPVISION_INSTANTIATE

}  // namespace skipvision
