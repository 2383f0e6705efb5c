#pragma once

#include "skipvision/kv_cache.hpp"
#include "skipvision/model.hpp"
#include "skipvision/token_stream.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace skipvision {

/// Ablation switches for the skip mechanisms.
struct SkipSchedule {
  bool skip_ffn = false;         // SF: skipped visual tokens bypass the FFN
  bool former_summary = false;   // FS
  bool latter_summary = false;   // LS
  bool merge = false;            // Merge skipped tokens before assembly
  bool last_visual_ffn = false;  // LV: last skipped token still goes through the FFN
  bool skip_cache = false;       // SK: evict skipped rows from the cache after prefill
  std::vector<std::string> prune_segments{"local"};  // provenance selectors evicted under SK

  /// SK requires SF.
  void validate() const;

  static SkipSchedule dense() { return {}; }
  static SkipSchedule all_on();
};

/// True where the token is routed through the FFN sub-block.
std::vector<bool> ffn_routing(std::span<const TokenRole> roles, const SkipSchedule& schedule);

/// Eviction rule applied after prefill when SK is on.
bool evictable(const CacheTag& tag, const SkipSchedule& schedule);

/// Attention weights captured for one layer, laid out [head][query][key].
struct AttentionMap {
  std::size_t layer = 0;
  std::size_t heads = 0;
  std::size_t queries = 0;
  std::size_t keys = 0;
  std::vector<float> weights;
  std::vector<CacheTag> key_tags;
  std::vector<std::size_t> query_positions;
};

struct AttentionOptions {
  std::span<const std::size_t> masked_positions;  // sorted; these cached positions get -inf logits
  AttentionMap* capture = nullptr;
  MacCounter* counter = nullptr;
};

/// Pre-norm causal attention sub-block. Appends the new K/V rows to `cache`,
/// then each query attends to cached rows at positions <= its own (minus the
/// masked ones). Returns x + W_O * attention(rms_norm(x)).
template <typename Scalar>
Matrix<Scalar> causal_attention(const Matrix<Scalar>& x, std::span<const CacheTag> tags,
                                const AttentionParams<Scalar>& params, const ModelConfig& cfg,
                                LayerCache<Scalar>& cache, const AttentionOptions& opts = {});

/// FFN delta (no residual, no norm). Gated: (silu(x W1 + b1) * x Wg) W2 + b2.
template <typename Scalar>
Matrix<Scalar> ffn(const Matrix<Scalar>& x, const FfnParams<Scalar>& params,
                   MacCounter* counter = nullptr);

/// FFN sub-block on the residual stream: ffn(rms_norm(h)).
template <typename Scalar>
Matrix<Scalar> ffn_sublayer(const Matrix<Scalar>& h, const FfnParams<Scalar>& params,
                            MacCounter* counter = nullptr);

template <typename Scalar>
struct LayerOutput {
  Matrix<Scalar> h_attn;
  Matrix<Scalar> h_out;
};

/// One decoder block. Routed rows get h_attn + FFN(h_attn); the others keep
/// h_attn unchanged.
template <typename Scalar>
LayerOutput<Scalar> decoder_layer(const Matrix<Scalar>& x, std::span<const CacheTag> tags,
                                  const std::vector<bool>& route,
                                  const LayerWeights<Scalar>& weights, const ModelConfig& cfg,
                                  LayerCache<Scalar>& cache, const AttentionOptions& opts = {});

template <typename Scalar>
struct ForwardTrace {
  std::vector<Matrix<Scalar>> h_attn;  // per layer
  std::vector<Matrix<Scalar>> h_out;   // per layer
};

template <typename Scalar>
struct PrefillOptions {
  MacCounter* counter = nullptr;
  ForwardTrace<Scalar>* trace = nullptr;
  std::vector<std::size_t> capture_layers;
  std::vector<AttentionMap>* attention_maps = nullptr;
};

/// Greedy argmax, ties to the lowest id.
template <typename Scalar>
std::int64_t argmax_token(const RowVector<Scalar>& logits);

/// Evicts the rows selected by `schedule.prune_segments` from every layer.
/// Returns the evicted positions.
template <typename Scalar>
std::vector<std::size_t> evict_skipped(KVCache<Scalar>& cache, const SkipSchedule& schedule);

/// One decoding session: a model reference plus the KV cache it owns.
template <typename Scalar>
class Session {
 public:
  Session(const Model<Scalar>& model, SkipSchedule schedule);

  /// Full forward pass over `seq`, filling the cache. Returns logits of the
  /// last position. Under SK the skipped rows are evicted afterwards.
  RowVector<Scalar> prefill(const TokenSequence<Scalar>& seq, const PrefillOptions<Scalar>& opts = {});

  /// Feeds one token id at the next position; returns its logits.
  RowVector<Scalar> step(std::int64_t token_id, MacCounter* counter = nullptr);

  /// Argmax decoding starting from the most recent logits.
  std::vector<std::int64_t> greedy_decode(std::size_t steps, MacCounter* counter = nullptr);

  /// Cached positions masked with -inf in every subsequent decode step.
  void set_decode_mask(std::vector<std::size_t> positions);

  const KVCache<Scalar>& cache() const { return cache_; }
  KVCache<Scalar>& mutable_cache() { return cache_; }
  const std::vector<std::size_t>& evicted_positions() const { return evicted_; }
  const RowVector<Scalar>& last_logits() const { return last_logits_; }
  const SkipSchedule& schedule() const { return schedule_; }

  /// Final norm + output head for one hidden row.
  RowVector<Scalar> logits(const RowVector<Scalar>& hidden, MacCounter* counter = nullptr) const;

 private:
  const Model<Scalar>* model_;
  SkipSchedule schedule_;
  KVCache<Scalar> cache_;
  std::vector<std::size_t> evicted_;
  std::vector<std::size_t> decode_mask_;
  RowVector<Scalar> last_logits_;
};

}  // namespace skipvision
