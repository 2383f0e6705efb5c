#pragma once

#include "skipvision/harness.hpp"

namespace testing_support {

using namespace skipvision;

inline ModelConfig desk_model(std::size_t layers, std::size_t hidden, std::size_t heads = 4,
                              std::size_t kv_heads = 2, std::uint64_t seed = 0) {
  ModelConfig m;
  m.layers = layers;
  m.hidden = hidden;
  m.ffn_inner = 3 * hidden;
  m.n_heads = heads;
  m.n_kv_heads = kv_heads;
  m.vocab = 48;
  m.seed = seed;
  return m;
}

inline ExperimentConfig desk_experiment(const ModelConfig& model, const SkipSchedule& schedule) {
  ExperimentConfig cfg;
  cfg.id = "desk";
  cfg.model = model;
  cfg.encoder.dim = static_cast<Eigen::Index>(model.hidden);
  cfg.encoder.n_global = 4;
  cfg.encoder.n_local = 12;
  cfg.merge.k = 6;
  cfg.schedule = schedule;
  cfg.text_tokens = 4;
  cfg.decode_steps = 8;
  cfg.timing_repeats = 1;
  return cfg;
}

/// Rows of `cache` kept by re-appending one at a time, skipping `drop`.
template <typename Scalar>
LayerCache<Scalar> rebuilt_without(const LayerCache<Scalar>& cache, const SkipSchedule& schedule) {
  LayerCache<Scalar> out(cache.width());
  for (std::size_t r = 0; r < cache.rows(); ++r) {
    const auto& tag = cache.tags()[r];
    if (evictable(tag, schedule)) continue;
    Matrix<Scalar> k = cache.keys().row(static_cast<Eigen::Index>(r));
    Matrix<Scalar> v = cache.values().row(static_cast<Eigen::Index>(r));
    out.append(k, v, std::span<const CacheTag>(&tag, 1));
  }
  return out;
}

}  // namespace testing_support
