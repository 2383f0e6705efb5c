#pragma once

#include "skipvision/numerics.hpp"
#include "skipvision/token_stream.hpp"

#include <algorithm>
#include <cstring>
#include <span>
#include <stdexcept>
#include <vector>

namespace skipvision {

struct CacheTag {
  std::size_t position = 0;
  TokenRole role = TokenRole::Text;
  Provenance provenance;

  friend bool operator==(const CacheTag&, const CacheTag&) = default;
};

/// Key/value rows of one layer. Rows keep the original position of the token
/// that produced them; eviction never renumbers.
template <typename Scalar>
class LayerCache {
 public:
  using ConstMap = Eigen::Map<const Matrix<Scalar>>;

  explicit LayerCache(Eigen::Index kv_width = 0) : width_(kv_width) {}

  Eigen::Index width() const { return width_; }
  std::size_t rows() const { return tags_.size(); }
  const std::vector<CacheTag>& tags() const { return tags_; }

  ConstMap keys() const { return ConstMap(keys_.data(), static_cast<Eigen::Index>(rows()), width_); }
  ConstMap values() const {
    return ConstMap(values_.data(), static_cast<Eigen::Index>(rows()), width_);
  }

  const Scalar* key_row(std::size_t r) const { return keys_.data() + r * static_cast<std::size_t>(width_); }
  const Scalar* value_row(std::size_t r) const {
    return values_.data() + r * static_cast<std::size_t>(width_);
  }

  void append(const Matrix<Scalar>& k, const Matrix<Scalar>& v, std::span<const CacheTag> tags) {
    if (k.rows() != v.rows() || static_cast<std::size_t>(k.rows()) != tags.size() ||
        k.cols() != width_ || v.cols() != width_) {
      throw std::invalid_argument("kv cache: append shape mismatch");
    }
    for (const auto& t : tags) {
      if (!tags_.empty() && t.position <= tags_.back().position) {
        throw std::invalid_argument("kv cache: positions must be strictly increasing (got " +
                                    std::to_string(t.position) + " after " +
                                    std::to_string(tags_.back().position) + ")");
      }
      tags_.push_back(t);
    }
    keys_.insert(keys_.end(), k.data(), k.data() + k.size());
    values_.insert(values_.end(), v.data(), v.data() + v.size());
  }

  /// Removes every row whose tag satisfies `pred`, preserving order. Returns
  /// the evicted positions.
  template <typename Pred>
  std::vector<std::size_t> evict_if(Pred pred) {
    std::vector<std::size_t> evicted;
    std::size_t write = 0;
    const auto w = static_cast<std::size_t>(width_);
    for (std::size_t read = 0; read < tags_.size(); ++read) {
      if (pred(tags_[read])) {
        evicted.push_back(tags_[read].position);
        continue;
      }
      if (write != read) {
        tags_[write] = tags_[read];
        std::copy_n(keys_.begin() + static_cast<std::ptrdiff_t>(read * w), w,
                    keys_.begin() + static_cast<std::ptrdiff_t>(write * w));
        std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(read * w), w,
                    values_.begin() + static_cast<std::ptrdiff_t>(write * w));
      }
      ++write;
    }
    tags_.resize(write);
    keys_.resize(write * w);
    values_.resize(write * w);
    return evicted;
  }

  /// Byte-level equality of keys, values and tags.
  friend bool operator==(const LayerCache& a, const LayerCache& b) {
    return a.width_ == b.width_ && a.tags_ == b.tags_ && a.keys_.size() == b.keys_.size() &&
           a.values_.size() == b.values_.size() &&
           std::memcmp(a.keys_.data(), b.keys_.data(), a.keys_.size() * sizeof(Scalar)) == 0 &&
           std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(Scalar)) == 0;
  }

 private:
  Eigen::Index width_;
  std::vector<Scalar> keys_;
  std::vector<Scalar> values_;
  std::vector<CacheTag> tags_;
};

template <typename Scalar>
struct KVCache {
  std::vector<LayerCache<Scalar>> layers;
  std::size_t next_position = 0;  // never decreases, so evicted positions are not reused

  KVCache() = default;
  KVCache(std::size_t n_layers, Eigen::Index kv_width) : layers(n_layers, LayerCache<Scalar>(kv_width)) {}

  template <typename Pred>
  std::vector<std::size_t> evict_if(Pred pred) {
    std::vector<std::size_t> evicted;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto e = layers[l].evict_if(pred);
      if (l == 0) evicted = std::move(e);
    }
    return evicted;
  }

  friend bool operator==(const KVCache&, const KVCache&) = default;
};

}  // namespace skipvision
