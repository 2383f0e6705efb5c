#pragma once

#include "skipvision/numerics.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace skipvision {

enum class TokenRole : std::uint8_t {
  RetainedVisual,
  SkippedVisual,
  SummaryFormer,
  SummaryLatter,
  Text,
};

std::string_view to_string(TokenRole role);
TokenRole parse_token_role(std::string_view text);

/// Where a token came from. Local tokens carry the window scale of the crop
/// that produced them; smaller scale means finer granularity.
struct Provenance {
  enum class Kind : std::uint8_t { Cls, Global, Local, Summary, Text };

  Kind kind = Kind::Text;
  int window_scale = 0;

  static Provenance cls() { return {Kind::Cls, 0}; }
  static Provenance global() { return {Kind::Global, 0}; }
  static Provenance local(int scale) { return {Kind::Local, scale}; }
  static Provenance summary() { return {Kind::Summary, 0}; }
  static Provenance text() { return {Kind::Text, 0}; }

  bool is_visual() const { return kind == Kind::Global || kind == Kind::Local; }

  /// "cls", "global", "local@<scale>", "summary", "text".
  std::string label() const;
  static Provenance parse(std::string_view label);

  /// Segment selector match: "local" selects every local scale, anything
  /// else must equal label().
  bool matches(std::string_view selector) const;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Embedding rows plus per-token labels. Positions are strictly increasing.
template <typename Scalar>
struct TokenSequence {
  Matrix<Scalar> embeddings;
  std::vector<TokenRole> roles;
  std::vector<Provenance> provenance;
  std::vector<std::size_t> positions;
  std::vector<std::int64_t> ids;  // vocabulary id for text tokens, -1 otherwise

  std::size_t size() const { return roles.size(); }
  Eigen::Index width() const { return embeddings.cols(); }
  bool empty() const { return roles.empty(); }

  /// Throws std::invalid_argument naming the broken invariant.
  void validate() const;

  std::size_t count(TokenRole role) const;

  /// Rows at the given indices, in the given order, labels carried along.
  TokenSequence select(const std::vector<std::size_t>& indices) const;
  TokenSequence with_role(TokenRole role) const;

  void push_back(const RowVector<Scalar>& row, TokenRole role, Provenance prov,
                 std::size_t position, std::int64_t id = -1);

  template <typename To>
  TokenSequence<To> cast() const {
    return TokenSequence<To>{embeddings.template cast<To>(), roles, provenance, positions, ids};
  }

  static TokenSequence empty_with_width(Eigen::Index width);
};

struct MockEncoderConfig {
  std::size_t n_global = 8;
  std::size_t n_local = 32;
  std::vector<int> window_scales{4, 8};
  Eigen::Index dim = 32;
  std::size_t cluster_count = 4;
  double noise_scale = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Deterministic stand-in for a vision encoder. Emits one Cls token (mean of
/// the cluster centroids) at position 0, then the Global tokens, then the
/// Local tokens grouped by window scale in the listed order. Local tokens sit
/// near a centroid with noise proportional to scale / max_scale, so finer
/// scales are more self-similar.
template <typename Scalar>
TokenSequence<Scalar> mock_encode(const MockEncoderConfig& cfg);

/// Seeded Gaussian text tokens drawn from an embedding table.
template <typename Scalar>
TokenSequence<Scalar> text_tokens(const Matrix<Scalar>& embedding_table, std::size_t count,
                                  std::uint64_t seed);

/// Layout: retained, former summary, skipped, latter summary, text, with
/// positions renumbered 0..n-1 in that order.
template <typename Scalar>
TokenSequence<Scalar> assemble_sequence(const TokenSequence<Scalar>& retained,
                                        const TokenSequence<Scalar>& skipped,
                                        const std::optional<RowVector<Scalar>>& s_former,
                                        const std::optional<RowVector<Scalar>>& s_latter,
                                        const TokenSequence<Scalar>& text);

}  // namespace skipvision
