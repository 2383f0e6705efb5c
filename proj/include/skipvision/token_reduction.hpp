#pragma once

#include "skipvision/token_stream.hpp"

#include <array>
#include <string>
#include <vector>

namespace skipvision {

struct SelectionConfig {
  enum class Strategy : std::uint8_t { Provenance, ClsTopN };
  Strategy strategy = Strategy::Provenance;
  std::size_t n_retain = 0;
};

template <typename Scalar>
struct Selection {
  TokenSequence<Scalar> retained;
  TokenSequence<Scalar> skipped;
};

/// Splits the visual tokens of an encoder output into retained and skipped
/// sets. The Cls token is only used for scoring and lands in neither output.
/// Provenance: Global is retained, Local is skipped. ClsTopN: the n_retain
/// tokens with highest cosine to Cls are retained (ties to lower position).
template <typename Scalar>
Selection<Scalar> select_tokens(const TokenSequence<Scalar>& seq, const SelectionConfig& cfg);

struct MergeConfig {
  std::size_t k = 1;
};

template <typename Scalar>
struct MergeResult {
  TokenSequence<Scalar> merged;          // k rows, kept tokens in original relative order
  std::vector<std::size_t> kept;         // input indices of the kept tokens, ascending
  std::vector<std::size_t> assignment;   // per input token: index into `kept` of its group
  std::vector<double> target_similarity; // per input token: cosine to its kept target (1 if kept)
  double mean_merge_similarity = 1.0;    // mean over merged-away tokens; 1 when none merged
};

/// Three-step redundancy merge:
///   1. mean pairwise cosine similarity per token (self excluded);
///   2. keep the k tokens with the lowest mean (ties to lower position);
///   3. assign every other token to its most similar kept token (measured on
///      the original kept embeddings, ties to the earlier kept token) and
///      replace each kept token by the arithmetic mean of its group.
template <typename Scalar>
MergeResult<Scalar> merge_tokens(const TokenSequence<Scalar>& tokens, const MergeConfig& cfg);

inline constexpr std::size_t kDensityBins = 50;

struct GroupDensity {
  std::string group;
  std::size_t tokens = 0;
  std::size_t pairs = 0;
  std::array<std::size_t, kDensityBins> histogram{};
  double mean = 0.0;
};

struct DensityReport {
  std::vector<GroupDensity> groups;
  std::vector<std::string> warnings;

  const GroupDensity* find(std::string_view group) const;
  /// group,bin_lo,bin_hi,count
  std::string to_csv() const;
};

/// Pairwise cosine statistics per provenance label over [-1, 1].
template <typename Scalar>
DensityReport similarity_density(const TokenSequence<Scalar>& tokens);

std::size_t density_bin(double cosine);

}  // namespace skipvision
