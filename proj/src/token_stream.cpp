#include "skipvision/token_stream.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

namespace skipvision {

std::string_view to_string(TokenRole role) {
  switch (role) {
    case TokenRole::RetainedVisual: return "retained";
    case TokenRole::SkippedVisual: return "skipped";
    case TokenRole::SummaryFormer: return "summary_former";
    case TokenRole::SummaryLatter: return "summary_latter";
    case TokenRole::Text: return "text";
  }
  return "unknown";
}

TokenRole parse_token_role(std::string_view text) {
  for (auto role : {TokenRole::RetainedVisual, TokenRole::SkippedVisual, TokenRole::SummaryFormer,
                    TokenRole::SummaryLatter, TokenRole::Text}) {
    if (to_string(role) == text) return role;
  }
  throw std::invalid_argument("unknown token role '" + std::string(text) + "'");
}

std::string Provenance::label() const {
  switch (kind) {
    case Kind::Cls: return "cls";
    case Kind::Global: return "global";
    case Kind::Local: return "local@" + std::to_string(window_scale);
    case Kind::Summary: return "summary";
    case Kind::Text: return "text";
  }
  return "unknown";
}

Provenance Provenance::parse(std::string_view label) {
  if (label == "cls") return cls();
  if (label == "global") return global();
  if (label == "summary") return summary();
  if (label == "text") return text();
  constexpr std::string_view prefix = "local@";
  if (label.starts_with(prefix)) {
    int scale = 0;
    const auto digits = label.substr(prefix.size());
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), scale);
    if (ec == std::errc() && ptr == digits.data() + digits.size()) return local(scale);
  }
  throw std::invalid_argument("unknown provenance label '" + std::string(label) + "'");
}

bool Provenance::matches(std::string_view selector) const {
  if (selector == "local") return kind == Kind::Local;
  return label() == selector;
}

template <typename Scalar>
void TokenSequence<Scalar>::validate() const {
  const auto n = static_cast<std::size_t>(embeddings.rows());
  if (roles.size() != n || provenance.size() != n || positions.size() != n || ids.size() != n) {
    throw std::invalid_argument("token sequence: label arrays do not match " + std::to_string(n) +
                                " embedding rows");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (positions[i] <= positions[i - 1]) {
      throw std::invalid_argument("token sequence: positions not strictly increasing at index " +
                                  std::to_string(i));
    }
  }
  const auto cls = std::count_if(provenance.begin(), provenance.end(),
                                 [](const Provenance& p) { return p.kind == Provenance::Kind::Cls; });
  if (cls > 1) throw std::invalid_argument("token sequence: more than one cls token");
  ensure_finite(embeddings, "token sequence");
}

template <typename Scalar>
std::size_t TokenSequence<Scalar>::count(TokenRole role) const {
  return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), role));
}

template <typename Scalar>
TokenSequence<Scalar> TokenSequence<Scalar>::select(const std::vector<std::size_t>& indices) const {
  TokenSequence out = empty_with_width(width());
  out.embeddings.resize(static_cast<Eigen::Index>(indices.size()), width());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto i = indices[r];
    out.embeddings.row(static_cast<Eigen::Index>(r)) = embeddings.row(static_cast<Eigen::Index>(i));
    out.roles.push_back(roles[i]);
    out.provenance.push_back(provenance[i]);
    out.positions.push_back(positions[i]);
    out.ids.push_back(ids[i]);
  }
  return out;
}

template <typename Scalar>
TokenSequence<Scalar> TokenSequence<Scalar>::with_role(TokenRole role) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i) {
    if (roles[i] == role) idx.push_back(i);
  }
  return select(idx);
}

template <typename Scalar>
void TokenSequence<Scalar>::push_back(const RowVector<Scalar>& row, TokenRole role, Provenance prov,
                                      std::size_t position, std::int64_t id) {
  if (embeddings.rows() > 0 && row.size() != embeddings.cols()) {
    throw std::invalid_argument("token sequence: row width " + std::to_string(row.size()) +
                                " != " + std::to_string(embeddings.cols()));
  }
  const Eigen::Index n = embeddings.rows();
  Matrix<Scalar> grown(n + 1, row.size());
  if (n > 0) grown.topRows(n) = embeddings;
  grown.row(n) = row;
  embeddings = std::move(grown);
  roles.push_back(role);
  provenance.push_back(prov);
  positions.push_back(position);
  ids.push_back(id);
}

template <typename Scalar>
TokenSequence<Scalar> TokenSequence<Scalar>::empty_with_width(Eigen::Index width) {
  TokenSequence out;
  out.embeddings.resize(0, width);
  return out;
}

void MockEncoderConfig::validate() const {
  if (n_global + n_local < 1) throw std::invalid_argument("encoder: n_global + n_local must be >= 1");
  if (cluster_count < 1) throw std::invalid_argument("encoder: cluster_count must be >= 1");
  if (dim < 1) throw std::invalid_argument("encoder: dim must be >= 1");
  if (n_local > 0 && window_scales.empty()) {
    throw std::invalid_argument("encoder: local tokens requested without window scales");
  }
  for (int s : window_scales) {
    if (s <= 0) throw std::invalid_argument("encoder: window scales must be positive");
  }
  if (noise_scale < 0) throw std::invalid_argument("encoder: noise_scale must be >= 0");
}

template <typename Scalar>
TokenSequence<Scalar> mock_encode(const MockEncoderConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto dim = cfg.dim;
  const auto k = static_cast<Eigen::Index>(cfg.cluster_count);

  const MatrixD centroids = gaussian_matrix<double>(k, dim, 1.0, rng);
  auto noisy = [&](Eigen::Index centroid, double noise) {
    RowVectorD row = centroids.row(centroid);
    for (Eigen::Index c = 0; c < dim; ++c) row(c) += noise * normal(rng);
    return row;
  };

  TokenSequence<double> seq = TokenSequence<double>::empty_with_width(dim);
  std::size_t pos = 0;
  seq.push_back(centroids.colwise().mean(), TokenRole::RetainedVisual, Provenance::cls(), pos++);

  for (std::size_t i = 0; i < cfg.n_global; ++i) {
    seq.push_back(noisy(static_cast<Eigen::Index>(i) % k, cfg.noise_scale),
                  TokenRole::RetainedVisual, Provenance::global(), pos++);
  }

  if (cfg.n_local > 0) {
    const int max_scale = *std::max_element(cfg.window_scales.begin(), cfg.window_scales.end());
    const std::size_t n_scales = cfg.window_scales.size();
    std::uniform_int_distribution<Eigen::Index> pick(0, k - 1);
    for (std::size_t s = 0; s < n_scales; ++s) {
      const int scale = cfg.window_scales[s];
      const std::size_t share = cfg.n_local / n_scales + (s < cfg.n_local % n_scales ? 1 : 0);
      const double noise = cfg.noise_scale * static_cast<double>(scale) / max_scale;
      for (std::size_t i = 0; i < share; ++i) {
        const Eigen::Index c = pick(rng);
        seq.push_back(noisy(c, noise), TokenRole::RetainedVisual, Provenance::local(scale), pos++);
      }
    }
  }
  if constexpr (std::is_same_v<Scalar, double>) {
    return seq;
  } else {
    return seq.template cast<Scalar>();
  }
}

template <typename Scalar>
TokenSequence<Scalar> text_tokens(const Matrix<Scalar>& embedding_table, std::size_t count,
                                  std::uint64_t seed) {
  if (embedding_table.rows() == 0 && count > 0) {
    throw std::invalid_argument("text_tokens: empty embedding table");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> pick(0, embedding_table.rows() - 1);
  auto seq = TokenSequence<Scalar>::empty_with_width(embedding_table.cols());
  for (std::size_t i = 0; i < count; ++i) {
    const auto id = pick(rng);
    seq.push_back(embedding_table.row(id), TokenRole::Text, Provenance::text(), i, id);
  }
  return seq;
}

template <typename Scalar>
TokenSequence<Scalar> assemble_sequence(const TokenSequence<Scalar>& retained,
                                        const TokenSequence<Scalar>& skipped,
                                        const std::optional<RowVector<Scalar>>& s_former,
                                        const std::optional<RowVector<Scalar>>& s_latter,
                                        const TokenSequence<Scalar>& text) {
  Eigen::Index width = -1;
  auto check = [&](Eigen::Index w, bool present, const char* what) {
    if (!present) return;
    if (width < 0) width = w;
    if (w != width) {
      throw std::invalid_argument(std::string("assemble_sequence: ") + what + " width " +
                                  std::to_string(w) + " != " + std::to_string(width));
    }
  };
  check(retained.width(), !retained.empty(), "retained");
  check(s_former ? s_former->size() : 0, s_former.has_value(), "former summary");
  check(skipped.width(), !skipped.empty(), "skipped");
  check(s_latter ? s_latter->size() : 0, s_latter.has_value(), "latter summary");
  check(text.width(), !text.empty(), "text");
  if (width < 0) width = std::max({retained.width(), skipped.width(), text.width()});

  const std::size_t n = retained.size() + skipped.size() + text.size() + (s_former ? 1 : 0) +
                        (s_latter ? 1 : 0);
  TokenSequence<Scalar> out = TokenSequence<Scalar>::empty_with_width(width);
  out.embeddings.resize(static_cast<Eigen::Index>(n), width);
  std::size_t row = 0;
  auto emit = [&](const auto& embedding, TokenRole role, Provenance prov, std::int64_t id) {
    out.embeddings.row(static_cast<Eigen::Index>(row)) = embedding;
    out.roles.push_back(role);
    out.provenance.push_back(prov);
    out.positions.push_back(row);
    out.ids.push_back(id);
    ++row;
  };
  for (std::size_t i = 0; i < retained.size(); ++i) {
    emit(retained.embeddings.row(static_cast<Eigen::Index>(i)), TokenRole::RetainedVisual,
         retained.provenance[i], retained.ids[i]);
  }
  if (s_former) emit(*s_former, TokenRole::SummaryFormer, Provenance::summary(), -1);
  for (std::size_t i = 0; i < skipped.size(); ++i) {
    emit(skipped.embeddings.row(static_cast<Eigen::Index>(i)), TokenRole::SkippedVisual,
         skipped.provenance[i], skipped.ids[i]);
  }
  if (s_latter) emit(*s_latter, TokenRole::SummaryLatter, Provenance::summary(), -1);
  for (std::size_t i = 0; i < text.size(); ++i) {
    emit(text.embeddings.row(static_cast<Eigen::Index>(i)), TokenRole::Text, text.provenance[i],
         text.ids[i]);
  }
  return out;
}

#define SKIPVISION_INSTANTIATE(Scalar)                                                          \
  template struct TokenSequence<Scalar>;                                                        \
  template TokenSequence<Scalar> mock_encode<Scalar>(const MockEncoderConfig&);                 \
  template TokenSequence<Scalar> text_tokens<Scalar>(const Matrix<Scalar>&, std::size_t,        \
                                                     std::uint64_t);                            \
  template TokenSequence<Scalar> assemble_sequence<Scalar>(                                     \
      const TokenSequence<Scalar>&, const TokenSequence<Scalar>&,                               \
      const std::optional<RowVector<Scalar>>&, const std::optional<RowVector<Scalar>>&,         \
      const TokenSequence<Scalar>&);

SKIPVISION_INSTANTIATE(float)
SKIPVISION_INSTANTIATE(double)
#undef SKIPVISION_INSTANTIATE

}  // namespace skipvision
