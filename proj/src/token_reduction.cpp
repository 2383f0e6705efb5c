#include "skipvision/token_reduction.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace skipvision {

template <typename Scalar>
Selection<Scalar> select_tokens(const TokenSequence<Scalar>& seq, const SelectionConfig& cfg) {
  std::vector<std::size_t> visual;
  std::optional<std::size_t> cls;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.provenance[i].kind == Provenance::Kind::Cls) cls = i;
    if (seq.provenance[i].is_visual()) visual.push_back(i);
  }

  std::vector<std::size_t> retained, skipped;
  switch (cfg.strategy) {
    case SelectionConfig::Strategy::Provenance:
      for (auto i : visual) {
        (seq.provenance[i].kind == Provenance::Kind::Global ? retained : skipped).push_back(i);
      }
      break;
    case SelectionConfig::Strategy::ClsTopN: {
      if (!cls) throw std::invalid_argument("select_tokens: ClsTopN requires a cls token");
      if (cfg.n_retain < 1) throw std::invalid_argument("select_tokens: n_retain must be >= 1");
      if (cfg.n_retain > visual.size()) {
        throw std::invalid_argument("select_tokens: n_retain " + std::to_string(cfg.n_retain) +
                                    " exceeds " + std::to_string(visual.size()) +
                                    " visual tokens");
      }
      const RowVectorD anchor = seq.embeddings.row(static_cast<Eigen::Index>(*cls)).template cast<double>();
      const double anchor_norm = anchor.norm();
      if (!(anchor_norm > 0)) throw std::invalid_argument("select_tokens: cls token has zero norm");
      std::vector<double> score(seq.size(), 0.0);
      for (auto i : visual) {
        const RowVectorD row = seq.embeddings.row(static_cast<Eigen::Index>(i)).template cast<double>();
        const double n = row.norm();
        if (!(n > 0)) throw std::invalid_argument("select_tokens: zero-norm visual token");
        score[i] = row.dot(anchor) / (n * anchor_norm);
      }
      std::vector<std::size_t> order = visual;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return seq.positions[a] < seq.positions[b];
      });
      std::vector<bool> keep(seq.size(), false);
      for (std::size_t r = 0; r < cfg.n_retain; ++r) keep[order[r]] = true;
      for (auto i : visual) (keep[i] ? retained : skipped).push_back(i);
      break;
    }
  }

  Selection<Scalar> out{seq.select(retained), seq.select(skipped)};
  std::fill(out.retained.roles.begin(), out.retained.roles.end(), TokenRole::RetainedVisual);
  std::fill(out.skipped.roles.begin(), out.skipped.roles.end(), TokenRole::SkippedVisual);
  return out;
}

template <typename Scalar>
MergeResult<Scalar> merge_tokens(const TokenSequence<Scalar>& tokens, const MergeConfig& cfg) {
  const std::size_t n = tokens.size();
  if (cfg.k < 1 || cfg.k > n) {
    throw std::invalid_argument("merge_tokens: k=" + std::to_string(cfg.k) + " outside [1, " +
                                std::to_string(n) + "]");
  }
  const Matrix<Scalar> unit = normalized_rows(tokens.embeddings);
  const Matrix<Scalar> cosine = unit * unit.transpose();

  std::vector<double> mean_sim(n, 0.0);
  if (n > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j != i) acc += static_cast<double>(cosine(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
      mean_sim[i] = acc / static_cast<double>(n - 1);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (mean_sim[a] != mean_sim[b]) return mean_sim[a] < mean_sim[b];
    return tokens.positions[a] < tokens.positions[b];
  });

  MergeResult<Scalar> out;
  out.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.k));
  std::sort(out.kept.begin(), out.kept.end());

  std::vector<std::ptrdiff_t> slot(n, -1);
  for (std::size_t s = 0; s < out.kept.size(); ++s) slot[out.kept[s]] = static_cast<std::ptrdiff_t>(s);

  out.assignment.resize(n);
  out.target_similarity.assign(n, 1.0);
  std::vector<RowVectorD> sums(cfg.k, RowVectorD::Zero(tokens.width()));
  std::vector<std::size_t> members(cfg.k, 0);
  double merged_sim = 0.0;
  std::size_t merged_count = 0;

  for (std::size_t i = 0; i < n; ++i) {
    std::size_t target = 0;
    if (slot[i] >= 0) {
      target = static_cast<std::size_t>(slot[i]);
    } else {
      Scalar best = cosine(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(out.kept[0]));
      for (std::size_t s = 1; s < out.kept.size(); ++s) {
        const Scalar c = cosine(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(out.kept[s]));
        if (c > best) {
          best = c;
          target = s;
        }
      }
      out.target_similarity[i] = static_cast<double>(best);
      merged_sim += static_cast<double>(best);
      ++merged_count;
    }
    out.assignment[i] = target;
    sums[target] += tokens.embeddings.row(static_cast<Eigen::Index>(i)).template cast<double>();
    ++members[target];
  }
  if (merged_count > 0) out.mean_merge_similarity = merged_sim / static_cast<double>(merged_count);

  out.merged = tokens.select(out.kept);
  for (std::size_t s = 0; s < cfg.k; ++s) {
    out.merged.embeddings.row(static_cast<Eigen::Index>(s)) =
        (sums[s] / static_cast<double>(members[s])).template cast<Scalar>();
  }
  ensure_finite(out.merged.embeddings, "merge_tokens");
  return out;
}

std::size_t density_bin(double cosine) {
  const double t = (std::clamp(cosine, -1.0, 1.0) + 1.0) / 2.0;
  const auto bin = static_cast<std::size_t>(t * static_cast<double>(kDensityBins));
  return std::min(bin, kDensityBins - 1);
}

template <typename Scalar>
DensityReport similarity_density(const TokenSequence<Scalar>& tokens) {
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto label = tokens.provenance[i].label();
    auto [it, inserted] = groups.try_emplace(label);
    if (inserted) order.push_back(label);
    it->second.push_back(i);
  }

  DensityReport report;
  for (const auto& label : order) {
    const auto& idx = groups[label];
    if (idx.size() < 2) {
      report.warnings.push_back("group '" + label + "' has " + std::to_string(idx.size()) +
                                " token(s); skipped");
      continue;
    }
    const MatrixD unit = normalized_rows(tokens.select(idx).embeddings.template cast<double>());
    GroupDensity g;
    g.group = label;
    g.tokens = idx.size();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < unit.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < unit.rows(); ++j) {
        const double c = unit.row(i).dot(unit.row(j));
        ++g.histogram[density_bin(c)];
        acc += c;
        ++g.pairs;
      }
    }
    g.mean = acc / static_cast<double>(g.pairs);
    report.groups.push_back(std::move(g));
  }
  return report;
}

const GroupDensity* DensityReport::find(std::string_view group) const {
  for (const auto& g : groups) {
    if (g.group == group) return &g;
  }
  return nullptr;
}

std::string DensityReport::to_csv() const {
  std::ostringstream os;
  os << "group,bin_lo,bin_hi,count\n";
  const double width = 2.0 / static_cast<double>(kDensityBins);
  for (const auto& g : groups) {
    for (std::size_t b = 0; b < kDensityBins; ++b) {
      os << g.group << ',' << (-1.0 + width * static_cast<double>(b)) << ','
         << (-1.0 + width * static_cast<double>(b + 1)) << ',' << g.histogram[b] << '\n';
    }
  }
  return os.str();
}

#define SKIPVISION_INSTANTIATE(Scalar)                                                           \
  template Selection<Scalar> select_tokens<Scalar>(const TokenSequence<Scalar>&,                 \
                                                   const SelectionConfig&);                      \
  template MergeResult<Scalar> merge_tokens<Scalar>(const TokenSequence<Scalar>&,                \
                                                    const MergeConfig&);                         \
  template DensityReport similarity_density<Scalar>(const TokenSequence<Scalar>&);

SKIPVISION_INSTANTIATE(float)
SKIPVISION_INSTANTIATE(double)
#undef SKIPVISION_INSTANTIATE

}  // namespace skipvision
