#include "oracles.hpp"

#include "skipvision/token_reduction.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace skipvision;

namespace {

TokenSequence<double> from_rows(const MatrixD& rows, Provenance prov = Provenance::local(4)) {
  auto seq = TokenSequence<double>::empty_with_width(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    seq.push_back(rows.row(i), TokenRole::SkippedVisual, prov, static_cast<std::size_t>(i));
  return seq;
}

TokenSequence<double> with_cls(const RowVectorD& cls, const MatrixD& visual) {
  auto seq = TokenSequence<double>::empty_with_width(cls.size());
  seq.push_back(cls, TokenRole::RetainedVisual, Provenance::cls(), 0);
  for (Eigen::Index i = 0; i < visual.rows(); ++i)
    seq.push_back(visual.row(i), TokenRole::RetainedVisual, i % 2 ? Provenance::local(4) : Provenance::global(),
                  static_cast<std::size_t>(i + 1));
  return seq;
}

}  // namespace

TEST(Select, AllGlobalMeansNothingSkipped) {
  MockEncoderConfig cfg;
  cfg.n_local = 0;
  auto sel = select_tokens(mock_encode<double>(cfg), {});
  EXPECT_TRUE(sel.skipped.empty());
  EXPECT_EQ(sel.retained.size(), cfg.n_global);
}

TEST(Select, ProvenanceSplitsGlobalAndLocal) {
  MockEncoderConfig cfg;
  auto seq = mock_encode<double>(cfg);
  auto sel = select_tokens(seq, {});
  EXPECT_EQ(sel.retained.size(), cfg.n_global);
  EXPECT_EQ(sel.skipped.size(), cfg.n_local);
  for (const auto& p : sel.retained.provenance) EXPECT_EQ(p, Provenance::global());
  for (auto r : sel.skipped.roles) EXPECT_EQ(r, TokenRole::SkippedVisual);
  for (auto r : sel.retained.roles) EXPECT_EQ(r, TokenRole::RetainedVisual);
}

TEST(Select, TokenEqualToClsIsRetained) {
  MatrixD visual(3, 2);
  visual << 0, 1, 1, 1, -1, 0;
  RowVectorD cls(2);
  cls << 1, 1;
  auto sel = select_tokens(with_cls(cls, visual), {SelectionConfig::Strategy::ClsTopN, 1});
  ASSERT_EQ(sel.retained.size(), 1u);
  EXPECT_EQ(sel.retained.positions[0], 2u);
}

TEST(Select, MatchesExhaustiveSortOracle) {
  // Five 2D tokens with hand-picked angles to the cls direction (1, 0).
  MatrixD visual(5, 2);
  visual << 1, 0.2,   // ~11 deg
      0.1, 1,         // ~84 deg
      -1, 0.3,        // ~163 deg
      2, -1,          // ~27 deg
      0.5, 0.5;       // 45 deg
  RowVectorD cls(2);
  cls << 1, 0;
  auto seq = with_cls(cls, visual);
  for (std::size_t n = 1; n <= 5; ++n) {
    auto sel = select_tokens(seq, {SelectionConfig::Strategy::ClsTopN, n});
    std::vector<long double> key;
    MatrixD all(6, 2);
    all << cls, visual;
    for (Eigen::Index i = 1; i <= 5; ++i) key.push_back(-oracle::cosine(all, 0, i));
    auto order = oracle::selection_order(key);
    std::set<std::size_t> want;
    for (std::size_t r = 0; r < n; ++r) want.insert(order[r] + 1);
    std::set<std::size_t> got(sel.retained.positions.begin(), sel.retained.positions.end());
    EXPECT_EQ(got, want) << "n=" << n;
    EXPECT_EQ(sel.retained.size() + sel.skipped.size(), 5u);
  }
}

TEST(Select, PartitionIsExhaustiveAndDisjoint) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MockEncoderConfig cfg;
    cfg.seed = seed;
    auto seq = mock_encode<double>(cfg);
    for (auto strategy : {SelectionConfig::Strategy::Provenance, SelectionConfig::Strategy::ClsTopN}) {
      auto sel = select_tokens(seq, {strategy, 1 + seed});
      std::set<std::size_t> r(sel.retained.positions.begin(), sel.retained.positions.end());
      std::set<std::size_t> s(sel.skipped.positions.begin(), sel.skipped.positions.end());
      EXPECT_EQ(r.size() + s.size(), seq.size() - 1);
      for (auto p : r) EXPECT_EQ(s.count(p), 0u);
      EXPECT_EQ(r.count(0), 0u);  // cls is never part of either set
      EXPECT_EQ(s.count(0), 0u);
    }
  }
}

TEST(Select, ClsTopNRejectsBadBudgets) {
  MockEncoderConfig cfg;
  auto seq = mock_encode<double>(cfg);
  EXPECT_THROW(select_tokens(seq, {SelectionConfig::Strategy::ClsTopN, 0}), std::invalid_argument);
  EXPECT_THROW(select_tokens(seq, {SelectionConfig::Strategy::ClsTopN, 1000}), std::invalid_argument);
}

TEST(Merge, KEqualsNIsIdentity) {
  std::mt19937_64 rng(1);
  auto seq = from_rows(gaussian_matrix<double>(6, 4, 1.0, rng));
  auto m = merge_tokens(seq, {6});
  EXPECT_EQ(m.merged.embeddings, seq.embeddings);
  EXPECT_EQ(m.merged.positions, seq.positions);
  EXPECT_EQ(m.mean_merge_similarity, 1.0);
}

TEST(Merge, IdenticalTokensCollapse) {
  MatrixD rows = MatrixD::Zero(5, 3);
  rows.rowwise() = RowVectorD::LinSpaced(3, 1, 3);
  auto m = merge_tokens(from_rows(rows), {2});
  ASSERT_EQ(m.merged.size(), 2u);
  for (Eigen::Index i = 0; i < 2; ++i)
    EXPECT_LE((m.merged.embeddings.row(i) - rows.row(0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Merge, SmallCaseMatchesOracle) {
  MatrixD rows(4, 2);
  rows << 1, 0, 0.9, 0.1, 0, 1, -0.2, 1;
  auto m = merge_tokens(from_rows(rows), {2});
  auto want = oracle::brute_merge(rows, 2);
  EXPECT_EQ(m.kept, want.kept);
  EXPECT_LE((m.merged.embeddings - want.merged).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Merge, OutputInvariants) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> pick_n(1, 20);
    const int n = pick_n(rng);
    std::uniform_int_distribution<int> pick_k(1, n);
    const auto k = static_cast<std::size_t>(pick_k(rng));
    MatrixD rows = gaussian_matrix<double>(n, 5, 1.0, rng);
    auto m = merge_tokens(from_rows(rows), {k});
    ASSERT_EQ(m.merged.size(), k);
    for (std::size_t g = 0; g < k; ++g) {
      double max_norm = 0;
      RowVectorD lo = RowVectorD::Constant(5, 1e300), hi = RowVectorD::Constant(5, -1e300);
      for (int i = 0; i < n; ++i) {
        if (m.assignment[static_cast<std::size_t>(i)] != g) continue;
        max_norm = std::max(max_norm, rows.row(i).norm());
        lo = lo.cwiseMin(rows.row(i));
        hi = hi.cwiseMax(rows.row(i));
      }
      const RowVectorD out = m.merged.embeddings.row(static_cast<Eigen::Index>(g));
      EXPECT_LE(out.norm(), max_norm + 1e-12);
      EXPECT_TRUE(((out - lo).array() >= -1e-12).all() && ((hi - out).array() >= -1e-12).all());
    }
  }
}

TEST(Merge, PermutationEquivariantInKeptSet) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 12;
    MatrixD rows = gaussian_matrix<double>(n, 4, 1.0, rng);
    auto base = merge_tokens(from_rows(rows), {4});
    std::set<std::size_t> kept_positions;
    for (auto i : base.kept) kept_positions.insert(i);

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixD permuted(n, 4);
    for (int i = 0; i < n; ++i) permuted.row(i) = rows.row(perm[static_cast<std::size_t>(i)]);
    auto m = merge_tokens(from_rows(permuted), {4});
    std::set<std::size_t> got;
    for (auto i : m.kept) got.insert(static_cast<std::size_t>(perm[i]));
    EXPECT_EQ(got, kept_positions);
  }
}

TEST(Merge, RejectsOutOfRangeK) {
  std::mt19937_64 rng(4);
  auto seq = from_rows(gaussian_matrix<double>(3, 2, 1.0, rng));
  EXPECT_THROW(merge_tokens(seq, {0}), std::invalid_argument);
  EXPECT_THROW(merge_tokens(seq, {4}), std::invalid_argument);
}

TEST(Density, IdenticalAndOrthogonal) {
  MatrixD same = MatrixD::Ones(4, 3);
  auto d = similarity_density(from_rows(same));
  ASSERT_EQ(d.groups.size(), 1u);
  EXPECT_NEAR(d.groups[0].mean, 1.0, 1e-12);
  std::size_t occupied = 0;
  for (auto c : d.groups[0].histogram) occupied += c > 0;
  EXPECT_EQ(occupied, 1u);
  EXPECT_EQ(d.groups[0].histogram[kDensityBins - 1], 6u);

  MatrixD orth(2, 2);
  orth << 1, 0, 0, 1;
  EXPECT_NEAR(similarity_density(from_rows(orth)).groups[0].mean, 0.0, 1e-12);
}

TEST(Density, SingletonGroupWarns) {
  MatrixD rows = MatrixD::Ones(1, 3);
  auto d = similarity_density(from_rows(rows));
  EXPECT_TRUE(d.groups.empty());
  EXPECT_EQ(d.warnings.size(), 1u);
}

TEST(Density, CsvShape) {
  auto d = similarity_density(from_rows(MatrixD::Ones(3, 2)));
  auto csv = d.to_csv();
  EXPECT_EQ(csv.rfind("group,bin_lo,bin_hi,count\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(kDensityBins + 1));
}
