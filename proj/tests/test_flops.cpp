#include "test_support.hpp"

#include "skipvision/flops.hpp"

#include <gtest/gtest.h>

using namespace skipvision;
using testing_support::desk_experiment;
using testing_support::desk_model;

namespace {

ModelConfig llama_mha() {
  auto c = ModelConfig::llama3_8b();
  c.n_kv_heads = c.n_heads;
  return c;
}

// Per-layer cost written out by hand with g = 1.
double hand_cost(double n1, double n2, double c, double m) {
  return 4 * n1 * c * c + 2 * n1 * n1 * c + 3 * n2 * c * m;
}

}  // namespace

TEST(DenseFlops, ZeroTokens) { EXPECT_EQ(dense_flops(desk_model(2, 16), 0).total(), 0u); }

TEST(DenseFlops, TableOneRowsWithThreeAndAHalfC) {
  ModelConfig cfg = desk_model(3, 64, 4, 4);
  cfg.ffn_inner = 224;  // 3.5 C
  const std::uint64_t n = 10, c = 64;
  auto r = dense_flops(cfg, n);
  EXPECT_EQ(r.ffn_per_layer * 2, 21 * n * c * c);  // 10.5 N C^2
  EXPECT_EQ(r.attention_score_per_layer, 2 * n * n * c);
  EXPECT_GE(r.attention_proj_per_layer * 2, 3 * n * c * c);  // >= 1.5 N C^2
  EXPECT_EQ(r.attention_proj_per_layer, 4 * n * c * c);

  cfg.n_kv_heads = 1;  // g = 4: 2.5 N C^2 of projections
  EXPECT_EQ(dense_flops(cfg, n).attention_proj_per_layer * 2, 5 * n * c * c);
}

TEST(DenseFlops, MatchesInstrumentedPrefill) {
  ModelConfig cfg = desk_model(2, 8, 2, 2);
  cfg.ffn_inner = 16;
  auto model = make_model<float>(cfg);
  std::mt19937_64 rng(1);
  auto seq = TokenSequence<float>::empty_with_width(8);
  for (std::size_t i = 0; i < 4; ++i)
    seq.push_back(gaussian_matrix<float>(1, 8, 1.0, rng).row(0), TokenRole::Text, Provenance::text(), i);
  MacCounter counter;
  PrefillOptions<float> opts;
  opts.counter = &counter;
  Session<float>(model, SkipSchedule::dense()).prefill(seq, opts);
  EXPECT_EQ(counter.formula_total(), dense_flops(cfg, 4).total());
  EXPECT_EQ(counter[MacScope::Head], 8u * cfg.vocab);  // last position only, outside formula scope
}

TEST(DenseFlops, QuadraticInN) {
  auto cfg = desk_model(3, 32);
  // Second difference of a quadratic a N^2 + b N is 2a, with a = 2 L C.
  for (std::uint64_t n = 1; n < 20; ++n) {
    const auto f0 = static_cast<std::int64_t>(dense_flops(cfg, n).total());
    const auto f1 = static_cast<std::int64_t>(dense_flops(cfg, n + 1).total());
    const auto f2 = static_cast<std::int64_t>(dense_flops(cfg, n + 2).total());
    EXPECT_EQ(f2 - 2 * f1 + f0, static_cast<std::int64_t>(2 * 2 * cfg.layers * cfg.hidden));
  }
}

TEST(SkipFlops, FullBudgetEqualsDense) {
  auto cfg = desk_model(2, 16);
  for (std::uint64_t n : {1u, 7u, 40u}) EXPECT_EQ(skip_flops({cfg, n, n, n}).total(), dense_flops(cfg, n).total());
}

TEST(SkipFlops, MonotoneAndBoundedByDense) {
  auto cfg = desk_model(2, 16);
  const std::uint64_t n = 30;
  const auto dense = dense_flops(cfg, n).total();
  for (std::uint64_t n1 = 0; n1 <= n; ++n1)
    for (std::uint64_t n2 = 0; n2 <= n1; ++n2) {
      const auto t = skip_flops({cfg, n, n1, n2}).total();
      EXPECT_LE(t, dense);
      if (n2 > 0) {
        EXPECT_GT(t, skip_flops({cfg, n, n1, n2 - 1}).total());
      }
      if (n1 > n2) {
        EXPECT_GT(t, skip_flops({cfg, n, n1 - 1, n2}).total());
      }
    }
}

TEST(SkipFlops, RejectsInvalidBudgets) {
  auto cfg = desk_model(2, 16);
  EXPECT_THROW(skip_flops({cfg, 10, 5, 6}), std::invalid_argument);
  EXPECT_THROW(skip_flops({cfg, 10, 11, 3}), std::invalid_argument);
}

TEST(SkipFlops, SvLlavaRatio) {
  const double r = flops_ratio(llama_mha(), 576, 258, 102);
  EXPECT_NEAR(r, 0.25, 0.01);
  EXPECT_NEAR(r, hand_cost(258, 102, 4096, 14336) / hand_cost(576, 576, 4096, 14336), 1e-12);
}

TEST(SkipFlops, HighResRatioMatchesHandCalculation) {
  const double hand = hand_cost(530, 274, 4096, 14336) / hand_cost(1296, 1296, 4096, 14336);
  const double r = flops_ratio(llama_mha(), 1296, 530, 274);
  EXPECT_LE(std::abs(r - hand) / hand, 1e-9);
  EXPECT_NEAR(r, 0.25, 0.03);
}

TEST(Params, Llama3Breakdown) {
  auto p = param_count(ModelConfig::llama3_8b());
  EXPECT_NEAR(static_cast<double>(p.ffn), 5.64e9, 0.01 * 5.64e9);
  EXPECT_NEAR(static_cast<double>(p.attention), 1.34e9, 0.01 * 1.34e9);
  EXPECT_NEAR(static_cast<double>(p.embedding), 5.25e8, 0.01 * 5.25e8);
  EXPECT_NEAR(p.ffn_pct(), 70, 1);
  EXPECT_NEAR(p.attention_pct(), 17, 1);
  EXPECT_NEAR(p.embedding_pct(), 6, 1);
  EXPECT_LE(p.ffn_pct() + p.attention_pct() + p.embedding_pct(), 100.0);
}

TEST(Params, UnitConfig) {
  ModelConfig cfg;
  cfg.layers = cfg.hidden = cfg.ffn_inner = cfg.n_heads = cfg.n_kv_heads = 1;
  EXPECT_EQ(param_count(cfg).ffn, 3u);
}

TEST(Params, MatchesEnumeratedWeights) {
  for (bool bias : {false, true})
    for (bool tied : {true, false}) {
      auto cfg = desk_model(3, 16, 4, 2);
      cfg.use_bias = bias;
      cfg.tie_embeddings = tied;
      auto m = make_model<double>(cfg);
      std::uint64_t ffn = 0, attn = 0, other = 0;
      for (const auto& l : m.layers) {
        ffn += l.ffn.w_1.size() + l.ffn.w_gate.size() + l.ffn.w_2.size() + l.ffn.b_1.size() + l.ffn.b_2.size();
        attn += l.attention.w_q.size() + l.attention.w_k.size() + l.attention.w_v.size() + l.attention.w_o.size();
        other += l.attention.norm.size() + l.ffn.norm.size();
      }
      other += m.final_norm.size() + m.output_head.size();
      auto p = param_count(cfg);
      EXPECT_EQ(p.ffn, ffn);
      EXPECT_EQ(p.attention, attn);
      EXPECT_EQ(p.embedding, static_cast<std::uint64_t>(m.embedding.size()));
      EXPECT_EQ(p.other, other);
    }
}

TEST(TrainingEstimate, ThreeTimesForward) {
  auto cfg = desk_model(2, 16);
  EXPECT_EQ(training_flops_estimate({cfg, 0, 0, 0}), 0.0);
  for (std::uint64_t n : {1u, 9u, 33u})
    EXPECT_EQ(training_flops_estimate({cfg, n, n, n}), 3.0 * static_cast<double>(dense_flops(cfg, n).total()));
  EXPECT_EQ(training_flops_estimate(100.0), 300.0);
  const auto forward = static_cast<double>(skip_flops({cfg, 5, 4, 2}).total());
  EXPECT_EQ(training_flops_estimate({cfg, 5, 4, 2}), 3 * forward);
}

TEST(Accountant, MatchesInstrumentationForSchedules) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    std::uniform_int_distribution<int> layers(1, 3), heads(1, 4);
    const auto h = static_cast<std::size_t>(heads(rng));
    auto model_cfg = desk_model(static_cast<std::size_t>(layers(rng)), 4 * h * 2, h * 2, h, static_cast<std::uint64_t>(trial));
    for (const auto& sched : {SkipSchedule::dense(), SkipSchedule::all_on()}) {
      auto cfg = desk_experiment(model_cfg, sched);
      auto in = prepare_input<float>(cfg, static_cast<std::uint64_t>(trial));
      MacCounter counter;
      PrefillOptions<float> opts;
      opts.counter = &counter;
      Session<float>(in.model, sched).prefill(in.sequence, opts);
      auto route = ffn_routing(in.sequence.roles, sched);
      const auto n = in.sequence.size();
      const auto n2 = static_cast<std::uint64_t>(std::count(route.begin(), route.end(), true));
      EXPECT_EQ(counter.formula_total(), skip_flops({model_cfg, n, n, n2}).total());
    }
  }
}
