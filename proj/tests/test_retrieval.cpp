#include <gtest/gtest.h>

#include <random>

#include "msret/errors.hpp"
#include "msret/retrieval.hpp"
#include "support/test_support.hpp"

using namespace msret;

namespace {

using Entries = std::vector<std::pair<std::string, std::vector<float>>>;

Entries random_entries(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  Entries out;
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back("id" + std::to_string(i), normalize_l2(msret::testing::random_vector(rng, d, -1, 1)));
  }
  return out;
}

}  // namespace

TEST(Index, SizeAndRenormalization) {
  const auto idx = build_index("x", Entries{{"a", {0.3f, 0.4f}}, {"b", {1.0f, 0.0f}}});
  EXPECT_EQ(idx.size(), 2u);
  EXPECT_EQ(idx.dim(), 2u);
  const auto row = idx.row(*idx.find("a"));
  EXPECT_FLOAT_EQ(row[0], 0.6f);
  EXPECT_FLOAT_EQ(row[1], 0.8f);
}

TEST(Index, DuplicateIdIsNamed) {
  try {
    build_index("x", Entries{{"a", {1.0f, 0.0f}}, {"a", {0.0f, 1.0f}}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos);
  }
}

TEST(Index, ZeroVectorIsNamed) {
  try {
    build_index("x", Entries{{"a", {1.0f, 0.0f}}, {"z", {0.0f, 0.0f}}});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("'z'"), std::string::npos);
  }
}

TEST(Similarity, Examples) {
  EXPECT_NEAR(similarity(std::vector<float>{0.6f, 0.8f}, std::vector<float>{0.8f, 0.6f}), 0.96,
              1e-6);
  EXPECT_NEAR(similarity(std::vector<float>{0.6f, 0.8f}, std::vector<float>{0.6f, 0.8f}), 1.0, 1e-6);
  EXPECT_EQ(similarity(std::vector<float>{1, 0}, std::vector<float>{0, 1}), 0.0);
  EXPECT_THROW(similarity(std::vector<float>{1, 0}, std::vector<float>{1}), DimensionMismatch);
}

TEST(Query, TiesBreakById) {
  const auto idx = build_index("x", Entries{{"c", {1, 0}}, {"a", {1, 0}}, {"b", {0, 1}}});
  const auto r = query(idx, std::vector<float>{1, 0});
  EXPECT_EQ(ranked_ids(r), (std::vector<std::string>{"a", "c", "b"}));
}

TEST(Query, MatchesRankingOracle) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 20; ++t) {
    const auto entries = random_entries(rng, 50, 16);
    const auto idx = build_index("x", entries);
    const auto q = normalize_l2(msret::testing::random_vector(rng, 16, -1, 1));
    std::vector<std::string> ids;
    std::vector<double> scores;
    for (const auto& [id, v] : entries) {
      ids.push_back(id);
      scores.push_back(similarity(idx.row(*idx.find(id)), q));
    }
    EXPECT_EQ(ranked_ids(query(idx, q)), msret::testing::ranking_oracle(ids, scores));
  }
}

TEST(Query, ExcludeDropsOnlyThatId) {
  const auto idx = build_index("x", Entries{{"a", {1, 0}}, {"b", {0.9f, 0.1f}}, {"c", {0, 1}}});
  const auto r = query(idx, std::vector<float>{1, 0}, "a");
  EXPECT_EQ(ranked_ids(r), (std::vector<std::string>{"b", "c"}));
  EXPECT_THROW(query(idx, std::vector<float>{1, 0, 0}), DimensionMismatch);
}

TEST(Ensemble, FusedScoreExample) {
  const auto spec = EnsembleSpec::parse("conv5_4:0.5,fc6:0.5");
  EXPECT_EQ(fuse_scores(std::vector<double>{0.8, 0.6}, spec), 0.7);
}

TEST(Ensemble, SingleMemberEqualsPlainQuery) {
  std::mt19937_64 rng(4);
  const auto idx = build_index("x", random_entries(rng, 30, 8));
  const auto q = normalize_l2(msret::testing::random_vector(rng, 8, -1, 1));
  std::map<std::string, Index> indexes{{"x", idx}};
  const auto fused = ensemble_query(indexes, {{"x", q}}, EnsembleSpec::parse("x:1"));
  EXPECT_EQ(fused, query(idx, q));
}

TEST(Ensemble, AgreeingLayersKeepTheRanking) {
  std::mt19937_64 rng(5);
  const auto entries = random_entries(rng, 30, 8);
  const auto q = normalize_l2(msret::testing::random_vector(rng, 8, -1, 1));
  std::map<std::string, Index> indexes{{"a", build_index("a", entries)},
                                       {"b", build_index("b", entries)}};
  const auto fused =
      ensemble_query(indexes, {{"a", q}, {"b", q}}, EnsembleSpec::parse("a:0.3,b:0.7"));
  EXPECT_EQ(ranked_ids(fused), ranked_ids(query(indexes.at("a"), q)));
}

TEST(Ensemble, ZeroWeightMemberIsIgnoredAndBoundsHold) {
  std::mt19937_64 rng(6);
  const auto ea = random_entries(rng, 40, 8);
  auto eb = random_entries(rng, 40, 12);
  std::shuffle(eb.begin(), eb.end(), rng);
  std::map<std::string, Index> indexes{{"a", build_index("a", ea)}, {"b", build_index("b", eb)}};
  const auto qa = normalize_l2(msret::testing::random_vector(rng, 8, -1, 1));
  const auto qb = normalize_l2(msret::testing::random_vector(rng, 12, -1, 1));
  const std::map<std::string, std::vector<float>> qs{{"a", qa}, {"b", qb}};

  EXPECT_EQ(ranked_ids(ensemble_query(indexes, qs, EnsembleSpec::parse("a:1,b:0"))),
            ranked_ids(query(indexes.at("a"), qa)));

  const auto fused = ensemble_query(indexes, qs, EnsembleSpec::parse("a:0.25,b:0.75"));
  for (const auto& hit : fused) {
    const double sa = similarity(indexes.at("a").row(*indexes.at("a").find(hit.id)), qa);
    const double sb = similarity(indexes.at("b").row(*indexes.at("b").find(hit.id)), qb);
    EXPECT_LE(hit.score, std::max(sa, sb) + 1e-12);
    EXPECT_GE(hit.score, std::min(sa, sb) - 1e-12);
  }
}

TEST(Ensemble, MismatchedIdSetsAreReported) {
  std::map<std::string, Index> indexes{
      {"a", build_index("a", Entries{{"x", {1, 0}}, {"y", {0, 1}}})},
      {"b", build_index("b", Entries{{"x", {1, 0}}, {"z", {0, 1}}})}};
  try {
    ensemble_query(indexes, {{"a", {1, 0}}, {"b", {1, 0}}}, EnsembleSpec::parse("a:0.5,b:0.5"));
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(" y"), std::string::npos);
    EXPECT_NE(msg.find(" z"), std::string::npos);
  }
  EXPECT_THROW(ensemble_query(indexes, {{"a", {1, 0}}}, EnsembleSpec::parse("a:0.5,b:0.5")),
               ValidationError);
}

TEST(EnsembleSpec, ParseErrors) {
  EXPECT_THROW(EnsembleSpec::parse("a:0.5,b:0.4"), UsageError);
  EXPECT_THROW(EnsembleSpec::parse("a:1.5,b:-0.5"), UsageError);
  EXPECT_THROW(EnsembleSpec::parse("a"), UsageError);
  EXPECT_THROW(EnsembleSpec::parse("a:x"), UsageError);
  EXPECT_THROW(EnsembleSpec::parse("a:0.5,a:0.5"), UsageError);
  EXPECT_THROW(EnsembleSpec::parse(""), UsageError);
  const auto spec = EnsembleSpec::parse("conv5_4:0.5,fc6-conv:0.5");
  ASSERT_EQ(spec.members.size(), 2u);
  EXPECT_EQ(spec.members[1].layer, "fc6-conv");
}
