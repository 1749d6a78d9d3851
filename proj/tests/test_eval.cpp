#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "msret/errors.hpp"
#include "msret/eval.hpp"
#include "msret/log.hpp"
#include "support/test_support.hpp"

using namespace msret;

namespace {

QueryGroundTruth gt(std::vector<std::string> good, std::vector<std::string> ok = {},
                    std::vector<std::string> junk = {}) {
  QueryGroundTruth q;
  q.query_id = "q";
  q.image_id = "img";
  q.good = std::move(good);
  q.ok = std::move(ok);
  q.junk = std::move(junk);
  return q;
}

}  // namespace

TEST(AveragePrecision, WorkedExamples) {
  EXPECT_DOUBLE_EQ(average_precision({"a", "b"}, gt({"a", "b"})), 1.0);
  EXPECT_DOUBLE_EQ(average_precision({"j", "a"}, gt({"a"}, {}, {"j"})), 1.0);
  EXPECT_NEAR(average_precision({"a", "n", "b"}, gt({"a"}, {"b"})), 0.79167, 1e-5);
  EXPECT_DOUBLE_EQ(average_precision({"n", "m"}, gt({"a"})), 0.0);
}

TEST(AveragePrecision, MatchesOracle) {
  std::mt19937_64 rng(99);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 5 + rng() % 60;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("i" + std::to_string(i));
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<std::string> good, ok, junk;
    for (const auto& id : ids) {
      const auto r = rng() % 10;
      if (r == 0) good.push_back(id);
      else if (r == 1) ok.push_back(id);
      else if (r == 2) junk.push_back(id);
    }
    if (good.empty() && ok.empty()) good.push_back(ids.front());
    // Some positives may be missing from the ranking entirely.
    std::vector<std::string> ranked(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n - rng() % 3));
    const auto q = gt(good, ok, junk);
    ASSERT_NEAR(average_precision(ranked, q), msret::testing::ap_oracle(ranked, q), 1e-9);
  }
}

TEST(AveragePrecision, JunkInsertionIsInvariant) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::string> ranked;
    std::vector<std::string> good;
    for (int i = 0; i < 20; ++i) {
      ranked.push_back("i" + std::to_string(i));
      if (rng() % 4 == 0) good.push_back(ranked.back());
    }
    if (good.empty()) good.push_back("i7");
    std::shuffle(ranked.begin(), ranked.end(), rng);
    const double base = average_precision(ranked, gt(good));
    auto with_junk = ranked;
    std::vector<std::string> junk;
    for (int j = 0; j < 5; ++j) {
      junk.push_back("junk" + std::to_string(j));
      with_junk.insert(with_junk.begin() + static_cast<std::ptrdiff_t>(rng() % (with_junk.size() + 1)),
                       junk.back());
    }
    ASSERT_DOUBLE_EQ(average_precision(with_junk, gt(good, {}, junk)), base);
  }
}

TEST(AveragePrecision, Errors) {
  EXPECT_THROW(average_precision({"a"}, gt({})), DegenerateInputError);
  EXPECT_THROW(average_precision({"a", "a"}, gt({"a"})), ValidationError);
}

TEST(MeanAveragePrecision, AveragesAndIgnoresQueryOrder) {
  DatasetManifest m;
  for (const char* id : {"a", "b", "c", "d"}) m.images.push_back({id, {}, false, {}});
  m.queries.push_back({"q1", "a", std::nullopt, {"b"}, {}, {}});
  m.queries.push_back({"q2", "a", std::nullopt, {"c"}, {}, {}});
  const QueryResults results{{"q1", {"b", "c", "d"}}, {"q2", {"b", "c", "d"}}};
  const auto report = mean_average_precision(results, m);
  // q1 hits at rank 1 (AP 1); q2 at rank 2 (AP (0 + 1/2) / 2).
  EXPECT_DOUBLE_EQ(report.aggregate, 0.625);
  ASSERT_EQ(report.per_query.size(), 2u);
  EXPECT_EQ(report.per_query[0].first, "q1");
  EXPECT_DOUBLE_EQ(report.per_query[1].second, 0.25);

  std::reverse(m.queries.begin(), m.queries.end());
  EXPECT_DOUBLE_EQ(mean_average_precision(results, m).aggregate, 0.625);
  EXPECT_EQ(report.to_json()["metric"], "mAP");

  m.queries.push_back({"q3", "a", std::nullopt, {"b"}, {}, {}});
  EXPECT_THROW(mean_average_precision(results, m), ValidationError);
}

TEST(Ukb, CountsSameObjectInTopFour) {
  nlohmann::json doc = {{"protocol", "ukb_top4"}, {"images", nlohmann::json::array()}};
  for (int i = 0; i < 12; ++i) {
    doc["images"].push_back({{"id", "u" + std::to_string(i)}, {"group", "g" + std::to_string(i / 4)}});
  }
  const auto m = parse_manifest(doc);
  QueryResults perfect, partial;
  for (const auto& q : m.queries) {
    const int g = std::stoi(q.image_id.substr(1)) / 4;
    std::vector<std::string> ranked;
    for (int i = 0; i < 4; ++i) ranked.push_back("u" + std::to_string(4 * g + i));
    for (int i = 0; i < 12; ++i) {
      if (i / 4 != g) ranked.push_back("u" + std::to_string(i));
    }
    perfect[q.query_id] = ranked;
    std::swap(ranked[1], ranked[6]);
    partial[q.query_id] = ranked;
  }
  const auto best = evaluate(perfect, m);
  EXPECT_EQ(best.metric_name(), "top4");
  EXPECT_DOUBLE_EQ(best.aggregate, 4.0);
  EXPECT_DOUBLE_EQ(evaluate(partial, m).aggregate, 3.0);
  for (const auto& [_, v] : evaluate(partial, m).per_query) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 4.0);
  }
}

TEST(Ukb, WarnsOnOddGroups) {
  DatasetManifest m;
  m.protocol = Protocol::ukb_top4;
  for (const char* id : {"a", "b"}) m.images.push_back({id, {}, false, {}});
  m.queries.push_back({"qa", "a", std::nullopt, {"b"}, {}, {}});
  std::vector<std::string> warnings;
  log::set_sink([&](log::Level lvl, const std::string& msg) {
    if (lvl == log::Level::warning) warnings.push_back(msg);
  });
  const auto r = evaluate({{"qa", {"a", "b"}}}, m);
  log::set_sink({});
  EXPECT_DOUBLE_EQ(r.aggregate, 2.0);
  EXPECT_EQ(warnings.size(), 1u);
}
