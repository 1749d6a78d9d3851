#include <gtest/gtest.h>

#include <fstream>

#include "msret/errors.hpp"
#include "msret/manifest.hpp"
#include "support/test_support.hpp"

using namespace msret;
using nlohmann::json;
using msret::testing::TempDir;

namespace {

json two_image_manifest() {
  return json::parse(R"({
    "protocol": "oxford_map",
    "images": [
      {"id": "a", "layers": {"conv5_4": "feat/a.fmap"}},
      {"id": "b", "layers": {"conv5_4": "feat/b.fmap"}}
    ],
    "queries": [
      {"id": "q1", "image": "a", "bbox": [1, 2, 30, 40], "good": ["b"], "ok": [], "junk": []}
    ]
  })");
}

bool mentions(const ValidationError& e, const std::string& needle) {
  for (const auto& p : e.problems()) {
    if (p.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST(Manifest, ParsesHappyPath) {
  const auto m = parse_manifest(two_image_manifest(), "/data");
  EXPECT_EQ(m.protocol, Protocol::oxford_map);
  ASSERT_EQ(m.images.size(), 2u);
  ASSERT_EQ(m.queries.size(), 1u);
  EXPECT_EQ(m.queries[0].bbox, (BoundingBox{1, 2, 30, 40}));
  EXPECT_EQ(m.feature_path(m.images[1], "conv5_4"), std::filesystem::path("/data/feat/b.fmap"));
  EXPECT_FALSE(m.feature_path(m.images[1], "fc6-conv").has_value());
  EXPECT_EQ(m.database_ids(), (std::vector<std::string>{"a", "b"}));
}

TEST(Manifest, ReadFromFileResolvesRelativePaths) {
  TempDir dir;
  std::ofstream(dir / "m.json") << two_image_manifest().dump();
  const auto m = read_manifest(dir / "m.json");
  EXPECT_EQ(*m.feature_path(m.images[0], "conv5_4"), dir.path() / "feat/a.fmap");
}

TEST(Manifest, UnknownImageIsNamed) {
  auto doc = two_image_manifest();
  doc["queries"][0]["good"] = {"x"};
  try {
    parse_manifest(doc);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_TRUE(mentions(e, "'x'"));
  }
}

TEST(Manifest, DisjointnessViolated) {
  auto doc = two_image_manifest();
  doc["queries"][0]["junk"] = {"b"};
  try {
    parse_manifest(doc);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_TRUE(mentions(e, "disjointness violated"));
  }
}

TEST(Manifest, ReportsEveryViolation) {
  auto doc = two_image_manifest();
  doc["protocol"] = "trecvid";
  doc["images"].push_back({{"id", "a"}});
  doc["queries"][0]["ok"] = {"b"};
  doc["queries"][0]["junk"] = {"ghost"};
  doc["queries"][0]["bbox"] = {5, 5, 1, 1};
  try {
    parse_manifest(doc);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_TRUE(mentions(e, "unknown protocol 'trecvid'"));
    EXPECT_TRUE(mentions(e, "duplicate image id 'a'"));
    EXPECT_TRUE(mentions(e, "disjointness violated"));
    EXPECT_TRUE(mentions(e, "'ghost'"));
    EXPECT_TRUE(mentions(e, "bbox"));
    EXPECT_EQ(e.problems().size(), 5u);
  }
}

TEST(Manifest, ExternalQueryImage) {
  auto doc = two_image_manifest();
  doc["images"].push_back({{"id", "crop:q1"}, {"external", true}, {"layers", {{"conv5_4", "c.fmap"}}}});
  doc["queries"][0]["image"] = "crop:q1";
  const auto m = parse_manifest(doc);
  EXPECT_EQ(m.database_ids(), (std::vector<std::string>{"a", "b"}));
}

TEST(Manifest, UkbGroupsSynthesizeQueries) {
  json doc = {{"protocol", "ukb_top4"}, {"images", json::array()}};
  for (int i = 0; i < 8; ++i) {
    doc["images"].push_back({{"id", "u" + std::to_string(i)}, {"group", "g" + std::to_string(i / 4)}});
  }
  const auto m = parse_manifest(doc);
  ASSERT_EQ(m.queries.size(), 8u);
  EXPECT_EQ(m.queries[5].image_id, "u5");
  EXPECT_EQ(m.queries[5].good, (std::vector<std::string>{"u4", "u5", "u6", "u7"}));
}

TEST(Manifest, JsonRoundTrip) {
  const auto m = parse_manifest(two_image_manifest());
  const auto again = parse_manifest(manifest_to_json(m));
  EXPECT_EQ(again.queries, m.queries);
  EXPECT_EQ(again.images.size(), m.images.size());
}

TEST(OxfordImport, ReadsGroundTruthFiles) {
  TempDir dir;
  std::ofstream(dir / "all_souls_1_query.txt") << "oxc1_all_souls_000013 136.5 34.1 648.5 955.7\n";
  std::ofstream(dir / "all_souls_1_good.txt") << "all_souls_000013\nall_souls_000026\n";
  std::ofstream(dir / "all_souls_1_ok.txt") << "oxford_003410\n";
  std::ofstream(dir / "all_souls_1_junk.txt") << "all_souls_000027\n";
  std::ofstream(dir / "ashmolean_1_query.txt") << "oxc1_ashmolean_000058 0 0 10 10\n";
  std::ofstream(dir / "ashmolean_1_good.txt") << "ashmolean_000058\n";
  std::ofstream(dir / "ashmolean_1_ok.txt") << "";
  std::ofstream(dir / "ashmolean_1_junk.txt") << "";

  const auto qs = import_oxford_ground_truth(dir.path());
  ASSERT_EQ(qs.size(), 2u);
  EXPECT_EQ(qs[0].query_id, "all_souls_1");
  EXPECT_EQ(qs[0].image_id, "all_souls_000013");
  EXPECT_EQ(qs[0].bbox, (BoundingBox{136.5, 34.1, 648.5, 955.7}));
  EXPECT_EQ(qs[0].good, (std::vector<std::string>{"all_souls_000013", "all_souls_000026"}));
  EXPECT_EQ(qs[0].ok, (std::vector<std::string>{"oxford_003410"}));
  EXPECT_EQ(qs[0].junk, (std::vector<std::string>{"all_souls_000027"}));
  EXPECT_TRUE(qs[1].ok.empty());

  OxfordManifestOptions opts;
  opts.feature_dirs["conv5_4"] = "/feat/conv5_4";
  opts.crop_dirs["conv5_4"] = "/feat/crop";
  opts.image_ids = {"all_souls_000013", "all_souls_000026", "all_souls_000027", "ashmolean_000058",
                    "oxford_003410"};
  const auto m = build_oxford_manifest(qs, opts);
  EXPECT_EQ(m.images.size(), 7u);
  EXPECT_EQ(m.queries[0].image_id, "crop:all_souls_1");
  EXPECT_EQ(*m.feature_path(*m.find_image("crop:all_souls_1"), "conv5_4"),
            std::filesystem::path("/feat/crop/all_souls_1.fmap"));
  EXPECT_EQ(m.database_ids().size(), 5u);
}

TEST(OxfordImport, MissingListFileIsReported) {
  TempDir dir;
  std::ofstream(dir / "x_1_query.txt") << "oxc1_a 0 0 1 1\n";
  EXPECT_THROW(import_oxford_ground_truth(dir.path()), ValidationError);
}
