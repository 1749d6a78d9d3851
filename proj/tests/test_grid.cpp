#include <gtest/gtest.h>

#include "msret/errors.hpp"
#include "msret/grid.hpp"
#include "msret/synthetic.hpp"
#include "support/test_support.hpp"

using namespace msret;

namespace {

std::filesystem::path planted(const msret::testing::TempDir& dir) {
  synthetic::PlantedOptions opt;
  opt.channels = 16;
  synthetic::write_planted_dataset(dir.path(), opt);
  return dir / "manifest.json";
}

}  // namespace

TEST(GridFactors, Defaults) {
  const auto s = settings_from_factors({});
  EXPECT_EQ(s.layer, "conv5_4");
  EXPECT_EQ(s.pyramid, PyramidConfig::with_scales(1));
  EXPECT_EQ(s.whiten_source, "none");
  EXPECT_FALSE(s.keep_dims.has_value());
  EXPECT_FALSE(s.exclude_query_image);
}

TEST(GridFactors, PresetSeedsAndFactorsOverride) {
  auto s = settings_from_factors({{"preset", "c8"}, {"pooling", "sum"}});
  EXPECT_EQ(s.pyramid.grids, (std::vector<std::uint32_t>{1, 2, 3, 6}));
  EXPECT_EQ(s.pyramid.overlap_levels, (std::set<int>{2, 3}));
  EXPECT_EQ(s.pyramid.pooling, Pooling::sum);

  s = settings_from_factors({{"preset", "c8"}, {"version", "v1"}});
  EXPECT_EQ(s.pyramid.grids, (std::vector<std::uint32_t>{1, 2, 3, 4}));
  EXPECT_TRUE(s.pyramid.overlap_levels.empty());

  s = settings_from_factors({{"scales", "4"}, {"overlap", "s2,s3"}, {"weighted", "true"}});
  EXPECT_EQ(s.pyramid.version, GridVersion::v3);
  EXPECT_TRUE(s.pyramid.weighted);

  s = settings_from_factors({{"whiten_source", "self"}, {"keep_dims", "16"}, {"exclude_query", "1"}});
  EXPECT_EQ(s.keep_dims, 16u);
  EXPECT_TRUE(s.exclude_query_image);
}

TEST(GridFactors, BadValues) {
  EXPECT_THROW(settings_from_factors({{"colour", "red"}}), UsageError);
  EXPECT_THROW(settings_from_factors({{"scales", "four"}}), UsageError);
  EXPECT_THROW(settings_from_factors({{"version", "v9"}}), UsageError);
  EXPECT_THROW(settings_from_factors({{"scales", "3"}, {"version", "v1"}}), UsageError);
  EXPECT_THROW(settings_from_factors({{"scales", "2"}, {"overlap", "s2"}}), ValidationError);
  EXPECT_THROW(settings_from_factors({{"keep_dims", "0"}}), UsageError);
  EXPECT_THROW(settings_from_factors({{"weighted", "maybe"}}), UsageError);
}

TEST(GridSpec, CellOrderFollowsFactorOrder) {
  GridSpec spec;
  spec.add_axis("norm", {"l2", "l1"});
  spec.add_axis("pooling", {"max", "sum", "max"});
  ASSERT_EQ(spec.axes[0].first, "pooling");
  ASSERT_EQ(spec.cell_count(), 6u);
  EXPECT_EQ(spec.cell(0), (FactorValues{{"pooling", "max"}, {"norm", "l2"}}));
  EXPECT_EQ(spec.cell(1), (FactorValues{{"pooling", "max"}, {"norm", "l1"}}));
  EXPECT_EQ(spec.cell(2), (FactorValues{{"pooling", "sum"}, {"norm", "l2"}}));
  EXPECT_THROW(spec.add_axis("pooling", {}), UsageError);
  EXPECT_THROW(spec.add_axis("bogus", {"x"}), UsageError);
  EXPECT_EQ(GridSpec{}.cell_count(), 1u);
}

TEST(GridSpec, FromJson) {
  const auto spec = GridSpec::from_json(
      nlohmann::json::parse(R"({"dataset": "m.json", "output": "out",
        "base": {"exclude_query": true},
        "axes": {"scales": [1, 2], "pooling": ["max"]}})"),
      "/data");
  EXPECT_EQ(spec.dataset, std::filesystem::path("/data/m.json"));
  EXPECT_EQ(spec.base.at("exclude_query"), "true");
  ASSERT_EQ(spec.axes.size(), 2u);
  EXPECT_EQ(spec.axes[1].second, (std::vector<std::string>{"1", "2"}));
  EXPECT_THROW(GridSpec::from_json(nlohmann::json::parse(R"({"axes": {"x": [1]}})")),
               ValidationError);
}

TEST(Pipeline, PlantedPairsAreFoundWithExclusion) {
  msret::testing::TempDir dir;
  const auto manifest = planted(dir);
  PipelineCache cache;
  PipelineSettings s;
  s.pyramid = PyramidConfig::proposed();
  s.exclude_query_image = true;
  EXPECT_DOUBLE_EQ(run_pipeline(manifest, s, cache).aggregate, 1.0);
  // Without exclusion the query image ranks first and the partner second.
  s.exclude_query_image = false;
  EXPECT_DOUBLE_EQ(run_pipeline(manifest, s, cache).aggregate, 0.25);
  s.keep_dims = 4;
  EXPECT_THROW(run_pipeline(manifest, s, cache), UsageError);
}

TEST(Grid, RunsEveryCellAndKeepsErrors) {
  msret::testing::TempDir dir;
  GridSpec spec;
  spec.dataset = planted(dir);
  spec.base["exclude_query"] = "true";
  spec.add_axis("pooling", {"max", "sum"});
  spec.add_axis("keep_dims", {"all", "4"});
  const auto result = run_grid(spec, 2);
  ASSERT_EQ(result.cells.size(), 4u);
  EXPECT_FALSE(result.ok());
  for (const auto& c : result.cells) {
    if (c.factors.at("keep_dims") == "all") {
      ASSERT_TRUE(c.ok()) << c.error;
      EXPECT_DOUBLE_EQ(c.report->aggregate, 1.0);
    } else {
      EXPECT_FALSE(c.ok());
      EXPECT_NE(c.error.find("keep_dims"), std::string::npos);
    }
  }
  write_grid_outputs(result, dir / "out");
  const auto table = detail::read_file(dir / "out" / "grid.txt");
  EXPECT_NE(table.find("ERROR"), std::string::npos);
  const auto doc = nlohmann::json::parse(detail::read_file(dir / "out" / "grid.json"));
  EXPECT_EQ(doc["cells"].size(), 4u);
  EXPECT_EQ(doc["ok"], false);
}
