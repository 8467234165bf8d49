#include <gtest/gtest.h>

#include "ham/all.hpp"

using namespace ham;

TEST(Config, DefaultsMatchDeskSetting) {
  const ExperimentConfig c;
  EXPECT_EQ(c.rank, 16u);
  EXPECT_EQ(c.keep_fraction, 0.6);
  EXPECT_EQ(c.g_max, 2u);
  EXPECT_EQ(c.train.optimizer.lr, 1e-3);
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_EQ(c.train.epochs, 20u);
  EXPECT_EQ(c.stream.num_tasks, 20u);
  EXPECT_EQ(c.stream.classes_per_task, 2u);
  EXPECT_EQ(c.backbone.input_dim, 32u);
  EXPECT_EQ(c.backbone.hidden_dim, 64u);
  EXPECT_EQ(c.effective_stream().super_clusters, 2u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesKeysCommentsAndGrid) {
  const auto p = parse_config_string(
      "# comment\n"
      "strategy = per_task_merge   # trailing\n"
      "merge=ties\n"
      "keep_fraction = 0.4\n"
      "\n"
      "grid.g_max = 1, 2, 4\n"
      "grid.grouping = similarity, orthogonality\n");
  EXPECT_EQ(p.config.strategy, Strategy::per_task_merge);
  EXPECT_EQ(p.config.merge, MergeAlgorithm::ties);
  EXPECT_EQ(p.config.keep_fraction, 0.4);
  ASSERT_EQ(p.grid.size(), 2u);
  EXPECT_EQ(p.grid[0].first, "g_max");
  EXPECT_EQ(p.grid[0].second, (std::vector<std::string>{"1", "2", "4"}));
  const auto points = expand_grid(p);
  ASSERT_EQ(points.size(), 6u);
  EXPECT_EQ(points[0].config.g_max, 1u);
  EXPECT_EQ(points[1].config.grouping, GroupingRule::orthogonality);
  EXPECT_EQ(points[5].config.g_max, 4u);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config_string("nonsense\n"), ConfigError);
  EXPECT_THROW(parse_config_string("unknown_key = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_string("rank = two\n"), ConfigError);
  EXPECT_THROW(parse_config_string("rank = -3\n"), ConfigError);
  EXPECT_THROW(parse_config_string("strategy = magic\n"), ConfigError);
  EXPECT_THROW(parse_config_string("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config_string("grid.rank = 4, 8\n"), ConfigError);
  EXPECT_THROW(parse_config_string("grid.g_max = \n"), ConfigError);
  EXPECT_THROW(parse_config_string("grid.g_max = 1, x\n"), ConfigError);
  try {
    parse_config_string("seed = 1\n\nlr = fast\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Config, EmptyGridIsRejectedForSweep) {
  const auto p = parse_config_string("seed = 3\n");
  EXPECT_THROW(expand_grid(p), ConfigError);
}

TEST(Config, ValidationCatchesOutOfRange) {
  auto bad = [](const char* text) {
    auto p = parse_config_string(text);
    EXPECT_THROW(p.config.validate(), ConfigError) << text;
  };
  bad("keep_fraction = 0\n");
  bad("keep_fraction = 1.2\n");
  bad("g_max = 0\n");
  bad("tau_sim = 1.5\n");
  bad("rank = 0\n");
  bad("rank = 40\n");
  bad("num_tasks = 0\n");
  bad("classes_per_task = 0\n");
  bad("separation = -1\n");
  bad("dare_drop = 1\n");
  bad("ties_trim = 0\n");
  bad("batch_size = 0\n");
  bad("epochs = 0\n");
  bad("lr = -0.1\n");
  bad("beta1 = 1\n");
  bad("eps = 0\n");
  bad("adapter_init_std = 0\n");
  bad("cluster_share = 2\n");
  bad("output_dir = \n");
  // grid values are validated per point before any run
  const auto p = parse_config_string("grid.keep_fraction = 0.5, 0\n");
  EXPECT_THROW(expand_grid(p), ConfigError);
}
