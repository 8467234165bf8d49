#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "ham/all.hpp"

using namespace ham;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(Strategy s = Strategy::ham) {
  ExperimentConfig c;
  c.stream.num_tasks = 5;
  c.stream.train_per_class = 30;
  c.stream.test_per_class = 20;
  c.backbone.hidden_dim = 16;
  c.backbone.input_dim = 12;
  c.rank = 4;
  c.train.epochs = 3;
  c.train.batch_size = 16;
  c.strategy = s;
  c.seed = 11;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ham_experiment_" + name);
  fs::remove_all(p);
  return p;
}

std::string csv_of(const ExperimentResult& r) {
  std::ostringstream out;
  r.accuracy.write_csv(out);
  return out.str();
}

}  // namespace

TEST(Experiment, EveryStrategyFillsTheMatrix) {
  for (auto s : {Strategy::ham, Strategy::naive_ft, Strategy::per_task_merge}) {
    const auto r = run_experiment(small_config(s));
    for (std::size_t t = 0; t < 5; ++t) EXPECT_TRUE(r.accuracy.row_complete(t));
    EXPECT_GE(r.average_accuracy, 0.0);
    EXPECT_LE(r.average_accuracy, 1.0);
    ASSERT_TRUE(r.forgetting.has_value());
    EXPECT_EQ(r.backbone_fingerprint_before, r.backbone_fingerprint_after);
  }
}

TEST(Experiment, Deterministic) {
  const auto a = run_experiment(small_config());
  const auto b = run_experiment(small_config());
  EXPECT_EQ(csv_of(a), csv_of(b));
  EXPECT_EQ(encode_adapter(make_record(a.merged)), encode_adapter(make_record(b.merged)));
  EXPECT_EQ(a.log, b.log);
  auto other = small_config();
  other.seed = 12;
  EXPECT_NE(csv_of(run_experiment(other)), csv_of(a));
}

TEST(Experiment, SingleGroupCapCollectsEveryTask) {
  auto c = small_config();
  c.g_max = 1;
  const auto r = run_experiment(c);
  ASSERT_EQ(r.groups.size(), 1u);
  EXPECT_EQ(r.groups[0].member_count, 5u);
  EXPECT_EQ(r.groups[0].member_task_ids, (std::vector<std::uint32_t>{0, 1, 2, 3, 4}));
  for (auto rank : r.merged_rank) EXPECT_EQ(rank, 5u * c.rank);
}

TEST(Experiment, GroupCapBookkeeping) {
  for (std::size_t gmax : {1u, 2u, 4u}) {
    auto c = small_config();
    c.g_max = gmax;
    const auto r = run_experiment(c);
    EXPECT_LE(r.groups.size(), gmax);
    std::size_t members = 0;
    for (const auto& g : r.groups) members += g.member_count;
    EXPECT_EQ(members, 5u);
    for (auto rank : r.merged_rank) EXPECT_EQ(rank, members * c.rank);
  }
}

TEST(Experiment, PruningReducesStoredParameters) {
  auto c = small_config();
  c.keep_fraction = 0.5;
  const auto r = run_experiment(c);
  EXPECT_EQ(r.dense_parameters, 5u * c.rank * (16 + 12 + 16 + 16));
  EXPECT_LE(r.nonzero_parameters, r.dense_parameters / 2);
}

TEST(Experiment, NonHamMergeOfGroupsRuns) {
  for (auto m : {MergeAlgorithm::linear, MergeAlgorithm::ties, MergeAlgorithm::dare_ties}) {
    auto c = small_config();
    c.merge = m;
    const auto r = run_experiment(c);
    EXPECT_TRUE(r.accuracy.row_complete(4));
  }
}

TEST(Experiment, OutputsWritten) {
  const auto dir = fresh_dir("outputs");
  const auto r = run_experiment(small_config());
  write_outputs(r, dir);
  for (const char* f : {"accuracy_matrix.csv", "summary.json", "train.log", "merged.hama", "group_0.hama"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(read_file(dir / "accuracy_matrix.csv"), csv_of(r));
  const auto summary = nlohmann::json::parse(read_file(dir / "summary.json"));
  EXPECT_DOUBLE_EQ(summary["average_accuracy"].get<double>(), r.average_accuracy);
  const auto merged = load_adapter(dir / "merged.hama");
  EXPECT_EQ(merged.kind, AdapterKind::merged);
  fs::remove_all(dir);
}

TEST(Experiment, OutputDirEnvironmentOverride) {
  ExperimentConfig c;
  c.output_dir = "from_config";
  ::unsetenv("HAM_OUTPUT_DIR");
  EXPECT_EQ(resolve_output_dir(c), "from_config");
  ::setenv("HAM_OUTPUT_DIR", "/tmp/from_env", 1);
  EXPECT_EQ(resolve_output_dir(c), "/tmp/from_env");
  ::unsetenv("HAM_OUTPUT_DIR");
}

TEST(Sweep, SingletonGridEqualsRun) {
  const auto dir = fresh_dir("sweep1");
  ParsedConfig p;
  p.config = small_config();
  p.grid.emplace_back("seed", std::vector<std::string>{"11"});
  const auto out = run_sweep(p, dir);
  EXPECT_EQ(out.failures, 0u);
  const auto r = run_experiment(small_config());
  EXPECT_EQ(read_file(dir / "point_000" / "accuracy_matrix.csv"), csv_of(r));
  EXPECT_EQ(read_file(dir / "point_000" / "merged.hama"), encode_adapter(make_record(r.merged)));
  EXPECT_NE(out.csv.find("point_000,11,"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Sweep, GridPointsAndFailuresRecorded) {
  const auto dir = fresh_dir("sweep2");
  ParsedConfig p;
  p.config = small_config();
  p.grid.emplace_back("g_max", std::vector<std::string>{"1", "2"});
  p.grid.emplace_back("keep_fraction", std::vector<std::string>{"0.3", "0.6"});
  const auto out = run_sweep(p, dir);
  EXPECT_EQ(out.failures, 0u);
  EXPECT_TRUE(fs::exists(dir / "point_003" / "summary.json"));
  std::istringstream lines(read_file(dir / "sweep.csv"));
  std::string header;
  std::getline(lines, header);
  EXPECT_EQ(header, "point,g_max,keep_fraction,average_accuracy,forgetting_measure,groups,nonzero_parameters,status");
  std::size_t rows = 0;
  for (std::string l; std::getline(lines, l);) ++rows;
  EXPECT_EQ(rows, 4u);

  // A grid point whose stream cannot feed training fails without stopping the sweep.
  ParsedConfig failing;
  failing.config = small_config();
  failing.config.stream.train_per_class = 1;
  failing.config.train.epochs = 1;
  failing.config.train.optimizer.lr = 1e300;
  failing.grid.emplace_back("seed", std::vector<std::string>{"1", "2"});
  const auto f = run_sweep(failing, dir / "f");
  EXPECT_EQ(f.failures, 2u);
  EXPECT_NE(f.csv.find("error:"), std::string::npos);
  fs::remove_all(dir);
}
