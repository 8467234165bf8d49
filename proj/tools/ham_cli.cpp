// Command-line driver: run, sweep, inspect, merge, export-stream.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ham/all.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;

ham::ParsedConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ham::ConfigError("cannot open config file " + path);
  return ham::parse_config(in);
}

int cmd_run(const std::string& config_path, const std::string& output_override) {
  ham::ParsedConfig parsed;
  try {
    parsed = load_config(config_path);
    if (!parsed.grid.empty()) throw ham::ConfigError("grid.* keys are only valid for 'sweep'");
    parsed.config.validate();
  } catch (const ham::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const std::string dir = output_override.empty() ? ham::resolve_output_dir(parsed.config) : output_override;
  try {
    const auto result = ham::run_experiment(parsed.config);
    ham::write_outputs(result, dir);
    std::printf("strategy %s  AA %.4f", ham::to_string(parsed.config.strategy), result.average_accuracy);
    if (result.forgetting) std::printf("  FM %.4f", *result.forgetting);
    std::printf("  nonzero params %zu\n", result.nonzero_parameters);
    for (const auto& g : result.groups) {
      std::printf("  group %u: %zu members, rank %zu, alpha %.4f\n", g.group_id, g.member_count, g.rank,
                  g.alpha);
    }
    std::printf("outputs written to %s\n", dir.c_str());
  } catch (const ham::TrainingError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kExitTraining;
  } catch (const ham::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& output_override) {
  ham::ParsedConfig parsed;
  try {
    parsed = load_config(config_path);
    ham::expand_grid(parsed);
  } catch (const ham::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const std::string dir = output_override.empty() ? ham::resolve_output_dir(parsed.config) : output_override;
  const auto outcome = ham::run_sweep(parsed, dir, &std::cout);
  std::cout << "sweep summary written to " << (std::filesystem::path(dir) / "sweep.csv").string() << '\n';
  if (outcome.failures > 0) {
    std::cerr << outcome.failures << " grid point(s) failed\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_inspect(const std::string& path) {
  const auto rec = ham::load_adapter(path);
  std::printf("kind %s  alpha %.9g  layers %zu\n", ham::to_string(rec.kind), rec.alpha, rec.layers.size());
  std::size_t total = 0;
  for (std::size_t l = 0; l < rec.layers.size(); ++l) {
    const auto& layer = rec.layers[l];
    const std::size_t nz = ham::count_nonzero(layer.B) + ham::count_nonzero(layer.A);
    total += nz;
    std::printf("  layer %zu: d %zu  k %zu  r %zu  nonzero %zu / %zu\n", l, layer.out_dim(), layer.in_dim(),
                layer.rank(), nz, layer.B.size() + layer.A.size());
  }
  std::printf("  nonzero total %zu\n", total);
  switch (rec.kind) {
    case ham::AdapterKind::task:
      std::printf("  task %u\n", rec.id);
      break;
    case ham::AdapterKind::group:
      std::printf("  group %u  members %zu  tasks", rec.id, rec.member_count);
      for (auto id : rec.member_task_ids) std::printf(" %u", id);
      std::printf("\n");
      break;
    case ham::AdapterKind::merged:
      for (const auto& s : rec.sources) std::printf("  source %u alpha %.9g\n", s.id, s.alpha);
      break;
  }
  return kExitOk;
}

int cmd_merge(const std::vector<std::string>& files, const std::string& algo_name,
              const std::string& out_path, const ham::MergeParams& params) {
  ham::ExperimentConfig probe;
  ham::set_config_value(probe, "merge", algo_name);
  std::vector<ham::AdapterRecord> records;
  for (const auto& f : files) records.push_back(ham::load_adapter(f));

  ham::MergedDelta merged;
  const bool all_groups = std::ranges::all_of(records, [](const auto& r) { return r.kind == ham::AdapterKind::group; });
  if (probe.merge == ham::MergeAlgorithm::ham && all_groups) {
    ham::GroupRegistry registry(records.size(), 0.0);
    for (const auto& r : records) registry.groups.push_back(r.to_group());
    merged = ham::merge_ham(registry);
  } else {
    std::vector<std::vector<ham::Matrix>> sources;
    std::vector<ham::MergeSource> prov;
    for (const auto& r : records) {
      std::vector<ham::Matrix> layers;
      for (const auto& l : r.layers) layers.push_back(ham::scaled(ham::delta_weight(l), r.alpha));
      sources.push_back(std::move(layers));
      prov.push_back({r.id, r.alpha});
    }
    merged = ham::merge_dense(sources, std::move(prov), probe.merge, params);
  }
  ham::save_adapter(out_path, merged);
  std::printf("merged %zu adapter(s) with %s into %s (rank", records.size(), algo_name.c_str(), out_path.c_str());
  for (const auto& l : merged.layers) std::printf(" %zu", l.rank());
  std::printf(")\n");
  return kExitOk;
}

int cmd_export_stream(const std::string& config_path, const std::string& dir) {
  ham::ParsedConfig parsed;
  try {
    parsed = load_config(config_path);
    parsed.config.validate();
  } catch (const ham::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const auto stream = ham::generate_stream(parsed.config.effective_stream());
  std::ostringstream train;
  std::ostringstream test;
  for (const auto& t : stream) {
    ham::write_examples(train, t.train);
    ham::write_examples(test, t.test);
  }
  ham::write_file_atomic(std::filesystem::path(dir) / "stream_train.csv", train.str());
  ham::write_file_atomic(std::filesystem::path(dir) / "stream_test.csv", test.str());
  std::printf("exported %zu tasks to %s\n", stream.size(), dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical adapter merging for continual learning"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  auto* run = app.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("config", config_path, "Config file (key = value)")->required();
  run->add_option("-o,--output", output_dir, "Output directory (overrides config and HAM_OUTPUT_DIR)");

  auto* sweep = app.add_subcommand("sweep", "Run every point of the config's grid.* parameters");
  sweep->add_option("config", config_path, "Config file with grid.<key> = v1, v2, ...")->required();
  sweep->add_option("-o,--output", output_dir, "Output directory (overrides config and HAM_OUTPUT_DIR)");

  std::string adapter_path;
  auto* inspect = app.add_subcommand("inspect", "Print shapes, alpha and nonzero counts of an adapter file");
  inspect->add_option("adapter", adapter_path, "Adapter file")->required()->check(CLI::ExistingFile);

  std::vector<std::string> merge_files;
  std::string algo = "ham";
  std::string merge_out = "merged.hama";
  ham::MergeParams params;
  auto* merge = app.add_subcommand("merge", "Merge serialized adapters");
  merge->add_option("adapters", merge_files, "Adapter files")->required()->check(CLI::ExistingFile);
  merge->add_option("--algo", algo, "ham | linear | ties | dare_ties")->capture_default_str();
  merge->add_option("-o,--output", merge_out, "Merged adapter file")->capture_default_str();
  merge->add_option("--trim", params.ties_trim, "TIES keep fraction")->capture_default_str();
  merge->add_option("--lambda", params.ties_lambda, "TIES scaling")->capture_default_str();
  merge->add_option("--drop", params.dare_drop, "DARE drop probability")->capture_default_str();
  merge->add_option("--seed", params.seed, "DARE mask seed")->capture_default_str();

  std::string export_dir;
  auto* exp = app.add_subcommand("export-stream", "Write the configured task stream as CSV");
  exp->add_option("config", config_path, "Config file")->required();
  exp->add_option("dir", export_dir, "Destination directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, output_dir);
    if (*sweep) return cmd_sweep(config_path, output_dir);
    if (*inspect) return cmd_inspect(adapter_path);
    if (*merge) return cmd_merge(merge_files, algo, merge_out, params);
    if (*exp) return cmd_export_stream(config_path, export_dir);
  } catch (const ham::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ham::TrainingError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kExitTraining;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
