#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ham/adapters.hpp"
#include "ham/backbone.hpp"
#include "ham/config.hpp"
#include "ham/consolidate.hpp"
#include "ham/merging.hpp"
#include "ham/metrics.hpp"
#include "ham/serialize.hpp"
#include "ham/tasks.hpp"
#include "ham/trainer.hpp"

namespace ham {

struct GroupSummary {
  std::uint32_t group_id = 0;
  std::vector<std::uint32_t> member_task_ids;
  std::size_t member_count = 0;
  double alpha = 0.0;
  std::size_t rank = 0;
  std::size_t nonzero_parameters = 0;
};

struct ExperimentResult {
  ExperimentConfig config;
  AccuracyMatrix accuracy;
  double average_accuracy = 0.0;
  std::optional<double> forgetting;
  std::vector<GroupSummary> groups;    // ham strategy only
  std::vector<std::uint32_t> assignments;  // group chosen per task (ham)
  std::size_t nonzero_parameters = 0;  // stored adapter parameters after the run
  std::size_t dense_parameters = 0;    // same adapters without pruning
  std::vector<std::size_t> merged_rank;  // per layer
  MergedDelta merged;
  std::vector<AdapterGroup> group_adapters;
  std::string log;
  std::uint64_t backbone_fingerprint_before = 0;
  std::uint64_t backbone_fingerprint_after = 0;
};

namespace detail {

inline MergedDelta merge_groups(const GroupRegistry& registry, const ExperimentConfig& cfg) {
  if (cfg.merge == MergeAlgorithm::ham) return merge_ham(registry);
  std::vector<std::vector<Matrix>> sources;
  std::vector<MergeSource> prov;
  for (const auto& g : registry.groups) {
    std::vector<Matrix> layers;
    for (const auto& l : g.layers) layers.push_back(scaled(delta_weight(l), g.alpha));
    sources.push_back(std::move(layers));
    prov.push_back({g.group_id, g.alpha});
  }
  return merge_dense(sources, std::move(prov), cfg.merge, cfg.merge_params);
}

inline MergedDelta merge_tasks(std::span<const TaskAdapter> adapters, const ExperimentConfig& cfg) {
  std::vector<std::vector<Matrix>> sources;
  std::vector<MergeSource> prov;
  for (const auto& a : adapters) {
    std::vector<Matrix> layers;
    for (const auto& l : a.layers) layers.push_back(scaled(delta_weight(l), a.alpha));
    sources.push_back(std::move(layers));
    prov.push_back({a.task_id, a.alpha});
  }
  return merge_dense(sources, std::move(prov), cfg.merge, cfg.merge_params);
}

inline MergedDelta as_merged(const TaskAdapter& a) {
  MergedDelta m;
  for (const auto& l : a.layers) m.layers.emplace_back(scaled(l.B, a.alpha), l.A);
  m.provenance.push_back({a.task_id, a.alpha});
  return m;
}

}  // namespace detail

/// Run one strategy over the configured stream. Accuracy rows are measured through
/// the merged model after every task.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       std::span<const TaskDataset> stream_override = {}) {
  cfg.validate();
  ExperimentResult res;
  res.config = cfg;
  std::vector<TaskDataset> generated;
  std::span<const TaskDataset> stream = stream_override;
  if (stream.empty()) {
    generated = generate_stream(cfg.effective_stream());
    stream = generated;
  }
  const std::size_t N = stream.size();
  res.accuracy = AccuracyMatrix(N);

  const Rng root(cfg.seed, Rng::hash_label("experiment"));
  BackboneShape shape = cfg.backbone;
  FrozenBackbone backbone(shape, root.fork("backbone"));
  res.backbone_fingerprint_before = backbone.frozen_fingerprint();
  const Rng adapter_rng = root.fork("adapter");
  const Rng shuffle_rng = root.fork("shuffle");

  std::ostringstream log;
  log.precision(6);
  log << std::fixed;
  GroupRegistry registry(cfg.g_max, cfg.tau_sim);
  const ConsolidationConfig ccfg{cfg.keep_fraction, cfg.grouping, cfg.similarity_scope};
  std::vector<TaskAdapter> finished;
  std::optional<TaskAdapter> shared;

  for (std::size_t t = 0; t < N; ++t) {
    const TaskDataset& ds = stream[t];
    std::uint32_t max_class = 0;
    for (auto c : ds.class_ids) max_class = std::max(max_class, c);
    if (max_class + 1 > backbone.num_classes()) backbone.expand_head(max_class + 1 - backbone.num_classes());

    TrainConfig tcfg = cfg.train;
    TaskAdapter start;
    GroupRegistry* groups = nullptr;
    switch (cfg.strategy) {
      case Strategy::ham:
        tcfg.train_alpha = true;
        tcfg.train_group_alphas = true;
        groups = &registry;
        start = init_task_adapter(backbone, ds.task_id, cfg.rank, adapter_rng.fork(t), cfg.adapter_init_std);
        break;
      case Strategy::naive_ft:
        tcfg.train_alpha = false;
        tcfg.train_group_alphas = false;
        start = shared ? *shared
                       : init_task_adapter(backbone, ds.task_id, cfg.rank, adapter_rng.fork(t),
                                           cfg.adapter_init_std);
        start.task_id = ds.task_id;
        break;
      case Strategy::per_task_merge:
        tcfg.train_alpha = false;
        tcfg.train_group_alphas = false;
        start = init_task_adapter(backbone, ds.task_id, cfg.rank, adapter_rng.fork(t), cfg.adapter_init_std);
        break;
    }

    auto on_epoch = [&](std::size_t epoch, double loss) {
      log << "task " << t + 1 << " epoch " << epoch + 1 << " loss " << loss << '\n';
    };
    TrainReport report = train_task(ds, backbone, groups, std::move(start), tcfg, shuffle_rng.fork(t), on_epoch);
    log << "task " << t + 1 << " alpha " << report.adapter.alpha;
    for (double a : report.group_alphas) log << " group_alpha " << a;
    log << '\n';

    MergedDelta merged;
    switch (cfg.strategy) {
      case Strategy::ham: {
        const ConsolidationRecord rec = ham_consolidate(report.adapter, registry, ccfg);
        res.assignments.push_back(rec.group_id);
        log << "task " << t + 1 << (rec.decision.create_new ? " created" : " joined") << " group "
            << rec.group_id;
        for (double s : rec.decision.similarities) log << " sim " << s;
        log << '\n';
        merged = detail::merge_groups(registry, cfg);
        break;
      }
      case Strategy::naive_ft:
        shared = report.adapter;
        merged = detail::as_merged(*shared);
        break;
      case Strategy::per_task_merge:
        finished.push_back(std::move(report.adapter));
        merged = detail::merge_tasks(finished, cfg);
        break;
    }

    const FinalModel model = finalize(backbone, merged);
    const auto accs = evaluate(model, stream.subspan(0, t + 1));
    res.accuracy.record_row(t, accs);
    log << "task " << t + 1 << " accuracy";
    for (double a : accs) log << ' ' << a;
    log << '\n';
    if (t + 1 == N) res.merged = std::move(merged);
  }

  res.average_accuracy = average_accuracy(res.accuracy);
  if (N >= 2) res.forgetting = forgetting_measure(res.accuracy);
  for (const auto& l : res.merged.layers) res.merged_rank.push_back(l.rank());

  const auto shapes = backbone.adapted_shapes();
  std::size_t per_adapter_dense = 0;
  for (const auto& [d, k] : shapes) per_adapter_dense += cfg.rank * (d + k);
  switch (cfg.strategy) {
    case Strategy::ham:
      for (const auto& g : registry.groups) {
        res.groups.push_back({g.group_id, g.member_task_ids, g.member_count, g.alpha, g.rank(),
                              nonzero_parameter_count(g)});
        res.nonzero_parameters += nonzero_parameter_count(g);
      }
      res.dense_parameters = per_adapter_dense * N;
      res.group_adapters = registry.groups;
      break;
    case Strategy::naive_ft:
      res.nonzero_parameters = nonzero_parameter_count(*shared);
      res.dense_parameters = per_adapter_dense;
      break;
    case Strategy::per_task_merge:
      for (const auto& a : finished) res.nonzero_parameters += nonzero_parameter_count(a);
      res.dense_parameters = per_adapter_dense * N;
      break;
  }
  res.backbone_fingerprint_after = backbone.frozen_fingerprint();
  res.log = log.str();
  return res;
}

inline nlohmann::ordered_json config_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["strategy"] = to_string(c.strategy);
  j["seed"] = c.seed;
  j["num_tasks"] = c.stream.num_tasks;
  j["classes_per_task"] = c.stream.classes_per_task;
  j["input_dim"] = c.backbone.input_dim;
  j["hidden_dim"] = c.backbone.hidden_dim;
  j["hidden_layers"] = c.backbone.hidden_layers;
  j["train_per_class"] = c.stream.train_per_class;
  j["test_per_class"] = c.stream.test_per_class;
  j["separation"] = c.stream.separation;
  j["stream_mode"] = to_string(c.stream.mode);
  j["super_clusters"] = c.effective_stream().super_clusters;
  j["cluster_share"] = c.stream.cluster_share;
  j["rank"] = c.rank;
  j["keep_fraction"] = c.keep_fraction;
  j["g_max"] = c.g_max;
  j["tau_sim"] = c.tau_sim;
  j["grouping"] = to_string(c.grouping);
  j["similarity_scope"] = to_string(c.similarity_scope);
  j["merge"] = to_string(c.merge);
  j["ties_trim"] = c.merge_params.ties_trim;
  j["ties_lambda"] = c.merge_params.ties_lambda;
  j["dare_drop"] = c.merge_params.dare_drop;
  j["lr"] = c.train.optimizer.lr;
  j["batch_size"] = c.train.batch_size;
  j["epochs"] = c.train.epochs;
  j["weight_decay"] = c.train.optimizer.weight_decay;
  return j;
}

inline nlohmann::ordered_json summary_json(const ExperimentResult& r) {
  nlohmann::ordered_json j;
  j["config"] = config_json(r.config);
  j["average_accuracy"] = r.average_accuracy;
  j["forgetting_measure"] = r.forgetting ? nlohmann::ordered_json(*r.forgetting) : nlohmann::ordered_json();
  j["nonzero_parameters"] = r.nonzero_parameters;
  j["dense_parameters"] = r.dense_parameters;
  j["merged_rank"] = r.merged_rank;
  auto groups = nlohmann::ordered_json::array();
  for (const auto& g : r.groups) {
    nlohmann::ordered_json gj;
    gj["group_id"] = g.group_id;
    gj["member_count"] = g.member_count;
    gj["member_task_ids"] = g.member_task_ids;
    gj["alpha"] = g.alpha;
    gj["rank"] = g.rank;
    gj["nonzero_parameters"] = g.nonzero_parameters;
    groups.push_back(std::move(gj));
  }
  j["groups"] = std::move(groups);
  j["assignments"] = r.assignments;
  return j;
}

/// accuracy_matrix.csv, summary.json, train.log, merged.hama and group_<id>.hama.
inline void write_outputs(const ExperimentResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  r.accuracy.write_csv(csv);
  write_file_atomic(dir / "accuracy_matrix.csv", csv.str());
  write_file_atomic(dir / "summary.json", summary_json(r).dump(2) + "\n");
  write_file_atomic(dir / "train.log", r.log);
  save_adapter(dir / "merged.hama", r.merged);
  for (const auto& g : r.group_adapters) {
    save_adapter(dir / ("group_" + std::to_string(g.group_id) + ".hama"), g);
  }
}

/// Output directory after applying the HAM_OUTPUT_DIR environment override.
inline std::string resolve_output_dir(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("HAM_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return cfg.output_dir;
}

struct SweepPoint {
  std::vector<std::pair<std::string, std::string>> params;
  ExperimentConfig config;
};

/// Cartesian product of the grid, first key varying slowest.
inline std::vector<SweepPoint> expand_grid(const ParsedConfig& parsed) {
  if (parsed.grid.empty()) throw ConfigError("sweep: the grid is empty (add grid.<key> = v1, v2, ...)");
  std::vector<SweepPoint> points{SweepPoint{{}, parsed.config}};
  for (const auto& [key, values] : parsed.grid) {
    std::vector<SweepPoint> next;
    for (const auto& p : points) {
      for (const auto& v : values) {
        SweepPoint q = p;
        set_config_value(q.config, key, v);
        q.params.emplace_back(key, v);
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  for (auto& p : points) p.config.validate();
  return points;
}

struct SweepOutcome {
  std::size_t failures = 0;
  std::string csv;
};

/// One run per grid point, each in `<dir>/point_<n>`; failures are recorded and the
/// sweep continues.
inline SweepOutcome run_sweep(const ParsedConfig& parsed, const std::filesystem::path& dir,
                              std::ostream* progress = nullptr) {
  const auto points = expand_grid(parsed);
  SweepOutcome out;
  std::ostringstream csv;
  csv << "point";
  for (const auto& [key, values] : parsed.grid) csv << ',' << key;
  csv << ",average_accuracy,forgetting_measure,groups,nonzero_parameters,status\n";
  char buf[64];
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    std::snprintf(buf, sizeof buf, "point_%03zu", i);
    const std::string name = buf;
    csv << name;
    for (const auto& [k, v] : p.params) csv << ',' << v;
    try {
      const ExperimentResult r = run_experiment(p.config);
      write_outputs(r, dir / name);
      std::snprintf(buf, sizeof buf, ",%.6f,", r.average_accuracy);
      csv << buf;
      if (r.forgetting) {
        std::snprintf(buf, sizeof buf, "%.6f", *r.forgetting);
        csv << buf;
      }
      csv << ',' << r.groups.size() << ',' << r.nonzero_parameters << ",ok\n";
      if (progress) *progress << name << " AA " << r.average_accuracy << '\n';
    } catch (const Error& e) {
      ++out.failures;
      std::string msg = e.what();
      std::ranges::replace(msg, ',', ';');
      std::ranges::replace(msg, '\n', ' ');
      csv << ",,,,,error: " << msg << '\n';
      if (progress) *progress << name << " failed: " << e.what() << '\n';
    }
  }
  out.csv = csv.str();
  write_file_atomic(dir / "sweep.csv", out.csv);
  return out;
}

}  // namespace ham
