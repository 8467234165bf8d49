#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ham/backbone.hpp"
#include "ham/consolidate.hpp"
#include "ham/merging.hpp"
#include "ham/tasks.hpp"
#include "ham/trainer.hpp"

namespace ham {

enum class Strategy { ham, naive_ft, per_task_merge };

/// Every knob of one run. Defaults follow the desk-scale setting: r = 16, k = 0.6,
/// G_max = 2, AdamW at lr 1e-3 with batch 64.
struct ExperimentConfig {
  StreamSpec stream{};
  BackboneShape backbone{};
  std::size_t rank = 16;
  double keep_fraction = 0.6;
  std::size_t g_max = 2;
  double tau_sim = 0.3;
  GroupingRule grouping = GroupingRule::similarity;
  SimilarityScope similarity_scope = SimilarityScope::last_layer;
  MergeAlgorithm merge = MergeAlgorithm::ham;
  MergeParams merge_params{};
  Strategy strategy = Strategy::ham;
  TrainConfig train{};
  double adapter_init_std = 0.02;
  std::uint64_t seed = 0;
  std::string output_dir = "ham_out";
  // 0 means "one super-cluster per allowed group"
  std::size_t super_clusters = 0;

  StreamSpec effective_stream() const {
    StreamSpec s = stream;
    s.input_dim = backbone.input_dim;
    s.seed = seed;
    s.super_clusters = super_clusters == 0 ? g_max : super_clusters;
    return s;
  }

  void validate() const;
};

// ---- enum names -----------------------------------------------------------

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::ham: return "ham";
    case Strategy::naive_ft: return "naive_ft";
    case Strategy::per_task_merge: return "per_task_merge";
  }
  return "?";
}
inline const char* to_string(MergeAlgorithm m) {
  switch (m) {
    case MergeAlgorithm::ham: return "ham";
    case MergeAlgorithm::linear: return "linear";
    case MergeAlgorithm::ties: return "ties";
    case MergeAlgorithm::dare_ties: return "dare_ties";
  }
  return "?";
}
inline const char* to_string(GroupingRule g) {
  return g == GroupingRule::similarity ? "similarity" : "orthogonality";
}
inline const char* to_string(SimilarityScope s) {
  return s == SimilarityScope::last_layer ? "last_layer" : "all_layers";
}
inline const char* to_string(StreamMode m) { return m == StreamMode::clustered ? "clustered" : "uniform"; }

namespace detail {

template <typename E, std::size_t N>
E parse_enum(std::string_view key, std::string_view value,
             const std::pair<std::string_view, E> (&names)[N]) {
  for (const auto& [name, e] : names)
    if (name == value) return e;
  std::string allowed;
  for (const auto& [name, e] : names) allowed += (allowed.empty() ? "" : "|") + std::string(name);
  throw ConfigError(std::string(key) + ": unknown value '" + std::string(value) + "' (expected " +
                    allowed + ")");
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(std::string_view key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) {
    throw ConfigError(std::string(key) + ": expected a finite number, got '" + v + "'");
  }
  return d;
}

inline std::uint64_t parse_uint(std::string_view key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

/// Apply one `key = value` setting.
inline void set_config_value(ExperimentConfig& c, std::string_view key, const std::string& v) {
  using detail::parse_double;
  using detail::parse_uint;
  static constexpr std::pair<std::string_view, Strategy> kStrategies[] = {
      {"ham", Strategy::ham}, {"naive_ft", Strategy::naive_ft}, {"per_task_merge", Strategy::per_task_merge}};
  static constexpr std::pair<std::string_view, MergeAlgorithm> kMerges[] = {
      {"ham", MergeAlgorithm::ham}, {"linear", MergeAlgorithm::linear},
      {"ties", MergeAlgorithm::ties}, {"dare_ties", MergeAlgorithm::dare_ties}};
  static constexpr std::pair<std::string_view, GroupingRule> kRules[] = {
      {"similarity", GroupingRule::similarity}, {"orthogonality", GroupingRule::orthogonality}};
  static constexpr std::pair<std::string_view, SimilarityScope> kScopes[] = {
      {"last_layer", SimilarityScope::last_layer}, {"all_layers", SimilarityScope::all_layers}};
  static constexpr std::pair<std::string_view, StreamMode> kModes[] = {
      {"clustered", StreamMode::clustered}, {"uniform", StreamMode::uniform}};

  if (key == "num_tasks") c.stream.num_tasks = parse_uint(key, v);
  else if (key == "classes_per_task") c.stream.classes_per_task = parse_uint(key, v);
  else if (key == "input_dim") c.backbone.input_dim = parse_uint(key, v);
  else if (key == "train_per_class") c.stream.train_per_class = parse_uint(key, v);
  else if (key == "test_per_class") c.stream.test_per_class = parse_uint(key, v);
  else if (key == "separation") c.stream.separation = parse_double(key, v);
  else if (key == "stream_mode") c.stream.mode = detail::parse_enum(key, v, kModes);
  else if (key == "super_clusters") c.super_clusters = parse_uint(key, v);
  else if (key == "cluster_share") c.stream.cluster_share = parse_double(key, v);
  else if (key == "hidden_dim") c.backbone.hidden_dim = parse_uint(key, v);
  else if (key == "hidden_layers") c.backbone.hidden_layers = parse_uint(key, v);
  else if (key == "head_init_std") c.backbone.head_init_std = parse_double(key, v);
  else if (key == "rank") c.rank = parse_uint(key, v);
  else if (key == "keep_fraction") c.keep_fraction = parse_double(key, v);
  else if (key == "g_max") c.g_max = parse_uint(key, v);
  else if (key == "tau_sim") c.tau_sim = parse_double(key, v);
  else if (key == "grouping") c.grouping = detail::parse_enum(key, v, kRules);
  else if (key == "similarity_scope") c.similarity_scope = detail::parse_enum(key, v, kScopes);
  else if (key == "merge") c.merge = detail::parse_enum(key, v, kMerges);
  else if (key == "ties_trim") c.merge_params.ties_trim = parse_double(key, v);
  else if (key == "ties_lambda") c.merge_params.ties_lambda = parse_double(key, v);
  else if (key == "dare_drop") c.merge_params.dare_drop = parse_double(key, v);
  else if (key == "strategy") c.strategy = detail::parse_enum(key, v, kStrategies);
  else if (key == "lr") c.train.optimizer.lr = parse_double(key, v);
  else if (key == "beta1") c.train.optimizer.beta1 = parse_double(key, v);
  else if (key == "beta2") c.train.optimizer.beta2 = parse_double(key, v);
  else if (key == "eps") c.train.optimizer.eps = parse_double(key, v);
  else if (key == "weight_decay") c.train.optimizer.weight_decay = parse_double(key, v);
  else if (key == "batch_size") c.train.batch_size = parse_uint(key, v);
  else if (key == "epochs") c.train.epochs = parse_uint(key, v);
  else if (key == "adapter_init_std") c.adapter_init_std = parse_double(key, v);
  else if (key == "seed") c.seed = parse_uint(key, v);
  else if (key == "output_dir") c.output_dir = v;
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

inline void ExperimentConfig::validate() const {
  effective_stream().validate();
  if (backbone.hidden_dim == 0 || backbone.hidden_layers == 0) {
    throw ConfigError("hidden_dim and hidden_layers must be >= 1");
  }
  if (!(backbone.head_init_std >= 0.0)) throw ConfigError("head_init_std must be >= 0");
  if (rank == 0) throw ConfigError("rank must be >= 1");
  const std::size_t min_dim = std::min(backbone.input_dim, backbone.hidden_dim);
  if (rank > min_dim) {
    throw ConfigError("rank " + std::to_string(rank) + " exceeds the smallest layer dimension " +
                      std::to_string(min_dim));
  }
  check_keep_fraction(keep_fraction);
  if (g_max == 0) throw ConfigError("g_max must be >= 1");
  if (!(tau_sim >= 0.0 && tau_sim <= 1.0)) throw ConfigError("tau_sim must lie in [0, 1]");
  if (!(merge_params.ties_trim > 0.0 && merge_params.ties_trim <= 1.0)) {
    throw ConfigError("ties_trim must lie in (0, 1]");
  }
  check_drop_probability(merge_params.dare_drop);
  const auto& o = train.optimizer;
  if (!(o.lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    throw ConfigError("beta1 and beta2 must lie in [0, 1)");
  }
  if (!(o.eps > 0.0)) throw ConfigError("eps must be > 0");
  if (!(o.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (train.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (train.epochs == 0) throw ConfigError("epochs must be >= 1");
  if (!(adapter_init_std > 0.0)) throw ConfigError("adapter_init_std must be > 0");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

/// Parameters a sweep may vary.
inline constexpr std::string_view kSweepKeys[] = {"keep_fraction", "g_max",    "tau_sim",  "grouping",
                                                  "merge",         "num_tasks", "strategy", "seed"};

struct ParsedConfig {
  ExperimentConfig config;
  std::vector<std::pair<std::string, std::vector<std::string>>> grid;  // file order
};

/// Parse `key = value` lines; `#` starts a comment. Keys prefixed `grid.` hold
/// comma-separated sweep values.
inline ParsedConfig parse_config(std::istream& in) {
  ParsedConfig out;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (!seen.emplace(key, lineno).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    try {
      if (key.starts_with("grid.")) {
        const std::string param = key.substr(5);
        if (std::ranges::find(kSweepKeys, param) == std::end(kSweepKeys)) {
          throw ConfigError("'" + param + "' cannot be swept");
        }
        auto values = detail::split_list(value);
        if (values.empty()) throw ConfigError("grid." + param + " has no values");
        ExperimentConfig probe = out.config;
        for (const auto& v : values) set_config_value(probe, param, v);
        out.grid.emplace_back(param, std::move(values));
      } else {
        set_config_value(out.config, key, value);
      }
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline ParsedConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

}  // namespace ham
