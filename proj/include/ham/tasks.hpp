#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ham/matrix.hpp"
#include "ham/rng.hpp"

namespace ham {

struct Example {
  Vector x;
  std::uint32_t label = 0;
  std::uint32_t task_id = 0;
};

/// One task of a class-incremental stream. Class sets are disjoint across tasks.
struct TaskDataset {
  std::uint32_t task_id = 0;
  std::vector<std::uint32_t> class_ids;
  std::vector<Example> train;
  std::vector<Example> test;
};

enum class StreamMode { clustered, uniform };

struct StreamSpec {
  std::size_t num_tasks = 20;
  std::size_t classes_per_task = 2;
  std::size_t input_dim = 32;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  double separation = 6.0;
  StreamMode mode = StreamMode::clustered;
  // clustered mode: consecutive blocks of tasks share one of this many super-cluster centers
  std::size_t super_clusters = 2;
  // share of each class-mean direction drawn from its super-cluster prototype
  double cluster_share = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_tasks == 0) throw ConfigError("num_tasks must be >= 1");
    if (classes_per_task == 0) throw ConfigError("classes_per_task must be >= 1");
    if (input_dim == 0) throw ConfigError("input_dim must be >= 1");
    if (train_per_class == 0 || test_per_class == 0) {
      throw ConfigError("samples per class must be >= 1");
    }
    if (!(separation >= 0.0) || !std::isfinite(separation)) {
      throw ConfigError("separation must be a finite non-negative number");
    }
    if (mode == StreamMode::clustered && super_clusters == 0) {
      throw ConfigError("super_clusters must be >= 1 in clustered mode");
    }
    if (!(cluster_share >= 0.0 && cluster_share <= 1.0)) {
      throw ConfigError("cluster_share must lie in [0, 1]");
    }
  }
};

namespace detail {
inline Vector random_unit(Rng& rng, std::size_t dim) {
  Vector v(dim);
  double norm = 0.0;
  do {
    for (double& x : v) x = rng.normal();
    norm = std::sqrt(dot(v, v));
  } while (norm == 0.0);
  for (double& x : v) x /= norm;
  return v;
}
}  // namespace detail

/// Gaussian class clusters (unit covariance, mean norm = separation), deterministic under seed.
inline std::vector<TaskDataset> generate_stream(const StreamSpec& spec) {
  spec.validate();
  const Rng root(spec.seed, Rng::hash_label("stream"));
  // centers[s][c]: prototype direction of class slot c in super-cluster s
  std::vector<std::vector<Vector>> centers;
  if (spec.mode == StreamMode::clustered) {
    Rng crng = root.fork("centers");
    centers.resize(spec.super_clusters);
    for (auto& slots : centers)
      for (std::size_t c = 0; c < spec.classes_per_task; ++c)
        slots.push_back(detail::random_unit(crng, spec.input_dim));
  }

  std::vector<TaskDataset> stream;
  stream.reserve(spec.num_tasks);
  for (std::size_t t = 0; t < spec.num_tasks; ++t) {
    Rng rng = root.fork(t);
    TaskDataset task;
    task.task_id = static_cast<std::uint32_t>(t);
    for (std::size_t c = 0; c < spec.classes_per_task; ++c) {
      const auto label = static_cast<std::uint32_t>(t * spec.classes_per_task + c);
      task.class_ids.push_back(label);

      Vector dir = detail::random_unit(rng, spec.input_dim);
      if (spec.mode == StreamMode::clustered) {
        const Vector& center = centers[t * centers.size() / spec.num_tasks][c];
        const double a = std::sqrt(spec.cluster_share);
        const double b = std::sqrt(1.0 - spec.cluster_share);
        double norm = 0.0;
        for (std::size_t i = 0; i < dir.size(); ++i) {
          dir[i] = a * center[i] + b * dir[i];
          norm += dir[i] * dir[i];
        }
        norm = std::sqrt(norm);
        if (norm > 0.0)
          for (double& v : dir) v /= norm;
      }
      Vector mean(spec.input_dim);
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = spec.separation * dir[i];

      auto draw = [&](std::vector<Example>& out, std::size_t n) {
        for (std::size_t j = 0; j < n; ++j) {
          Example e{Vector(spec.input_dim), label, task.task_id};
          for (std::size_t i = 0; i < e.x.size(); ++i) e.x[i] = mean[i] + rng.normal();
          out.push_back(std::move(e));
        }
      };
      draw(task.train, spec.train_per_class);
      draw(task.test, spec.test_per_class);
    }
    stream.push_back(std::move(task));
  }
  return stream;
}

enum class Split { train, test };

/// Index of the largest logit; lowest index wins ties.
inline std::size_t argmax(std::span<const double> logits) {
  return static_cast<std::size_t>(std::ranges::max_element(logits) - logits.begin());
}

/// Top-1 accuracy per task over every class the model knows. The task id is only
/// used to bucket results, never for prediction.
template <typename Model>
std::vector<double> evaluate(const Model& model, std::span<const TaskDataset> datasets,
                             Split split = Split::test) {
  std::vector<double> acc;
  acc.reserve(datasets.size());
  for (const auto& ds : datasets) {
    const auto& examples = split == Split::test ? ds.test : ds.train;
    std::size_t correct = 0;
    for (const auto& e : examples) {
      if (e.label >= model.num_classes()) {
        throw InputError("class id " + std::to_string(e.label) + " is not covered by the head (" +
                         std::to_string(model.num_classes()) + " classes)");
      }
      if (argmax(model.logits(e.x)) == e.label) ++correct;
    }
    acc.push_back(examples.empty() ? 0.0
                                   : static_cast<double>(correct) /
                                         static_cast<double>(examples.size()));
  }
  return acc;
}

/// One example per line: task_id,class_id,x_0,...,x_{D-1}
inline void write_examples(std::ostream& out, std::span<const Example> examples) {
  out.precision(17);
  for (const auto& e : examples) {
    out << e.task_id << ',' << e.label;
    for (double v : e.x) out << ',' << v;
    out << '\n';
  }
}

inline std::vector<Example> read_examples(std::istream& in) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(fields, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw InputError("stream line " + std::to_string(lineno) + ": too few columns");
    try {
      Example e;
      e.task_id = static_cast<std::uint32_t>(std::stoul(cells[0]));
      e.label = static_cast<std::uint32_t>(std::stoul(cells[1]));
      for (std::size_t i = 2; i < cells.size(); ++i) e.x.push_back(std::stod(cells[i]));
      if (!out.empty() && out.front().x.size() != e.x.size()) {
        throw InputError("stream line " + std::to_string(lineno) + ": inconsistent dimension");
      }
      out.push_back(std::move(e));
    } catch (const std::logic_error&) {
      throw InputError("stream line " + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

/// Rebuild task datasets from exported train and test example lists.
inline std::vector<TaskDataset> assemble_stream(std::span<const Example> train,
                                                std::span<const Example> test) {
  std::map<std::uint32_t, TaskDataset> tasks;
  auto add = [&](const Example& e, bool is_train) {
    auto& t = tasks[e.task_id];
    t.task_id = e.task_id;
    if (std::ranges::find(t.class_ids, e.label) == t.class_ids.end()) t.class_ids.push_back(e.label);
    (is_train ? t.train : t.test).push_back(e);
  };
  for (const auto& e : train) add(e, true);
  for (const auto& e : test) add(e, false);
  std::vector<TaskDataset> out;
  std::map<std::uint32_t, std::uint32_t> owner;
  for (auto& [id, t] : tasks) {
    std::ranges::sort(t.class_ids);
    for (auto c : t.class_ids) {
      if (auto [it, inserted] = owner.emplace(c, id); !inserted) {
        throw InputError("class " + std::to_string(c) + " appears in tasks " +
                         std::to_string(it->second) + " and " + std::to_string(id));
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ham
