#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ham/adapters.hpp"
#include "ham/matrix.hpp"

namespace ham {

enum class GroupingRule {
  similarity,     // join the most similar group at or above tau_sim
  orthogonality,  // join the least similar group at or below tau_sim
};

enum class SimilarityScope {
  last_layer,  // compare deltas of the last adapted layer only
  all_layers,  // mean of the per-layer similarities
};

struct ConsolidationConfig {
  double keep_fraction = 0.6;
  GroupingRule rule = GroupingRule::similarity;
  SimilarityScope scope = SimilarityScope::last_layer;
};

/// Absolute cosine between the vectorized deltas of one layer.
inline double layer_similarity(const LayerAdapter& a, const LayerAdapter& b) {
  const Matrix da = delta_weight(a);
  const Matrix db = delta_weight(b);
  if (!da.same_shape(db)) {
    throw ShapeError("similarity: delta shapes differ (" + shape_string(da) + " vs " +
                     shape_string(db) + ")");
  }
  return abs_cosine(da.data(), db.data());
}

inline double similarity(const TaskAdapter& adapter, const AdapterGroup& group,
                         SimilarityScope scope = SimilarityScope::last_layer) {
  if (adapter.layers.empty() || group.layers.empty()) {
    throw ShapeError("similarity: adapter and group need at least one layer");
  }
  if (scope == SimilarityScope::last_layer) {
    return layer_similarity(adapter.layers.back(), group.layers.back());
  }
  if (adapter.layers.size() != group.layers.size()) {
    throw ShapeError("similarity: layer counts differ");
  }
  double sum = 0.0;
  for (std::size_t l = 0; l < adapter.layers.size(); ++l)
    sum += layer_similarity(adapter.layers[l], group.layers[l]);
  return sum / static_cast<double>(adapter.layers.size());
}

struct GroupDecision {
  bool create_new = false;
  std::uint32_t group_id = 0;        // meaningful when !create_new
  std::vector<double> similarities;  // one per existing group, registry order
};

/// Join the best group if it passes the threshold; otherwise open a new group while
/// below the cap, else join the best group regardless of the threshold.
inline GroupDecision assign_group(const TaskAdapter& adapter, const GroupRegistry& registry,
                                  GroupingRule rule = GroupingRule::similarity,
                                  SimilarityScope scope = SimilarityScope::last_layer) {
  GroupDecision d;
  if (registry.empty()) {
    d.create_new = true;
    return d;
  }
  std::size_t best = 0;
  for (std::size_t j = 0; j < registry.size(); ++j) {
    d.similarities.push_back(similarity(adapter, registry.groups[j], scope));
    const bool better = rule == GroupingRule::similarity
                            ? d.similarities[j] > d.similarities[best]
                            : d.similarities[j] < d.similarities[best];
    if (better) best = j;
  }
  const double s = d.similarities[best];
  const bool passes = rule == GroupingRule::similarity ? s >= registry.tau_sim : s <= registry.tau_sim;
  if (!passes && !registry.full()) {
    d.create_new = true;
    return d;
  }
  d.group_id = registry.groups[best].group_id;
  return d;
}

/// Running mean of member alphas; a group with no members takes alpha_j directly.
inline void update_group_alpha(AdapterGroup& group, double alpha_j) {
  if (group.member_count == 0) {
    group.alpha = alpha_j;
  } else {
    group.alpha += (alpha_j - group.alpha) / static_cast<double>(group.member_count + 1);
  }
  ++group.member_count;
}

/// Magnitude-prune B and A of every layer independently, keeping the top `keep_fraction`.
inline TaskAdapter prune(const TaskAdapter& adapter, double keep_fraction) {
  check_keep_fraction(keep_fraction);
  TaskAdapter out = adapter;
  for (auto& layer : out.layers) {
    layer.B = prune_by_magnitude(layer.B, keep_fraction);
    layer.A = prune_by_magnitude(layer.A, keep_fraction);
  }
  return out;
}

/// Append the adapter's factors: B gains r columns, A gains r rows, alpha and
/// membership are updated.
inline void concat_into_group(AdapterGroup& group, const TaskAdapter& pruned) {
  if (group.layers.empty()) {
    for (const auto& l : pruned.layers) group.layers.push_back(LayerAdapter::empty(l.out_dim(), l.in_dim()));
  }
  if (group.layers.size() != pruned.layers.size()) {
    throw ShapeError("concat: group has " + std::to_string(group.layers.size()) +
                     " layers, adapter has " + std::to_string(pruned.layers.size()));
  }
  const std::size_t r = pruned.rank();
  for (std::size_t l = 0; l < group.layers.size(); ++l) {
    const auto& g = group.layers[l];
    const auto& p = pruned.layers[l];
    p.check();
    if (g.out_dim() != p.out_dim() || g.in_dim() != p.in_dim()) {
      throw ShapeError("concat: layer " + std::to_string(l) + " delta shape mismatch");
    }
    if (p.rank() != r || g.rank() != group.member_count * r) {
      throw ShapeError("concat: member ranks must all equal " + std::to_string(r));
    }
  }
  for (std::size_t l = 0; l < group.layers.size(); ++l) {
    auto& g = group.layers[l];
    g.B = hconcat(g.B, pruned.layers[l].B);
    g.A = vconcat(g.A, pruned.layers[l].A);
  }
  update_group_alpha(group, pruned.alpha);
  group.member_task_ids.push_back(pruned.task_id);
}

struct ConsolidationRecord {
  GroupDecision decision;
  std::uint32_t group_id = 0;
  std::size_t retained_parameters = 0;
};

/// One HAM step after a task: assign, create or select, prune, concatenate.
inline ConsolidationRecord ham_consolidate(const TaskAdapter& adapter, GroupRegistry& registry,
                                           const ConsolidationConfig& cfg) {
  check_keep_fraction(cfg.keep_fraction);
  ConsolidationRecord rec;
  rec.decision = assign_group(adapter, registry, cfg.rule, cfg.scope);
  AdapterGroup* target = nullptr;
  if (rec.decision.create_new) {
    if (registry.full()) throw StateError("group cap reached");
    AdapterGroup g;
    g.group_id = static_cast<std::uint32_t>(registry.size());
    registry.groups.push_back(std::move(g));
    target = &registry.groups.back();
  } else {
    target = &registry.find(rec.decision.group_id);
  }
  const TaskAdapter pruned = prune(adapter, cfg.keep_fraction);
  rec.retained_parameters = nonzero_parameter_count(pruned);
  concat_into_group(*target, pruned);
  rec.group_id = target->group_id;
  return rec;
}

}  // namespace ham
