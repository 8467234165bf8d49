#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ham/matrix.hpp"

namespace ham {

/// Low-rank factors of one adapted layer; the update is B (d x r) times A (r x k).
struct LayerAdapter {
  Matrix B;
  Matrix A;

  LayerAdapter() = default;
  LayerAdapter(Matrix b, Matrix a) : B(std::move(b)), A(std::move(a)) { check(); }

  /// Rank-0 factors for a d x k layer (the state of a freshly created group).
  static LayerAdapter empty(std::size_t d, std::size_t k) { return {Matrix(d, 0), Matrix(0, k)}; }

  std::size_t out_dim() const noexcept { return B.rows(); }
  std::size_t in_dim() const noexcept { return A.cols(); }
  std::size_t rank() const noexcept { return B.cols(); }

  void check() const {
    if (B.cols() != A.rows()) {
      throw ShapeError("adapter factors do not conform: B " + shape_string(B) + ", A " +
                       shape_string(A));
    }
  }

  friend bool operator==(const LayerAdapter&, const LayerAdapter&) = default;
};

inline Matrix delta_weight(const LayerAdapter& layer) {
  layer.check();
  return matmul(layer.B, layer.A);
}

/// One task's adapter: one LayerAdapter per adapted backbone layer plus its importance alpha.
struct TaskAdapter {
  std::uint32_t task_id = 0;
  std::vector<LayerAdapter> layers;
  double alpha = 1.0;

  std::size_t rank() const noexcept { return layers.empty() ? 0 : layers.front().rank(); }
  friend bool operator==(const TaskAdapter&, const TaskAdapter&) = default;
};

/// Concatenation of pruned member adapters sharing one group scalar.
struct AdapterGroup {
  std::uint32_t group_id = 0;
  std::vector<LayerAdapter> layers;
  double alpha = 0.0;
  std::size_t member_count = 0;
  std::vector<std::uint32_t> member_task_ids;

  std::size_t rank() const noexcept { return layers.empty() ? 0 : layers.front().rank(); }
  friend bool operator==(const AdapterGroup&, const AdapterGroup&) = default;
};

struct GroupRegistry {
  std::vector<AdapterGroup> groups;
  std::size_t g_max = 2;
  double tau_sim = 0.3;

  GroupRegistry() = default;
  GroupRegistry(std::size_t max_groups, double threshold) : g_max(max_groups), tau_sim(threshold) {
    if (g_max == 0) throw ConfigError("g_max must be at least 1");
  }

  std::size_t size() const noexcept { return groups.size(); }
  bool empty() const noexcept { return groups.empty(); }
  bool full() const noexcept { return groups.size() >= g_max; }

  AdapterGroup& find(std::uint32_t group_id) {
    for (auto& g : groups)
      if (g.group_id == group_id) return g;
    throw StateError("no group with id " + std::to_string(group_id));
  }
  const AdapterGroup& find(std::uint32_t group_id) const {
    return const_cast<GroupRegistry*>(this)->find(group_id);
  }

  friend bool operator==(const GroupRegistry&, const GroupRegistry&) = default;
};

template <typename Adapter>
std::size_t nonzero_parameter_count(const Adapter& adapter) {
  std::size_t n = 0;
  for (const auto& layer : adapter.layers) n += count_nonzero(layer.B) + count_nonzero(layer.A);
  return n;
}

/// Fingerprint of every adapter matrix held by the registry (alphas excluded).
inline std::uint64_t matrix_fingerprint(const GroupRegistry& registry) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& g : registry.groups)
    for (const auto& l : g.layers) h = fingerprint(l.A.data(), fingerprint(l.B.data(), h));
  return h;
}

}  // namespace ham
