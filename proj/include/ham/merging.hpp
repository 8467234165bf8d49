#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ham/adapters.hpp"
#include "ham/backbone.hpp"
#include "ham/matrix.hpp"
#include "ham/rng.hpp"

namespace ham {

struct MergeSource {
  std::uint32_t id = 0;
  double alpha = 1.0;
};

/// Per-layer merged update. Kept in factor form so that a HAM merge records its grown
/// rank; dense merges are stored as B = delta, A = I.
struct MergedDelta {
  std::vector<LayerAdapter> layers;
  std::vector<MergeSource> provenance;

  std::vector<Matrix> deltas() const {
    std::vector<Matrix> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(delta_weight(l));
    return out;
  }

  std::size_t rank() const noexcept { return layers.empty() ? 0 : layers.front().rank(); }

  static MergedDelta from_dense(std::vector<Matrix> deltas, std::vector<MergeSource> provenance = {}) {
    MergedDelta m;
    for (auto& d : deltas) {
      const std::size_t k = d.cols();
      m.layers.emplace_back(std::move(d), Matrix::identity(k));
    }
    m.provenance = std::move(provenance);
    return m;
  }
};

/// (1/M) sum_i alpha_Gi B_Gi A_Gi, assembled as [a_1/M B_1, ..., a_M/M B_M] [A_1; ...; A_M].
inline MergedDelta merge_ham(const GroupRegistry& registry) {
  if (registry.empty()) throw StateError("merge_ham: registry has no groups");
  const auto M = static_cast<double>(registry.size());
  const std::size_t L = registry.groups.front().layers.size();
  MergedDelta out;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& first = registry.groups.front().layers[l];
    Matrix B(first.out_dim(), 0);
    Matrix A(0, first.in_dim());
    for (const auto& g : registry.groups) {
      if (g.layers.size() != L) throw ShapeError("merge_ham: groups disagree on layer count");
      B = hconcat(B, scaled(g.layers[l].B, g.alpha / M));
      A = vconcat(A, g.layers[l].A);
    }
    out.layers.emplace_back(std::move(B), std::move(A));
  }
  for (const auto& g : registry.groups) out.provenance.push_back({g.group_id, g.alpha});
  return out;
}

namespace detail {
inline void check_same_shapes(std::span<const Matrix> deltas, const char* who) {
  if (deltas.empty()) throw ConfigError(std::string(who) + ": no deltas to merge");
  for (const auto& d : deltas) {
    if (!d.same_shape(deltas.front())) {
      throw ShapeError(std::string(who) + ": deltas have different shapes (" +
                       shape_string(deltas.front()) + " vs " + shape_string(d) + ")");
    }
  }
}
inline double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
}  // namespace detail

/// sum_i w_i D_i / sum_i w_i
inline Matrix merge_linear(std::span<const Matrix> deltas, std::span<const double> weights) {
  detail::check_same_shapes(deltas, "merge_linear");
  if (weights.size() != deltas.size()) {
    throw ConfigError("merge_linear: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(deltas.size()) + " deltas");
  }
  double total = 0.0;
  for (double w : weights) total += w;
  if (total == 0.0) throw ConfigError("merge_linear: weights sum to zero");
  Matrix out(deltas.front().rows(), deltas.front().cols());
  for (std::size_t i = 0; i < deltas.size(); ++i) add_scaled(out, weights[i] / total, deltas[i]);
  return out;
}

inline Matrix merge_linear(std::span<const Matrix> deltas) {
  const std::vector<double> w(deltas.size(), 1.0);
  return merge_linear(deltas, w);
}

/// TIES: keep each delta's top `trim_fraction` magnitudes, elect a sign per entry from
/// the summed trimmed values, average only the agreeing entries, scale by lambda.
inline Matrix merge_ties(std::span<const Matrix> deltas, double trim_fraction, double lambda) {
  detail::check_same_shapes(deltas, "merge_ties");
  if (!(trim_fraction > 0.0 && trim_fraction <= 1.0)) {
    throw ConfigError("merge_ties: trim fraction must lie in (0, 1]");
  }
  std::vector<Matrix> trimmed;
  trimmed.reserve(deltas.size());
  for (const auto& d : deltas) trimmed.push_back(prune_by_magnitude(d, trim_fraction));

  Matrix out(deltas.front().rows(), deltas.front().cols());
  auto o = out.data();
  for (std::size_t e = 0; e < o.size(); ++e) {
    double sum = 0.0;
    for (const auto& t : trimmed) sum += t.data()[e];
    const double elected = detail::sign(sum);
    if (elected == 0.0) continue;
    double agree = 0.0;
    std::size_t count = 0;
    for (const auto& t : trimmed) {
      const double v = t.data()[e];
      if (v != 0.0 && detail::sign(v) == elected) {
        agree += v;
        ++count;
      }
    }
    if (count > 0) o[e] = lambda * agree / static_cast<double>(count);
  }
  return out;
}

inline void check_drop_probability(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("DARE drop probability must lie in [0, 1)");
}

/// Drop each entry with probability p and rescale survivors by 1/(1-p).
inline Matrix dare_rescale(const Matrix& delta, double drop_prob, Rng& rng) {
  check_drop_probability(drop_prob);
  Matrix out = delta;
  if (drop_prob == 0.0) return out;
  const double scale = 1.0 / (1.0 - drop_prob);
  for (double& v : out.data()) v = rng.bernoulli(drop_prob) ? 0.0 : v * scale;
  return out;
}

/// DARE masking of every delta (stream i of `seed` for delta i) followed by TIES.
inline Matrix merge_dare_ties(std::span<const Matrix> deltas, double drop_prob, double trim_fraction,
                              double lambda, std::uint64_t seed) {
  detail::check_same_shapes(deltas, "merge_dare_ties");
  check_drop_probability(drop_prob);
  const Rng root(seed, Rng::hash_label("dare"));
  std::vector<Matrix> rescaled;
  rescaled.reserve(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    Rng rng = root.fork(i);
    rescaled.push_back(dare_rescale(deltas[i], drop_prob, rng));
  }
  return merge_ties(rescaled, trim_fraction, lambda);
}

enum class MergeAlgorithm { ham, linear, ties, dare_ties };

struct MergeParams {
  double ties_trim = 0.2;
  double ties_lambda = 1.0;
  double dare_drop = 0.5;
  std::uint64_t seed = 0;
};

/// Merge per-layer deltas of several sources with a baseline algorithm. `per_source[i][l]`
/// is layer l of source i. For `ham` and `linear` every source gets equal weight.
inline MergedDelta merge_dense(const std::vector<std::vector<Matrix>>& per_source,
                               std::vector<MergeSource> provenance, MergeAlgorithm algo,
                               const MergeParams& params) {
  if (per_source.empty()) throw StateError("merge: nothing to merge");
  const std::size_t L = per_source.front().size();
  std::vector<Matrix> merged;
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<Matrix> layer;
    for (const auto& src : per_source) {
      if (src.size() != L) throw ShapeError("merge: sources disagree on layer count");
      layer.push_back(src[l]);
    }
    switch (algo) {
      case MergeAlgorithm::ham:
      case MergeAlgorithm::linear:
        merged.push_back(merge_linear(layer));
        break;
      case MergeAlgorithm::ties:
        merged.push_back(merge_ties(layer, params.ties_trim, params.ties_lambda));
        break;
      case MergeAlgorithm::dare_ties:
        merged.push_back(merge_dare_ties(layer, params.dare_drop, params.ties_trim,
                                         params.ties_lambda, Rng::mix64(params.seed + l)));
        break;
    }
  }
  return MergedDelta::from_dense(std::move(merged), std::move(provenance));
}

/// Inference model W0 + merged delta with the backbone's head.
class FinalModel {
 public:
  FinalModel(const FrozenBackbone& backbone, const MergedDelta& merged)
      : backbone_(&backbone), weights_(backbone.merged_weights(merged.deltas())) {}

  Vector logits(std::span<const double> x) const { return backbone_->forward_with_weights(x, weights_); }
  std::size_t num_classes() const noexcept { return backbone_->num_classes(); }
  std::span<const Matrix> weights() const noexcept { return weights_; }

 private:
  const FrozenBackbone* backbone_;
  std::vector<Matrix> weights_;
};

inline FinalModel finalize(const FrozenBackbone& backbone, const MergedDelta& merged) {
  return FinalModel(backbone, merged);
}

}  // namespace ham
