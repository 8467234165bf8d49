#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ham/adapters.hpp"
#include "ham/matrix.hpp"
#include "ham/rng.hpp"

namespace ham {

/// Frozen linear layer: out = W x + bias, W is out x in.
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

struct BackboneShape {
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t hidden_layers = 2;
  double head_init_std = 0.01;
};

/// Adapter terms active in a forward pass. Group matrices are read-only; the
/// alphas are read from the groups themselves.
struct ForwardContext {
  const GroupRegistry* groups = nullptr;
  const TaskAdapter* current = nullptr;
  bool group_alphas_trainable = true;
};

/// Intermediates of one adapted layer, recorded for backpropagation.
struct LayerCache {
  Vector input;
  Vector current_low;               // A_i x
  Vector current_term;              // B_i A_i x (unscaled)
  std::vector<Vector> group_low;    // A_G x per group
  std::vector<Vector> group_term;   // B_G A_G x per group (unscaled)
  Vector pre;
  Vector post;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Vector logits;
  const Vector& features() const { return layers.back().post; }
};

inline double relu(double v) noexcept { return v > 0.0 ? v : 0.0; }

/// Fixed ReLU network W0 with a class-incremental linear head. Only the head is mutable.
class FrozenBackbone {
 public:
  FrozenBackbone() = default;
  FrozenBackbone(const BackboneShape& shape, Rng rng) : shape_(shape), head_rng_(rng.fork("head")) {
    if (shape.input_dim == 0 || shape.hidden_dim == 0 || shape.hidden_layers == 0) {
      throw ConfigError("backbone dimensions must be positive");
    }
    Rng init = rng.fork("layers");
    std::size_t in = shape.input_dim;
    for (std::size_t l = 0; l < shape.hidden_layers; ++l) {
      DenseLayer layer{Matrix(shape.hidden_dim, in), Vector(shape.hidden_dim, 0.0)};
      const double stddev = std::sqrt(2.0 / static_cast<double>(in));
      for (double& w : layer.weight.data()) w = init.normal(0.0, stddev);
      layers_.push_back(std::move(layer));
      in = shape.hidden_dim;
    }
    head_weight_ = Matrix(0, shape.hidden_dim);
  }

  const BackboneShape& shape() const noexcept { return shape_; }
  std::span<const DenseLayer> layers() const noexcept { return layers_; }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  std::size_t num_classes() const noexcept { return head_weight_.rows(); }
  std::size_t feature_dim() const noexcept { return shape_.hidden_dim; }
  std::size_t input_dim() const noexcept { return shape_.input_dim; }

  const Matrix& head_weight() const noexcept { return head_weight_; }
  const Vector& head_bias() const noexcept { return head_bias_; }
  Matrix& head_weight() noexcept { return head_weight_; }
  Vector& head_bias() noexcept { return head_bias_; }

  /// Append `new_classes` head rows drawn from the backbone's head stream.
  void expand_head(std::size_t new_classes) {
    if (new_classes == 0) throw ConfigError("expand_head: new_classes must be >= 1");
    Matrix grown(head_weight_.rows() + new_classes, head_weight_.cols());
    std::ranges::copy(head_weight_.data(), grown.data().begin());
    for (std::size_t r = head_weight_.rows(); r < grown.rows(); ++r)
      for (double& w : grown.row(r)) w = head_rng_.normal(0.0, shape_.head_init_std);
    head_weight_ = std::move(grown);
    head_bias_.resize(head_weight_.rows(), 0.0);
  }

  /// Fingerprint of every frozen W0 and bias value (the head is excluded).
  std::uint64_t frozen_fingerprint() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (const auto& l : layers_) h = fingerprint(l.bias, fingerprint(l.weight.data(), h));
    return h;
  }

  /// Output shape (d x k) of each adapted layer.
  std::vector<std::pair<std::size_t, std::size_t>> adapted_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> s;
    for (const auto& l : layers_) s.emplace_back(l.weight.rows(), l.weight.cols());
    return s;
  }

  Vector head_logits(std::span<const double> features) const {
    Vector z = matvec(head_weight_, features);
    for (std::size_t c = 0; c < z.size(); ++c) z[c] += head_bias_[c];
    return z;
  }

  /// Plain forward with the given per-layer weights substituted for W0.
  Vector forward_with_weights(std::span<const double> x, std::span<const Matrix> weights) const {
    if (weights.size() != layers_.size()) throw ShapeError("forward: layer count mismatch");
    Vector a(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (!weights[l].same_shape(layers_[l].weight)) {
        throw ShapeError("forward: layer " + std::to_string(l) + " expects " +
                         shape_string(layers_[l].weight) + ", got " + shape_string(weights[l]));
      }
      Vector z = matvec(weights[l], a);
      for (std::size_t i = 0; i < z.size(); ++i) a_relu(z[i], layers_[l].bias[i]);
      a = std::move(z);
    }
    return head_logits(a);
  }

  /// Frozen network with no adapter terms.
  Vector forward_plain(std::span<const double> x) const {
    std::vector<Matrix> w;
    w.reserve(layers_.size());
    for (const auto& l : layers_) w.push_back(l.weight);
    return forward_with_weights(x, w);
  }

  /// Plain forward with W0 + delta per layer.
  Vector forward_final(std::span<const double> x, std::span<const Matrix> merged_deltas) const {
    return forward_with_weights(x, merged_weights(merged_deltas));
  }

  std::vector<Matrix> merged_weights(std::span<const Matrix> merged_deltas) const {
    if (merged_deltas.size() != layers_.size()) {
      throw ShapeError("merged delta has " + std::to_string(merged_deltas.size()) +
                       " layers, backbone has " + std::to_string(layers_.size()));
    }
    std::vector<Matrix> w;
    w.reserve(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix m = layers_[l].weight;
      add_scaled(m, 1.0, merged_deltas[l]);
      w.push_back(std::move(m));
    }
    return w;
  }

  /// Training-time forward: each layer computes
  /// W0 x + sum_j alpha_Gj B_Gj (A_Gj x) + alpha_i B_i (A_i x) + bias, then ReLU.
  ForwardCache forward_train(std::span<const double> x, const ForwardContext& ctx) const {
    if (x.size() != shape_.input_dim) {
      throw ShapeError("forward_train: input has " + std::to_string(x.size()) +
                       " entries, expected " + std::to_string(shape_.input_dim));
    }
    check_context(ctx);
    ForwardCache cache;
    cache.layers.resize(layers_.size());
    Vector a(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      LayerCache& lc = cache.layers[l];
      lc.input = std::move(a);
      Vector z = matvec(layers_[l].weight, lc.input);
      if (ctx.groups != nullptr) {
        for (const auto& g : ctx.groups->groups) {
          const auto& ad = g.layers[l];
          Vector low = matvec(ad.A, lc.input);
          Vector term = matvec(ad.B, low);
          for (std::size_t i = 0; i < z.size(); ++i) z[i] += g.alpha * term[i];
          lc.group_low.push_back(std::move(low));
          lc.group_term.push_back(std::move(term));
        }
      }
      if (ctx.current != nullptr) {
        const auto& ad = ctx.current->layers[l];
        lc.current_low = matvec(ad.A, lc.input);
        lc.current_term = matvec(ad.B, lc.current_low);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += ctx.current->alpha * lc.current_term[i];
      }
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += layers_[l].bias[i];
      lc.pre = z;
      for (double& v : z) v = relu(v);
      lc.post = z;
      a = z;
    }
    cache.logits = head_logits(cache.layers.back().post);
    return cache;
  }

 private:
  static void a_relu(double& z, double bias) noexcept { z = relu(z + bias); }

  void check_adapter_layers(std::span<const LayerAdapter> adapter_layers, const char* what) const {
    if (adapter_layers.size() != layers_.size()) {
      throw ShapeError(std::string(what) + " has " + std::to_string(adapter_layers.size()) +
                       " layers, backbone has " + std::to_string(layers_.size()));
    }
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& ad = adapter_layers[l];
      ad.check();
      if (ad.B.rows() != layers_[l].weight.rows() || ad.A.cols() != layers_[l].weight.cols()) {
        throw ShapeError(std::string(what) + " layer " + std::to_string(l) + " is " +
                         std::to_string(ad.B.rows()) + "x" + std::to_string(ad.A.cols()) +
                         ", backbone layer is " + shape_string(layers_[l].weight));
      }
    }
  }

  void check_context(const ForwardContext& ctx) const {
    if (ctx.groups != nullptr)
      for (const auto& g : ctx.groups->groups) check_adapter_layers(g.layers, "group adapter");
    if (ctx.current != nullptr) check_adapter_layers(ctx.current->layers, "task adapter");
  }

  BackboneShape shape_;
  Rng head_rng_{0};
  std::vector<DenseLayer> layers_;
  Matrix head_weight_;
  Vector head_bias_;
};

/// Fresh task adapter: B ~ N(0, b_std^2), A = 0, so the initial delta is zero.
inline TaskAdapter init_task_adapter(const FrozenBackbone& backbone, std::uint32_t task_id,
                                     std::size_t rank, Rng rng, double b_std = 0.02) {
  if (rank == 0) throw ConfigError("adapter rank must be >= 1");
  TaskAdapter ad;
  ad.task_id = task_id;
  ad.alpha = 1.0;
  for (const auto& [d, k] : backbone.adapted_shapes()) {
    if (rank > std::min(d, k)) {
      throw ConfigError("adapter rank " + std::to_string(rank) + " exceeds min(d, k) = " +
                        std::to_string(std::min(d, k)));
    }
    Matrix B(d, rank);
    for (double& v : B.data()) v = rng.normal(0.0, b_std);
    ad.layers.emplace_back(std::move(B), Matrix(rank, k));
  }
  return ad;
}

}  // namespace ham
