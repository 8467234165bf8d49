#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ham/adapters.hpp"
#include "ham/backbone.hpp"
#include "ham/rng.hpp"
#include "ham/tasks.hpp"

namespace ham {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// View of one trainable tensor and its gradient for an optimizer step.
struct ParamRef {
  std::span<double> value;
  std::span<const double> grad;
  bool decay = false;
};

/// AdamW with decoupled weight decay. Moment buffers are allocated per parameter
/// slot on the first step and must keep the same shapes afterwards.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const noexcept { return cfg_; }
  std::uint64_t step_count() const noexcept { return steps_; }
  std::span<const std::vector<double>> first_moments() const noexcept { return m_; }
  std::span<const std::vector<double>> second_moments() const noexcept { return v_; }

  void step(std::span<const ParamRef> params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.size(), 0.0);
        v_.emplace_back(p.value.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ShapeError("AdamW: parameter slot count changed");
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t s = 0; s < params.size(); ++s) {
      const auto& p = params[s];
      if (p.value.size() != m_[s].size() || p.grad.size() != p.value.size()) {
        throw ShapeError("AdamW: parameter slot " + std::to_string(s) + " changed shape");
      }
      auto& m = m_[s];
      auto& v = v_[s];
      const double decay = p.decay ? cfg_.lr * cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        p.value[i] -= decay * p.value[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Gradients of the trainable set: current adapter factors and alpha, group alphas, head.
struct Gradients {
  std::vector<LayerAdapter> current;  // dB, dA per layer
  double alpha = 0.0;
  Vector group_alphas;
  Matrix head_weight;
  Vector head_bias;
};

struct LossAndGradients {
  double loss = 0.0;
  Gradients grads;
};

/// Mean masked cross-entropy over `batch` and its gradients. Only the logits listed in
/// `active_classes` take part in the softmax; the rest are treated as -inf.
inline LossAndGradients loss_and_gradients(const FrozenBackbone& backbone,
                                           const ForwardContext& ctx,
                                           std::span<const Example* const> batch,
                                           std::span<const std::uint32_t> active_classes) {
  if (batch.empty()) throw InputError("loss_and_gradients: empty batch");
  if (active_classes.empty()) throw InputError("loss_and_gradients: no active classes");
  for (auto c : active_classes) {
    if (c >= backbone.num_classes()) {
      throw InputError("class id " + std::to_string(c) + " is not covered by the head");
    }
  }

  const std::size_t L = backbone.num_layers();
  const std::size_t M = ctx.groups != nullptr ? ctx.groups->size() : 0;
  LossAndGradients out;
  Gradients& g = out.grads;
  if (ctx.current != nullptr) {
    for (const auto& l : ctx.current->layers)
      g.current.emplace_back(Matrix(l.B.rows(), l.B.cols()), Matrix(l.A.rows(), l.A.cols()));
  }
  g.group_alphas.assign(M, 0.0);
  g.head_weight = Matrix(backbone.head_weight().rows(), backbone.head_weight().cols());
  g.head_bias.assign(backbone.num_classes(), 0.0);

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  Vector probs(active_classes.size());
  for (const Example* ex : batch) {
    if (std::ranges::find(active_classes, ex->label) == active_classes.end()) {
      throw InputError("label " + std::to_string(ex->label) + " is outside the active classes");
    }
    const ForwardCache cache = backbone.forward_train(ex->x, ctx);

    double zmax = -std::numeric_limits<double>::infinity();
    for (auto c : active_classes) zmax = std::max(zmax, cache.logits[c]);
    double denom = 0.0;
    for (std::size_t i = 0; i < active_classes.size(); ++i) {
      probs[i] = std::exp(cache.logits[active_classes[i]] - zmax);
      denom += probs[i];
    }
    Vector dlogits(backbone.num_classes(), 0.0);
    for (std::size_t i = 0; i < active_classes.size(); ++i) {
      const auto c = active_classes[i];
      probs[i] /= denom;
      if (c == ex->label) out.loss -= (cache.logits[c] - zmax - std::log(denom)) * inv_n;
      dlogits[c] = (probs[i] - (c == ex->label ? 1.0 : 0.0)) * inv_n;
    }

    const Vector& features = cache.features();
    for (auto c : active_classes) {
      auto row = g.head_weight.row(c);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += dlogits[c] * features[j];
      g.head_bias[c] += dlogits[c];
    }

    Vector da = matvec_transposed(backbone.head_weight(), dlogits);
    for (std::size_t l = L; l-- > 0;) {
      const LayerCache& lc = cache.layers[l];
      Vector dz(da.size());
      for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = lc.pre[i] > 0.0 ? da[i] : 0.0;

      Vector dinput;
      if (l > 0) dinput = matvec_transposed(backbone.layers()[l].weight, dz);

      for (std::size_t j = 0; j < M; ++j) {
        const auto& grp = ctx.groups->groups[j];
        g.group_alphas[j] += dot(dz, lc.group_term[j]);
        if (l > 0) {
          const Vector up = matvec_transposed(grp.layers[l].B, dz);
          const Vector back = matvec_transposed(grp.layers[l].A, up);
          for (std::size_t i = 0; i < dinput.size(); ++i) dinput[i] += grp.alpha * back[i];
        }
      }

      if (ctx.current != nullptr) {
        const auto& ad = ctx.current->layers[l];
        const double alpha = ctx.current->alpha;
        g.alpha += dot(dz, lc.current_term);
        add_outer(g.current[l].B, alpha, dz, lc.current_low);
        Vector up = matvec_transposed(ad.B, dz);  // B^T dz
        add_outer(g.current[l].A, alpha, up, lc.input);
        if (l > 0) {
          const Vector back = matvec_transposed(ad.A, up);
          for (std::size_t i = 0; i < dinput.size(); ++i) dinput[i] += alpha * back[i];
        }
      }
      da = std::move(dinput);
    }
  }
  if (!ctx.group_alphas_trainable) std::ranges::fill(g.group_alphas, 0.0);
  return out;
}

struct GradientCheck {
  std::string tensor;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
};

/// Central-difference check of every trainable tensor. Relative error per entry is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline std::vector<GradientCheck> audit_gradients(const FrozenBackbone& backbone, const GroupRegistry* groups,
                                                  const TaskAdapter& current,
                                                  std::span<const Example* const> batch,
                                                  std::span<const std::uint32_t> active_classes,
                                                  double step = 1e-5, double floor = 1e-6) {
  FrozenBackbone bb = backbone;
  GroupRegistry reg = groups != nullptr ? *groups : GroupRegistry{};
  TaskAdapter cur = current;
  const ForwardContext ctx{groups != nullptr ? &reg : nullptr, &cur, true};
  const Gradients g = loss_and_gradients(bb, ctx, batch, active_classes).grads;

  auto loss = [&] { return loss_and_gradients(bb, ctx, batch, active_classes).loss; };
  auto check = [&](std::string name, std::span<double> values, std::span<const double> analytic) {
    GradientCheck c{std::move(name), values.size(), 0.0};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = loss();
      values[i] = saved - step;
      const double down = loss();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), floor});
      c.max_rel_error = std::max(c.max_rel_error, std::fabs(analytic[i] - numeric) / denom);
    }
    return c;
  };

  std::vector<GradientCheck> out;
  for (std::size_t l = 0; l < cur.layers.size(); ++l) {
    out.push_back(check("B[" + std::to_string(l) + "]", cur.layers[l].B.data(), g.current[l].B.data()));
    out.push_back(check("A[" + std::to_string(l) + "]", cur.layers[l].A.data(), g.current[l].A.data()));
  }
  out.push_back(check("alpha", std::span<double>(&cur.alpha, 1), std::span<const double>(&g.alpha, 1)));
  for (std::size_t j = 0; j < reg.size(); ++j) {
    out.push_back(check("group_alpha[" + std::to_string(j) + "]", std::span<double>(&reg.groups[j].alpha, 1),
                        std::span<const double>(&g.group_alphas[j], 1)));
  }
  for (auto c : active_classes) {
    out.push_back(check("head_weight[" + std::to_string(c) + "]", bb.head_weight().row(c), g.head_weight.row(c)));
    out.push_back(check("head_bias[" + std::to_string(c) + "]", std::span<double>(&bb.head_bias()[c], 1),
                        std::span<const double>(&g.head_bias[c], 1)));
  }
  return out;
}

/// Hyperparameters of one task's optimization.
struct TrainConfig {
  AdamWConfig optimizer{};
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  bool train_alpha = true;
  bool train_group_alphas = true;
};

struct TrainReport {
  double final_loss = 0.0;
  std::vector<double> epoch_losses;
  TaskAdapter adapter;
  Vector group_alphas;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// Optimize `adapter`, its alpha, every group alpha in `registry` and the head rows of
/// the task's classes. Group matrices and W0 are never written.
inline TrainReport train_task(const TaskDataset& dataset, FrozenBackbone& backbone,
                              GroupRegistry* registry, TaskAdapter adapter,
                              const TrainConfig& cfg, Rng rng,
                              const EpochCallback& on_epoch = {}) {
  if (dataset.train.empty()) throw InputError("train_task: task " + std::to_string(dataset.task_id) +
                                              " has no training examples");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  for (const auto& e : dataset.train) {
    if (!std::ranges::all_of(e.x, [](double v) { return std::isfinite(v); })) {
      throw InputError("train_task: task " + std::to_string(dataset.task_id) + " has a non-finite feature");
    }
  }
  for (auto c : dataset.class_ids) {
    if (c >= backbone.num_classes()) {
      throw InputError("train_task: class " + std::to_string(c) + " has no head row");
    }
  }

  AdamW opt(cfg.optimizer);
  std::vector<const Example*> order;
  order.reserve(dataset.train.size());
  for (const auto& e : dataset.train) order.push_back(&e);

  ForwardContext ctx{registry, &adapter, cfg.train_group_alphas};
  const std::size_t M = registry != nullptr ? registry->size() : 0;
  Vector group_alphas(M);
  for (std::size_t j = 0; j < M; ++j) group_alphas[j] = registry->groups[j].alpha;

  TrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<const Example*>(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const Example* const> batch(order.data() + start, end - start);
      auto [loss, grads] = loss_and_gradients(backbone, ctx, batch, dataset.class_ids);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss on task " + std::to_string(dataset.task_id) +
                            " epoch " + std::to_string(epoch));
      }
      epoch_loss += loss * static_cast<double>(batch.size());

      std::vector<ParamRef> params;
      for (std::size_t l = 0; l < adapter.layers.size(); ++l) {
        params.push_back({adapter.layers[l].B.data(), grads.current[l].B.data(), true});
        params.push_back({adapter.layers[l].A.data(), grads.current[l].A.data(), true});
      }
      double alpha_grad = cfg.train_alpha ? grads.alpha : 0.0;
      params.push_back({std::span<double>(&adapter.alpha, 1), std::span<const double>(&alpha_grad, 1), false});
      if (cfg.train_group_alphas && M > 0) {
        params.push_back({group_alphas, grads.group_alphas, false});
      }
      for (auto c : dataset.class_ids) {
        params.push_back({backbone.head_weight().row(c), grads.head_weight.row(c), false});
        params.push_back({std::span<double>(&backbone.head_bias()[c], 1),
                          std::span<const double>(&grads.head_bias[c], 1), false});
      }
      opt.step(params);
      for (std::size_t j = 0; j < M; ++j) registry->groups[j].alpha = group_alphas[j];
    }
    epoch_loss /= static_cast<double>(order.size());
    report.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  report.final_loss = report.epoch_losses.empty() ? 0.0 : report.epoch_losses.back();
  report.adapter = std::move(adapter);
  report.group_alphas = std::move(group_alphas);
  return report;
}

}  // namespace ham
