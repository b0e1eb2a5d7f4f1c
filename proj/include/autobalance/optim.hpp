#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autobalance/linalg.hpp"

namespace autobalance {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void validate(bool bias_corrected) const {
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("Adam: beta1 must lie in [0, 1)");
    if (!(beta2 > 0.0 && beta2 <= 1.0)) throw std::invalid_argument("Adam: beta2 must lie in (0, 1]");
    if (bias_corrected && beta2 == 1.0)
      throw std::invalid_argument("Adam: beta2 = 1 makes the bias correction 1 - beta2^k vanish");
    if (eps < 0.0) throw std::invalid_argument("Adam: eps must be non-negative");
    if (weight_decay < 0.0) throw std::invalid_argument("Adam: weight decay must be non-negative");
  }
};

/// First/second moment accumulators of one adaptive optimizer.
struct AdamState {
  Vector m;
  Vector v;
  std::int64_t k = 0;

  static AdamState zeros(Eigen::Index dim) { return {Vector::Zero(dim), Vector::Zero(dim), 0}; }
};

/// One AdamState per loss term plus the shared hyperparameters.
struct MultiOptState {
  std::vector<AdamState> per_loss;
  AdamHyper hyper;

  static MultiOptState zeros(std::size_t n, Eigen::Index dim, AdamHyper hyper) {
    if (n == 0) throw std::invalid_argument("MultiOptState: need at least one loss");
    MultiOptState s;
    s.per_loss.assign(n, AdamState::zeros(dim));
    s.hyper = hyper;
    return s;
  }
};

/// Where ε enters the Adam denominator.
enum class EpsPlacement {
  InsideSqrt,  // m̂ / √(v̂ + ε)
  OutsideSqrt, // m̂ / (√v̂ + ε)
};

namespace detail {

inline void update_moments(AdamState& s, double beta1, double beta2, const Eigen::Ref<const Vector>& g) {
  s.m = beta1 * s.m + (1.0 - beta1) * g;
  s.v = beta2 * s.v + (1.0 - beta2) * g.cwiseProduct(g);
}

inline void bias_corrected_direction(const AdamState& s, const AdamHyper& h, EpsPlacement placement,
                                     Vector& direction) {
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(s.k));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(s.k));
  if (placement == EpsPlacement::InsideSqrt)
    direction = (s.m.array() / c1) / ((s.v.array() / c2) + h.eps).sqrt();
  else
    direction = (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + h.eps);
}

inline void check_grads(std::span<const Vector> grads, std::size_t n, Eigen::Index dim) {
  if (grads.size() != n)
    throw std::invalid_argument("optimizer: got " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(n) + " losses");
  for (const auto& g : grads) {
    if (g.size() != dim) throw std::invalid_argument("optimizer: gradient length does not match parameters");
    if (!g.allFinite()) throw std::invalid_argument("optimizer: non-finite gradient");
  }
}

} // namespace detail

/// Post-combine AdamW: each loss i keeps its own moments, the bias-corrected
/// directions d_i = m̂_i / √(v̂_i + ε) are averaged, and
/// w ← (1 − lr·γ) w − lr · mean_i d_i.
///
/// When `directions` is non-null it receives the per-loss d_i.
inline void auto_adamw_step(MultiOptState& state, std::span<const Vector> grads, ParamVector& w, double lr,
                            std::vector<Vector>* directions = nullptr) {
  state.hyper.validate(true);
  const std::size_t n = state.per_loss.size();
  detail::check_grads(grads, n, w.size());
  const std::int64_t k = state.per_loss.front().k;
  for (const auto& s : state.per_loss)
    if (s.k != k) throw std::logic_error("auto_adamw_step: per-loss step counters disagree");

  Vector mean = Vector::Zero(w.size());
  Vector d;
  if (directions) directions->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    AdamState& s = state.per_loss[i];
    s.k = k + 1;
    detail::update_moments(s, state.hyper.beta1, state.hyper.beta2, grads[i]);
    detail::bias_corrected_direction(s, state.hyper, EpsPlacement::InsideSqrt, d);
    mean += d;
    if (directions) (*directions)[i] = d;
  }
  mean /= static_cast<double>(n);
  w = (1.0 - lr * state.hyper.weight_decay) * w - lr * mean;
}

/// Single-optimizer AdamW (bias corrected) for pre-combined gradients.
inline void adamw_step(AdamState& state, const AdamHyper& hyper, const Eigen::Ref<const Vector>& grad, ParamVector& w,
                       double lr, EpsPlacement placement = EpsPlacement::InsideSqrt, Vector* direction = nullptr) {
  hyper.validate(true);
  if (grad.size() != w.size()) throw std::invalid_argument("adamw_step: gradient length does not match parameters");
  if (!grad.allFinite()) throw std::invalid_argument("adamw_step: non-finite gradient");
  state.k += 1;
  detail::update_moments(state, hyper.beta1, hyper.beta2, grad);
  Vector d;
  detail::bias_corrected_direction(state, hyper, placement, d);
  w = (1.0 - lr * hyper.weight_decay) * w - lr * d;
  if (direction) *direction = std::move(d);
}

/// Moments initialised from the gradient at w⁰: m⁰ = g⁰, v⁰ = g⁰ ⊙ g⁰. Every
/// coordinate of g⁰ must be nonzero since v⁰ later divides the update.
inline AdamState adam_nobias_init(const Eigen::Ref<const Vector>& grad0) {
  if (!grad0.allFinite()) throw std::invalid_argument("adam_nobias_init: non-finite initial gradient");
  AdamState s{grad0, grad0.cwiseProduct(grad0), 0};
  for (Eigen::Index j = 0; j < s.v.size(); ++j)
    if (s.v(j) == 0.0)
      throw std::domain_error("adam_nobias_init: initial gradient coordinate " + std::to_string(j) + " is zero");
  return s;
}

/// Adam without bias correction: m ← β1 m + (1−β1) g, v ← β2 v + (1−β2) g⊙g,
/// w ← w − η m / √v.
template <typename GradFn>
inline void adam_nobias_step(AdamState& state, double beta1, double beta2, GradFn&& grad_fn, ParamVector& w,
                             double eta) {
  const Vector g = grad_fn(static_cast<const ParamVector&>(w));
  if (g.size() != w.size()) throw std::invalid_argument("adam_nobias_step: gradient length does not match");
  state.k += 1;
  detail::update_moments(state, beta1, beta2, g);
  if ((state.v.array() <= 0.0).any()) throw std::domain_error("adam_nobias_step: zero second moment");
  w -= eta * (state.m.array() / state.v.array().sqrt()).matrix();
}

inline MultiOptState auto_adam_nobias_init(std::span<const Vector> grads0, double beta1, double beta2) {
  if (grads0.empty()) throw std::invalid_argument("auto_adam_nobias_init: need at least one loss");
  MultiOptState s;
  s.hyper.beta1 = beta1;
  s.hyper.beta2 = beta2;
  s.hyper.eps = 0.0;
  for (const auto& g : grads0) s.per_loss.push_back(adam_nobias_init(g));
  return s;
}

/// AutoAdam without bias correction: d_i = m_i / √v_i per loss, w ← w − η mean_i d_i.
/// `grad_fns[i]` maps w to ∇L_i(w).
template <typename GradFn>
inline void auto_adam_nobias_step(MultiOptState& state, std::span<const GradFn> grad_fns, ParamVector& w,
                                  double eta) {
  const std::size_t n = state.per_loss.size();
  if (grad_fns.size() != n) throw std::invalid_argument("auto_adam_nobias_step: one gradient function per loss");
  Vector mean = Vector::Zero(w.size());
  for (std::size_t i = 0; i < n; ++i) {
    AdamState& s = state.per_loss[i];
    const Vector g = grad_fns[i](static_cast<const ParamVector&>(w));
    if (g.size() != w.size()) throw std::invalid_argument("auto_adam_nobias_step: gradient length does not match");
    s.k += 1;
    detail::update_moments(s, state.hyper.beta1, state.hyper.beta2, g);
    if ((s.v.array() <= 0.0).any()) throw std::domain_error("auto_adam_nobias_step: zero second moment");
    mean += (s.m.array() / s.v.array().sqrt()).matrix();
  }
  w -= (eta / static_cast<double>(n)) * mean;
}

/// Linear warm-up followed by stepped exponential decay with a floor.
struct ScheduleSpec {
  double lr_start = 1e-4;
  double lr_peak = 1e-2;
  std::int64_t warmup_iters = 1500;
  double decay_factor = 0.75;
  std::int64_t decay_period = 1000;
  std::int64_t trigger_every = 50;
  double lr_floor = 5e-5;

  void validate() const {
    if (!(lr_start <= lr_peak)) throw std::invalid_argument("schedule: lr_start must not exceed lr_peak");
    if (!(lr_floor > 0.0)) throw std::invalid_argument("schedule: lr_floor must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw std::invalid_argument("schedule: decay_factor in (0,1]");
    if (warmup_iters < 0 || decay_period <= 0 || trigger_every <= 0)
      throw std::invalid_argument("schedule: bad iteration counts");
  }
};

/// Learning rate at iteration k. After warm-up the rate is multiplied by
/// decay_factor^(trigger_every/decay_period) every `trigger_every` steps, which
/// is exactly decay_factor per decay_period.
inline double lr_at(const ScheduleSpec& s, std::int64_t k) {
  if (k < 0) throw std::invalid_argument("lr_at: negative iteration");
  double lr;
  if (k <= s.warmup_iters) {
    lr = s.warmup_iters == 0 ? s.lr_peak
                             : s.lr_start + (s.lr_peak - s.lr_start) * static_cast<double>(k) /
                                                static_cast<double>(s.warmup_iters);
  } else {
    const std::int64_t triggers = (k - s.warmup_iters) / s.trigger_every;
    const double exponent =
        static_cast<double>(triggers * s.trigger_every) / static_cast<double>(s.decay_period);
    lr = s.lr_peak * std::pow(s.decay_factor, exponent);
  }
  return std::max(lr, s.lr_floor);
}

} // namespace autobalance
