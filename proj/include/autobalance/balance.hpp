#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autobalance/linalg.hpp"

namespace autobalance {

enum class BalanceMethod { EW, DWA, NTK, PCGrad, MGDA, IMTLG, ConFIG };

inline std::string to_string(BalanceMethod m) {
  switch (m) {
    case BalanceMethod::EW: return "EW";
    case BalanceMethod::DWA: return "DWA";
    case BalanceMethod::NTK: return "NTK";
    case BalanceMethod::PCGrad: return "PCGrad";
    case BalanceMethod::MGDA: return "MGDA";
    case BalanceMethod::IMTLG: return "IMTLG";
    case BalanceMethod::ConFIG: return "ConFIG";
  }
  return "?";
}

/// Loss-weighting methods scale the per-loss gradients; the others rewrite them.
inline bool is_weighting(BalanceMethod m) {
  return m == BalanceMethod::EW || m == BalanceMethod::DWA || m == BalanceMethod::NTK;
}

namespace detail {

inline void check_grad_list(std::span<const Vector> grads, std::size_t min_n, const char* who) {
  if (grads.size() < min_n)
    throw std::invalid_argument(std::string(who) + ": need at least " + std::to_string(min_n) + " gradients");
  for (const auto& g : grads)
    if (g.size() != grads.front().size()) throw std::invalid_argument(std::string(who) + ": gradient lengths differ");
}

inline Matrix stack_columns(std::span<const Vector> grads) {
  Matrix g(grads.front().size(), static_cast<Eigen::Index>(grads.size()));
  for (std::size_t i = 0; i < grads.size(); ++i) g.col(static_cast<Eigen::Index>(i)) = grads[i];
  return g;
}

} // namespace detail

inline Vector ew_weights(std::size_t n) {
  if (n == 0) throw std::invalid_argument("ew_weights: n must be positive");
  return Vector::Ones(static_cast<Eigen::Index>(n));
}

/// Dynamic weight averaging: w_i = n softmax(r_i / T), r_i = L_i(t-1)/L_i(t-2).
/// `history[i]` holds past loss values of task i, oldest first; fewer than two
/// entries falls back to equal weights.
inline Vector dwa_weights(const std::vector<std::deque<double>>& history, double temperature = 2.0) {
  const std::size_t n = history.size();
  if (n == 0) throw std::invalid_argument("dwa_weights: no tasks");
  if (!(temperature > 0.0)) throw std::invalid_argument("dwa_weights: temperature must be positive");
  for (const auto& h : history)
    if (h.size() < 2) return ew_weights(n);
  Vector r(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& h = history[i];
    const double prev = h[h.size() - 1];
    const double prev2 = h[h.size() - 2];
    r(static_cast<Eigen::Index>(i)) = prev2 == 0.0 ? 1.0 : prev / prev2;
  }
  const Vector z = r / temperature;
  const Vector e = (z.array() - z.maxCoeff()).exp().matrix();
  return static_cast<double>(n) * e / e.sum();
}

/// Trace-based NTK weights λ_i = (Σ_k tr K_k) / tr K_i.
inline Vector ntk_weights(const Eigen::Ref<const Vector>& traces) {
  if (traces.size() == 0) throw std::invalid_argument("ntk_weights: no tasks");
  for (Eigen::Index i = 0; i < traces.size(); ++i)
    if (!(traces(i) > 0.0) || !std::isfinite(traces(i)))
      throw std::domain_error("ntk_weights: task " + std::to_string(i) + " has a degenerate kernel trace");
  return traces.sum() * traces.cwiseInverse();
}

struct PCGradResult {
  Vector combined;
  std::vector<Vector> surgered;
};

/// Gradient surgery: every task gradient is projected, in a random order of its
/// peers, off each original peer gradient it conflicts with.
inline PCGradResult pcgrad_detailed(std::span<const Vector> grads, std::mt19937_64& rng) {
  detail::check_grad_list(grads, 2, "pcgrad");
  const std::size_t n = grads.size();
  PCGradResult out;
  out.surgered.assign(grads.begin(), grads.end());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector& gi = out.surgered[i];
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j : order) {
      if (j == i) continue;
      const Vector& gj = grads[j];
      const double dot = gi.dot(gj);
      const double nn = gj.squaredNorm();
      if (dot < 0.0 && nn > 0.0) gi -= (dot / nn) * gj;
    }
  }
  out.combined = Vector::Zero(grads.front().size());
  for (const auto& g : out.surgered) out.combined += g;
  return out;
}

inline Vector pcgrad(std::span<const Vector> grads, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return pcgrad_detailed(grads, rng).combined;
}

struct MgdaResult {
  Vector combined;
  Vector alpha;
  int iterations = 0;
};

/// Minimum-norm point of the convex hull of the gradients.
inline MgdaResult mgda_detailed(std::span<const Vector> grads, int max_iters = 100, double tol = 1e-10) {
  detail::check_grad_list(grads, 2, "mgda");
  const std::size_t n = grads.size();
  const Matrix g = detail::stack_columns(grads);
  const Matrix gram = g.transpose() * g;
  MgdaResult out;
  out.alpha = Vector::Zero(static_cast<Eigen::Index>(n));

  if (gram.diagonal().maxCoeff() == 0.0) {
    out.alpha.setConstant(1.0 / static_cast<double>(n));
    out.combined = Vector::Zero(g.rows());
    return out;
  }

  // Closed form for a segment [g1, g2]: α = clamp(g2·(g2 − g1) / ‖g1 − g2‖², 0, 1).
  auto segment = [](double g11, double g12, double g22) {
    const double denom = g11 - 2.0 * g12 + g22;
    if (denom <= 0.0) return 0.5;
    return std::clamp((g22 - g12) / denom, 0.0, 1.0);
  };

  if (n == 2) {
    const double a = segment(gram(0, 0), gram(0, 1), gram(1, 1));
    out.alpha << a, 1.0 - a;
  } else {
    Eigen::Index start = 0;
    gram.diagonal().minCoeff(&start);
    out.alpha(start) = 1.0;
    for (int it = 0; it < max_iters; ++it) {
      out.iterations = it + 1;
      const Vector grad_alpha = gram * out.alpha;
      Eigen::Index t = 0;
      grad_alpha.minCoeff(&t);
      // Line search between the current point and vertex t.
      const double aa = out.alpha.dot(grad_alpha);
      const double at = grad_alpha(t);
      const double tt = gram(t, t);
      const double gamma = segment(tt, at, aa); // weight on the vertex
      const Vector next = (1.0 - gamma) * out.alpha + gamma * Vector::Unit(static_cast<Eigen::Index>(n), t);
      const double change = (next - out.alpha).lpNorm<1>();
      out.alpha = next;
      if (change < tol) break;
    }
  }
  out.combined = g * out.alpha;
  return out;
}

inline Vector mgda(std::span<const Vector> grads) { return mgda_detailed(grads).combined; }

struct ImtlgResult {
  Vector combined;
  Vector alpha;
  bool fallback = false; // singular system: plain sum returned
};

/// IMTL-G: g = Σ α_i g_i with Σ α_i = 1 and equal projections g·u_i.
inline ImtlgResult imtlg_detailed(std::span<const Vector> grads) {
  detail::check_grad_list(grads, 2, "imtlg");
  const std::size_t n = grads.size();
  const Eigen::Index ni = static_cast<Eigen::Index>(n);
  const Matrix g = detail::stack_columns(grads);
  ImtlgResult out;
  auto fallback = [&] {
    out.fallback = true;
    out.alpha = Vector::Ones(ni);
    out.combined = g.rowwise().sum();
    return out;
  };

  Matrix u(g.rows(), ni);
  for (Eigen::Index i = 0; i < ni; ++i) {
    const double norm = g.col(i).norm();
    if (norm == 0.0) return fallback();
    u.col(i) = g.col(i) / norm;
  }
  // Rows (u_i − u_n)ᵀ G α = 0 for i < n, plus Σ α = 1.
  Matrix sys(ni, ni);
  Vector rhs = Vector::Zero(ni);
  for (Eigen::Index i = 0; i + 1 < ni; ++i) sys.row(i) = (u.col(i) - u.col(ni - 1)).transpose() * g;
  sys.row(ni - 1).setOnes();
  rhs(ni - 1) = 1.0;

  Eigen::FullPivLU<Matrix> lu(sys);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) return fallback();
  out.alpha = lu.solve(rhs);
  if (!out.alpha.allFinite()) return fallback();
  out.combined = g * out.alpha;
  return out;
}

inline Vector imtlg(std::span<const Vector> grads) { return imtlg_detailed(grads).combined; }

struct ConfigResult {
  Vector combined;
  Vector direction; // unit g_u, zero when undefined
};

/// ConFIG: g_u ∝ Uᵀ(UUᵀ)⁺ 1 for the stacked unit gradients U, scaled by Σ g_i·g_u.
inline ConfigResult config_detailed(std::span<const Vector> grads) {
  detail::check_grad_list(grads, 2, "config_combine");
  const Eigen::Index ni = static_cast<Eigen::Index>(grads.size());
  const Eigen::Index dim = grads.front().size();
  Matrix u(ni, dim);
  for (Eigen::Index i = 0; i < ni; ++i) {
    const double norm = grads[static_cast<std::size_t>(i)].norm();
    if (norm > 0.0) u.row(i) = grads[static_cast<std::size_t>(i)].transpose() / norm;
    else u.row(i).setZero();
  }
  ConfigResult out;
  const Vector v = u.transpose() * (psd_pseudoinverse(u * u.transpose()) * Vector::Ones(ni));
  const double vn = v.norm();
  // Consistent systems give ‖v‖ ≥ 1/√n; anything near zero is the degenerate projection.
  if (!(vn > 1e-12)) {
    out.direction = Vector::Zero(dim);
    out.combined = Vector::Zero(dim);
    return out;
  }
  out.direction = v / vn;
  double magnitude = 0.0;
  for (const auto& g : grads) magnitude += g.dot(out.direction);
  out.combined = magnitude * out.direction;
  return out;
}

inline Vector config_combine(std::span<const Vector> grads) { return config_detailed(grads).combined; }

/// Mutable balancing state owned by the training loop.
struct BalancerState {
  BalanceMethod method = BalanceMethod::EW;
  Vector weights;
  std::vector<std::deque<double>> loss_history;
  std::int64_t recompute_period = 1000;
  std::mt19937_64 rng;
  bool last_fallback = false;

  BalancerState(BalanceMethod m, std::size_t n, std::uint64_t seed, std::int64_t period = 1000)
      : method(m), weights(ew_weights(n)), loss_history(n), recompute_period(period), rng(seed) {
    if (period <= 0) throw std::invalid_argument("BalancerState: recompute period must be positive");
  }

  void record_losses(std::span<const double> losses) {
    if (losses.size() != loss_history.size()) throw std::invalid_argument("BalancerState: wrong number of losses");
    for (std::size_t i = 0; i < losses.size(); ++i) {
      loss_history[i].push_back(losses[i]);
      while (loss_history[i].size() > 2) loss_history[i].pop_front();
    }
  }

  /// Combines (already λ-weighted) per-loss gradients into one.
  Vector combine(std::span<const Vector> grads) {
    detail::check_grad_list(grads, 1, "combine");
    last_fallback = false;
    if (is_weighting(method)) {
      Vector out = Vector::Zero(grads.front().size());
      for (std::size_t i = 0; i < grads.size(); ++i) out += weights(static_cast<Eigen::Index>(i)) * grads[i];
      return out;
    }
    if (grads.size() == 1) return grads.front();
    switch (method) {
      case BalanceMethod::PCGrad: return pcgrad_detailed(grads, rng).combined;
      case BalanceMethod::MGDA: return mgda(grads);
      case BalanceMethod::IMTLG: {
        auto r = imtlg_detailed(grads);
        last_fallback = r.fallback;
        return r.combined;
      }
      case BalanceMethod::ConFIG: return config_combine(grads);
      default: break;
    }
    throw std::logic_error("BalancerState: unhandled method");
  }
};

} // namespace autobalance
