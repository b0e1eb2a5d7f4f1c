#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

#include "autobalance/linalg.hpp"
#include "autobalance/loss.hpp"

namespace autobalance {

enum class Preconditioner { None, AdamV, AutoBalanceV };

inline std::string to_string(Preconditioner p) {
  switch (p) {
    case Preconditioner::None: return "none";
    case Preconditioner::AdamV: return "adam";
    case Preconditioner::AutoBalanceV: return "autobalance";
  }
  return "?";
}

struct SpectrumRecord {
  std::string loss_name;
  std::int64_t step = 0;
  Preconditioner preconditioner = Preconditioner::None;
  Vector eigenvalues; // ascending
};

struct HessianResult {
  Matrix h;              // symmetrised
  double asymmetry = 0;  // max |H − Hᵀ| before symmetrising
  double max_abs = 0;    // max |H| before symmetrising
};

/// Hessian by central differences of the exact gradient, column by column,
/// with step δ_j = 1e-4 (1 + |w_j|).
inline HessianResult hessian_detailed(const LossComponent& loss, const ParamVector& params,
                                      std::size_t max_params = 5000) {
  const Eigen::Index p = params.size();
  if (static_cast<std::size_t>(p) > max_params)
    throw std::invalid_argument("hessian: " + std::to_string(p) + " parameters exceeds the limit of " +
                                std::to_string(max_params));
  if (static_cast<std::size_t>(p) != loss.param_count())
    throw std::invalid_argument("hessian: parameter vector has wrong length");
  Matrix h(p, p);
  ParamVector w = params;
  ParamVector gp, gm;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double orig = w(j);
    const double delta = 1e-4 * (1.0 + std::abs(orig));
    w(j) = orig + delta;
    loss.value_grad(w, gp);
    w(j) = orig - delta;
    loss.value_grad(w, gm);
    w(j) = orig;
    h.col(j) = (gp - gm) / (2.0 * delta);
  }
  if (!h.allFinite()) throw NonFiniteError("hessian: non-finite entry in loss '" + loss.name() + "'");
  HessianResult out;
  out.asymmetry = (h - h.transpose()).cwiseAbs().maxCoeff();
  out.max_abs = h.cwiseAbs().maxCoeff();
  out.h = 0.5 * (h + h.transpose());
  return out;
}

inline Matrix hessian(const LossComponent& loss, const ParamVector& params) {
  return hessian_detailed(loss, params).h;
}

/// Eigenvalues of D^{-1/2} H D^{-1/2} with D = diag(√v + ε).
inline Vector preconditioned_spectrum(const Eigen::Ref<const Matrix>& h, const Eigen::Ref<const Vector>& v,
                                      double eps) {
  if (h.rows() != h.cols() || h.rows() != v.size())
    throw std::invalid_argument("preconditioned_spectrum: shapes do not match");
  if ((v.array() < 0.0).any()) throw std::invalid_argument("preconditioned_spectrum: negative second moment");
  const Vector scale = (v.array().sqrt() + eps).rsqrt().matrix();
  if (!scale.allFinite()) throw std::domain_error("preconditioned_spectrum: zero preconditioner entry");
  const Matrix m = scale.asDiagonal() * h * scale.asDiagonal();
  return symmetric_eigenvalues(m);
}

/// λmax / min{λ : λ > τ λmax}.
inline double effective_condition_number(const Eigen::Ref<const Vector>& eigenvalues, double tau = 1e-6) {
  if (eigenvalues.size() == 0) throw std::invalid_argument("effective_condition_number: empty spectrum");
  const double top = eigenvalues.maxCoeff();
  if (!(top > 0.0)) throw std::domain_error("effective_condition_number: no positive eigenvalue");
  double low = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
    if (eigenvalues(i) > tau * top) low = std::min(low, eigenvalues(i));
  if (!std::isfinite(low)) throw std::domain_error("effective_condition_number: no eigenvalue above threshold");
  return top / low;
}

struct StepDiagnostics {
  std::int64_t step = 0;
  double raw_grad_norm_ratio = std::numeric_limits<double>::quiet_NaN();
  double update_norm_ratio = std::numeric_limits<double>::quiet_NaN();
  double raw_cosine = std::numeric_limits<double>::quiet_NaN();
  double update_cosine = std::numeric_limits<double>::quiet_NaN();
};

inline double norm_ratio(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return na / nb;
}

/// Interior-over-boundary norm ratios and cosines of raw gradients and of the
/// per-loss update directions. Zero vectors give NaN entries.
inline StepDiagnostics step_diagnostics(std::span<const Vector> grads, std::span<const Vector> updates,
                                        std::int64_t step = 0) {
  if (grads.size() != 2 || updates.size() != 2)
    throw std::invalid_argument("step_diagnostics: expects exactly two losses");
  StepDiagnostics d;
  d.step = step;
  d.raw_grad_norm_ratio = norm_ratio(grads[0], grads[1]);
  d.update_norm_ratio = norm_ratio(updates[0], updates[1]);
  d.raw_cosine = cosine_similarity(grads[0], grads[1]);
  d.update_cosine = cosine_similarity(updates[0], updates[1]);
  return d;
}

} // namespace autobalance
