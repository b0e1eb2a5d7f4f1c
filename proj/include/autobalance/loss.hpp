#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "autobalance/linalg.hpp"

namespace autobalance {

/// Raised when a loss value or gradient stops being finite.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::optional<std::int64_t> step = std::nullopt)
      : std::runtime_error(what), step_(step) {}

  std::optional<std::int64_t> step() const { return step_; }

 private:
  std::optional<std::int64_t> step_;
};

/// A named scalar objective over a flat parameter vector.
///
/// Implementations may keep mutable scratch buffers, so a single instance must
/// not be evaluated from two threads at once.
class LossComponent {
 public:
  virtual ~LossComponent() = default;

  virtual std::string name() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual double value(const ParamVector& w) const = 0;

  /// Returns the value and writes the exact gradient into `grad` (resized).
  virtual double value_grad(const ParamVector& w, ParamVector& grad) const = 0;

  /// Σ_j ||∇_w f_j||² over the per-point terms f_j whose mean square is this
  /// loss: the trace of the loss's neural tangent kernel. Empty when the loss
  /// has no per-point structure.
  virtual std::optional<double> ntk_trace(const ParamVector&) const { return std::nullopt; }
};

struct ValueGrad {
  double value = 0.0;
  ParamVector grad;
};

inline ValueGrad loss_value_grad(const LossComponent& loss, const ParamVector& params,
                                 std::optional<std::int64_t> step = std::nullopt) {
  if (static_cast<std::size_t>(params.size()) != loss.param_count())
    throw std::invalid_argument("loss '" + loss.name() + "': parameter vector has wrong length");
  ValueGrad out;
  out.value = loss.value_grad(params, out.grad);
  if (!std::isfinite(out.value) || !out.grad.allFinite()) {
    std::ostringstream msg;
    msg << "loss '" << loss.name() << "' is not finite (value " << out.value << ")";
    if (step) msg << " at step " << *step;
    throw NonFiniteError(msg.str(), step);
  }
  return out;
}

/// Central-difference gradient, one coordinate at a time.
inline ParamVector finite_diff_grad(const LossComponent& loss, const ParamVector& params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  ParamVector w = params;
  ParamVector g(params.size());
  for (Eigen::Index j = 0; j < params.size(); ++j) {
    const double orig = w(j);
    w(j) = orig + step;
    const double plus = loss.value(w);
    w(j) = orig - step;
    const double minus = loss.value(w);
    w(j) = orig;
    g(j) = (plus - minus) / (2.0 * step);
  }
  return g;
}

/// ½ wᵀ H w with a fixed symmetric H.
class QuadraticLoss final : public LossComponent {
 public:
  QuadraticLoss(std::string name, Matrix hessian) : name_(std::move(name)), hessian_(std::move(hessian)) {
    if (hessian_.rows() != hessian_.cols()) throw std::invalid_argument("QuadraticLoss: Hessian must be square");
  }

  static QuadraticLoss half_squared_norm(std::size_t dim) {
    return QuadraticLoss("half_squared_norm", Matrix::Identity(static_cast<Eigen::Index>(dim),
                                                               static_cast<Eigen::Index>(dim)));
  }

  std::string name() const override { return name_; }
  std::size_t param_count() const override { return static_cast<std::size_t>(hessian_.rows()); }
  double value(const ParamVector& w) const override { return 0.5 * w.dot(hessian_ * w); }

  double value_grad(const ParamVector& w, ParamVector& grad) const override {
    grad = hessian_ * w;
    return 0.5 * w.dot(grad);
  }

  const Matrix& hessian() const { return hessian_; }

 private:
  std::string name_;
  Matrix hessian_;
};

/// Multiplies another loss by a positive constant.
class ScaledLoss final : public LossComponent {
 public:
  ScaledLoss(const LossComponent& inner, double scale) : inner_(inner), scale_(scale) {}

  std::string name() const override { return inner_.name(); }
  std::size_t param_count() const override { return inner_.param_count(); }
  double value(const ParamVector& w) const override { return scale_ * inner_.value(w); }

  double value_grad(const ParamVector& w, ParamVector& grad) const override {
    const double v = inner_.value_grad(w, grad);
    grad *= scale_;
    return scale_ * v;
  }

 private:
  const LossComponent& inner_;
  double scale_;
};

} // namespace autobalance
