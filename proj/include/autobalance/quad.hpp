#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "autobalance/linalg.hpp"
#include "autobalance/optim.hpp"

namespace autobalance {

/// L1(w) = ½ wᵀw and L2(w) = ½ wᵀAᵀAw with the quantities both theorems use.
struct QuadraticProblem {
  Matrix A;
  Vector w0;
  Matrix AtA;
  Vector d1; // |∇L1(w0)| = |w0|
  Vector d2; // |∇L2(w0)| = |AᵀA w0|
  Matrix W;  // D2 D1⁻¹ + AᵀA

  Eigen::Index dim() const { return w0.size(); }
  Matrix W_adam() const { return Matrix::Identity(dim(), dim()) + AtA; }
  Vector adam_d() const { return (W_adam() * w0).cwiseAbs(); }

  static QuadraticProblem from(Matrix a, Vector w0) {
    if (a.rows() != a.cols() || a.cols() != w0.size() || w0.size() == 0)
      throw std::invalid_argument("QuadraticProblem: A must be square and match w0");
    QuadraticProblem p;
    p.A = std::move(a);
    p.w0 = std::move(w0);
    p.AtA = p.A.transpose() * p.A;
    p.AtA = 0.5 * (p.AtA + p.AtA.transpose());
    p.d1 = p.w0.cwiseAbs();
    p.d2 = (p.AtA * p.w0).cwiseAbs();
    const Vector da = p.adam_d();
    for (Eigen::Index j = 0; j < p.dim(); ++j)
      if (p.d1(j) == 0.0 || p.d2(j) == 0.0 || da(j) == 0.0)
        throw std::domain_error("QuadraticProblem: initial gradient has a zero coordinate");
    p.W = (p.d2.array() / p.d1.array()).matrix().asDiagonal();
    p.W += p.AtA;
    return p;
  }
};

enum class InitMode {
  Gaussian,    // w0 ~ N(0, I)
  NearUniform, // |∇L1(w0)|, |∇L2(w0)| nearly constant across coordinates
};

namespace detail {

inline Matrix random_orthogonal(Eigen::Index d, std::mt19937_64& rng, const Vector* first_column = nullptr) {
  std::normal_distribution<double> n01;
  Matrix m(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) m(i, j) = n01(rng);
  if (first_column) m.col(0) = *first_column;
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  // Fix column signs so the factor is a deterministic function of m.
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

} // namespace detail

/// Random instance with κ(AᵀA) = target_kappa: singular values of A are
/// log-uniform in [1, √target_kappa] with both ends attained.
inline QuadraticProblem make_problem(Eigen::Index d, double target_kappa, std::uint64_t seed,
                                     InitMode mode = InitMode::Gaussian) {
  if (d < 1) throw std::invalid_argument("make_problem: d must be positive");
  if (!(target_kappa >= 1.0)) throw std::invalid_argument("make_problem: target_kappa must be at least 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01;

  const double top = std::sqrt(target_kappa);
  Vector s(d);
  for (Eigen::Index i = 0; i < d; ++i) s(i) = std::pow(top, u01(rng));
  s(0) = top;
  if (d > 1) s(d - 1) = 1.0;

  Vector signs(d);
  for (Eigen::Index i = 0; i < d; ++i) signs(i) = u01(rng) < 0.5 ? -1.0 : 1.0;
  const Matrix u = detail::random_orthogonal(d, rng);
  const Matrix v = mode == InitMode::NearUniform ? detail::random_orthogonal(d, rng, &signs)
                                                 : detail::random_orthogonal(d, rng);
  Matrix a = u * s.asDiagonal() * v.transpose();

  for (int attempt = 0; attempt < 10000; ++attempt) {
    Vector w0(d);
    if (mode == InitMode::NearUniform) {
      for (Eigen::Index i = 0; i < d; ++i) w0(i) = signs(i) * (1.0 + 0.01 * n01(rng));
    } else {
      for (Eigen::Index i = 0; i < d; ++i) w0(i) = n01(rng);
    }
    const Matrix ata = a.transpose() * a;
    const Vector g2 = ata * w0;
    const Vector ga = w0 + g2;
    if (w0.cwiseAbs().minCoeff() > 1e-6 && g2.cwiseAbs().minCoeff() > 1e-6 && ga.cwiseAbs().minCoeff() > 1e-6)
      return QuadraticProblem::from(a, w0);
  }
  throw std::runtime_error("make_problem: could not draw an initialization with nonzero gradients");
}

enum class QuadMethod { AutoAdamNoBias, AdamNoBias };

inline std::string to_string(QuadMethod m) { return m == QuadMethod::AutoAdamNoBias ? "AutoAdam" : "Adam"; }

/// Matrices whose extreme eigenvalues govern each method:
/// AutoAdam: D1⁻¹ + D2^{-1/2} AᵀA D2^{-1/2}; Adam: D^{-1/2}(I + AᵀA)D^{-1/2}.
inline Matrix preconditioned_system(const QuadraticProblem& p, QuadMethod m) {
  if (m == QuadMethod::AutoAdamNoBias) {
    const Vector s = p.d2.cwiseSqrt().cwiseInverse();
    Matrix out = s.asDiagonal() * p.AtA * s.asDiagonal();
    out.diagonal() += p.d1.cwiseInverse();
    return 0.5 * (out + out.transpose());
  }
  const Vector s = p.adam_d().cwiseSqrt().cwiseInverse();
  Matrix out = s.asDiagonal() * p.W_adam() * s.asDiagonal();
  return 0.5 * (out + out.transpose());
}

inline double system_condition_number(const QuadraticProblem& p, QuadMethod m) {
  return spd_condition_number(preconditioned_system(p, m));
}

/// Step size 2/(λmax + λmin) of the summed (proof) update.
inline double optimal_step(const QuadraticProblem& p, QuadMethod m) {
  const Vector ev = symmetric_eigenvalues(preconditioned_system(p, m));
  return 2.0 / (ev(ev.size() - 1) + ev(0));
}

inline double contraction_bound(double kappa) { return (kappa - 1.0) / (kappa + 1.0); }

inline double bound_autoadam(const QuadraticProblem& p) {
  return contraction_bound(system_condition_number(p, QuadMethod::AutoAdamNoBias));
}

inline double bound_adam(const QuadraticProblem& p) {
  return contraction_bound(system_condition_number(p, QuadMethod::AdamNoBias));
}

/// Initial-gradient bounds, each normalised by λmax of the loss's Hessian.
struct BoundedInitConstants {
  double c11 = 0, c12 = 0; // L1
  double c21 = 0, c22 = 0; // L2
  double c1 = 0, c2 = 0;   // L1 + L2
};

inline BoundedInitConstants bounded_init_constants(const QuadraticProblem& p) {
  BoundedInitConstants c;
  const double lmax2 = symmetric_eigenvalues(p.AtA).maxCoeff();
  const double lmax_adam = 1.0 + lmax2;
  const Vector da = p.adam_d();
  c.c11 = p.d1.minCoeff();
  c.c12 = p.d1.maxCoeff();
  c.c21 = p.d2.minCoeff() / lmax2;
  c.c22 = p.d2.maxCoeff() / lmax2;
  c.c1 = da.minCoeff() / lmax_adam;
  c.c2 = da.maxCoeff() / lmax_adam;
  return c;
}

struct CorollaryBounds {
  double autoadam_stated = 0; // from C12/C11 + C22/C21
  double autoadam_proof = 0;  // from C12/C11 + C12/C21
  double adam = 0;            // from (C2/C1) κ(I + AᵀA)
};

inline CorollaryBounds corollary_bounds(const QuadraticProblem& p) {
  const BoundedInitConstants c = bounded_init_constants(p);
  CorollaryBounds b;
  b.autoadam_stated = contraction_bound(c.c12 / c.c11 + c.c22 / c.c21);
  b.autoadam_proof = contraction_bound(c.c12 / c.c11 + c.c12 / c.c21);
  b.adam = contraction_bound((c.c2 / c.c1) * spd_condition_number(p.W_adam()));
  return b;
}

// Rescaled first: wᵀWw underflows long before w does.
inline double w_norm(const Matrix& w_mat, const Vector& w) {
  const double s = w.cwiseAbs().maxCoeff();
  if (s == 0.0) return 0.0;
  const Vector u = w / s;
  return s * std::sqrt(std::max(0.0, u.dot(w_mat * u)));
}

struct RunTrace {
  std::vector<double> ratios;        // ‖w^{t+1}‖ / ‖w^t‖ in the method's norm
  std::vector<double> norms;         // ‖w^t‖, t = 0..
  std::int64_t steps_to_tol = -1;    // first t with ‖w^t‖ < tol, −1 if never
  Vector final_w;
};

/// Iterates AutoAdam without bias correction (two losses, mean form with step
/// 2η) or plain Adam without bias correction on L1 + L2, both with β1 = 0 and
/// β2 = 1, and records the per-step contraction in the method's W-norm. `eta`
/// is the summed-update step size.
inline RunTrace run_and_measure(const QuadraticProblem& p, QuadMethod m, double eta, std::int64_t steps,
                                double tol = 1e-10) {
  if (!(eta > 0.0)) throw std::invalid_argument("run_and_measure: step size must be positive");
  if (p.w0.isZero(0.0)) throw std::domain_error("run_and_measure: w0 = 0 has no defined ratios");
  const Matrix norm_mat = m == QuadMethod::AutoAdamNoBias ? p.W : p.W_adam();
  RunTrace out;
  ParamVector w = p.w0;
  double prev = w_norm(norm_mat, w);
  out.norms.push_back(prev);
  if (prev < tol) out.steps_to_tol = 0;

  const Matrix& ata = p.AtA;
  const Matrix wa = p.W_adam();
  auto g1 = [](const ParamVector& x) -> Vector { return x; };
  auto g2 = [&ata](const ParamVector& x) -> Vector { return ata * x; };
  auto ga = [&wa](const ParamVector& x) -> Vector { return wa * x; };

  using Fn = std::function<Vector(const ParamVector&)>;
  const std::vector<Fn> fns{g1, g2};
  MultiOptState multi;
  AdamState single;
  if (m == QuadMethod::AutoAdamNoBias) {
    const std::vector<Vector> init{g1(w), g2(w)};
    multi = auto_adam_nobias_init(init, 0.0, 1.0);
  } else {
    single = adam_nobias_init(ga(w));
  }

  for (std::int64_t t = 0; t < steps; ++t) {
    if (m == QuadMethod::AutoAdamNoBias) auto_adam_nobias_step(multi, std::span<const Fn>(fns), w, 2.0 * eta);
    else adam_nobias_step(single, 0.0, 1.0, ga, w, eta);
    if (!w.allFinite()) throw std::runtime_error("run_and_measure: iterate became non-finite at step " + std::to_string(t + 1));
    const double cur = w_norm(norm_mat, w);
    out.norms.push_back(cur);
    if (out.steps_to_tol < 0 && cur < tol) out.steps_to_tol = t + 1;
    if (prev > 0.0) out.ratios.push_back(cur / prev);
    prev = cur;
    // Below this the iteration is lost in subnormals; the contraction is settled.
    if (cur < 1e-250 || cur == 0.0) break;
  }
  out.final_w = w;
  return out;
}

struct QuadReportRow {
  Eigen::Index d = 0;
  double kappa_ata = 0;
  QuadMethod method = QuadMethod::AutoAdamNoBias;
  double eta = 0;
  double theorem_bound = 0;
  double corollary_bound = 0;
  double corollary_stated = std::numeric_limits<double>::quiet_NaN(); // AutoAdam only
  double max_ratio = 0;
  std::int64_t steps_to_tol = -1;
};

inline std::vector<QuadReportRow> certify(const QuadraticProblem& p, std::int64_t steps) {
  std::vector<QuadReportRow> rows;
  const CorollaryBounds cb = corollary_bounds(p);
  const double kappa = spd_condition_number(p.AtA);
  for (QuadMethod m : {QuadMethod::AutoAdamNoBias, QuadMethod::AdamNoBias}) {
    QuadReportRow r;
    r.d = p.dim();
    r.kappa_ata = kappa;
    r.method = m;
    r.eta = optimal_step(p, m);
    r.theorem_bound = m == QuadMethod::AutoAdamNoBias ? bound_autoadam(p) : bound_adam(p);
    r.corollary_bound = m == QuadMethod::AutoAdamNoBias ? cb.autoadam_proof : cb.adam;
    if (m == QuadMethod::AutoAdamNoBias) r.corollary_stated = cb.autoadam_stated;
    const RunTrace tr = run_and_measure(p, m, r.eta, steps);
    r.max_ratio = tr.ratios.empty() ? 0.0 : *std::max_element(tr.ratios.begin(), tr.ratios.end());
    r.steps_to_tol = tr.steps_to_tol;
    rows.push_back(r);
  }
  return rows;
}

inline void write_quad_csv_header(std::ostream& os) {
  os << "seed,d,kappa_ata,method,eta_star,theorem_bound,corollary_bound,corollary_stated,max_ratio,steps_to_tol\n";
}

inline void write_quad_csv_row(std::ostream& os, std::uint64_t seed, const QuadReportRow& r) {
  const auto old = os.precision(17);
  os << seed << ',' << r.d << ',' << r.kappa_ata << ',' << to_string(r.method) << ',' << r.eta << ','
     << r.theorem_bound << ',' << r.corollary_bound << ',';
  if (!std::isnan(r.corollary_stated)) os << r.corollary_stated;
  os << ',' << r.max_ratio << ',' << r.steps_to_tol << '\n';
  os.precision(old);
}

} // namespace autobalance
