#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "autobalance/linalg.hpp"
#include "autobalance/loss.hpp"
#include "autobalance/network.hpp"

namespace autobalance {

enum class ProblemKind { ReactionDiffusion, Helmholtz, PoissonInverse };

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

struct Domain {
  std::vector<Interval> ranges;

  std::size_t dim() const { return ranges.size(); }

  void validate() const {
    for (const auto& r : ranges)
      if (!(r.lo < r.hi)) throw std::invalid_argument("Domain: lower bound must be below upper bound");
  }

  bool strictly_inside(const Eigen::Ref<const Vector>& p) const {
    for (std::size_t i = 0; i < ranges.size(); ++i)
      if (!(p(static_cast<Eigen::Index>(i)) > ranges[i].lo && p(static_cast<Eigen::Index>(i)) < ranges[i].hi))
        return false;
    return true;
  }
};

struct PdeProblem {
  ProblemKind kind = ProblemKind::Helmholtz;
  std::string name;
  Domain domain;
  double k = 1.0;  // Helmholtz wave number
  double a1 = 5.0; // Helmholtz frequencies
  double a2 = 5.0;

  bool is_inverse() const { return kind == ProblemKind::PoissonInverse; }
  bool has_initial_condition() const { return kind == ProblemKind::ReactionDiffusion; }
};

inline PdeProblem problem_by_name(const std::string& name) {
  constexpr double pi = std::numbers::pi;
  PdeProblem p;
  p.name = name;
  if (name == "reaction_diffusion_1d") {
    p.kind = ProblemKind::ReactionDiffusion;
    p.domain.ranges = {{-pi, pi}, {0.0, 1.0}}; // (x, t)
  } else if (name == "helmholtz_2d_a5") {
    p.kind = ProblemKind::Helmholtz;
    p.domain.ranges = {{-1.0, 1.0}, {-1.0, 1.0}};
  } else if (name == "poisson_inverse_2d") {
    p.kind = ProblemKind::PoissonInverse;
    p.domain.ranges = {{0.0, 1.0}, {0.0, 1.0}};
  } else {
    throw std::invalid_argument("unknown problem '" + name + "'");
  }
  return p;
}

/// Network output at one point with its first and pure second derivatives.
struct PointJet {
  double u = 0.0;
  std::array<double, 2> du{0.0, 0.0};
  std::array<double, 2> d2u{0.0, 0.0};
};

// ---- source terms and reference fields -------------------------------------

inline double reaction_term(double x, double t) {
  return std::exp(-t) * (1.5 * std::sin(2 * x) + (8.0 / 3.0) * std::sin(3 * x) + 3.75 * std::sin(4 * x) +
                         (63.0 / 8.0) * std::sin(8 * x));
}

inline double reaction_diffusion_exact(double x, double t) {
  double s = std::sin(8 * x) / 8.0;
  for (int n = 1; n <= 4; ++n) s += std::sin(n * x) / n;
  return std::exp(-t) * s;
}

inline double helmholtz_source(double x, double y, double k = 1.0, double a1 = 5.0, double a2 = 5.0) {
  constexpr double pi = std::numbers::pi;
  // q = (k² − (a1π)² − (a2π)²) sin(a1πx) sin(a2πy); equals k² − 2(aπ)² when a1 = a2.
  return (k * k - (a1 * pi) * (a1 * pi) - (a2 * pi) * (a2 * pi)) * std::sin(a1 * pi * x) * std::sin(a2 * pi * y);
}

inline double helmholtz_exact(double x, double y, double a1 = 5.0, double a2 = 5.0) {
  constexpr double pi = std::numbers::pi;
  return std::sin(a1 * pi * x) * std::sin(a2 * pi * y);
}

inline double poisson_denominator(double x, double y) {
  return 1.0 + x * x + y * y + (x - 1) * (x - 1) + (y - 1) * (y - 1);
}

inline double poisson_coefficient_exact(double x, double y) { return 1.0 / poisson_denominator(x, y); }

inline double poisson_exact(double x, double y) {
  constexpr double pi = std::numbers::pi;
  return std::sin(pi * x) * std::sin(pi * y);
}

inline double poisson_source(double x, double y) {
  constexpr double pi = std::numbers::pi;
  const double q = poisson_denominator(x, y);
  const double sx = std::sin(pi * x), sy = std::sin(pi * y);
  const double cx = std::cos(pi * x), cy = std::cos(pi * y);
  return 2 * pi * pi * sx * sy / q + 2 * pi * ((2 * x - 1) * cx * sy + (2 * y - 1) * cy * sx) / (q * q);
}

/// The field the network is judged against: u for forward problems, the
/// coefficient a for the inverse problem.
inline double reference_field(const PdeProblem& p, double x, double y) {
  switch (p.kind) {
    case ProblemKind::ReactionDiffusion: return reaction_diffusion_exact(x, y);
    case ProblemKind::Helmholtz: return helmholtz_exact(x, y, p.a1, p.a2);
    case ProblemKind::PoissonInverse: return poisson_coefficient_exact(x, y);
  }
  return 0.0;
}

inline double exact_solution(const PdeProblem& p, double x, double y) {
  switch (p.kind) {
    case ProblemKind::ReactionDiffusion: return reaction_diffusion_exact(x, y);
    case ProblemKind::Helmholtz: return helmholtz_exact(x, y, p.a1, p.a2);
    case ProblemKind::PoissonInverse: return poisson_exact(x, y);
  }
  return 0.0;
}

// ---- pointwise residual operators -----------------------------------------

/// u_t − u_xx − R(x, t); inputs ordered (x, t).
inline double reaction_diffusion_residual(const PointJet& j, double x, double t) {
  return j.du[1] - j.d2u[0] - reaction_term(x, t);
}

inline double helmholtz_residual(const PointJet& j, double x, double y, double k = 1.0, double a1 = 5.0,
                                 double a2 = 5.0) {
  return j.d2u[0] + j.d2u[1] + k * k * j.u - helmholtz_source(x, y, k, a1, a2);
}

/// −(a_x u_x + a_y u_y + a (u_xx + u_yy)) − f.
inline double poisson_inverse_residual(const PointJet& u, const PointJet& a, double x, double y) {
  return -(a.du[0] * u.du[0] + a.du[1] * u.du[1] + a.u * (u.d2u[0] + u.d2u[1])) - poisson_source(x, y);
}

// ---- samples --------------------------------------------------------------

struct SampleCounts {
  std::size_t interior = 0;
  std::size_t boundary = 0; // for reaction–diffusion: boundary + initial points together
  std::size_t data_u = 0;   // inverse problem only
  std::size_t data_a = 0;
};

/// Points are stored one per column.
struct SampleSet {
  Matrix interior;
  Matrix boundary;
  Matrix initial;
  Matrix obs_u_points;
  Vector obs_u_values;
  Matrix obs_a_points;
  Vector obs_a_values;
};

namespace detail {

inline Vector uniform_inside(const Domain& dom, std::mt19937_64& rng) {
  Vector p(static_cast<Eigen::Index>(dom.dim()));
  do {
    for (std::size_t i = 0; i < dom.dim(); ++i) {
      std::uniform_real_distribution<double> dist(dom.ranges[i].lo, dom.ranges[i].hi);
      p(static_cast<Eigen::Index>(i)) = dist(rng);
    }
  } while (!dom.strictly_inside(p));
  return p;
}

// A point on the boundary of a 2-D rectangle, faces chosen with probability
// proportional to their length.
inline Vector uniform_on_rectangle_boundary(const Domain& dom, std::mt19937_64& rng) {
  const Interval& rx = dom.ranges[0];
  const Interval& ry = dom.ranges[1];
  const double wx = rx.hi - rx.lo, wy = ry.hi - ry.lo;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double s = u01(rng) * 2.0 * (wx + wy);
  const double r = u01(rng);
  Vector p(2);
  if (s < wx) p << rx.lo + r * wx, ry.lo;
  else if (s < 2 * wx) p << rx.lo + r * wx, ry.hi;
  else if (s < 2 * wx + wy) p << rx.lo, ry.lo + r * wy;
  else p << rx.hi, ry.lo + r * wy;
  return p;
}

} // namespace detail

/// Observations of the inverse problem: u inside Ω with additive Gaussian
/// noise, and the exact coefficient a on ∂Ω.
inline void make_observations(const PdeProblem& p, std::size_t n_u, std::size_t n_a, double noise_variance,
                              std::uint64_t seed, SampleSet& out) {
  if (!p.is_inverse()) throw std::invalid_argument("make_observations: only the inverse problem has observations");
  if (noise_variance < 0.0) throw std::invalid_argument("make_observations: negative noise variance");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(noise_variance));
  out.obs_u_points.resize(2, static_cast<Eigen::Index>(n_u));
  out.obs_u_values.resize(static_cast<Eigen::Index>(n_u));
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n_u); ++j) {
    out.obs_u_points.col(j) = detail::uniform_inside(p.domain, rng);
    const double clean = poisson_exact(out.obs_u_points(0, j), out.obs_u_points(1, j));
    out.obs_u_values(j) = noise_variance > 0.0 ? clean + noise(rng) : clean;
  }
  out.obs_a_points.resize(2, static_cast<Eigen::Index>(n_a));
  out.obs_a_values.resize(static_cast<Eigen::Index>(n_a));
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n_a); ++j) {
    out.obs_a_points.col(j) = detail::uniform_on_rectangle_boundary(p.domain, rng);
    out.obs_a_values(j) = poisson_coefficient_exact(out.obs_a_points(0, j), out.obs_a_points(1, j));
  }
}

/// Fixed training points for one run. Reaction–diffusion splits `boundary`
/// evenly between the two spatial walls (side picked at random per point) and
/// the initial line t = 0; the first half go to the walls.
inline SampleSet sample(const PdeProblem& p, const SampleCounts& counts, std::uint64_t seed,
                        double noise_variance = 0.01) {
  p.domain.validate();
  std::mt19937_64 rng(seed);
  SampleSet s;
  const Eigen::Index nf = static_cast<Eigen::Index>(counts.interior);
  s.interior.resize(2, nf);
  for (Eigen::Index j = 0; j < nf; ++j) s.interior.col(j) = detail::uniform_inside(p.domain, rng);

  switch (p.kind) {
    case ProblemKind::ReactionDiffusion: {
      const Eigen::Index nb = static_cast<Eigen::Index>(counts.boundary - counts.boundary / 2);
      const Eigen::Index n0 = static_cast<Eigen::Index>(counts.boundary / 2);
      const Interval& rx = p.domain.ranges[0];
      const Interval& rt = p.domain.ranges[1];
      std::uniform_real_distribution<double> ut(rt.lo, rt.hi);
      std::uniform_real_distribution<double> ux(rx.lo, rx.hi);
      std::bernoulli_distribution side(0.5);
      s.boundary.resize(2, nb);
      for (Eigen::Index j = 0; j < nb; ++j) {
        const double x = side(rng) ? rx.hi : rx.lo;
        s.boundary.col(j) << x, ut(rng);
      }
      s.initial.resize(2, n0);
      for (Eigen::Index j = 0; j < n0; ++j) s.initial.col(j) << ux(rng), rt.lo;
      break;
    }
    case ProblemKind::Helmholtz: {
      const Eigen::Index nb = static_cast<Eigen::Index>(counts.boundary);
      s.boundary.resize(2, nb);
      for (Eigen::Index j = 0; j < nb; ++j) s.boundary.col(j) = detail::uniform_on_rectangle_boundary(p.domain, rng);
      s.initial.resize(2, 0);
      break;
    }
    case ProblemKind::PoissonInverse: {
      s.boundary.resize(2, 0);
      s.initial.resize(2, 0);
      make_observations(p, counts.data_u, counts.data_a, noise_variance, rng(), s);
      break;
    }
  }
  return s;
}

// ---- model layout ---------------------------------------------------------

/// One network for forward problems; for the inverse problem a u-network and
/// an a-network whose parameters are concatenated (u first).
struct Model {
  NetworkSpec u_net;
  std::optional<NetworkSpec> a_net;

  std::size_t u_count() const { return u_net.param_count(); }
  std::size_t param_count() const { return u_net.param_count() + (a_net ? a_net->param_count() : 0); }

  Eigen::Ref<const Vector> u_params(const ParamVector& w) const {
    return w.head(static_cast<Eigen::Index>(u_count()));
  }
  Eigen::Ref<const Vector> a_params(const ParamVector& w) const {
    if (!a_net) throw std::logic_error("Model: no coefficient network");
    return w.segment(static_cast<Eigen::Index>(u_count()), static_cast<Eigen::Index>(a_net->param_count()));
  }

  ParamVector init(std::uint64_t seed) const {
    ParamVector w(static_cast<Eigen::Index>(param_count()));
    w.head(static_cast<Eigen::Index>(u_count())) = init_params(u_net, seed);
    if (a_net)
      w.tail(static_cast<Eigen::Index>(a_net->param_count())) =
          init_params(*a_net, seed ^ 0x9e3779b97f4a7c15ULL);
    return w;
  }
};

namespace detail {

inline PointJet point_jet(const JetTape& tape, Eigen::Index j) {
  const Eigen::Index n = static_cast<Eigen::Index>(tape.points);
  PointJet pj;
  pj.u = tape.output(0, j);
  if (tape.order == JetOrder::Full) {
    for (Eigen::Index i = 0; i < 2; ++i) {
      pj.du[static_cast<std::size_t>(i)] = tape.output(0, (1 + i) * n + j);
      pj.d2u[static_cast<std::size_t>(i)] = tape.output(0, (3 + i) * n + j);
    }
  }
  return pj;
}

inline void require_points(const Matrix& pts, const std::string& who) {
  if (pts.cols() == 0) throw std::invalid_argument(who + ": empty point set");
}

} // namespace detail

/// Mean squared PDE residual over the interior collocation points.
class ResidualLoss final : public LossComponent {
 public:
  ResidualLoss(PdeProblem problem, Model model, Matrix points)
      : problem_(std::move(problem)), model_(std::move(model)), points_(std::move(points)) {
    detail::require_points(points_, "residual loss");
    if (problem_.is_inverse() && !model_.a_net) throw std::invalid_argument("residual loss: inverse problem needs an a-network");
  }

  std::string name() const override { return "residual"; }
  std::size_t param_count() const override { return model_.param_count(); }

  double value(const ParamVector& w) const override {
    forward(w);
    return residuals_.squaredNorm() / static_cast<double>(residuals_.size());
  }

  double value_grad(const ParamVector& w, ParamVector& grad) const override {
    forward(w);
    const double n = static_cast<double>(residuals_.size());
    grad.setZero(w.size());
    backward_with(w, (2.0 / n) * residuals_, grad, nullptr);
    return residuals_.squaredNorm() / n;
  }

  std::optional<double> ntk_trace(const ParamVector& w) const override {
    forward(w);
    ParamVector scratch = ParamVector::Zero(w.size());
    Vector sq;
    backward_with(w, Vector::Ones(residuals_.size()), scratch, &sq);
    return sq.sum();
  }

  /// Per-point residuals at w.
  Vector residuals(const ParamVector& w) const {
    forward(w);
    return residuals_;
  }

  const Matrix& points() const { return points_; }

 private:
  void forward(const ParamVector& w) const {
    if (static_cast<std::size_t>(w.size()) != model_.param_count())
      throw std::invalid_argument("residual loss: parameter vector has wrong length");
    const Eigen::Index n = points_.cols();
    forward_tape(model_.u_net, model_.u_params(w), points_, JetOrder::Full, u_tape_);
    if (problem_.is_inverse()) forward_tape(*model_.a_net, model_.a_params(w), points_, JetOrder::Full, a_tape_);
    residuals_.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double x = points_(0, j), y = points_(1, j);
      const PointJet uj = detail::point_jet(u_tape_, j);
      switch (problem_.kind) {
        case ProblemKind::ReactionDiffusion: residuals_(j) = reaction_diffusion_residual(uj, x, y); break;
        case ProblemKind::Helmholtz:
          residuals_(j) = helmholtz_residual(uj, x, y, problem_.k, problem_.a1, problem_.a2);
          break;
        case ProblemKind::PoissonInverse:
          residuals_(j) = poisson_inverse_residual(uj, detail::point_jet(a_tape_, j), x, y);
          break;
      }
    }
  }

  // Pulls the per-point residual adjoints `rbar` back to the parameters. With
  // `sq` set, also returns the squared parameter-gradient norm of each
  // rbar_j · r_j.
  void backward_with(const ParamVector& w, const Vector& rbar, ParamVector& grad, Vector* sq) const {
    const Eigen::Index n = points_.cols();
    const Eigen::Index nu = static_cast<Eigen::Index>(model_.u_count());
    std::vector<Vector> d1(2, Vector::Zero(n)), d2(2, Vector::Zero(n));
    Vector v = Vector::Zero(n);
    switch (problem_.kind) {
      case ProblemKind::ReactionDiffusion:
        d1[1] = rbar;
        d2[0] = -rbar;
        break;
      case ProblemKind::Helmholtz:
        v = (problem_.k * problem_.k) * rbar;
        d2[0] = rbar;
        d2[1] = rbar;
        break;
      case ProblemKind::PoissonInverse: {
        const auto& uo = u_tape_.output;
        const auto& ao = a_tape_.output;
        std::vector<Vector> ad1(2, Vector::Zero(n));
        Vector av(n);
        for (Eigen::Index j = 0; j < n; ++j) {
          const double a = ao(0, j), ax = ao(0, n + j), ay = ao(0, 2 * n + j);
          const double ux = uo(0, n + j), uy = uo(0, 2 * n + j);
          const double lap = uo(0, 3 * n + j) + uo(0, 4 * n + j);
          d1[0](j) = -ax * rbar(j);
          d1[1](j) = -ay * rbar(j);
          d2[0](j) = -a * rbar(j);
          d2[1](j) = -a * rbar(j);
          av(j) = -lap * rbar(j);
          ad1[0](j) = -ux * rbar(j);
          ad1[1](j) = -uy * rbar(j);
        }
        Vector sq_a;
        const Matrix abar = pack_output_adjoint(a_tape_, 2, av, ad1);
        backward(*model_.a_net, model_.a_params(w), a_tape_, abar,
                 grad.segment(nu, static_cast<Eigen::Index>(model_.a_net->param_count())), sq ? &sq_a : nullptr, &ws_);
        if (sq) point_sq_a_ = sq_a;
        break;
      }
    }
    const Matrix ubar = pack_output_adjoint(u_tape_, 2, v, d1, d2);
    backward(model_.u_net, model_.u_params(w), u_tape_, ubar, grad.head(nu), sq, &ws_);
    if (sq && problem_.is_inverse()) *sq += point_sq_a_;
  }

  PdeProblem problem_;
  Model model_;
  Matrix points_;
  mutable JetTape u_tape_;
  mutable JetTape a_tape_;
  mutable Vector residuals_;
  mutable Vector point_sq_a_;
  mutable BackwardWorkspace ws_;
};

/// Mean squared mismatch of one network's values against fixed targets. Used
/// for boundary/initial conditions and for observations.
class ValueMatchLoss : public LossComponent {
 public:
  struct Block {
    bool coefficient_net = false; // false: u-network, true: a-network
    Matrix points;
    Vector targets;
  };

  ValueMatchLoss(std::string name, Model model, std::vector<Block> blocks)
      : name_(std::move(name)), model_(std::move(model)), blocks_(std::move(blocks)) {
    count_ = 0;
    for (const auto& b : blocks_) {
      if (b.points.cols() != b.targets.size()) throw std::invalid_argument(name_ + ": points and targets disagree");
      if (b.coefficient_net && !model_.a_net) throw std::invalid_argument(name_ + ": no coefficient network");
      count_ += static_cast<std::size_t>(b.points.cols());
    }
    if (count_ == 0) throw std::invalid_argument(name_ + ": empty point set");
    tapes_.resize(blocks_.size());
  }

  std::string name() const override { return name_; }
  std::size_t param_count() const override { return model_.param_count(); }

  double value(const ParamVector& w) const override {
    double acc = 0.0;
    for (std::size_t b = 0; b < blocks_.size(); ++b) acc += error(w, b).squaredNorm();
    return acc / static_cast<double>(count_);
  }

  double value_grad(const ParamVector& w, ParamVector& grad) const override {
    grad.setZero(w.size());
    double acc = 0.0;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Vector e = error(w, b);
      acc += e.squaredNorm();
      pull_back(w, b, (2.0 / static_cast<double>(count_)) * e, grad, nullptr);
    }
    return acc / static_cast<double>(count_);
  }

  std::optional<double> ntk_trace(const ParamVector& w) const override {
    ParamVector scratch = ParamVector::Zero(w.size());
    double trace = 0.0;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const Vector e = error(w, b);
      Vector sq;
      pull_back(w, b, Vector::Ones(e.size()), scratch, &sq);
      trace += sq.sum();
    }
    return trace;
  }

  std::size_t point_count() const { return count_; }

 private:
  const NetworkSpec& net(std::size_t b) const { return blocks_[b].coefficient_net ? *model_.a_net : model_.u_net; }

  Eigen::Ref<const Vector> net_params(const ParamVector& w, std::size_t b) const {
    return blocks_[b].coefficient_net ? model_.a_params(w) : model_.u_params(w);
  }

  Vector error(const ParamVector& w, std::size_t b) const {
    if (static_cast<std::size_t>(w.size()) != model_.param_count())
      throw std::invalid_argument(name_ + ": parameter vector has wrong length");
    const Block& blk = blocks_[b];
    if (blk.points.cols() == 0) return Vector();
    forward_tape(net(b), net_params(w, b), blk.points, JetOrder::Value, tapes_[b]);
    return tapes_[b].output.row(0).transpose() - blk.targets;
  }

  void pull_back(const ParamVector& w, std::size_t b, const Vector& ebar, ParamVector& grad, Vector* sq) const {
    const Block& blk = blocks_[b];
    if (blk.points.cols() == 0) {
      if (sq) sq->resize(0);
      return;
    }
    const Eigen::Index nu = static_cast<Eigen::Index>(model_.u_count());
    const NetworkSpec& spec = net(b);
    auto g = blk.coefficient_net ? grad.segment(nu, static_cast<Eigen::Index>(spec.param_count()))
                                 : grad.segment(0, nu);
    backward(spec, net_params(w, b), tapes_[b], pack_output_adjoint(tapes_[b], spec.input_dim, ebar), g, sq, &ws_);
  }

  std::string name_;
  Model model_;
  std::vector<Block> blocks_;
  std::size_t count_ = 0;
  mutable std::vector<JetTape> tapes_;
  mutable BackwardWorkspace ws_;
};

/// Boundary (and, for reaction–diffusion, initial) condition loss; all points
/// are averaged together as one component.
inline std::unique_ptr<ValueMatchLoss> make_boundary_loss(const PdeProblem& p, const Model& model,
                                                          const SampleSet& s) {
  if (p.is_inverse()) throw std::invalid_argument("boundary loss: the inverse problem uses a data loss instead");
  ValueMatchLoss::Block blk;
  blk.points.resize(2, s.boundary.cols() + s.initial.cols());
  blk.points << s.boundary, s.initial;
  blk.targets.resize(blk.points.cols());
  for (Eigen::Index j = 0; j < blk.points.cols(); ++j) blk.targets(j) = exact_solution(p, blk.points(0, j), blk.points(1, j));
  return std::make_unique<ValueMatchLoss>("boundary", model, std::vector<ValueMatchLoss::Block>{std::move(blk)});
}

/// Observation loss of the inverse problem: noisy u inside, exact a on ∂Ω.
inline std::unique_ptr<ValueMatchLoss> make_data_loss(const PdeProblem& p, const Model& model, const SampleSet& s) {
  if (!p.is_inverse()) throw std::invalid_argument("data loss: only the inverse problem has observations");
  std::vector<ValueMatchLoss::Block> blocks(2);
  blocks[0] = {false, s.obs_u_points, s.obs_u_values};
  blocks[1] = {true, s.obs_a_points, s.obs_a_values};
  return std::make_unique<ValueMatchLoss>("data", model, std::move(blocks));
}

inline std::unique_ptr<ResidualLoss> make_residual_loss(const PdeProblem& p, const Model& model, const SampleSet& s) {
  return std::make_unique<ResidualLoss>(p, model, s.interior);
}

/// Uniform n x n grid over the domain, endpoints included.
inline Matrix evaluation_grid(const Domain& dom, Eigen::Index n = 300) {
  if (dom.dim() != 2) throw std::invalid_argument("evaluation_grid: 2-D domains only");
  if (n < 2) throw std::invalid_argument("evaluation_grid: need at least 2 points per side");
  const Vector xs = Vector::LinSpaced(n, dom.ranges[0].lo, dom.ranges[0].hi);
  const Vector ys = Vector::LinSpaced(n, dom.ranges[1].lo, dom.ranges[1].hi);
  Matrix g(2, n * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g.col(i * n + j) << xs(i), ys(j);
  return g;
}

struct ErrorMetrics {
  double mse = 0.0;
  double linf = 0.0;
};

/// Mean squared and maximum absolute error between two equally sized vectors.
inline ErrorMetrics error_metrics(const Eigen::Ref<const Vector>& predicted, const Eigen::Ref<const Vector>& exact) {
  if (predicted.size() != exact.size() || predicted.size() == 0)
    throw std::invalid_argument("error_metrics: sizes differ or are empty");
  const Vector diff = predicted - exact;
  return {diff.squaredNorm() / static_cast<double>(diff.size()), diff.cwiseAbs().maxCoeff()};
}

/// Error of the learned field (u, or a for the inverse problem) on the
/// evaluation grid.
inline ErrorMetrics evaluate(const PdeProblem& p, const Model& model, const ParamVector& w, const Matrix& grid) {
  Vector predicted;
  if (p.is_inverse()) predicted = forward_values(*model.a_net, model.a_params(w), grid).row(0).transpose();
  else predicted = forward_values(model.u_net, model.u_params(w), grid).row(0).transpose();
  Vector exact(grid.cols());
  for (Eigen::Index j = 0; j < grid.cols(); ++j) exact(j) = reference_field(p, grid(0, j), grid(1, j));
  return error_metrics(predicted, exact);
}

} // namespace autobalance
