#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "autobalance/loss.hpp"
#include "autobalance/pde.hpp"

using namespace autobalance;

namespace {

constexpr double pi = std::numbers::pi;

Model small_model(const PdeProblem& p) {
  Model m;
  m.u_net = NetworkSpec{2, {8, 6}, 1, Activation::Tanh};
  if (p.is_inverse()) m.a_net = NetworkSpec{2, {5, 5}, 1, Activation::Tanh};
  return m;
}

SampleCounts small_counts(const PdeProblem& p) {
  return p.is_inverse() ? SampleCounts{15, 0, 8, 5} : SampleCounts{15, 10, 0, 0};
}

ParamVector perturbed(const ParamVector& w, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  ParamVector out = w;
  for (Eigen::Index i = 0; i < w.size(); ++i) out(i) += scale * n01(rng);
  return out;
}

Vector uniform_point(const Domain& d, std::mt19937_64& rng) {
  Vector p(2);
  for (int i = 0; i < 2; ++i) p(i) = std::uniform_real_distribution<double>(d.ranges[i].lo, d.ranges[i].hi)(rng);
  return p;
}

bool on_boundary(const Domain& d, const Vector& p) {
  const bool inside_x = p(0) >= d.ranges[0].lo && p(0) <= d.ranges[0].hi;
  const bool inside_y = p(1) >= d.ranges[1].lo && p(1) <= d.ranges[1].hi;
  const bool on_x = p(0) == d.ranges[0].lo || p(0) == d.ranges[0].hi;
  const bool on_y = p(1) == d.ranges[1].lo || p(1) == d.ranges[1].hi;
  return inside_x && inside_y && (on_x || on_y);
}

const char* const kProblems[] = {"reaction_diffusion_1d", "helmholtz_2d_a5", "poisson_inverse_2d"};

} // namespace

TEST(ExactSolutions, ReactionDiffusionSatisfiesThePde) {
  std::mt19937_64 rng(1);
  const PdeProblem p = problem_by_name("reaction_diffusion_1d");
  for (int i = 0; i < 1000; ++i) {
    const Vector q = uniform_point(p.domain, rng);
    const double x = q(0), t = q(1);
    double s = std::sin(8 * x) / 8, sxx = -8 * std::sin(8 * x);
    for (int n = 1; n <= 4; ++n) {
      s += std::sin(n * x) / n;
      sxx -= n * std::sin(n * x);
    }
    PointJet j;
    j.u = std::exp(-t) * s;
    j.du = {0.0, -std::exp(-t) * s}; // u_x unused by the operator
    j.d2u = {std::exp(-t) * sxx, 0.0};
    EXPECT_NEAR(j.u, reaction_diffusion_exact(x, t), 1e-14);
    EXPECT_LT(std::abs(reaction_diffusion_residual(j, x, t)), 1e-6);
  }
}

TEST(ExactSolutions, ReactionDiffusionOddAtOrigin) {
  for (double t : {0.0, 0.3, 1.0}) {
    EXPECT_NEAR(reaction_term(0.0, t), 0.0, 1e-15);
    EXPECT_NEAR(reaction_diffusion_exact(0.0, t), 0.0, 1e-15);
  }
  // t = 0, x = π/2
  PointJet j;
  const double x = pi / 2;
  j.u = reaction_diffusion_exact(x, 0.0);
  j.du[1] = -j.u;
  j.d2u[0] = -std::sin(x) - 2 * std::sin(2 * x) - 3 * std::sin(3 * x) - 4 * std::sin(4 * x) - 8 * std::sin(8 * x);
  EXPECT_NEAR(reaction_diffusion_residual(j, x, 0.0), 0.0, 1e-13);
}

TEST(ExactSolutions, HelmholtzSatisfiesThePde) {
  std::mt19937_64 rng(2);
  const PdeProblem p = problem_by_name("helmholtz_2d_a5");
  const double w = 5 * pi;
  for (int i = 0; i < 1000; ++i) {
    const Vector q = uniform_point(p.domain, rng);
    const double u = std::sin(w * q(0)) * std::sin(w * q(1));
    PointJet j;
    j.u = u;
    j.d2u = {-w * w * u, -w * w * u};
    EXPECT_LT(std::abs(helmholtz_residual(j, q(0), q(1))), 1e-6);
  }
}

TEST(ExactSolutions, HelmholtzSourceValueAndBoundary) {
  EXPECT_NEAR(helmholtz_source(0.1, 0.1), 1 - 50 * pi * pi, 1e-10);
  EXPECT_NEAR(helmholtz_source(0.1, 0.1), -492.48, 5e-3);
  for (double s : {-1.0, -0.3, 0.0, 0.7, 1.0}) {
    EXPECT_NEAR(helmholtz_exact(1.0, s), 0.0, 1e-14);
    EXPECT_NEAR(helmholtz_exact(-1.0, s), 0.0, 1e-14);
    EXPECT_NEAR(helmholtz_exact(s, 1.0), 0.0, 1e-14);
    EXPECT_NEAR(helmholtz_exact(s, -1.0), 0.0, 1e-14);
  }
}

TEST(ExactSolutions, PoissonInverseSatisfiesThePde) {
  std::mt19937_64 rng(3);
  const PdeProblem p = problem_by_name("poisson_inverse_2d");
  for (int i = 0; i < 1000; ++i) {
    const Vector q = uniform_point(p.domain, rng);
    const double x = q(0), y = q(1);
    const double den = 1 + x * x + y * y + (x - 1) * (x - 1) + (y - 1) * (y - 1);
    PointJet u, a;
    u.u = std::sin(pi * x) * std::sin(pi * y);
    u.du = {pi * std::cos(pi * x) * std::sin(pi * y), pi * std::sin(pi * x) * std::cos(pi * y)};
    u.d2u = {-pi * pi * u.u, -pi * pi * u.u};
    a.u = 1 / den;
    a.du = {-(4 * x - 2) / (den * den), -(4 * y - 2) / (den * den)};
    EXPECT_NEAR(a.u, poisson_coefficient_exact(x, y), 1e-15);
    EXPECT_LT(std::abs(poisson_inverse_residual(u, a, x, y)), 1e-5);
  }
}

TEST(ExactSolutions, PoissonCoefficientAndBoundary) {
  EXPECT_DOUBLE_EQ(poisson_coefficient_exact(0.0, 0.0), 1.0 / 3.0);
  for (double s : {0.0, 0.25, 0.5, 1.0}) {
    EXPECT_NEAR(poisson_exact(0.0, s), 0.0, 1e-15);
    EXPECT_NEAR(poisson_exact(1.0, s), 0.0, 1e-15);
    EXPECT_NEAR(poisson_exact(s, 0.0), 0.0, 1e-15);
    EXPECT_NEAR(poisson_exact(s, 1.0), 0.0, 1e-15);
  }
}

TEST(Problems, RegistryAndDomains) {
  const PdeProblem rd = problem_by_name("reaction_diffusion_1d");
  EXPECT_EQ(rd.kind, ProblemKind::ReactionDiffusion);
  EXPECT_DOUBLE_EQ(rd.domain.ranges[0].lo, -pi);
  EXPECT_DOUBLE_EQ(rd.domain.ranges[1].hi, 1.0);
  EXPECT_TRUE(rd.has_initial_condition());
  EXPECT_TRUE(problem_by_name("poisson_inverse_2d").is_inverse());
  EXPECT_THROW(problem_by_name("burgers"), std::invalid_argument);
  Domain bad;
  bad.ranges = {{1.0, 1.0}};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Sampling, HelmholtzMembershipAndFaceBalance) {
  const PdeProblem p = problem_by_name("helmholtz_2d_a5");
  const SampleSet s = sample(p, {2000, 4000, 0, 0}, 7);
  ASSERT_EQ(s.interior.cols(), 2000);
  ASSERT_EQ(s.boundary.cols(), 4000);
  EXPECT_EQ(s.initial.cols(), 0);
  for (Eigen::Index j = 0; j < s.interior.cols(); ++j) EXPECT_TRUE(p.domain.strictly_inside(s.interior.col(j)));
  int faces[4] = {0, 0, 0, 0};
  for (Eigen::Index j = 0; j < s.boundary.cols(); ++j) {
    const Vector b = s.boundary.col(j);
    ASSERT_TRUE(std::abs(b(0)) == 1.0 || std::abs(b(1)) == 1.0);
    ASSERT_TRUE(on_boundary(p.domain, b));
    if (b(1) == -1.0) ++faces[0];
    else if (b(1) == 1.0) ++faces[1];
    else if (b(0) == -1.0) ++faces[2];
    else ++faces[3];
  }
  // 1000 expected per face, σ ≈ 27
  for (int f : faces) EXPECT_NEAR(f, 1000, 150);
}

TEST(Sampling, PresetBoundaryCountIsFourHundred) {
  const SampleSet s = sample(problem_by_name("helmholtz_2d_a5"), {2000, 400, 0, 0}, 0);
  EXPECT_EQ(s.boundary.cols(), 400);
}

TEST(Sampling, SingleInteriorPoint) {
  const PdeProblem p = problem_by_name("helmholtz_2d_a5");
  const SampleSet s = sample(p, {1, 4, 0, 0}, 3);
  ASSERT_EQ(s.interior.cols(), 1);
  EXPECT_GT(s.interior(0, 0), -1.0);
  EXPECT_LT(s.interior(0, 0), 1.0);
  EXPECT_GT(s.interior(1, 0), -1.0);
  EXPECT_LT(s.interior(1, 0), 1.0);
}

TEST(Sampling, DeterministicPerSeed) {
  for (const char* name : kProblems) {
    const PdeProblem p = problem_by_name(name);
    const SampleCounts c = p.is_inverse() ? SampleCounts{100, 0, 60, 10} : SampleCounts{100, 50, 0, 0};
    const SampleSet a = sample(p, c, 5), b = sample(p, c, 5), other = sample(p, c, 6);
    EXPECT_EQ(a.interior, b.interior);
    EXPECT_EQ(a.boundary, b.boundary);
    EXPECT_EQ(a.initial, b.initial);
    EXPECT_EQ(a.obs_u_values, b.obs_u_values);
    EXPECT_EQ(a.obs_a_points, b.obs_a_points);
    EXPECT_NE(a.interior, other.interior);
  }
}

TEST(Sampling, ReactionDiffusionSplitsWallsAndInitialLine) {
  const PdeProblem p = problem_by_name("reaction_diffusion_1d");
  const SampleSet s = sample(p, {200, 100, 0, 0}, 1);
  ASSERT_EQ(s.boundary.cols(), 50);
  ASSERT_EQ(s.initial.cols(), 50);
  int left = 0;
  for (Eigen::Index j = 0; j < 50; ++j) {
    EXPECT_TRUE(s.boundary(0, j) == pi || s.boundary(0, j) == -pi);
    left += s.boundary(0, j) == -pi;
    EXPECT_GE(s.boundary(1, j), 0.0);
    EXPECT_LE(s.boundary(1, j), 1.0);
    EXPECT_EQ(s.initial(1, j), 0.0);
    EXPECT_GE(s.initial(0, j), -pi);
    EXPECT_LE(s.initial(0, j), pi);
  }
  EXPECT_GT(left, 10);
  EXPECT_LT(left, 40);
  for (Eigen::Index j = 0; j < s.interior.cols(); ++j) EXPECT_TRUE(p.domain.strictly_inside(s.interior.col(j)));
}

TEST(Observations, PresetSplitAndPlacement) {
  const PdeProblem p = problem_by_name("poisson_inverse_2d");
  const SampleSet s = sample(p, {100, 0, 60, 10}, 2);
  ASSERT_EQ(s.obs_u_points.cols(), 60);
  ASSERT_EQ(s.obs_a_points.cols(), 10);
  for (Eigen::Index j = 0; j < 60; ++j) EXPECT_TRUE(p.domain.strictly_inside(s.obs_u_points.col(j)));
  for (Eigen::Index j = 0; j < 10; ++j) {
    EXPECT_TRUE(on_boundary(p.domain, s.obs_a_points.col(j)));
    EXPECT_DOUBLE_EQ(s.obs_a_values(j), poisson_coefficient_exact(s.obs_a_points(0, j), s.obs_a_points(1, j)));
  }
  EXPECT_TRUE(s.obs_u_values.allFinite());
}

TEST(Observations, ZeroVarianceIsExact) {
  const PdeProblem p = problem_by_name("poisson_inverse_2d");
  SampleSet s;
  make_observations(p, 60, 10, 0.0, 4, s);
  for (Eigen::Index j = 0; j < 60; ++j)
    EXPECT_EQ(s.obs_u_values(j), poisson_exact(s.obs_u_points(0, j), s.obs_u_points(1, j)));
}

TEST(Observations, NoiseVarianceWithinFivePercent) {
  const PdeProblem p = problem_by_name("poisson_inverse_2d");
  SampleSet s;
  make_observations(p, 100000, 0, 0.01, 9, s);
  double sum = 0, sum2 = 0;
  for (Eigen::Index j = 0; j < s.obs_u_values.size(); ++j) {
    const double e = s.obs_u_values(j) - poisson_exact(s.obs_u_points(0, j), s.obs_u_points(1, j));
    sum += e;
    sum2 += e * e;
  }
  const double n = 100000.0;
  const double var = (sum2 - sum * sum / n) / (n - 1);
  EXPECT_NEAR(var, 0.01, 0.0005);
}

TEST(Observations, Errors) {
  SampleSet s;
  EXPECT_THROW(make_observations(problem_by_name("helmholtz_2d_a5"), 5, 5, 0.01, 0, s), std::invalid_argument);
  EXPECT_THROW(make_observations(problem_by_name("poisson_inverse_2d"), 5, 5, -1.0, 0, s), std::invalid_argument);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  for (const char* name : kProblems) {
    const PdeProblem p = problem_by_name(name);
    const Model m = small_model(p);
    const SampleSet s = sample(p, small_counts(p), 3);
    std::vector<std::unique_ptr<LossComponent>> losses;
    losses.push_back(make_residual_loss(p, m, s));
    if (p.is_inverse()) losses.push_back(make_data_loss(p, m, s));
    else losses.push_back(make_boundary_loss(p, m, s));
    for (const auto& loss : losses)
      for (std::uint64_t trial = 0; trial < 20; ++trial) {
        const ParamVector w = perturbed(m.init(trial), 100 + trial, 0.1);
        ParamVector g;
        loss->value_grad(w, g);
        const ParamVector fd = finite_diff_grad(*loss, w, 1e-6);
        const double err = (g - fd).lpNorm<Eigen::Infinity>() / (1.0 + g.lpNorm<Eigen::Infinity>());
        EXPECT_LT(err, 1e-5) << name << " " << loss->name() << " trial " << trial;
      }
  }
}

TEST(Losses, NtkTraceMatchesPerPointFiniteDifferences) {
  for (const char* name : kProblems) {
    const PdeProblem p = problem_by_name(name);
    const Model m = small_model(p);
    const SampleSet s = sample(p, small_counts(p), 4);
    const auto res = make_residual_loss(p, m, s);
    const ParamVector w = perturbed(m.init(1), 5, 0.1);
    double fd_trace = 0.0;
    const double h = 1e-6;
    std::vector<Vector> rows(static_cast<std::size_t>(w.size()));
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      ParamVector wp = w, wm = w;
      wp(k) += h;
      wm(k) -= h;
      const Vector d = (res->residuals(wp) - res->residuals(wm)) / (2 * h);
      fd_trace += d.squaredNorm();
    }
    const double trace = *res->ntk_trace(w);
    EXPECT_NEAR(trace, fd_trace, 1e-6 * fd_trace) << name;

    if (p.is_inverse()) continue;
    const auto bc = make_boundary_loss(p, m, s);
    // boundary term j is u(x_j) − target, so ∇ of it is ∇u(x_j)
    const Matrix pts = [&] {
      Matrix q(2, s.boundary.cols() + s.initial.cols());
      q << s.boundary, s.initial;
      return q;
    }();
    double bc_fd = 0.0;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      ParamVector wp = w, wm = w;
      wp(k) += h;
      wm(k) -= h;
      bc_fd += ((forward_values(m.u_net, wp, pts) - forward_values(m.u_net, wm, pts)) / (2 * h)).squaredNorm();
    }
    EXPECT_NEAR(*bc->ntk_trace(w), bc_fd, 1e-6 * bc_fd) << name;
  }
}

TEST(Losses, DataLossOfConstantOffset) {
  const PdeProblem p = problem_by_name("poisson_inverse_2d");
  const Model m = small_model(p);
  SampleSet s = sample(p, {10, 0, 60, 10}, 1);
  ParamVector w = ParamVector::Zero(static_cast<Eigen::Index>(m.param_count()));
  // zero weights: u ≡ its output bias, a ≡ its output bias
  const Eigen::Index ub = static_cast<Eigen::Index>(m.u_net.bias_offset(2));
  const Eigen::Index ab = static_cast<Eigen::Index>(m.u_count() + m.a_net->bias_offset(2));
  w(ub) = 0.4;
  w(ab) = 0.3;
  s.obs_u_values.setConstant(0.4 - 0.1);
  s.obs_a_values.setConstant(0.3 + 0.1);
  const auto data = make_data_loss(p, m, s);
  EXPECT_NEAR(data->value(w), 0.01, 1e-15);
  EXPECT_EQ(data->point_count(), 70u);
}

TEST(Losses, DataLossGradientOnlyReachesANetThroughBoundaryObservations) {
  const PdeProblem p = problem_by_name("poisson_inverse_2d");
  const Model m = small_model(p);
  SampleSet s = sample(p, {10, 0, 20, 5}, 1);
  const ParamVector w = perturbed(m.init(0), 1, 0.05);
  ParamVector g;
  make_data_loss(p, m, s)->value_grad(w, g);
  EXPECT_GT(g.tail(static_cast<Eigen::Index>(m.a_net->param_count())).norm(), 0.0);
  // with the a-block removed the coefficient parameters get nothing
  ValueMatchLoss only_u("data", m, {ValueMatchLoss::Block{false, s.obs_u_points, s.obs_u_values}});
  only_u.value_grad(w, g);
  EXPECT_TRUE(g.tail(static_cast<Eigen::Index>(m.a_net->param_count())).isZero(0.0));
}

TEST(Losses, BoundaryLossOfExactSolutionVanishes) {
  for (const char* name : {"helmholtz_2d_a5", "reaction_diffusion_1d"}) {
    const PdeProblem p = problem_by_name(name);
    const Model m = small_model(p);
    const SampleSet s = sample(p, {5, 200, 0, 0}, 2);
    const auto bc = make_boundary_loss(p, m, s);
    // only the initial line carries nonzero targets; a zero network matches the walls
    if (p.kind == ProblemKind::Helmholtz)
      EXPECT_LT(bc->value(ParamVector::Zero(static_cast<Eigen::Index>(m.param_count()))), 1e-28);
    for (Eigen::Index j = 0; j < s.boundary.cols(); ++j)
      EXPECT_NEAR(exact_solution(p, s.boundary(0, j), s.boundary(1, j)), 0.0, 1e-14);
  }
}

TEST(Losses, NonNegativeAndDeterministic) {
  for (const char* name : kProblems) {
    const PdeProblem p = problem_by_name(name);
    const Model m = small_model(p);
    const SampleSet s = sample(p, small_counts(p), 8);
    const auto res = make_residual_loss(p, m, s);
    for (std::uint64_t t = 0; t < 5; ++t) {
      const ParamVector w = perturbed(m.init(t), t, 0.5);
      const double a = res->value(w);
      EXPECT_GE(a, 0.0);
      EXPECT_EQ(a, res->value(w));
      ParamVector g1, g2;
      res->value_grad(w, g1);
      res->value_grad(w, g2);
      EXPECT_EQ(g1, g2);
      EXPECT_DOUBLE_EQ(a, res->residuals(w).squaredNorm() / static_cast<double>(s.interior.cols()));
    }
  }
}

TEST(Losses, EmptyPointSetsAreRejected) {
  const PdeProblem p = problem_by_name("helmholtz_2d_a5");
  const Model m = small_model(p);
  EXPECT_THROW(ResidualLoss(p, m, Matrix(2, 0)), std::invalid_argument);
  EXPECT_THROW(ValueMatchLoss("bc", m, {ValueMatchLoss::Block{false, Matrix(2, 0), Vector()}}), std::invalid_argument);
  EXPECT_THROW(ValueMatchLoss("bc", m, {ValueMatchLoss::Block{true, Matrix::Zero(2, 1), Vector::Zero(1)}}),
               std::invalid_argument);
  const SampleSet s = sample(p, {4, 4, 0, 0}, 0);
  EXPECT_THROW(make_data_loss(p, m, s), std::invalid_argument);
  const PdeProblem inv = problem_by_name("poisson_inverse_2d");
  EXPECT_THROW(make_boundary_loss(inv, small_model(inv), s), std::invalid_argument);
  EXPECT_THROW(ResidualLoss(inv, m, Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST(Evaluation, GridIncludesEndpoints) {
  const PdeProblem p = problem_by_name("reaction_diffusion_1d");
  const Matrix g = evaluation_grid(p.domain);
  ASSERT_EQ(g.cols(), 90000);
  EXPECT_DOUBLE_EQ(g.row(0).minCoeff(), -pi);
  EXPECT_DOUBLE_EQ(g.row(0).maxCoeff(), pi);
  EXPECT_DOUBLE_EQ(g.row(1).minCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(g.row(1).maxCoeff(), 1.0);
  EXPECT_THROW(evaluation_grid(p.domain, 1), std::invalid_argument);
}

TEST(Evaluation, ErrorMetricExamples) {
  const Vector exact = Vector::LinSpaced(90000, -1.0, 1.0);
  ErrorMetrics e = error_metrics(exact, exact);
  EXPECT_EQ(e.mse, 0.0);
  EXPECT_EQ(e.linf, 0.0);
  e = error_metrics((exact.array() + 0.1).matrix(), exact);
  EXPECT_NEAR(e.mse, 0.01, 1e-12);
  EXPECT_NEAR(e.linf, 0.1, 1e-12);
  Vector off = exact;
  off(1234) += 1.0;
  e = error_metrics(off, exact);
  EXPECT_DOUBLE_EQ(e.linf, 1.0);
  EXPECT_NEAR(e.mse, 1.0 / 90000, 1e-18);
  EXPECT_THROW(error_metrics(Vector::Zero(3), Vector::Zero(4)), std::invalid_argument);
}

TEST(Evaluation, InverseProblemJudgesTheCoefficient) {
  const PdeProblem p = problem_by_name("poisson_inverse_2d");
  const Model m = small_model(p);
  ParamVector w = ParamVector::Zero(static_cast<Eigen::Index>(m.param_count()));
  w(static_cast<Eigen::Index>(m.u_count() + m.a_net->bias_offset(2))) = 0.25;
  const Matrix grid = evaluation_grid(p.domain, 50);
  const ErrorMetrics e = evaluate(p, m, w, grid);
  double mse = 0, linf = 0;
  for (Eigen::Index j = 0; j < grid.cols(); ++j) {
    const double d = 0.25 - poisson_coefficient_exact(grid(0, j), grid(1, j));
    mse += d * d;
    linf = std::max(linf, std::abs(d));
  }
  EXPECT_NEAR(e.mse, mse / grid.cols(), 1e-15);
  EXPECT_NEAR(e.linf, linf, 1e-15);
}
