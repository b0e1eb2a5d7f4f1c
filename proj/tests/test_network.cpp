#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "autobalance/loss.hpp"
#include "autobalance/network.hpp"
#include "autobalance/pde.hpp"

using namespace autobalance;

namespace {

Matrix random_points(Eigen::Index dim, Eigen::Index n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix p(dim, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < dim; ++i) p(i, j) = u(rng);
  return p;
}

ParamVector random_params(const NetworkSpec& spec, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  ParamVector w(static_cast<Eigen::Index>(spec.param_count()));
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = scale * n01(rng);
  return w;
}

double close_rel(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); }

// Uses every output stream with fixed random coefficients so that each
// adjoint path of the reverse pass is exercised.
class StreamMixLoss final : public LossComponent {
 public:
  StreamMixLoss(NetworkSpec spec, Matrix points, JetOrder order, std::uint64_t seed)
      : spec_(std::move(spec)), points_(std::move(points)), order_(order) {
    const JetTape t = forward_tape(spec_, init_params(spec_, 1), points_, order_);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    coef_.resize(t.output.rows(), t.output.cols());
    for (Eigen::Index j = 0; j < coef_.cols(); ++j)
      for (Eigen::Index i = 0; i < coef_.rows(); ++i) coef_(i, j) = n01(rng);
  }
  std::string name() const override { return "stream_mix"; }
  std::size_t param_count() const override { return spec_.param_count(); }
  double value(const ParamVector& w) const override {
    const JetTape t = forward_tape(spec_, w, points_, order_);
    return 0.5 * (t.output.array() * coef_.array()).square().sum();
  }
  double value_grad(const ParamVector& w, ParamVector& grad) const override {
    const JetTape t = forward_tape(spec_, w, points_, order_);
    const Matrix bar = (t.output.array() * coef_.array().square()).matrix();
    grad.setZero(w.size());
    backward(spec_, w, t, bar, grad);
    return 0.5 * (t.output.array() * coef_.array()).square().sum();
  }

 private:
  NetworkSpec spec_;
  Matrix points_;
  JetOrder order_;
  Matrix coef_;
};

} // namespace

TEST(InitParams, SizeOfSmallestNetwork) {
  const NetworkSpec spec{1, {1}, 1, Activation::Tanh};
  EXPECT_EQ(init_params(spec, 7).size(), 4);
}

TEST(InitParams, SizeOfBenchmarkNetwork) {
  const NetworkSpec spec{2, {50, 50, 50}, 1, Activation::Tanh};
  EXPECT_EQ(spec.param_count(), 5301u);
  EXPECT_EQ(init_params(spec, 0).size(), 5301);
}

TEST(InitParams, DeterministicPerSeed) {
  const NetworkSpec spec{2, {8, 8}, 1, Activation::Tanh};
  EXPECT_EQ(init_params(spec, 3), init_params(spec, 3));
  EXPECT_NE(init_params(spec, 3), init_params(spec, 4));
}

TEST(InitParams, GlorotBoundsAndZeroBiases) {
  const NetworkSpec spec{2, {50, 30}, 1, Activation::Tanh};
  const ParamVector w = init_params(spec, 11);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in(l) + spec.fan_out(l)));
    const auto n = static_cast<Eigen::Index>(spec.fan_in(l) * spec.fan_out(l));
    const auto weights = w.segment(static_cast<Eigen::Index>(spec.weight_offset(l)), n);
    EXPECT_LE(weights.cwiseAbs().maxCoeff(), bound);
    EXPECT_GT(weights.cwiseAbs().maxCoeff(), 0.5 * bound);
    EXPECT_TRUE(w.segment(static_cast<Eigen::Index>(spec.bias_offset(l)), static_cast<Eigen::Index>(spec.fan_out(l)))
                    .isZero(0.0));
  }
}

TEST(InitParams, RejectsZeroWidth) {
  const NetworkSpec spec{2, {4, 0}, 1, Activation::Tanh};
  EXPECT_THROW(init_params(spec, 0), std::invalid_argument);
}

TEST(ForwardJet, AffineLayerHasConstantGradientAndNoCurvature) {
  const NetworkSpec spec{3, {}, 1, Activation::Identity};
  ParamVector w(4);
  w << 0.5, -2.0, 3.0, 0.25; // W = (0.5, -2, 3), b = 0.25
  const Matrix pts = random_points(3, 6, 1);
  const JetBatch jet = forward_jet(spec, w, pts);
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    EXPECT_DOUBLE_EQ(jet.u(0, j), 0.5 * pts(0, j) - 2.0 * pts(1, j) + 3.0 * pts(2, j) + 0.25);
    for (int i = 0; i < 3; ++i) {
      EXPECT_DOUBLE_EQ(jet.du[i](0, j), w(i));
      EXPECT_EQ(jet.d2u[i](0, j), 0.0);
    }
  }
}

TEST(ForwardJet, ZeroWeightsGiveConstantFunction) {
  const NetworkSpec spec{2, {5, 4}, 1, Activation::Tanh};
  ParamVector w = ParamVector::Zero(static_cast<Eigen::Index>(spec.param_count()));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (std::size_t l = 0; l < spec.layer_count(); ++l)
    for (std::size_t k = 0; k < spec.fan_out(l); ++k) w(static_cast<Eigen::Index>(spec.bias_offset(l) + k)) = n01(rng);
  const double out_bias = w(static_cast<Eigen::Index>(spec.bias_offset(2)));
  const JetBatch jet = forward_jet(spec, w, random_points(2, 9, 2));
  for (Eigen::Index j = 0; j < 9; ++j) {
    EXPECT_DOUBLE_EQ(jet.u(0, j), out_bias);
    for (int i = 0; i < 2; ++i) {
      EXPECT_EQ(jet.du[i](0, j), 0.0);
      EXPECT_EQ(jet.d2u[i](0, j), 0.0);
    }
  }
}

TEST(ForwardJet, MatchesFiniteDifferences1D) {
  const NetworkSpec spec{1, {16}, 1, Activation::Tanh};
  const ParamVector w = init_params(spec, 21);
  const Matrix pts = random_points(1, 10, 3);
  const JetBatch jet = forward_jet(spec, w, pts);
  const double h = 1e-4;
  const Matrix up = forward_values(spec, w, (pts.array() + h).matrix());
  const Matrix um = forward_values(spec, w, (pts.array() - h).matrix());
  const Matrix u0 = forward_values(spec, w, pts);
  for (Eigen::Index j = 0; j < 10; ++j) {
    const double fd1 = (up(0, j) - um(0, j)) / (2 * h);
    const double fd2 = (up(0, j) - 2 * u0(0, j) + um(0, j)) / (h * h);
    EXPECT_LT(close_rel(jet.du[0](0, j), fd1), 1e-5);
    EXPECT_LT(close_rel(jet.d2u[0](0, j), fd2), 1e-5);
  }
}

TEST(ForwardJet, MatchesFiniteDifferencesPerCoordinate) {
  const NetworkSpec spec{3, {12, 9}, 1, Activation::Tanh};
  const ParamVector w = random_params(spec, 8, 0.6);
  const Matrix pts = random_points(3, 15, 4);
  const JetBatch jet = forward_jet(spec, w, pts);
  const double h = 1e-4;
  for (Eigen::Index i = 0; i < 3; ++i) {
    Matrix pp = pts, pm = pts;
    pp.row(i).array() += h;
    pm.row(i).array() -= h;
    const Matrix up = forward_values(spec, w, pp), um = forward_values(spec, w, pm), u0 = forward_values(spec, w, pts);
    for (Eigen::Index j = 0; j < pts.cols(); ++j) {
      EXPECT_LT(close_rel(jet.du[static_cast<std::size_t>(i)](0, j), (up(0, j) - um(0, j)) / (2 * h)), 1e-5);
      EXPECT_LT(close_rel(jet.d2u[static_cast<std::size_t>(i)](0, j), (up(0, j) - 2 * u0(0, j) + um(0, j)) / (h * h)),
                1e-5);
    }
  }
}

TEST(ForwardJet, ValuesAgreeWithPlainEvaluation) {
  const NetworkSpec spec{2, {50, 50, 50}, 1, Activation::Tanh};
  const ParamVector w = init_params(spec, 2);
  const Matrix pts = random_points(2, 300, 9);
  const JetBatch jet = forward_jet(spec, w, pts);
  const Matrix u = forward_values(spec, w, pts, 64);
  EXPECT_LT((jet.u - u).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(ForwardJet, IdentityNetworksHaveExactlyZeroCurvature) {
  const NetworkSpec spec{2, {7, 5, 3}, 1, Activation::Identity};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const JetBatch jet = forward_jet(spec, random_params(spec, seed), random_points(2, 20, seed + 100));
    for (const auto& m : jet.d2u) EXPECT_TRUE(m.isZero(0.0));
  }
}

TEST(ForwardJet, BitwiseDeterministic) {
  const NetworkSpec spec{2, {20, 20}, 1, Activation::Tanh};
  const ParamVector w = init_params(spec, 4);
  const Matrix pts = random_points(2, 64, 10);
  const JetBatch a = forward_jet(spec, w, pts), b = forward_jet(spec, w, pts);
  EXPECT_EQ(a.u, b.u);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(a.du[i], b.du[i]);
    EXPECT_EQ(a.d2u[i], b.d2u[i]);
  }
}

TEST(ForwardJet, DimensionMismatchThrows) {
  const NetworkSpec spec{2, {4}, 1, Activation::Tanh};
  const ParamVector w = init_params(spec, 0);
  EXPECT_THROW(forward_jet(spec, w, random_points(3, 4, 0)), std::invalid_argument);
  EXPECT_THROW(forward_jet(spec, ParamVector::Zero(3), random_points(2, 4, 0)), std::invalid_argument);
  EXPECT_THROW(forward_values(spec, w, random_points(1, 4, 0)), std::invalid_argument);
}

TEST(Backward, GradientMatchesFiniteDifferencesAcrossStreams) {
  for (auto act : {Activation::Tanh, Activation::Identity})
    for (auto order : {JetOrder::Value, JetOrder::Full}) {
      const NetworkSpec spec{2, {6, 5}, 1, act};
      const StreamMixLoss loss(spec, random_points(2, 7, 13), order, 17);
      const ParamVector w = random_params(spec, 19, act == Activation::Tanh ? 0.7 : 0.4);
      ParamVector g;
      loss.value_grad(w, g);
      const ParamVector fd = finite_diff_grad(loss, w, 1e-6);
      EXPECT_LT((g - fd).lpNorm<Eigen::Infinity>() / (1.0 + g.lpNorm<Eigen::Infinity>()), 1e-6)
          << to_string(act) << (order == JetOrder::Full ? " full" : " value");
    }
}

TEST(Backward, PerPointSquaredNormsMatchSeparateGradients) {
  const NetworkSpec spec{2, {6, 4}, 1, Activation::Tanh};
  const ParamVector w = random_params(spec, 3, 0.8);
  const Matrix pts = random_points(2, 5, 6);
  const JetTape tape = forward_tape(spec, w, pts, JetOrder::Full);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  Matrix bar(tape.output.rows(), tape.output.cols());
  for (Eigen::Index j = 0; j < bar.cols(); ++j) bar(0, j) = n01(rng);

  ParamVector total = ParamVector::Zero(w.size());
  Vector sq;
  backward(spec, w, tape, bar, total, &sq);
  ParamVector sum = ParamVector::Zero(w.size());
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    Matrix only = Matrix::Zero(bar.rows(), bar.cols());
    for (std::size_t s = 0; s < tape.streams; ++s) {
      const Eigen::Index c = static_cast<Eigen::Index>(s) * pts.cols() + j;
      only(0, c) = bar(0, c);
    }
    ParamVector gj = ParamVector::Zero(w.size());
    backward(spec, w, tape, only, gj);
    EXPECT_NEAR(sq(j), gj.squaredNorm(), 1e-10 * (1.0 + gj.squaredNorm()));
    sum += gj;
  }
  EXPECT_LT((sum - total).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, AccumulatesIntoGradientBuffer) {
  const NetworkSpec spec{2, {3}, 1, Activation::Tanh};
  const ParamVector w = init_params(spec, 1);
  const JetTape tape = forward_tape(spec, w, random_points(2, 4, 1), JetOrder::Value);
  const Matrix bar = Matrix::Ones(1, 4);
  ParamVector once = ParamVector::Zero(w.size()), twice = ParamVector::Zero(w.size());
  backward(spec, w, tape, bar, once);
  backward(spec, w, tape, bar, twice);
  backward(spec, w, tape, bar, twice);
  EXPECT_LT((twice - 2.0 * once).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LossValueGrad, ZeroTargetAtZeroNetworkIsAMinimum) {
  Model m;
  m.u_net = NetworkSpec{2, {8}, 1, Activation::Tanh};
  ValueMatchLoss::Block blk{false, random_points(2, 30, 1), Vector::Zero(30)};
  const ValueMatchLoss loss("zero_target", m, {blk});
  const ValueGrad vg = loss_value_grad(loss, ParamVector::Zero(static_cast<Eigen::Index>(m.param_count())));
  EXPECT_EQ(vg.value, 0.0);
  EXPECT_TRUE(vg.grad.isZero(0.0));
}

TEST(LossValueGrad, HalfSquaredNormGradientIsTheParameters) {
  const QuadraticLoss loss = QuadraticLoss::half_squared_norm(5);
  ParamVector w(5);
  w << 1, -2, 3.5, 0, 1e-3;
  const ValueGrad vg = loss_value_grad(loss, w);
  EXPECT_EQ(vg.grad, w);
  EXPECT_DOUBLE_EQ(vg.value, 0.5 * w.squaredNorm());
}

TEST(LossValueGrad, NonFiniteRaisesWithStep) {
  const QuadraticLoss loss = QuadraticLoss::half_squared_norm(2);
  ParamVector w(2);
  w << 1.0, std::numeric_limits<double>::infinity();
  try {
    loss_value_grad(loss, w, 42);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    ASSERT_TRUE(e.step().has_value());
    EXPECT_EQ(*e.step(), 42);
    EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
  }
}

TEST(LossValueGrad, WrongLengthThrows) {
  const QuadraticLoss loss = QuadraticLoss::half_squared_norm(3);
  EXPECT_THROW(loss_value_grad(loss, ParamVector::Zero(2)), std::invalid_argument);
}

TEST(FiniteDiffGrad, HalfSquaredNorm) {
  const QuadraticLoss loss = QuadraticLoss::half_squared_norm(2);
  ParamVector w(2);
  w << 1, 2;
  const ParamVector g = finite_diff_grad(loss, w, 1e-5);
  EXPECT_NEAR(g(0), 1.0, 1e-8);
  EXPECT_NEAR(g(1), 2.0, 1e-8);
}

TEST(FiniteDiffGrad, ConstantLossHasZeroGradient) {
  const QuadraticLoss loss("constant", Matrix::Zero(4, 4));
  EXPECT_TRUE(finite_diff_grad(loss, ParamVector::Ones(4), 1e-3).isZero(0.0));
}

TEST(FiniteDiffGrad, RejectsNonPositiveStep) {
  const QuadraticLoss loss = QuadraticLoss::half_squared_norm(2);
  EXPECT_THROW(finite_diff_grad(loss, ParamVector::Ones(2), 0.0), std::invalid_argument);
  EXPECT_THROW(finite_diff_grad(loss, ParamVector::Ones(2), -1e-3), std::invalid_argument);
}

TEST(ScaledLoss, ScalesValueAndGradient) {
  const QuadraticLoss base = QuadraticLoss::half_squared_norm(3);
  const ScaledLoss scaled(base, 4.0);
  const ParamVector w = ParamVector::Constant(3, 2.0);
  ParamVector g;
  EXPECT_DOUBLE_EQ(scaled.value_grad(w, g), 4.0 * base.value(w));
  EXPECT_EQ(g, 4.0 * w);
}
