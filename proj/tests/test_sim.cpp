#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "koopsos/closed_loop.hpp"
#include "koopsos/errors.hpp"
#include "koopsos/sim.hpp"

using namespace koopsos;
using namespace koopsos::sim;

namespace {

OdeSystem decay(double rate) {
  OdeSystem s;
  s.n = 1;
  s.m = 0;
  s.drift = [rate](const Eigen::VectorXd& x) -> Eigen::VectorXd { return -rate * x; };
  return s;
}

OdeSystem blow_up() {
  // xdot = x^2 escapes in finite time from x0 = 1 at t = 1
  OdeSystem s;
  s.n = 1;
  s.m = 0;
  s.drift = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.cwiseProduct(x); };
  return s;
}

/// u = -K x written as a rational controller with P = I and u_d = 1.
design::RationalController linear_feedback(const Eigen::RowVectorXd& K) {
  const int n = static_cast<int>(K.size());
  design::RationalController c;
  c.alpha = 1;
  c.P = Eigen::MatrixXd::Identity(n, n);
  c.P_inv = c.P;
  c.u_d = Polynomial::constant(n, 1.0);
  c.L_n = PolyMatrix::from_matrix(-K, n);
  c.dictionary = koopman::Dictionary::identity(n);
  return c;
}

Eigen::VectorXd one(double v) { return Eigen::VectorXd::Constant(1, v); }

}  // namespace

TEST(Rk4, ZeroFieldIsIdentity) {
  const Eigen::Vector2d x0(0.3, -2.0);
  OdeSystem s;
  s.n = 2;
  s.m = 1;
  s.drift = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(x.size()); };
  s.input_maps.push_back([](const Eigen::VectorXd&) -> Eigen::VectorXd { return Eigen::Vector2d::Zero(); });
  EXPECT_EQ(rk4_flow(s, x0, one(4.0), 0.7, 13), x0);
}

TEST(Rk4, ExponentialDecay) {
  EXPECT_NEAR(rk4_flow(decay(1.0), one(1.0), Eigen::VectorXd(0), 1.0, 100)(0), std::exp(-1.0), 1e-6);
}

TEST(Rk4, FourthOrderConvergence) {
  const double exact = std::exp(-1.0);
  const double e10 = std::abs(rk4_flow(decay(1.0), one(1.0), Eigen::VectorXd(0), 1.0, 10)(0) - exact);
  const double e20 = std::abs(rk4_flow(decay(1.0), one(1.0), Eigen::VectorXd(0), 1.0, 20)(0) - exact);
  EXPECT_GE(e10 / e20, 12.0);
  EXPECT_LE(e10 / e20, 20.0);
}

TEST(Rk4, PendulumEquilibriumAndArguments) {
  const auto p = pendulum();
  EXPECT_EQ(rk4_flow(p, Eigen::Vector2d::Zero(), one(0.0), 0.01), Eigen::Vector2d::Zero());
  EXPECT_THROW(rk4_flow(p, Eigen::Vector2d::Zero(), one(0.0), 0.01, 0), std::invalid_argument);
  EXPECT_THROW(rk4_flow(p, Eigen::Vector2d::Zero(), one(0.0), 0.0), std::invalid_argument);
  EXPECT_THROW(rk4_flow(p, Eigen::Vector3d::Zero(), one(0.0), 0.01), DimensionError);
}

TEST(Rk4, BlowUpReportsTime) {
  try {
    rk4_flow(blow_up(), one(1.0), Eigen::VectorXd(0), 10.0, 20);
    FAIL() << "expected IntegrationError";
  } catch (const IntegrationError& e) {
    EXPECT_GT(e.blowup_time(), 0.0);
    EXPECT_LE(e.blowup_time(), 10.0);
  }
}

TEST(ClosedLoopCt, OriginIsFixed) {
  const auto ctrl = linear_feedback(Eigen::RowVector2d(20.0, 6.0));
  const auto tr = closed_loop_ct(pendulum(), ctrl, Eigen::Vector2d::Zero(), 0.1, 2.0);
  EXPECT_FALSE(tr.diverged);
  EXPECT_EQ(tr.size(), 21u);
  EXPECT_TRUE(tr.states.isZero(0.0));
  EXPECT_TRUE(tr.inputs.isZero(0.0));
}

TEST(ClosedLoopCt, OpenLoopFallsOver) {
  const auto zero = linear_feedback(Eigen::RowVector2d::Zero());
  const auto tr = closed_loop_ct(pendulum(), zero, Eigen::Vector2d(0.1, 0.0), 0.1, 3.0);
  EXPECT_GT(std::abs(tr.final_state()(0)), 1.0);
}

TEST(ClosedLoopCt, StabilizedAndConsistentAcrossHoldPeriods) {
  const auto ctrl = linear_feedback(Eigen::RowVector2d(20.0, 6.0));
  const Eigen::Vector2d x0(0.3, 0.0);
  std::vector<Eigen::VectorXd> at_one;
  for (double dt : {0.1, 0.05, 0.025}) {
    const auto tr = closed_loop_ct(pendulum(), ctrl, x0, dt, 5.0);
    EXPECT_FALSE(tr.diverged);
    EXPECT_LE(tr.final_state().norm(), 1e-3) << dt;
    at_one.push_back(tr.state(static_cast<std::size_t>(std::lround(1.0 / dt))));
    // input is constant on each hold interval and equals mu at the sample
    EXPECT_DOUBLE_EQ(tr.inputs(1, 0), -(20.0 * tr.states(1, 0) + 6.0 * tr.states(1, 1)));
  }
  // halving the hold period roughly halves the deviation
  const double d1 = (at_one[0] - at_one[1]).norm(), d2 = (at_one[1] - at_one[2]).norm();
  EXPECT_LT(d2, d1);
  EXPECT_LT(d2, 0.05);
}

TEST(ClosedLoopCt, HorizonMustBeMultipleOfHold) {
  const auto ctrl = linear_feedback(Eigen::RowVector2d(20.0, 6.0));
  EXPECT_THROW(closed_loop_ct(pendulum(), ctrl, Eigen::Vector2d::Zero(), 0.3, 1.0), std::invalid_argument);
  EXPECT_THROW(closed_loop_ct(pendulum(), ctrl, Eigen::Vector3d::Zero(), 0.1, 1.0), DimensionError);
}

TEST(ClosedLoopDt, ZeroStepsHoldsInitialState) {
  const auto ctrl = linear_feedback(Eigen::RowVector2d(0.1, 0.1));
  const koopman::BilinearModel model{Eigen::Matrix2d::Identity(), Eigen::Vector2d(0.0, 1.0), Eigen::MatrixXd::Zero(2, 2)};
  const Eigen::Vector2d z0(1.0, 2.0);
  const auto tr = closed_loop_dt(model, ctrl, z0, 0);
  ASSERT_EQ(tr.size(), 1u);
  EXPECT_EQ(tr.state(0), z0);
  EXPECT_THROW(closed_loop_dt(model, ctrl, z0, -1), std::invalid_argument);
}

TEST(ClosedLoopDt, MatchesHandIteration) {
  const auto ctrl = linear_feedback(Eigen::RowVector2d(0.5, 1.0));
  const koopman::BilinearModel model{(Eigen::Matrix2d() << 1.0, 0.1, 0.0, 1.0).finished(), Eigen::Vector2d(0.0, 0.1),
                                     0.01 * Eigen::MatrixXd::Ones(2, 2)};
  Eigen::VectorXd z = Eigen::Vector2d(1.0, -1.0);
  const auto tr = closed_loop_dt(model, ctrl, z, 10);
  for (int k = 0; k < 10; ++k) {
    const double u = -(0.5 * z(0) + 1.0 * z(1));
    z = model.A * z + model.B0 * u + model.Btilde * (u * z);
  }
  EXPECT_LE((tr.final_state() - z).norm(), 1e-15);
}

TEST(ClosedLoopDt, DivergenceIsFlagged) {
  const auto ctrl = linear_feedback(Eigen::RowVectorXd::Zero(1));
  const koopman::BilinearModel model{2.0 * Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Zero(1, 1)};
  const auto tr = closed_loop_dt(model, ctrl, one(1.0), 100);
  EXPECT_TRUE(tr.diverged);
  EXPECT_LT(tr.size(), 100u);
}

TEST(Residual, ZeroBoundGivesZero) {
  auto gen = residual_adversary(0.0, 0.0, AdversaryMode::RandomDirection, 1);
  EXPECT_TRUE(gen(Eigen::Vector3d(1, 2, 3), one(4.0), Eigen::Vector3d::Zero()).isZero(0.0));
  EXPECT_THROW(residual_adversary(-1.0, 0.0, AdversaryMode::RandomDirection, 1), std::invalid_argument);
}

TEST(Residual, NormEqualsBound) {
  for (auto mode : {AdversaryMode::RandomDirection, AdversaryMode::WorstAligned}) {
    auto gen = residual_adversary(0.1, 0.01, mode, 2, Eigen::Matrix3d::Identity());
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (int k = 0; k < 200; ++k) {
      const Eigen::Vector3d z(g(rng), g(rng), g(rng));
      const Eigen::VectorXd u = one(g(rng));
      const double beta = 0.1 * z.norm() + 0.01 * u.norm();
      EXPECT_NEAR(gen(z, u, z).norm(), beta, 1e-12 * std::max(1.0, beta));
    }
  }
}

TEST(Residual, WorstAlignedNearTrueMaximum) {
  const Eigen::Matrix2d Pinv = (Eigen::Matrix2d() << 4.0, 1.0, 1.0, 0.5).finished();
  auto worst = residual_adversary(0.2, 0.0, AdversaryMode::WorstAligned, 4, Pinv);
  const auto V = [&](const Eigen::VectorXd& z) { return z.dot(Pinv * z); };
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  for (int k = 0; k < 50; ++k) {
    const Eigen::Vector2d z(g(rng), g(rng)), nominal(g(rng), g(rng));
    const double beta = 0.2 * z.norm();
    // dense sweep of the residual circle
    double best = 0.0;
    for (int a = 0; a < 100000; ++a) {
      const double th = 2.0 * M_PI * a / 100000.0;
      best = std::max(best, V(nominal + beta * Eigen::Vector2d(std::cos(th), std::sin(th))));
    }
    const double vw = V(nominal + worst(z, Eigen::VectorXd::Zero(1), nominal));
    EXPECT_LE(vw, best * (1.0 + 1e-9));
    EXPECT_GE(vw, best * (1.0 - 1e-3));
  }
}

TEST(Trajectory, CsvLayout) {
  const auto ctrl = linear_feedback(Eigen::RowVector2d(20.0, 6.0));
  const auto tr = closed_loop_ct(pendulum(), ctrl, Eigen::Vector2d(0.1, 0.0), 0.1, 0.5);
  const auto path = std::filesystem::temp_directory_path() / "koopsos_traj.csv";
  tr.write_csv(path.string());
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "t,x1,x2,u1");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 6);
  std::filesystem::remove(path);
}
