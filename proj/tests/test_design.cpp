#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "koopsos/closed_loop.hpp"
#include "koopsos/design.hpp"
#include "koopsos/errors.hpp"
#include "support.hpp"

using namespace koopsos;
using namespace koopsos::design;

namespace {

/// Solved once and shared; the SDP takes a noticeable fraction of a second.
const SynthesisResult& synthetic() {
  static const SynthesisResult r = fixtures::SyntheticDesign().solve();
  return r;
}

RationalController quadratic_bowl(const Eigen::MatrixXd& P) {
  const int n = static_cast<int>(P.rows());
  RationalController c;
  c.P = P;
  c.P_inv = P.inverse();
  c.u_d = Polynomial::constant(n, 1.0);
  c.L_n = PolyMatrix(1, n, n);
  c.dictionary = koopman::Dictionary::identity(n);
  return c;
}

Box unit_square() { return {Eigen::Vector2d(-1.0, -1.0), Eigen::Vector2d(1.0, 1.0)}; }

}  // namespace

TEST(Denominator, PresetsAndValidation) {
  const auto b1 = DenominatorSpec::building(1);
  EXPECT_TRUE(b1.strictness_verified);
  EXPECT_EQ(b1.u_d.degree(), 2);
  EXPECT_NEAR(b1.u_d.evaluate(Eigen::VectorXd::Constant(1, -1.0)), 0.01, 1e-15);
  EXPECT_NEAR(b1.u_d.evaluate(Eigen::VectorXd::Zero(1)), 1.01, 1e-15);
  EXPECT_EQ(DenominatorSpec::building(3).u_d.degree(), 6);

  const auto fq = DenominatorSpec::full_quadratic(3);
  EXPECT_EQ(fq.u_d.num_terms(), 7u);
  EXPECT_EQ(fq.u_d.evaluate(Eigen::Vector3d::Zero()), 1.0);

  const Polynomial x = Polynomial::variable(1, 0);
  EXPECT_THROW(DenominatorSpec::checked(Polynomial::constant(1, 1.0) + x * x, 2), DegreeError);
  EXPECT_THROW(DenominatorSpec::checked(x * x, 1), SpecError);
  EXPECT_THROW(DenominatorSpec::checked(Polynomial::constant(1, 1.0) - x * x, 1), SpecError);
}

TEST(BuildDesign, BlockDimensions) {
  const auto b = build_design(koopman::building_model(), koopman::ResidualBound::fixed(0.1, 0.1), DenominatorSpec::building(1), 1);
  EXPECT_EQ(b.block_dim, 4);
  const koopman::BilinearModel three{Eigen::Matrix3d::Identity(), Eigen::Vector3d::Ones(), Eigen::Matrix3d::Identity()};
  const auto p = build_design(three, koopman::ResidualBound::fixed(1e-2, 1e-3), DenominatorSpec::full_quadratic(3), 1);
  EXPECT_EQ(p.block_dim, 10);
}

TEST(BuildDesign, RejectsDegenerateBoundsAndDegreeMismatch) {
  const auto model = koopman::building_model();
  const auto den = DenominatorSpec::building(1);
  EXPECT_THROW(build_design(model, koopman::ResidualBound::fixed(0.0, 0.1), den, 1), SpecError);
  EXPECT_THROW(build_design(model, koopman::ResidualBound::fixed(0.1, 5e-9), den, 1), SpecError);
  EXPECT_THROW(build_design(model, koopman::ResidualBound::fixed(0.1, 0.1), den, 2), DegreeError);
}

TEST(Synthesis, SyntheticDesignIsFeasibleAndCertified) {
  const auto& r = synthetic();
  ASSERT_TRUE(r.feasible()) << r.message;
  ASSERT_TRUE(r.controller);
  const auto& c = *r.controller;
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c.P).eigenvalues().minCoeff(), 0.0);
  EXPECT_GT(c.rho, 0.0);
  CertificateOptions opt;
  opt.n_samples = 3000;
  opt.seed = 11;
  const auto rep = certificate_check(r, fixtures::SyntheticDesign().box, opt);
  EXPECT_EQ(rep.psd_violations, 0) << rep.worst_min_eigenvalue;
  EXPECT_EQ(rep.decrease_violations, 0) << rep.worst_decrease_slack;
  EXPECT_GT(rep.epsilon, 0.0);
}

TEST(Synthesis, InadmissibleResidualIsDetected) {
  const auto& c = *synthetic().controller;
  CertificateOptions opt;
  opt.n_samples = 3000;
  opt.seed = 12;
  opt.residual_scale = 10.0;
  opt.check_psd = false;
  const auto rep = certificate_check(c, fixtures::SyntheticDesign().box, opt);
  EXPECT_GT(rep.decrease_violations, 0);
  ASSERT_TRUE(rep.decrease_witness);

  // the discrete loop with residuals at 10x the bound leaves the sublevel set
  auto adv = sim::residual_adversary(10.0 * c.bound.c_x, 10.0 * c.bound.c_u, sim::AdversaryMode::WorstAligned, 3, c.P_inv);
  const auto tr = sim::closed_loop_dt(*c.model, c, Eigen::Vector2d(1.0, 1.0), 200, &adv);
  bool increased = tr.diverged;
  for (std::size_t k = 1; k < tr.size() && !increased; ++k) increased = c.lyapunov(tr.state(k)) > c.lyapunov(tr.state(k - 1));
  EXPECT_TRUE(increased);
}

TEST(Synthesis, ExtremeBoundIsInfeasible) {
  const auto r = fixtures::SyntheticDesign().solve(1e3, 1e3);
  EXPECT_EQ(r.status, SynthesisResult::Status::Infeasible) << r.message;
  EXPECT_FALSE(r.controller);
}

TEST(Synthesis, BuildingIsInfeasibleAtNominalBound) {
  const auto d = build_design(koopman::building_model(), koopman::ResidualBound::fixed(0.1, 0.1), DenominatorSpec::building(1), 1);
  EXPECT_NE(synthesize(d).status, SynthesisResult::Status::Feasible);
}

TEST(Properties, CertificateIsHomogeneous) {
  const auto& r = synthetic();
  const auto& c = *r.controller;
  RationalController s = c;
  const double k = 3.7;
  s.P = k * c.P;
  s.P_inv = c.P_inv / k;
  for (int i = 0; i < s.L_n.rows(); ++i)
    for (int j = 0; j < s.L_n.cols(); ++j) s.L_n(i, j) = k * c.L_n(i, j);
  s.rho = k * c.rho;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd z = fixtures::SyntheticDesign().box.sample(rng);
    const Eigen::MatrixXd M = certificate_matrix(c, c.tau, *c.model, z);
    const Eigen::MatrixXd Ms = certificate_matrix(s, c.tau * k, *c.model, z);
    EXPECT_LE((Ms - k * M).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, M.cwiseAbs().maxCoeff()));
    EXPECT_LE((eval_controller(s, z) - eval_controller(c, z)).norm(), 1e-12 * std::max(1.0, eval_controller(c, z).norm()));
  }
}

TEST(Properties, FeasibilityIsMonotoneInTheBound) {
  // a solution certified at (c_x, c_u) stays certified at any smaller pair
  auto c = *synthetic().controller;
  c.bound = koopman::ResidualBound::fixed(0.5 * c.bound.c_x, 0.25 * c.bound.c_u);
  CertificateOptions opt;
  opt.n_samples = 2000;
  opt.seed = 13;
  const auto rep = certificate_check(c, fixtures::SyntheticDesign().box, opt);
  EXPECT_EQ(rep.psd_violations, 0);
  EXPECT_EQ(rep.decrease_violations, 0);
}

TEST(Controller, Examples) {
  const auto& c = *synthetic().controller;
  EXPECT_TRUE(eval_controller(c, Eigen::Vector2d::Zero()).isZero(0.0));

  RationalController toy = quadratic_bowl(Eigen::MatrixXd::Identity(1, 1));
  const Polynomial x = Polynomial::variable(1, 0);
  toy.L_n(0, 0) = 2.0 * x;
  toy.u_d = Polynomial::constant(1, 1.0) + x * x;
  EXPECT_DOUBLE_EQ(eval_controller(toy, Eigen::VectorXd::Ones(1))(0), 1.0);
}

TEST(Controller, JsonRoundTrip) {
  const auto& c = *synthetic().controller;
  const auto back = controller_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(back.P, c.P);
  EXPECT_EQ(back.rho, c.rho);
  EXPECT_EQ(back.bound.c_x, c.bound.c_x);
  ASSERT_TRUE(back.model);
  EXPECT_EQ(back.model->A, c.model->A);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd x = fixtures::SyntheticDesign().box.sample(rng);
    EXPECT_LE((eval_controller(back, x) - eval_controller(c, x)).norm(), 1e-12);
  }
  EXPECT_THROW(controller_from_json(nlohmann::json::parse(R"({"alpha": 1})")), DataError);
}

TEST(RoA, IdentityLevelSet) {
  const auto est = estimate_roa(quadratic_bowl(Eigen::Matrix2d::Identity()), unit_square(), 4000, 4000, 1);
  EXPECT_NEAR(est.c, 0.95, 1e-12);
  EXPECT_EQ(est.containment_checked, 4000);
}

TEST(RoA, EllipseLimitedByShortAxis) {
  const Eigen::Matrix2d P = Eigen::Vector2d(4.0, 1.0).asDiagonal();
  const auto est = estimate_roa(quadratic_bowl(P), unit_square(), 4000, 4000, 2);
  EXPECT_NEAR(est.c, 0.95 * 0.25, 1e-12);
}

TEST(RoA, Errors) {
  const auto c = quadratic_bowl(Eigen::Matrix2d::Identity());
  EXPECT_THROW(estimate_roa(c, {Eigen::Vector2d(0.0, -1.0), Eigen::Vector2d(1.0, 1.0)}, 100, 100, 1), std::invalid_argument);
  EXPECT_THROW(estimate_roa(c, {Eigen::Vector3d::Constant(-1.0), Eigen::Vector3d::Ones()}, 100, 100, 1), DimensionError);
}

TEST(RoA, SublevelSetIsContainedAndInvariant) {
  const auto& c = *synthetic().controller;
  const Box box = fixtures::SyntheticDesign().box;
  const auto est = estimate_roa(c, box, 4000, 4000, 3);
  ASSERT_GT(est.c, 0.0);
  // fresh seed: no sampled point of the sublevel set lies outside the box
  std::mt19937_64 rng(987654);
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c.P).eigenvalues().maxCoeff();
  const double r = std::sqrt(est.c * lmax) * 1.05;
  const Box enclosure{Eigen::Vector2d::Constant(-std::max(r, 5.0)), Eigen::Vector2d::Constant(std::max(r, 5.0))};
  int inside = 0, runs = 0;
  for (int k = 0; k < 20000; ++k) {
    const Eigen::VectorXd x = enclosure.sample(rng);
    if (c.lyapunov_state(x) > est.c) continue;
    ++inside;
    EXPECT_TRUE(box.contains(x));
    if (runs < 20) {
      ++runs;
      auto adv = sim::residual_adversary(c.bound.c_x, c.bound.c_u, sim::AdversaryMode::WorstAligned, 100 + k, c.P_inv);
      const auto tr = sim::closed_loop_dt(*c.model, c, x, 100, &adv);
      EXPECT_FALSE(tr.diverged);
      for (std::size_t j = 1; j < tr.size(); ++j) EXPECT_LE(c.lyapunov(tr.state(j)), est.c * (1.0 + 1e-9));
    }
  }
  EXPECT_GT(inside, 100);
}
