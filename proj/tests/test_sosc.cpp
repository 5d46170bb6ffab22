#include <gtest/gtest.h>

#include <cmath>

#include "koopsos/design.hpp"
#include "koopsos/errors.hpp"
#include "koopsos/sosc.hpp"
#include "support.hpp"

using namespace koopsos;
using namespace koopsos::sos;

namespace {

Polynomial x(int n = 1) { return Polynomial::variable(n, 0); }
Polynomial c(double v, int n = 1) { return Polynomial::constant(n, v); }

AffinePolyMatrixExpr scalar_expr(const LinPoly& p) {
  AffinePolyMatrixExpr e(1, 1, p.num_vars());
  e(0, 0) = p;
  return e;
}

int count_psd_blocks(const sdp::ConicProblem& p, int dim) {
  int k = 0;
  for (const auto& cone : p.cones)
    if (cone.kind == sdp::Cone::Kind::Psd && cone.dim == dim) ++k;
  return k;
}

}  // namespace

TEST(Declare, DegreesOfFreedom) {
  SOSProgram p3(1);
  p3.declare(SymMatrixKind{3});
  EXPECT_EQ(p3.num_conic_vars(), 6);

  SOSProgram p2(2);
  p2.declare(PolyMatrixKind{1, 2, 1});
  EXPECT_EQ(p2.num_conic_vars(), 6);

  SOSProgram p1(1);
  const auto s = p1.declare(SosPolyKind{2, 1e-6});
  EXPECT_EQ(p1.poly(s).degree(), 2);
  p1.add_equality(p1.poly(s).terms().begin()->second, 1.0);
  const auto prob = p1.compile();
  EXPECT_EQ(count_psd_blocks(prob, 2), 1);
}

TEST(AddMatrixSos, ScalarExamples) {
  SOSProgram ok(1);
  ok.add_matrix_sos(scalar_expr(x() * x() + c(1.0)), 2);
  EXPECT_TRUE(ok.recover(sdp::solve(ok.compile())).ok());

  SOSProgram odd(1);
  odd.add_matrix_sos(scalar_expr(x()), 2);
  const auto r = sdp::solve(odd.compile());
  EXPECT_EQ(r.status, sdp::Status::Infeasible) << r.message;
}

TEST(AddMatrixSos, TwoByTwoHandDecomposition) {
  PolyMatrix M(2, 2, 1);
  M(0, 0) = x() * x() + c(1.0);
  M(0, 1) = x();
  M(1, 0) = x();
  M(1, 1) = c(1.0);
  SOSProgram prog(1);
  prog.add_matrix_sos(AffinePolyMatrixExpr::from_poly_matrix(M), 2);
  const auto sol = prog.recover(sdp::solve(prog.compile()));
  ASSERT_TRUE(sol.ok());
  EXPECT_LE(sol.certificates.front().residual, 1e-6);
  EXPECT_GE(sol.certificates.front().min_eigenvalue, -1e-7);
}

TEST(AddMatrixSos, Errors) {
  SOSProgram prog(1);
  PolyMatrix asym(2, 2, 1);
  asym(0, 1) = x();
  EXPECT_THROW(prog.add_matrix_sos(AffinePolyMatrixExpr::from_poly_matrix(asym), 2), StructuralError);
  EXPECT_THROW(prog.add_matrix_sos(AffinePolyMatrixExpr::zeros(2, 3, 1), 2), StructuralError);
  EXPECT_THROW(prog.add_matrix_sos(scalar_expr(x().pow(4)), 2), DegreeError);
}

TEST(Compile, EmptyProgramIsStructuralError) {
  SOSProgram prog(2);
  EXPECT_THROW(prog.compile(), StructuralError);
}

TEST(Compile, FeasibilityProgramHasZeroObjective) {
  SOSProgram prog(1);
  prog.add_matrix_sos(scalar_expr(x() * x() + c(1.0)), 2);
  EXPECT_TRUE(prog.compile().objective.isZero(0.0));
}

TEST(Compile, UniqueGramMatrix) {
  // x^2 + 2x + 2 on basis [1, x]: G11 = 2, 2 G12 = 2, G22 = 1
  SOSProgram prog(1);
  prog.add_matrix_sos(scalar_expr(x() * x() + 2.0 * x() + c(2.0)), 2);
  const auto sol = prog.recover(sdp::solve(prog.compile()));
  ASSERT_TRUE(sol.ok());
  const auto& g = sol.certificates.front().gram;
  ASSERT_EQ(g.rows(), 2);
  const Eigen::Matrix2d expect = (Eigen::Matrix2d() << 2.0, 1.0, 1.0, 1.0).finished();
  EXPECT_LE((g - expect).cwiseAbs().maxCoeff(), 1e-6);
  const Eigen::Vector2d eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues();
  EXPECT_NEAR(eig(0), (3.0 - std::sqrt(5.0)) / 2.0, 1e-6);
  EXPECT_NEAR(eig(1), (3.0 + std::sqrt(5.0)) / 2.0, 1e-6);
}

TEST(Compile, BuildingBlockSizes) {
  // n = m = 1, alpha = 1: block dimension 3n + m = 4 on basis {1, x} -> Gram size 8,
  // plus the size-2 Gram block of tau
  const auto d = design::build_design(koopman::building_model(), koopman::ResidualBound::fixed(0.1, 0.1),
                                      design::DenominatorSpec::building(1), 1);
  EXPECT_EQ(d.block_dim, 4);
  EXPECT_EQ(d.program.num_constraints(), 1u);
  EXPECT_EQ(d.program.gram_dimension(0), 8);
  const auto prob = d.program.compile();
  EXPECT_EQ(count_psd_blocks(prob, 8), 1);
  EXPECT_EQ(count_psd_blocks(prob, 2), 1);
}

TEST(Compile, ObjectiveIsHonoured) {
  // min t s.t. x^2 + 2x + t is SOS  ->  t = 1
  SOSProgram prog(1);
  const auto t = prog.declare(ScalarKind{});
  prog.add_matrix_sos(scalar_expr(LinPoly(x() * x() + 2.0 * x()) + LinPoly::constant(1, prog.scalar(t))), 2);
  prog.minimize(prog.scalar(t));
  const auto sol = prog.recover(sdp::solve(prog.compile()));
  ASSERT_TRUE(sol.ok());
  EXPECT_NEAR(sol.scalar(t), 1.0, 1e-6);
}

TEST(Recover, TrivialSosVariable) {
  SOSProgram prog(1);
  const auto s = prog.declare(SosPolyKind{0, 0.0});
  prog.add_equality(prog.poly(s).terms().begin()->second, 1.0);
  const auto sol = prog.recover(sdp::solve(prog.compile()));
  ASSERT_TRUE(sol.ok());
  EXPECT_NEAR(sol.poly(s).evaluate(Eigen::VectorXd::Constant(1, 0.7)), 1.0, 1e-7);
  ASSERT_EQ(sol.certificates.size(), 1u);
  EXPECT_NEAR(sol.certificates.front().gram(0, 0), 1.0, 1e-7);
}

TEST(Recover, InfeasiblePropagatesWithoutValues) {
  SOSProgram prog(1);
  const auto P = prog.declare(SymMatrixKind{1});
  prog.add_matrix_sos(scalar_expr(LinPoly(x())), 2);
  const auto sol = prog.recover(sdp::solve(prog.compile()));
  EXPECT_FALSE(sol.ok());
  EXPECT_THROW(sol.matrix(P), StructuralError);
}

TEST(Recover, StrictMarginEnforced) {
  // s = x^2 + a with a free and (s - 0.5) SOS: minimizing a gives a = 0.5
  SOSProgram prog(1);
  const auto s = prog.declare(SosPolyKind{2, 0.5});
  const auto& sp = prog.poly(s);
  for (const auto& [mono, coeff] : sp.terms())
    if (mono.degree() != 0) prog.add_equality(coeff, mono.degree() == 2 ? 1.0 : 0.0);
  prog.minimize(sp.terms().begin()->second);
  const auto sol = prog.recover(sdp::solve(prog.compile()));
  ASSERT_TRUE(sol.ok());
  EXPECT_NEAR(sol.poly(s).evaluate(Eigen::VectorXd::Zero(1)), 0.5, 1e-6);
}

TEST(OracleProperties, ConstructedSosAcceptedMotzkinRejected) {
  const auto r = fixtures::sos_oracle_suite(2024);
  EXPECT_EQ(r.scalar_accepted, r.scalar_total);
  EXPECT_TRUE(r.motzkin_rejected);
  EXPECT_EQ(r.matrix_accepted, r.matrix_total);
  EXPECT_LE(r.worst_residual, 1e-6);
  EXPECT_GE(r.worst_gram_eigenvalue, -1e-7);
}

TEST(OracleProperties, GramReproducesTransposeProductCoefficientwise) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 10; ++k) {
    PolyMatrix T(2, 2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) T(i, j) = fixtures::random_polynomial(2, 2, rng);
    const PolyMatrix M = T.transpose() * T;
    SOSProgram prog(2);
    prog.add_matrix_sos(AffinePolyMatrixExpr::from_poly_matrix(M), 4);
    const auto sol = prog.recover(sdp::solve(prog.compile()));
    ASSERT_TRUE(sol.ok());
    const auto& cert = sol.certificates.front();
    // independent recomputation of the residual from the returned Gram matrix
    EXPECT_LE(SOSProgram::gram_residual(M, cert.basis, cert.gram), 1e-6);
    EXPECT_GE(cert.min_eigenvalue, -1e-7);
  }
}

TEST(AffineExpr, SymmetricFromUpperMirrorsBlocks) {
  SOSProgram prog(1);
  const auto P = prog.declare(SymMatrixKind{2});
  const auto L = prog.declare(PolyMatrixKind{1, 2, 1});
  const auto& Pe = prog.expr(P);
  const auto& Le = prog.expr(L);
  const auto M = AffinePolyMatrixExpr::symmetric_from_upper({{Pe, Le.transpose()}, {AffinePolyMatrixExpr::zeros(1, 1, 1)}});
  ASSERT_EQ(M.rows(), 3);
  EXPECT_TRUE(M.is_symmetric());
  EXPECT_TRUE(M(2, 0) == M(0, 2));
}
