#pragma once

// Generators and fixtures shared by the unit suites and the acceptance binary.

#include <algorithm>
#include <chrono>
#include <random>

#include <Eigen/Dense>

#include "koopsos/design.hpp"
#include "koopsos/koopman.hpp"
#include "koopsos/poly.hpp"
#include "koopsos/sdp.hpp"
#include "koopsos/sosc.hpp"

namespace koopsos::fixtures {

/// Random polynomial over n vars with degree <= d, each basis monomial kept
/// with probability 0.6 and given a coefficient uniform in [-1, 1].
inline Polynomial random_polynomial(int n, int d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coeff(-1.0, 1.0);
  std::bernoulli_distribution keep(0.6);
  Polynomial p(n);
  for (const auto& m : monomial_basis(n, d))
    if (keep(rng)) p.add_term(m, coeff(rng));
  if (p.is_zero()) p.add_term(Monomial::variable(n, 0), 1.0);
  return p;
}

inline Eigen::MatrixXd random_matrix(int r, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

/// Outcome of one SOS membership query.
struct SosQuery {
  bool accepted = false;
  double residual = 0.0;
  double min_gram_eigenvalue = 0.0;
};

/// Is the symmetric polynomial matrix M a matrix SOS at degree bound 2*ceil(deg/2)?
inline SosQuery sos_query(const PolyMatrix& M) {
  const int two_alpha = M.degree() + M.degree() % 2;
  sos::SOSProgram prog(M.num_vars());
  prog.add_matrix_sos(sos::AffinePolyMatrixExpr::from_poly_matrix(M), two_alpha, "query");
  const auto sol = prog.recover(sdp::solve(prog.compile()));
  SosQuery q;
  q.accepted = sol.ok();
  if (q.accepted) {
    q.residual = sol.certificates.front().residual;
    q.min_gram_eigenvalue = sol.certificates.front().min_eigenvalue;
  }
  return q;
}

inline PolyMatrix scalar_matrix(const Polynomial& p) {
  PolyMatrix m(1, 1, p.num_vars());
  m(0, 0) = p;
  return m;
}

/// x^4 y^2 + x^2 y^4 - 3 x^2 y^2 + 1: nonnegative but not SOS.
inline Polynomial motzkin() {
  Polynomial p(2);
  p.add_term(Monomial(std::vector<int>{4, 2}), 1.0);
  p.add_term(Monomial(std::vector<int>{2, 4}), 1.0);
  p.add_term(Monomial(std::vector<int>{2, 2}), -3.0);
  p.add_term(Monomial(std::vector<int>{0, 0}), 1.0);
  return p;
}

struct OracleSuiteResult {
  int scalar_accepted = 0;
  int scalar_total = 0;
  bool motzkin_rejected = false;
  int matrix_accepted = 0;
  int matrix_total = 0;
  double worst_residual = 0.0;        // over every accepted certificate
  double worst_gram_eigenvalue = 0.0;  // most negative Gram eigenvalue seen
  double seconds = 0.0;
};

/// 50 random sums of squares sum_i q_i^2 (n <= 3, deg q_i <= 3), the Motzkin
/// polynomial, and 20 random T'T (p <= 3, deg T <= 2).
inline OracleSuiteResult sos_oracle_suite(std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  OracleSuiteResult out;
  auto note = [&](const SosQuery& q) {
    out.worst_residual = std::max(out.worst_residual, q.residual);
    out.worst_gram_eigenvalue = std::min(out.worst_gram_eigenvalue, q.min_gram_eigenvalue);
  };
  for (int k = 0; k < 50; ++k) {
    const int n = 1 + static_cast<int>(rng() % 3), d = 1 + static_cast<int>(rng() % 3), terms = 1 + static_cast<int>(rng() % 3);
    Polynomial s(n);
    for (int i = 0; i < terms; ++i) {
      const auto q = random_polynomial(n, d, rng);
      s = s + q * q;
    }
    const auto q = sos_query(scalar_matrix(s));
    ++out.scalar_total;
    if (q.accepted) {
      ++out.scalar_accepted;
      note(q);
    }
  }
  out.motzkin_rejected = !sos_query(scalar_matrix(motzkin())).accepted;
  for (int k = 0; k < 20; ++k) {
    const int n = 1 + static_cast<int>(rng() % 3), p = 1 + static_cast<int>(rng() % 3), d = static_cast<int>(rng() % 3),
              rows = 1 + static_cast<int>(rng() % 3);
    PolyMatrix T(rows, p, n);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < p; ++j) T(i, j) = random_polynomial(n, d, rng);
    const auto q = sos_query(T.transpose() * T);
    ++out.matrix_total;
    if (q.accepted) {
      ++out.matrix_accepted;
      note(q);
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Two-state lifted bilinear model with a known feasible robust design at
/// (c_x, c_u) = (0.02, 0.01), alpha = 1, u_d = 1 + z1^2 + z2^2.
struct SyntheticDesign {
  koopman::BilinearModel model;
  Polynomial u_d;
  koopman::Box box;

  SyntheticDesign() {
    Eigen::MatrixXd A(2, 2);
    A << 0.9, 0.2, 0.0, 0.8;
    Eigen::MatrixXd B0(2, 1);
    B0 << 0.0, 1.0;
    model = {A, B0, 0.1 * Eigen::MatrixXd::Identity(2, 2)};
    const Polynomial z1 = Polynomial::variable(2, 0);
    const Polynomial z2 = Polynomial::variable(2, 1);
    u_d = Polynomial::constant(2, 1.0) + z1 * z1 + z2 * z2;
    box = {Eigen::Vector2d(-5.0, -5.0), Eigen::Vector2d(5.0, 5.0)};
  }

  design::SynthesisResult solve(double c_x = 0.02, double c_u = 0.01,
                                design::Objective objective = design::Objective::Feasibility) const {
    const auto den = design::DenominatorSpec::checked(u_d, 1);
    const auto d = design::build_design(model, koopman::ResidualBound::fixed(c_x, c_u), den, 1);
    return design::synthesize(d, objective);
  }
};

}  // namespace koopsos::fixtures
