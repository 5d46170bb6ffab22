#pragma once

// Rational state-feedback synthesis for the lifted bilinear surrogate.
//
// The matrix-SOS condition in the lifted variable z in R^N is
//
//   [ u_d P - tau I      0               0              u_d A P + B0 L + Bt (L ⊗ z) ]
//   [      *        tau/(2c_x^2) I       0              u_d P                       ]
//   [      *             *          tau/(2c_u^2) I_m    L                           ]  ∈ SOS[z, 2a]
//   [      *             *               *              u_d (P - rho I)             ]
//
// and a solution yields mu(z) = L(z) P^-1 z / u_d(z) with V(z) = z' P^-1 z.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "koopsos/errors.hpp"
#include "koopsos/json_io.hpp"
#include "koopsos/koopman.hpp"
#include "koopsos/poly.hpp"
#include "koopsos/sdp.hpp"
#include "koopsos/sim.hpp"
#include "koopsos/sosc.hpp"

namespace koopsos::design {

using koopman::BilinearModel;
using koopman::Box;
using koopman::Dictionary;
using koopman::ResidualBound;

inline constexpr double kDenominatorEpsilon = 1e-9;
inline constexpr double kTauMargin = 1e-6;
inline constexpr double kMinBound = 1e-8;
inline constexpr double kMinEigP = 1e-8;

/// Controller denominator u_d of degree exactly 2*alpha with u_d(0) > 0.
struct DenominatorSpec {
  Polynomial u_d;
  int alpha = 1;
  bool strictness_verified = false;

  /// Validates degree and sign at the origin, then verifies
  /// u_d - 1e-9 ∈ SOS with the SOS solver.
  static DenominatorSpec checked(Polynomial u_d, int alpha, double tol = 1e-8) {
    DenominatorSpec spec{std::move(u_d), alpha, false};
    if (alpha < 1) throw DegreeError("denominator: alpha must be >= 1");
    if (spec.u_d.degree() != 2 * alpha) {
      throw DegreeError("denominator: degree " + std::to_string(spec.u_d.degree()) + " differs from 2*alpha = " +
                        std::to_string(2 * alpha));
    }
    if (!(spec.u_d.coefficient(Monomial(spec.u_d.num_vars())) > 0.0)) throw SpecError("denominator: u_d(0) must be positive");
    sos::SOSProgram prog(spec.u_d.num_vars());
    sos::AffinePolyMatrixExpr e(1, 1, spec.u_d.num_vars());
    e(0, 0) = sos::LinPoly(spec.u_d - Polynomial::constant(spec.u_d.num_vars(), kDenominatorEpsilon));
    prog.add_matrix_sos(e, 2 * alpha, "denominator");
    const auto report = sdp::solve(prog.compile(), tol);
    if (!report.has_solution()) throw SpecError("denominator: u_d is not strictly SOS (" + report.message + ")");
    const auto sol = prog.recover(report);
    if (sol.certificates.front().residual > 1e-6) throw SpecError("denominator: strict SOS certificate inaccurate");
    spec.strictness_verified = true;
    return spec;
  }

  /// 0.01 + (1 + z)^(2 alpha) in one variable.
  static DenominatorSpec building(int alpha) {
    const Polynomial base = Polynomial::constant(1, 1.0) + Polynomial::variable(1, 0);
    return checked(Polynomial::constant(1, 0.01) + base.pow(2 * alpha), alpha);
  }

  /// 1 + sum of every degree-2 monomial in N variables, coefficient 1.
  static DenominatorSpec full_quadratic(int N) {
    Polynomial p = Polynomial::constant(N, 1.0);
    for (const auto& mono : monomial_basis(N, 2))
      if (mono.degree() == 2) p.add_term(mono, 1.0);
    return checked(std::move(p), 1);
  }
};

struct DesignMode {
  enum class Kind { Exponential, Asymptotic };
  Kind kind = Kind::Exponential;
  double rho_min = 1e-6;

  static DesignMode exponential(double rho_min = 1e-6) { return {Kind::Exponential, rho_min}; }
  static DesignMode asymptotic() { return {Kind::Asymptotic, 0.0}; }
};

struct Design {
  sos::SOSProgram program{1};
  sos::DecisionVar P, L, tau;
  std::optional<sos::DecisionVar> rho;
  BilinearModel model;
  ResidualBound bound;
  DenominatorSpec denominator;
  int alpha = 1;
  DesignMode mode;
  int block_dim = 0;
};

/// Assembles the synthesis program. The same builder serves the state-space
/// case (N = n, Phi = identity) and the lifted case.
inline Design build_design(const BilinearModel& model, const ResidualBound& bound, const DenominatorSpec& u_d,
                           int alpha, const DesignMode& mode = DesignMode::exponential()) {
  model.validate();
  const int N = model.N();
  const int m = model.m();
  if (!(bound.c_x >= kMinBound) || !(bound.c_u >= kMinBound)) throw SpecError("build_design: c_x and c_u must be >= 1e-8");
  if (alpha < 1) throw DegreeError("build_design: alpha must be >= 1");
  if (u_d.alpha != alpha || u_d.u_d.degree() != 2 * alpha) throw DegreeError("build_design: denominator degree must be 2*alpha");
  if (u_d.u_d.num_vars() != N) throw DimensionError("build_design: denominator variables differ from lifted dimension");
  const DenominatorSpec denom = u_d.strictness_verified ? u_d : DenominatorSpec::checked(u_d.u_d, alpha);

  Design d;
  d.program = sos::SOSProgram(N);
  d.model = model;
  d.bound = bound;
  d.denominator = denom;
  d.alpha = alpha;
  d.mode = mode;
  auto& prog = d.program;
  d.P = prog.declare(sos::SymMatrixKind{N});
  d.L = prog.declare(sos::PolyMatrixKind{m, N, 2 * alpha - 1});
  d.tau = prog.declare(sos::SosPolyKind{2 * alpha, kTauMargin});
  sos::LinPoly rho_poly(N);
  if (mode.kind == DesignMode::Kind::Exponential) {
    d.rho = prog.declare(sos::ScalarKind{mode.rho_min});
    rho_poly = prog.poly(*d.rho);
  }

  using Expr = sos::AffinePolyMatrixExpr;
  const Polynomial& ud = denom.u_d;
  const Expr& P = prog.expr(d.P);
  const Expr& L = prog.expr(d.L);
  const sos::LinPoly& tau = prog.poly(d.tau);
  std::vector<int> zvars(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) zvars[static_cast<std::size_t>(k)] = k;

  const Expr udP = ud * P;
  const Expr b11 = udP - Expr::diagonal(tau, N);
  const Expr b22 = Expr::diagonal(tau * (1.0 / (2.0 * bound.c_x * bound.c_x)), N);
  const Expr b33 = Expr::diagonal(tau * (1.0 / (2.0 * bound.c_u * bound.c_u)), m);
  const Expr b44 = udP - Expr::diagonal(ud * rho_poly, N);
  const Expr b14 = ud * (model.A * P) + model.B0 * L + model.Btilde * L.kron_var(zvars);
  const Expr zNN = Expr::zeros(N, N, N);
  const Expr zNm = Expr::zeros(N, m, N);

  const Expr M = Expr::symmetric_from_upper({{b11, zNN, zNm, b14}, {b22, zNm, udP}, {b33, L}, {b44}});
  d.block_dim = M.rows();
  prog.add_matrix_sos(M, 2 * alpha, "stabilization");
  return d;
}

// ---------------------------------------------------------------------------

/// mu(x) = L(Phi(x)) P^-1 Phi(x) / u_d(Phi(x)).
struct RationalController {
  int alpha = 1;
  PolyMatrix L_n;  // m × N
  Eigen::MatrixXd P;
  Eigen::MatrixXd P_inv;
  Polynomial u_d;
  Dictionary dictionary;
  double rho = 0.0;
  ResidualBound bound;
  std::optional<BilinearModel> model;
  double delta_t = 0.0;
  Polynomial tau;  // multiplier from synthesis, kept for re-certification

  int N() const { return static_cast<int>(P.rows()); }
  int m() const { return L_n.rows(); }

  Eigen::VectorXd eval_lifted(const Eigen::VectorXd& z) const {
    const double den = u_d.evaluate(z);
    return L_n.evaluate(z) * (P_inv * z) / den;
  }

  /// V(z) = z' P^-1 z.
  double lyapunov(const Eigen::VectorXd& z) const { return z.dot(P_inv * z); }
  double lyapunov_state(const Eigen::VectorXd& x) const { return lyapunov(dictionary.lift(x)); }
};

inline Eigen::VectorXd eval_controller(const RationalController& c, const Eigen::VectorXd& x) {
  return c.eval_lifted(c.dictionary.lift(x));
}

enum class Objective { Feasibility, MaxMinEigP, MaxRho };

struct SynthesisResult {
  enum class Status { Feasible, Infeasible, Unknown };

  Status status = Status::Unknown;
  std::string message;
  std::optional<RationalController> controller;
  Polynomial tau;
  BilinearModel model;
  sdp::SolverReport report;
  sos::Solution solution;
  double solve_time = 0.0;  // compile + solve, seconds
  double objective = std::numeric_limits<double>::quiet_NaN();

  bool feasible() const { return status == Status::Feasible; }
};

inline std::string to_string(SynthesisResult::Status s) {
  switch (s) {
    case SynthesisResult::Status::Feasible: return "feasible";
    case SynthesisResult::Status::Infeasible: return "infeasible";
    case SynthesisResult::Status::Unknown: return "unknown";
  }
  return "unknown";
}

inline SynthesisResult synthesize(const Design& design, Objective objective = Objective::Feasibility,
                                  const Dictionary& dictionary = {}, double tol = 1e-8) {
  const auto start = std::chrono::steady_clock::now();
  const int N = design.model.N();
  sos::SOSProgram prog = design.program;
  std::optional<sos::DecisionVar> t;
  if (objective == Objective::MaxMinEigP) {
    const sos::AffinePolyMatrixExpr P = prog.expr(design.P);
    sos::AffineScalar trace;
    for (int i = 0; i < N; ++i) trace += P(i, i).terms().begin()->second;
    prog.add_equality(trace, N);
    t = prog.declare(sos::ScalarKind{});
    prog.add_matrix_sos(P - sos::AffinePolyMatrixExpr::diagonal(prog.poly(*t), N), 0, "min eigenvalue");
    prog.maximize(prog.scalar(*t));
  } else if (objective == Objective::MaxRho) {
    if (!design.rho) throw StructuralError("synthesize: rho is fixed to zero in asymptotic mode");
    // bounded by trace normalization, otherwise rho scales with P
    const sos::AffinePolyMatrixExpr P = prog.expr(design.P);
    sos::AffineScalar trace;
    for (int i = 0; i < N; ++i) trace += P(i, i).terms().begin()->second;
    prog.add_equality(trace, N);
    prog.maximize(prog.scalar(*design.rho));
  }

  SynthesisResult out;
  out.model = design.model;
  out.report = sdp::solve(prog.compile(), tol);
  out.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.solution = prog.recover(out.report);
  switch (out.report.status) {
    case sdp::Status::Infeasible:
      out.status = SynthesisResult::Status::Infeasible;
      out.message = out.report.message;
      return out;
    case sdp::Status::Unknown:
      out.status = SynthesisResult::Status::Unknown;
      out.message = "numerically inconclusive: " + out.report.message;
      return out;
    default:
      break;
  }

  RationalController c;
  c.alpha = design.alpha;
  c.P = out.solution.matrix(design.P);
  c.P = 0.5 * (c.P + c.P.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c.P);
  if (es.eigenvalues().minCoeff() < kMinEigP) {
    out.status = SynthesisResult::Status::Unknown;
    out.message = "recovered P is not positive definite";
    return out;
  }
  c.P_inv = es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  c.L_n = out.solution.poly_matrix(design.L);
  c.u_d = design.denominator.u_d;
  c.dictionary = dictionary.N() == N ? dictionary : Dictionary::identity(N);
  c.rho = design.rho ? out.solution.scalar(*design.rho) : 0.0;
  c.bound = design.bound;
  c.model = design.model;
  out.tau = out.solution.poly(design.tau);
  c.tau = out.tau;
  if (t) out.objective = out.solution.scalar(*t);
  if (objective == Objective::MaxRho) out.objective = c.rho;
  out.controller = std::move(c);
  out.status = SynthesisResult::Status::Feasible;
  out.message = out.report.message;
  return out;
}

// ---------------------------------------------------------------------------
// region of attraction

struct RoAEstimate {
  double c = 0.0;
  Eigen::MatrixXd P;
  double boundary_margin = 0.05;
  int containment_checked = 0;
  int rounds = 0;
};

/// Uniform samples on the boundary of `box`, spread evenly over its faces,
/// plus every face center.
inline std::vector<Eigen::VectorXd> sample_box_boundary(const Box& box, int count, std::mt19937_64& rng) {
  const int n = box.dim();
  std::vector<Eigen::VectorXd> pts;
  const Eigen::VectorXd center = 0.5 * (box.lower + box.upper);
  for (int i = 0; i < n; ++i)
    for (int side = 0; side < 2; ++side) {
      Eigen::VectorXd x = center;
      x(i) = side ? box.upper(i) : box.lower(i);
      pts.push_back(x);
    }
  for (int k = 0; k < count; ++k) {
    const int face = k % (2 * n);
    Eigen::VectorXd x = box.sample(rng);
    x(face / 2) = (face % 2) ? box.upper(face / 2) : box.lower(face / 2);
    pts.push_back(x);
  }
  return pts;
}

/// Largest sampled sublevel set {V <= c} of the controller's Lyapunov
/// function that stays inside `region`.
inline RoAEstimate estimate_roa(const RationalController& ctrl, const Box& region, int n_boundary, int n_containment,
                                std::uint64_t seed, double margin = 0.05) {
  region.validate();
  if (!region.contains_origin_strictly()) throw std::invalid_argument("estimate_roa: region must contain the origin strictly");
  if (region.dim() != ctrl.dictionary.n()) throw DimensionError("estimate_roa: region dimension differs from state dimension");
  std::mt19937_64 rng(seed);
  RoAEstimate est;
  est.P = ctrl.P;
  est.boundary_margin = margin;

  double vmin = std::numeric_limits<double>::infinity();
  for (const auto& x : sample_box_boundary(region, n_boundary, rng)) vmin = std::min(vmin, ctrl.lyapunov_state(x));
  double c = (1.0 - margin) * vmin;

  // V(x) >= ||x||^2 / lambda_max(P) since the first n lifted coordinates are x.
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(ctrl.P, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  for (int round = 0; round < 10; ++round) {
    est.rounds = round + 1;
    if (!(c > 0.0)) throw DegenerateRoAError("estimate_roa: sublevel value collapsed to zero");
    const double radius = std::sqrt(c * lmax) * 1.05;
    Box enclosure{region.lower.cwiseMin(Eigen::VectorXd::Constant(region.dim(), -radius)),
                  region.upper.cwiseMax(Eigen::VectorXd::Constant(region.dim(), radius))};
    int accepted = 0;
    std::optional<double> violator;
    const long long max_draws = 1000LL * std::max(n_containment, 1);
    for (long long draw = 0; draw < max_draws && accepted < n_containment; ++draw) {
      const Eigen::VectorXd x = enclosure.sample(rng);
      const double v = ctrl.lyapunov_state(x);
      if (v > c) continue;
      ++accepted;
      if (!region.contains(x)) {
        violator = v;
        break;
      }
    }
    if (!violator) {
      est.c = c;
      est.containment_checked = accepted;
      return est;
    }
    c = (1.0 - margin) * *violator;
  }
  throw DegenerateRoAError("estimate_roa: containment not established within 10 rounds");
}

/// Fraction of `box` satisfying `pred`, times the box volume.
template <typename Pred>
double monte_carlo_volume(const Box& box, int samples, std::uint64_t seed, Pred&& pred) {
  std::mt19937_64 rng(seed);
  int hits = 0;
  for (int k = 0; k < samples; ++k)
    if (pred(box.sample(rng))) ++hits;
  return box.volume() * hits / samples;
}

// ---------------------------------------------------------------------------
// certificate validation

/// The synthesis block matrix evaluated at one lifted point, assembled
/// directly from the solution values.
inline Eigen::MatrixXd certificate_matrix(const RationalController& c, const Polynomial& tau, const BilinearModel& model,
                                          const Eigen::VectorXd& z) {
  const int N = c.N();
  const int m = c.m();
  const double ud = c.u_d.evaluate(z);
  const double t = tau.evaluate(z);
  const Eigen::MatrixXd Lz = c.L_n.evaluate(z);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(N, N);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(3 * N + m, 3 * N + m);
  M.block(0, 0, N, N) = ud * c.P - t * I;
  M.block(N, N, N, N) = t / (2.0 * c.bound.c_x * c.bound.c_x) * I;
  M.block(2 * N, 2 * N, m, m) = t / (2.0 * c.bound.c_u * c.bound.c_u) * Eigen::MatrixXd::Identity(m, m);
  M.block(2 * N + m, 2 * N + m, N, N) = ud * (c.P - c.rho * I);
  M.block(0, 2 * N + m, N, N) = ud * model.A * c.P + model.B0 * Lz + model.Btilde * kron(Lz, z);
  M.block(N, 2 * N + m, N, N) = ud * c.P;
  M.block(2 * N, 2 * N + m, m, N) = Lz;
  M.triangularView<Eigen::StrictlyLower>() = M.transpose().triangularView<Eigen::StrictlyLower>();
  return M;
}

struct CertificateReport {
  int psd_checks = 0;
  int psd_violations = 0;
  double worst_min_eigenvalue = std::numeric_limits<double>::infinity();
  std::optional<Eigen::VectorXd> psd_witness;
  int decrease_checks = 0;
  int decrease_violations = 0;
  double worst_decrease_slack = -std::numeric_limits<double>::infinity();  // max of lhs - rhs
  std::optional<Eigen::VectorXd> decrease_witness;
  double epsilon = 0.0;

  bool ok() const { return psd_violations == 0 && decrease_violations == 0; }
};

struct CertificateOptions {
  int n_samples = 10000;
  std::uint64_t seed = 0;
  double psd_tol = 1e-6;
  double decrease_tol = 1e-6;
  sim::AdversaryMode adversary = sim::AdversaryMode::WorstAligned;
  double residual_scale = 1.0;  // >1 injects inadmissible residuals
  bool check_psd = true;
  bool check_decrease = true;
};

/// Pointwise validation over states drawn from `sample_box`:
/// (a) the block matrix is PSD at z = Phi(x);
/// (b) V(z+) - V(z) <= -eps ||z||^2 + tol for z+ = A z + B0 mu + Bt (mu ⊗ z) + r,
///     eps = rho / ||P||_2^2, r at the residual bound.
inline CertificateReport certificate_check(const RationalController& c, const Box& sample_box,
                                           const CertificateOptions& opt = {}) {
  if (!c.model) throw StructuralError("certificate_check: controller carries no surrogate model");
  if (opt.check_psd && c.tau.num_vars() != c.N()) throw StructuralError("certificate_check: controller carries no multiplier");
  const auto& model = *c.model;
  CertificateReport rep;
  const double pnorm = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c.P, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  rep.epsilon = c.rho / (pnorm * pnorm);
  std::mt19937_64 rng(opt.seed);
  sim::ResidualGenerator adversary(c.bound.c_x * opt.residual_scale, c.bound.c_u * opt.residual_scale, opt.adversary,
                                   opt.seed ^ 0x9e3779b97f4a7c15ULL, c.P_inv);
  for (int k = 0; k < opt.n_samples; ++k) {
    const Eigen::VectorXd x = sample_box.sample(rng);
    const Eigen::VectorXd z = c.dictionary.lift(x);
    if (opt.check_psd) {
      ++rep.psd_checks;
      const auto chk = sdp::check_psd(certificate_matrix(c, c.tau, model, z), opt.psd_tol);
      rep.worst_min_eigenvalue = std::min(rep.worst_min_eigenvalue, chk.min_eigenvalue);
      if (!chk.ok) {
        ++rep.psd_violations;
        if (!rep.psd_witness) rep.psd_witness = x;
      }
    }
    if (opt.check_decrease) {
      ++rep.decrease_checks;
      const Eigen::VectorXd u = c.eval_lifted(z);
      const Eigen::VectorXd nominal = model.step(z, u);
      const Eigen::VectorXd zp = nominal + adversary(z, u, nominal);
      const double slack = c.lyapunov(zp) - c.lyapunov(z) + rep.epsilon * z.squaredNorm();
      rep.worst_decrease_slack = std::max(rep.worst_decrease_slack, slack);
      if (slack > opt.decrease_tol) {
        ++rep.decrease_violations;
        if (!rep.decrease_witness) rep.decrease_witness = x;
      }
    }
  }
  return rep;
}

inline CertificateReport certificate_check(const SynthesisResult& result, const Box& sample_box,
                                           const CertificateOptions& opt = {}) {
  if (!result.feasible() || !result.controller) throw StructuralError("certificate_check: no feasible solution");
  return certificate_check(*result.controller, sample_box, opt);
}

// ---------------------------------------------------------------------------
// persistence

inline nlohmann::json polynomial_to_json(const Polynomial& p) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& [mono, coeff] : p.terms()) terms.push_back({{"exponents", mono.exponents()}, {"coefficient", coeff}});
  return terms;
}

inline Polynomial polynomial_from_json(const nlohmann::json& j, int num_vars) {
  Polynomial p(num_vars);
  for (const auto& t : j) {
    auto exps = t.at("exponents").get<std::vector<int>>();
    if (static_cast<int>(exps.size()) != num_vars) throw DimensionError("polynomial JSON: exponent length mismatch");
    p.add_term(Monomial(std::move(exps)), t.at("coefficient").get<double>());
  }
  return p;
}

inline nlohmann::json to_json(const RationalController& c) {
  nlohmann::json L = nlohmann::json::array();
  for (int i = 0; i < c.L_n.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < c.L_n.cols(); ++j) row.push_back(polynomial_to_json(c.L_n(i, j)));
    L.push_back(row);
  }
  nlohmann::json out{{"alpha", c.alpha},
                     {"n", c.dictionary.n()},
                     {"N", c.N()},
                     {"m", c.m()},
                     {"u_d", polynomial_to_json(c.u_d)},
                     {"L_n", L},
                     {"P", io::matrix_to_json(c.P)},
                     {"rho", c.rho},
                     {"dictionary_label", c.dictionary.label()},
                     {"bound", {{"c_x", c.bound.c_x}, {"c_u", c.bound.c_u}}},
                     {"tau", polynomial_to_json(c.tau)}};
  if (c.model) {
    out["model"] = {{"A", io::matrix_to_json(c.model->A)},
                    {"B0", io::matrix_to_json(c.model->B0)},
                    {"Btilde", io::matrix_to_json(c.model->Btilde)},
                    {"delta_t", c.delta_t}};
  }
  return out;
}

inline RationalController controller_from_json(const nlohmann::json& j) {
  try {
    RationalController c;
    c.alpha = j.at("alpha").get<int>();
    const int N = j.at("N").get<int>();
    const int m = j.at("m").get<int>();
    c.dictionary = Dictionary::from_label(j.at("dictionary_label").get<std::string>(), j.at("n").get<int>());
    c.u_d = polynomial_from_json(j.at("u_d"), N);
    c.L_n = PolyMatrix(m, N, N);
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < N; ++k)
        c.L_n(i, k) = polynomial_from_json(j.at("L_n").at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)), N);
    c.P = io::matrix_from_json(j.at("P"));
    if (c.P.rows() != N || c.P.cols() != N || c.dictionary.N() != N) throw DimensionError("controller JSON: dimensions disagree");
    c.P_inv = c.P.inverse();
    c.rho = j.at("rho").get<double>();
    if (j.contains("tau")) c.tau = polynomial_from_json(j.at("tau"), N);
    c.bound = ResidualBound::fixed(j.at("bound").at("c_x").get<double>(), j.at("bound").at("c_u").get<double>());
    if (j.contains("model")) {
      const auto& mj = j.at("model");
      c.model = BilinearModel{io::matrix_from_json(mj.at("A")), io::matrix_from_json(mj.at("B0")),
                              io::matrix_from_json(mj.at("Btilde"))};
      c.model->validate();
      c.delta_t = mj.at("delta_t").get<double>();
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad controller JSON: ") + e.what());
  }
}

}  // namespace koopsos::design
