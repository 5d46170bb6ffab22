#pragma once

// Conic problem container and solver contract.
//
//   minimize    c' x
//   subject to  A x = b,   x ∈ K = K_1 × ... × K_p
//
// where each K_i is a PSD cone, a nonnegative orthant or a free block. A PSD
// block of dimension n occupies n(n+1)/2 entries of x holding svec(X): the
// lower triangle of X in column-major order with off-diagonal entries scaled
// by sqrt(2), so that svec(X)'svec(Y) = trace(XY).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "json.hpp"
#include "koopsos/errors.hpp"

namespace koopsos::sdp {

struct Cone {
  enum class Kind { Psd, NonNeg, Free };
  Kind kind = Kind::Free;
  int dim = 0;

  /// Number of scalar variables this cone occupies.
  int size() const { return kind == Kind::Psd ? dim * (dim + 1) / 2 : dim; }

  static Cone psd(int dim) { return {Kind::Psd, dim}; }
  static Cone nonneg(int count) { return {Kind::NonNeg, count}; }
  static Cone free(int count) { return {Kind::Free, count}; }

  bool operator==(const Cone&) const = default;
};

inline const char* to_string(Cone::Kind k) {
  switch (k) {
    case Cone::Kind::Psd: return "psd";
    case Cone::Kind::NonNeg: return "nonneg";
    case Cone::Kind::Free: return "free";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// svec / smat

inline int svec_size(int n) { return n * (n + 1) / 2; }

/// Position of entry (i, j), i >= j, of an n×n matrix inside svec.
inline int svec_index(int n, int i, int j) {
  if (i < j) std::swap(i, j);
  return j * n - j * (j - 1) / 2 + (i - j);
}

inline Eigen::VectorXd svec(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  Eigen::VectorXd v(svec_size(n));
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) v(k++) = (i == j) ? m(i, j) : M_SQRT2 * m(i, j);
  return v;
}

inline Eigen::MatrixXd smat(const Eigen::Ref<const Eigen::VectorXd>& v, int n) {
  Eigen::MatrixXd m(n, n);
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) {
      const double val = (i == j) ? v(k) : v(k) / M_SQRT2;
      m(i, j) = val;
      m(j, i) = val;
      ++k;
    }
  return m;
}

// ---------------------------------------------------------------------------

struct ConicProblem {
  Eigen::VectorXd objective;                 // c, length num_vars()
  Eigen::SparseMatrix<double> A;             // equality rows
  Eigen::VectorXd b;
  std::vector<Cone> cones;                   // tiles the variable vector in order

  int num_vars() const {
    int n = 0;
    for (const auto& c : cones) n += c.size();
    return n;
  }
  int num_rows() const { return static_cast<int>(A.rows()); }

  void validate() const {
    const int n = num_vars();
    for (const auto& c : cones) {
      if (c.dim < 0) throw StructuralError("ConicProblem: negative cone dimension");
    }
    if (A.cols() != n) throw StructuralError("ConicProblem: A column count does not match cone tiling");
    if (objective.size() != n) throw StructuralError("ConicProblem: objective length does not match cone tiling");
    if (b.size() != A.rows()) throw StructuralError("ConicProblem: b length does not match A rows");
  }

  bool operator==(const ConicProblem& other) const {
    if (cones != other.cones || objective != other.objective || b != other.b) return false;
    if (A.rows() != other.A.rows() || A.cols() != other.A.cols()) return false;
    return Eigen::MatrixXd(A) == Eigen::MatrixXd(other.A);
  }
};

enum class Status { Optimal, Feasible, Infeasible, Unknown };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Feasible: return "feasible";
    case Status::Infeasible: return "infeasible";
    case Status::Unknown: return "unknown";
  }
  return "?";
}

struct SolverReport {
  Status status = Status::Unknown;
  Eigen::VectorXd primal;  // empty unless status is Optimal or Feasible
  Eigen::VectorXd dual;    // equality multipliers when available
  double objective_value = std::numeric_limits<double>::quiet_NaN();
  double solve_time = 0.0;  // seconds
  int iterations = 0;
  double primal_residual = std::numeric_limits<double>::infinity();  // on row-normalized constraints
  std::string message;

  bool has_solution() const { return status == Status::Optimal || status == Status::Feasible; }
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iterations = 150;
  bool verbose = false;
};

/// Backend contract. Implementations must be reentrant.
class ConicSolver {
 public:
  virtual ~ConicSolver() = default;
  virtual SolverReport solve(const ConicProblem& problem, const SolverOptions& options) const = 0;
  virtual std::string name() const = 0;
};

struct PsdCheck {
  bool ok = false;
  double min_eigenvalue = 0.0;
};

inline PsdCheck check_psd(const Eigen::MatrixXd& m, double tol) {
  if (m.rows() != m.cols()) throw StructuralError("check_psd: matrix is not square");
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff())) throw StructuralError("check_psd: matrix is not symmetric");
  if (m.rows() == 0) return {true, 0.0};
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  return {lmin >= -tol, lmin};
}

// ---------------------------------------------------------------------------
// Interior-point backend: homogeneous self-dual embedding, Nesterov-Todd
// scaling and Mehrotra predictor-corrector steps on dense linear algebra.

namespace detail {

struct Block {
  Cone::Kind kind;
  int dim;     // matrix order for PSD, count for NonNeg
  int offset;  // into the stacked conic vector
  int size;
  Eigen::SparseMatrix<double> A;  // columns of A belonging to this block

  // Nesterov-Todd scaling state
  Eigen::VectorXd w;       // NonNeg: sqrt(x/s)
  Eigen::MatrixXd R, Rinv; // PSD: W = R R'
  Eigen::VectorXd lambda;  // scaled point (diagonal for PSD)
};

inline bool symmetric_sqrt_factor(const Eigen::MatrixXd& m, Eigen::MatrixXd& factor) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) {
    factor = llt.matrixL();
    if (factor.allFinite() && (factor.diagonal().array() > 0.0).all()) return true;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.eigenvalues().minCoeff() <= 0.0) return false;
  factor = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal();
  return true;
}

class Engine {
 public:
  Engine(const ConicProblem& p, const SolverOptions& opt) : opt_(opt) {
    m_ = p.num_rows();
    // Row normalization to unit infinity norm.
    row_scale_ = Eigen::VectorXd::Zero(m_);
    for (int k = 0; k < p.A.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(p.A, k); it; ++it)
        row_scale_(it.row()) = std::max(row_scale_(it.row()), std::abs(it.value()));
    for (int i = 0; i < m_; ++i) {
      if (!(row_scale_(i) > 0.0)) row_scale_(i) = 1.0;
    }
    b_ = p.b.cwiseQuotient(row_scale_);

    // Split columns into conic and free parts.
    std::vector<int> conic_cols;
    int pos = 0;
    int conic_pos = 0;
    for (const auto& cone : p.cones) {
      const int sz = cone.size();
      if (cone.kind == Cone::Kind::Free) {
        for (int k = 0; k < sz; ++k) free_cols_.push_back(pos + k);
      } else if (sz > 0) {
        Block blk;
        blk.kind = cone.kind;
        blk.dim = cone.dim;
        blk.offset = conic_pos;
        blk.size = sz;
        blocks_.push_back(std::move(blk));
        for (int k = 0; k < sz; ++k) conic_cols.push_back(pos + k);
        conic_pos += sz;
        degree_ += cone.dim;
      }
      pos += sz;
    }
    nc_ = conic_pos;
    nf_ = static_cast<int>(free_cols_.size());
    conic_cols_ = conic_cols;

    const Eigen::SparseMatrix<double> As = row_scale_.cwiseInverse().asDiagonal() * p.A;
    Ac_ = select_columns(As, conic_cols_);
    Af_ = Eigen::MatrixXd(select_columns(As, free_cols_));
    for (auto& blk : blocks_) blk.A = Ac_.middleCols(blk.offset, blk.size);
    cc_.resize(nc_);
    for (int k = 0; k < nc_; ++k) cc_(k) = p.objective(conic_cols_[static_cast<std::size_t>(k)]);
    cf_.resize(nf_);
    for (int k = 0; k < nf_; ++k) cf_(k) = p.objective(free_cols_[static_cast<std::size_t>(k)]);
    feasibility_only_ = p.objective.size() == 0 || p.objective.cwiseAbs().maxCoeff() == 0.0;
  }

  SolverReport run(int num_vars) {
    SolverReport rep;
    // Initial point: identity / ones in every cone.
    Eigen::VectorXd xc = unit();
    Eigen::VectorXd sc = unit();
    Eigen::VectorXd xf = Eigen::VectorXd::Zero(nf_);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(m_);
    double tau = 1.0;
    double kappa = 1.0;
    const double cnorm = std::max(cc_.size() ? cc_.cwiseAbs().maxCoeff() : 0.0, cf_.size() ? cf_.cwiseAbs().maxCoeff() : 0.0);

    for (int iter = 0; iter <= opt_.max_iterations; ++iter) {
      rep.iterations = iter;
      const Eigen::VectorXd rp = Ac_ * xc + Af_ * xf - b_ * tau;
      const Eigen::VectorXd rdc = Ac_.transpose() * y + sc - cc_ * tau;
      const Eigen::VectorXd rdf = Af_.transpose() * y - cf_ * tau;
      const double cx = cc_.dot(xc) + cf_.dot(xf);
      const double by = b_.dot(y);
      const double rg = cx - by + kappa;
      const double mu = (xc.dot(sc) + tau * kappa) / (degree_ + 1);

      if (!xc.allFinite() || !sc.allFinite() || !y.allFinite() || !std::isfinite(tau) || !std::isfinite(kappa)) {
        rep.message = "non-finite iterate";
        break;
      }

      const double pres = inf_norm(rp) / tau;
      const double dres = std::max(inf_norm(rdc), inf_norm(rdf)) / tau;
      const double pobj = cx / tau;
      const double dobj = by / tau;
      const double compl_gap = xc.dot(sc) / (tau * tau);
      if (opt_.verbose) {
        std::fprintf(stderr, "%3d pobj %+.6e dobj %+.6e pres %.2e dres %.2e gap %.2e tau %.2e kap %.2e mu %.2e\n",
                     iter, pobj, dobj, pres, dres, compl_gap, tau, kappa, mu);
      }
      if (pres <= opt_.tol) {
        if (feasibility_only_) {
          finish(rep, Status::Feasible, xc / tau, xf / tau, y / tau, num_vars, pres);
          return rep;
        }
        if (dres <= opt_.tol * (1.0 + cnorm) &&
            std::max(std::abs(pobj - dobj), compl_gap) <= opt_.tol * (1.0 + std::abs(pobj))) {
          finish(rep, Status::Optimal, xc / tau, xf / tau, y / tau, num_vars, pres);
          return rep;
        }
      }
      if (by > 0.0) {
        const double pinf = std::max(inf_norm(Ac_.transpose() * y + sc), inf_norm(Af_.transpose() * y)) / by;
        if (pinf <= opt_.tol) {
          rep.status = Status::Infeasible;
          rep.dual = row_scale_.cwiseInverse().cwiseProduct(y / by);
          rep.message = "primal infeasible";
          return rep;
        }
      }
      if (cx < 0.0) {
        const double dinf = inf_norm(Ac_ * xc + Af_ * xf) / (-cx);
        if (dinf <= opt_.tol) {
          rep.status = Status::Unknown;
          rep.message = "dual infeasible (unbounded objective)";
          return rep;
        }
      }
      if (iter == opt_.max_iterations) {
        rep.message = "iteration limit";
        break;
      }

      if (!update_scaling(xc, sc)) {
        rep.message = "scaling failure";
        break;
      }
      if (!factor()) {
        rep.message = "KKT factorization failure";
        break;
      }

      // Direction associated with dtau.
      Eigen::VectorXd dy1, dxf1;
      solve_kkt(b_ + Ac_ * apply_hinv(cc_), cf_, dy1, dxf1);
      const Eigen::VectorXd dxc1 = apply_hinv(Ac_.transpose() * dy1 - cc_);
      const double denom = cc_.dot(dxc1) + cf_.dot(dxf1) - b_.dot(dy1) - kappa / tau;

      const Eigen::VectorXd lam = lambda_vector();
      Direction aff = direction(1.0, -lam, -tau * kappa, rp, rdc, rdf, rg, tau, kappa, dy1, dxf1, dxc1, denom);
      const Eigen::VectorXd dxs_a = apply_w(aff.dxc);
      const Eigen::VectorXd dss_a = apply_winv_t(aff.dsc);
      const double alpha_aff = std::min(1.0, max_step(lam, dxs_a, dss_a, tau, aff.dtau, kappa, aff.dkappa));
      const double sigma = std::clamp(std::pow(1.0 - alpha_aff, 3), 0.0, 1.0);

      Eigen::VectorXd E = -jordan(lam, lam) - jordan(dxs_a, dss_a) + sigma * mu * unit();
      const Eigen::VectorXd d = jordan_div(lam, E);
      const double etau = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
      Direction cmb = direction(1.0 - sigma, d, etau, rp, rdc, rdf, rg, tau, kappa, dy1, dxf1, dxc1, denom);
      const double alpha_max = max_step(lam, apply_w(cmb.dxc), apply_winv_t(cmb.dsc), tau, cmb.dtau, kappa, cmb.dkappa);
      const double alpha = std::min(1.0, 0.99 * alpha_max);
      if (!(alpha > 1e-12)) {
        rep.message = "step length collapsed";
        break;
      }
      xc += alpha * cmb.dxc;
      sc += alpha * cmb.dsc;
      xf += alpha * cmb.dxf;
      y += alpha * cmb.dy;
      tau += alpha * cmb.dtau;
      kappa += alpha * cmb.dkappa;
    }
    rep.status = Status::Unknown;
    if (rep.message.empty()) rep.message = "no convergence";
    return rep;
  }

 private:
  struct Direction {
    Eigen::VectorXd dxc, dxf, dy, dsc;
    double dtau = 0.0, dkappa = 0.0;
  };

  static double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

  static Eigen::SparseMatrix<double> select_columns(const Eigen::SparseMatrix<double>& a, const std::vector<int>& cols) {
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t k = 0; k < cols.size(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(a, cols[k]); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(k), it.value());
    Eigen::SparseMatrix<double> out(a.rows(), static_cast<Eigen::Index>(cols.size()));
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
  }

  void finish(SolverReport& rep, Status status, const Eigen::VectorXd& xc, const Eigen::VectorXd& xf,
              const Eigen::VectorXd& y, int num_vars, double pres) const {
    rep.status = status;
    rep.primal = Eigen::VectorXd::Zero(num_vars);
    for (int k = 0; k < nc_; ++k) rep.primal(conic_cols_[static_cast<std::size_t>(k)]) = xc(k);
    for (int k = 0; k < nf_; ++k) rep.primal(free_cols_[static_cast<std::size_t>(k)]) = xf(k);
    rep.dual = row_scale_.cwiseInverse().cwiseProduct(y);
    rep.objective_value = cc_.dot(xc) + cf_.dot(xf);
    rep.primal_residual = pres;
    rep.message = to_string(status);
  }

  Eigen::VectorXd unit() const {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(nc_);
    for (const auto& blk : blocks_) {
      if (blk.kind == Cone::Kind::NonNeg) {
        e.segment(blk.offset, blk.size).setOnes();
      } else {
        for (int i = 0; i < blk.dim; ++i) e(blk.offset + svec_index(blk.dim, i, i)) = 1.0;
      }
    }
    return e;
  }

  bool update_scaling(const Eigen::VectorXd& xc, const Eigen::VectorXd& sc) {
    for (auto& blk : blocks_) {
      const auto xs = xc.segment(blk.offset, blk.size);
      const auto ss = sc.segment(blk.offset, blk.size);
      if (blk.kind == Cone::Kind::NonNeg) {
        if ((xs.array() <= 0.0).any() || (ss.array() <= 0.0).any()) return false;
        blk.w = (xs.array() / ss.array()).sqrt();
        blk.lambda = (xs.array() * ss.array()).sqrt();
      } else {
        Eigen::MatrixXd L1, L2;
        if (!symmetric_sqrt_factor(smat(xs, blk.dim), L1)) return false;
        if (!symmetric_sqrt_factor(smat(ss, blk.dim), L2)) return false;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(L2.transpose() * L1, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Eigen::VectorXd sv = svd.singularValues();
        if (!(sv.minCoeff() > 0.0)) return false;
        const Eigen::VectorXd isq = sv.cwiseSqrt().cwiseInverse();
        blk.R = L1 * svd.matrixV() * isq.asDiagonal();
        blk.Rinv = isq.asDiagonal() * svd.matrixU().transpose() * L2.transpose();
        blk.lambda = sv;
      }
    }
    return true;
  }

  Eigen::VectorXd lambda_vector() const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(nc_);
    for (const auto& blk : blocks_) {
      if (blk.kind == Cone::Kind::NonNeg) {
        out.segment(blk.offset, blk.size) = blk.lambda;
      } else {
        for (int i = 0; i < blk.dim; ++i) out(blk.offset + svec_index(blk.dim, i, i)) = blk.lambda(i);
      }
    }
    return out;
  }

  // W v
  Eigen::VectorXd apply_w(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(nc_);
    for (const auto& blk : blocks_) {
      const auto seg = v.segment(blk.offset, blk.size);
      if (blk.kind == Cone::Kind::NonNeg) {
        out.segment(blk.offset, blk.size) = seg.cwiseQuotient(blk.w);
      } else {
        out.segment(blk.offset, blk.size) = svec(blk.Rinv * smat(seg, blk.dim) * blk.Rinv.transpose());
      }
    }
    return out;
  }
  // W^{-T} v
  Eigen::VectorXd apply_winv_t(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(nc_);
    for (const auto& blk : blocks_) {
      const auto seg = v.segment(blk.offset, blk.size);
      if (blk.kind == Cone::Kind::NonNeg) {
        out.segment(blk.offset, blk.size) = seg.cwiseProduct(blk.w);
      } else {
        out.segment(blk.offset, blk.size) = svec(blk.R.transpose() * smat(seg, blk.dim) * blk.R);
      }
    }
    return out;
  }
  // W^{-1} v
  Eigen::VectorXd apply_winv(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(nc_);
    for (const auto& blk : blocks_) {
      const auto seg = v.segment(blk.offset, blk.size);
      if (blk.kind == Cone::Kind::NonNeg) {
        out.segment(blk.offset, blk.size) = seg.cwiseProduct(blk.w);
      } else {
        out.segment(blk.offset, blk.size) = svec(blk.R * smat(seg, blk.dim) * blk.R.transpose());
      }
    }
    return out;
  }
  // (W'W)^{-1} v
  Eigen::VectorXd apply_hinv(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(nc_);
    for (const auto& blk : blocks_) {
      const auto seg = v.segment(blk.offset, blk.size);
      if (blk.kind == Cone::Kind::NonNeg) {
        out.segment(blk.offset, blk.size) = seg.cwiseProduct(blk.w).cwiseProduct(blk.w);
      } else {
        const Eigen::MatrixXd W = blk.R * blk.R.transpose();
        out.segment(blk.offset, blk.size) = svec(W * smat(seg, blk.dim) * W);
      }
    }
    return out;
  }

  // Jordan product u ∘ v.
  Eigen::VectorXd jordan(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(nc_);
    for (const auto& blk : blocks_) {
      const auto us = u.segment(blk.offset, blk.size);
      const auto vs = v.segment(blk.offset, blk.size);
      if (blk.kind == Cone::Kind::NonNeg) {
        out.segment(blk.offset, blk.size) = us.cwiseProduct(vs);
      } else {
        const Eigen::MatrixXd U = smat(us, blk.dim);
        const Eigen::MatrixXd V = smat(vs, blk.dim);
        out.segment(blk.offset, blk.size) = svec(0.5 * (U * V + V * U));
      }
    }
    return out;
  }

  // Solves lambda ∘ d = e for d, lambda being the (diagonal) scaled point.
  Eigen::VectorXd jordan_div(const Eigen::VectorXd& lam, const Eigen::VectorXd& e) const {
    Eigen::VectorXd out(nc_);
    for (const auto& blk : blocks_) {
      if (blk.kind == Cone::Kind::NonNeg) {
        out.segment(blk.offset, blk.size) = e.segment(blk.offset, blk.size).cwiseQuotient(lam.segment(blk.offset, blk.size));
      } else {
        for (int j = 0; j < blk.dim; ++j)
          for (int i = j; i < blk.dim; ++i) {
            const int k = blk.offset + svec_index(blk.dim, i, j);
            out(k) = 2.0 * e(k) / (blk.lambda(i) + blk.lambda(j));
          }
      }
    }
    (void)lam;
    return out;
  }

  // Largest alpha with lambda + alpha*dx and lambda + alpha*ds in the cone.
  double max_step(const Eigen::VectorXd& lam, const Eigen::VectorXd& dx, const Eigen::VectorXd& ds, double tau,
                  double dtau, double kappa, double dkappa) const {
    double alpha = std::numeric_limits<double>::infinity();
    for (const auto& blk : blocks_) {
      for (const Eigen::VectorXd* dv : {&dx, &ds}) {
        const auto seg = dv->segment(blk.offset, blk.size);
        if (blk.kind == Cone::Kind::NonNeg) {
          const auto l = lam.segment(blk.offset, blk.size);
          for (int i = 0; i < blk.size; ++i)
            if (seg(i) < 0.0) alpha = std::min(alpha, -l(i) / seg(i));
        } else {
          const Eigen::VectorXd isq = blk.lambda.cwiseSqrt().cwiseInverse();
          const Eigen::MatrixXd T = isq.asDiagonal() * smat(seg, blk.dim) * isq.asDiagonal();
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T, Eigen::EigenvaluesOnly);
          const double emin = es.eigenvalues().minCoeff();
          if (emin < 0.0) alpha = std::min(alpha, -1.0 / emin);
        }
      }
    }
    if (dtau < 0.0) alpha = std::min(alpha, -tau / dtau);
    if (dkappa < 0.0) alpha = std::min(alpha, -kappa / dkappa);
    return alpha;
  }

  bool factor() {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(m_, m_);
    for (const auto& blk : blocks_) {
      if (blk.kind == Cone::Kind::NonNeg) {
        const Eigen::VectorXd w2 = blk.w.cwiseProduct(blk.w);
        M += Eigen::MatrixXd(blk.A * w2.asDiagonal() * blk.A.transpose());
      } else {
        const Eigen::MatrixXd Q = hinv_matrix(blk);
        const Eigen::MatrixXd T = blk.A * Q;
        M += T * blk.A.transpose();
      }
    }
    const int n = m_ + nf_;
    K_.resize(n, n);
    K_.setZero();
    K_.topLeftCorner(m_, m_) = M;
    K_.topRightCorner(m_, nf_) = Af_;
    K_.bottomLeftCorner(nf_, m_) = Af_.transpose();
    const double scale = std::max(1.0, m_ > 0 ? M.diagonal().cwiseAbs().maxCoeff() : 1.0);
    const double reg = 1e-14 * scale;
    Eigen::MatrixXd Kreg = K_;
    Kreg.topLeftCorner(m_, m_).diagonal().array() += reg;
    Kreg.bottomRightCorner(nf_, nf_).diagonal().array() -= reg;
    lu_.compute(Kreg);
    return Kreg.allFinite();
  }

  // Matrix of v -> svec(W smat(v) W) in svec coordinates.
  static Eigen::MatrixXd hinv_matrix(const Block& blk) {
    const int n = blk.dim;
    const Eigen::MatrixXd W = blk.R * blk.R.transpose();
    Eigen::MatrixXd Q(blk.size, blk.size);
    for (int j = 0; j < n; ++j)
      for (int i = j; i < n; ++i) {
        const int p = svec_index(n, i, j);
        const double sp = (i == j) ? 1.0 : M_SQRT2;
        for (int l = 0; l < n; ++l)
          for (int k = l; k < n; ++k) {
            const int q = svec_index(n, k, l);
            const double sq = (k == l) ? 1.0 : M_SQRT2;
            Q(p, q) = 0.5 * sp * sq * (W(i, k) * W(j, l) + W(i, l) * W(j, k));
          }
      }
    return Q;
  }

  void solve_kkt(const Eigen::VectorXd& ry, const Eigen::VectorXd& rf, Eigen::VectorXd& dy, Eigen::VectorXd& dxf) const {
    Eigen::VectorXd rhs(m_ + nf_);
    rhs << ry, rf;
    Eigen::VectorXd sol = lu_.solve(rhs);
    for (int k = 0; k < 3; ++k) {
      const Eigen::VectorXd res = rhs - K_ * sol;
      sol += lu_.solve(res);
    }
    dy = sol.head(m_);
    dxf = sol.tail(nf_);
  }

  Direction direction(double eta, const Eigen::VectorXd& d, double etau, const Eigen::VectorXd& rp,
                      const Eigen::VectorXd& rdc, const Eigen::VectorXd& rdf, double rg, double tau, double kappa,
                      const Eigen::VectorXd& dy1, const Eigen::VectorXd& dxf1, const Eigen::VectorXd& dxc1,
                      double denom) const {
    Direction dir;
    const Eigen::VectorXd winv_d = apply_winv(d);
    Eigen::VectorXd dy0, dxf0;
    solve_kkt(-eta * rp - Ac_ * apply_hinv(eta * rdc) - Ac_ * winv_d, -eta * rdf, dy0, dxf0);
    const Eigen::VectorXd dxc0 = apply_hinv(Ac_.transpose() * dy0 + eta * rdc) + winv_d;
    const double num = -eta * rg - etau / tau - (cc_.dot(dxc0) + cf_.dot(dxf0) - b_.dot(dy0));
    dir.dtau = num / denom;
    dir.dy = dy0 + dir.dtau * dy1;
    dir.dxf = dxf0 + dir.dtau * dxf1;
    dir.dxc = dxc0 + dir.dtau * dxc1;
    dir.dsc = -eta * rdc + cc_ * dir.dtau - Ac_.transpose() * dir.dy;
    dir.dkappa = (etau - kappa * dir.dtau) / tau;
    return dir;
  }

  SolverOptions opt_;
  int m_ = 0;
  int nc_ = 0;
  int nf_ = 0;
  int degree_ = 0;
  bool feasibility_only_ = false;
  Eigen::VectorXd row_scale_;
  Eigen::VectorXd b_;
  Eigen::SparseMatrix<double> Ac_;
  Eigen::MatrixXd Af_;
  Eigen::VectorXd cc_, cf_;
  std::vector<int> conic_cols_, free_cols_;
  std::vector<Block> blocks_;
  Eigen::MatrixXd K_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

}  // namespace detail

/// Default backend.
class InteriorPointSolver final : public ConicSolver {
 public:
  SolverReport solve(const ConicProblem& problem, const SolverOptions& options) const override {
    problem.validate();
    if (!(options.tol > 0.0)) throw StructuralError("solve: tolerance must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    SolverReport rep;
    try {
      detail::Engine engine(problem, options);
      rep = engine.run(problem.num_vars());
    } catch (const std::exception& e) {
      rep.status = Status::Unknown;
      rep.message = e.what();
    }
    rep.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
  }
  std::string name() const override { return "hsd-interior-point"; }
};

inline SolverReport solve(const ConicProblem& problem, double tol = 1e-8) {
  SolverOptions opt;
  opt.tol = tol;
  return InteriorPointSolver{}.solve(problem, opt);
}

// ---------------------------------------------------------------------------
// Debug JSON: {objective: [[0,j,v]...], A: [[i,j,v]...], b: [...], cones: [{"psd": n}, ...]}

inline nlohmann::json to_json(const ConicProblem& p) {
  using nlohmann::json;
  json j;
  json obj = json::array();
  for (Eigen::Index k = 0; k < p.objective.size(); ++k)
    if (p.objective(k) != 0.0) obj.push_back(json::array({0, k, p.objective(k)}));
  json a = json::array();
  for (int k = 0; k < p.A.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.A, k); it; ++it)
      a.push_back(json::array({it.row(), it.col(), it.value()}));
  json b = json::array();
  for (Eigen::Index k = 0; k < p.b.size(); ++k) b.push_back(p.b(k));
  json cones = json::array();
  for (const auto& c : p.cones) cones.push_back(json{{to_string(c.kind), c.dim}});
  j["objective"] = obj;
  j["A"] = a;
  j["b"] = b;
  j["cones"] = cones;
  return j;
}

inline ConicProblem from_json(const nlohmann::json& j) {
  ConicProblem p;
  try {
    for (const auto& c : j.at("cones")) {
      if (!c.is_object() || c.size() != 1) throw StructuralError("cone entry must be a single tagged dimension");
      const auto it = c.begin();
      const std::string key = it.key();
      const int dim = it.value().get<int>();
      if (key == "psd") p.cones.push_back(Cone::psd(dim));
      else if (key == "nonneg") p.cones.push_back(Cone::nonneg(dim));
      else if (key == "free") p.cones.push_back(Cone::free(dim));
      else throw StructuralError("unknown cone tag '" + key + "'");
    }
    const int n = p.num_vars();
    const auto& bj = j.at("b");
    p.b.resize(static_cast<Eigen::Index>(bj.size()));
    for (std::size_t k = 0; k < bj.size(); ++k) p.b(static_cast<Eigen::Index>(k)) = bj[k].get<double>();
    p.objective = Eigen::VectorXd::Zero(n);
    for (const auto& t : j.at("objective")) p.objective(t.at(1).get<int>()) = t.at(2).get<double>();
    std::vector<Eigen::Triplet<double>> trips;
    for (const auto& t : j.at("A")) trips.emplace_back(t.at(0).get<int>(), t.at(1).get<int>(), t.at(2).get<double>());
    p.A.resize(p.b.size(), n);
    p.A.setFromTriplets(trips.begin(), trips.end());
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("conic problem JSON: ") + e.what());
  }
  p.validate();
  return p;
}

inline void dump(const ConicProblem& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_json(p).dump(1) << '\n';
}

inline ConicProblem load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  return from_json(nlohmann::json::parse(in));
}

}  // namespace koopsos::sdp
