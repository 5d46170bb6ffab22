#pragma once

// Sum-of-squares program builder and compiler.
//
// Decision variables are laid out directly on the conic variable vector of
// the compiled problem, so every expression is a polynomial matrix whose
// coefficients are affine functions of that vector. A matrix constraint
// M(z) ∈ SOS[z, 2a]^p is compiled through its Gram form
//
//   M(z) = (I_p ⊗ b(z))' G (I_p ⊗ b(z)),   G ⪰ 0,
//
// with b(z) the monomials of degree <= a, matching every coefficient of the
// upper triangle of M exactly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "koopsos/errors.hpp"
#include "koopsos/poly.hpp"
#include "koopsos/sdp.hpp"

namespace koopsos::sos {

/// constant + Σ_k coeff_k x_k over the conic variable vector x.
class AffineScalar {
 public:
  AffineScalar() = default;
  AffineScalar(double constant) : constant_(constant) {}  // NOLINT(google-explicit-constructor)

  static AffineScalar variable(int index, double coeff = 1.0) {
    AffineScalar a;
    if (coeff != 0.0) a.terms_[index] = coeff;
    return a;
  }

  double constant() const { return constant_; }
  const std::map<int, double>& terms() const { return terms_; }
  bool is_zero() const { return constant_ == 0.0 && terms_.empty(); }
  bool is_constant() const { return terms_.empty(); }

  AffineScalar& operator+=(const AffineScalar& o) {
    constant_ += o.constant_;
    for (const auto& [k, c] : o.terms_) add(k, c);
    return *this;
  }
  AffineScalar& operator-=(const AffineScalar& o) {
    constant_ -= o.constant_;
    for (const auto& [k, c] : o.terms_) add(k, -c);
    return *this;
  }
  AffineScalar& operator*=(double s) {
    if (s == 0.0) {
      constant_ = 0.0;
      terms_.clear();
      return *this;
    }
    constant_ *= s;
    for (auto& [k, c] : terms_) c *= s;
    return *this;
  }
  friend AffineScalar operator+(AffineScalar a, const AffineScalar& b) { return a += b; }
  friend AffineScalar operator-(AffineScalar a, const AffineScalar& b) { return a -= b; }
  friend AffineScalar operator*(AffineScalar a, double s) { return a *= s; }
  friend AffineScalar operator*(double s, AffineScalar a) { return a *= s; }
  AffineScalar operator-() const { return *this * -1.0; }
  bool operator==(const AffineScalar&) const = default;

  double evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    double v = constant_;
    for (const auto& [k, c] : terms_) v += c * x(k);
    return v;
  }

 private:
  void add(int k, double c) {
    if (c == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(k, c);
    if (!inserted) {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  double constant_ = 0.0;
  std::map<int, double> terms_;
};

/// Polynomial whose coefficients are affine in the decision variables.
class LinPoly {
 public:
  using Terms = std::map<Monomial, AffineScalar, GrlexLess>;

  LinPoly() = default;
  explicit LinPoly(int num_vars) : num_vars_(num_vars) {}
  LinPoly(const Polynomial& p) : num_vars_(p.num_vars()) {  // NOLINT(google-explicit-constructor)
    for (const auto& [m, c] : p.terms()) terms_.emplace(m, AffineScalar(c));
  }
  static LinPoly constant(int num_vars, const AffineScalar& a) {
    LinPoly p(num_vars);
    p.add_term(Monomial(num_vars), a);
    return p;
  }

  int num_vars() const { return num_vars_; }
  const Terms& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }

  int degree() const {
    int d = 0;
    for (const auto& [m, a] : terms_) d = std::max(d, m.degree());
    return d;
  }

  void add_term(const Monomial& m, const AffineScalar& a) {
    if (m.num_vars() != num_vars_) throw DimensionError("LinPoly: variable-count mismatch");
    if (a.is_zero()) return;
    auto [it, inserted] = terms_.try_emplace(m, a);
    if (!inserted) {
      it->second += a;
      if (it->second.is_zero()) terms_.erase(it);
    }
  }

  LinPoly& operator+=(const LinPoly& o) {
    check(o);
    for (const auto& [m, a] : o.terms_) add_term(m, a);
    return *this;
  }
  LinPoly& operator-=(const LinPoly& o) {
    check(o);
    for (const auto& [m, a] : o.terms_) add_term(m, -a);
    return *this;
  }
  friend LinPoly operator+(LinPoly a, const LinPoly& b) { return a += b; }
  friend LinPoly operator-(LinPoly a, const LinPoly& b) { return a -= b; }
  friend LinPoly operator*(const LinPoly& a, double s) {
    LinPoly out(a.num_vars_);
    if (s == 0.0) return out;
    for (const auto& [m, c] : a.terms_) out.terms_.emplace(m, c * s);
    return out;
  }
  friend LinPoly operator*(double s, const LinPoly& a) { return a * s; }

  /// Product with a fixed polynomial.
  friend LinPoly operator*(const Polynomial& p, const LinPoly& a) {
    if (p.num_vars() != a.num_vars_) throw DimensionError("LinPoly: variable-count mismatch");
    LinPoly out(a.num_vars_);
    for (const auto& [mp, cp] : p.terms())
      for (const auto& [ma, ca] : a.terms_) out.add_term(mp * ma, ca * cp);
    return out;
  }
  friend LinPoly operator*(const LinPoly& a, const Polynomial& p) { return p * a; }

  bool operator==(const LinPoly& o) const { return num_vars_ == o.num_vars_ && terms_ == o.terms_; }

  Polynomial evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    Polynomial out(num_vars_);
    for (const auto& [m, a] : terms_) out.add_term(m, a.evaluate(x));
    return out;
  }

 private:
  void check(const LinPoly& o) const {
    if (o.num_vars_ != num_vars_) throw DimensionError("LinPoly: variable-count mismatch");
  }

  int num_vars_ = 0;
  Terms terms_;
};

/// Polynomial matrix affine in the decision variables.
class AffinePolyMatrixExpr {
 public:
  AffinePolyMatrixExpr() = default;
  AffinePolyMatrixExpr(int rows, int cols, int num_vars)
      : rows_(rows), cols_(cols), num_vars_(num_vars),
        entries_(static_cast<std::size_t>(rows * cols), LinPoly(num_vars)) {
    if (rows < 0 || cols < 0) throw DimensionError("AffinePolyMatrixExpr: negative dimension");
  }

  static AffinePolyMatrixExpr zeros(int rows, int cols, int num_vars) { return {rows, cols, num_vars}; }

  static AffinePolyMatrixExpr from_poly_matrix(const PolyMatrix& m) {
    AffinePolyMatrixExpr out(m.rows(), m.cols(), m.num_vars());
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) out(i, j) = LinPoly(m(i, j));
    return out;
  }

  static AffinePolyMatrixExpr from_matrix(const Eigen::MatrixXd& m, int num_vars) {
    return from_poly_matrix(PolyMatrix::from_matrix(m, num_vars));
  }

  /// s * I_n for a scalar polynomial expression s.
  static AffinePolyMatrixExpr diagonal(const LinPoly& s, int n) {
    AffinePolyMatrixExpr out(n, n, s.num_vars());
    for (int i = 0; i < n; ++i) out(i, i) = s;
    return out;
  }

  /// Assembles a block matrix; blocks in one row must share a row count and
  /// blocks in one column a column count.
  static AffinePolyMatrixExpr blocks(const std::vector<std::vector<AffinePolyMatrixExpr>>& grid) {
    if (grid.empty() || grid.front().empty()) throw DimensionError("blocks: empty grid");
    const std::size_t nbc = grid.front().size();
    std::vector<int> row_h, col_w(nbc, -1);
    int nv = grid.front().front().num_vars();
    for (const auto& row : grid) {
      if (row.size() != nbc) throw DimensionError("blocks: ragged grid");
      row_h.push_back(row.front().rows());
      for (std::size_t c = 0; c < nbc; ++c) {
        if (row[c].rows() != row_h.back()) throw DimensionError("blocks: inconsistent block row heights");
        if (col_w[c] < 0) col_w[c] = row[c].cols();
        if (row[c].cols() != col_w[c]) throw DimensionError("blocks: inconsistent block column widths");
        if (row[c].num_vars() != nv) throw DimensionError("blocks: variable-count mismatch");
      }
    }
    int R = 0, C = 0;
    for (int h : row_h) R += h;
    for (int w : col_w) C += w;
    AffinePolyMatrixExpr out(R, C, nv);
    int r0 = 0;
    for (std::size_t br = 0; br < grid.size(); ++br) {
      int c0 = 0;
      for (std::size_t bc = 0; bc < nbc; ++bc) {
        const auto& blk = grid[br][bc];
        for (int i = 0; i < blk.rows(); ++i)
          for (int j = 0; j < blk.cols(); ++j) out(r0 + i, c0 + j) = blk(i, j);
        c0 += col_w[bc];
      }
      r0 += row_h[br];
    }
    return out;
  }

  /// Builds a symmetric block matrix from its upper block triangle; entries
  /// below the diagonal blocks (the ⋆ blocks) are transposes of their mirrors.
  static AffinePolyMatrixExpr symmetric_from_upper(const std::vector<std::vector<AffinePolyMatrixExpr>>& upper) {
    const std::size_t nb = upper.size();
    std::vector<std::vector<AffinePolyMatrixExpr>> grid(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      if (upper[i].size() != nb - i) throw DimensionError("symmetric_from_upper: row i must hold blocks i..n-1");
    }
    for (std::size_t i = 0; i < nb; ++i)
      for (std::size_t j = 0; j < nb; ++j)
        grid[i].push_back(j >= i ? upper[i][j - i] : upper[j][i - j].transpose());
    return blocks(grid);
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int num_vars() const { return num_vars_; }

  LinPoly& operator()(int i, int j) { return entries_[index(i, j)]; }
  const LinPoly& operator()(int i, int j) const { return entries_[index(i, j)]; }

  int degree() const {
    int d = 0;
    for (const auto& e : entries_) d = std::max(d, e.degree());
    return d;
  }

  /// Mirror entries may differ by rounding: |a - b| <= tol * max(1, |a|, |b|)
  /// coefficientwise.
  bool is_symmetric(double tol = 0.0) const {
    if (rows_ != cols_) return false;
    for (int i = 0; i < rows_; ++i)
      for (int j = i + 1; j < cols_; ++j) {
        const LinPoly& a = (*this)(i, j);
        const LinPoly& b = (*this)(j, i);
        if (tol == 0.0) {
          if (!(a == b)) return false;
          continue;
        }
        if (max_abs(a - b) > tol * std::max({1.0, max_abs(a), max_abs(b)})) return false;
      }
    return true;
  }

  AffinePolyMatrixExpr transpose() const {
    AffinePolyMatrixExpr out(cols_, rows_, num_vars_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
    return out;
  }

  friend AffinePolyMatrixExpr operator+(const AffinePolyMatrixExpr& a, const AffinePolyMatrixExpr& b) {
    a.check_same_shape(b);
    AffinePolyMatrixExpr out(a);
    for (std::size_t k = 0; k < out.entries_.size(); ++k) out.entries_[k] += b.entries_[k];
    return out;
  }
  friend AffinePolyMatrixExpr operator-(const AffinePolyMatrixExpr& a, const AffinePolyMatrixExpr& b) {
    a.check_same_shape(b);
    AffinePolyMatrixExpr out(a);
    for (std::size_t k = 0; k < out.entries_.size(); ++k) out.entries_[k] -= b.entries_[k];
    return out;
  }
  friend AffinePolyMatrixExpr operator*(double s, const AffinePolyMatrixExpr& a) {
    AffinePolyMatrixExpr out(a);
    for (auto& e : out.entries_) e = e * s;
    return out;
  }
  friend AffinePolyMatrixExpr operator*(const Polynomial& p, const AffinePolyMatrixExpr& a) {
    AffinePolyMatrixExpr out(a.rows_, a.cols_, a.num_vars_);
    for (std::size_t k = 0; k < out.entries_.size(); ++k) out.entries_[k] = p * a.entries_[k];
    return out;
  }
  friend AffinePolyMatrixExpr operator*(const Eigen::MatrixXd& m, const AffinePolyMatrixExpr& a) {
    if (m.cols() != a.rows_) throw DimensionError("matrix * expr: shape mismatch");
    AffinePolyMatrixExpr out(static_cast<int>(m.rows()), a.cols_, a.num_vars_);
    for (int i = 0; i < out.rows_; ++i)
      for (int j = 0; j < out.cols_; ++j)
        for (int k = 0; k < a.rows_; ++k)
          if (m(i, k) != 0.0) out(i, j) += a(k, j) * m(i, k);
    return out;
  }
  friend AffinePolyMatrixExpr operator*(const AffinePolyMatrixExpr& a, const Eigen::MatrixXd& m) {
    if (a.cols_ != m.rows()) throw DimensionError("expr * matrix: shape mismatch");
    AffinePolyMatrixExpr out(a.rows_, static_cast<int>(m.cols()), a.num_vars_);
    for (int i = 0; i < out.rows_; ++i)
      for (int j = 0; j < out.cols_; ++j)
        for (int k = 0; k < a.cols_; ++k)
          if (m(k, j) != 0.0) out(i, j) += a(i, k) * m(k, j);
    return out;
  }

  /// expr(z) ⊗ z over the listed polynomial variables (cf. polymat_kron_var).
  AffinePolyMatrixExpr kron_var(const std::vector<int>& z_vars) const {
    const int N = static_cast<int>(z_vars.size());
    if (cols_ != N) throw DimensionError("kron_var: column count must equal variable count");
    for (int v : z_vars)
      if (v < 0 || v >= num_vars_) throw DimensionError("kron_var: variable index out of range");
    AffinePolyMatrixExpr out(rows_ * N, N, num_vars_);
    for (int i = 0; i < rows_; ++i)
      for (int k = 0; k < N; ++k) {
        const Polynomial zk = Polynomial::variable(num_vars_, z_vars[static_cast<std::size_t>(k)]);
        for (int j = 0; j < N; ++j) out(i * N + k, j) = zk * (*this)(i, j);
      }
    return out;
  }

  PolyMatrix evaluate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    PolyMatrix out(std::max(rows_, 1), std::max(cols_, 1), num_vars_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) out(i, j) = (*this)(i, j).evaluate(x);
    return out;
  }

 private:
  static double max_abs(const LinPoly& p) {
    double v = 0.0;
    for (const auto& [m, a] : p.terms()) {
      v = std::max(v, std::abs(a.constant()));
      for (const auto& [k, c] : a.terms()) v = std::max(v, std::abs(c));
    }
    return v;
  }
  std::size_t index(int i, int j) const {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_) throw DimensionError("AffinePolyMatrixExpr: index out of range");
    return static_cast<std::size_t>(i * cols_ + j);
  }
  void check_same_shape(const AffinePolyMatrixExpr& b) const {
    if (rows_ != b.rows_ || cols_ != b.cols_ || num_vars_ != b.num_vars_) throw DimensionError("AffinePolyMatrixExpr: shape mismatch");
  }

  int rows_ = 0;
  int cols_ = 0;
  int num_vars_ = 0;
  std::vector<LinPoly> entries_;
};

// ---------------------------------------------------------------------------

struct SymMatrixKind {
  int size;
};
struct PolyMatrixKind {
  int rows, cols, degree;
};
/// Polynomial s of even degree with (s - margin) ∈ SOS.
struct SosPolyKind {
  int degree;
  double margin = 0.0;
};
/// Scalar s >= lower_bound; -inf makes it free.
struct ScalarKind {
  double lower_bound = -std::numeric_limits<double>::infinity();
};
using VarKind = std::variant<SymMatrixKind, PolyMatrixKind, SosPolyKind, ScalarKind>;

struct DecisionVar {
  int id = -1;
  VarKind kind;
};

struct GramCertificate {
  std::string label;
  int block_dim = 1;
  MonomialBasis basis;
  Eigen::MatrixXd gram;
  double residual = 0.0;  // max |coefficient mismatch| between expression and Gram expansion
  double min_eigenvalue = 0.0;
};

class SOSProgram;

/// Decision-variable values recovered from a conic solution.
class Solution {
 public:
  sdp::Status status = sdp::Status::Unknown;
  Eigen::VectorXd x;  // conic primal
  std::vector<GramCertificate> certificates;  // one per matrix-SOS constraint, then one per sos_poly variable

  bool ok() const { return status == sdp::Status::Optimal || status == sdp::Status::Feasible; }

  Eigen::MatrixXd matrix(const DecisionVar& v) const { return value(v).evaluate(Eigen::VectorXd::Zero(value(v).num_vars())); }
  const PolyMatrix& poly_matrix(const DecisionVar& v) const { return value(v); }
  const Polynomial& poly(const DecisionVar& v) const { return value(v)(0, 0); }
  double scalar(const DecisionVar& v) const { return value(v)(0, 0).coefficient(Monomial(value(v).num_vars())); }

 private:
  friend class SOSProgram;
  const PolyMatrix& value(const DecisionVar& v) const {
    if (!ok()) throw StructuralError("Solution: no values for a non-feasible solve");
    return values_.at(static_cast<std::size_t>(v.id));
  }
  std::vector<PolyMatrix> values_;
};

class SOSProgram {
 public:
  /// Relative tolerance for mirror entries of a constraint; only the upper
  /// triangle is compiled.
  static constexpr double kSymmetryTol = 1e-12;

  explicit SOSProgram(int num_vars) : num_vars_(num_vars) {
    if (num_vars < 1) throw DimensionError("SOSProgram: need at least one polynomial variable");
  }

  int num_vars() const { return num_vars_; }
  int num_conic_vars() const { return next_index_; }

  DecisionVar declare(const VarKind& kind) {
    DecisionVar v{static_cast<int>(vars_.size()), kind};
    VarRecord rec;
    if (const auto* k = std::get_if<SymMatrixKind>(&kind)) {
      if (k->size < 1) throw DimensionError("sym_matrix: size must be positive");
      const int n = k->size;
      const int first = allocate(sdp::Cone::free(n * (n + 1) / 2));
      rec.expr = AffinePolyMatrixExpr(n, n, num_vars_);
      int idx = first;
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          const auto e = LinPoly::constant(num_vars_, AffineScalar::variable(idx++));
          rec.expr(i, j) = e;
          rec.expr(j, i) = e;
        }
    } else if (const auto* k = std::get_if<PolyMatrixKind>(&kind)) {
      if (k->rows < 1 || k->cols < 1 || k->degree < 0) throw DimensionError("poly_matrix: invalid shape or degree");
      const MonomialBasis basis = monomial_basis(num_vars_, k->degree);
      int idx = allocate(sdp::Cone::free(k->rows * k->cols * static_cast<int>(basis.size())));
      rec.expr = AffinePolyMatrixExpr(k->rows, k->cols, num_vars_);
      for (int i = 0; i < k->rows; ++i)
        for (int j = 0; j < k->cols; ++j)
          for (const auto& m : basis) rec.expr(i, j).add_term(m, AffineScalar::variable(idx++));
    } else if (const auto* k = std::get_if<SosPolyKind>(&kind)) {
      if (k->degree < 0 || k->degree % 2 != 0) throw DegreeError("sos_poly: degree must be even and nonnegative");
      if (k->margin < 0.0) throw SpecError("sos_poly: margin must be nonnegative");
      rec.basis = monomial_basis(num_vars_, k->degree / 2);
      const int nb = static_cast<int>(rec.basis.size());
      rec.gram_offset = allocate(sdp::Cone::psd(nb));
      rec.gram_dim = nb;
      LinPoly s = LinPoly::constant(num_vars_, AffineScalar(k->margin));
      for (int a = 0; a < nb; ++a)
        for (int c = a; c < nb; ++c) {
          const double coeff = (a == c) ? 1.0 : M_SQRT2;  // svec scaling, both (a,c) and (c,a)
          s.add_term(rec.basis[static_cast<std::size_t>(a)] * rec.basis[static_cast<std::size_t>(c)],
                     AffineScalar::variable(rec.gram_offset + sdp::svec_index(nb, c, a), coeff));
        }
      rec.expr = AffinePolyMatrixExpr(1, 1, num_vars_);
      rec.expr(0, 0) = s;
    } else if (const auto* k = std::get_if<ScalarKind>(&kind)) {
      rec.expr = AffinePolyMatrixExpr(1, 1, num_vars_);
      if (std::isfinite(k->lower_bound)) {
        const int idx = allocate(sdp::Cone::nonneg(1));
        rec.expr(0, 0) = LinPoly::constant(num_vars_, AffineScalar(k->lower_bound) + AffineScalar::variable(idx));
      } else {
        const int idx = allocate(sdp::Cone::free(1));
        rec.expr(0, 0) = LinPoly::constant(num_vars_, AffineScalar::variable(idx));
      }
    }
    vars_.push_back(std::move(rec));
    return v;
  }

  const AffinePolyMatrixExpr& expr(const DecisionVar& v) const { return record(v).expr; }
  const LinPoly& poly(const DecisionVar& v) const {
    const auto& e = record(v).expr;
    if (e.rows() != 1 || e.cols() != 1) throw DimensionError("poly(): variable is not scalar-valued");
    return e(0, 0);
  }
  AffineScalar scalar(const DecisionVar& v) const {
    const auto& p = poly(v);
    if (p.degree() != 0) throw DegreeError("scalar(): variable is not constant");
    auto it = p.terms().find(Monomial(num_vars_));
    return it == p.terms().end() ? AffineScalar() : it->second;
  }

  void add_matrix_sos(const AffinePolyMatrixExpr& e, int two_alpha, std::string label = {}) {
    if (e.num_vars() != num_vars_) throw DimensionError("add_matrix_sos: variable-count mismatch");
    if (e.rows() != e.cols() || e.rows() < 1) throw StructuralError("add_matrix_sos: expression must be square");
    if (!e.is_symmetric(kSymmetryTol)) throw StructuralError("add_matrix_sos: expression is not symmetric");
    if (two_alpha < 0) throw DegreeError("add_matrix_sos: negative degree bound");
    if (e.degree() > two_alpha) {
      throw DegreeError("add_matrix_sos: expression degree " + std::to_string(e.degree()) + " exceeds bound " +
                        std::to_string(two_alpha));
    }
    constraints_.push_back({e, two_alpha, label.empty() ? "constraint " + std::to_string(constraints_.size()) : label});
  }

  void add_equality(const AffineScalar& lhs, double rhs) { equalities_.push_back({lhs, rhs}); }

  void minimize(const AffineScalar& f) { objective_ = f; }
  void maximize(const AffineScalar& f) { objective_ = -f; }
  bool has_objective() const { return !objective_.is_constant(); }

  std::size_t num_constraints() const { return constraints_.size(); }

  /// Gram block size of constraint k (rows of M times |basis|).
  int gram_dimension(std::size_t k) const {
    const auto& c = constraints_.at(k);
    return c.expr.rows() * static_cast<int>(monomial_basis(num_vars_, c.two_alpha / 2).size());
  }

  sdp::ConicProblem compile() const {
    if (constraints_.empty() && equalities_.empty()) throw StructuralError("compile: empty program");
    sdp::ConicProblem p;
    p.cones = layout_;
    int next = next_index_;
    std::vector<Eigen::Triplet<double>> trips;
    std::vector<double> rhs;
    int row = 0;

    auto emit = [&](const AffineScalar& lhs, const std::map<int, double>& gram_terms) {
      std::map<int, double> coeffs(lhs.terms().begin(), lhs.terms().end());
      for (const auto& [k, c] : gram_terms) coeffs[k] -= c;
      for (const auto& [k, c] : coeffs)
        if (c != 0.0) trips.emplace_back(row, k, c);
      rhs.push_back(-lhs.constant());
      ++row;
    };

    for (const auto& c : constraints_) {
      const MonomialBasis basis = monomial_basis(num_vars_, c.two_alpha / 2);
      const int nb = static_cast<int>(basis.size());
      const int pdim = c.expr.rows();
      const int gdim = pdim * nb;
      const int offset = next;
      p.cones.push_back(sdp::Cone::psd(gdim));
      next += sdp::svec_size(gdim);

      // monomial -> ordered basis index pairs producing it
      std::map<Monomial, std::vector<std::pair<int, int>>, GrlexLess> products;
      for (int a = 0; a < nb; ++a)
        for (int b = 0; b < nb; ++b)
          products[basis[static_cast<std::size_t>(a)] * basis[static_cast<std::size_t>(b)]].emplace_back(a, b);

      for (int i = 0; i < pdim; ++i)
        for (int j = i; j < pdim; ++j) {
          const LinPoly& entry = c.expr(i, j);
          std::set<Monomial, GrlexLess> monos;
          for (const auto& [m, pairs] : products) monos.insert(m);
          for (const auto& [m, a] : entry.terms()) monos.insert(m);
          for (const auto& m : monos) {
            std::map<int, double> gram_terms;
            auto it = products.find(m);
            if (it != products.end()) {
              for (const auto& [a, b] : it->second) {
                const int r = i * nb + a;
                const int s = j * nb + b;
                const int k = offset + sdp::svec_index(gdim, r, s);
                // svec holds sqrt(2)·G_rs off the diagonal
                gram_terms[k] += (r == s) ? 1.0 : M_SQRT1_2;
              }
            }
            auto et = entry.terms().find(m);
            emit(et == entry.terms().end() ? AffineScalar() : et->second, gram_terms);
          }
        }
    }
    for (const auto& [lhs, value] : equalities_) {
      emit(lhs - AffineScalar(value), {});
    }

    const int n = next;
    p.A.resize(row, n);
    p.A.setFromTriplets(trips.begin(), trips.end());
    p.b = Eigen::Map<const Eigen::VectorXd>(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    p.objective = Eigen::VectorXd::Zero(n);
    for (const auto& [k, c] : objective_.terms()) p.objective(k) = c;
    p.validate();
    return p;
  }

  Solution recover(const sdp::SolverReport& report) const {
    Solution sol;
    sol.status = report.status;
    if (!report.has_solution()) return sol;
    sol.x = report.primal;
    for (const auto& rec : vars_) sol.values_.push_back(rec.expr.evaluate(sol.x));

    int offset = next_index_;
    for (const auto& c : constraints_) {
      GramCertificate cert;
      cert.label = c.label;
      cert.basis = monomial_basis(num_vars_, c.two_alpha / 2);
      cert.block_dim = c.expr.rows();
      const int gdim = cert.block_dim * static_cast<int>(cert.basis.size());
      cert.gram = sdp::smat(sol.x.segment(offset, sdp::svec_size(gdim)), gdim);
      offset += sdp::svec_size(gdim);
      cert.residual = gram_residual(c.expr.evaluate(sol.x), cert.basis, cert.gram);
      cert.min_eigenvalue = min_eigenvalue(cert.gram);
      sol.certificates.push_back(std::move(cert));
    }
    for (const auto& rec : vars_) {
      if (rec.gram_dim == 0) continue;
      GramCertificate cert;
      cert.label = "sos variable";
      cert.basis = rec.basis;
      cert.gram = sdp::smat(sol.x.segment(rec.gram_offset, sdp::svec_size(rec.gram_dim)), rec.gram_dim);
      cert.residual = 0.0;
      cert.min_eigenvalue = min_eigenvalue(cert.gram);
      sol.certificates.push_back(std::move(cert));
    }
    return sol;
  }

  /// Max |coefficient| of M(z) - (I ⊗ b(z))' G (I ⊗ b(z)).
  static double gram_residual(const PolyMatrix& m, const MonomialBasis& basis, const Eigen::MatrixXd& gram) {
    const int nb = static_cast<int>(basis.size());
    double worst = 0.0;
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) {
        Polynomial diff = m(i, j);
        for (int a = 0; a < nb; ++a)
          for (int b = 0; b < nb; ++b)
            diff.add_term(basis[static_cast<std::size_t>(a)] * basis[static_cast<std::size_t>(b)], -gram(i * nb + a, j * nb + b));
        for (const auto& [mono, coeff] : diff.terms()) worst = std::max(worst, std::abs(coeff));
      }
    return worst;
  }

 private:
  struct VarRecord {
    AffinePolyMatrixExpr expr;
    MonomialBasis basis;  // sos_poly only
    int gram_offset = -1;
    int gram_dim = 0;
  };
  struct Constraint {
    AffinePolyMatrixExpr expr;
    int two_alpha;
    std::string label;
  };

  static double min_eigenvalue(const Eigen::MatrixXd& g) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  int allocate(const sdp::Cone& cone) {
    const int first = next_index_;
    layout_.push_back(cone);
    next_index_ += cone.size();
    return first;
  }

  const VarRecord& record(const DecisionVar& v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= vars_.size()) throw StructuralError("unknown decision variable");
    return vars_[static_cast<std::size_t>(v.id)];
  }

  int num_vars_;
  int next_index_ = 0;
  std::vector<sdp::Cone> layout_;
  std::vector<VarRecord> vars_;
  std::vector<Constraint> constraints_;
  std::vector<std::pair<AffineScalar, double>> equalities_;
  AffineScalar objective_;
};

}  // namespace koopsos::sos
