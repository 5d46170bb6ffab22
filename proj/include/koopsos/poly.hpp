#pragma once

// Sparse multivariate polynomials over double coefficients, monomial bases in
// graded-lexicographic order, and the Kronecker products used to write matrix
// sum-of-squares conditions.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "koopsos/errors.hpp"

namespace koopsos {

/// Exponent vector x^a = x_1^{a_1} ... x_n^{a_n}.
class Monomial {
 public:
  Monomial() = default;
  explicit Monomial(int num_vars) : exponents_(static_cast<std::size_t>(num_vars), 0) {}
  explicit Monomial(std::vector<int> exponents) : exponents_(std::move(exponents)) {
    for (int e : exponents_) {
      if (e < 0) throw DimensionError("Monomial: negative exponent");
    }
  }

  static Monomial variable(int num_vars, int index) {
    if (index < 0 || index >= num_vars) throw DimensionError("Monomial: variable index out of range");
    Monomial m(num_vars);
    m.exponents_[static_cast<std::size_t>(index)] = 1;
    return m;
  }

  int num_vars() const { return static_cast<int>(exponents_.size()); }
  int degree() const { return std::accumulate(exponents_.begin(), exponents_.end(), 0); }
  int operator[](int i) const { return exponents_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& exponents() const { return exponents_; }

  Monomial operator*(const Monomial& other) const {
    if (other.num_vars() != num_vars()) throw DimensionError("Monomial: variable-count mismatch");
    Monomial out(*this);
    for (std::size_t i = 0; i < exponents_.size(); ++i) out.exponents_[i] += other.exponents_[i];
    return out;
  }

  double evaluate(const Eigen::Ref<const Eigen::VectorXd>& point) const {
    double v = 1.0;
    for (std::size_t i = 0; i < exponents_.size(); ++i) {
      for (int k = 0; k < exponents_[i]; ++k) v *= point(static_cast<Eigen::Index>(i));
    }
    return v;
  }

  bool operator==(const Monomial&) const = default;

  std::string to_string() const {
    if (degree() == 0) return "1";
    std::string s;
    for (std::size_t i = 0; i < exponents_.size(); ++i) {
      if (exponents_[i] == 0) continue;
      if (!s.empty()) s += "*";
      s += "z" + std::to_string(i + 1);
      if (exponents_[i] > 1) s += "^" + std::to_string(exponents_[i]);
    }
    return s;
  }

 private:
  std::vector<int> exponents_;
};

/// Graded lexicographic order: lower total degree first; within a degree,
/// larger leading exponents first (1 < x1 < x2 < x1^2 < x1 x2 < x2^2 ...).
struct GrlexLess {
  bool operator()(const Monomial& a, const Monomial& b) const {
    const int da = a.degree();
    const int db = b.degree();
    if (da != db) return da < db;
    return a.exponents() > b.exponents();
  }
};

/// All monomials of total degree <= max_degree, sorted and unique.
class MonomialBasis {
 public:
  MonomialBasis() = default;
  MonomialBasis(int num_vars, std::vector<Monomial> entries)
      : num_vars_(num_vars), entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(), GrlexLess{});
    entries_.erase(std::unique(entries_.begin(), entries_.end()), entries_.end());
  }

  int num_vars() const { return num_vars_; }
  std::size_t size() const { return entries_.size(); }
  const Monomial& operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<Monomial>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  Eigen::VectorXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& point) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(entries_.size()));
    for (std::size_t i = 0; i < entries_.size(); ++i) v(static_cast<Eigen::Index>(i)) = entries_[i].evaluate(point);
    return v;
  }

 private:
  int num_vars_ = 0;
  std::vector<Monomial> entries_;
};

namespace detail {
inline void enumerate_monomials(int var, int remaining, std::vector<int>& current,
                                std::vector<Monomial>& out) {
  const int n = static_cast<int>(current.size());
  if (var == n) {
    out.emplace_back(current);
    return;
  }
  for (int e = 0; e <= remaining; ++e) {
    current[static_cast<std::size_t>(var)] = e;
    enumerate_monomials(var + 1, remaining - e, current, out);
  }
  current[static_cast<std::size_t>(var)] = 0;
}
}  // namespace detail

inline MonomialBasis monomial_basis(int num_vars, int max_degree) {
  if (num_vars < 1) throw DimensionError("monomial_basis: need at least one variable");
  if (max_degree < 0) throw DegreeError("monomial_basis: negative degree");
  std::vector<Monomial> out;
  std::vector<int> current(static_cast<std::size_t>(num_vars), 0);
  detail::enumerate_monomials(0, max_degree, current, out);
  return MonomialBasis(num_vars, std::move(out));
}

/// Sparse polynomial; the empty coefficient map is the zero polynomial.
class Polynomial {
 public:
  using Terms = std::map<Monomial, double, GrlexLess>;

  Polynomial() = default;
  explicit Polynomial(int num_vars) : num_vars_(num_vars) {}

  static Polynomial constant(int num_vars, double c) {
    Polynomial p(num_vars);
    if (c != 0.0) p.terms_[Monomial(num_vars)] = c;
    return p;
  }
  static Polynomial variable(int num_vars, int index) {
    Polynomial p(num_vars);
    p.terms_[Monomial::variable(num_vars, index)] = 1.0;
    return p;
  }
  static Polynomial monomial(const Monomial& m, double c = 1.0) {
    Polynomial p(m.num_vars());
    if (c != 0.0) p.terms_[m] = c;
    return p;
  }

  int num_vars() const { return num_vars_; }
  const Terms& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  std::size_t num_terms() const { return terms_.size(); }

  int degree() const {
    int d = 0;
    for (const auto& [m, c] : terms_) d = std::max(d, m.degree());
    return d;
  }

  double coefficient(const Monomial& m) const {
    auto it = terms_.find(m);
    return it == terms_.end() ? 0.0 : it->second;
  }

  /// Adds c to the coefficient of m, dropping the entry if it cancels exactly.
  void add_term(const Monomial& m, double c) {
    if (m.num_vars() != num_vars_) throw DimensionError("Polynomial: variable-count mismatch");
    if (c == 0.0) return;
    auto [it, inserted] = terms_.try_emplace(m, c);
    if (!inserted) {
      it->second += c;
      if (it->second == 0.0) terms_.erase(it);
    }
  }

  Polynomial& operator+=(const Polynomial& other) {
    check_compatible(other);
    for (const auto& [m, c] : other.terms_) add_term(m, c);
    return *this;
  }
  Polynomial& operator-=(const Polynomial& other) {
    check_compatible(other);
    for (const auto& [m, c] : other.terms_) add_term(m, -c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    if (s == 0.0) {
      terms_.clear();
      return *this;
    }
    for (auto it = terms_.begin(); it != terms_.end();) {
      it->second *= s;
      if (it->second == 0.0) {
        it = terms_.erase(it);
      } else {
        ++it;
      }
    }
    return *this;
  }

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }
  friend Polynomial operator*(double s, Polynomial a) { return a *= s; }
  Polynomial operator-() const { return *this * -1.0; }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    a.check_compatible(b);
    Polynomial out(a.num_vars_);
    for (const auto& [ma, ca] : a.terms_) {
      for (const auto& [mb, cb] : b.terms_) out.add_term(ma * mb, ca * cb);
    }
    return out;
  }

  Polynomial pow(int k) const {
    if (k < 0) throw DegreeError("Polynomial::pow: negative exponent");
    Polynomial out = constant(num_vars_, 1.0);
    for (int i = 0; i < k; ++i) out = out * *this;
    return out;
  }

  double evaluate(const Eigen::Ref<const Eigen::VectorXd>& point) const {
    if (point.size() != num_vars_) throw DimensionError("Polynomial::evaluate: point length mismatch");
    double v = 0.0;
    for (const auto& [m, c] : terms_) v += c * m.evaluate(point);
    return v;
  }

  /// Drops coefficients with magnitude <= eps.
  Polynomial prune(double eps = 1e-9) const {
    Polynomial out(num_vars_);
    for (const auto& [m, c] : terms_) {
      if (std::abs(c) > eps) out.terms_.emplace(m, c);
    }
    return out;
  }

  bool operator==(const Polynomial& other) const {
    return num_vars_ == other.num_vars_ && terms_ == other.terms_;
  }

  std::string to_string() const {
    if (terms_.empty()) return "0";
    std::string s;
    for (const auto& [m, c] : terms_) {
      if (!s.empty()) s += " + ";
      s += std::to_string(c);
      if (m.degree() > 0) s += "*" + m.to_string();
    }
    return s;
  }

 private:
  void check_compatible(const Polynomial& other) const {
    if (other.num_vars_ != num_vars_) throw DimensionError("Polynomial: variable-count mismatch");
  }

  int num_vars_ = 0;
  Terms terms_;
};

/// Dense matrix of polynomials sharing one variable vector.
class PolyMatrix {
 public:
  PolyMatrix() = default;
  PolyMatrix(int rows, int cols, int num_vars)
      : rows_(rows), cols_(cols), num_vars_(num_vars),
        entries_(static_cast<std::size_t>(rows * cols), Polynomial(num_vars)) {
    if (rows < 1 || cols < 1) throw DimensionError("PolyMatrix: dimensions must be positive");
  }

  static PolyMatrix from_matrix(const Eigen::MatrixXd& m, int num_vars) {
    PolyMatrix out(static_cast<int>(m.rows()), static_cast<int>(m.cols()), num_vars);
    for (int i = 0; i < out.rows_; ++i)
      for (int j = 0; j < out.cols_; ++j) out(i, j) = Polynomial::constant(num_vars, m(i, j));
    return out;
  }

  /// Column vector of the variables themselves.
  static PolyMatrix variables(int num_vars) {
    PolyMatrix out(num_vars, 1, num_vars);
    for (int i = 0; i < num_vars; ++i) out(i, 0) = Polynomial::variable(num_vars, i);
    return out;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int num_vars() const { return num_vars_; }

  Polynomial& operator()(int i, int j) { return entries_[index(i, j)]; }
  const Polynomial& operator()(int i, int j) const { return entries_[index(i, j)]; }

  int degree() const {
    int d = 0;
    for (const auto& p : entries_) d = std::max(d, p.degree());
    return d;
  }

  bool is_symmetric() const {
    if (rows_ != cols_) return false;
    for (int i = 0; i < rows_; ++i)
      for (int j = i + 1; j < cols_; ++j)
        if (!((*this)(i, j) == (*this)(j, i))) return false;
    return true;
  }

  Eigen::MatrixXd evaluate(const Eigen::Ref<const Eigen::VectorXd>& point) const {
    Eigen::MatrixXd out(rows_, cols_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) out(i, j) = (*this)(i, j).evaluate(point);
    return out;
  }

  PolyMatrix transpose() const {
    PolyMatrix out(cols_, rows_, num_vars_);
    for (int i = 0; i < rows_; ++i)
      for (int j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
    return out;
  }

  PolyMatrix prune(double eps = 1e-9) const {
    PolyMatrix out(*this);
    for (auto& p : out.entries_) p = p.prune(eps);
    return out;
  }

  friend PolyMatrix operator*(const PolyMatrix& a, const PolyMatrix& b) {
    if (a.cols_ != b.rows_ || a.num_vars_ != b.num_vars_) throw DimensionError("PolyMatrix: product shape mismatch");
    PolyMatrix out(a.rows_, b.cols_, a.num_vars_);
    for (int i = 0; i < a.rows_; ++i)
      for (int j = 0; j < b.cols_; ++j)
        for (int k = 0; k < a.cols_; ++k) out(i, j) += a(i, k) * b(k, j);
    return out;
  }

  friend PolyMatrix operator+(const PolyMatrix& a, const PolyMatrix& b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw DimensionError("PolyMatrix: sum shape mismatch");
    PolyMatrix out(a);
    for (std::size_t k = 0; k < out.entries_.size(); ++k) out.entries_[k] += b.entries_[k];
    return out;
  }

 private:
  std::size_t index(int i, int j) const {
    if (i < 0 || i >= rows_ || j < 0 || j >= cols_) throw DimensionError("PolyMatrix: index out of range");
    return static_cast<std::size_t>(i * cols_ + j);
  }

  int rows_ = 0;
  int cols_ = 0;
  int num_vars_ = 0;
  std::vector<Polynomial> entries_;
};

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// L(z) ⊗ z for an m×N polynomial matrix L, where z = (z_{v_1}, ..., z_{v_N})
/// are the polynomial variables listed in z_vars. Entry (i*N + k, j) is
/// L(i, j) * z_{v_k}.
inline PolyMatrix polymat_kron_var(const PolyMatrix& L, const std::vector<int>& z_vars) {
  const int N = static_cast<int>(z_vars.size());
  if (L.cols() != N) throw DimensionError("polymat_kron_var: column count must equal variable count");
  for (int v : z_vars) {
    if (v < 0 || v >= L.num_vars()) throw DimensionError("polymat_kron_var: variable index out of range");
  }
  PolyMatrix out(L.rows() * N, N, L.num_vars());
  for (int i = 0; i < L.rows(); ++i)
    for (int k = 0; k < N; ++k) {
      const Polynomial zk = Polynomial::variable(L.num_vars(), z_vars[static_cast<std::size_t>(k)]);
      for (int j = 0; j < N; ++j) out(i * N + k, j) = L(i, j) * zk;
    }
  return out;
}

}  // namespace koopsos
