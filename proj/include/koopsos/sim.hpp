#pragma once

// System definitions, fixed-step integration and trajectory export.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "koopsos/errors.hpp"

namespace koopsos::sim {

using VectorField = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Control-affine ODE  xdot = f(x) + Σ_i g_i(x) u_i.
struct OdeSystem {
  int n = 0;
  int m = 0;
  VectorField drift;
  std::vector<VectorField> input_maps;
  std::string label;

  Eigen::VectorXd field(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    Eigen::VectorXd dx = drift(x);
    for (int i = 0; i < m; ++i)
      if (u(i) != 0.0) dx += input_maps[static_cast<std::size_t>(i)](x) * u(i);
    return dx;
  }
};

/// Natively discrete system  x+ = step(x, u).
struct DiscreteSystem {
  int n = 0;
  int m = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> step;
  std::string label;
};

inline constexpr int kDefaultSubsteps = 20;
inline constexpr double kDivergenceThreshold = 1e6;

/// Classical RK4 over `duration` with the input held constant.
inline Eigen::VectorXd rk4_flow(const OdeSystem& sys, const Eigen::VectorXd& x0, const Eigen::VectorXd& u,
                                double duration, int substeps = kDefaultSubsteps) {
  if (substeps < 1) throw std::invalid_argument("rk4_flow: substeps must be >= 1");
  if (!(duration > 0.0)) throw std::invalid_argument("rk4_flow: duration must be positive");
  if (x0.size() != sys.n || u.size() != sys.m) throw DimensionError("rk4_flow: state or input size mismatch");
  const double h = duration / substeps;
  Eigen::VectorXd x = x0;
  for (int s = 0; s < substeps; ++s) {
    const Eigen::VectorXd k1 = sys.field(x, u);
    const Eigen::VectorXd k2 = sys.field(x + 0.5 * h * k1, u);
    const Eigen::VectorXd k3 = sys.field(x + 0.5 * h * k2, u);
    const Eigen::VectorXd k4 = sys.field(x + h * k3, u);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite()) throw IntegrationError("rk4_flow: non-finite state", (s + 1) * h);
  }
  return x;
}

/// Inverted pendulum about the upright equilibrium.
inline OdeSystem pendulum(double m = 1.0, double l = 1.0, double b = 0.5, double g = 9.81) {
  OdeSystem sys;
  sys.n = 2;
  sys.m = 1;
  sys.label = "pendulum";
  const double inertia = m * l * l;
  sys.drift = [=](const Eigen::VectorXd& x) {
    Eigen::VectorXd dx(2);
    dx << x(1), (g / l) * std::sin(x(0)) - (b / inertia) * x(1);
    return dx;
  };
  sys.input_maps.push_back([=](const Eigen::VectorXd&) {
    Eigen::VectorXd gx(2);
    gx << 0.0, 1.0 / inertia;
    return gx;
  });
  return sys;
}

/// Zone temperature process  x+ = x + T_s/V_z · u · (T_0 − x).
inline DiscreteSystem building_zone(double v_z = 2.0, double t_0 = -1.0, double t_s = 1.0) {
  DiscreteSystem sys;
  sys.n = 1;
  sys.m = 1;
  sys.label = "building";
  sys.step = [=](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd xp(1);
    xp(0) = x(0) + t_s / v_z * u(0) * (t_0 - x(0));
    return xp;
  };
  return sys;
}

/// Sampled states with the input applied from each sample time onwards.
/// Row k of `inputs` is held on [t_k, t_{k+1}); the last row is the feedback
/// value at the final state.
struct Trajectory {
  std::vector<double> times;
  Eigen::MatrixXd states;  // one row per time
  Eigen::MatrixXd inputs;  // one row per time
  bool diverged = false;

  std::size_t size() const { return times.size(); }
  Eigen::VectorXd state(std::size_t k) const { return states.row(static_cast<Eigen::Index>(k)).transpose(); }
  Eigen::VectorXd final_state() const { return state(size() - 1); }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "t";
    for (Eigen::Index i = 0; i < states.cols(); ++i) out << ",x" << i + 1;
    for (Eigen::Index i = 0; i < inputs.cols(); ++i) out << ",u" << i + 1;
    out << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < times.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      out << times[k];
      for (Eigen::Index i = 0; i < states.cols(); ++i) out << ',' << states(r, i);
      for (Eigen::Index i = 0; i < inputs.cols(); ++i) out << ',' << inputs(r, i);
      out << '\n';
    }
  }
};

/// Accumulates rows, then packs them into a Trajectory.
class TrajectoryBuilder {
 public:
  void push(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    times_.push_back(t);
    xs_.push_back(x);
    us_.push_back(u);
  }
  Trajectory finish(bool diverged) && {
    Trajectory tr;
    tr.times = std::move(times_);
    tr.diverged = diverged;
    const auto rows = static_cast<Eigen::Index>(xs_.size());
    tr.states.resize(rows, rows ? xs_.front().size() : 0);
    tr.inputs.resize(rows, rows ? us_.front().size() : 0);
    for (Eigen::Index k = 0; k < rows; ++k) {
      tr.states.row(k) = xs_[static_cast<std::size_t>(k)].transpose();
      tr.inputs.row(k) = us_[static_cast<std::size_t>(k)].transpose();
    }
    return tr;
  }

 private:
  std::vector<double> times_;
  std::vector<Eigen::VectorXd> xs_, us_;
};

// ---------------------------------------------------------------------------
// residual injection

enum class AdversaryMode { RandomDirection, WorstAligned };

/// Residual r(z, u) with ||r|| = c_x ||z|| + c_u ||u|| exactly. Stateful (owns
/// its generator), so use one instance per trajectory.
class ResidualGenerator {
 public:
  ResidualGenerator() = default;
  ResidualGenerator(double c_x, double c_u, AdversaryMode mode, std::uint64_t seed, Eigen::MatrixXd p_inv = {},
                    int sphere_samples = 1000)
      : c_x_(c_x), c_u_(c_u), mode_(mode), rng_(seed), p_inv_(std::move(p_inv)), sphere_samples_(sphere_samples) {
    if (c_x < 0.0 || c_u < 0.0) throw std::invalid_argument("residual_adversary: bounds must be nonnegative");
  }

  double bound(const Eigen::VectorXd& z, const Eigen::VectorXd& u) const { return c_x_ * z.norm() + c_u_ * u.norm(); }

  /// `z_nominal` is the residual-free successor; worst_aligned picks the
  /// direction maximizing V(z_nominal + r) = (.)' P^-1 (.).
  Eigen::VectorXd operator()(const Eigen::VectorXd& z, const Eigen::VectorXd& u, const Eigen::VectorXd& z_nominal) {
    const double beta = bound(z, u);
    const auto N = z.size();
    if (beta == 0.0) return Eigen::VectorXd::Zero(N);
    if (mode_ == AdversaryMode::RandomDirection || p_inv_.size() == 0) return beta * random_unit(N);

    Eigen::VectorXd best = beta * random_unit(N);
    double best_v = lyap(z_nominal + best);
    auto consider = [&](const Eigen::VectorXd& dir) {
      const double nrm = dir.norm();
      if (!(nrm > 0.0)) return;
      const Eigen::VectorXd r = (beta / nrm) * dir;
      const double v = lyap(z_nominal + r);
      if (v > best_v) {
        best_v = v;
        best = r;
      }
    };
    const Eigen::VectorXd grad = p_inv_ * z_nominal;
    consider(grad);
    consider(-grad);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p_inv_);
    consider(es.eigenvectors().col(N - 1));
    consider(-es.eigenvectors().col(N - 1));
    for (int k = 0; k < sphere_samples_; ++k) consider(random_unit(N));
    return best;
  }

 private:
  double lyap(const Eigen::VectorXd& z) const { return z.dot(p_inv_ * z); }

  Eigen::VectorXd random_unit(Eigen::Index n) {
    std::normal_distribution<double> g;
    Eigen::VectorXd v(n);
    do {
      for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng_);
    } while (v.norm() == 0.0);
    return v / v.norm();
  }

  double c_x_ = 0.0;
  double c_u_ = 0.0;
  AdversaryMode mode_ = AdversaryMode::RandomDirection;
  std::mt19937_64 rng_;
  Eigen::MatrixXd p_inv_;
  int sphere_samples_ = 1000;
};

inline ResidualGenerator residual_adversary(double c_x, double c_u, AdversaryMode mode, std::uint64_t seed,
                                            const Eigen::MatrixXd& p_inv = {}) {
  return {c_x, c_u, mode, seed, p_inv};
}

}  // namespace koopsos::sim
