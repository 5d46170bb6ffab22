#pragma once

// Closed-loop simulation of rational controllers: sampled-data (zero-order
// hold) on the continuous plant, and the discrete surrogate loop with
// residual injection.

#include <cmath>
#include <optional>

#include <Eigen/Dense>

#include "koopsos/design.hpp"
#include "koopsos/errors.hpp"
#include "koopsos/koopman.hpp"
#include "koopsos/sim.hpp"

namespace koopsos::sim {

/// u(t) = mu(x(k dt)) on [k dt, (k+1) dt), integrated with RK4 per interval.
inline Trajectory closed_loop_ct(const OdeSystem& sys, const design::RationalController& ctrl, const Eigen::VectorXd& x0,
                                 double delta_t, double horizon, int substeps = kDefaultSubsteps) {
  if (!(delta_t > 0.0)) throw std::invalid_argument("closed_loop_ct: delta_t must be positive");
  const double ratio = horizon / delta_t;
  const long steps = std::lround(ratio);
  if (steps < 0 || std::abs(ratio - static_cast<double>(steps)) > 1e-9 * std::max(1.0, ratio))
    throw std::invalid_argument("closed_loop_ct: horizon must be a multiple of delta_t");
  if (x0.size() != sys.n || ctrl.m() != sys.m) throw DimensionError("closed_loop_ct: controller and system dimensions differ");

  TrajectoryBuilder tb;
  Eigen::VectorXd x = x0;
  for (long k = 0; k < steps; ++k) {
    const Eigen::VectorXd u = design::eval_controller(ctrl, x);
    tb.push(k * delta_t, x, u);
    try {
      x = rk4_flow(sys, x, u, delta_t, substeps);
    } catch (const IntegrationError&) {
      return std::move(tb).finish(true);
    }
    if (x.norm() > kDivergenceThreshold) {
      tb.push((k + 1) * delta_t, x, Eigen::VectorXd::Zero(sys.m));
      return std::move(tb).finish(true);
    }
  }
  tb.push(steps * delta_t, x, design::eval_controller(ctrl, x));
  return std::move(tb).finish(false);
}

/// z+ = A z + B0 mu(z) + Bt (mu(z) ⊗ z) + r(z, mu(z)) in lifted coordinates;
/// time is the step index. `residual` may be null for r = 0.
inline Trajectory closed_loop_dt(const koopman::BilinearModel& model, const design::RationalController& ctrl,
                                 const Eigen::VectorXd& z0, int steps, ResidualGenerator* residual = nullptr) {
  if (z0.size() != model.N() || ctrl.N() != model.N() || ctrl.m() != model.m())
    throw DimensionError("closed_loop_dt: model, controller and state dimensions differ");
  if (steps < 0) throw std::invalid_argument("closed_loop_dt: negative step count");
  TrajectoryBuilder tb;
  Eigen::VectorXd z = z0;
  for (int k = 0; k < steps; ++k) {
    const Eigen::VectorXd u = ctrl.eval_lifted(z);
    tb.push(k, z, u);
    Eigen::VectorXd next = model.step(z, u);
    if (residual) next += (*residual)(z, u, next);
    z = next;
    if (!z.allFinite() || z.norm() > kDivergenceThreshold) {
      tb.push(k + 1, z, Eigen::VectorXd::Zero(model.m()));
      return std::move(tb).finish(true);
    }
  }
  tb.push(steps, z, ctrl.eval_lifted(z));
  return std::move(tb).finish(false);
}

}  // namespace koopsos::sim
