#pragma once

// Run configuration for the koopsos CLI. JSON, schema-checked before any
// computation; unknown keys are rejected.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "koopsos/design.hpp"
#include "koopsos/json_io.hpp"
#include "koopsos/koopman.hpp"
#include "koopsos/sim.hpp"

namespace koopsos::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LogAxis {
  double min = 1e-3;
  double max = 1.0;
  int count = 20;

  std::vector<double> values() const {
    std::vector<double> v;
    for (int k = 0; k < count; ++k)
      v.push_back(count == 1 ? min : std::exp(std::log(min) + (std::log(max) - std::log(min)) * k / (count - 1)));
    return v;
  }
};

struct BoundConfig {
  bool empirical = false;
  double c_x = 0.0;
  double c_u = 0.0;
  double safety = 1.0;
};

struct DenominatorConfig {
  std::string preset;  // "building" | "full_quadratic" | "" (explicit terms)
  nlohmann::json terms;
};

struct RoaConfig {
  int n_boundary = 4000;
  int n_containment = 4000;
  double margin = 0.05;
  int grid = 101;
};

struct VerifyConfig {
  int psd_samples = 10000;
  int dt_runs = 100;
  int dt_steps = 1000;
  int ct_runs = 100;
  double horizon = 10.0;
  double tolerance = 1e-2;
  double residual_scale = 1.0;
  Eigen::VectorXd sample_lower, sample_upper;  // PSD/decrease sample box, defaults to the region
};

struct Paths {
  std::string dataset = "dataset.csv";
  std::string surrogate = "surrogate.json";
  std::string controller = "controller.json";
};

struct RunConfig {
  std::string system;  // building | pendulum | custom
  nlohmann::json system_params = nlohmann::json::object();
  koopman::BilinearModel custom_model;
  std::string dictionary;
  bool known_model = false;
  int d = 200;
  double delta_t = 0.01;
  std::uint64_t seed = 0;
  koopman::Box region;
  BoundConfig bound;
  int alpha = 1;
  std::vector<int> alphas;
  DenominatorConfig u_d;
  design::DesignMode mode;
  design::Objective objective = design::Objective::Feasibility;
  LogAxis sweep_cx, sweep_cu;
  int sweep_repeats = 1;
  RoaConfig roa;
  VerifyConfig verify;
  Paths paths;
  int substeps = sim::kDefaultSubsteps;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

inline LogAxis parse_axis(const nlohmann::json& j, const LogAxis& fallback, const std::string& where) {
  check_keys(j, {"min", "max", "count"}, where);
  LogAxis a{get_or(j, "min", fallback.min), get_or(j, "max", fallback.max), get_or(j, "count", fallback.count)};
  if (!(a.min > 0.0) || !(a.max >= a.min)) throw ConfigError(where + ": need 0 < min <= max");
  if (a.count < 1) throw ConfigError(where + ": grid must be nonempty");
  return a;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::get_or;
  try {
    check_keys(j, {"system", "building", "pendulum", "custom", "dictionary", "model_source", "d", "delta_t", "seed",
                   "substeps", "region", "bound", "alpha", "alphas", "u_d", "mode", "rho_min", "objective", "sweep",
                   "roa", "verify", "paths"},
               "config");
    RunConfig c;
    c.system = j.at("system").get<std::string>();
    if (c.system != "building" && c.system != "pendulum" && c.system != "custom")
      throw ConfigError("system must be building, pendulum or custom");

    int n = 0;
    if (c.system == "building") {
      n = 1;
      c.system_params = get_or(j, "building", nlohmann::json::object());
      check_keys(c.system_params, {"V_z", "T_0", "T_s"}, "building");
      c.dictionary = "identity";
      c.known_model = get_or<std::string>(j, "model_source", "known") == "known";
      c.delta_t = get_or(c.system_params, "T_s", 1.0);
      c.d = 50;
      c.region = {Eigen::VectorXd::Constant(1, -5.0), Eigen::VectorXd::Constant(1, 5.0)};
      c.bound = {false, 0.1, 0.1, 1.0};
      c.u_d.preset = "building";
      c.alphas = {1, 2, 3, 4};
    } else if (c.system == "pendulum") {
      n = 2;
      c.system_params = get_or(j, "pendulum", nlohmann::json::object());
      check_keys(c.system_params, {"m", "l", "b", "g"}, "pendulum");
      c.dictionary = "pendulum";
      c.delta_t = 0.01;
      c.d = 200;
      c.region = {Eigen::Vector2d(-M_PI, -M_PI), Eigen::Vector2d(M_PI, M_PI)};
      c.bound = {false, 1e-2, 1e-3, 1.0};
      c.u_d.preset = "full_quadratic";
      c.objective = design::Objective::MaxMinEigP;
      c.alphas = {1};
    } else {
      const auto& cj = j.at("custom");
      check_keys(cj, {"A", "B0", "Btilde"}, "custom");
      c.custom_model = {io::matrix_from_json(cj.at("A")), io::matrix_from_json(cj.at("B0")), io::matrix_from_json(cj.at("Btilde"))};
      c.custom_model.validate();
      n = c.custom_model.N();
      c.dictionary = "identity";
      c.known_model = get_or<std::string>(j, "model_source", "known") == "known";
      c.delta_t = 1.0;
      c.d = 50;
      c.region = {Eigen::VectorXd::Constant(n, -1.0), Eigen::VectorXd::Constant(n, 1.0)};
      c.bound = {false, 0.01, 0.01, 1.0};
      c.u_d.preset = "full_quadratic";
      c.alphas = {1};
    }
    if (j.contains("model_source")) {
      const auto src = j.at("model_source").get<std::string>();
      if (src != "known" && src != "data") throw ConfigError("model_source must be known or data");
      if (src == "known" && c.system == "pendulum") throw ConfigError("pendulum has no known lifted model; use data");
    }

    c.dictionary = get_or(j, "dictionary", c.dictionary);
    c.d = get_or(j, "d", c.d);
    if (c.d < 1) throw ConfigError("d must be positive");
    c.delta_t = get_or(j, "delta_t", c.delta_t);
    if (!(c.delta_t > 0.0)) throw ConfigError("delta_t must be positive");
    c.seed = get_or<std::uint64_t>(j, "seed", 0);
    c.substeps = get_or(j, "substeps", c.substeps);
    if (c.substeps < 1) throw ConfigError("substeps must be >= 1");

    if (j.contains("region")) {
      check_keys(j.at("region"), {"lower", "upper"}, "region");
      c.region = {io::vector_from_json(j.at("region").at("lower")), io::vector_from_json(j.at("region").at("upper"))};
    }
    if (c.region.dim() != n || c.region.upper.size() != n) throw ConfigError("region dimension must match the state dimension");
    try {
      c.region.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("region: ") + e.what());
    }

    if (j.contains("bound")) {
      const auto& b = j.at("bound");
      check_keys(b, {"type", "c_x", "c_u", "safety"}, "bound");
      const auto type = b.at("type").get<std::string>();
      if (type == "fixed") {
        c.bound = {false, b.at("c_x").get<double>(), b.at("c_u").get<double>(), 1.0};
        if (!(c.bound.c_x > 0.0) || !(c.bound.c_u > 0.0)) throw ConfigError("bound: c_x and c_u must be positive");
      } else if (type == "empirical") {
        c.bound = {true, 0.0, 0.0, get_or(b, "safety", 1.0)};
        if (!(c.bound.safety >= 1.0)) throw ConfigError("bound: safety must be >= 1");
      } else {
        throw ConfigError("bound.type must be fixed or empirical");
      }
    }

    c.alpha = get_or(j, "alpha", 1);
    if (c.alpha < 1) throw ConfigError("alpha must be >= 1");
    if (j.contains("alphas")) c.alphas = j.at("alphas").get<std::vector<int>>();
    if (c.alphas.empty()) throw ConfigError("alphas must be nonempty");
    for (int a : c.alphas)
      if (a < 1) throw ConfigError("alphas must be >= 1");

    if (j.contains("u_d")) {
      const auto& u = j.at("u_d");
      if (u.is_string()) {
        c.u_d.preset = u.get<std::string>();
        if (c.u_d.preset != "building" && c.u_d.preset != "full_quadratic") throw ConfigError("u_d preset must be building or full_quadratic");
      } else {
        check_keys(u, {"terms"}, "u_d");
        c.u_d.preset.clear();
        c.u_d.terms = u.at("terms");
        if (!c.u_d.terms.is_array() || c.u_d.terms.empty()) throw ConfigError("u_d.terms must be a nonempty array");
      }
    }

    const auto mode = get_or<std::string>(j, "mode", "exponential");
    if (mode == "exponential") c.mode = design::DesignMode::exponential(get_or(j, "rho_min", 1e-6));
    else if (mode == "asymptotic") c.mode = design::DesignMode::asymptotic();
    else throw ConfigError("mode must be exponential or asymptotic");

    if (j.contains("objective")) {
      const auto obj = j.at("objective").get<std::string>();
      if (obj == "feasibility") c.objective = design::Objective::Feasibility;
      else if (obj == "max_min_eig_P") c.objective = design::Objective::MaxMinEigP;
      else if (obj == "max_rho") c.objective = design::Objective::MaxRho;
      else throw ConfigError("objective must be feasibility, max_min_eig_P or max_rho");
    }

    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      check_keys(s, {"c_x", "c_u", "repeats"}, "sweep");
      if (s.contains("c_x")) c.sweep_cx = detail::parse_axis(s.at("c_x"), c.sweep_cx, "sweep.c_x");
      if (s.contains("c_u")) c.sweep_cu = detail::parse_axis(s.at("c_u"), c.sweep_cu, "sweep.c_u");
      c.sweep_repeats = get_or(s, "repeats", 1);
      if (c.sweep_repeats < 1) throw ConfigError("sweep.repeats must be >= 1");
    }

    if (j.contains("roa")) {
      const auto& r = j.at("roa");
      check_keys(r, {"n_boundary", "n_containment", "margin", "grid"}, "roa");
      c.roa = {get_or(r, "n_boundary", c.roa.n_boundary), get_or(r, "n_containment", c.roa.n_containment),
               get_or(r, "margin", c.roa.margin), get_or(r, "grid", c.roa.grid)};
      if (c.roa.n_boundary < 1 || c.roa.n_containment < 1 || c.roa.grid < 2) throw ConfigError("roa: counts must be positive");
      if (!(c.roa.margin > 0.0 && c.roa.margin < 1.0)) throw ConfigError("roa.margin must lie in (0, 1)");
    }

    c.verify.sample_lower = c.region.lower;
    c.verify.sample_upper = c.region.upper;
    if (j.contains("verify")) {
      const auto& v = j.at("verify");
      check_keys(v, {"psd_samples", "dt_runs", "dt_steps", "ct_runs", "horizon", "tolerance", "residual_scale", "sample_region"},
                 "verify");
      c.verify.psd_samples = get_or(v, "psd_samples", c.verify.psd_samples);
      c.verify.dt_runs = get_or(v, "dt_runs", c.verify.dt_runs);
      c.verify.dt_steps = get_or(v, "dt_steps", c.verify.dt_steps);
      c.verify.ct_runs = get_or(v, "ct_runs", c.verify.ct_runs);
      c.verify.horizon = get_or(v, "horizon", c.verify.horizon);
      c.verify.tolerance = get_or(v, "tolerance", c.verify.tolerance);
      c.verify.residual_scale = get_or(v, "residual_scale", c.verify.residual_scale);
      if (v.contains("sample_region")) {
        check_keys(v.at("sample_region"), {"lower", "upper"}, "verify.sample_region");
        c.verify.sample_lower = io::vector_from_json(v.at("sample_region").at("lower"));
        c.verify.sample_upper = io::vector_from_json(v.at("sample_region").at("upper"));
        if (c.verify.sample_lower.size() != n || c.verify.sample_upper.size() != n)
          throw ConfigError("verify.sample_region dimension must match the state dimension");
      }
      if (c.verify.psd_samples < 0 || c.verify.dt_runs < 0 || c.verify.dt_steps < 0 || c.verify.ct_runs < 0)
        throw ConfigError("verify: counts must be nonnegative");
    }

    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      check_keys(p, {"dataset", "surrogate", "controller"}, "paths");
      c.paths.dataset = get_or(p, "dataset", c.paths.dataset);
      c.paths.surrogate = get_or(p, "surrogate", c.paths.surrogate);
      c.paths.controller = get_or(p, "controller", c.paths.controller);
    }

    if (c.dictionary != "identity" && c.dictionary != "pendulum") throw ConfigError("dictionary must be identity or pendulum");
    if (c.dictionary == "pendulum" && n != 2) throw ConfigError("pendulum dictionary needs a two-state system");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

}  // namespace koopsos::cli
