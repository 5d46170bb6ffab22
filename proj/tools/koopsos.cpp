// koopsos: data collection, controller synthesis, feasibility sweeps, region
// of attraction estimation and closed-loop verification from a JSON config.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "config.hpp"
#include "koopsos/closed_loop.hpp"
#include "koopsos/design.hpp"
#include "koopsos/errors.hpp"
#include "koopsos/json_io.hpp"
#include "koopsos/koopman.hpp"
#include "koopsos/parallel.hpp"
#include "koopsos/sim.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace koopsos;

namespace {

enum Exit : int { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kInfeasible = 4, kDegenerate = 5, kVerify = 6 };

// Below this Lyapunov value a state is at the origin to double precision and
// "strictly decreasing" is no longer meaningful.
constexpr double kLyapunovFloor = 1e-250;
constexpr std::size_t kMaxWitnesses = 20;

struct Context {
  cli::RunConfig cfg;
  fs::path out;
  int jobs = 1;
  double tol = 1e-8;
};

double solver_tolerance() {
  const char* env = std::getenv("KOOPSOS_SOLVER_TOL");
  if (!env || !*env) return 1e-8;
  char* end = nullptr;
  const double tol = std::strtod(env, &end);
  if (end == env || *end != '\0' || !(tol > 0.0) || !(tol < 1.0))
    throw cli::ConfigError(std::string("KOOPSOS_SOLVER_TOL must be a number in (0, 1), got '") + env + "'");
  return tol;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setw(2) << j << '\n';
}

json vec(const Eigen::VectorXd& v) { return io::vector_to_json(v); }

// ---------------------------------------------------------------------------
// systems, data, surrogate, bound, denominator

sim::OdeSystem pendulum_system(const cli::RunConfig& cfg) {
  const auto& p = cfg.system_params;
  return sim::pendulum(p.value("m", 1.0), p.value("l", 1.0), p.value("b", 0.5), p.value("g", 9.81));
}

sim::DiscreteSystem building_system(const cli::RunConfig& cfg) {
  const auto& p = cfg.system_params;
  return sim::building_zone(p.value("V_z", 2.0), p.value("T_0", -1.0), p.value("T_s", 1.0));
}

int state_dim(const cli::RunConfig& cfg) {
  if (cfg.system == "pendulum") return 2;
  if (cfg.system == "building") return 1;
  return cfg.custom_model.N();
}

koopman::LiftedDataset collect_data(const Context& ctx, std::uint64_t seed) {
  const auto& cfg = ctx.cfg;
  if (cfg.system == "pendulum")
    return koopman::collect(pendulum_system(cfg), cfg.region, cfg.d, cfg.delta_t, seed, ctx.jobs, cfg.substeps);
  if (cfg.system == "building") return koopman::collect(building_system(cfg), cfg.region, cfg.d, cfg.delta_t, seed, ctx.jobs);
  throw cli::ConfigError("a custom system has no plant to sample; use model_source \"known\"");
}

koopman::LiftedDataset load_or_collect(const Context& ctx) {
  const auto path = ctx.out / ctx.cfg.paths.dataset;
  if (!fs::exists(path)) {
    auto data = collect_data(ctx, ctx.cfg.seed);
    koopman::write_dataset(data, path);
    std::cout << "collected " << data.d() << " pairs per block, " << data.rejected << " rejected -> " << path.string() << '\n';
    return data;
  }
  auto data = koopman::read_dataset(path);
  const int n = state_dim(ctx.cfg);
  const int m = ctx.cfg.system == "custom" ? ctx.cfg.custom_model.m() : 1;
  if (data.n() != n || data.m() != m) throw DataError("dataset " + path.string() + " does not match the configured system dimensions");
  if (std::abs(data.delta_t - ctx.cfg.delta_t) > 1e-12 * std::max(1.0, ctx.cfg.delta_t))
    throw DataError("dataset " + path.string() + " was sampled with a different delta_t");
  return data;
}

koopman::Surrogate resolve_surrogate(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  koopman::Surrogate s;
  if (cfg.known_model) {
    if (cfg.system == "building") {
      const auto& p = cfg.system_params;
      s.model = koopman::building_model(p.value("V_z", 2.0), p.value("T_0", -1.0), p.value("T_s", 1.0));
    } else {
      s.model = cfg.custom_model;
    }
    s.dictionary = koopman::Dictionary::identity(s.model.N());
    s.delta_t = cfg.delta_t;
    if (cfg.dictionary != "identity") throw cli::ConfigError("a known model is expressed in the identity dictionary");
  } else {
    const auto data = load_or_collect(ctx);
    s = koopman::edmd_fit(data, koopman::Dictionary::from_label(cfg.dictionary, data.n()));
    if (s.diagnostics.rank_deficient) std::cerr << "warning: EDMD regressors are rank deficient\n";
  }
  write_json(ctx.out / cfg.paths.surrogate, koopman::to_json(s));
  return s;
}

koopman::ResidualBound resolve_bound(const Context& ctx, const koopman::Surrogate& s) {
  const auto& cfg = ctx.cfg;
  if (!cfg.bound.empirical) return koopman::ResidualBound::fixed(cfg.bound.c_x, cfg.bound.c_u);
  // validation data drawn with a different seed, hence disjoint from training
  const auto validation = collect_data(ctx, cfg.seed + 1);
  const auto bound = koopman::estimate_residual_bound(s, validation, cfg.bound.safety);
  if (bound.degenerate)
    throw SpecError("empirical residual bound is zero (the surrogate is exact); supply a fixed bound");
  return bound;
}

design::DenominatorSpec resolve_denominator(const cli::RunConfig& cfg, int alpha, int N) {
  if (cfg.u_d.preset == "building") {
    if (N != 1) throw cli::ConfigError("the building denominator preset needs a one-dimensional lifted state");
    return design::DenominatorSpec::building(alpha);
  }
  if (cfg.u_d.preset == "full_quadratic") {
    if (alpha != 1) throw cli::ConfigError("the full_quadratic denominator preset has degree 2, so alpha must be 1");
    return design::DenominatorSpec::full_quadratic(N);
  }
  try {
    return design::DenominatorSpec::checked(design::polynomial_from_json(cfg.u_d.terms, N), alpha);
  } catch (const json::exception& e) {
    throw cli::ConfigError(std::string("u_d.terms: ") + e.what());
  }
}

design::SynthesisResult run_synthesis(const cli::RunConfig& cfg, const koopman::Surrogate& s,
                                      const koopman::ResidualBound& bound, int alpha, design::Objective objective,
                                      double tol) {
  const auto u_d = resolve_denominator(cfg, alpha, s.N());
  const auto d = design::build_design(s.model, bound, u_d, alpha, cfg.mode);
  auto result = design::synthesize(d, objective, s.dictionary, tol);
  if (result.controller) result.controller->delta_t = s.delta_t;
  return result;
}

json certificate_json(const design::CertificateReport& r) {
  json j{{"psd_checks", r.psd_checks},
         {"psd_violations", r.psd_violations},
         {"worst_min_eigenvalue", r.psd_checks ? json(r.worst_min_eigenvalue) : json(nullptr)},
         {"decrease_checks", r.decrease_checks},
         {"decrease_violations", r.decrease_violations},
         {"worst_decrease_slack", r.decrease_checks ? json(r.worst_decrease_slack) : json(nullptr)},
         {"epsilon", r.epsilon},
         {"ok", r.ok()}};
  if (r.psd_witness) j["psd_witness"] = vec(*r.psd_witness);
  if (r.decrease_witness) j["decrease_witness"] = vec(*r.decrease_witness);
  return j;
}

std::string provenance(const koopman::ResidualBound& b) {
  return b.provenance == koopman::ResidualBound::Provenance::Empirical ? "empirical" : "user_supplied";
}

design::RationalController load_controller(const Context& ctx) {
  const auto path = ctx.out / ctx.cfg.paths.controller;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open controller " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("controller " + path.string() + " is not valid JSON: " + e.what());
  }
  auto ctrl = design::controller_from_json(j);
  if (ctrl.dictionary.label() != ctx.cfg.dictionary || ctrl.dictionary.n() != state_dim(ctx.cfg))
    throw cli::ConfigError("controller dictionary '" + ctrl.dictionary.label() + "' (n = " + std::to_string(ctrl.dictionary.n()) +
                           ") does not match the configured dictionary '" + ctx.cfg.dictionary + "'");
  return ctrl;
}

// ---------------------------------------------------------------------------
// commands

int cmd_collect(const Context& ctx) {
  const auto data = collect_data(ctx, ctx.cfg.seed);
  const auto path = ctx.out / ctx.cfg.paths.dataset;
  koopman::write_dataset(data, path);
  std::cout << "d = " << data.d() << " pairs per block, " << data.blocks.size() << " blocks, " << data.rejected
            << " rejected\nwrote " << path.string() << " and " << koopman::sidecar_path(path).string() << '\n';
  return kOk;
}

int cmd_design(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto s = resolve_surrogate(ctx);
  const auto bound = resolve_bound(ctx, s);
  const auto result = run_synthesis(cfg, s, bound, cfg.alpha, cfg.objective, ctx.tol);

  json report{{"status", design::to_string(result.status)},
              {"message", result.message},
              {"alpha", cfg.alpha},
              {"N", s.N()},
              {"m", s.m()},
              {"bound", {{"c_x", bound.c_x}, {"c_u", bound.c_u}, {"provenance", provenance(bound)}}},
              {"iterations", result.report.iterations},
              {"solve_time_s", result.solve_time}};
  if (std::isfinite(result.objective)) report["objective"] = result.objective;
  std::cout << "synthesis: " << design::to_string(result.status) << " (" << result.message << "), " << std::fixed
            << std::setprecision(3) << result.solve_time << " s\n";
  std::cout.unsetf(std::ios::fixed);

  if (!result.feasible()) {
    write_json(ctx.out / "design_report.json", report);
    std::cerr << "no certified controller; change the bound, alpha or denominator and retry\n";
    return kInfeasible;
  }

  const auto& ctrl = *result.controller;
  design::CertificateOptions opt;
  opt.n_samples = cfg.verify.psd_samples;
  opt.seed = cfg.seed;
  const auto cert = design::certificate_check(ctrl, {cfg.verify.sample_lower, cfg.verify.sample_upper}, opt);
  report["rho"] = ctrl.rho;
  report["certificate"] = certificate_json(cert);
  write_json(ctx.out / cfg.paths.controller, design::to_json(ctrl));
  write_json(ctx.out / "design_report.json", report);
  std::cout << "certificate check: " << cert.psd_violations << "/" << cert.psd_checks << " PSD violations, "
            << cert.decrease_violations << "/" << cert.decrease_checks << " decrease violations\n"
            << "wrote " << (ctx.out / cfg.paths.controller).string() << '\n';
  return kOk;
}

struct SweepRecord {
  int alpha = 1;
  double c_x = 0.0;
  double c_u = 0.0;
  std::string status = "unknown";
  double solve_time = 0.0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  std::string message;
};

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

int cmd_sweep(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto s = resolve_surrogate(ctx);
  const auto cxs = cfg.sweep_cx.values();
  const auto cus = cfg.sweep_cu.values();
  std::vector<SweepRecord> records;
  for (int a : cfg.alphas)
    for (double cx : cxs)
      for (double cu : cus) records.push_back(SweepRecord{a, cx, cu, "unknown", 0.0, std::numeric_limits<double>::quiet_NaN(), {}});

  std::mutex log_mutex;
  std::size_t done = 0;
  parallel_for(records.size(), ctx.jobs, [&](std::size_t i) {
    auto& r = records[i];
    std::vector<double> times;
    for (int rep = 0; rep < cfg.sweep_repeats; ++rep) {
      try {
        const auto res = run_synthesis(cfg, s, koopman::ResidualBound::fixed(r.c_x, r.c_u), r.alpha, design::Objective::Feasibility,
                                       ctx.tol);
        times.push_back(res.solve_time);
        if (rep == 0) {
          r.status = design::to_string(res.status);
          r.message = res.message;
          if (std::isfinite(res.objective)) r.objective = res.objective;
        }
      } catch (const std::exception& e) {
        // partial failures are recorded, the sweep continues
        r.status = "unknown";
        r.message = e.what();
        break;
      }
    }
    r.solve_time = median(times);
    std::lock_guard<std::mutex> lock(log_mutex);
    ++done;
    if (done % 50 == 0 || done == records.size()) std::cerr << "sweep: " << done << "/" << records.size() << '\n';
  });

  std::sort(records.begin(), records.end(), [](const SweepRecord& a, const SweepRecord& b) {
    return std::tie(a.alpha, a.c_x, a.c_u) < std::tie(b.alpha, b.c_x, b.c_u);
  });
  {
    std::ofstream csv(ctx.out / "sweep.csv");
    if (!csv) throw DataError("cannot write sweep.csv");
    csv << "alpha,c_x,c_u,status,solve_time_s,objective\n" << std::setprecision(17);
    for (const auto& r : records) {
      csv << r.alpha << ',' << r.c_x << ',' << r.c_u << ',' << r.status << ',' << r.solve_time << ',';
      if (std::isfinite(r.objective)) csv << r.objective;
      csv << '\n';
    }
  }

  json summary = json::array();
  std::cout << "alpha  feasible  infeasible  unknown  median_time_s\n";
  for (int a : cfg.alphas) {
    std::map<std::string, int> counts{{"feasible", 0}, {"infeasible", 0}, {"unknown", 0}};
    std::vector<double> times;
    json boundary = json::array();
    for (double cx : cxs) {
      std::optional<double> best;
      for (const auto& r : records)
        if (r.alpha == a && r.c_x == cx && r.status == "feasible") best = std::max(best.value_or(0.0), r.c_u);
      boundary.push_back({{"c_x", cx}, {"max_feasible_c_u", best ? json(*best) : json(nullptr)}});
    }
    for (const auto& r : records) {
      if (r.alpha != a) continue;
      ++counts[r.status];
      if (std::isfinite(r.solve_time)) times.push_back(r.solve_time);
    }
    summary.push_back({{"alpha", a},
                       {"feasible", counts["feasible"]},
                       {"infeasible", counts["infeasible"]},
                       {"unknown", counts["unknown"]},
                       {"median_solve_time_s", median(times)},
                       {"boundary", boundary}});
    std::cout << std::setw(5) << a << std::setw(10) << counts["feasible"] << std::setw(12) << counts["infeasible"]
              << std::setw(9) << counts["unknown"] << "  " << median(times) << '\n';
  }
  write_json(ctx.out / "sweep_summary.json", summary);
  std::cout << "wrote " << (ctx.out / "sweep.csv").string() << '\n';
  return kOk;
}

/// Points of x-space labelled by V and membership in Omega: a regular grid
/// for n <= 2, seeded uniform samples otherwise.
std::vector<Eigen::VectorXd> roa_points(const koopman::Box& box, int grid, std::uint64_t seed) {
  std::vector<Eigen::VectorXd> pts;
  const int n = box.dim();
  auto coord = [&](int i, int k) { return box.lower(i) + (box.upper(i) - box.lower(i)) * k / (grid - 1); };
  if (n == 1) {
    for (int k = 0; k < grid; ++k) pts.push_back(Eigen::VectorXd::Constant(1, coord(0, k)));
  } else if (n == 2) {
    for (int a = 0; a < grid; ++a)
      for (int b = 0; b < grid; ++b) pts.push_back(Eigen::Vector2d(coord(0, a), coord(1, b)));
  } else {
    std::mt19937_64 rng(seed);
    for (int k = 0; k < grid * grid; ++k) pts.push_back(box.sample(rng));
  }
  return pts;
}

int cmd_roa(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ctrl = load_controller(ctx);
  const auto est = design::estimate_roa(ctrl, cfg.region, cfg.roa.n_boundary, cfg.roa.n_containment, cfg.seed, cfg.roa.margin);
  constexpr int kVolumeSamples = 200000;
  const double omega_volume =
      design::monte_carlo_volume(cfg.region, kVolumeSamples, cfg.seed, [&](const Eigen::VectorXd& x) { return ctrl.lyapunov_state(x) <= est.c; });
  const double reference_volume = design::monte_carlo_volume(
      cfg.region, kVolumeSamples, cfg.seed, [&](const Eigen::VectorXd& x) { return ctrl.dictionary.lift(x).squaredNorm() <= 0.01; });

  json j{{"c", est.c},
         {"P", io::matrix_to_json(est.P)},
         {"boundary_margin", est.boundary_margin},
         {"containment_checked", est.containment_checked},
         {"rounds", est.rounds},
         {"region", {{"lower", vec(cfg.region.lower)}, {"upper", vec(cfg.region.upper)}}},
         {"volume_samples", kVolumeSamples},
         {"omega_volume", omega_volume},
         {"reference_volume", reference_volume},
         {"reference_set", "|Phi(x)|^2 <= 0.01"}};
  j["volume_ratio"] = reference_volume > 0.0 ? json(omega_volume / reference_volume) : json(nullptr);
  write_json(ctx.out / "roa.json", j);

  std::ofstream csv(ctx.out / "roa_grid.csv");
  if (!csv) throw DataError("cannot write roa_grid.csv");
  for (int i = 0; i < cfg.region.dim(); ++i) csv << 'x' << i + 1 << ',';
  csv << "V,inside\n" << std::setprecision(17);
  for (const auto& x : roa_points(cfg.region, cfg.roa.grid, cfg.seed)) {
    const double v = ctrl.lyapunov_state(x);
    for (Eigen::Index i = 0; i < x.size(); ++i) csv << x(i) << ',';
    csv << v << ',' << (v <= est.c ? 1 : 0) << '\n';
  }
  std::cout << "c = " << est.c << ", Omega volume " << omega_volume << ", reference volume " << reference_volume << '\n'
            << "wrote " << (ctx.out / "roa.json").string() << " and " << (ctx.out / "roa_grid.csv").string() << '\n';
  return kOk;
}

struct RunOutcome {
  bool ok = true;
  Eigen::VectorXd x0;
  std::string reason;
};

int cmd_verify(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ctrl = load_controller(ctx);
  if (!ctrl.model) throw DataError("controller file carries no surrogate model; cannot verify the lifted decrease");
  const auto& model = *ctrl.model;
  const koopman::Box sample_box{cfg.verify.sample_lower, cfg.verify.sample_upper};
  const double scale = cfg.verify.residual_scale;

  design::CertificateOptions opt;
  opt.n_samples = cfg.verify.psd_samples;
  opt.seed = cfg.seed;
  opt.residual_scale = scale;
  opt.check_psd = ctrl.tau.num_vars() == ctrl.N();
  const auto cert = design::certificate_check(ctrl, sample_box, opt);

  // adversarial discrete-time runs in lifted space
  std::vector<RunOutcome> dt(static_cast<std::size_t>(cfg.verify.dt_runs));
  parallel_for(dt.size(), ctx.jobs, [&](std::size_t k) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 1u,
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    auto& out = dt[k];
    out.x0 = sample_box.sample(rng);
    sim::ResidualGenerator adversary(ctrl.bound.c_x * scale, ctrl.bound.c_u * scale, sim::AdversaryMode::WorstAligned, rng(),
                                     ctrl.P_inv);
    const auto tr = sim::closed_loop_dt(model, ctrl, ctrl.dictionary.lift(out.x0), cfg.verify.dt_steps, &adversary);
    if (tr.diverged) {
      out = {false, out.x0, "diverged"};
      return;
    }
    for (std::size_t i = 0; i + 1 < tr.size(); ++i) {
      const double v0 = ctrl.lyapunov(tr.state(i));
      if (v0 <= kLyapunovFloor) break;
      if (!(ctrl.lyapunov(tr.state(i + 1)) < v0)) {
        out = {false, out.x0, "V not decreasing at step " + std::to_string(i)};
        return;
      }
    }
  });

  // sampled-data runs of the true plant from initial states in Omega
  std::vector<RunOutcome> ct;
  std::optional<double> roa_c;
  std::string ct_note;
  if (cfg.verify.ct_runs > 0 && cfg.system != "custom") {
    const auto est = design::estimate_roa(ctrl, cfg.region, cfg.roa.n_boundary, cfg.roa.n_containment, cfg.seed, cfg.roa.margin);
    roa_c = est.c;
    ct.resize(static_cast<std::size_t>(cfg.verify.ct_runs));
    const double dt_s = ctrl.delta_t > 0.0 ? ctrl.delta_t : cfg.delta_t;
    std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
    const long long max_draws = 100000LL * cfg.verify.ct_runs;
    long long draws = 0;
    for (auto& run : ct) {
      do {
        if (++draws > max_draws) throw DegenerateRoAError("verify: Omega is too small to sample initial states");
        run.x0 = cfg.region.sample(rng);
      } while (ctrl.lyapunov_state(run.x0) > est.c);
    }
    const auto pend = cfg.system == "pendulum" ? std::optional(pendulum_system(cfg)) : std::nullopt;
    const auto bldg = building_system(cfg);
    parallel_for(ct.size(), ctx.jobs, [&](std::size_t k) {
      auto& run = ct[k];
      Eigen::VectorXd xf;
      bool diverged = false;
      if (pend) {
        const auto tr = sim::closed_loop_ct(*pend, ctrl, run.x0, dt_s, cfg.verify.horizon, cfg.substeps);
        diverged = tr.diverged;
        xf = tr.final_state();
      } else {
        const long steps = std::lround(cfg.verify.horizon / dt_s);
        xf = run.x0;
        for (long i = 0; i < steps && !diverged; ++i) {
          xf = bldg.step(xf, design::eval_controller(ctrl, xf));
          diverged = !xf.allFinite() || xf.norm() > sim::kDivergenceThreshold;
        }
      }
      if (diverged) run = {false, run.x0, "diverged"};
      else if (!(xf.norm() < cfg.verify.tolerance))
        run = {false, run.x0, "|x(T)| = " + std::to_string(xf.norm())};
    });
  } else if (cfg.system == "custom") {
    ct_note = "no plant for a custom system; sampled-data runs skipped";
  }

  auto summarize = [](const std::vector<RunOutcome>& runs) {
    json witnesses = json::array();
    int failures = 0;
    for (const auto& r : runs) {
      if (r.ok) continue;
      ++failures;
      if (witnesses.size() < kMaxWitnesses) witnesses.push_back({{"x0", vec(r.x0)}, {"reason", r.reason}});
    }
    return json{{"runs", runs.size()}, {"failures", failures}, {"witnesses", witnesses}};
  };
  json report{{"certificate", certificate_json(cert)}, {"residual_scale", scale}};
  report["discrete_time"] = summarize(dt);
  report["discrete_time"]["steps"] = cfg.verify.dt_steps;
  report["sampled_data"] = summarize(ct);
  report["sampled_data"]["horizon"] = cfg.verify.horizon;
  report["sampled_data"]["tolerance"] = cfg.verify.tolerance;
  if (roa_c) report["sampled_data"]["roa_c"] = *roa_c;
  if (!ct_note.empty()) report["sampled_data"]["note"] = ct_note;
  const int dt_fail = report["discrete_time"]["failures"].get<int>();
  const int ct_fail = report["sampled_data"]["failures"].get<int>();
  const bool pass = cert.ok() && dt_fail == 0 && ct_fail == 0;
  report["pass"] = pass;
  write_json(ctx.out / "verify.json", report);

  std::cout << "PSD checks: " << cert.psd_checks - cert.psd_violations << "/" << cert.psd_checks << " pass\n"
            << "decrease checks: " << cert.decrease_checks - cert.decrease_violations << "/" << cert.decrease_checks << " pass\n"
            << "discrete-time runs: " << dt.size() - static_cast<std::size_t>(dt_fail) << "/" << dt.size() << " pass\n"
            << "sampled-data runs: " << ct.size() - static_cast<std::size_t>(ct_fail) << "/" << ct.size() << " pass\n";
  if (pass) return kOk;
  std::cerr << "verification failed; witness initial states:\n";
  if (cert.psd_witness) std::cerr << "  psd: " << vec(*cert.psd_witness).dump() << '\n';
  if (cert.decrease_witness) std::cerr << "  decrease: " << vec(*cert.decrease_witness).dump() << '\n';
  for (const char* key : {"discrete_time", "sampled_data"})
    for (const auto& w : report[key]["witnesses"]) std::cerr << "  " << key << ": " << w["x0"].dump() << " (" << w["reason"].get<std::string>() << ")\n";
  return kVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified rational controllers from Koopman surrogates via matrix SOS programming"};
  app.require_subcommand(1);
  std::string config_path, out_dir = ".";
  std::optional<std::uint64_t> seed;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  const std::vector<std::pair<std::string, std::string>> commands{
      {"collect", "sample the plant and write a dataset"},
      {"design", "fit the surrogate, synthesize and write a controller"},
      {"sweep", "feasibility over a (c_x, c_u, alpha) grid"},
      {"roa", "estimate the certified region of attraction"},
      {"verify", "pointwise certificate checks and closed-loop runs"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Context ctx;
    ctx.cfg = cli::load_config(config_path);
    if (seed) ctx.cfg.seed = *seed;
    ctx.jobs = jobs;
    ctx.tol = solver_tolerance();
    ctx.out = out_dir;
    fs::create_directories(ctx.out);

    if (command == "collect") return cmd_collect(ctx);
    if (command == "design") return cmd_design(ctx);
    if (command == "sweep") return cmd_sweep(ctx);
    if (command == "roa") return cmd_roa(ctx);
    return cmd_verify(ctx);
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const SpecError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DegreeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const IntegrationError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DegenerateRoAError& e) {
    std::cerr << "degenerate region of attraction: " << e.what() << '\n';
    return kDegenerate;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}
