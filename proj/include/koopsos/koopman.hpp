#pragma once

// Dictionary lifting, constant-input data collection, least-squares
// identification of the lifted bilinear surrogate
//
//   z+ = A z + B0 u + Btilde (u ⊗ z),   z = Phi(x),
//
// and empirical proportional residual bounds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "koopsos/errors.hpp"
#include "koopsos/json_io.hpp"
#include "koopsos/parallel.hpp"
#include "koopsos/sdp.hpp"
#include "koopsos/sim.hpp"

namespace koopsos::koopman {

/// Axis-aligned box.
struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int dim() const { return static_cast<int>(lower.size()); }
  bool contains(const Eigen::VectorXd& x) const {
    return ((x.array() >= lower.array()) && (x.array() <= upper.array())).all();
  }
  bool contains_origin_strictly() const { return (lower.array() < 0.0).all() && (upper.array() > 0.0).all(); }
  double volume() const { return (upper - lower).prod(); }
  Box scaled(double s) const { return {lower * s, upper * s}; }

  template <typename Rng>
  Eigen::VectorXd sample(Rng& rng) const {
    Eigen::VectorXd x(dim());
    for (int i = 0; i < dim(); ++i) x(i) = std::uniform_real_distribution<double>(lower(i), upper(i))(rng);
    return x;
  }

  void validate() const {
    if (lower.size() != upper.size() || lower.size() == 0) throw DimensionError("Box: bound sizes differ or are empty");
    if (!(lower.array() < upper.array()).all()) throw std::invalid_argument("Box: lower must be below upper");
  }
};

/// Phi(x) = [x; phi_{n+1}(x); ...; phi_N(x)] with Phi(0) = 0.
class Dictionary {
 public:
  using Observable = std::function<double(const Eigen::VectorXd&)>;

  Dictionary() = default;
  Dictionary(int n, std::vector<Observable> extra, std::vector<std::string> extra_labels, std::string label)
      : n_(n), extra_(std::move(extra)), label_(std::move(label)) {
    if (n < 1) throw DimensionError("Dictionary: state dimension must be positive");
    if (extra_labels.size() != extra_.size()) throw DimensionError("Dictionary: one label per observable");
    for (int i = 0; i < n; ++i) labels_.push_back("x" + std::to_string(i + 1));
    labels_.insert(labels_.end(), extra_labels.begin(), extra_labels.end());
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < extra_.size(); ++k)
      if (std::abs(extra_[k](zero)) > 1e-12) throw SpecError("Dictionary: observable " + labels_[n + k] + " is nonzero at the origin");
  }

  static Dictionary identity(int n) { return {n, {}, {}, "identity"}; }

  /// [x1, x2, sin x1].
  static Dictionary pendulum() {
    return {2, {[](const Eigen::VectorXd& x) { return std::sin(x(0)); }}, {"sin(x1)"}, "pendulum"};
  }

  static Dictionary from_label(const std::string& label, int n) {
    if (label == "identity") return identity(n);
    if (label == "pendulum") {
      if (n != 2) throw DimensionError("pendulum dictionary needs n = 2");
      return pendulum();
    }
    throw SpecError("unknown dictionary label '" + label + "'");
  }

  int n() const { return n_; }
  int N() const { return n_ + static_cast<int>(extra_.size()); }
  const std::string& label() const { return label_; }
  const std::vector<std::string>& labels() const { return labels_; }

  Eigen::VectorXd lift(const Eigen::VectorXd& x) const {
    if (x.size() != n_) throw DimensionError("lift: expected state of length " + std::to_string(n_));
    Eigen::VectorXd z(N());
    z.head(n_) = x;
    for (std::size_t k = 0; k < extra_.size(); ++k) z(n_ + static_cast<Eigen::Index>(k)) = extra_[k](x);
    return z;
  }

  /// Columns lifted individually.
  Eigen::MatrixXd lift_columns(const Eigen::MatrixXd& xs) const {
    Eigen::MatrixXd out(N(), xs.cols());
    for (Eigen::Index j = 0; j < xs.cols(); ++j) out.col(j) = lift(xs.col(j));
    return out;
  }

 private:
  int n_ = 0;
  std::vector<Observable> extra_;
  std::vector<std::string> labels_;
  std::string label_;
};

/// One constant-input experiment block: columns of X map to columns of Xp.
struct DataBlock {
  Eigen::VectorXd input;
  Eigen::MatrixXd X;   // n × d
  Eigen::MatrixXd Xp;  // n × d
};

struct LiftedDataset {
  double delta_t = 0.0;
  Box region;
  std::uint64_t seed = 0;
  std::vector<DataBlock> blocks;  // block 0 has input 0, block i has input e_i
  int rejected = 0;

  int n() const { return blocks.empty() ? 0 : static_cast<int>(blocks.front().X.rows()); }
  int m() const { return static_cast<int>(blocks.size()) - 1; }
  int d() const { return blocks.empty() ? 0 : static_cast<int>(blocks.front().X.cols()); }
};

using Flow = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

/// Inputs {0, e_1, ..., e_m}.
inline std::vector<Eigen::VectorXd> constant_inputs(int m) {
  std::vector<Eigen::VectorXd> us{Eigen::VectorXd::Zero(m)};
  for (int i = 0; i < m; ++i) us.push_back(Eigen::VectorXd::Unit(m, i));
  return us;
}

/// Draws d states uniformly from `region` per constant input and maps each
/// through `flow`. Every sample has its own generator seeded from
/// (seed, block, j), so the result does not depend on `jobs`. Samples whose
/// flow fails or is non-finite are redrawn.
inline LiftedDataset collect(const Flow& flow, int n, int m, const Box& region, int d, double delta_t,
                             std::uint64_t seed, int jobs = 1) {
  region.validate();
  if (region.dim() != n) throw DimensionError("collect: region dimension differs from state dimension");
  if (d < 1) throw DataError("collect: d must be positive");
  if (!(delta_t > 0.0)) throw DataError("collect: delta_t must be positive");
  LiftedDataset data;
  data.delta_t = delta_t;
  data.region = region;
  data.seed = seed;
  const auto inputs = constant_inputs(m);
  std::vector<int> rejections(inputs.size() * static_cast<std::size_t>(d), 0);
  for (const auto& u : inputs) data.blocks.push_back({u, Eigen::MatrixXd(n, d), Eigen::MatrixXd(n, d)});

  const int max_rejections = 10 * d;
  parallel_for(rejections.size(), jobs, [&](std::size_t idx) {
    const std::size_t b = idx / static_cast<std::size_t>(d);
    const auto j = static_cast<Eigen::Index>(idx % static_cast<std::size_t>(d));
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(j)};
    std::mt19937_64 rng(seq);
    auto& blk = data.blocks[b];
    for (;;) {
      const Eigen::VectorXd x = region.sample(rng);
      try {
        const Eigen::VectorXd xp = flow(x, blk.input);
        if (xp.allFinite()) {
          blk.X.col(j) = x;
          blk.Xp.col(j) = xp;
          return;
        }
      } catch (const IntegrationError&) {
      }
      if (++rejections[idx] > max_rejections) throw DataError("collect: too many rejected samples");
    }
  });
  int total = 0;
  for (int r : rejections) total += r;
  if (total > max_rejections) throw DataError("collect: too many rejected samples");
  data.rejected = total;
  return data;
}

inline LiftedDataset collect(const sim::OdeSystem& sys, const Box& region, int d, double delta_t, std::uint64_t seed,
                             int jobs = 1, int substeps = sim::kDefaultSubsteps) {
  return collect([&](const Eigen::VectorXd& x, const Eigen::VectorXd& u) { return sim::rk4_flow(sys, x, u, delta_t, substeps); },
                 sys.n, sys.m, region, d, delta_t, seed, jobs);
}

inline LiftedDataset collect(const sim::DiscreteSystem& sys, const Box& region, int d, double delta_t,
                             std::uint64_t seed, int jobs = 1) {
  return collect(sys.step, sys.n, sys.m, region, d, delta_t, seed, jobs);
}

/// z+ = A z + B0 u + Btilde (u ⊗ z).
struct BilinearModel {
  Eigen::MatrixXd A;       // N × N
  Eigen::MatrixXd B0;      // N × m
  Eigen::MatrixXd Btilde;  // N × mN

  int N() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B0.cols()); }

  void validate() const {
    const auto n = A.rows();
    if (A.cols() != n || B0.rows() != n || Btilde.rows() != n || Btilde.cols() != B0.cols() * n)
      throw DimensionError("BilinearModel: inconsistent matrix shapes");
  }

  Eigen::VectorXd step(const Eigen::VectorXd& z, const Eigen::VectorXd& u) const {
    if (z.size() != N() || u.size() != m()) throw DimensionError("BilinearModel: state or input size mismatch");
    Eigen::VectorXd out = A * z + B0 * u;
    for (int i = 0; i < m(); ++i)
      if (u(i) != 0.0) out += Btilde.middleCols(static_cast<Eigen::Index>(i) * N(), N()) * z * u(i);
    return out;
  }
};

/// Exact lifted model of the zone temperature process with Phi = identity:
/// x+ = x + T_s/V_z (T_0 u - u x), so A = 1, B0 = T_s T_0 / V_z, Bt = -T_s / V_z.
inline BilinearModel building_model(double v_z = 2.0, double t_0 = -1.0, double t_s = 1.0) {
  return {Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Constant(1, 1, t_s * t_0 / v_z),
          Eigen::MatrixXd::Constant(1, 1, -t_s / v_z)};
}

struct FitDiagnostics {
  std::vector<int> ranks;  // regressor rank per block
  bool rank_deficient = false;
};

struct Surrogate {
  BilinearModel model;
  Dictionary dictionary;
  double delta_t = 0.0;
  FitDiagnostics diagnostics;

  int n() const { return dictionary.n(); }
  int N() const { return model.N(); }
  int m() const { return model.m(); }
};

/// Minimum-norm least squares  argmin_M ||Y - M Z||_F.
inline Eigen::MatrixXd lstsq_right(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& Z, int* rank) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Z.transpose());
  if (rank) *rank = static_cast<int>(cod.rank());
  return cod.solve(Y.transpose()).transpose();
}

inline Surrogate edmd_fit(const LiftedDataset& data, const Dictionary& dict) {
  if (data.blocks.empty()) throw DataError("edmd_fit: empty dataset");
  if (data.n() != dict.n()) throw DimensionError("edmd_fit: dataset and dictionary state sizes differ");
  const int N = dict.N();
  const int m = data.m();
  for (const auto& b : data.blocks)
    if (b.X.cols() < N) throw DataError("edmd_fit: each block needs at least N = " + std::to_string(N) + " samples");

  Surrogate s;
  s.dictionary = dict;
  s.delta_t = data.delta_t;
  int rank = 0;
  const auto& b0 = data.blocks.front();
  s.model.A = lstsq_right(dict.lift_columns(b0.Xp), dict.lift_columns(b0.X), &rank);
  s.diagnostics.ranks.push_back(rank);
  s.diagnostics.rank_deficient |= rank < N;

  s.model.B0.resize(N, m);
  s.model.Btilde.resize(N, static_cast<Eigen::Index>(m) * N);
  for (int i = 0; i < m; ++i) {
    const auto& blk = data.blocks[static_cast<std::size_t>(i) + 1];
    const Eigen::MatrixXd Z = dict.lift_columns(blk.X);
    Eigen::MatrixXd reg(N + 1, Z.cols());
    reg.row(0).setOnes();
    reg.bottomRows(N) = Z;
    const Eigen::MatrixXd sol = lstsq_right(dict.lift_columns(blk.Xp), reg, &rank);
    s.diagnostics.ranks.push_back(rank);
    s.diagnostics.rank_deficient |= rank < N + 1;
    s.model.B0.col(i) = sol.col(0);
    s.model.Btilde.middleCols(static_cast<Eigen::Index>(i) * N, N) = sol.rightCols(N) - s.model.A;
  }
  return s;
}

inline Eigen::VectorXd predict(const Surrogate& s, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  return s.model.step(s.dictionary.lift(x), u);
}

struct ResidualBound {
  enum class Provenance { UserSupplied, Empirical };

  double c_x = 0.0;
  double c_u = 0.0;
  Provenance provenance = Provenance::UserSupplied;
  int validation_count = 0;
  double safety_factor = 1.0;
  bool degenerate = false;  // every validation residual vanished

  static ResidualBound fixed(double c_x, double c_u) { return {c_x, c_u, Provenance::UserSupplied, 0, 1.0, false}; }
};

/// Smallest (c_x, c_u) in the weighted sense with
/// ||r_j|| <= c_x ||Phi(x_j)|| + c_u ||u_j|| on every validation pair, then
/// scaled by `safety`. The validation data must be disjoint from the
/// training data.
inline ResidualBound estimate_residual_bound(const Surrogate& s, const LiftedDataset& validation, double safety,
                                             double weight_x = 1.0, double weight_u = 1.0) {
  if (safety < 1.0) throw std::invalid_argument("estimate_residual_bound: safety must be >= 1");
  std::vector<double> ax, au, r;
  for (const auto& blk : validation.blocks) {
    for (Eigen::Index j = 0; j < blk.X.cols(); ++j) {
      const Eigen::VectorXd z = s.dictionary.lift(blk.X.col(j));
      ax.push_back(z.norm());
      au.push_back(blk.input.norm());
      r.push_back((s.dictionary.lift(blk.Xp.col(j)) - s.model.step(z, blk.input)).norm());
    }
  }
  const int J = static_cast<int>(r.size());
  if (J < 10) throw DataError("estimate_residual_bound: need at least 10 validation samples");
  if (*std::max_element(ax.begin(), ax.end()) == 0.0) throw DataError("estimate_residual_bound: all lifted states are zero");

  ResidualBound bound;
  bound.provenance = ResidualBound::Provenance::Empirical;
  bound.validation_count = J;
  bound.safety_factor = safety;
  const double rmax = *std::max_element(r.begin(), r.end());
  if (rmax <= 1e-14) {
    bound.degenerate = true;
    return bound;
  }
  for (int j = 0; j < J; ++j)
    if (r[static_cast<std::size_t>(j)] > 0.0 && ax[static_cast<std::size_t>(j)] == 0.0 && au[static_cast<std::size_t>(j)] == 0.0)
      throw DataError("estimate_residual_bound: residual at the origin with zero input cannot be bounded");

  // variables [c_x, c_u, slack_1..slack_J] >= 0
  sdp::ConicProblem lp;
  lp.cones = {sdp::Cone::nonneg(2 + J)};
  lp.objective = Eigen::VectorXd::Zero(2 + J);
  lp.objective(0) = weight_x;
  lp.objective(1) = weight_u;
  std::vector<Eigen::Triplet<double>> trips;
  lp.b.resize(J);
  for (int j = 0; j < J; ++j) {
    const auto k = static_cast<std::size_t>(j);
    if (ax[k] != 0.0) trips.emplace_back(j, 0, ax[k]);
    if (au[k] != 0.0) trips.emplace_back(j, 1, au[k]);
    trips.emplace_back(j, 2 + j, -1.0);
    lp.b(j) = r[k];
  }
  lp.A.resize(J, 2 + J);
  lp.A.setFromTriplets(trips.begin(), trips.end());
  const auto report = sdp::solve(lp, 1e-10);
  if (!report.has_solution()) throw DataError("estimate_residual_bound: LP failed (" + report.message + ")");
  double cx = std::max(report.primal(0), 0.0);
  double cu = std::max(report.primal(1), 0.0);

  // The interior-point optimum meets the constraints only to tolerance;
  // rescale so coverage holds exactly.
  double worst = 0.0;
  for (int j = 0; j < J; ++j) {
    const auto k = static_cast<std::size_t>(j);
    const double cover = cx * ax[k] + cu * au[k];
    worst = std::max(worst, cover > 0.0 ? r[k] / cover : std::numeric_limits<double>::infinity());
  }
  if (!std::isfinite(worst)) throw DataError("estimate_residual_bound: LP solution does not cover the residuals");
  if (worst > 1.0) {
    cx *= worst * (1.0 + 1e-12);
    cu *= worst * (1.0 + 1e-12);
  }
  bound.c_x = cx * safety;
  bound.c_u = cu * safety;
  return bound;
}

// ---------------------------------------------------------------------------
// persistence

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  return p.replace_extension(".json");
}

inline void write_dataset(const LiftedDataset& data, const std::filesystem::path& csv) {
  std::ofstream out(csv);
  if (!out) throw DataError("cannot open " + csv.string());
  const int n = data.n();
  out << "block,j";
  for (int i = 0; i < n; ++i) out << ",x" << i + 1;
  for (int i = 0; i < n; ++i) out << ",xp" << i + 1;
  out << '\n' << std::setprecision(17);
  for (std::size_t b = 0; b < data.blocks.size(); ++b) {
    const auto& blk = data.blocks[b];
    for (Eigen::Index j = 0; j < blk.X.cols(); ++j) {
      out << b << ',' << j;
      for (int i = 0; i < n; ++i) out << ',' << blk.X(i, j);
      for (int i = 0; i < n; ++i) out << ',' << blk.Xp(i, j);
      out << '\n';
    }
  }
  nlohmann::json meta;
  meta["delta_t"] = data.delta_t;
  meta["region"] = {{"lower", io::vector_to_json(data.region.lower)}, {"upper", io::vector_to_json(data.region.upper)}};
  meta["seed"] = data.seed;
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& blk : data.blocks) inputs.push_back(io::vector_to_json(blk.input));
  meta["inputs"] = inputs;
  std::ofstream side(sidecar_path(csv));
  if (!side) throw DataError("cannot open " + sidecar_path(csv).string());
  side << meta.dump(2) << '\n';
}

inline LiftedDataset read_dataset(const std::filesystem::path& csv) {
  LiftedDataset data;
  try {
    std::ifstream side(sidecar_path(csv));
    if (!side) throw DataError("missing dataset sidecar " + sidecar_path(csv).string());
    const auto meta = nlohmann::json::parse(side);
    data.delta_t = meta.at("delta_t").get<double>();
    data.region = {io::vector_from_json(meta.at("region").at("lower")), io::vector_from_json(meta.at("region").at("upper"))};
    data.seed = meta.at("seed").get<std::uint64_t>();
    for (const auto& u : meta.at("inputs")) data.blocks.push_back({io::vector_from_json(u), {}, {}});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad dataset sidecar: ") + e.what());
  }

  std::ifstream in(csv);
  if (!in) throw DataError("cannot open " + csv.string());
  std::string line;
  std::getline(in, line);
  const int n = static_cast<int>(std::count(line.begin(), line.end(), ',') - 1) / 2;
  if (n < 1) throw DataError("bad dataset header");
  std::vector<std::vector<Eigen::VectorXd>> xs(data.blocks.size()), xps(data.blocks.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (static_cast<int>(vals.size()) != 2 + 2 * n) throw DataError("bad dataset row: " + line);
    const auto b = static_cast<std::size_t>(vals[0]);
    if (b >= data.blocks.size()) throw DataError("dataset row references unknown block");
    xs[b].push_back(Eigen::Map<Eigen::VectorXd>(vals.data() + 2, n));
    xps[b].push_back(Eigen::Map<Eigen::VectorXd>(vals.data() + 2 + n, n));
  }
  for (std::size_t b = 0; b < data.blocks.size(); ++b) {
    if (xs[b].size() != xs[0].size()) throw DataError("dataset blocks have different sample counts");
    auto& blk = data.blocks[b];
    blk.X.resize(n, static_cast<Eigen::Index>(xs[b].size()));
    blk.Xp.resize(n, static_cast<Eigen::Index>(xs[b].size()));
    for (std::size_t j = 0; j < xs[b].size(); ++j) {
      blk.X.col(static_cast<Eigen::Index>(j)) = xs[b][j];
      blk.Xp.col(static_cast<Eigen::Index>(j)) = xps[b][j];
    }
  }
  return data;
}

inline nlohmann::json to_json(const Surrogate& s) {
  return {{"n", s.n()},
          {"N", s.N()},
          {"m", s.m()},
          {"A", io::matrix_to_json(s.model.A)},
          {"B0", io::matrix_to_json(s.model.B0)},
          {"Btilde", io::matrix_to_json(s.model.Btilde)},
          {"delta_t", s.delta_t},
          {"dictionary_label", s.dictionary.label()}};
}

inline Surrogate surrogate_from_json(const nlohmann::json& j) {
  try {
    Surrogate s;
    s.dictionary = Dictionary::from_label(j.at("dictionary_label").get<std::string>(), j.at("n").get<int>());
    s.model = {io::matrix_from_json(j.at("A")), io::matrix_from_json(j.at("B0")), io::matrix_from_json(j.at("Btilde"))};
    s.model.validate();
    s.delta_t = j.at("delta_t").get<double>();
    if (s.N() != j.at("N").get<int>() || s.m() != j.at("m").get<int>() || s.N() != s.dictionary.N())
      throw DimensionError("surrogate JSON: dimensions disagree");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad surrogate JSON: ") + e.what());
  }
}

}  // namespace koopsos::koopman
