#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("koopsos_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const json& cfg) const {
    const auto p = dir_ / name;
    std::ofstream(p) << cfg.dump(2);
    return p;
  }

  /// Runs one subcommand and returns its exit status.
  int run(const std::string& command, const fs::path& config, const fs::path& out, const std::string& extra = "") const {
    const std::string cmd = std::string(KOOPSOS_CLI) + " " + command + " --config " + config.string() + " --out " +
                            out.string() + " " + extra + " >" + (dir_ / "stdout.txt").string() + " 2>" +
                            (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string err() const { return slurp(dir_ / "stderr.txt"); }

  static json config(const std::string& name) { return load(fs::path(KOOPSOS_CONFIG_DIR) / name); }

  static json small_pendulum() {
    json c = config("pendulum.json");
    c["d"] = 20;
    return c;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, CollectWritesDataset) {
  const auto cfg = write_config("p.json", small_pendulum());
  ASSERT_EQ(run("collect", cfg, dir_ / "a"), 0) << err();
  EXPECT_TRUE(fs::exists(dir_ / "a" / "dataset.csv"));
}

TEST_F(Cli, CollectIsByteReproducible) {
  const auto cfg = write_config("p.json", small_pendulum());
  ASSERT_EQ(run("collect", cfg, dir_ / "a", "--seed 5"), 0) << err();
  ASSERT_EQ(run("collect", cfg, dir_ / "b", "--seed 5 --jobs 1"), 0) << err();
  EXPECT_EQ(slurp(dir_ / "a" / "dataset.csv"), slurp(dir_ / "b" / "dataset.csv"));
}

TEST_F(Cli, InvalidConfigsExitTwo) {
  json bad_d = small_pendulum();
  bad_d["d"] = 0;
  EXPECT_EQ(run("collect", write_config("d.json", bad_d), dir_ / "o"), 2);

  json unknown = config("synthetic.json");
  unknown["colour"] = "blue";
  EXPECT_EQ(run("design", write_config("u.json", unknown), dir_ / "o"), 2);
  EXPECT_NE(err().find("colour"), std::string::npos);

  json empty_grid = config("synthetic.json");
  empty_grid["sweep"]["c_x"]["count"] = 0;
  EXPECT_EQ(run("sweep", write_config("g.json", empty_grid), dir_ / "o"), 2);

  json c_zero = config("synthetic.json");
  c_zero["bound"]["c_x"] = 0.0;
  EXPECT_EQ(run("design", write_config("z.json", c_zero), dir_ / "o"), 2);

  EXPECT_EQ(run("design", dir_ / "missing.json", dir_ / "o"), 2);
  EXPECT_EQ(run("design", write_config("s.json", config("synthetic.json")), dir_ / "o", "--bogus-flag"), 2);
}

TEST_F(Cli, SyntheticPipelineSucceeds) {
  const auto cfg = write_config("s.json", config("synthetic.json"));
  const auto out = dir_ / "run";
  ASSERT_EQ(run("design", cfg, out), 0) << err();
  ASSERT_TRUE(fs::exists(out / "controller.json"));
  const auto report = load(out / "design_report.json");
  EXPECT_EQ(report.at("status"), "feasible");

  ASSERT_EQ(run("roa", cfg, out), 0) << err();
  const auto roa = load(out / "roa.json");
  EXPECT_GT(roa.at("c").get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(out / "roa_grid.csv"));

  ASSERT_EQ(run("verify", cfg, out), 0) << err();
  EXPECT_TRUE(fs::exists(out / "verify.json"));
}

TEST_F(Cli, InadmissibleResidualFailsVerification) {
  json c = config("synthetic.json");
  const auto out = dir_ / "run";
  ASSERT_EQ(run("design", write_config("s.json", c), out), 0) << err();
  c["verify"]["residual_scale"] = 10.0;
  EXPECT_EQ(run("verify", write_config("v.json", c), out), 6);
  EXPECT_FALSE(err().empty());
}

TEST_F(Cli, BuildingDesignReportsInfeasible) {
  const auto cfg = config("building.json");
  EXPECT_EQ(run("design", write_config("b.json", cfg), dir_ / "o"), 4);
  json big = cfg;
  big["bound"]["c_x"] = 10.0;
  big["bound"]["c_u"] = 10.0;
  EXPECT_EQ(run("design", write_config("big.json", big), dir_ / "o2"), 4);
}

TEST_F(Cli, MissingControllerIsDataError) {
  EXPECT_EQ(run("roa", write_config("s.json", config("synthetic.json")), dir_ / "empty"), 3);
}

TEST_F(Cli, ControllerDictionaryMismatchIsConfigError) {
  const auto out = dir_ / "run";
  ASSERT_EQ(run("design", write_config("s.json", config("synthetic.json")), out), 0) << err();
  EXPECT_EQ(run("roa", write_config("p.json", small_pendulum()), out), 2);
}

TEST_F(Cli, SweepWritesSortedGrid) {
  json c = config("synthetic.json");
  c["sweep"]["c_x"]["count"] = 2;
  c["sweep"]["c_u"]["count"] = 2;
  const auto out = dir_ / "run";
  ASSERT_EQ(run("sweep", write_config("s.json", c), out, "--jobs 2"), 0) << err();
  std::ifstream in(out / "sweep.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "alpha,c_x,c_u,status,solve_time_s,objective");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
  EXPECT_TRUE(fs::exists(out / "sweep_summary.json"));
}
