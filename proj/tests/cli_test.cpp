#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

// Runs the CLI with `args`, capturing stdout; stderr goes to `err_file` when given.
CliRun cli(const std::string& args, const std::string& err_file = "/dev/null") {
  const std::string cmd = std::string(TDBPS_CLI_PATH) + " " + args + " 2>" + err_file;
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::pair<double, double> pair_of(const std::string& s) {
  const auto comma = s.find(',');
  return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("tdbps_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path write(const std::string& name, const std::string& text) {
    const auto p = dir / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir;
};

}  // namespace

TEST_F(Cli, SimulateThenSolveRecoversTruth) {
  const auto cfg = write("quiet.json", R"({"noise": {"enabled": false}, "trajectory": {"type": "constant_velocity",
      "position": [12, 17], "velocity": [3, -2]}})");
  ASSERT_EQ(cli("simulate --config " + cfg.string() + " --out " + (dir / "sim").string()).code, 0);
  const auto truth = key_values(slurp(dir / "sim" / "truth.txt"));
  EXPECT_EQ(truth.at("rng").rfind("mt19937_64", 0), 0u);
  EXPECT_EQ(truth.at("truth_v"), "3,-2");

  const std::string batch = (dir / "sim" / "batch.csv").string();
  const auto kvd = key_values(cli("solve --config " + cfg.string() + " --batch " + batch + " --velocity 3,-2").out);
  EXPECT_EQ(kvd.at("status"), "converged");
  const auto [px, py] = pair_of(kvd.at("p"));
  const auto [tx, ty] = pair_of(truth.at("truth_p"));
  EXPECT_NEAR(px, tx, 1e-6);
  EXPECT_NEAR(py, ty, 1e-6);

  const auto uvd = key_values(cli("solve --config " + cfg.string() + " --batch " + batch + " --estimator uvd").out);
  EXPECT_EQ(uvd.at("converged"), "true");
  const auto [vx, vy] = pair_of(uvd.at("v"));
  EXPECT_NEAR(vx, 3, 1e-5);
  EXPECT_NEAR(vy, -2, 1e-5);
}

TEST_F(Cli, SimulateToStdoutIsDeterministic) {
  const CliRun a = cli("simulate --seed 5 --fix 3");
  const CliRun b = cli("--seed 5 simulate --fix 3");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.substr(0, a.out.find('\n')), "bs_index,t,rho,sigma");
  EXPECT_NE(a.out, cli("simulate --seed 6 --fix 3").out);
}

TEST_F(Cli, SolveFromStdinAndLspmD) {
  const auto cfg = write("still.json", R"({"noise": {"enabled": false},
      "trajectory": {"type": "stationary", "position": [11, 19]}})");
  const CliRun r = cli("simulate --config " + cfg.string() + " | " + TDBPS_CLI_PATH + " solve --batch - --estimator lspm-d");
  ASSERT_EQ(r.code, 0);
  const auto kv = key_values(r.out);
  const auto [px, py] = pair_of(kv.at("p"));
  EXPECT_NEAR(px, 11, 1e-6);
  EXPECT_NEAR(py, 19, 1e-6);
  EXPECT_EQ(kv.count("v"), 0u);
}

TEST_F(Cli, CrlbOrdering) {
  const CliRun r = cli("crlb --seed 9 --fix 2");
  ASSERT_EQ(r.code, 0);
  const auto kv = key_values(r.out);
  const double kvd = std::stod(kv.at("crlb_rmse_kvd"));
  const double pvd = std::stod(kv.at("crlb_rmse_pvd"));
  const double uvd = std::stod(kv.at("crlb_rmse_uvd"));
  EXPECT_LT(kvd, pvd);
  EXPECT_LT(pvd, uvd);
  EXPECT_TRUE(kv.count("lspm_d_rmse"));
}

TEST_F(Cli, CrlbFromBatch) {
  const auto cfg = write("quiet.json", R"({"noise": {"enabled": false},
      "trajectory": {"type": "stationary", "position": [14, 16]}})");
  ASSERT_EQ(cli("simulate --config " + cfg.string() + " --out " + dir.string()).code, 0);
  const auto kv =
      key_values(cli("crlb --batch " + (dir / "batch.csv").string() + " --position 14,16 --velocity 0,0").out);
  EXPECT_DOUBLE_EQ(std::stod(kv.at("lspm_d_rmse")), std::stod(kv.at("crlb_rmse_kvd")));
}

TEST_F(Cli, ExperimentWritesCsvAndSvg) {
  const CliRun r = cli("experiment speed-compare --trials 20 --threads 2 --svg --out " + dir.string());
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(dir / "speed-compare.csv"));
  EXPECT_TRUE(fs::exists(dir / "speed-compare.svg"));
  const std::string csv = slurp(dir / "speed-compare.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 7 * 3);

  const CliRun again = cli("experiment speed-compare --trials 20 --threads 1 --out " + (dir / "b").string());
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(csv, slurp(dir / "b" / "speed-compare.csv"));
}

TEST_F(Cli, ExperimentHonoursConfigGrid) {
  const auto cfg = write("grid.json", R"({"experiment": {"grid": [0.05, 0.5], "estimators": ["uvd"]}, "trials": 10})");
  ASSERT_EQ(cli("experiment noise-sweep-uvd-pvd --config " + cfg.string() + " --out " + dir.string()).code, 0);
  const std::string csv = slurp(dir / "noise-sweep-uvd-pvd.csv");
  EXPECT_NE(csv.find("\n0.05,uvd,"), std::string::npos);
  EXPECT_NE(csv.find("\n0.5,uvd,"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST_F(Cli, ThreeDimensionalConfig) {
  const auto cfg = write("space.json", R"({"bs": [[0,0,0],[30,0,0],[0,30,0],[0,0,30],[30,30,30]],
      "noise": {"enabled": false}, "trajectory": {"type": "stationary", "position": [10, 12, 8]}})");
  const CliRun sim = cli("simulate --config " + cfg.string() + " --out " + dir.string());
  ASSERT_EQ(sim.code, 0);
  const auto kv = key_values(cli("solve --config " + cfg.string() + " --batch " + (dir / "batch.csv").string()).out);
  std::istringstream p(kv.at("p"));
  std::array<double, 3> got{};
  char comma;
  p >> got[0] >> comma >> got[1] >> comma >> got[2];
  EXPECT_NEAR(got[0], 10, 1e-6);
  EXPECT_NEAR(got[1], 12, 1e-6);
  EXPECT_NEAR(got[2], 8, 1e-6);
}

TEST_F(Cli, RejectsBadInput) {
  EXPECT_EQ(cli("experiment fig7").code, 2);
  EXPECT_EQ(cli("experiment circular --config " + write("bad.json", "{not json").string()).code, 2);
  EXPECT_EQ(cli("simulate --config " + write("typo.json", R"({"noize": {}})").string()).code, 2);
  EXPECT_NE(cli("simulate --config " + (dir / "missing.json").string()).code, 0);
  EXPECT_NE(cli("solve").code, 0);
  EXPECT_EQ(cli("solve --batch " + write("b.csv", "t,rho\n").string()).code, 2);
  EXPECT_NE(cli("").code, 0);
}
