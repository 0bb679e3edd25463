#include <doctest.h>
#include <json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;  // stdout and stderr
};

Result run(const std::string& args) {
  const std::string cmd = std::string(MULTILIFT_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "multilift_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A config small enough to train in well under a second.
fs::path tiny_config(const fs::path& dir) {
  const auto p = dir / "tiny.json";
  std::ofstream(p) << R"({
    "seed": 4,
    "env": {"episode": {"duration": 0.2}},
    "marl": {"envs": 2, "rollouts": 8, "epochs": 1, "minibatches": 1, "total_env_steps": 32,
             "network": {"actor_hidden": [16], "critic_hidden": [16]}},
    "eval": {"hover": {"seeds": 1, "duration": 0.5, "required": 0}}
  })";
  return p;
}

}  // namespace

TEST_CASE("version and help") {
  const auto v = run("--version");
  CHECK(v.code == 0);
  CHECK(v.output.find("multilift ") != std::string::npos);
  CHECK(run("--help").code == 0);
  CHECK(run("").code != 0);
  CHECK(run("frobnicate").code != 0);
}

TEST_CASE("missing config file fails with a message") {
  const auto dir = scratch("missing");
  const auto r = run("train --config " + (dir / "nope.json").string() + " --out " + (dir / "run").string());
  CHECK(r.code != 0);
  CHECK(r.output.find("nope.json") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "run" / "manifest.json"));
}

TEST_CASE("config errors and IO errors have distinct exit codes") {
  const auto dir = scratch("codes");
  const auto bad_key = run("train --override marl.envz=3 --out " + (dir / "a").string());
  const auto missing = run("inspect " + (dir / "absent.mlck").string());
  CHECK(bad_key.code != 0);
  CHECK(missing.code != 0);
  CHECK(bad_key.code != missing.code);
  CHECK(bad_key.output.find("marl.envz") != std::string::npos);
}

TEST_CASE("train, inspect, eval and export") {
  const auto dir = scratch("flow");
  const auto cfg = tiny_config(dir);
  const auto run_dir = dir / "runs" / "r1";
  const auto t = run("train --config " + cfg.string() + " --override marl.envs=3 --seed 12 --out " + run_dir.string());
  INFO(t.output);
  REQUIRE(t.code == 0);

  const auto manifest = nlohmann::json::parse(slurp(run_dir / "manifest.json"));
  CHECK(manifest["command"] == "train");
  CHECK(manifest["seed"] == 12);
  CHECK(manifest["config"]["marl"]["envs"] == 3);
  CHECK(manifest["config"]["seed"] == 12);
  CHECK(manifest["config_hash"].get<std::string>().size() == 16u);
  CHECK(manifest["version"].get<std::string>().rfind("multilift ", 0) == 0);
  CHECK(fs::exists(run_dir / "metrics.csv"));
  const auto ckpt = run_dir / "final.mlck";
  REQUIRE(fs::exists(ckpt));

  SUBCASE("inspect") {
    const auto r = run("inspect " + ckpt.string());
    CHECK(r.code == 0);
    CHECK(r.output.find("observation_dim: 135") != std::string::npos);
    CHECK(r.output.find("[16]") != std::string::npos);
  }
  SUBCASE("inspect rejects a corrupt file cleanly") {
    const auto bad = dir / "corrupt.mlck";
    std::string bytes = slurp(ckpt);
    bytes.resize(bytes.size() / 2);
    std::ofstream(bad, std::ios::binary) << bytes;
    const auto r = run("inspect " + bad.string());
    CHECK(r.code != 0);
    CHECK(r.output.find("io error") != std::string::npos);
  }
  SUBCASE("eval writes metrics and time series") {
    const auto out = dir / "eval";
    const auto r = run("eval " + ckpt.string() + " --override eval.scenario.duration=0.5 --out " + out.string());
    INFO(r.output);
    CHECK(r.code == 0);
    CHECK(fs::exists(out / "metrics.csv"));
    CHECK(fs::exists(out / "timeseries.csv"));
    CHECK(fs::exists(out / "manifest.json"));
    const auto m = nlohmann::json::parse(slurp(out / "manifest.json"));
    CHECK(m["config"]["eval"]["scenario"]["kind"] == "setpoint_step");
  }
  SUBCASE("eval with a mismatched team size") {
    const auto r = run("eval " + ckpt.string() + " --override physics.n_mavs=4 --out " + (dir / "e4").string());
    CHECK(r.code != 0);
    CHECK(r.output.find("config error") != std::string::npos);
  }
  SUBCASE("export is idempotent") {
    const auto first = run("export " + (dir / "runs").string());
    CHECK(first.code == 0);
    const auto runs_csv = slurp(dir / "runs" / "export" / "runs.csv");
    const auto curves_csv = slurp(dir / "runs" / "export" / "curves.csv");
    CHECK(runs_csv.find("r1") != std::string::npos);
    CHECK(run("export " + (dir / "runs").string()).code == 0);
    CHECK(slurp(dir / "runs" / "export" / "runs.csv") == runs_csv);
    CHECK(slurp(dir / "runs" / "export" / "curves.csv") == curves_csv);
  }
}

TEST_CASE("export of an empty directory says so") {
  const auto dir = scratch("empty");
  const auto r = run("export " + dir.string());
  CHECK(r.code == 0);
  CHECK(r.output.find("nothing to export") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "export"));
}

TEST_CASE("ablate merges variants into one table") {
  const auto dir = scratch("ablate");
  const auto cfg = tiny_config(dir);
  const auto r = run("ablate --kind critic --config " + cfg.string() + " --out " + (dir / "abl").string());
  INFO(r.output);
  REQUIRE(r.code == 0);
  const auto table = slurp(dir / "abl" / "ablation.csv");
  CHECK(table.find("centralized") != std::string::npos);
  CHECK(table.find("local") != std::string::npos);
}
