#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rstop/driver.hpp"
#include "support.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rstop;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("rstop_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// the worked one-step instance: call struck at 0 gives Y = (0, 1, 0)
const char* one_step_config = R"({
  "job": "value",
  "lattice": {"n_steps": 1, "dt": 1.0},
  "payoff": {"function": "call", "params": {"strike": 0.0}, "bound": 1.0},
  "penalty": {"family": "entropic", "r": 1.0},
  "grid": "exact",
  "output": "out"
})";

} // namespace

TEST_CASE("config parsing and validation") {
    const auto cfg = parse_config(one_step_config);
    CHECK(cfg.job == "value");
    CHECK(cfg.n_steps == 1);
    CHECK(cfg.exact_mode);
    CHECK(cfg.config_hash.size() == 16);

    CHECK_THROWS_AS(parse_config("{not json"), parameter_error);
    CHECK_THROWS_AS(parse_config(R"({"job": "fly"})"), parameter_error);

    std::string bad_dt = one_step_config;
    const auto pos = bad_dt.find("\"dt\": 1.0");
    bad_dt.replace(pos, 9, "\"dt\": 0.0");
    CHECK_THROWS_AS(parse_config(bad_dt), parameter_error);

    // subcommand override must not contradict the config
    CHECK_THROWS_AS(parse_config(one_step_config, "saddle"), parameter_error);
    CHECK(parse_config(one_step_config, "value").job == "value");

    std::string no_job = one_step_config;
    no_job.replace(no_job.find("\"job\": \"value\",\n  "), 18, "");
    CHECK(parse_config(no_job, "value").job == "value");
    CHECK_THROWS_AS(parse_config(no_job), parameter_error); // no job anywhere
}

TEST_CASE("value job emits the worked root value deterministically") {
    const auto cfg = parse_config(one_step_config);
    const auto dir_a = fresh_dir("value_a");
    const auto dir_b = fresh_dir("value_b");
    const auto res_a = run(cfg, dir_a.string());
    const auto res_b = run(cfg, dir_b.string());
    CHECK(res_a.exit_code == 0);

    const auto csv = slurp(dir_a / "value.csv");
    CHECK(csv.find("t,j,state,Y,V,stop_flag\n") == 0);
    CHECK(csv.find("0,0,0,0,0.375,0\n") != std::string::npos);
    CHECK(csv.find("\r") == std::string::npos);

    // byte-identical reruns
    CHECK(csv == slurp(dir_b / "value.csv"));
    CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));

    const auto manifest = nlohmann::json::parse(slurp(dir_a / "manifest.json"));
    CHECK(manifest["config_hash"] == cfg.config_hash);
    CHECK(manifest["version"] == tool_version);
}

TEST_CASE("saddle job writes the certificate artifacts") {
    auto text = std::string(one_step_config);
    text.replace(text.find("\"job\": \"value\""), 14, "\"job\": \"saddle\"");
    text.replace(text.find("\"grid\": \"exact\""), 15,
                 "\"grid\": {\"k\": 1.0, \"theta\": [-0.5, 0.0, 0.5]}");
    const auto cfg = parse_config(text);
    const auto dir = fresh_dir("saddle");
    const auto res = run(cfg, dir.string());
    CHECK(res.exit_code == 0);
    for (const char* name :
         {"rbsde.csv", "theta_star.csv", "sigma_star.csv", "certificate.json", "manifest.json"})
        CHECK(fs::exists(dir / name));

    const auto cert = nlohmann::json::parse(slurp(dir / "certificate.json"));
    CHECK(cert["certified"] == true);
    CHECK(cert["middle_value"].get<double>() == doctest::Approx(0.375));
    const auto theta = slurp(dir / "theta_star.csv");
    CHECK(theta.find("0,0,-0.5\n") != std::string::npos);
}

TEST_CASE("oracle-check job reports zero gaps on the worked instance") {
    auto text = std::string(one_step_config);
    text.replace(text.find("\"job\": \"value\""), 14, "\"job\": \"oracle-check\"");
    text.replace(text.find("\"grid\": \"exact\""), 15,
                 "\"grid\": {\"k\": 1.0, \"theta\": [-0.5, 0.0, 0.5]}");
    const auto cfg = parse_config(text);
    const auto dir = fresh_dir("oracle");
    const auto res = run(cfg, dir.string());
    CHECK(res.exit_code == 0);
    const auto rep = nlohmann::json::parse(slurp(dir / "oracle_report.json"));
    CHECK(rep["minimax"]["pass"] == true);
    CHECK(rep["minimax"]["gap_lower_upper"].get<double>() <= 1e-12);
    CHECK(rep["saddle"]["pass"] == true);
}

TEST_CASE("rho job matches the library evaluation") {
    const char* text = R"({
      "job": "rho",
      "lattice": {"n_steps": 1, "dt": 1.0},
      "payoff": {"function": "call", "params": {"strike": 0.0}, "bound": 1.0},
      "penalty": {"family": "entropic", "r": 1.0},
      "grid": {"k": 1.0, "theta": [-0.5, 0.0, 0.5]},
      "nu": 0,
      "rho": {"xi": {"function": "call", "params": {"strike": 0.0}, "bound": 1.0}}
    })";
    const auto cfg = parse_config(text);
    const auto dir = fresh_dir("rho");
    CHECK(run(cfg, dir.string()).exit_code == 0);
    const auto csv = slurp(dir / "rho.csv");
    CHECK(csv.find("j,state,rho\n") == 0);
    CHECK(csv.find("0,0,-0.375\n") != std::string::npos);
}

TEST_CASE("converge job tabulates decreasing steps") {
    const char* text = R"({
      "job": "converge",
      "lattice": {"n_steps": 4, "dt": 0.25},
      "payoff": {"function": "gauss", "params": {"amplitude": 0.8, "center": 0.4}, "bound": 1.0},
      "penalty": {"family": "entropic", "r": 1.0},
      "grid": "exact",
      "converge": {"T": 1.0, "n_steps_list": [4, 8, 16]}
    })";
    const auto cfg = parse_config(text);
    const auto dir = fresh_dir("converge");
    CHECK(run(cfg, dir.string()).exit_code == 0);
    const auto csv = slurp(dir / "converge.csv");
    CHECK(csv.find("n_steps,dt,root_value,diff_prev,est_order\n") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("payoff csv round trip through the value job") {
    const auto dir = fresh_dir("csvpayoff");
    {
        std::ofstream out(dir / "payoff.csv");
        out << "t,j,value\n0,0,0\n1,0,0\n1,1,1\n";
    }
    nlohmann::json j = nlohmann::json::parse(one_step_config);
    j["payoff"] = {{"csv", (dir / "payoff.csv").string()}, {"bound", 1.0}};
    const auto cfg = parse_config(j.dump());
    const auto res = run(cfg, dir.string());
    CHECK(res.exit_code == 0);
    CHECK(slurp(dir / "value.csv").find("0,0,0,0,0.375,0\n") != std::string::npos);
}

TEST_CASE("tabulated penalty loads from csv") {
    const auto dir = fresh_dir("tabulated");
    {
        std::ofstream out(dir / "penalty.csv");
        out << "z,f\n-2,4\n-1,1\n0,0\n1,1\n2,4\n";
    }
    nlohmann::json j = nlohmann::json::parse(one_step_config);
    j["penalty"] = {{"family", "tabulated"},
                    {"csv", (dir / "penalty.csv").string()},
                    {"assumptions",
                     {{"eps", 0.5}, {"psi_bound", 2.0}, {"growth_M", 1.0}}}};
    const auto cfg = parse_config(j.dump());
    CHECK(cfg.penalty.is_tabulated());
    const auto res = run(cfg, dir.string());
    CHECK(res.exit_code == 0);
    // root slope 0.5: the vertex minimum of f + 0.5 z sits at z = 0 with
    // value 0, so the conjugate recursion keeps the plain mean 0.5
    const auto csv = slurp(dir / "value.csv");
    CHECK(csv.find("0,0,0,0,0.5,0\n") != std::string::npos);
}

TEST_CASE("cli binary end to end") {
    const std::string bin = ROBUST_STOPPER_BIN;
    const auto dir = fresh_dir("cli");
    {
        std::ofstream out(dir / "config.json");
        out << one_step_config;
    }
    const auto run_cmd = [&](const std::string& args) {
        const int status =
            std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run_cmd("value --config " + (dir / "config.json").string() + " --out " +
                  (dir / "out").string()) == 0);
    CHECK(fs::exists(dir / "out" / "value.csv"));

    // config error: mismatched job
    CHECK(run_cmd("saddle --config " + (dir / "config.json").string()) == 2);
    // config error: missing file
    CHECK(run_cmd("value --config " + (dir / "nope.json").string()) == 2);

    // budget error from an oversized enumeration
    {
        std::ofstream out(dir / "budget.json");
        out << R"({
          "job": "oracle-check",
          "lattice": {"n_steps": 5, "dt": 0.04},
          "payoff": {"function": "constant", "params": {"value": 0.5}, "bound": 1.0},
          "penalty": {"family": "entropic", "r": 1.0},
          "grid": {"k": 1.0, "theta": [-0.5, 0.0, 0.5]}
        })";
    }
    CHECK(run_cmd("oracle-check --config " + (dir / "budget.json").string() + " --out " +
                  (dir / "out2").string()) == 4);
}
