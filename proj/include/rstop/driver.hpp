#pragma once

#include "rstop/io.hpp"
#include "rstop/oracle.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rstop {

inline constexpr const char* tool_name = "robust-stopper";
inline constexpr const char* tool_version = "0.1.0";

struct ExperimentConfig {
    std::string job;
    std::string config_hash;

    int n_steps = 0;
    double dt = 0.0;

    std::function<double(double, double)> payoff_fn; // empty when a CSV is used
    std::string payoff_csv;
    double payoff_bound = 0.0;

    PenaltySpec penalty = make_entropic(1.0);

    bool exact_mode = false;
    ThetaGrid grid;

    double tol_hit = -1.0; // negative: derive from the payoff norm

    int nu = 0;

    // rho job
    std::string rho_gamma_csv; // empty: stop only at the horizon
    int rho_gamma_floor = 0;
    std::function<double(double, double)> xi_fn;
    std::string xi_csv;
    double xi_bound = 1.0;

    // converge job
    double converge_horizon = 1.0;
    std::vector<int> converge_steps;

    std::string output_dir = "out";
    long long oracle_budget = 10'000'000;
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& field, const std::string& what,
                                     const std::string& hint = {}) {
    throw parameter_error("cli", "config field '" + field + "': " + what, hint);
}

inline const nlohmann::json& need(const nlohmann::json& j, const std::string& field) {
    if (!j.contains(field)) config_fail(field, "missing");
    return j.at(field);
}

inline double need_number(const nlohmann::json& j, const std::string& field) {
    const auto& v = need(j, field);
    if (!v.is_number()) config_fail(field, "must be a number");
    return v.get<double>();
}

inline std::function<double(double, double)> make_payoff_function(const std::string& name,
                                                                  const nlohmann::json& params) {
    if (name == "constant") {
        const double c = need_number(params, "value");
        return [c](double, double) { return c; };
    }
    if (name == "put") {
        const double strike = need_number(params, "strike");
        return [strike](double, double x) { return std::max(strike - x, 0.0); };
    }
    if (name == "call") {
        const double strike = need_number(params, "strike");
        return [strike](double, double x) { return std::max(x - strike, 0.0); };
    }
    if (name == "gauss") {
        const double a = need_number(params, "amplitude");
        const double center = params.value("center", 0.0);
        const double width = params.value("width", 1.0);
        return [a, center, width](double, double x) {
            const double u = (x - center) / width;
            return a * std::exp(-0.5 * u * u);
        };
    }
    if (name == "tanh") {
        const double a = need_number(params, "amplitude");
        const double slope = params.value("slope", 1.0);
        return [a, slope](double, double x) { return a * std::tanh(slope * x); };
    }
    config_fail("payoff.function", "unknown function '" + name + "'",
                "one of: constant, put, call, gauss, tanh");
}

inline PenaltySpec parse_penalty(const nlohmann::json& j) {
    const std::string family = need(j, "family").get<std::string>();
    PenaltySpec spec = make_entropic(1.0);
    if (family == "entropic") {
        spec = make_entropic(need_number(j, "r"));
    } else if (family == "power") {
        const double lambda = need_number(j, "lambda");
        std::vector<double> scale, shift;
        const auto& sc = need(j, "scale");
        const auto& sh = need(j, "shift");
        if (sc.is_number())
            scale.push_back(sc.get<double>());
        else
            scale = sc.get<std::vector<double>>();
        if (sh.is_number())
            shift.push_back(sh.get<double>());
        else
            shift = sh.get<std::vector<double>>();
        spec = make_power(lambda, std::move(scale), std::move(shift));
    } else if (family == "tabulated") {
        std::vector<std::string> paths;
        if (j.contains("csv"))
            paths.push_back(need(j, "csv").get<std::string>());
        else if (j.contains("csv_per_step"))
            paths = need(j, "csv_per_step").get<std::vector<std::string>>();
        else
            config_fail("penalty.csv", "tabulated family needs 'csv' or 'csv_per_step'");
        std::vector<double> grid;
        std::vector<std::vector<double>> rows;
        for (const auto& p : paths) {
            auto [zs, fs] = load_zf_csv(p);
            if (grid.empty())
                grid = zs;
            else if (grid != zs)
                config_fail("penalty.csv_per_step", "all files must share the same z grid");
            rows.push_back(std::move(fs));
        }
        const auto& a = need(j, "assumptions");
        AssumptionParams ap;
        ap.eps = need_number(a, "eps");
        ap.upsilon_bound = a.value("upsilon_bound", 0.0);
        ap.ell = a.value("ell", ap.eps * ap.upsilon_bound * ap.upsilon_bound);
        ap.psi_bound = need_number(a, "psi_bound");
        ap.growth_M = need_number(a, "growth_M");
        spec = make_tabulated(std::move(grid), std::move(rows), ap);
    } else {
        config_fail("penalty.family", "unknown family '" + family + "'",
                    "one of: entropic, power, tabulated");
    }
    if (j.contains("assumptions") && family != "tabulated") {
        const auto& a = j.at("assumptions");
        if (a.contains("eps")) spec.assume.eps = a.at("eps").get<double>();
        if (a.contains("upsilon_bound"))
            spec.assume.upsilon_bound = a.at("upsilon_bound").get<double>();
        if (a.contains("ell")) spec.assume.ell = a.at("ell").get<double>();
        if (a.contains("psi_bound")) spec.assume.psi_bound = a.at("psi_bound").get<double>();
        if (a.contains("growth_M")) spec.assume.growth_M = a.at("growth_M").get<double>();
        validate_assumptions(spec.assume);
    }
    return spec;
}

} // namespace detail

inline ExperimentConfig parse_config(const std::string& text,
                                     const std::string& job_override = {}) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw parameter_error("cli", std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    cfg.config_hash = hex64(fnv1a64(text));

    if (!job_override.empty()) {
        cfg.job = job_override;
        if (j.contains("job") && j.at("job").get<std::string>() != job_override)
            detail::config_fail("job", "config job '" + j.at("job").get<std::string>() +
                                           "' conflicts with the requested subcommand '" +
                                           job_override + "'");
    } else {
        cfg.job = detail::need(j, "job").get<std::string>();
    }
    static const std::vector<std::string> jobs = {"value", "saddle", "oracle-check", "converge",
                                                  "rho"};
    if (std::find(jobs.begin(), jobs.end(), cfg.job) == jobs.end())
        detail::config_fail("job", "unknown job '" + cfg.job + "'",
                            "one of: value, saddle, oracle-check, converge, rho");

    const auto& lat = detail::need(j, "lattice");
    const double n_steps_raw = detail::need_number(lat, "n_steps");
    cfg.n_steps = int(n_steps_raw);
    cfg.dt = detail::need_number(lat, "dt");
    if (cfg.n_steps < 1 || double(cfg.n_steps) != n_steps_raw)
        detail::config_fail("lattice.n_steps", "must be a positive integer");
    if (!(cfg.dt > 0.0)) detail::config_fail("lattice.dt", "must be > 0");

    const auto& pay = detail::need(j, "payoff");
    cfg.payoff_bound = detail::need_number(pay, "bound");
    if (pay.contains("csv"))
        cfg.payoff_csv = pay.at("csv").get<std::string>();
    else
        cfg.payoff_fn = detail::make_payoff_function(
            detail::need(pay, "function").get<std::string>(),
            pay.value("params", nlohmann::json::object()));

    cfg.penalty = detail::parse_penalty(detail::need(j, "penalty"));

    const auto& grid = detail::need(j, "grid");
    if (grid.is_string() && grid.get<std::string>() == "exact") {
        cfg.exact_mode = true;
    } else if (grid.is_object()) {
        cfg.grid.k = detail::need_number(grid, "k");
        cfg.grid.values = detail::need(grid, "theta").get<std::vector<double>>();
        if (cfg.grid.values.empty()) detail::config_fail("grid.theta", "must be nonempty");
    } else {
        detail::config_fail("grid", "must be \"exact\" or an object {k, theta}");
    }

    if (j.contains("tolerances")) {
        const auto& tols = j.at("tolerances");
        if (tols.contains("tol_hit")) cfg.tol_hit = tols.at("tol_hit").get<double>();
        if (tols.contains("tol_opt")) cfg.penalty.tol_opt = tols.at("tol_opt").get<double>();
    }
    cfg.nu = j.value("nu", 0);
    if (cfg.nu < 0 || cfg.nu > cfg.n_steps) detail::config_fail("nu", "must lie in [0, N]");

    if (cfg.job == "rho") {
        const auto& r = detail::need(j, "rho");
        if (r.contains("gamma_csv")) {
            cfg.rho_gamma_csv = r.at("gamma_csv").get<std::string>();
            cfg.rho_gamma_floor = r.value("gamma_floor", cfg.nu);
        }
        const auto& xi = detail::need(r, "xi");
        cfg.xi_bound = detail::need_number(xi, "bound");
        if (xi.contains("csv"))
            cfg.xi_csv = xi.at("csv").get<std::string>();
        else
            cfg.xi_fn = detail::make_payoff_function(
                detail::need(xi, "function").get<std::string>(),
                xi.value("params", nlohmann::json::object()));
        if (cfg.exact_mode)
            detail::config_fail("grid", "the rho job needs a finite theta grid");
    }
    if (cfg.job == "converge") {
        const auto& c = detail::need(j, "converge");
        cfg.converge_horizon = detail::need_number(c, "T");
        if (!(cfg.converge_horizon > 0.0)) detail::config_fail("converge.T", "must be > 0");
        for (const auto& v : detail::need(c, "n_steps_list")) {
            const int n = v.get<int>();
            if (n < 1) detail::config_fail("converge.n_steps_list", "entries must be >= 1");
            cfg.converge_steps.push_back(n);
        }
        if (cfg.converge_steps.empty())
            detail::config_fail("converge.n_steps_list", "must be nonempty");
        if (!cfg.payoff_fn)
            detail::config_fail("payoff", "the converge job needs a function payoff",
                                "CSV payoffs cannot be re-sampled across lattices");
    }
    if ((cfg.job == "saddle" || cfg.job == "oracle-check") && cfg.exact_mode)
        detail::config_fail("grid", "the " + cfg.job + " job needs a finite deviation grid");

    cfg.output_dir = j.value("output", std::string("out"));
    cfg.oracle_budget = j.value("oracle_budget", cfg.oracle_budget);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path,
                                    const std::string& job_override = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw parameter_error("cli", "cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text, job_override);
}

namespace detail {

inline double reference_mean_at_level(const LatticeModel& model, const NodeTable<double>& table,
                                      int level) {
    if (level < 0 || level > model.n_steps)
        throw parameter_error("cli", "level must lie in [0, N]");
    std::vector<double> p(1, 1.0);
    for (int t = 0; t < level; ++t) {
        std::vector<double> next(std::size_t(t) + 2, 0.0);
        for (int j = 0; j <= t; ++j) {
            next[std::size_t(j)] += 0.5 * p[std::size_t(j)];
            next[std::size_t(j) + 1] += 0.5 * p[std::size_t(j)];
        }
        p.swap(next);
    }
    double mean = 0.0;
    for (int j = 0; j <= level; ++j) mean += p[std::size_t(j)] * table(level, j);
    return mean;
}

} // namespace detail

struct RunResult {
    int exit_code = 0;
    std::vector<std::string> files;
};

/**
 * Executes one experiment. Artifacts land in out_dir (or the config's
 * output directory), accompanied by a manifest carrying the config hash and
 * tool version. Returns exit code 0 on success, 3 when an invoked invariant
 * check fails; config and budget problems surface as exceptions.
 */
inline RunResult run(const ExperimentConfig& cfg,
                     const std::string& out_dir_override = {},
                     std::optional<long long> seed = std::nullopt) {
    namespace fs = std::filesystem;
    const std::string out_dir = out_dir_override.empty() ? cfg.output_dir : out_dir_override;
    fs::create_directories(out_dir);

    RunResult result;
    nlohmann::json manifest;
    manifest["tool"] = tool_name;
    manifest["version"] = tool_version;
    manifest["job"] = cfg.job;
    manifest["config_hash"] = cfg.config_hash;
    if (seed) manifest["seed"] = *seed;

    auto emit = [&](const std::string& name, const std::string& content) {
        write_text_file(out_dir + "/" + name, content);
        result.files.push_back(name);
    };

    const auto model = build_lattice(cfg.n_steps, cfg.dt);
    PayoffProcess y;
    if (!cfg.payoff_csv.empty()) {
        y.values = load_node_csv(cfg.payoff_csv, model.n_steps);
        y.bound = cfg.payoff_bound;
        for (double v : y.values.raw())
            if (!(std::abs(v) <= y.bound))
                throw bound_violation_error("lattice",
                                            "payoff CSV exceeds the declared bound",
                                            "raise payoff.bound");
    } else if (cfg.payoff_fn) {
        y = payoff_from_function(model, cfg.payoff_fn, cfg.payoff_bound);
    } else if (cfg.job != "converge") {
        throw parameter_error("cli", "config field 'payoff': missing function or csv");
    }

    const double norm_scale = [&] {
        double m = 1.0;
        for (double v : y.values.raw()) m = std::max(m, std::abs(v));
        return m;
    }();
    const double cert_tol = 1e-9 * norm_scale;

    if (cfg.job == "value") {
        const auto surface = cfg.exact_mode
                                 ? robust_value_exact(model, y, cfg.penalty, cfg.nu, cfg.tol_hit)
                                 : robust_value_grid(model, y, cfg.penalty, cfg.grid, cfg.nu,
                                                     cfg.tol_hit);
        bool ok = true;
        for (int t = 0; t <= model.n_steps && ok; ++t)
            for (int j = 0; j <= t; ++j) {
                const double v = surface.v(t, j);
                if (v < y.values(t, j) - cert_tol || v > norm_scale + model.horizon + cert_tol) {
                    ok = false;
                    break;
                }
            }
        emit("payoff.csv", payoff_csv(model, y));
        emit("value.csv", value_csv(model, y, surface.v, surface.stop_region));
        if (!ok) result.exit_code = 3;
    } else if (cfg.job == "saddle") {
        const auto cert = extract_saddle(model, y, cfg.penalty, cfg.grid, 0.05, cfg.tol_hit);
        emit("rbsde.csv", rbsde_csv(model, cert.rbsde));
        emit("theta_star.csv", policy_csv(model, cert.theta_star));
        emit("sigma_star.csv", rule_csv(model, cert.sigma_star));
        nlohmann::json c;
        c["value_root"] = cert.value_root;
        c["middle_value"] = cert.middle_value;
        c["condition_i_margin"] = cert.condition_i_margin;
        c["condition_ii_margin"] = cert.condition_ii_margin;
        c["condition_iii_margin"] = cert.condition_iii_margin;
        c["saddle_left_margin"] = cert.saddle_left_margin;
        c["saddle_right_margin"] = cert.saddle_right_margin;
        c["clipped_nodes"] = cert.clipped_nodes;
        c["clip_fraction"] = cert.clip_fraction;
        c["sigma_star_floor"] = cert.sigma_star.floor;
        c["certified"] = cert.certified(cert_tol);
        emit("certificate.json", c.dump(2) + "\n");
        if (!cert.certified(cert_tol)) result.exit_code = 3;
    } else if (cfg.job == "oracle-check") {
        const auto surface = robust_value_grid(model, y, cfg.penalty, cfg.grid, cfg.nu,
                                               cfg.tol_hit);
        const auto tree = lift_to_full_tree(model, y);
        const auto game = enumerate_game(tree, cfg.penalty, cfg.grid, cfg.nu, cfg.oracle_budget);
        const double dp = detail::reference_mean_at_level(model, surface.v, cfg.nu);
        const auto mm = verify_minimax(game, tree, cfg.penalty, cfg.nu, dp);

        const auto cert = extract_saddle(model, y, cfg.penalty, cfg.grid, 0.05, cfg.tol_hit);
        const auto game0 = cfg.nu == 0
                               ? game
                               : enumerate_game(tree, cfg.penalty, cfg.grid, 0, cfg.oracle_budget);
        const auto sad = verify_saddle_exhaustive(cert, game0, tree, cfg.penalty, cert_tol);

        // witness tables spell out the full rule/policy over history nodes
        const auto rule_table = [&](const EnumeratedGame& g, std::size_t r) {
            nlohmann::json rows = nlohmann::json::array();
            for (int t = 0; t <= tree.n_steps; ++t)
                for (int p = 0; p < (1 << t); ++p)
                    rows.push_back({{"t", t},
                                    {"path", p},
                                    {"stop", int(g.stopping_rules[r][std::size_t(
                                                 tree.node_id(t, p))])}});
            return rows;
        };
        const auto policy_table = [&](const EnumeratedGame& g, long long q) {
            const auto theta = g.decode_policy(tree, q);
            nlohmann::json rows = nlohmann::json::array();
            for (int t = 0; t < tree.n_steps; ++t)
                for (int p = 0; p < (1 << t); ++p)
                    rows.push_back({{"t", t},
                                    {"path", p},
                                    {"theta", theta[std::size_t(tree.node_id(t, p))]}});
            return rows;
        };

        nlohmann::json rep;
        rep["minimax"] = {{"lower", mm.lower},
                          {"upper", mm.upper},
                          {"dp_value", mm.dp_value},
                          {"gap_lower_upper", mm.gap_lower_upper},
                          {"gap_dp", mm.gap_dp},
                          {"pass", mm.pass},
                          {"maximizing_rule", rule_table(game, mm.witness_rule)},
                          {"minimizing_policy", policy_table(game, mm.witness_policy)},
                          {"rule_count", game.stopping_rules.size()},
                          {"policy_count", game.policy_count}};
        rep["saddle"] = {{"middle", sad.middle},
                         {"left_min_slack", sad.left_min_slack},
                         {"right_min_slack", sad.right_min_slack},
                         {"pass", sad.pass},
                         {"worst_rule", rule_table(game0, sad.worst_rule)},
                         {"worst_policy", policy_table(game0, sad.worst_policy)}};
        emit("oracle_report.json", rep.dump(2) + "\n");
        if (!mm.pass || !sad.pass) result.exit_code = 3;
    } else if (cfg.job == "converge") {
        std::string csv = "n_steps,dt,root_value,diff_prev,est_order\n";
        std::vector<double> roots, dts;
        for (int n : cfg.converge_steps) {
            const auto m = build_lattice(n, cfg.converge_horizon / n);
            const auto yn = payoff_from_function(m, cfg.payoff_fn, cfg.payoff_bound);
            const double root =
                cfg.exact_mode
                    ? robust_value_exact(m, yn, cfg.penalty, 0, cfg.tol_hit).v(0, 0)
                    : robust_value_grid(m, yn, cfg.penalty, cfg.grid, 0, cfg.tol_hit).v(0, 0);
            roots.push_back(root);
            dts.push_back(m.dt);
        }
        for (std::size_t i = 0; i < roots.size(); ++i) {
            std::string diff = "", order = "";
            if (i >= 1) diff = format_g15(roots[i] - roots[i - 1]);
            if (i >= 2) {
                const double d1 = std::abs(roots[i - 1] - roots[i - 2]);
                const double d2 = std::abs(roots[i] - roots[i - 1]);
                if (d1 > 0.0 && d2 > 0.0)
                    order = format_g15(std::log(d1 / d2) / std::log(dts[i - 1] / dts[i]));
            }
            csv += std::to_string(cfg.converge_steps[i]) + "," + format_g15(dts[i]) + "," +
                   format_g15(roots[i]) + "," + diff + "," + order + "\n";
        }
        emit("converge.csv", csv);
    } else if (cfg.job == "rho") {
        StoppingRule gamma;
        if (!cfg.rho_gamma_csv.empty()) {
            const auto raw = load_node_csv(cfg.rho_gamma_csv, model.n_steps);
            NodeTable<std::uint8_t> region(model.n_steps, 0);
            for (int t = 0; t <= model.n_steps; ++t)
                for (int j = 0; j <= t; ++j) region(t, j) = raw(t, j) != 0.0 ? 1 : 0;
            gamma = first_hitting_rule(model, region, cfg.rho_gamma_floor);
        } else {
            gamma = first_hitting_rule(model, NodeTable<std::uint8_t>(model.n_steps, 0), cfg.nu);
        }
        NodeTable<double> xi;
        if (!cfg.xi_csv.empty()) {
            xi = load_node_csv(cfg.xi_csv, model.n_steps);
        } else {
            const auto xp = payoff_from_function(model, cfg.xi_fn, cfg.xi_bound);
            xi = xp.values;
        }
        const auto rho = evaluate_rho(model, cfg.penalty, cfg.grid, cfg.nu, gamma, xi);
        std::string csv = "j,state,rho\n";
        for (int j = 0; j <= cfg.nu; ++j)
            csv += std::to_string(j) + "," + format_g15(model.state(cfg.nu, j)) + "," +
                   format_g15(rho[std::size_t(j)]) + "\n";
        emit("rho.csv", csv);
    }

    manifest["files"] = result.files;
    write_text_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
    result.files.push_back("manifest.json");
    return result;
}

} // namespace rstop
