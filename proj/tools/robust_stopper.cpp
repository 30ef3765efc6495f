#include "rstop/driver.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>

namespace {

void print_error(const rstop::error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", e.module().c_str(), e.what());
    if (!e.hint().empty()) std::fprintf(stderr, "hint: %s\n", e.hint().c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"robust optimal stopping on a binomial lattice: game values, "
                 "reflected backward equations, saddle points, brute-force checks"};
    app.require_subcommand(1);

    const std::pair<const char*, const char*> jobs[] = {
        {"value", "solve the robust value surface and stop region"},
        {"saddle", "solve the reflected equation and certify the saddle pair"},
        {"oracle-check", "compare the solver against exhaustive enumeration"},
        {"converge", "sweep n_steps and tabulate root-value convergence"},
        {"rho", "evaluate the risk measure rho_{nu,gamma}(xi) per level-nu node"},
    };

    std::string config_path, out_dir;
    long long seed = 0;
    bool seed_given = false;
    for (const auto& [name, desc] : jobs) {
        auto* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory (overrides the config)");
        sub->add_option("--seed", seed, "seed recorded in the manifest")
            ->each([&](const std::string&) { seed_given = true; });
    }

    CLI11_PARSE(app, argc, argv);
    const std::string job = app.get_subcommands().front()->get_name();

    try {
        const auto cfg = rstop::load_config(config_path, job);
        const auto result = rstop::run(
            cfg, out_dir, seed_given ? std::optional<long long>(seed) : std::nullopt);
        return result.exit_code;
    } catch (const rstop::budget_error& e) {
        print_error(e);
        return 4;
    } catch (const rstop::error& e) {
        print_error(e);
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
