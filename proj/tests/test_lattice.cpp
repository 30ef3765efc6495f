#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

using namespace rstop;

TEST_CASE("build_lattice basic geometry") {
    const auto m = build_lattice(1, 1.0);
    CHECK(m.node_count() == 3);
    CHECK(m.state(0, 0) == doctest::Approx(0.0));
    CHECK(m.state(1, 0) == doctest::Approx(-1.0));
    CHECK(m.state(1, 1) == doctest::Approx(1.0));
    CHECK(m.horizon == doctest::Approx(1.0));

    const auto m2 = build_lattice(2, 0.25);
    CHECK(m2.node_count() == 6);
    CHECK(m2.state(2, 0) == doctest::Approx(-1.0));
    CHECK(m2.state(2, 1) == doctest::Approx(0.0));
    CHECK(m2.state(2, 2) == doctest::Approx(1.0));
}

TEST_CASE("build_lattice rejects bad parameters") {
    CHECK_THROWS_AS(build_lattice(0, 1.0), parameter_error);
    CHECK_THROWS_AS(build_lattice(-3, 1.0), parameter_error);
    CHECK_THROWS_AS(build_lattice(2, 0.0), parameter_error);
    CHECK_THROWS_AS(build_lattice(2, -0.5), parameter_error);
}

TEST_CASE("node count formula across sizes") {
    for (int n = 1; n <= 12; ++n) {
        const auto m = build_lattice(n, 0.1);
        CHECK(m.node_count() == (n + 1) * (n + 2) / 2);
        // level t has t+1 nodes; recombination means state depends on (t, j) only
        CHECK(m.state(n, n) == doctest::Approx(n * m.sqrt_dt));
        CHECK(m.state(n, 0) == doctest::Approx(-n * m.sqrt_dt));
    }
}

TEST_CASE("payoff_from_function evaluates g at every node") {
    const auto m = build_lattice(1, 1.0);

    const auto flat = payoff_from_function(m, [](double, double) { return 3.0; }, 3.0);
    CHECK(flat.values(0, 0) == 3.0);
    CHECK(flat.values(1, 0) == 3.0);
    CHECK(flat.values(1, 1) == 3.0);
    CHECK(flat.bound == 3.0);

    const auto put = payoff_from_function(
        m, [](double, double x) { return std::max(1.0 - x, 0.0); }, 2.0);
    CHECK(put.values(0, 0) == doctest::Approx(1.0));
    CHECK(put.values(1, 1) == doctest::Approx(0.0));
    CHECK(put.values(1, 0) == doctest::Approx(2.0));
}

TEST_CASE("payoff_from_function rejects bound violations") {
    const auto m = build_lattice(1, 1.0);
    CHECK_THROWS_AS(payoff_from_function(m, [](double, double x) { return x; }, 0.5),
                    bound_violation_error);
}

TEST_CASE("payoff read-back reproduces g exactly") {
    const auto m = build_lattice(7, 0.13);
    auto g = [](double t, double x) { return std::sin(3.0 * x) + 0.25 * t; };
    const auto y = payoff_from_function(m, g, 3.0);
    for (int t = 0; t <= m.n_steps; ++t)
        for (int j = 0; j <= t; ++j) CHECK(y.values(t, j) == g(m.time(t), m.state(t, j)));
}

TEST_CASE("first_hitting_rule immediate and forced stops") {
    const auto m = build_lattice(3, 0.5);

    NodeTable<std::uint8_t> all_true(3, 1);
    const auto now = first_hitting_rule(m, all_true, 0);
    for (const auto& path : testsup::all_paths(3)) CHECK(stop_level_on_path(m, now, path) == 0);

    NodeTable<std::uint8_t> all_false(3, 0);
    const auto never = first_hitting_rule(m, all_false, 0);
    for (const auto& path : testsup::all_paths(3)) CHECK(stop_level_on_path(m, never, path) == 3);

    NodeTable<std::uint8_t> level2(3, 0);
    for (int j = 0; j <= 2; ++j) level2(2, j) = 1;
    const auto mid = first_hitting_rule(m, level2, 1);
    for (const auto& path : testsup::all_paths(3)) CHECK(stop_level_on_path(m, mid, path) == 2);
}

TEST_CASE("floor suppresses early decisions") {
    const auto m = build_lattice(3, 0.5);
    NodeTable<std::uint8_t> all_true(3, 1);
    const auto rule = first_hitting_rule(m, all_true, 2);
    for (const auto& path : testsup::all_paths(3)) CHECK(stop_level_on_path(m, rule, path) == 2);
}

TEST_CASE("every first-hitting rule stops each path by N") {
    std::mt19937_64 rng(17);
    const auto m = build_lattice(5, 0.2);
    for (int rep = 0; rep < 25; ++rep) {
        const auto rule = first_hitting_rule(m, testsup::random_region(m, rng), rep % 6);
        for (const auto& path : testsup::all_paths(5)) {
            const int s = stop_level_on_path(m, rule, path);
            CHECK(s >= std::min(rule.floor, m.n_steps));
            CHECK(s <= m.n_steps);
        }
    }
}

TEST_CASE("reachable_unstopped matches path walks") {
    std::mt19937_64 rng(23);
    const auto m = build_lattice(4, 0.3);
    for (int rep = 0; rep < 10; ++rep) {
        const auto rule = first_hitting_rule(m, testsup::random_region(m, rng), 0);
        const auto active = reachable_unstopped(m, rule);
        NodeTable<std::uint8_t> seen(m.n_steps, 0);
        for (const auto& path : testsup::all_paths(4)) {
            int j = 0;
            for (int t = 0; t <= m.n_steps; ++t) {
                seen(t, j) = 1;
                if (rule.stops_at(t, j)) break;
                if (t < m.n_steps) j += path[std::size_t(t)];
            }
        }
        for (int t = 0; t <= m.n_steps; ++t)
            for (int j = 0; j <= t; ++j) CHECK(int(active(t, j)) == int(seen(t, j)));
    }
}

TEST_CASE("region shape mismatch is rejected") {
    const auto m = build_lattice(3, 0.5);
    NodeTable<std::uint8_t> wrong(2, 0);
    CHECK_THROWS_AS(first_hitting_rule(m, wrong, 0), shape_error);
    CHECK_THROWS_AS(first_hitting_rule(m, NodeTable<std::uint8_t>(3, 0), 5), parameter_error);
}
