#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

using namespace rstop;
using testsup::OneStepFixture;

TEST_CASE("stopping-rule counts match the closed-form recursion") {
    CHECK(count_stopping_rules(1, 0) == 2);
    CHECK(count_stopping_rules(2, 0) == 5);
    CHECK(count_stopping_rules(3, 0) == 26);
    CHECK(count_stopping_rules(4, 0) == 677);
    CHECK(count_stopping_rules(2, 1) == 4); // no stop allowed at the root

    std::mt19937_64 rng(211);
    const auto spec = make_entropic(1.0);
    const ThetaGrid grid{1.0, {-0.5, 0.0, 0.5}};
    for (int n = 1; n <= 4; ++n) {
        const auto m = build_lattice(n, 0.2);
        const auto tree = lift_to_full_tree(m, testsup::random_payoff(m, rng));
        for (int nu = 0; nu <= std::min(n, 2); ++nu) {
            const auto game = enumerate_game(tree, spec, grid, nu, 20'000'000);
            CHECK(static_cast<long long>(game.stopping_rules.size()) ==
                  count_stopping_rules(n, nu));
            long long policies = 1;
            for (std::size_t i = 0; i < game.tiltable_nodes.size(); ++i) policies *= 3;
            CHECK(game.policy_count == policies);
        }
    }
}

TEST_CASE("every enumerated rule stops every path") {
    std::mt19937_64 rng(223);
    const auto m = build_lattice(3, 0.3);
    const auto tree = lift_to_full_tree(m, testsup::random_payoff(m, rng));
    const auto game = enumerate_game(tree, make_entropic(1.0), ThetaGrid{1.0, {0.0}}, 1);
    for (const auto& rule : game.stopping_rules)
        for (int p = 0; p < tree.path_count(); ++p) {
            const int s = detail::rule_stop_level(tree, rule, p);
            CHECK(s >= 1);
            CHECK(s <= 3);
        }
}

TEST_CASE("policy budget is enforced") {
    const auto m = build_lattice(5, 0.04);
    std::mt19937_64 rng(227);
    const auto tree = lift_to_full_tree(m, testsup::random_payoff(m, rng));
    CHECK_THROWS_AS(
        enumerate_game(tree, make_entropic(1.0), ThetaGrid{1.0, {-0.5, 0.0, 0.5}}, 0),
        budget_error);
    // a singleton grid stays inside any budget
    CHECK_NOTHROW(enumerate_game(tree, make_entropic(1.0), ThetaGrid{1.0, {0.0}}, 0));
}

TEST_CASE("full-tree construction guards") {
    CHECK_THROWS_AS(make_full_tree(6, 0.1, {}), parameter_error);
    CHECK_THROWS_AS(make_full_tree(1, 0.1, {{0.0}}), shape_error);
    CHECK_THROWS_AS(make_full_tree(1, 0.1, {{0.0}, {1.0}}), shape_error);
    CHECK_NOTHROW(make_full_tree(1, 0.1, {{0.0}, {1.0, -1.0}}));
}

TEST_CASE("brute force on the singleton zero grid is the classical value") {
    std::mt19937_64 rng(229);
    const auto spec = make_entropic(1.0);
    for (int rep = 0; rep < 5; ++rep) {
        const auto m = build_lattice(3, 1.0 / 3.0);
        const auto y = testsup::random_payoff(m, rng);
        const auto tree = lift_to_full_tree(m, y);
        const auto game = enumerate_game(tree, spec, ThetaGrid{1.0, {0.0}}, 0);
        const auto res = brute_force_values(game, tree, spec, 0);
        const double book = testsup::textbook_snell(m, y)(0, 0);
        CHECK(res.lower == doctest::Approx(book).epsilon(1e-12));
        CHECK(res.upper == doctest::Approx(book).epsilon(1e-12));
    }
}

TEST_CASE("brute force on the worked one-step instance") {
    OneStepFixture fx;
    const auto tree = lift_to_full_tree(fx.model, fx.y);
    const auto game = enumerate_game(tree, fx.spec, fx.grid, 0);
    CHECK(game.stopping_rules.size() == 2);
    CHECK(game.policy_count == 3);
    const auto res = brute_force_values(game, tree, fx.spec, 0);
    CHECK(res.lower == doctest::Approx(0.375));
    CHECK(res.upper == doctest::Approx(0.375));
}

TEST_CASE("flat payoffs value to the constant") {
    const auto m = build_lattice(3, 0.25);
    PayoffProcess y;
    y.values = NodeTable<double>(3, 0.6);
    y.bound = 0.6;
    const auto tree = lift_to_full_tree(m, y);
    const auto spec = make_entropic(1.0);
    const auto game = enumerate_game(tree, spec, ThetaGrid{1.0, {-0.5, 0.0, 0.5}}, 0);
    const auto res = brute_force_values(game, tree, spec, 0);
    CHECK(res.lower == doctest::Approx(0.6));
    CHECK(res.upper == doctest::Approx(0.6));
}

TEST_CASE("weak duality and the markov reduction") {
    std::mt19937_64 rng(233);
    const auto spec = make_entropic(1.0);
    const ThetaGrid grid{1.0, {-0.9, -0.45, 0.0, 0.45, 0.9}};
    for (int rep = 0; rep < 5; ++rep) {
        const auto m = build_lattice(3, 1.0 / 3.0);
        const auto y = testsup::random_payoff(m, rng);
        const auto tree = lift_to_full_tree(m, y);
        const auto game = enumerate_game(tree, spec, grid, 0);
        const auto res = brute_force_values(game, tree, spec, 0);
        CHECK(res.lower <= res.upper + 1e-12);
        // history-indexed policies gain nothing over the node-indexed solver
        const auto vs = robust_value_grid(m, y, spec, grid);
        CHECK(res.lower == doctest::Approx(vs.v(0, 0)).epsilon(1e-10));
        CHECK(res.upper == doctest::Approx(vs.v(0, 0)).epsilon(1e-10));
    }
}

TEST_CASE("oracle values are invariant under branch relabeling") {
    std::mt19937_64 rng(239);
    const auto m = build_lattice(3, 0.4);
    const auto y = testsup::random_payoff(m, rng);
    auto mirrored = y;
    for (int t = 0; t <= 3; ++t)
        for (int j = 0; j <= t; ++j) mirrored.values(t, j) = y.values(t, t - j);
    const auto spec = make_entropic(1.0);
    const ThetaGrid grid{1.0, {-0.5, 0.0, 0.5}}; // symmetric menu
    const auto game_a =
        enumerate_game(lift_to_full_tree(m, y), spec, grid, 0);
    const auto game_b =
        enumerate_game(lift_to_full_tree(m, mirrored), spec, grid, 0);
    const auto res_a = brute_force_values(game_a, lift_to_full_tree(m, y), spec, 0);
    const auto res_b = brute_force_values(game_b, lift_to_full_tree(m, mirrored), spec, 0);
    CHECK(res_a.lower == doctest::Approx(res_b.lower).epsilon(1e-12));
    CHECK(res_a.upper == doctest::Approx(res_b.upper).epsilon(1e-12));
}

TEST_CASE("verify_minimax reports clean passes and corrupted values") {
    OneStepFixture fx;
    const auto tree = lift_to_full_tree(fx.model, fx.y);
    const auto game = enumerate_game(tree, fx.spec, fx.grid, 0);

    const auto good = verify_minimax(game, tree, fx.spec, 0, 0.375);
    CHECK(good.pass);
    CHECK(good.gap_lower_upper == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(good.gap_dp == doctest::Approx(0.0).epsilon(1e-14));

    const auto bad = verify_minimax(game, tree, fx.spec, 0, 0.375 + 1e-3);
    CHECK_FALSE(bad.pass);
    CHECK(bad.gap_dp == doctest::Approx(1e-3));
}

TEST_CASE("path probabilities are martingale-consistent on the tree") {
    std::mt19937_64 rng(241);
    const auto m = build_lattice(4, 0.2);
    const auto tree = lift_to_full_tree(m, testsup::random_payoff(m, rng));
    const auto spec = make_entropic(1.0);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<double> theta(std::size_t(tree.node_count()), 0.0);
        for (auto& th : theta) th = u(rng);
        const auto data = detail::policy_path_data(tree, spec, theta, 0);
        double total = 0.0;
        for (double p : data.prob) total += p;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("sweeps are byte-identical across worker counts") {
    std::mt19937_64 rng(251);
    const auto m = build_lattice(3, 1.0 / 3.0);
    const auto y = testsup::random_payoff(m, rng);
    const auto spec = make_entropic(1.0);
    const ThetaGrid grid{1.0, {-0.9, -0.45, 0.0, 0.45, 0.9}};
    const auto tree = lift_to_full_tree(m, y);
    const auto game = enumerate_game(tree, spec, grid, 0);

    setenv("ROBUST_STOPPER_THREADS", "1", 1);
    const auto serial = brute_force_values(game, tree, spec, 0);
    setenv("ROBUST_STOPPER_THREADS", "3", 1);
    const auto threaded = brute_force_values(game, tree, spec, 0);
    unsetenv("ROBUST_STOPPER_THREADS");

    CHECK(serial.lower == threaded.lower);
    CHECK(serial.upper == threaded.upper);
    CHECK(serial.best_rule == threaded.best_rule);
    CHECK(serial.best_policy == threaded.best_policy);
}

TEST_CASE("exhaustive saddle check on the worked instance") {
    OneStepFixture fx;
    const auto cert = extract_saddle(fx.model, fx.y, fx.spec, fx.grid);
    const auto tree = lift_to_full_tree(fx.model, fx.y);
    const auto game = enumerate_game(tree, fx.spec, fx.grid, 0);
    const auto rep = verify_saddle_exhaustive(cert, game, tree, fx.spec);
    CHECK(rep.pass);
    CHECK(rep.middle == doctest::Approx(0.375));
    CHECK(rep.left_min_slack == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rep.right_min_slack == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zeroing theta* breaks the saddle on a tilt-sensitive instance") {
    OneStepFixture fx;
    auto cert = extract_saddle(fx.model, fx.y, fx.spec, fx.grid);
    cert.theta_star = zero_policy(fx.model);
    const auto tree = lift_to_full_tree(fx.model, fx.y);
    const auto game = enumerate_game(tree, fx.spec, fx.grid, 0);
    const auto rep = verify_saddle_exhaustive(cert, game, tree, fx.spec);
    // middle becomes E_P[Y_{sigma*}] = 0.5; the adversary pushes below it
    CHECK_FALSE(rep.pass);
    CHECK(rep.right_min_slack < -1e-9);
}

TEST_CASE("saddle check accepts flat payoffs under any policy") {
    const auto m = build_lattice(3, 0.25);
    PayoffProcess y;
    y.values = NodeTable<double>(3, -0.2);
    y.bound = 0.2;
    const auto spec = make_entropic(1.0);
    const ThetaGrid grid{1.0, {-0.5, 0.0, 0.5}};
    const auto cert = extract_saddle(m, y, spec, grid);
    const auto tree = lift_to_full_tree(m, y);
    const auto game = enumerate_game(tree, spec, grid, 0);
    CHECK(verify_saddle_exhaustive(cert, game, tree, spec).pass);
}
