#pragma once

// Shared fixtures and independent reference implementations for the test
// suites. Everything here stays deliberately naive: the point is to check
// the library against code that shares none of its internals.

#include "rstop/rstop.hpp"

#include <random>
#include <vector>

namespace testsup {

using namespace rstop;

inline PayoffProcess random_payoff(const LatticeModel& model, std::mt19937_64& rng,
                                   double bound = 1.0) {
    std::uniform_real_distribution<double> u(-bound, bound);
    PayoffProcess y;
    y.values = NodeTable<double>(model.n_steps, 0.0);
    y.bound = bound;
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j) y.values(t, j) = u(rng);
    return y;
}

inline NodeTable<std::uint8_t> random_region(const LatticeModel& model, std::mt19937_64& rng,
                                             double density = 0.3) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    NodeTable<std::uint8_t> region(model.n_steps, 0);
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j) region(t, j) = u(rng) < density ? 1 : 0;
    return region;
}

inline ControlPolicy random_policy(const LatticeModel& model, std::mt19937_64& rng,
                                   double tilt_cap, int active_from = 0) {
    const double cap = std::min(tilt_cap, max_admissible_tilt(model));
    std::uniform_real_distribution<double> u(-cap, cap);
    ControlPolicy p = zero_policy(model, active_from);
    for (int t = active_from; t < model.n_steps; ++t)
        for (int j = 0; j <= t; ++j) p.theta(t, j) = u(rng);
    return p;
}

/// Textbook American backward induction under the half-half measure.
inline NodeTable<double> textbook_snell(const LatticeModel& model, const PayoffProcess& y) {
    NodeTable<double> v(model.n_steps, 0.0);
    for (int j = 0; j <= model.n_steps; ++j) v(model.n_steps, j) = y.values(model.n_steps, j);
    for (int t = model.n_steps - 1; t >= 0; --t)
        for (int j = 0; j <= t; ++j)
            v(t, j) = std::max(y.values(t, j), 0.5 * (v(t + 1, j + 1) + v(t + 1, j)));
    return v;
}

/// Direct entropic recursion V_t = max(Y_t, -r log E[exp(-V_{t+1}/r)]).
inline NodeTable<double> entropic_recursion(const LatticeModel& model, const PayoffProcess& y,
                                            double r) {
    NodeTable<double> v(model.n_steps, 0.0);
    for (int j = 0; j <= model.n_steps; ++j) v(model.n_steps, j) = y.values(model.n_steps, j);
    for (int t = model.n_steps - 1; t >= 0; --t)
        for (int j = 0; j <= t; ++j) {
            const double cert = -r * std::log(0.5 * std::exp(-v(t + 1, j + 1) / r) +
                                              0.5 * std::exp(-v(t + 1, j) / r));
            v(t, j) = std::max(y.values(t, j), cert);
        }
    return v;
}

/// The worked one-step instance used across the suites: Y(root) = 0,
/// Y(up) = 1, Y(down) = 0, entropic r = 1, robust value 0.375.
struct OneStepFixture {
    LatticeModel model = build_lattice(1, 1.0);
    PayoffProcess y;
    PenaltySpec spec = make_entropic(1.0);
    ThetaGrid grid{1.0, {-0.5, 0.0, 0.5}};

    OneStepFixture() {
        y.values = NodeTable<double>(1, 0.0);
        y.values(0, 0) = 0.0;
        y.values(1, 1) = 1.0;
        y.values(1, 0) = 0.0;
        y.bound = 1.0;
    }
};

/// All 2^N up/down move sequences.
inline std::vector<std::vector<int>> all_paths(int n_steps) {
    std::vector<std::vector<int>> paths;
    for (int mask = 0; mask < (1 << n_steps); ++mask) {
        std::vector<int> moves(static_cast<std::size_t>(n_steps));
        for (int t = 0; t < n_steps; ++t) moves[std::size_t(t)] = (mask >> t) & 1;
        paths.push_back(std::move(moves));
    }
    return paths;
}

} // namespace testsup
