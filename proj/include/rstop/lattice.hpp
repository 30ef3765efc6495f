#pragma once

#include "rstop/errors.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

namespace rstop {

/**
 * Recombining binomial discretization of a one-dimensional Brownian
 * filtration. Nodes are addressed as (t, j) with t in 0..N and j in 0..t
 * counting up-moves; the Brownian state at (t, j) is (2j - t) * sqrt(dt).
 * Node (t, j) branches to (t+1, j+1) on an up-move and (t+1, j) on a
 * down-move, each with probability 1/2 under the reference measure.
 */
struct LatticeModel {
    int n_steps = 0;     // N >= 1
    double dt = 0.0;     // step size, > 0
    double sqrt_dt = 0.0;
    double horizon = 0.0; // T = N * dt

    int levels() const { return n_steps + 1; }
    int node_count() const { return (n_steps + 1) * (n_steps + 2) / 2; }
    double state(int t, int j) const { return (2 * j - t) * sqrt_dt; }
    double time(int t) const { return t * dt; }
};

/// Flat storage for one value per lattice node up to max_level (inclusive).
/// Levels are laid out consecutively: offset(t) = t*(t+1)/2.
template <typename T>
class NodeTable {
public:
    NodeTable() = default;
    NodeTable(int max_level, T fill = T{})
        : max_level_(max_level), data_(std::size_t((max_level + 1) * (max_level + 2) / 2), fill) {}

    int max_level() const { return max_level_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(int t, int j) { return data_[offset(t) + std::size_t(j)]; }
    const T& operator()(int t, int j) const { return data_[offset(t) + std::size_t(j)]; }

    bool same_shape(const NodeTable& other) const { return max_level_ == other.max_level_; }

    const std::vector<T>& raw() const { return data_; }
    std::vector<T>& raw() { return data_; }

private:
    static std::size_t offset(int t) { return std::size_t(t) * std::size_t(t + 1) / 2; }

    int max_level_ = -1;
    std::vector<T> data_;
};

/// Bounded reward process Y on the lattice.
struct PayoffProcess {
    NodeTable<double> values; // one value per node, levels 0..N
    double bound = 0.0;       // sup-norm bound, >= max |value|
};

/**
 * Node-indexed stopping rule with absorption semantics: a path stops at the
 * first node at level >= floor whose decision flag is set, and is forced to
 * stop at level N. Decisions below the floor are ignored.
 */
struct StoppingRule {
    NodeTable<std::uint8_t> decision; // levels 0..N, terminal level all true
    int floor = 0;

    bool stops_at(int t, int j) const {
        if (t == decision.max_level()) return true;
        return t >= floor && decision(t, j) != 0;
    }
};

inline LatticeModel build_lattice(int n_steps, double dt) {
    if (n_steps < 1)
        throw parameter_error("lattice", "n_steps must be >= 1, got " + std::to_string(n_steps));
    if (!(dt > 0.0))
        throw parameter_error("lattice", "dt must be > 0, got " + std::to_string(dt));
    LatticeModel m;
    m.n_steps = n_steps;
    m.dt = dt;
    m.sqrt_dt = std::sqrt(dt);
    m.horizon = n_steps * dt;
    return m;
}

/// Evaluates g(t*dt, state) at every node. Rejects g that exceeds the
/// declared bound anywhere on the lattice; Y must stay bounded.
inline PayoffProcess payoff_from_function(const LatticeModel& model,
                                          const std::function<double(double, double)>& g,
                                          double bound) {
    PayoffProcess y;
    y.values = NodeTable<double>(model.n_steps);
    y.bound = bound;
    for (int t = 0; t <= model.n_steps; ++t) {
        for (int j = 0; j <= t; ++j) {
            const double v = g(model.time(t), model.state(t, j));
            if (!(std::abs(v) <= bound))
                throw bound_violation_error(
                    "lattice", "payoff value " + std::to_string(v) + " at node (" +
                                   std::to_string(t) + "," + std::to_string(j) +
                                   ") exceeds bound " + std::to_string(bound),
                    "raise the declared bound or change the payoff function");
            y.values(t, j) = v;
        }
    }
    return y;
}

/// First hitting rule of a node region at levels >= floor, with a forced
/// terminal stop so every path stops by level N.
inline StoppingRule first_hitting_rule(const LatticeModel& model,
                                       const NodeTable<std::uint8_t>& region, int floor) {
    if (region.max_level() != model.n_steps)
        throw shape_error("lattice", "region table does not match the lattice");
    if (floor < 0 || floor > model.n_steps)
        throw parameter_error("lattice", "floor must lie in [0, N]");
    StoppingRule rule;
    rule.floor = floor;
    rule.decision = region;
    for (int j = 0; j <= model.n_steps; ++j) rule.decision(model.n_steps, j) = 1;
    return rule;
}

/// Nodes reachable by at least one path that has not stopped at any earlier
/// level. The rule's actual stop nodes are those that are both reachable and
/// flagged by stops_at.
inline NodeTable<std::uint8_t> reachable_unstopped(const LatticeModel& model,
                                                   const StoppingRule& rule) {
    if (rule.decision.max_level() != model.n_steps)
        throw shape_error("lattice", "stopping rule does not match the lattice");
    NodeTable<std::uint8_t> active(model.n_steps, 0);
    active(0, 0) = 1;
    for (int t = 0; t < model.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            if (active(t, j) && !rule.stops_at(t, j)) {
                active(t + 1, j + 1) = 1;
                active(t + 1, j) = 1;
            }
    return active;
}

/// Stop level of `rule` along the path with the given up/down moves
/// (moves[t] = 1 means up at step t). Mostly used by tests and the oracle.
inline int stop_level_on_path(const LatticeModel& model, const StoppingRule& rule,
                              const std::vector<int>& moves) {
    int j = 0;
    for (int t = 0; t <= model.n_steps; ++t) {
        if (rule.stops_at(t, j)) return t;
        if (t < model.n_steps) j += moves[std::size_t(t)] ? 1 : 0;
    }
    return model.n_steps;
}

} // namespace rstop
