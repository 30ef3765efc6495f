#pragma once

#include "rstop/lattice.hpp"
#include "rstop/penalty.hpp"
#include "rstop/rbsde.hpp"
#include "rstop/stopping.hpp"

#include <cstdlib>
#include <limits>
#include <string>
#include <thread>
#include <vector>

namespace rstop {

/// Worker count for the enumeration sweeps; ROBUST_STOPPER_THREADS caps it.
inline unsigned worker_count() {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("ROBUST_STOPPER_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) hw = std::min(hw, unsigned(v));
    }
    return hw;
}

/**
 * Non-recombining binary tree over full path histories, the exhaustive
 * analog of the filtration. History nodes are (t, p) with p the bitmask of
 * up-moves at steps 0..t-1; flat id = 2^t - 1 + p.
 */
struct FullTree {
    static constexpr int hard_cap = 5;

    int n_steps = 0;
    double dt = 0.0;
    double sqrt_dt = 0.0;
    std::vector<std::vector<double>> payoff; // payoff[t][p]

    int node_id(int t, int p) const { return (1 << t) - 1 + p; }
    int node_count() const { return (1 << (n_steps + 1)) - 1; }
    int path_count() const { return 1 << n_steps; }
};

/// Lifts a recombining payoff to full histories: payoff(t, p) = Y(t, popcount(p)).
inline FullTree lift_to_full_tree(const LatticeModel& model, const PayoffProcess& y) {
    if (model.n_steps > FullTree::hard_cap)
        throw parameter_error("oracle", "full tree supports at most N = " +
                                            std::to_string(FullTree::hard_cap));
    if (y.values.max_level() != model.n_steps)
        throw shape_error("oracle", "payoff does not match the lattice");
    FullTree tree;
    tree.n_steps = model.n_steps;
    tree.dt = model.dt;
    tree.sqrt_dt = model.sqrt_dt;
    tree.payoff.resize(std::size_t(model.n_steps) + 1);
    for (int t = 0; t <= model.n_steps; ++t) {
        tree.payoff[std::size_t(t)].resize(std::size_t(1) << t);
        for (int p = 0; p < (1 << t); ++p)
            tree.payoff[std::size_t(t)][std::size_t(p)] =
                y.values(t, __builtin_popcount(unsigned(p)));
    }
    return tree;
}

/// Full tree with history-supplied payoffs (path-dependent allowed).
inline FullTree make_full_tree(int n_steps, double dt,
                               std::vector<std::vector<double>> payoff) {
    if (n_steps < 1 || n_steps > FullTree::hard_cap)
        throw parameter_error("oracle", "full tree needs 1 <= N <= " +
                                            std::to_string(FullTree::hard_cap));
    if (!(dt > 0.0)) throw parameter_error("oracle", "dt must be > 0");
    if (int(payoff.size()) != n_steps + 1)
        throw shape_error("oracle", "payoff must have N+1 levels");
    for (int t = 0; t <= n_steps; ++t)
        if (payoff[std::size_t(t)].size() != (std::size_t(1) << t))
            throw shape_error("oracle", "payoff level " + std::to_string(t) +
                                            " must have 2^t entries");
    FullTree tree;
    tree.n_steps = n_steps;
    tree.dt = dt;
    tree.sqrt_dt = std::sqrt(dt);
    tree.payoff = std::move(payoff);
    return tree;
}

/// Closed-form count of adapted stopping rules with floor nu:
/// c(leaf) = 1, c(node) = [1 +] c(left) * c(right), the 1 only at levels >= nu.
inline long long count_stopping_rules(int n_steps, int nu) {
    std::vector<long long> c(std::size_t(n_steps) + 1);
    c[std::size_t(n_steps)] = 1;
    for (int t = n_steps - 1; t >= 0; --t) {
        const long long sub = c[std::size_t(t) + 1] * c[std::size_t(t) + 1];
        c[std::size_t(t)] = t >= nu ? 1 + sub : sub;
    }
    return c[0];
}

/**
 * Exhaustively enumerated game: every adapted stopping rule (as a decision
 * flag per history node, canonical 1 below an earlier stop) and every
 * history-indexed tilt assignment from the grid, the latter addressed by
 * index and decoded on demand.
 */
struct EnumeratedGame {
    int nu = 0;
    std::vector<double> grid;
    std::vector<std::vector<std::uint8_t>> stopping_rules;
    std::vector<int> tiltable_nodes; // flat ids of internal nodes at levels >= nu
    long long policy_count = 0;

    /// Tilt per internal history node for the given policy index; nodes
    /// below nu stay at zero.
    std::vector<double> decode_policy(const FullTree& tree, long long index) const {
        std::vector<double> theta(std::size_t(tree.node_count()), 0.0);
        decode_policy_into(index, theta);
        return theta;
    }

    /// Buffer-reusing variant for hot sweeps; theta must already have
    /// node_count entries and zeros outside the tiltable set.
    void decode_policy_into(long long index, std::vector<double>& theta) const {
        long long rest = index;
        for (int id : tiltable_nodes) {
            theta[std::size_t(id)] = grid[std::size_t(rest % int(grid.size()))];
            rest /= int(grid.size());
        }
    }
};

namespace detail {

inline void collect_rules(const FullTree& tree, int nu, int t, int p,
                          std::vector<std::vector<std::uint8_t>>& out) {
    const std::size_t nodes = std::size_t(tree.node_count());
    if (t == tree.n_steps) {
        out.assign(1, std::vector<std::uint8_t>(nodes, 1));
        return;
    }
    std::vector<std::vector<std::uint8_t>> left, right;
    collect_rules(tree, nu, t + 1, p | (1 << t), left);
    collect_rules(tree, nu, t + 1, p, right);
    out.clear();
    out.reserve((t >= nu ? 1 : 0) + left.size() * right.size());
    if (t >= nu) out.emplace_back(nodes, 1); // stop here; deeper decisions are moot
    for (const auto& l : left)
        for (const auto& r : right) {
            std::vector<std::uint8_t> merged(nodes, 1);
            for (std::size_t i = 0; i < nodes; ++i) merged[i] = l[i] & r[i];
            merged[std::size_t(tree.node_id(t, p))] = 0;
            out.push_back(std::move(merged));
        }
}

} // namespace detail

inline EnumeratedGame enumerate_game(const FullTree& tree, const PenaltySpec& spec,
                                     const ThetaGrid& grid, int nu,
                                     long long policy_budget = 10'000'000) {
    if (nu < 0 || nu > tree.n_steps)
        throw parameter_error("oracle", "nu must lie in [0, N]");
    for (double th : grid.values) {
        if (std::abs(th) * tree.sqrt_dt > 1.0 - tilt_margin)
            throw parameter_error("oracle",
                                  "grid tilt " + std::to_string(th) + " is inadmissible");
        double worst_f = 0.0;
        for (int t = 0; t < tree.n_steps; ++t) worst_f = std::max(worst_f, f_eval(spec, t, th));
        if (std::abs(th) > grid.k || worst_f > grid.k)
            throw parameter_error("oracle", "grid tilt " + std::to_string(th) +
                                                " violates the truncated-family bound");
    }

    EnumeratedGame game;
    game.nu = nu;
    game.grid = grid.values;
    for (int t = nu; t < tree.n_steps; ++t)
        for (int p = 0; p < (1 << t); ++p) game.tiltable_nodes.push_back(tree.node_id(t, p));

    long long count = 1;
    for (std::size_t i = 0; i < game.tiltable_nodes.size(); ++i) {
        count *= static_cast<long long>(game.grid.size());
        if (count > policy_budget) {
            const long long rules = count_stopping_rules(tree.n_steps, nu);
            throw budget_error(
                "oracle",
                "policy count " + std::to_string(game.grid.size()) + "^" +
                    std::to_string(game.tiltable_nodes.size()) + " exceeds the budget of " +
                    std::to_string(policy_budget) + " (rule count " + std::to_string(rules) + ")",
                "shrink the grid, lower N, or raise the budget");
        }
    }
    game.policy_count = count;
    detail::collect_rules(tree, nu, 0, 0, game.stopping_rules);
    return game;
}

namespace detail {

/// Stop level of a rule on a given leaf path (first flagged node).
inline int rule_stop_level(const FullTree& tree, const std::vector<std::uint8_t>& rule, int path) {
    for (int t = 0; t <= tree.n_steps; ++t)
        if (rule[std::size_t(tree.node_id(t, path & ((1 << t) - 1)))]) return t;
    return tree.n_steps;
}

/// Path probabilities and cumulative penalty prefixes under one policy.
/// prefix_at(p, t) = sum of f(s, theta) dt over steps s < t at levels
/// >= accrue_from, stored flat so sweeps can reuse the buffers.
struct PolicyPathData {
    int levels = 0; // N+1
    std::vector<double> prob;   // per path
    std::vector<double> prefix; // path * levels + t

    double prefix_at(int path, int level) const {
        return prefix[std::size_t(path) * std::size_t(levels) + std::size_t(level)];
    }
};

inline void policy_path_data_into(const FullTree& tree, const PenaltySpec& spec,
                                  const std::vector<double>& theta, int accrue_from,
                                  PolicyPathData& data) {
    const int paths = tree.path_count();
    data.levels = tree.n_steps + 1;
    data.prob.resize(std::size_t(paths));
    data.prefix.resize(std::size_t(paths) * std::size_t(data.levels));
    for (int p = 0; p < paths; ++p) {
        double prob = 1.0, pen = 0.0;
        double* row = data.prefix.data() + std::size_t(p) * std::size_t(data.levels);
        for (int t = 0; t < tree.n_steps; ++t) {
            row[t] = pen;
            const double th = theta[std::size_t(tree.node_id(t, p & ((1 << t) - 1)))];
            const double s = th * tree.sqrt_dt;
            const bool up = (p >> t) & 1;
            prob *= up ? (1.0 + s) / 2.0 : (1.0 - s) / 2.0;
            if (t >= accrue_from) pen += f_eval(spec, t, th) * tree.dt;
        }
        row[tree.n_steps] = pen;
        data.prob[std::size_t(p)] = prob;
    }
}

inline PolicyPathData policy_path_data(const FullTree& tree, const PenaltySpec& spec,
                                       const std::vector<double>& theta, int accrue_from) {
    PolicyPathData data;
    policy_path_data_into(tree, spec, theta, accrue_from, data);
    return data;
}

/// Exact expected payoff sum over paths: E_Q[ Y at the stop node + penalty ].
inline double strategy_value(const FullTree& tree, const PolicyPathData& data,
                             const std::vector<int>& stop_levels) {
    double total = 0.0;
    for (int p = 0; p < tree.path_count(); ++p) {
        const int s = stop_levels[std::size_t(p)];
        total += data.prob[std::size_t(p)] *
                 (tree.payoff[std::size_t(s)][std::size_t(p & ((1 << s) - 1))] +
                  data.prefix_at(p, s));
    }
    return total;
}

} // namespace detail

struct BruteForceResult {
    double lower = 0.0; // max over rules of min over policies
    double upper = 0.0; // min over policies of max over rules
    std::size_t best_rule = 0;       // maximizer on the lower side
    long long best_policy = 0;       // minimizer on the upper side
};

/**
 * Exact sup-inf and inf-sup of the game by complete enumeration, every
 * expectation computed in exact path arithmetic. Policy sweeps split across
 * workers; reductions stay deterministic (ranges merge in ascending order).
 */
inline BruteForceResult brute_force_values(const EnumeratedGame& game, const FullTree& tree,
                                           const PenaltySpec& spec, int nu) {
    const std::size_t n_rules = game.stopping_rules.size();
    const int paths = tree.path_count();

    // stop levels and stop payoffs per rule/path, shared by every policy
    std::vector<std::vector<int>> stop_levels(n_rules, std::vector<int>(std::size_t(paths)));
    for (std::size_t r = 0; r < n_rules; ++r)
        for (int p = 0; p < paths; ++p)
            stop_levels[r][std::size_t(p)] =
                detail::rule_stop_level(tree, game.stopping_rules[r], p);

    struct Partial {
        std::vector<double> min_per_rule;
        std::vector<long long> argmin_per_rule;
        double upper = 0.0;
        long long upper_policy = -1;
    };

    auto sweep = [&](long long begin, long long end) {
        Partial part;
        part.min_per_rule.assign(n_rules, std::numeric_limits<double>::infinity());
        part.argmin_per_rule.assign(n_rules, -1);
        part.upper = std::numeric_limits<double>::infinity();
        std::vector<double> theta(std::size_t(tree.node_count()), 0.0);
        detail::PolicyPathData data;
        for (long long q = begin; q < end; ++q) {
            game.decode_policy_into(q, theta);
            detail::policy_path_data_into(tree, spec, theta, nu, data);
            double worst = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < n_rules; ++r) {
                const double val = detail::strategy_value(tree, data, stop_levels[r]);
                if (val < part.min_per_rule[r]) {
                    part.min_per_rule[r] = val;
                    part.argmin_per_rule[r] = q;
                }
                worst = std::max(worst, val);
            }
            if (worst < part.upper) {
                part.upper = worst;
                part.upper_policy = q;
            }
        }
        return part;
    };

    const unsigned workers = unsigned(
        std::min<long long>(game.policy_count, static_cast<long long>(worker_count())));
    std::vector<Partial> parts(workers);
    if (workers <= 1) {
        parts[0] = sweep(0, game.policy_count);
    } else {
        std::vector<std::thread> pool;
        const long long chunk = (game.policy_count + workers - 1) / workers;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                const long long begin = chunk * w;
                const long long end = std::min<long long>(begin + chunk, game.policy_count);
                parts[w] = sweep(begin, end);
            });
        for (auto& th : pool) th.join();
    }

    Partial total = std::move(parts[0]);
    for (unsigned w = 1; w < workers; ++w) {
        for (std::size_t r = 0; r < n_rules; ++r)
            if (parts[w].min_per_rule[r] < total.min_per_rule[r]) {
                total.min_per_rule[r] = parts[w].min_per_rule[r];
                total.argmin_per_rule[r] = parts[w].argmin_per_rule[r];
            }
        if (parts[w].upper < total.upper) {
            total.upper = parts[w].upper;
            total.upper_policy = parts[w].upper_policy;
        }
    }

    BruteForceResult res;
    res.upper = total.upper;
    res.best_policy = total.upper_policy;
    res.lower = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < n_rules; ++r)
        if (total.min_per_rule[r] > res.lower) {
            res.lower = total.min_per_rule[r];
            res.best_rule = r;
        }
    return res;
}

struct MinimaxReport {
    double lower = 0.0;
    double upper = 0.0;
    double dp_value = 0.0;
    double gap_lower_upper = 0.0;
    double gap_dp = 0.0;
    bool pass = false;
    std::size_t witness_rule = 0;
    long long witness_policy = 0;
};

/// Checks the minimax equality and the DP value against the enumerated
/// truth. Failures are reported with witnesses, never thrown.
inline MinimaxReport verify_minimax(const EnumeratedGame& game, const FullTree& tree,
                                    const PenaltySpec& spec, int nu, double value_from_dp,
                                    double tol = 1e-10) {
    const auto brute = brute_force_values(game, tree, spec, nu);
    MinimaxReport rep;
    rep.lower = brute.lower;
    rep.upper = brute.upper;
    rep.dp_value = value_from_dp;
    rep.gap_lower_upper = std::abs(brute.upper - brute.lower);
    rep.gap_dp = std::abs(value_from_dp - brute.lower);
    rep.pass = rep.gap_lower_upper <= tol && rep.gap_dp <= tol;
    rep.witness_rule = brute.best_rule;
    rep.witness_policy = brute.best_policy;
    return rep;
}

struct SaddleExhaustiveReport {
    double middle = 0.0;           // E_{Q*}[Y^{Q*}_{sigma*}], exact path arithmetic
    double left_min_slack = 0.0;   // min over rules of middle - E_{Q*}[Y^{Q*}_nu]
    double right_min_slack = 0.0;  // min over policies of E_Q[Y^Q_{sigma*}] - middle
    bool pass = false;
    std::size_t worst_rule = 0;
    long long worst_policy = 0;
};

/**
 * Checks both saddle inequalities against every enumerated deviation:
 * the left against every stopping rule under Q*, the right against every
 * history-indexed grid policy at sigma*. The Markov pair from the lattice is
 * lifted to histories first.
 */
inline SaddleExhaustiveReport verify_saddle_exhaustive(const SaddleCertificate& cert,
                                                       const EnumeratedGame& game,
                                                       const FullTree& tree,
                                                       const PenaltySpec& spec,
                                                       double tol = 1e-9) {
    const int paths = tree.path_count();

    std::vector<double> theta_star(std::size_t(tree.node_count()), 0.0);
    for (int t = 0; t < tree.n_steps; ++t)
        for (int p = 0; p < (1 << t); ++p)
            theta_star[std::size_t(tree.node_id(t, p))] =
                cert.theta_star.theta(t, __builtin_popcount(unsigned(p)));

    std::vector<int> sigma_levels(static_cast<std::size_t>(paths));
    for (int p = 0; p < paths; ++p) {
        int level = tree.n_steps;
        int j = 0;
        for (int t = 0; t <= tree.n_steps; ++t) {
            if (cert.sigma_star.stops_at(t, j)) {
                level = t;
                break;
            }
            if (t < tree.n_steps) j += (p >> t) & 1;
        }
        sigma_levels[std::size_t(p)] = level;
    }

    const auto star_data = detail::policy_path_data(tree, spec, theta_star, 0);
    SaddleExhaustiveReport rep;
    rep.middle = detail::strategy_value(tree, star_data, sigma_levels);

    rep.left_min_slack = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < game.stopping_rules.size(); ++r) {
        std::vector<int> levels(static_cast<std::size_t>(paths));
        for (int p = 0; p < paths; ++p)
            levels[std::size_t(p)] = detail::rule_stop_level(tree, game.stopping_rules[r], p);
        const double slack = rep.middle - detail::strategy_value(tree, star_data, levels);
        if (slack < rep.left_min_slack) {
            rep.left_min_slack = slack;
            rep.worst_rule = r;
        }
    }

    rep.right_min_slack = std::numeric_limits<double>::infinity();
    {
        std::vector<double> theta(std::size_t(tree.node_count()), 0.0);
        detail::PolicyPathData data;
        for (long long q = 0; q < game.policy_count; ++q) {
            game.decode_policy_into(q, theta);
            detail::policy_path_data_into(tree, spec, theta, 0, data);
            const double slack = detail::strategy_value(tree, data, sigma_levels) - rep.middle;
            if (slack < rep.right_min_slack) {
                rep.right_min_slack = slack;
                rep.worst_policy = q;
            }
        }
    }

    rep.pass = rep.left_min_slack >= -tol && rep.right_min_slack >= -tol;
    return rep;
}

} // namespace rstop
