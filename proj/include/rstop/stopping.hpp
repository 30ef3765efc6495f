#pragma once

#include "rstop/lattice.hpp"
#include "rstop/measures.hpp"
#include "rstop/penalty.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace rstop {

/// Membership tolerance for hit regions {value = payoff}. Backward induction
/// runs in floating point, so the test is absolute-relative hybrid.
inline double hit_tolerance(const PayoffProcess& y) {
    double norm = 0.0;
    for (double v : y.values.raw()) norm = std::max(norm, std::abs(v));
    return 1e-9 * std::max(1.0, norm);
}

/// Finite adversary menu: tilt values available at every node, together with
/// the truncation level k they are certified against (|theta| v f <= k).
struct ThetaGrid {
    double k = 0.0;
    std::vector<double> values;
};

inline void validate_grid(const LatticeModel& model, const PenaltySpec& spec,
                          const ThetaGrid& grid) {
    if (grid.values.empty()) throw parameter_error("stopping", "theta grid must be nonempty");
    const double cap = 1.0 - tilt_margin;
    for (double th : grid.values) {
        if (std::abs(th) * model.sqrt_dt > cap)
            throw parameter_error("stopping", "grid tilt " + std::to_string(th) +
                                                  " is inadmissible on this lattice");
        double worst_f = 0.0;
        for (int t = 0; t < model.n_steps; ++t) worst_f = std::max(worst_f, f_eval(spec, t, th));
        if (std::abs(th) > grid.k || worst_f > grid.k)
            throw parameter_error("stopping",
                                  "grid tilt " + std::to_string(th) +
                                      " violates the truncated-family bound k = " +
                                      std::to_string(grid.k));
    }
}

namespace detail {

/// Grid indices ordered by the argmin tie-break: smallest |theta| first,
/// negative before positive on equal magnitude.
inline std::vector<std::size_t> tie_break_order(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ma = std::abs(values[a]), mb = std::abs(values[b]);
        if (ma != mb) return ma < mb;
        return values[a] < values[b];
    });
    return order;
}

/// Backward induction with absorption at the rule's stop nodes, where the
/// value is read from xi. cont(t, j, up, down) supplies the continuation.
template <typename Cont>
NodeTable<double> backward_stopped(const LatticeModel& model, const StoppingRule& rule,
                                   const NodeTable<double>& xi, Cont&& cont) {
    if (rule.decision.max_level() != model.n_steps || xi.max_level() != model.n_steps)
        throw shape_error("stopping", "rule or payoff table does not match the lattice");
    NodeTable<double> w(model.n_steps, 0.0);
    for (int t = model.n_steps; t >= 0; --t)
        for (int j = 0; j <= t; ++j)
            w(t, j) = rule.stops_at(t, j) ? xi(t, j) : cont(t, j, w(t + 1, j + 1), w(t + 1, j));
    return w;
}

} // namespace detail

/// Per-measure Snell envelope R and its contact region {R = Y}.
struct SnellResult {
    NodeTable<double> r;
    NodeTable<std::uint8_t> tau_region;
    double tol_hit = 0.0;
};

enum class ValueMode { grid, exact };

/// Robust game value V with its contact region {V = Y}. In grid mode the
/// minimizing tilt per node is recorded as the adversary's worst-case
/// response.
struct ValueSurface {
    NodeTable<double> v;
    NodeTable<std::uint8_t> stop_region;
    ValueMode mode = ValueMode::exact;
    ThetaGrid grid;               // grid mode only
    NodeTable<double> worst_tilt; // grid mode only, levels 0..N-1
    double tol_hit = 0.0;
};

/**
 * Snell envelope of Y plus running penalty under a fixed policy:
 * R_N = Y_N, R_t = max(Y_t, f(t, theta) dt + tilted expectation of R_{t+1}).
 * The contact region {R = Y} yields the optimal stopping time from nu.
 */
inline SnellResult snell_envelope(const LatticeModel& model, const PayoffProcess& y,
                                  const PenaltySpec& spec, const ControlPolicy& policy,
                                  int nu = 0, double tol_hit_override = -1.0) {
    (void)nu; // the envelope is node-local; nu only selects the hitting floor downstream
    if (y.values.max_level() != model.n_steps)
        throw shape_error("stopping", "payoff does not match the lattice");
    validate_policy(model, policy);
    SnellResult out;
    out.tol_hit = tol_hit_override >= 0.0 ? tol_hit_override : hit_tolerance(y);
    out.r = NodeTable<double>(model.n_steps, 0.0);
    out.tau_region = NodeTable<std::uint8_t>(model.n_steps, 0);
    for (int j = 0; j <= model.n_steps; ++j) {
        out.r(model.n_steps, j) = y.values(model.n_steps, j);
        out.tau_region(model.n_steps, j) = 1;
    }
    for (int t = model.n_steps - 1; t >= 0; --t) {
        for (int j = 0; j <= t; ++j) {
            const double th = policy.theta(t, j);
            const auto q = tilt_probabilities(th, model.dt);
            const double cont = f_eval(spec, t, th) * model.dt + q.up * out.r(t + 1, j + 1) +
                                q.down * out.r(t + 1, j);
            const double stop = y.values(t, j);
            out.r(t, j) = std::max(stop, cont);
            out.tau_region(t, j) = std::abs(out.r(t, j) - stop) <= out.tol_hit ? 1 : 0;
        }
    }
    return out;
}

/**
 * Robust value against the finite adversary menu:
 * V_t = max(Y_t, min over theta in grid of f dt + tilted expectation).
 * Ties resolve toward the smallest |theta|, negative first.
 */
inline ValueSurface robust_value_grid(const LatticeModel& model, const PayoffProcess& y,
                                      const PenaltySpec& spec, const ThetaGrid& grid,
                                      int nu = 0, double tol_hit_override = -1.0) {
    (void)nu;
    if (y.values.max_level() != model.n_steps)
        throw shape_error("stopping", "payoff does not match the lattice");
    validate_grid(model, spec, grid);
    const auto order = detail::tie_break_order(grid.values);
    ValueSurface out;
    out.mode = ValueMode::grid;
    out.grid = grid;
    out.tol_hit = tol_hit_override >= 0.0 ? tol_hit_override : hit_tolerance(y);
    out.v = NodeTable<double>(model.n_steps, 0.0);
    out.stop_region = NodeTable<std::uint8_t>(model.n_steps, 0);
    out.worst_tilt = NodeTable<double>(model.n_steps - 1, 0.0);
    for (int j = 0; j <= model.n_steps; ++j) {
        out.v(model.n_steps, j) = y.values(model.n_steps, j);
        out.stop_region(model.n_steps, j) = 1;
    }
    for (int t = model.n_steps - 1; t >= 0; --t) {
        for (int j = 0; j <= t; ++j) {
            double best = 0.0, best_theta = 0.0;
            bool first = true;
            for (std::size_t idx : order) {
                const double th = grid.values[idx];
                const auto q = tilt_probabilities(th, model.dt);
                const double cand = f_eval(spec, t, th) * model.dt +
                                    q.up * out.v(t + 1, j + 1) + q.down * out.v(t + 1, j);
                if (first || cand < best) {
                    best = cand;
                    best_theta = th;
                    first = false;
                }
            }
            const double stop = y.values(t, j);
            out.v(t, j) = std::max(stop, best);
            out.worst_tilt(t, j) = best_theta;
            out.stop_region(t, j) = std::abs(out.v(t, j) - stop) <= out.tol_hit ? 1 : 0;
        }
    }
    return out;
}

/**
 * Robust value against the full measure family, via the conjugate transform:
 * with Z_t = (V_up - V_down) / (2 sqrt(dt)),
 * V_t = max(Y_t, (V_up + V_down)/2 + f~(t, Z_t) dt).
 * This is the continuum-argmin form of the grid recursion, since
 * f dt + tilted mean = mean + dt (f(theta) + theta Z).
 */
inline ValueSurface robust_value_exact(const LatticeModel& model, const PayoffProcess& y,
                                       const PenaltySpec& spec, int nu = 0,
                                       double tol_hit_override = -1.0) {
    (void)nu;
    if (y.values.max_level() != model.n_steps)
        throw shape_error("stopping", "payoff does not match the lattice");
    ValueSurface out;
    out.mode = ValueMode::exact;
    out.tol_hit = tol_hit_override >= 0.0 ? tol_hit_override : hit_tolerance(y);
    out.v = NodeTable<double>(model.n_steps, 0.0);
    out.stop_region = NodeTable<std::uint8_t>(model.n_steps, 0);
    for (int j = 0; j <= model.n_steps; ++j) {
        out.v(model.n_steps, j) = y.values(model.n_steps, j);
        out.stop_region(model.n_steps, j) = 1;
    }
    for (int t = model.n_steps - 1; t >= 0; --t) {
        for (int j = 0; j <= t; ++j) {
            const double up = out.v(t + 1, j + 1), down = out.v(t + 1, j);
            const double slope = (up - down) / (2.0 * model.sqrt_dt);
            const double cont = 0.5 * (up + down) + f_conjugate(spec, t, slope) * model.dt;
            const double stop = y.values(t, j);
            out.v(t, j) = std::max(stop, cont);
            out.stop_region(t, j) = std::abs(out.v(t, j) - stop) <= out.tol_hit ? 1 : 0;
        }
    }
    return out;
}

/// First time at or after nu that the value surface touches the payoff.
inline StoppingRule tau_V(const LatticeModel& model, const ValueSurface& vsurface,
                          const PayoffProcess& y, int nu = 0) {
    if (!vsurface.v.same_shape(y.values))
        throw shape_error("stopping", "value surface and payoff live on different lattices");
    return first_hitting_rule(model, vsurface.stop_region, nu);
}

/**
 * Approximating family tau_k over increasing adversary menus: each rule is
 * the first hit of {V_grid_k = Y} from nu. Menus must be nested so the
 * family is pathwise non-increasing; the last rule approximates the limit.
 */
inline std::vector<StoppingRule> tau_family(const LatticeModel& model, const PayoffProcess& y,
                                            const PenaltySpec& spec,
                                            const std::vector<ThetaGrid>& grids, int nu = 0) {
    if (grids.empty()) throw parameter_error("stopping", "tau_family needs at least one grid");
    for (std::size_t i = 1; i < grids.size(); ++i) {
        if (grids[i].k < grids[i - 1].k)
            throw parameter_error("stopping", "grid bounds k must be non-decreasing");
        for (double th : grids[i - 1].values)
            if (std::find(grids[i].values.begin(), grids[i].values.end(), th) ==
                grids[i].values.end())
                throw parameter_error("stopping",
                                      "grids must be nested: tilt " + std::to_string(th) +
                                          " missing from grid " + std::to_string(i));
    }
    std::vector<StoppingRule> out;
    out.reserve(grids.size());
    for (const auto& g : grids)
        out.push_back(first_hitting_rule(model, robust_value_grid(model, y, spec, g).stop_region, nu));
    return out;
}

/**
 * Expected payoff of the strategy (policy, stop) at every level-nu node:
 * E_Q[ Y at the stopped node + sum of f(t, theta) dt over steps from nu ].
 */
inline std::vector<double> evaluate_strategy(const LatticeModel& model, const PayoffProcess& y,
                                             const PenaltySpec& spec, const ControlPolicy& policy,
                                             const StoppingRule& stop, int nu = 0) {
    validate_policy(model, policy);
    if (stop.floor < nu)
        throw parameter_error("stopping", "stopping rule floor must be >= nu");
    const auto w = detail::backward_stopped(
        model, stop, y.values, [&](int t, int j, double up_w, double down_w) {
            const double th = policy.theta(t, j);
            const auto q = tilt_probabilities(th, model.dt);
            const double cost = t >= nu ? f_eval(spec, t, th) * model.dt : 0.0;
            return cost + q.up * up_w + q.down * down_w;
        });
    std::vector<double> slice(std::size_t(nu) + 1);
    for (int j = 0; j <= nu; ++j) slice[std::size_t(j)] = w(nu, j);
    return slice;
}

/**
 * Risk-measure evaluation at every level-nu node:
 * rho_{nu,gamma}(xi) = max over grid policies of E_Q[ -xi - sum f dt ].
 * The maximum over all node-indexed grid policies is taken exactly by
 * dynamic programming.
 */
inline std::vector<double> evaluate_rho(const LatticeModel& model, const PenaltySpec& spec,
                                        const ThetaGrid& grid, int nu, const StoppingRule& gamma,
                                        const NodeTable<double>& xi) {
    validate_grid(model, spec, grid);
    if (xi.max_level() != model.n_steps)
        throw shape_error("stopping", "xi table does not match the lattice");
    if (gamma.floor < nu)
        throw parameter_error("stopping", "gamma must not stop before nu");
    NodeTable<double> neg_xi(model.n_steps, 0.0);
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j) neg_xi(t, j) = -xi(t, j);
    const auto w = detail::backward_stopped(
        model, gamma, neg_xi, [&](int t, int j, double up_w, double down_w) {
            (void)j;
            double best = 0.0;
            bool first = true;
            for (double th : grid.values) {
                const auto q = tilt_probabilities(th, model.dt);
                const double cost = t >= nu ? f_eval(spec, t, th) * model.dt : 0.0;
                const double cand = -cost + q.up * up_w + q.down * down_w;
                if (first || cand > best) {
                    best = cand;
                    first = false;
                }
            }
            return best;
        });
    std::vector<double> slice(std::size_t(nu) + 1);
    for (int j = 0; j <= nu; ++j) slice[std::size_t(j)] = w(nu, j);
    return slice;
}

/**
 * Exact minimum over all node-indexed grid policies of
 * E_Q[ xi at the rule's stop node + sum of f dt over steps from accrue_from ],
 * as a full node table. The per-node minimization is the adversary's best
 * response; rectangularity makes the dynamic program exact.
 */
inline NodeTable<double> adversarial_stopped_value(const LatticeModel& model,
                                                   const PenaltySpec& spec, const ThetaGrid& grid,
                                                   const StoppingRule& rule,
                                                   const NodeTable<double>& xi,
                                                   int accrue_from = 0) {
    validate_grid(model, spec, grid);
    return detail::backward_stopped(model, rule, xi,
                                    [&](int t, int j, double up_w, double down_w) {
                                        (void)j;
                                        double best = 0.0;
                                        bool first = true;
                                        for (double th : grid.values) {
                                            const auto q = tilt_probabilities(th, model.dt);
                                            const double cost =
                                                t >= accrue_from ? f_eval(spec, t, th) * model.dt
                                                                 : 0.0;
                                            const double cand =
                                                cost + q.up * up_w + q.down * down_w;
                                            if (first || cand < best) {
                                                best = cand;
                                                first = false;
                                            }
                                        }
                                        return best;
                                    });
}

/// Fixed-policy companion of adversarial_stopped_value.
inline NodeTable<double> expected_stopped_value(const LatticeModel& model,
                                                const PenaltySpec& spec,
                                                const ControlPolicy& policy,
                                                const StoppingRule& rule,
                                                const NodeTable<double>& xi,
                                                int accrue_from = 0) {
    validate_policy(model, policy);
    return detail::backward_stopped(
        model, rule, xi, [&](int t, int j, double up_w, double down_w) {
            const double th = policy.theta(t, j);
            const auto q = tilt_probabilities(th, model.dt);
            const double cost = t >= accrue_from ? f_eval(spec, t, th) * model.dt : 0.0;
            return cost + q.up * up_w + q.down * down_w;
        });
}

} // namespace rstop
