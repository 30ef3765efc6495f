#pragma once

#include "rstop/lattice.hpp"
#include "rstop/penalty.hpp"

#include <optional>
#include <string>
#include <variant>

namespace rstop {

/// Keeps every one-step probability strictly inside (0, 1) so the tilted
/// measure stays equivalent to the reference.
inline constexpr double tilt_margin = 1e-6;

/// Largest admissible |theta| on the given lattice.
inline double max_admissible_tilt(const LatticeModel& model) {
    return (1.0 - tilt_margin) / model.sqrt_dt;
}

/**
 * Predictable drift tilt per node. theta(t, j) governs the step t -> t+1,
 * lives on levels 0..N-1, and is forced to 0 at levels below active_from
 * (the policy agrees with the reference measure before then).
 */
struct ControlPolicy {
    NodeTable<double> theta;
    int active_from = 0;
};

/// Node likelihood ratios z(t, j) = Q(node) / P(node) of the tilted measure
/// against the reference, z(root) = 1.
struct MeasureDensity {
    NodeTable<double> z;
};

struct TiltProbabilities {
    double up = 0.5;
    double down = 0.5;
};

/// One-step probabilities (1 +- theta*sqrt(dt)) / 2 of the linear tilt.
/// The tilted mean of the Brownian increment is exactly theta*dt.
inline TiltProbabilities tilt_probabilities(double theta_value, double dt) {
    if (!(dt > 0.0)) throw parameter_error("measures", "dt must be > 0");
    const double s = theta_value * std::sqrt(dt);
    if (std::abs(s) > 1.0 - tilt_margin)
        throw parameter_error("measures",
                              "|theta|*sqrt(dt) = " + std::to_string(std::abs(s)) +
                                  " exceeds 1 - tilt_margin",
                              "shrink the tilt or refine the lattice step");
    return {(1.0 + s) / 2.0, (1.0 - s) / 2.0};
}

inline void validate_policy(const LatticeModel& model, const ControlPolicy& policy) {
    if (policy.theta.max_level() != model.n_steps - 1)
        throw shape_error("measures", "policy tilt table must cover levels 0..N-1");
    if (policy.active_from < 0 || policy.active_from > model.n_steps)
        throw parameter_error("measures", "active_from must lie in [0, N]");
    const double cap = 1.0 - tilt_margin;
    for (int t = 0; t < model.n_steps; ++t)
        for (int j = 0; j <= t; ++j) {
            const double s = policy.theta(t, j) * model.sqrt_dt;
            if (std::abs(s) > cap)
                throw parameter_error("measures",
                                      "tilt at node (" + std::to_string(t) + "," +
                                          std::to_string(j) + ") violates |theta|*sqrt(dt) <= " +
                                          std::to_string(cap));
            if (t < policy.active_from && policy.theta(t, j) != 0.0)
                throw parameter_error("measures",
                                      "tilt must vanish at levels below active_from");
        }
}

inline ControlPolicy zero_policy(const LatticeModel& model, int active_from = 0) {
    ControlPolicy p;
    p.theta = NodeTable<double>(model.n_steps - 1, 0.0);
    p.active_from = active_from;
    return p;
}

inline ControlPolicy constant_policy(const LatticeModel& model, double theta_value,
                                     int active_from = 0) {
    ControlPolicy p = zero_policy(model, active_from);
    for (int t = active_from; t < model.n_steps; ++t)
        for (int j = 0; j <= t; ++j) p.theta(t, j) = theta_value;
    validate_policy(model, p);
    return p;
}

/**
 * Node likelihood ratios of the measure induced by the policy. Forward
 * Chapman-Kolmogorov on ratios: a child combines its parents' contributions
 * with binomial weights j_c/(t+1) and (t+1-j_c)/(t+1), which reduces to
 * child = parent * 2 * q along single-parent branches. The reference-measure
 * mean of z is 1 at every level.
 */
inline MeasureDensity density_process(const LatticeModel& model, const ControlPolicy& policy) {
    validate_policy(model, policy);
    MeasureDensity d;
    d.z = NodeTable<double>(model.n_steps, 0.0);
    d.z(0, 0) = 1.0;
    for (int t = 0; t < model.n_steps; ++t) {
        for (int jc = 0; jc <= t + 1; ++jc) {
            double acc = 0.0;
            if (jc >= 1) { // up-parent (t, jc-1)
                const auto q = tilt_probabilities(policy.theta(t, jc - 1), model.dt);
                acc += (double(jc) / double(t + 1)) * d.z(t, jc - 1) * 2.0 * q.up;
            }
            if (jc <= t) { // down-parent (t, jc)
                const auto q = tilt_probabilities(policy.theta(t, jc), model.dt);
                acc += (double(t + 1 - jc) / double(t + 1)) * d.z(t, jc) * 2.0 * q.down;
            }
            d.z(t + 1, jc) = acc;
        }
    }
    return d;
}

/// Reference-measure mean of the density at one level; expect 1.
inline double density_level_mean(const LatticeModel& model, const MeasureDensity& density,
                                 int level) {
    if (level < 0 || level > model.n_steps)
        throw parameter_error("measures", "level must lie in [0, N]");
    // node probabilities under the reference measure, by stable recursion
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
    for (int j = 0; j <= level; ++j) mean += p[std::size_t(j)] * density.z(level, j);
    return mean;
}

/**
 * Per-node indicator "the rule has stopped at or before this node" under
 * absorption semantics. Throws when the answer differs across paths into the
 * same node, i.e. the rule's past is not expressible on the recombining
 * lattice.
 */
inline NodeTable<std::uint8_t> stopped_indicator(const LatticeModel& model,
                                                 const StoppingRule& rule) {
    if (rule.decision.max_level() != model.n_steps)
        throw shape_error("measures", "stopping rule does not match the lattice");
    NodeTable<std::uint8_t> stopped(model.n_steps, 0);
    stopped(0, 0) = rule.stops_at(0, 0) ? 1 : 0;
    for (int t = 1; t <= model.n_steps; ++t) {
        for (int j = 0; j <= t; ++j) {
            const bool hit = rule.stops_at(t, j);
            bool from_up = false, from_down = false, have_up = false, have_down = false;
            if (j >= 1) {
                have_up = true;
                from_up = stopped(t - 1, j - 1) != 0;
            }
            if (j <= t - 1) {
                have_down = true;
                from_down = stopped(t - 1, j) != 0;
            }
            if (have_up && have_down && from_up != from_down && !hit)
                throw unsupported_rule_error(
                    "measures",
                    "stopping rule past is path-dependent at node (" + std::to_string(t) + "," +
                        std::to_string(j) + ")",
                    "use a node-region rule whose hit set recombines, or the full-tree oracle");
            const bool inherited = (have_up && from_up) || (have_down && from_down);
            stopped(t, j) = (hit || inherited) ? 1 : 0;
        }
    }
    return stopped;
}

/**
 * Pasting of two policies along a stopping rule: steps entered strictly
 * before gamma stops follow policy_q; the step at which gamma stops and all
 * later steps follow policy_qtilde.
 */
inline ControlPolicy paste(const LatticeModel& model, const ControlPolicy& policy_q,
                           const ControlPolicy& policy_qtilde, const StoppingRule& gamma) {
    validate_policy(model, policy_q);
    validate_policy(model, policy_qtilde);
    if (policy_q.active_from != policy_qtilde.active_from)
        throw parameter_error("measures", "pasted policies must share active_from");
    if (policy_q.active_from > gamma.floor)
        throw parameter_error("measures", "active_from must not exceed the pasting rule's floor");
    const auto stopped = stopped_indicator(model, gamma);
    ControlPolicy out = policy_q;
    for (int t = 0; t < model.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            if (stopped(t, j)) out.theta(t, j) = policy_qtilde.theta(t, j);
    return out;
}

/// Zeroes the tilt wherever |theta| > k or f(t, theta) > k, the discrete
/// analog of restricting the measure to the truncated family.
inline ControlPolicy truncate_policy(const LatticeModel& model, const ControlPolicy& policy,
                                     const PenaltySpec& spec, double k) {
    if (!(k > 0.0)) throw parameter_error("measures", "truncation level k must be > 0");
    ControlPolicy out = policy;
    for (int t = 0; t < model.n_steps; ++t)
        for (int j = 0; j <= t; ++j) {
            const double th = out.theta(t, j);
            if (std::abs(th) > k || f_eval(spec, t, th) > k) out.theta(t, j) = 0.0;
        }
    return out;
}

/// Either a deterministic time index or a node-region stopping rule.
using StartPoint = std::variant<int, StoppingRule>;

/**
 * Tilted-measure expectation, from the root, of the accumulated penalty
 * sum f(t, theta_t) * dt over steps in [start, stop). When assert_qk is set,
 * rejects costs exceeding k*T.
 */
inline double penalty_cost(const LatticeModel& model, const PenaltySpec& spec,
                           const ControlPolicy& policy, const StartPoint& start,
                           const StoppingRule& stop,
                           std::optional<double> assert_qk = std::nullopt) {
    validate_policy(model, policy);
    if (stop.decision.max_level() != model.n_steps)
        throw shape_error("measures", "stopping rule does not match the lattice");
    NodeTable<std::uint8_t> accruing(model.n_steps, 1);
    if (const int* t0 = std::get_if<int>(&start)) {
        for (int t = 0; t <= model.n_steps; ++t)
            for (int j = 0; j <= t; ++j) accruing(t, j) = t >= *t0 ? 1 : 0;
    } else {
        accruing = stopped_indicator(model, std::get<StoppingRule>(start));
    }

    NodeTable<double> w(model.n_steps, 0.0);
    for (int t = model.n_steps - 1; t >= 0; --t) {
        for (int j = 0; j <= t; ++j) {
            if (stop.stops_at(t, j)) {
                w(t, j) = 0.0;
                continue;
            }
            const double th = policy.theta(t, j);
            const auto q = tilt_probabilities(th, model.dt);
            const double step_cost = accruing(t, j) ? f_eval(spec, t, th) * model.dt : 0.0;
            w(t, j) = step_cost + q.up * w(t + 1, j + 1) + q.down * w(t + 1, j);
        }
    }
    const double cost = w(0, 0);
    if (assert_qk && cost > *assert_qk * model.horizon + 1e-9)
        throw parameter_error("measures",
                              "accumulated penalty " + std::to_string(cost) +
                                  " exceeds the truncated-family bound k*T = " +
                                  std::to_string(*assert_qk * model.horizon));
    return cost;
}

} // namespace rstop
