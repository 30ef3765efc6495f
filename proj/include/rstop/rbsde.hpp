#pragma once

#include "rstop/lattice.hpp"
#include "rstop/measures.hpp"
#include "rstop/penalty.hpp"
#include "rstop/stopping.hpp"

#include <cmath>
#include <vector>

namespace rstop {

/**
 * Solution triple of the discrete reflected backward equation: value Gamma
 * on levels 0..N, martingale-representation slope Z and reflection
 * increments dK on levels 0..N-1. dK is nonnegative and positive only where
 * Gamma sits on the obstacle (flat-off, exact by construction).
 */
struct RBSDESolution {
    NodeTable<double> gamma;
    NodeTable<double> z;
    NodeTable<double> dk;
};

/**
 * Explicit backward scheme for the reflected equation with terminal
 * condition xi, generator h(t, j, value, slope) and obstacle S:
 *   E_t   = (Gamma_up + Gamma_down) / 2
 *   Z_t   = (Gamma_up - Gamma_down) / (2 sqrt(dt))
 *   hat_t = E_t + h(t, j, E_t, Z_t) dt
 *   Gamma_t = max(S_t, hat_t),  dK_t = Gamma_t - hat_t.
 */
template <typename Generator>
RBSDESolution solve_rbsde(const LatticeModel& model, const std::vector<double>& xi,
                          Generator&& h, const PayoffProcess& obstacle) {
    const int n = model.n_steps;
    if (int(xi.size()) != n + 1)
        throw shape_error("rbsde", "terminal condition must have N+1 entries");
    if (obstacle.values.max_level() != n)
        throw shape_error("rbsde", "obstacle does not match the lattice");
    for (int j = 0; j <= n; ++j)
        if (xi[std::size_t(j)] < obstacle.values(n, j))
            throw obstacle_violation_error(
                "rbsde", "terminal condition dips below the obstacle at node (" +
                             std::to_string(n) + "," + std::to_string(j) + ")",
                "raise xi or lower the obstacle at the terminal level");

    RBSDESolution sol;
    sol.gamma = NodeTable<double>(n, 0.0);
    sol.z = NodeTable<double>(n - 1, 0.0);
    sol.dk = NodeTable<double>(n - 1, 0.0);
    for (int j = 0; j <= n; ++j) sol.gamma(n, j) = xi[std::size_t(j)];
    for (int t = n - 1; t >= 0; --t) {
        for (int j = 0; j <= t; ++j) {
            const double up = sol.gamma(t + 1, j + 1), down = sol.gamma(t + 1, j);
            const double mean = 0.5 * (up + down);
            const double slope = (up - down) / (2.0 * model.sqrt_dt);
            const double hat = mean + h(t, j, mean, slope) * model.dt;
            const double floor = obstacle.values(t, j);
            sol.gamma(t, j) = std::max(floor, hat);
            sol.z(t, j) = slope;
            sol.dk(t, j) = sol.gamma(t, j) - hat;
        }
    }
    return sol;
}

/// Generator h_Q(t, z) = f(t, theta_t) + z * theta_t of the linear equation
/// attached to a fixed policy. Non-owning; keep spec and policy alive.
struct PolicyGenerator {
    const PenaltySpec* spec = nullptr;
    const ControlPolicy* policy = nullptr;

    double operator()(int t, int j, double /*value*/, double slope) const {
        const double th = policy->theta(t, j);
        return f_eval(*spec, t, th) + slope * th;
    }
};

inline PolicyGenerator generator_for_policy(const PenaltySpec& spec, const ControlPolicy& policy) {
    return PolicyGenerator{&spec, &policy};
}

/// Generator f~(t, z) of the robust equation. Non-owning.
struct ConjugateGenerator {
    const PenaltySpec* spec = nullptr;

    double operator()(int t, int /*j*/, double /*value*/, double slope) const {
        return f_conjugate(*spec, t, slope);
    }
};

inline ConjugateGenerator conjugate_generator(const PenaltySpec& spec) {
    return ConjugateGenerator{&spec};
}

struct ComparisonResult {
    bool ordered = false;
    double worst_margin = 0.0; // min over nodes of Gamma' - Gamma
};

/// Conclusion check of the comparison theorem: Gamma <= Gamma' node-wise
/// (the caller asserts the ordering of the inputs).
inline ComparisonResult compare_rbsde(const RBSDESolution& sol, const RBSDESolution& sol_prime) {
    if (!sol.gamma.same_shape(sol_prime.gamma))
        throw shape_error("rbsde", "solutions live on different lattices");
    ComparisonResult res;
    res.worst_margin = std::numeric_limits<double>::infinity();
    const int n = sol.gamma.max_level();
    for (int t = 0; t <= n; ++t)
        for (int j = 0; j <= t; ++j)
            res.worst_margin = std::min(res.worst_margin, sol_prime.gamma(t, j) - sol.gamma(t, j));
    res.ordered = res.worst_margin >= -1e-10;
    return res;
}

/**
 * Bounded-mean-oscillation norm of a slope process on the lattice:
 * max over nodes of sqrt( E[ sum_{s>=t} Z_s^2 dt | node ] ) under the
 * reference measure. Starting the conditioning at each node is exact here
 * because hitting a node determines the conditioning event.
 */
inline double bmo_norm(const LatticeModel& model, const NodeTable<double>& slopes) {
    if (slopes.max_level() != model.n_steps - 1)
        throw shape_error("rbsde", "slope table must cover levels 0..N-1");
    NodeTable<double> acc(model.n_steps, 0.0);
    double worst = 0.0;
    for (int t = model.n_steps - 1; t >= 0; --t)
        for (int j = 0; j <= t; ++j) {
            const double z = slopes(t, j);
            acc(t, j) = z * z * model.dt + 0.5 * (acc(t + 1, j + 1) + acc(t + 1, j));
            worst = std::max(worst, acc(t, j));
        }
    return std::sqrt(worst);
}

/**
 * Extracted saddle candidate with its verified margins. All margins are
 * signed slacks: nonnegative (up to the certification tolerance) certifies
 * the corresponding condition.
 */
struct SaddleCertificate {
    ControlPolicy theta_star;
    StoppingRule sigma_star;
    MeasureDensity q_star_density;
    RBSDESolution rbsde;

    double value_root = 0.0;          // V(0) = Gamma(0, 0)
    double middle_value = 0.0;        // E_{Q*}[ Y_{sigma*} + penalties ]
    double condition_i_margin = 0.0;  // -max |Y - R^{Q*}| over actual stop nodes
    double condition_ii_margin = 0.0; // min_Q E_Q[V^Q(sigma*)] - V(0)
    double condition_iii_margin = 0.0; // -max |E_{Q*}[V^{Q*}(sigma*)|node] - V| pre-stop
    double saddle_left_margin = 0.0;  // middle - sup_nu E_{Q*}[Y^{Q*}_nu]
    double saddle_right_margin = 0.0; // min_Q E_Q[Y^Q_{sigma*}] - middle

    int clipped_nodes = 0;
    double clip_fraction = 0.0;

    bool certified(double tol) const {
        return condition_i_margin >= -tol && condition_ii_margin >= -tol &&
               condition_iii_margin >= -tol && saddle_left_margin >= -tol &&
               saddle_right_margin >= -tol;
    }
};

/**
 * Builds the saddle candidate (theta*, sigma*) from the robust reflected
 * equation: theta*_t = z*(t, Z_t) clipped into the admissible tilt range,
 * sigma* the first hit of {Gamma = Y} from time 0. Verifies the necessary
 * conditions (i)-(iii) and both saddle inequalities. Stopper deviations are
 * dominated exactly through the Snell envelope under theta*; controller
 * deviations range over all node-indexed policies drawn from deviation_grid.
 */
inline SaddleCertificate extract_saddle(const LatticeModel& model, const PayoffProcess& y,
                                        const PenaltySpec& spec, const ThetaGrid& deviation_grid,
                                        double max_clip_fraction = 0.05,
                                        double tol_hit_override = -1.0) {
    if (y.values.max_level() != model.n_steps)
        throw shape_error("rbsde", "payoff does not match the lattice");
    validate_grid(model, spec, deviation_grid);
    SaddleCertificate cert;
    cert.rbsde = solve_rbsde(model,
                             std::vector<double>(y.values.raw().end() - (model.n_steps + 1),
                                                 y.values.raw().end()),
                             conjugate_generator(spec), y);
    const double tol = tol_hit_override >= 0.0 ? tol_hit_override : hit_tolerance(y);

    // theta* from the minimizer of f(z) + Z~ z, clipped to stay admissible
    cert.theta_star = zero_policy(model, 0);
    const double cap = max_admissible_tilt(model);
    int tilt_nodes = 0;
    for (int t = 0; t < model.n_steps; ++t)
        for (int j = 0; j <= t; ++j) {
            ++tilt_nodes;
            double th = z_star(spec, t, cert.rbsde.z(t, j));
            if (std::abs(th) > cap) {
                th = th > 0.0 ? cap : -cap;
                ++cert.clipped_nodes;
            }
            cert.theta_star.theta(t, j) = th;
        }
    cert.clip_fraction = double(cert.clipped_nodes) / double(tilt_nodes);
    if (cert.clip_fraction > max_clip_fraction)
        throw lattice_too_coarse_error(
            "rbsde",
            "theta* clipped at " + std::to_string(cert.clipped_nodes) + " of " +
                std::to_string(tilt_nodes) + " nodes",
            "refine the lattice (smaller dt) so the admissible tilt range widens");

    // sigma* = first hit of {Gamma = Y} from 0
    NodeTable<std::uint8_t> region(model.n_steps, 0);
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            region(t, j) = std::abs(cert.rbsde.gamma(t, j) - y.values(t, j)) <= tol ? 1 : 0;
    cert.sigma_star = first_hitting_rule(model, region, 0);
    cert.q_star_density = density_process(model, cert.theta_star);

    cert.value_root = cert.rbsde.gamma(0, 0);
    cert.middle_value =
        expected_stopped_value(model, spec, cert.theta_star, cert.sigma_star, y.values, 0)(0, 0);

    const auto snell = snell_envelope(model, y, spec, cert.theta_star, 0);
    const auto active = reachable_unstopped(model, cert.sigma_star);

    // (i) Y = R^{Q*} where sigma* actually stops
    double worst_i = 0.0;
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            if (active(t, j) && cert.sigma_star.stops_at(t, j))
                worst_i = std::max(worst_i, std::abs(y.values(t, j) - snell.r(t, j)));
    cert.condition_i_margin = -worst_i;

    // (ii) V(0) <= E_Q[V^Q(sigma*)] for every grid policy, via the exact
    // adversarial minimum
    const auto adv_v =
        adversarial_stopped_value(model, spec, deviation_grid, cert.sigma_star, cert.rbsde.gamma, 0);
    cert.condition_ii_margin = adv_v(0, 0) - cert.value_root;

    // (iii) V^{Q*}(nu) = E_{Q*}[V^{Q*}(sigma*) | F_nu] for every node-region
    // nu <= sigma*, checked at every reachable pre-stop node
    const auto mart =
        expected_stopped_value(model, spec, cert.theta_star, cert.sigma_star, cert.rbsde.gamma, 0);
    double worst_iii = 0.0;
    for (int t = 0; t <= model.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            if (active(t, j))
                worst_iii = std::max(worst_iii, std::abs(mart(t, j) - cert.rbsde.gamma(t, j)));
    cert.condition_iii_margin = -worst_iii;

    // left saddle inequality, dominated over all adapted stopping deviations
    cert.saddle_left_margin = cert.middle_value - snell.r(0, 0);
    // right saddle inequality over all node-indexed grid-policy deviations
    const auto adv_y =
        adversarial_stopped_value(model, spec, deviation_grid, cert.sigma_star, y.values, 0);
    cert.saddle_right_margin = adv_y(0, 0) - cert.middle_value;

    return cert;
}

} // namespace rstop
