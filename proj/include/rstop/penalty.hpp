#pragma once

#include "rstop/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace rstop {

/// Parameters of the penalty assumptions: f >= eps*|z - Upsilon|^2 - ell,
/// |z*(u)| <= psi + M*|u|. psi stands in for the BMO process as a constant
/// bound, which dominates any realized path on a finite lattice.
struct AssumptionParams {
    double eps = 0.0;           // > 0
    double upsilon_bound = 0.0; // sup-norm of the shift process, >= 0
    double ell = 0.0;           // >= eps * upsilon_bound^2
    double psi_bound = 0.0;     // >= 0
    double growth_M = 0.0;      // > 0
};

/// f(z) = (r/2) z^2, the penalty of the entropic risk measure with risk
/// tolerance r. Conjugate and minimizer are closed-form.
struct EntropicPenalty {
    double risk_tolerance = 1.0; // r > 0
};

/// f(t,z) = max(Lambda_t * (|z - Upsilon_t|^(2+lambda) - |Upsilon_t|^(2+lambda)), 0).
/// Lambda and Upsilon may be constant (size-1 vector) or per time index.
struct PowerPenalty {
    double lambda = 0.0;
    std::vector<double> scale;  // Lambda_t > 0
    std::vector<double> shift;  // Upsilon_t
};

/// Piecewise-linear f on a fixed z grid, +infinity outside the grid.
/// values may hold one row shared by all time indices or one row per t.
struct TabulatedPenalty {
    std::vector<double> z_grid;
    std::vector<std::vector<double>> values; // values[t][i] >= 0
};

struct PenaltySpec {
    std::variant<EntropicPenalty, PowerPenalty, TabulatedPenalty> family;
    AssumptionParams assume;
    double tol_opt = 1e-10; // argument tolerance of the numerical minimizer

    bool is_entropic() const { return std::holds_alternative<EntropicPenalty>(family); }
    bool is_tabulated() const { return std::holds_alternative<TabulatedPenalty>(family); }

    /// Number of distinct time indices carried by the family parameters.
    int time_extent() const {
        if (const auto* p = std::get_if<PowerPenalty>(&family))
            return int(std::max(p->scale.size(), p->shift.size()));
        if (const auto* tab = std::get_if<TabulatedPenalty>(&family))
            return int(tab->values.size());
        return 1;
    }
};

namespace detail {

inline double param_at(const std::vector<double>& v, int t) {
    if (v.size() == 1) return v[0];
    return v[std::size_t(std::min<int>(t, int(v.size()) - 1))];
}

inline const std::vector<double>& row_at(const std::vector<std::vector<double>>& rows, int t) {
    if (rows.size() == 1) return rows[0];
    return rows[std::size_t(std::min<int>(t, int(rows.size()) - 1))];
}

/// Golden-section minimum of a unimodal function on [lo, hi].
template <typename F>
std::pair<double, double> golden_section_min(F&& f, double lo, double hi, double tol_arg,
                                             int max_iter = 200) {
    static const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < max_iter && (b - a) > tol_arg; ++i) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    const double x = 0.5 * (a + b);
    return {x, f(x)};
}

} // namespace detail

inline void validate_assumptions(const AssumptionParams& a) {
    if (!(a.eps > 0.0)) throw parameter_error("penalty", "assumption eps must be > 0");
    if (a.upsilon_bound < 0.0) throw parameter_error("penalty", "upsilon_bound must be >= 0");
    if (a.ell < a.eps * a.upsilon_bound * a.upsilon_bound - 1e-15)
        throw parameter_error("penalty", "ell must be >= eps * upsilon_bound^2");
    if (a.psi_bound < 0.0) throw parameter_error("penalty", "psi_bound must be >= 0");
    if (!(a.growth_M > 0.0)) throw parameter_error("penalty", "growth_M must be > 0");
}

inline PenaltySpec make_entropic(double risk_tolerance) {
    if (!(risk_tolerance > 0.0))
        throw parameter_error("penalty", "entropic risk tolerance must be > 0");
    PenaltySpec spec;
    spec.family = EntropicPenalty{risk_tolerance};
    spec.assume.eps = risk_tolerance / 2.0;
    spec.assume.upsilon_bound = 0.0;
    spec.assume.ell = 0.0;
    spec.assume.psi_bound = 0.0;
    spec.assume.growth_M = 1.0 / risk_tolerance;
    return spec;
}

inline PenaltySpec make_power(double lambda, std::vector<double> scale, std::vector<double> shift) {
    if (lambda < 0.0) throw parameter_error("penalty", "power exponent lambda must be >= 0");
    if (scale.empty() || shift.empty())
        throw parameter_error("penalty", "power scale/shift tables must be nonempty");
    for (double s : scale)
        if (!(s > 0.0)) throw parameter_error("penalty", "power scale Lambda must be > 0");

    const double eps = *std::min_element(scale.begin(), scale.end());
    const double scale_max = *std::max_element(scale.begin(), scale.end());
    double ups = 0.0;
    for (double s : shift) ups = std::max(ups, std::abs(s));

    PenaltySpec spec;
    spec.family = PowerPenalty{lambda, std::move(scale), std::move(shift)};
    spec.assume.eps = eps;
    spec.assume.upsilon_bound = ups;
    spec.assume.ell =
        std::max(scale_max * (1.0 + std::pow(ups, 2.0 + lambda)), eps * ups * ups);
    const double slope = std::pow((2.0 + lambda) * eps, -1.0 / (1.0 + lambda));
    spec.assume.psi_bound = slope + 3.0 * ups;
    spec.assume.growth_M = slope;
    return spec;
}

inline PenaltySpec make_tabulated(std::vector<double> z_grid,
                                  std::vector<std::vector<double>> values,
                                  AssumptionParams assume) {
    if (z_grid.size() < 2) throw parameter_error("penalty", "tabulated grid needs >= 2 points");
    for (std::size_t i = 1; i < z_grid.size(); ++i)
        if (!(z_grid[i] > z_grid[i - 1]))
            throw parameter_error("penalty", "tabulated z grid must be strictly increasing");
    if (values.empty()) throw parameter_error("penalty", "tabulated values must be nonempty");
    for (const auto& row : values) {
        if (row.size() != z_grid.size())
            throw parameter_error("penalty", "each tabulated row must match the z grid size");
        for (double v : row)
            if (!(v >= 0.0)) throw parameter_error("penalty", "tabulated values must be >= 0");
    }
    validate_assumptions(assume);
    PenaltySpec spec;
    spec.family = TabulatedPenalty{std::move(z_grid), std::move(values)};
    spec.assume = assume;
    return spec;
}

/// Penalty value f(t, z); may be +infinity for tabulated families outside
/// their grid. Always >= 0 for well-formed specs.
inline double f_eval(const PenaltySpec& spec, int t, double z) {
    if (const auto* e = std::get_if<EntropicPenalty>(&spec.family))
        return 0.5 * e->risk_tolerance * z * z;
    if (const auto* p = std::get_if<PowerPenalty>(&spec.family)) {
        const double lam = detail::param_at(p->scale, t);
        const double ups = detail::param_at(p->shift, t);
        const double raw = lam * (std::pow(std::abs(z - ups), 2.0 + p->lambda) -
                                  std::pow(std::abs(ups), 2.0 + p->lambda));
        return std::max(raw, 0.0);
    }
    const auto& tab = std::get<TabulatedPenalty>(spec.family);
    const auto& grid = tab.z_grid;
    const auto& row = detail::row_at(tab.values, t);
    if (z < grid.front() || z > grid.back()) return std::numeric_limits<double>::infinity();
    const auto it = std::upper_bound(grid.begin(), grid.end(), z);
    const std::size_t hi = std::min<std::size_t>(std::size_t(it - grid.begin()), grid.size() - 1);
    const std::size_t lo = hi - (hi > 0 ? 1 : 0);
    if (hi == lo) return row[lo];
    const double w = (z - grid[lo]) / (grid[hi] - grid[lo]);
    return row[lo] + w * (row[hi] - row[lo]);
}

namespace detail {

/// Shared minimization of z -> f(t,z) + u*z. Returns {z*, min value} with
/// the smallest-|z| tie-break. Entropic is closed-form; tabulated is exact
/// vertex enumeration; power uses golden-section on the growth-bound bracket.
inline std::pair<double, double> minimize_fz(const PenaltySpec& spec, int t, double u) {
    if (const auto* e = std::get_if<EntropicPenalty>(&spec.family)) {
        const double z = -u / e->risk_tolerance;
        return {z, f_eval(spec, t, z) + u * z};
    }
    if (spec.is_tabulated()) {
        // piecewise-linear + linear attains its infimum at a grid vertex
        const auto& tab = std::get<TabulatedPenalty>(spec.family);
        const auto& row = detail::row_at(tab.values, t);
        double best_z = tab.z_grid[0];
        double best_v = row[0] + u * tab.z_grid[0];
        for (std::size_t i = 1; i < tab.z_grid.size(); ++i) {
            const double v = row[i] + u * tab.z_grid[i];
            const double tie = 1e-15 * (1.0 + std::abs(best_v));
            if (v < best_v - tie) {
                best_v = v;
                best_z = tab.z_grid[i];
            } else if (v <= best_v + tie && std::abs(tab.z_grid[i]) < std::abs(best_z)) {
                best_v = std::min(v, best_v);
                best_z = tab.z_grid[i];
            }
        }
        return {best_z, best_v};
    }
    // power family: convex objective, bracket justified by the minimizer growth bound
    const double bracket = spec.assume.psi_bound + spec.assume.growth_M * std::abs(u) + 1.0;
    auto objective = [&](double z) { return f_eval(spec, t, z) + u * z; };
    auto [z0, v0] = golden_section_min(objective, -bracket, bracket, spec.tol_opt);
    // smallest-|z| tie-break; z = 0 always costs exactly f(t,0)
    const double at_zero = objective(0.0);
    if (at_zero <= v0 + 1e-14 * (1.0 + std::abs(v0)) && std::abs(z0) > 0.0)
        return {0.0, std::min(at_zero, v0)};
    return {z0, v0};
}

} // namespace detail

/// Conjugate-type transform f~(t, u) = inf_z ( f(t,z) + u*z ). Nonpositive
/// whenever f(t,0) = 0, with quadratic lower bound from the assumptions.
inline double f_conjugate(const PenaltySpec& spec, int t, double u) {
    if (const auto* e = std::get_if<EntropicPenalty>(&spec.family))
        return -u * u / (2.0 * e->risk_tolerance);
    return detail::minimize_fz(spec, t, u).second;
}

/// Minimizer z*(t, u) attaining f_conjugate. Throws if the declared growth
/// bound |z*| <= psi + M|u| fails for the supplied assumption parameters.
inline double z_star(const PenaltySpec& spec, int t, double u) {
    double z;
    if (const auto* e = std::get_if<EntropicPenalty>(&spec.family))
        z = -u / e->risk_tolerance;
    else
        z = detail::minimize_fz(spec, t, u).first;
    const double cap = spec.assume.psi_bound + spec.assume.growth_M * std::abs(u);
    if (std::abs(z) > cap + 1e4 * spec.tol_opt)
        throw assumption_violation_error(
            "penalty",
            "minimizer growth bound violated: |z*(" + std::to_string(u) + ")| = " +
                std::to_string(std::abs(z)) + " exceeds psi + M|u| = " + std::to_string(cap),
            "increase psi_bound/growth_M to match the actual minimizer growth");
    return z;
}

struct AssumptionCheck {
    bool pass = true;
    double worst_margin = 0.0; // signed slack of the binding constraint; < 0 means violated
};

struct AssumptionReport {
    AssumptionCheck zero_at_zero;         // f(t, 0) = 0
    AssumptionCheck nonnegative;          // f >= 0 at samples
    AssumptionCheck quadratic_lower_bound; // f >= eps|z - shift|^2 - ell at samples
    AssumptionCheck minimizer_growth;     // |z*(u)| <= psi + M|u| at samples

    bool all_pass() const {
        return zero_at_zero.pass && nonnegative.pass && quadratic_lower_bound.pass &&
               minimizer_growth.pass;
    }
};

/// Sweeps the penalty assumptions over sample points. Violations are
/// reported with their worst margin, never thrown.
inline AssumptionReport check_assumptions(const PenaltySpec& spec,
                                          const std::vector<double>& z_samples,
                                          const std::vector<double>& u_samples) {
    if (z_samples.empty() || u_samples.empty())
        throw parameter_error("penalty", "assumption check needs nonempty sample lists");
    constexpr double tol = 1e-12;
    AssumptionReport rep;
    const int extent = spec.time_extent();

    auto fold = [](AssumptionCheck& c, double slack) {
        c.worst_margin = std::min(c.worst_margin, slack);
        if (slack < -tol) c.pass = false;
    };
    rep.zero_at_zero.worst_margin = std::numeric_limits<double>::infinity();
    rep.nonnegative.worst_margin = std::numeric_limits<double>::infinity();
    rep.quadratic_lower_bound.worst_margin = std::numeric_limits<double>::infinity();
    rep.minimizer_growth.worst_margin = std::numeric_limits<double>::infinity();

    for (int t = 0; t < extent; ++t) {
        fold(rep.zero_at_zero, -std::abs(f_eval(spec, t, 0.0)));
        // The lower-bound shift is the power family's own shift process when
        // available; otherwise only its bound is known and the weakest implied
        // distance max(|z| - upsilon_bound, 0) is used.
        const auto* pow_family = std::get_if<PowerPenalty>(&spec.family);
        for (double z : z_samples) {
            const double v = f_eval(spec, t, z);
            if (std::isinf(v)) continue; // +infinity satisfies any lower bound
            fold(rep.nonnegative, v);
            const double dist = pow_family
                                    ? std::abs(z - detail::param_at(pow_family->shift, t))
                                    : std::max(std::abs(z) - spec.assume.upsilon_bound, 0.0);
            const double floor = spec.assume.eps * dist * dist - spec.assume.ell;
            fold(rep.quadratic_lower_bound, v - floor);
        }
        for (double u : u_samples) {
            const double z = detail::minimize_fz(spec, t, u).first;
            const double cap = spec.assume.psi_bound + spec.assume.growth_M * std::abs(u);
            fold(rep.minimizer_growth, cap - std::abs(z));
        }
    }
    return rep;
}

} // namespace rstop
