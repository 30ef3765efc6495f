#pragma once

#include <stdexcept>
#include <string>

namespace rstop {

// All library errors derive from rstop::error and carry the module that
// raised them plus an optional remediation hint for the CLI layer.
class error : public std::runtime_error {
public:
    error(std::string module, std::string what, std::string hint = {})
        : std::runtime_error(what), module_(std::move(module)), hint_(std::move(hint)) {}

    const std::string& module() const noexcept { return module_; }
    const std::string& hint() const noexcept { return hint_; }

private:
    std::string module_;
    std::string hint_;
};

/// A precondition on a parameter was violated.
class parameter_error : public error {
public:
    using error::error;
};

/// A payoff exceeded its declared bound.
class bound_violation_error : public error {
public:
    using error::error;
};

/// A stopping rule cannot be expressed on the recombining lattice.
class unsupported_rule_error : public error {
public:
    using error::error;
};

/// One of the penalty assumptions failed where the code relies on it.
class assumption_violation_error : public error {
public:
    using error::error;
};

/// Terminal condition dips below the obstacle.
class obstacle_violation_error : public error {
public:
    using error::error;
};

/// Two node tables live on different lattices.
class shape_error : public error {
public:
    using error::error;
};

/// Enumeration would exceed the configured budget.
class budget_error : public error {
public:
    using error::error;
};

/// Too many tilt values had to be clipped to stay admissible.
class lattice_too_coarse_error : public error {
public:
    using error::error;
};

} // namespace rstop
