#pragma once

#include <stdexcept>
#include <string>

namespace viab {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Adaptive quadrature could not reach the requested tolerance within budget.
struct QuadratureFailure : Error {
    using Error::Error;
};

// An integral that must diverge for the requested evaluation (e.g. the
// derivative integrand at a support endpoint).
struct DivergentIntegral : Error {
    using Error::Error;
};

// Quantile or tilt construction asked for more mass than a side carries.
struct InsufficientMass : Error {
    using Error::Error;
};

// Triplet fails the |x| ^ x^2 integrability requirement.
struct NotSpecial : Error {
    using Error::Error;
};

// Parameter outside its admissible range (c < 0, T <= 0, epsilon not in (0,1), ...).
struct InvalidParam : Error {
    using Error::Error;
};

// Geometric bracket expansion hit the configured cap without a sign change.
struct BracketFailure : Error {
    using Error::Error;
};

// Simulation requested on a measure with infinite jump activity.
struct InfiniteActivity : Error {
    using Error::Error;
};

// Simulation configuration rejected (paths/steps < 1).
struct InvalidConfig : Error {
    using Error::Error;
};

// Wealth recursion hit 1 + p * dS <= 0.
struct NonpositiveWealth : Error {
    using Error::Error;
};

// A path handed to the deflator violates its grid contract.
struct InvalidPath : Error {
    using Error::Error;
};

// Operation only defined for non-viable models (arbitrage demonstration).
struct NotApplicable : Error {
    using Error::Error;
};

// Malformed or schema-violating configuration file.
struct ConfigError : Error {
    using Error::Error;
};

}  // namespace viab
