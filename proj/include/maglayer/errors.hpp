#pragma once

#include <stdexcept>
#include <string>

namespace maglayer {

// Raised when an evaluation lands on (or too close to) a singularity.
struct pole_error : std::runtime_error {
    double where;
    pole_error(const std::string& what, double at)
        : std::runtime_error(what), where(at) {}
};

struct domain_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct convergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct irrational_flux_error : config_error {
    using config_error::config_error;
};

// Too many scan points without a dispersion root.
struct coverage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace maglayer
