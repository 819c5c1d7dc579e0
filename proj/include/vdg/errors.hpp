#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace vdg {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The operation is not available for this input (e.g. a non-invertible derivative).
class CapabilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-iteration record of a descent run.
struct SolverTrace {
    std::vector<double> energy;
    std::vector<double> gradient_sup;
    std::vector<double> step;
    std::size_t iterations = 0;
    std::size_t evaluations = 0;
    bool converged = false;
};

/// Line search could not produce a decrease with any admissible step.
class StagnationError : public std::runtime_error {
public:
    StagnationError(const std::string& what, SolverTrace trace)
        : std::runtime_error(what), trace_(std::move(trace)) {}
    const SolverTrace& trace() const noexcept { return trace_; }

private:
    SolverTrace trace_;
};

} // namespace vdg
