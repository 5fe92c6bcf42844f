#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wncs {

enum class Errc {
    non_square,
    negative_entry,
    row_sum_deviation,
    leaky_restriction,
    not_irreducible,
    no_convergence,
    range_violation,
    empty_partition,
    divergent_cycle,
    zero_stationary_mass,
    no_closed_loop_states,
    size_limit,
    config_error,
    insufficient_cycles,
    dimension_mismatch,
};

constexpr std::string_view to_string(Errc code) noexcept {
    switch (code) {
        case Errc::non_square: return "NonSquare";
        case Errc::negative_entry: return "NegativeEntry";
        case Errc::row_sum_deviation: return "RowSumDeviation";
        case Errc::leaky_restriction: return "LeakyRestriction";
        case Errc::not_irreducible: return "NotIrreducible";
        case Errc::no_convergence: return "NoConvergence";
        case Errc::range_violation: return "RangeViolation";
        case Errc::empty_partition: return "EmptyPartition";
        case Errc::divergent_cycle: return "DivergentCycle";
        case Errc::zero_stationary_mass: return "ZeroStationaryMass";
        case Errc::no_closed_loop_states: return "NoClosedLoopStates";
        case Errc::size_limit: return "SizeLimit";
        case Errc::config_error: return "ConfigError";
        case Errc::insufficient_cycles: return "InsufficientCycles";
        case Errc::dimension_mismatch: return "DimensionMismatch";
    }
    return "Unknown";
}

/// Base exception for every failure raised by the library. The message is
/// prefixed with the error kind, e.g. "DivergentCycle: ...".
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

class RowSumDeviation : public Error {
public:
    RowSumDeviation(std::size_t row, double sum)
        : Error(Errc::row_sum_deviation,
                "row " + std::to_string(row) + " sums to " + std::to_string(sum)),
          row_(row), sum_(sum) {}

    std::size_t row() const noexcept { return row_; }
    double sum() const noexcept { return sum_; }

private:
    std::size_t row_;
    double sum_;
};

class NoConvergence : public Error {
public:
    explicit NoConvergence(std::size_t iterations)
        : Error(Errc::no_convergence,
                "power iteration did not converge in " + std::to_string(iterations) +
                    " iterations"),
          iterations_(iterations) {}

    std::size_t iterations() const noexcept { return iterations_; }

private:
    std::size_t iterations_;
};

inline Error config_error(const std::string& what) { return Error(Errc::config_error, what); }

}  // namespace wncs
