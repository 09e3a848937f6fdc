#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace market {

/// Finite set of rounded model-performance values revealed by the market.
class MetricGrid {
public:
    MetricGrid(std::vector<double> values, double resolution);

    /// Evenly spaced grid lo, lo+res, ..., hi (inclusive).
    static MetricGrid uniform(double lo, double hi, double resolution);
    /// Default grid: resolution 0.01 over [0, 1].
    static MetricGrid unit(double resolution = 0.01);

    std::size_t size() const { return values_.size(); }
    double value(std::size_t index) const { return values_.at(index); }
    std::span<const double> values() const { return values_; }
    double resolution() const { return resolution_; }

    friend bool operator==(const MetricGrid&, const MetricGrid&) = default;

private:
    std::vector<double> values_;
    double resolution_;
};

/// Per-period sequence of grid indices q_1..q_T.
struct Trajectory {
    std::vector<std::size_t> metrics;

    std::size_t length() const { return metrics.size(); }
    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Nearest grid index; exact ties go to the higher value, out-of-range values
/// clamp to the nearest endpoint. Throws std::invalid_argument on NaN.
std::size_t quantize(double metric, const MetricGrid& grid);

} // namespace market
