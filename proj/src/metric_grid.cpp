#include "market/metric_grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace market {

namespace {
constexpr double kMultipleTol = 1e-12;
constexpr double kTieTol = 1e-12;
} // namespace

MetricGrid::MetricGrid(std::vector<double> values, double resolution)
    : values_(std::move(values)), resolution_(resolution) {
    if (values_.empty()) throw std::invalid_argument("metric grid must not be empty");
    if (!(resolution_ > 0.0) || !std::isfinite(resolution_))
        throw std::invalid_argument("metric grid resolution must be positive");
    for (std::size_t i = 0; i < values_.size(); ++i) {
        const double v = values_[i];
        if (!std::isfinite(v)) throw std::invalid_argument("metric grid values must be finite");
        if (i > 0 && !(v > values_[i - 1]))
            throw std::invalid_argument("metric grid values must be strictly increasing");
        if (std::abs(v - std::round(v / resolution_) * resolution_) > kMultipleTol)
            throw std::invalid_argument("metric grid value " + std::to_string(v) +
                                        " is not a multiple of the resolution");
    }
}

MetricGrid MetricGrid::uniform(double lo, double hi, double resolution) {
    if (!(resolution > 0.0)) throw std::invalid_argument("metric grid resolution must be positive");
    const auto first = static_cast<long long>(std::llround(lo / resolution));
    const auto last = static_cast<long long>(std::llround(hi / resolution));
    if (last < first) throw std::invalid_argument("metric grid upper end below lower end");
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(last - first + 1));
    // For resolutions like 0.1, k / 10 is the correctly rounded k * 0.1 while
    // k * 0.1 itself is not (7 * 0.1 = 0.7000000000000001).
    const double steps = std::round(1.0 / resolution);
    const bool reciprocal = std::abs(steps * resolution - 1.0) < 1e-12;
    for (long long k = first; k <= last; ++k)
        values.push_back(reciprocal ? static_cast<double>(k) / steps : static_cast<double>(k) * resolution);
    return MetricGrid(std::move(values), resolution);
}

MetricGrid MetricGrid::unit(double resolution) { return uniform(0.0, 1.0, resolution); }

std::size_t quantize(double metric, const MetricGrid& grid) {
    if (std::isnan(metric)) throw std::invalid_argument("cannot quantize NaN metric");
    auto values = grid.values();
    auto it = std::lower_bound(values.begin(), values.end(), metric);
    if (it == values.begin()) return 0;
    if (it == values.end()) return values.size() - 1;
    const auto hi = static_cast<std::size_t>(it - values.begin());
    const std::size_t lo = hi - 1;
    const double d_lo = metric - values[lo];
    const double d_hi = values[hi] - metric;
    return d_hi <= d_lo + kTieTol ? hi : lo;
}

} // namespace market
