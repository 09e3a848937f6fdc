#include "market/generators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace market {

PriorFamily parse_prior_family(const std::string& name) {
    if (name == "random") return PriorFamily::Random;
    if (name == "uniform") return PriorFamily::Uniform;
    if (name == "beta-2-3") return PriorFamily::Beta23;
    if (name == "beta-1-5") return PriorFamily::Beta15;
    throw std::invalid_argument("unknown prior family '" + name + "'");
}

const char* to_string(PriorFamily family) {
    switch (family) {
    case PriorFamily::Random: return "random";
    case PriorFamily::Uniform: return "uniform";
    case PriorFamily::Beta23: return "beta-2-3";
    case PriorFamily::Beta15: return "beta-1-5";
    }
    return "unknown";
}

std::vector<double> make_prior(std::size_t n, PriorFamily family, Rng& rng) {
    if (n == 0) throw std::invalid_argument("prior over zero types");
    std::vector<double> p(n, 1.0);
    auto beta_density = [](double x, double a, double b) { return std::pow(x, a - 1.0) * std::pow(1.0 - x, b - 1.0); };
    for (std::size_t i = 0; i < n; ++i) {
        const double mid = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        switch (family) {
        case PriorFamily::Random: p[i] = rng.gamma(1.0); break;
        case PriorFamily::Uniform: p[i] = 1.0; break;
        case PriorFamily::Beta23: p[i] = beta_density(mid, 2.0, 3.0); break;
        case PriorFamily::Beta15: p[i] = beta_density(mid, 1.0, 5.0); break;
        }
    }
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= total;
    return p;
}

Population random_population(std::size_t types, std::size_t grid_size, double bound, PriorFamily family, Rng& rng) {
    Population pop;
    for (std::size_t t = 0; t < types; ++t) {
        std::vector<double> steps(grid_size);
        for (auto& s : steps) s = rng.uniform();
        std::partial_sum(steps.begin(), steps.end(), steps.begin());
        const double top = steps.back() > 0.0 ? steps.back() : 1.0;
        const double scale = bound * (0.3 + 0.7 * rng.uniform());
        BuyerType b;
        b.id = "t" + std::to_string(t);
        for (double s : steps) b.values.push_back(std::round(100.0 * scale * s / top) / 100.0);
        pop.types.push_back(std::move(b));
    }
    pop.prior = make_prior(types, family, rng);
    return pop;
}

MarkovChain random_drift_chain(const MetricGrid& grid, std::size_t horizon, double drift, Rng& rng) {
    const std::size_t n = grid.size();
    auto row_for = [&](double centre) {
        std::vector<double> row(n);
        double total = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            const double d = static_cast<double>(c) - centre;
            row[c] = std::exp(-std::abs(d) / std::max(drift, 0.5)) * (0.5 + rng.uniform());
            total += row[c];
        }
        for (auto& v : row) v /= total;
        return row;
    };
    std::vector<double> init = row_for(0.25 * static_cast<double>(n - 1));
    std::vector<SquareMatrix> trans;
    for (std::size_t t = 1; t < horizon; ++t) {
        SquareMatrix m(n);
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = row_for(std::min(static_cast<double>(n - 1), static_cast<double>(r) + drift));
            std::copy(row.begin(), row.end(), m.row(r).begin());
        }
        trans.push_back(std::move(m));
    }
    return MarkovChain(grid, std::move(init), std::move(trans));
}

MarkovChain random_dense_chain(const MetricGrid& grid, std::size_t horizon, Rng& rng) {
    const std::size_t n = grid.size();
    auto row = [&] {
        std::vector<double> r(n);
        for (auto& v : r) v = rng.gamma(1.0);
        const double total = std::accumulate(r.begin(), r.end(), 0.0);
        for (auto& v : r) v /= total;
        return r;
    };
    std::vector<double> init = row();
    std::vector<SquareMatrix> trans;
    for (std::size_t t = 1; t < horizon; ++t) {
        SquareMatrix m(n);
        for (std::size_t r = 0; r < n; ++r) {
            const auto vals = row();
            std::copy(vals.begin(), vals.end(), m.row(r).begin());
        }
        trans.push_back(std::move(m));
    }
    return MarkovChain(grid, std::move(init), std::move(trans));
}

namespace {

// Moves p by a random zero-sum direction of norm eps, shrinking the step so
// every entry stays nonnegative.
std::vector<double> perturb_row(std::span<const double> p, double eps, Rng& rng) {
    const std::size_t n = p.size();
    std::vector<double> out(p.begin(), p.end());
    if (n < 2 || eps <= 0.0) return out;
    std::vector<double> d(n);
    for (auto& v : d) v = rng.normal();
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double norm = 0.0;
    for (auto& v : d) {
        v -= mean;
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) return out;
    double step = eps / norm;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] < 0.0) step = std::min(step, p[i] / -d[i]);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::max(0.0, p[i] + step * d[i]);
    const double total = std::accumulate(out.begin(), out.end(), 0.0);
    for (auto& v : out) v /= total;
    return out;
}

} // namespace

std::vector<double> perturb_prior(const std::vector<double>& prior, double eps, Rng& rng) {
    return perturb_row(prior, eps, rng);
}

MarkovChain perturb_chain(const MarkovChain& chain, double eps, Rng& rng) {
    const std::size_t n = chain.states();
    const double row_eps = eps / std::sqrt(static_cast<double>(n));
    std::vector<double> init = perturb_row(chain.initial(), row_eps, rng);
    std::vector<SquareMatrix> trans;
    for (const auto& m : chain.transitions()) {
        SquareMatrix out(n);
        for (std::size_t r = 0; r < n; ++r) {
            const auto row = perturb_row(m.row(r), row_eps, rng);
            std::copy(row.begin(), row.end(), out.row(r).begin());
        }
        trans.push_back(std::move(out));
    }
    return MarkovChain(chain.grid(), std::move(init), std::move(trans));
}

} // namespace market
