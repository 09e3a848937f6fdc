#include "market/markov_chain.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace market {

namespace {

constexpr double kStochasticTol = 1e-9;

void check_probability_row(std::span<const double> row, const char* what) {
    double sum = 0.0;
    for (double p : row) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + ": entry outside [0,1]");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kStochasticTol)
        throw std::invalid_argument(std::string(what) + ": row does not sum to 1");
}

} // namespace

SquareMatrix SquareMatrix::identity(std::size_t n) {
    SquareMatrix m(n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

MarkovChain::MarkovChain(MetricGrid grid, std::vector<double> initial, std::vector<SquareMatrix> transitions)
    : grid_(std::move(grid)), initial_(std::move(initial)), transitions_(std::move(transitions)) {
    const std::size_t n = grid_.size();
    if (initial_.size() != n) throw std::invalid_argument("initial row length differs from grid size");
    check_probability_row(initial_, "initial distribution");
    for (const auto& m : transitions_) {
        if (m.size() != n) throw std::invalid_argument("transition matrix size differs from grid size");
        for (std::size_t r = 0; r < n; ++r) check_probability_row(m.row(r), "transition matrix");
    }
}

const SquareMatrix& MarkovChain::transition_into(std::size_t t) const {
    if (t < 2 || t > horizon()) throw std::out_of_range("transition index outside [2, T]");
    return transitions_[t - 2];
}

std::vector<std::vector<double>> MarkovChain::marginals() const {
    const std::size_t n = states();
    std::vector<std::vector<double>> out;
    out.reserve(horizon());
    out.push_back(initial_);
    for (const auto& m : transitions_) {
        const auto& prev = out.back();
        std::vector<double> next(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (prev[i] == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) next[j] += prev[i] * m(i, j);
        }
        out.push_back(std::move(next));
    }
    return out;
}

MarkovChain estimate_chain(std::span<const Trajectory> trajectories, const MetricGrid& grid, double smoothing) {
    if (trajectories.empty()) throw std::invalid_argument("cannot estimate a chain from an empty trajectory set");
    if (smoothing < 0.0) throw std::invalid_argument("smoothing must be nonnegative");
    const std::size_t horizon = trajectories.front().length();
    if (horizon == 0) throw std::invalid_argument("trajectories must have length >= 1");
    const std::size_t n = grid.size();

    std::vector<double> initial(n, smoothing);
    std::vector<SquareMatrix> counts(horizon - 1, SquareMatrix(n, smoothing));
    for (const auto& traj : trajectories) {
        if (traj.length() != horizon) throw std::invalid_argument("trajectories have mismatched lengths");
        for (std::size_t q : traj.metrics)
            if (q >= n) throw std::invalid_argument("trajectory index outside the grid");
        initial[traj.metrics[0]] += 1.0;
        for (std::size_t t = 1; t < horizon; ++t) counts[t - 1](traj.metrics[t - 1], traj.metrics[t]) += 1.0;
    }

    const double init_total = std::accumulate(initial.begin(), initial.end(), 0.0);
    for (double& p : initial) p /= init_total;

    for (auto& m : counts) {
        for (std::size_t r = 0; r < n; ++r) {
            auto row = m.row(r);
            const double total = std::accumulate(row.begin(), row.end(), 0.0);
            if (total == 0.0) {
                row[r] = 1.0;
                continue;
            }
            for (double& p : row) p /= total;
        }
    }
    return MarkovChain(grid, std::move(initial), std::move(counts));
}

Trajectory sample_trajectory(const MarkovChain& chain, Rng& rng) {
    Trajectory traj;
    traj.metrics.reserve(chain.horizon());
    std::size_t q = rng.categorical(chain.initial());
    traj.metrics.push_back(q);
    for (std::size_t t = 2; t <= chain.horizon(); ++t) {
        q = rng.categorical(chain.transition_into(t).row(q));
        traj.metrics.push_back(q);
    }
    return traj;
}

std::vector<Trajectory> sample_trajectories(const MarkovChain& chain, std::size_t count, Rng& rng) {
    std::vector<Trajectory> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(sample_trajectory(chain, rng));
    return out;
}

} // namespace market
