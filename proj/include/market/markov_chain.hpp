#pragma once

#include "market/metric_grid.hpp"
#include "market/rng.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace market {

/// Dense row-major square matrix.
class SquareMatrix {
public:
    SquareMatrix() = default;
    explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

    static SquareMatrix identity(std::size_t n);

    std::size_t size() const { return n_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * n_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * n_ + c]; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * n_, n_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * n_, n_}; }

    friend bool operator==(const SquareMatrix&, const SquareMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::vector<double> data_;
};

/// Time-inhomogeneous Markov chain over a metric grid: initial row P_1 and
/// T-1 transition matrices P_t(q_t | q_{t-1}), t = 2..T.
class MarkovChain {
public:
    /// Validates stochasticity (rows sum to 1 within 1e-9, entries in [0,1]).
    MarkovChain(MetricGrid grid, std::vector<double> initial, std::vector<SquareMatrix> transitions);

    const MetricGrid& grid() const { return grid_; }
    std::size_t states() const { return grid_.size(); }
    std::size_t horizon() const { return transitions_.size() + 1; }
    std::span<const double> initial() const { return initial_; }

    /// P_t for t in [2, T]: row = previous state, column = next state.
    const SquareMatrix& transition_into(std::size_t t) const;
    std::span<const SquareMatrix> transitions() const { return transitions_; }

    /// Analytic marginal distribution of q_t for t = 1..T (index t-1).
    std::vector<std::vector<double>> marginals() const;

private:
    MetricGrid grid_;
    std::vector<double> initial_;
    std::vector<SquareMatrix> transitions_;
};

/// Row-normalized empirical counts. Rows never visited become self-loops.
/// `smoothing` adds a pseudo-count to every cell (default 0: none).
MarkovChain estimate_chain(std::span<const Trajectory> trajectories, const MetricGrid& grid,
                           double smoothing = 0.0);

Trajectory sample_trajectory(const MarkovChain& chain, Rng& rng);

std::vector<Trajectory> sample_trajectories(const MarkovChain& chain, std::size_t count, Rng& rng);

} // namespace market
