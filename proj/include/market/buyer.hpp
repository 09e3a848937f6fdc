#pragma once

#include "market/markov_chain.hpp"
#include "market/metric_grid.hpp"

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace market {

/// Posted mapping from metric index to price, identical for all buyers.
struct PriceCurve {
    std::vector<double> prices;

    std::size_t size() const { return prices.size(); }
    double operator[](std::size_t q) const { return prices[q]; }
    friend bool operator==(const PriceCurve&, const PriceCurve&) = default;
};

/// Private valuation vector v(q) over the metric grid.
struct BuyerType {
    std::string id;
    std::vector<double> values;
};

/// Buyer types together with the seller's prior over them.
struct Population {
    std::vector<BuyerType> types;
    std::vector<double> prior;

    std::size_t size() const { return types.size(); }
    double max_value() const;
    /// Throws std::invalid_argument when lengths, bounds or the prior are off.
    void validate(std::size_t grid_size, double value_bound = std::numeric_limits<double>::infinity()) const;
};

struct SearchCost {
    double per_period = 0.0;
};

/// Surplus bookkeeping shared by the DP, the simulator and the stopping-time
/// recursion. Held states are 0..n-1 (a metric) plus n (nothing held: the
/// outside option with value and price zero).
class SurplusModel {
public:
    SurplusModel(const BuyerType& type, const PriceCurve& price);

    std::size_t grid_size() const { return n_; }
    std::size_t null_state() const { return n_; }
    double surplus(std::size_t held) const { return surplus_[held]; }
    double price(std::size_t held) const { return price_[held]; }

    /// Best-surplus state after observing metric q while holding `held`.
    /// Only raw surpluses are compared; equal surpluses (within 1e-9) resolve
    /// toward the higher price.
    std::size_t advance(std::size_t held, std::size_t q) const;

private:
    std::size_t n_;
    std::vector<double> surplus_;
    std::vector<double> price_;
};

/// Optimal-stopping value table Phi(held, current, t) and its stop/continue
/// policy. The held axis has grid_size + 1 entries (last = outside option).
class PolicyTable {
public:
    PolicyTable(std::size_t grid_size, std::size_t horizon);

    std::size_t grid_size() const { return n_; }
    std::size_t horizon() const { return horizon_; }
    std::size_t null_state() const { return n_; }

    /// t is 1-based.
    double phi(std::size_t held, std::size_t current, std::size_t t) const { return phi_[index(held, current, t)]; }
    bool continues(std::size_t held, std::size_t current, std::size_t t) const {
        return continue_[index(held, current, t)] != 0;
    }
    /// Expected utility before round 1: nothing held, q_1 drawn from P_1.
    double initial_value() const { return initial_value_; }

    std::span<const double> phi_values() const { return phi_; }
    std::span<const std::uint8_t> continue_flags() const { return continue_; }

private:
    friend PolicyTable solve_optimal_stopping(const BuyerType&, const PriceCurve&, const MarkovChain&, SearchCost);
    friend PolicyTable make_stop_everywhere_policy(std::size_t, std::size_t);

    std::size_t index(std::size_t held, std::size_t current, std::size_t t) const {
        return ((t - 1) * (n_ + 1) + held) * n_ + current;
    }

    std::size_t n_;
    std::size_t horizon_;
    std::vector<double> phi_;
    std::vector<std::uint8_t> continue_;
    double initial_value_ = 0.0;
};

struct StoppingOutcome {
    std::size_t stop_time = 0;
    std::optional<std::size_t> purchased;
    double payment = 0.0;
    double search_cost_paid = 0.0;
    double buyer_utility = 0.0;
};

/// Backward induction over (held, current, t). Stopping at (held, t) is worth
/// max(v - x, 0) - c t; ties between stopping and continuing resolve to stop.
PolicyTable solve_optimal_stopping(const BuyerType& type, const PriceCurve& price, const MarkovChain& chain,
                                   SearchCost cost);

/// A policy that stops at every state. Useful for tests and as a myopic baseline.
PolicyTable make_stop_everywhere_policy(std::size_t grid_size, std::size_t horizon);

/// Walks a trajectory under `policy`. The held item is bought when it is a
/// real metric (seller-favorable at zero surplus); otherwise the buyer leaves.
StoppingOutcome simulate_buyer(const BuyerType& type, const PolicyTable& policy, const Trajectory& trajectory,
                               const PriceCurve& price, SearchCost cost);

/// argmax of v - x over the trajectory's metrics when the best surplus is
/// nonnegative; ties go to the higher price.
std::optional<std::size_t> best_choice_full_trajectory(const BuyerType& type, const PriceCurve& price,
                                                       std::span<const std::size_t> metrics);

/// Surplus thresholds z(t, current). The buyer stops at time t iff the held
/// surplus is >= z. -inf means "always stop", +inf means "never stop".
class ReservationValues {
public:
    ReservationValues(std::size_t grid_size, std::size_t horizon);

    static constexpr double kAlwaysStop = -std::numeric_limits<double>::infinity();
    static constexpr double kNeverStop = std::numeric_limits<double>::infinity();

    std::size_t grid_size() const { return n_; }
    std::size_t horizon() const { return horizon_; }
    double threshold(std::size_t t, std::size_t current) const { return z_[(t - 1) * n_ + current]; }
    void set(std::size_t t, std::size_t current, double z) { z_[(t - 1) * n_ + current] = z; }
    bool stops(std::size_t t, std::size_t current, double held_surplus) const;

private:
    std::size_t n_;
    std::size_t horizon_;
    std::vector<double> z_;
};

ReservationValues reservation_values(const BuyerType& type, const PriceCurve& price, const MarkovChain& chain,
                                     SearchCost cost);

/// Reads thresholds straight off an existing policy table.
ReservationValues reservation_values_from_policy(const PolicyTable& policy, const SurplusModel& surplus);

/// Stop-time distribution of one buyer type.
struct StoppingDistribution {
    /// stop_probability[t-1] = Pr(stop at round t).
    std::vector<double> stop_probability;
    /// joint[t-1] is a (n+1) x (n+1) table Pr(stop at t, held = q, previous
    /// metric = p). Row n is the outside option; column n means "no previous
    /// metric" (t = 1).
    std::vector<SquareMatrix> joint;
};

StoppingDistribution stopping_distribution(const BuyerType& type, const PriceCurve& price, const MarkovChain& chain,
                                           SearchCost cost);

StoppingDistribution stopping_distribution(const ReservationValues& thresholds, const SurplusModel& surplus,
                                           const MarkovChain& chain);

} // namespace market
