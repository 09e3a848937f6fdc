#include "market/buyer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace market {

namespace {

// Surpluses closer than this are the same surplus.
constexpr double kSurplusTieTol = 1e-9;

double decision_tolerance(double stop_value) { return 1e-12 * (1.0 + std::abs(stop_value)); }

void check_dimensions(const BuyerType& type, const PriceCurve& price, const MarkovChain& chain) {
    if (type.values.size() != chain.states() || price.size() != chain.states())
        throw std::invalid_argument("buyer type, price curve and chain disagree on the grid size");
}

} // namespace

double Population::max_value() const {
    double best = 0.0;
    for (const auto& t : types)
        for (double v : t.values) best = std::max(best, v);
    return best;
}

void Population::validate(std::size_t grid_size, double value_bound) const {
    if (types.empty()) throw std::invalid_argument("population has no buyer types");
    if (prior.size() != types.size()) throw std::invalid_argument("prior length differs from the number of types");
    double total = 0.0;
    for (double p : prior) {
        if (!(p >= 0.0)) throw std::invalid_argument("prior entries must be nonnegative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("prior does not sum to 1");
    for (const auto& t : types) {
        if (t.values.size() != grid_size) throw std::invalid_argument("buyer type '" + t.id + "' has wrong length");
        for (double v : t.values)
            if (!(v >= 0.0 && v <= value_bound))
                throw std::invalid_argument("buyer type '" + t.id + "' has a value outside [0, bound]");
    }
}

SurplusModel::SurplusModel(const BuyerType& type, const PriceCurve& price)
    : n_(type.values.size()), surplus_(n_ + 1, 0.0), price_(n_ + 1, 0.0) {
    if (price.size() != n_) throw std::invalid_argument("price curve and buyer type disagree on the grid size");
    for (std::size_t q = 0; q < n_; ++q) {
        surplus_[q] = type.values[q] - price.prices[q];
        price_[q] = price.prices[q];
    }
}

std::size_t SurplusModel::advance(std::size_t held, std::size_t q) const {
    const double diff = surplus_[q] - surplus_[held];
    if (diff > kSurplusTieTol) return q;
    if (diff >= -kSurplusTieTol && price_[q] > price_[held]) return q;
    return held;
}

PolicyTable::PolicyTable(std::size_t grid_size, std::size_t horizon)
    : n_(grid_size),
      horizon_(horizon),
      phi_((grid_size + 1) * grid_size * horizon, 0.0),
      continue_((grid_size + 1) * grid_size * horizon, 0) {
    if (horizon == 0) throw std::invalid_argument("horizon must be >= 1");
}

PolicyTable solve_optimal_stopping(const BuyerType& type, const PriceCurve& price, const MarkovChain& chain,
                                   SearchCost cost) {
    check_dimensions(type, price, chain);
    const SurplusModel sm(type, price);
    const std::size_t n = chain.states();
    const std::size_t horizon = chain.horizon();
    const double c = cost.per_period;
    PolicyTable table(n, horizon);

    auto stop_value = [&](std::size_t held, std::size_t t) {
        return std::max(sm.surplus(held), 0.0) - c * static_cast<double>(t);
    };

    for (std::size_t held = 0; held <= n; ++held)
        for (std::size_t q = 0; q < n; ++q) table.phi_[table.index(held, q, horizon)] = stop_value(held, horizon);

    for (std::size_t t = horizon - 1; t >= 1; --t) {
        const SquareMatrix& next = chain.transition_into(t + 1);
        for (std::size_t held = 0; held <= n; ++held) {
            const double stop = stop_value(held, t);
            for (std::size_t q = 0; q < n; ++q) {
                double cont = 0.0;
                auto row = next.row(q);
                for (std::size_t q2 = 0; q2 < n; ++q2) {
                    if (row[q2] == 0.0) continue;
                    cont += row[q2] * table.phi_[table.index(sm.advance(held, q2), q2, t + 1)];
                }
                const std::size_t idx = table.index(held, q, t);
                if (cont > stop + decision_tolerance(stop)) {
                    table.phi_[idx] = cont;
                    table.continue_[idx] = 1;
                } else {
                    table.phi_[idx] = stop;
                }
            }
        }
        if (t == 1) break;
    }

    double v0 = 0.0;
    auto init = chain.initial();
    for (std::size_t q = 0; q < n; ++q) {
        if (init[q] == 0.0) continue;
        v0 += init[q] * table.phi_[table.index(sm.advance(sm.null_state(), q), q, 1)];
    }
    table.initial_value_ = v0;
    return table;
}

PolicyTable make_stop_everywhere_policy(std::size_t grid_size, std::size_t horizon) {
    return PolicyTable(grid_size, horizon);
}

StoppingOutcome simulate_buyer(const BuyerType& type, const PolicyTable& policy, const Trajectory& trajectory,
                               const PriceCurve& price, SearchCost cost) {
    if (trajectory.length() != policy.horizon())
        throw std::invalid_argument("trajectory length differs from the policy horizon");
    const SurplusModel sm(type, price);
    std::size_t held = sm.null_state();
    std::size_t tau = policy.horizon();
    for (std::size_t t = 1; t <= policy.horizon(); ++t) {
        const std::size_t q = trajectory.metrics[t - 1];
        held = sm.advance(held, q);
        if (t == policy.horizon() || !policy.continues(held, q, t)) {
            tau = t;
            break;
        }
    }
    StoppingOutcome out;
    out.stop_time = tau;
    out.search_cost_paid = cost.per_period * static_cast<double>(tau);
    if (held != sm.null_state()) {
        out.purchased = held;
        out.payment = sm.price(held);
        out.buyer_utility = sm.surplus(held);
    }
    out.buyer_utility -= out.search_cost_paid;
    return out;
}

std::optional<std::size_t> best_choice_full_trajectory(const BuyerType& type, const PriceCurve& price,
                                                       std::span<const std::size_t> metrics) {
    const SurplusModel sm(type, price);
    std::size_t held = sm.null_state();
    for (std::size_t q : metrics) held = sm.advance(held, q);
    if (held == sm.null_state()) return std::nullopt;
    return held;
}

ReservationValues::ReservationValues(std::size_t grid_size, std::size_t horizon)
    : n_(grid_size), horizon_(horizon), z_(grid_size * horizon, kNeverStop) {}

bool ReservationValues::stops(std::size_t t, std::size_t current, double held_surplus) const {
    if (t >= horizon_) return true;
    const double z = threshold(t, current);
    if (z == kAlwaysStop) return true;
    if (z == kNeverStop) return false;
    return held_surplus >= z - kSurplusTieTol;
}

ReservationValues reservation_values_from_policy(const PolicyTable& policy, const SurplusModel& sm) {
    const std::size_t n = policy.grid_size();
    ReservationValues z(n, policy.horizon());

    // Held states a buyer can actually occupy: nothing, or a metric that beats
    // the outside option under the seller-favorable tie rule.
    std::vector<std::size_t> reachable{sm.null_state()};
    for (std::size_t q = 0; q < n; ++q)
        if (sm.advance(sm.null_state(), q) == q) reachable.push_back(q);

    for (std::size_t t = 1; t <= policy.horizon(); ++t) {
        for (std::size_t cur = 0; cur < n; ++cur) {
            if (t == policy.horizon()) {
                z.set(t, cur, ReservationValues::kAlwaysStop);
                continue;
            }
            // The state just observed can never beat the held one.
            bool all_stop = true;
            double smallest = ReservationValues::kNeverStop;
            for (std::size_t held : reachable) {
                if (sm.advance(held, cur) != held) continue;
                if (policy.continues(held, cur, t))
                    all_stop = false;
                else
                    smallest = std::min(smallest, sm.surplus(held));
            }
            z.set(t, cur, all_stop ? ReservationValues::kAlwaysStop : smallest);
        }
    }
    return z;
}

ReservationValues reservation_values(const BuyerType& type, const PriceCurve& price, const MarkovChain& chain,
                                     SearchCost cost) {
    const PolicyTable policy = solve_optimal_stopping(type, price, chain, cost);
    return reservation_values_from_policy(policy, SurplusModel(type, price));
}

StoppingDistribution stopping_distribution(const ReservationValues& z, const SurplusModel& sm,
                                           const MarkovChain& chain) {
    const std::size_t n = chain.states();
    const std::size_t horizon = chain.horizon();
    if (z.grid_size() != n || z.horizon() != horizon || sm.grid_size() != n)
        throw std::invalid_argument("thresholds, surplus model and chain disagree on dimensions");

    StoppingDistribution out;
    out.stop_probability.assign(horizon, 0.0);
    out.joint.assign(horizon, SquareMatrix(n + 1));

    // alive(held, current): probability of still searching after observing
    // `current` at round t with best-surplus state `held`.
    SquareMatrix alive(n + 1);
    auto settle = [&](std::size_t t, std::size_t held, std::size_t cur, std::size_t prev, double mass,
                      SquareMatrix& next_alive) {
        if (z.stops(t, cur, sm.surplus(held))) {
            out.stop_probability[t - 1] += mass;
            out.joint[t - 1](held, prev) += mass;
        } else {
            next_alive(held, cur) += mass;
        }
    };

    auto init = chain.initial();
    for (std::size_t q = 0; q < n; ++q) {
        if (init[q] == 0.0) continue;
        settle(1, sm.advance(sm.null_state(), q), q, n, init[q], alive);
    }
    for (std::size_t t = 2; t <= horizon; ++t) {
        const SquareMatrix& step = chain.transition_into(t);
        SquareMatrix next_alive(n + 1);
        for (std::size_t held = 0; held <= n; ++held) {
            for (std::size_t prev = 0; prev < n; ++prev) {
                const double mass = alive(held, prev);
                if (mass == 0.0) continue;
                auto row = step.row(prev);
                for (std::size_t q = 0; q < n; ++q) {
                    if (row[q] == 0.0) continue;
                    settle(t, sm.advance(held, q), q, prev, mass * row[q], next_alive);
                }
            }
        }
        alive = std::move(next_alive);
    }
    return out;
}

StoppingDistribution stopping_distribution(const BuyerType& type, const PriceCurve& price, const MarkovChain& chain,
                                           SearchCost cost) {
    check_dimensions(type, price, chain);
    return stopping_distribution(reservation_values(type, price, chain, cost), SurplusModel(type, price), chain);
}

} // namespace market
