#include "market/learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace market {

RateSchedule parse_rate_schedule(const std::string& name) {
    if (name == "harmonic") return RateSchedule::Harmonic;
    if (name == "inverse-sqrt") return RateSchedule::InverseSqrt;
    if (name == "constant") return RateSchedule::Constant;
    throw std::invalid_argument("unknown rate schedule '" + name + "'");
}

const char* to_string(RateSchedule schedule) {
    switch (schedule) {
    case RateSchedule::Harmonic: return "harmonic";
    case RateSchedule::InverseSqrt: return "inverse-sqrt";
    case RateSchedule::Constant: return "constant";
    }
    return "unknown";
}

double learning_rate(RateSchedule schedule, std::size_t round) {
    if (round == 0) throw std::invalid_argument("learning rounds are numbered from 1");
    const double t = static_cast<double>(round);
    switch (schedule) {
    case RateSchedule::Harmonic: return 1.0 / (t + 1.0);
    case RateSchedule::InverseSqrt: return 1.0 / std::sqrt(t);
    case RateSchedule::Constant: return 0.5;
    }
    return 0.0;
}

LikelihoodTable precompute_likelihoods(const Population& population, const PriceCurve& price,
                                       const MarkovChain& chain, SearchCost cost) {
    population.validate(chain.states());
    LikelihoodTable table;
    for (const auto& type : population.types) {
        auto dist = stopping_distribution(type, price, chain, cost);
        table.rows.push_back(dist.stop_probability);
        table.details.push_back(std::move(dist));
    }
    return table;
}

std::optional<std::vector<double>> posterior_update(const LikelihoodTable& table, std::span<const double> prior,
                                                    std::size_t stop_round) {
    if (prior.size() != table.types()) throw std::invalid_argument("prior and likelihood table disagree on types");
    if (stop_round == 0 || stop_round > table.horizon()) throw std::invalid_argument("stop round out of range");
    std::vector<double> w(prior.size());
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = table.rows[i][stop_round - 1] * prior[i];
        total += w[i];
    }
    if (!(total > 0.0)) return std::nullopt;
    for (auto& v : w) v /= total;
    return w;
}

TypeClasses indistinguishable_classes(const LikelihoodTable& table, double tol) {
    TypeClasses out;
    out.class_of.assign(table.types(), 0);
    std::vector<std::size_t> reps;
    for (std::size_t i = 0; i < table.types(); ++i) {
        std::size_t k = 0;
        for (; k < reps.size(); ++k) {
            const auto& a = table.rows[i];
            const auto& b = table.rows[reps[k]];
            bool same = true;
            for (std::size_t t = 0; t < a.size() && same; ++t) same = std::abs(a[t] - b[t]) <= tol;
            if (same) break;
        }
        if (k == reps.size()) reps.push_back(i);
        out.class_of[i] = k;
    }
    out.count = reps.size();
    return out;
}

std::vector<double> merge_prior(std::span<const double> prior, const TypeClasses& classes) {
    if (prior.size() != classes.class_of.size()) throw std::invalid_argument("prior and classes disagree on types");
    std::vector<double> out(classes.count, 0.0);
    for (std::size_t i = 0; i < prior.size(); ++i) out[classes.class_of[i]] += prior[i];
    return out;
}

LikelihoodTable merge_table(const LikelihoodTable& table, const TypeClasses& classes) {
    LikelihoodTable out;
    std::vector<char> taken(classes.count, 0);
    out.rows.resize(classes.count);
    out.details.resize(classes.count);
    for (std::size_t i = 0; i < table.types(); ++i) {
        const std::size_t k = classes.class_of[i];
        if (taken[k]) continue;
        taken[k] = 1;
        out.rows[k] = table.rows[i];
        if (i < table.details.size()) out.details[k] = table.details[i];
    }
    return out;
}

LearningState learning_step_with_rate(const LearningState& state, const LikelihoodTable& table,
                                      std::span<const std::size_t> stops, double eta, std::size_t* skipped) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("learning rate must lie in [0, 1]");
    LearningState next = state;
    ++next.round;
    std::vector<double> avg(state.prior.size(), 0.0);
    std::size_t used = 0;
    for (std::size_t y : stops) {
        const auto w = posterior_update(table, state.prior, y);
        if (!w) {
            if (skipped) ++*skipped;
            continue;
        }
        for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += (*w)[i];
        ++used;
    }
    if (used == 0) return next;
    double total = 0.0;
    for (std::size_t i = 0; i < avg.size(); ++i) {
        next.prior[i] = (1.0 - eta) * state.prior[i] + eta * avg[i] / static_cast<double>(used);
        total += next.prior[i];
    }
    for (auto& v : next.prior) v /= total;
    return next;
}

LearningState learning_step(const LearningState& state, const LikelihoodTable& table,
                            std::span<const std::size_t> stops, std::size_t* skipped) {
    if (stops.size() != state.batch_size) throw std::invalid_argument("batch does not match the state's batch size");
    return learning_step_with_rate(state, table, stops, learning_rate(state.schedule, state.round + 1), skipped);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("KL over distributions of different sizes");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(kl, 0.0);
}

LearningTrace run_learning(const std::vector<double>& true_prior, const Population& population,
                           const PriceCurve& price, const MarkovChain& chain, SearchCost cost,
                           const LearningConfig& config, Rng& rng) {
    if (config.rounds == 0) throw std::invalid_argument("learning needs at least one round");
    if (config.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
    Population truth = population;
    truth.prior = true_prior;
    truth.validate(chain.states());

    const std::size_t types = population.size();
    LearningState state;
    state.schedule = config.schedule;
    state.batch_size = config.batch_size;
    state.prior = config.initial_prior.empty() ? std::vector<double>(types, 1.0 / static_cast<double>(types))
                                               : config.initial_prior;
    if (state.prior.size() != types) throw std::invalid_argument("initial prior has the wrong length");

    PriceCurve curve = price;
    LikelihoodTable table;
    std::vector<PolicyTable> policies;
    TypeClasses classes;
    auto rebuild = [&] {
        table = precompute_likelihoods(truth, curve, chain, cost);
        classes = indistinguishable_classes(table);
        policies.clear();
        for (const auto& type : population.types) policies.push_back(solve_optimal_stopping(type, curve, chain, cost));
    };
    rebuild();

    // Types inside one class have identical likelihoods, so updating the
    // unmerged prior moves each class total exactly as the merged update
    // would; the split within a class never changes.
    LearningTrace trace;
    trace.kl.reserve(config.rounds);
    std::vector<std::size_t> stops(config.batch_size);
    for (std::size_t round = 1; round <= config.rounds; ++round) {
        for (auto& y : stops) {
            const std::size_t type = rng.categorical(true_prior);
            const auto traj = sample_trajectory(chain, rng);
            y = simulate_buyer(population.types[type], policies[type], traj, curve, cost).stop_time;
        }
        state = learning_step(state, table, stops, &trace.impossible_observations);

        const auto truth_merged = merge_prior(true_prior, classes);
        const auto learned_merged = merge_prior(state.prior, classes);
        trace.kl.push_back(config.kl_direction == KlDirection::TruthToLearned
                               ? kl_divergence(truth_merged, learned_merged)
                               : kl_divergence(learned_merged, truth_merged));

        if (config.resolve && config.resolve_every > 0 && round % config.resolve_every == 0 && round < config.rounds) {
            curve = config.resolve(state.prior);
            rebuild();
        }
    }
    trace.final_prior = state.prior;
    trace.classes = classes;
    return trace;
}

CeeResult cost_of_estimation_error(const Population& truth, const MarkovChain& true_chain,
                                   const std::vector<double>& estimated_prior, const MarkovChain& estimated_chain,
                                   const CeeTemplate& tmpl, std::uint64_t sample_seed) {
    if (tmpl.sample_size == 0) throw std::invalid_argument("empty sample requested");
    Population estimate = truth;
    estimate.prior = estimated_prior;
    estimate.validate(estimated_chain.states());

    auto make_instance = [&](const Population& pop, const MarkovChain& chain) {
        Rng rng(sample_seed);
        PricingInstance inst;
        inst.population = pop;
        inst.sample = sample_trajectories(chain, tmpl.sample_size, rng);
        inst.cost = tmpl.cost;
        inst.options = tmpl.options;
        return inst;
    };
    const auto true_inst = make_instance(truth, true_chain);
    const auto est_inst = make_instance(estimate, estimated_chain);

    CeeResult out;
    out.true_curve = solve_optimal_pricing(true_inst, tmpl.solver).curve;
    out.estimated_curve = solve_optimal_pricing(est_inst, tmpl.solver).curve;
    auto revenue = [&](const PriceCurve& c) {
        return evaluate_revenue(c, truth, true_inst.sample, EvalMode::InSample).expected_revenue;
    };
    out.true_optimum = revenue(out.true_curve);
    out.revenue_of_estimate = revenue(out.estimated_curve);
    out.value = out.true_optimum - out.revenue_of_estimate;
    return out;
}

} // namespace market
