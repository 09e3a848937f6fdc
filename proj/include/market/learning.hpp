#pragma once

#include "market/buyer.hpp"
#include "market/markov_chain.hpp"
#include "market/pricing.hpp"
#include "market/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace market {

/// eta_t for round t = 1, 2, ...
enum class RateSchedule { Harmonic, InverseSqrt, Constant };

RateSchedule parse_rate_schedule(const std::string& name);
const char* to_string(RateSchedule schedule);
/// 1/(t+1), 1/sqrt(t) or 0.5.
double learning_rate(RateSchedule schedule, std::size_t round);

/// Pr(stop at t | type) for every type under one posted curve.
struct LikelihoodTable {
    /// rows[i][t-1]
    std::vector<std::vector<double>> rows;
    std::vector<StoppingDistribution> details;

    std::size_t types() const { return rows.size(); }
    std::size_t horizon() const { return rows.empty() ? 0 : rows.front().size(); }
};

LikelihoodTable precompute_likelihoods(const Population& population, const PriceCurve& price,
                                       const MarkovChain& chain, SearchCost cost);

/// w(i) proportional to Pr(y | i) mu(i). nullopt when no type with prior mass
/// can stop at y.
std::optional<std::vector<double>> posterior_update(const LikelihoodTable& table, std::span<const double> prior,
                                                    std::size_t stop_round);

/// Types whose stop-time rows agree within `tol` share a class.
struct TypeClasses {
    std::vector<std::size_t> class_of;
    std::size_t count = 0;
};

TypeClasses indistinguishable_classes(const LikelihoodTable& table, double tol = 1e-12);

/// Sums prior mass within each class.
std::vector<double> merge_prior(std::span<const double> prior, const TypeClasses& classes);

/// Keeps one row per class.
LikelihoodTable merge_table(const LikelihoodTable& table, const TypeClasses& classes);

struct LearningState {
    std::vector<double> prior;
    std::size_t round = 0;
    RateSchedule schedule = RateSchedule::InverseSqrt;
    std::size_t batch_size = 1;
};

/// One smoothing round: posteriors of the batch are averaged into w and the
/// prior becomes (1 - eta) prior + eta w. Impossible observations are left
/// out of the average and counted in `skipped`; a batch with none usable
/// leaves the prior as is. The round counter always advances.
LearningState learning_step(const LearningState& state, const LikelihoodTable& table,
                            std::span<const std::size_t> stops, std::size_t* skipped = nullptr);

/// Same step with an explicit rate, bypassing the schedule.
LearningState learning_step_with_rate(const LearningState& state, const LikelihoodTable& table,
                                      std::span<const std::size_t> stops, double eta,
                                      std::size_t* skipped = nullptr);

enum class KlDirection { TruthToLearned, LearnedToTruth };

/// sum p log(p / q); +inf when q misses mass that p has.
double kl_divergence(std::span<const double> p, std::span<const double> q);

struct LearningConfig {
    std::size_t rounds = 1;
    std::size_t batch_size = 1;
    RateSchedule schedule = RateSchedule::InverseSqrt;
    /// Starting prior over the original types; empty means uniform.
    std::vector<double> initial_prior;
    KlDirection kl_direction = KlDirection::TruthToLearned;
    /// When both are set the curve is re-solved from the current prior every
    /// `resolve_every` rounds and the likelihoods are rebuilt.
    std::size_t resolve_every = 0;
    std::function<PriceCurve(const std::vector<double>& prior)> resolve;
};

struct LearningTrace {
    /// kl[t-1] after round t, measured over indistinguishable classes.
    std::vector<double> kl;
    /// Learned prior over the original types. Mass inside a class keeps the
    /// split of the initial prior, since no stop time can move it.
    std::vector<double> final_prior;
    TypeClasses classes;
    std::size_t impossible_observations = 0;
};

/// Each round draws batch_size buyers from the true prior, walks each one
/// along a fresh trajectory with its optimal stopping policy, and feeds the
/// stop times to learning_step.
LearningTrace run_learning(const std::vector<double>& true_prior, const Population& population,
                           const PriceCurve& price, const MarkovChain& chain, SearchCost cost,
                           const LearningConfig& config, Rng& rng);

/// Problem shape shared by both solves of a cost-of-estimation-error run.
struct CeeTemplate {
    std::size_t sample_size = 4;
    SearchCost cost;
    PricingOptions options;
    PricingSolveConfig solver;
};

struct CeeResult {
    double value = 0.0;
    double true_optimum = 0.0;
    double revenue_of_estimate = 0.0;
    PriceCurve true_curve;
    PriceCurve estimated_curve;
};

/// Rev(x*[truth]) - Rev(x*[estimate]), both evaluated in sample on the
/// truth's sample. The two samples are drawn from the same seed, one uniform
/// per step, so equal chains give equal samples.
CeeResult cost_of_estimation_error(const Population& truth, const MarkovChain& true_chain,
                                   const std::vector<double>& estimated_prior, const MarkovChain& estimated_chain,
                                   const CeeTemplate& tmpl, std::uint64_t sample_seed);

} // namespace market
