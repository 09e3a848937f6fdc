#pragma once

#include "market/buyer.hpp"
#include "market/mip.hpp"
#include "market/rng.hpp"

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

namespace market {

/// How OOS evaluation thins each trajectory before the buyer chooses.
enum class SubsetRule { UniformHalf, Full };

SubsetRule parse_subset_rule(const std::string& name);
const char* to_string(SubsetRule rule);

struct PricingOptions {
    /// Adds a null item (value 0, price 0) to every choice set.
    bool allow_no_purchase = true;
    /// Price ceiling and constraint constant; defaults to 2 * max valuation.
    std::optional<double> big_m;
    SubsetRule oos_subset_rule = SubsetRule::UniformHalf;
};

struct PricingInstance {
    Population population;
    std::vector<Trajectory> sample;
    SearchCost cost;
    PricingOptions options;

    std::size_t grid_size() const;
    double big_m() const;
    /// Throws std::invalid_argument for an empty sample or mismatched grids.
    void validate() const;
};

/// One aggregated buyer: a type facing a distinct set of metrics. Identical
/// (type, metric set) pairs are merged and their weights added.
struct ChoiceGroup {
    std::size_t type;
    std::vector<std::size_t> items;
    double weight;
};

std::vector<ChoiceGroup> group_sample(const Population& population, std::span<const Trajectory> sample);

/// In-sample revenue over pre-grouped buyers (seller-favorable ties).
double grouped_revenue(const PriceCurve& curve, const Population& population, std::span<const ChoiceGroup> groups);

/// Variable layout of the pricing MILP.
struct PricingModel {
    struct Group {
        ChoiceGroup choice;
        std::size_t a_var;
        std::vector<std::size_t> z_vars;
        std::vector<std::size_t> y_vars;
        std::optional<std::size_t> z_null;
    };

    MipModel mip;
    /// price_var[q] is the column of x(q), or nullopt when q never appears.
    std::vector<std::optional<std::size_t>> price_var;
    std::vector<Group> groups;
    double big_m = 0.0;
};

PricingModel build_pricing_milp(const PricingInstance& instance);

/// Feasible MILP point encoding the buyers' choices under `curve`.
std::vector<double> warm_start_from_curve(const PricingModel& model, const PricingInstance& instance,
                                          const PriceCurve& curve);

struct PricingSolveConfig {
    MipConfig mip;
    bool warm_start = true;
};

struct PricingResult {
    PriceCurve curve;
    double objective = 0.0;
    double warm_start_revenue = 0.0;
    MipStatus status = MipStatus::Infeasible;
    double gap = 0.0;
    std::size_t nodes = 0;
    bool hit_limit = false;
};

/// Exact pricing by branch and bound, warm-started from jiggle_pricing.
/// Metrics absent from the sample get their independent (per-metric) price.
PricingResult solve_optimal_pricing(const PricingInstance& instance, const PricingSolveConfig& config = {});

struct BruteForceResult {
    PriceCurve curve;
    double revenue = 0.0;
    std::size_t assignments = 0;
};

/// Enumerates choice assignments depth first, solving each induced LP exactly
/// as a system of difference constraints. Infeasible prefixes and prefixes
/// that cannot beat the incumbent are cut. `assignments` counts complete
/// feasible assignments reached. Throws std::length_error once more than `cap`
/// partial assignments have been tried.
BruteForceResult brute_force_optimal(const PricingInstance& instance, std::size_t cap = 100000);

PriceCurve independent_pricing(const PricingInstance& instance);
PriceCurve shift_pricing(const PricingInstance& instance);
PriceCurve jiggle_pricing(const PricingInstance& instance);

enum class EvalMode { InSample, OutOfSample };

struct RevenueReport {
    double expected_revenue = 0.0;
    double total_welfare = 0.0;
    double fraction_of_welfare = 0.0;
    std::vector<double> per_type_revenue;
    std::vector<double> per_type_welfare;
};

/// Keeps ceil(|s|/2) uniformly chosen positions of each trajectory (order
/// preserved) under UniformHalf; returns the sample unchanged under Full.
std::vector<Trajectory> thin_trajectories(std::span<const Trajectory> sample, SubsetRule rule, Rng& rng);

/// IS: every (type, trajectory) buyer picks the best metric of the whole
/// trajectory. OOS: trajectories are thinned first. `rng` is only used in OOS.
RevenueReport evaluate_revenue(const PriceCurve& curve, const Population& population,
                               std::span<const Trajectory> sample, EvalMode mode,
                               SubsetRule rule = SubsetRule::UniformHalf, Rng* rng = nullptr);

} // namespace market
