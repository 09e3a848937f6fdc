#pragma once

#include "market/metric_grid.hpp"
#include "market/rng.hpp"

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace market {

struct Augmentation {
    std::size_t id = 0;
    std::size_t cluster = 0;
    std::vector<double> profile;
};

/// A buyer task as seen by the discovery loop: a model menu, a pool of
/// candidate augmentations and a (possibly noisy) evaluator.
///
/// evaluate must be safe to call concurrently from distinct runs; any noise
/// comes from the caller's generator.
class TaskEnvironment {
public:
    virtual ~TaskEnvironment() = default;

    virtual std::size_t model_count() const = 0;
    virtual std::span<const Augmentation> augmentations() const = 0;
    /// Metric in [0, 1] of `model` trained on the input joined with the
    /// listed augmentations (empty = the input alone).
    virtual double evaluate(std::size_t model, std::span<const std::size_t> augmentation_ids, Rng& rng) const = 0;
};

struct SyntheticSpec {
    std::size_t models = 8;
    std::size_t augmentations = 200;
    std::size_t clusters = 10;
    double base = 0.4;
    /// One offset per model.
    std::vector<double> model_offsets;
    /// One gain per cluster, counted once however many of its members join.
    std::vector<double> cluster_gains;
    double noise_sigma = 0.0;
    std::size_t profile_dim = 4;

    /// Throws std::invalid_argument on inconsistent sizes.
    void validate() const;
};

/// clamp(base + offset(model) + sum of gains of the clusters present + noise, 0, 1).
class SyntheticEnvironment final : public TaskEnvironment {
public:
    SyntheticEnvironment(SyntheticSpec spec, std::vector<Augmentation> pool);

    std::size_t model_count() const override { return spec_.models; }
    std::span<const Augmentation> augmentations() const override { return pool_; }
    double evaluate(std::size_t model, std::span<const std::size_t> augmentation_ids, Rng& rng) const override;

    double noiseless(std::size_t model, std::span<const std::size_t> augmentation_ids) const;
    /// Best noiseless metric of a single augmentation (or none) with any model.
    double single_augmentation_optimum() const;
    const SyntheticSpec& spec() const { return spec_; }

private:
    SyntheticSpec spec_;
    std::vector<Augmentation> pool_;
};

/// Members are dealt to clusters round-robin and then shuffled; profiles are
/// a per-cluster centre plus small noise.
SyntheticEnvironment make_synthetic_env(const SyntheticSpec& spec, Rng& rng);

/// One strictly dominant model and one dominant cluster, both at random
/// positions. The other models sit at least `model_gap` below the best and
/// the other clusters at least `cluster_gap` below the planted one.
SyntheticSpec planted_spec(std::size_t models, std::size_t augmentations, std::size_t clusters, double noise_sigma,
                           Rng& rng, double model_gap = 0.1, double cluster_gap = 0.1);

struct Exp3State {
    explicit Exp3State(std::size_t arms, double gamma = 0.1);

    std::size_t arms() const { return log_weights.size(); }
    /// Weights rescaled so the largest is 1; tiny ones are floored at the
    /// smallest normal double so they stay positive.
    std::vector<double> weights() const;

    /// Stored as logarithms so long runs neither overflow nor underflow.
    std::vector<double> log_weights;
    double gamma;
};

/// (1 - gamma) w / sum(w) + gamma / K.
std::vector<double> exp3_probabilities(const Exp3State& state);

/// Multiplies the chosen weight by exp(gamma * r_hat / K) with
/// r_hat = reward / Pr(chosen). Throws for rewards outside [0, 1].
void exp3_update(Exp3State& state, std::size_t arm, double reward);

/// One realized evaluation and the augmentation it tested.
struct TriedAugmentation {
    std::size_t id;
    double metric;
};

/// Picks the next untried augmentation: clusters are ranked by the mean
/// metric of their tried members (untried clusters first, lowest label
/// first on ties) and members are taken in pool order. nullopt when every
/// augmentation has been tried.
std::optional<std::size_t> select_augmentation(std::span<const Augmentation> pool,
                                               std::span<const TriedAugmentation> history);

/// Incremental form of select_augmentation for long runs.
class AugmentationSelector {
public:
    explicit AugmentationSelector(std::span<const Augmentation> pool);

    std::optional<std::size_t> next() const;
    void record(std::size_t augmentation_id, double metric);
    /// Once the pool is exhausted: members of the best-mean cluster in turn.
    std::size_t revisit() const;
    void record_revisit(std::size_t augmentation_id, double metric);
    std::size_t tried() const { return tried_count_; }

private:
    struct Cluster {
        std::size_t label;
        std::vector<std::size_t> members;
        std::size_t cursor = 0;
        double total = 0.0;
        std::size_t samples = 0;
        std::size_t revisits = 0;
    };
    const Cluster& best_cluster() const;
    std::vector<Cluster> clusters_;
    std::vector<std::size_t> cluster_of_id_;
    std::vector<std::size_t> position_of_id_;
    std::vector<char> tried_;
    std::size_t tried_count_ = 0;
};

struct DiscoveryRecord {
    std::size_t iteration;
    std::size_t model;
    /// Empty for evaluations without augmentation.
    std::vector<std::size_t> augmentations;
    double metric;
    double best;
    bool final_pass = false;
};

struct DiscoveryTrace {
    std::vector<DiscoveryRecord> records;
    std::size_t best_model = 0;
    std::vector<std::size_t> best_augmentations;
    double best_metric = 0.0;
    /// Evaluations in the main loop and in the closing re-evaluation pass.
    std::size_t loop_evaluations = 0;
    std::size_t final_pass_evaluations = 0;
    std::size_t iterations = 0;

    std::size_t evaluations() const { return loop_evaluations + final_pass_evaluations; }
};

struct StopRule {
    std::size_t max_iterations = 300;
    /// Zero means no cap; otherwise the run ends once this many loop
    /// evaluations have been spent, even mid-iteration.
    std::size_t max_evaluations = 0;
    /// Zero means no wall-clock limit.
    double wall_budget_seconds = 0.0;
    /// Polled once per iteration; returning true stops the run.
    std::function<bool()> stop_signal;
};

struct DiscoveryConfig {
    double gamma = 0.1;
    bool final_pass = true;
};

/// The bandit loop: select an augmentation, sample a model by Exp3, evaluate
/// once, update. After the pool runs out the loop keeps going on the
/// best-mean cluster so the model weights keep learning. On stop, the top ceil(log2 |P|) tried augmentations are
/// re-evaluated with the highest-weight model, and the best pair seen
/// anywhere is returned.
DiscoveryTrace run_discovery(const TaskEnvironment& env, const StopRule& stop, const DiscoveryConfig& config,
                             Rng& rng);

/// Every model on every selected augmentation: |M| evaluations per iteration.
DiscoveryTrace run_data_all(const TaskEnvironment& env, const StopRule& stop, Rng& rng);

/// A fixed cheap model screens augmentations one evaluation at a time; every
/// `sweep_every` iterations all models are trained on the best augmentation.
DiscoveryTrace run_data_alt(const TaskEnvironment& env, const StopRule& stop, std::size_t cheap_model,
                            std::size_t sweep_every, Rng& rng);

/// No augmentation search: models are tried round-robin on the input alone.
DiscoveryTrace run_automl_only(const TaskEnvironment& env, const StopRule& stop, Rng& rng);

/// 1-based index of the first record whose noiseless metric reaches
/// `target` (within 1e-12), or nullopt.
std::optional<std::size_t> evaluations_to_reach(const DiscoveryTrace& trace, const SyntheticEnvironment& env,
                                                double target);

/// Latest realized metric at the end of each period, quantized. Final-pass
/// records are ignored. Throws when the loop is shorter than one period.
Trajectory trace_to_trajectory(const DiscoveryTrace& trace, const MetricGrid& grid, std::size_t period);

/// Talks to a child process over newline-delimited JSON: each request is
/// {"model": i, "augmentation_ids": [...]} and each reply {"metric": x}.
/// Calls are serialized internally.
class ExternalEnvironment final : public TaskEnvironment {
public:
    ExternalEnvironment(const std::string& command, std::size_t models, std::vector<Augmentation> pool);
    ~ExternalEnvironment() override;
    ExternalEnvironment(const ExternalEnvironment&) = delete;
    ExternalEnvironment& operator=(const ExternalEnvironment&) = delete;

    std::size_t model_count() const override { return models_; }
    std::span<const Augmentation> augmentations() const override { return pool_; }
    double evaluate(std::size_t model, std::span<const std::size_t> augmentation_ids, Rng& rng) const override;

private:
    struct Process;
    std::size_t models_;
    std::vector<Augmentation> pool_;
    std::unique_ptr<Process> process_;
};

/// Answers NDJSON requests from `in` with `env` until end of input. Noise is
/// drawn from `rng` in request order.
void serve_environment(const TaskEnvironment& env, std::istream& in, std::ostream& out, Rng& rng);

} // namespace market
