#pragma once

#include "market/discovery.hpp"
#include "market/io.hpp"
#include "market/learning.hpp"
#include "market/pricing.hpp"

#include <json.hpp>

#include <array>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace market {

/// An error raised inside a named pipeline stage. what() is "stage: message".
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& message)
        : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

template <typename F>
decltype(auto) in_stage(const std::string& stage, F&& fn) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

/// 0 means one worker per hardware thread.
std::size_t worker_count(std::size_t requested);

/// Calls fn(i) for i in [0, count) on up to `threads` workers and returns the
/// results in index order. Each task must derive its own randomness from i,
/// so the output does not depend on scheduling. The exception of the lowest
/// failing index is rethrown after all workers finish.
template <typename T, typename F>
std::vector<T> parallel_map(std::size_t count, std::size_t threads, F&& fn) {
    std::vector<std::optional<T>> slots(count);
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) {
            try {
                slots[i].emplace(fn(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n = std::min(worker_count(threads), std::max<std::size_t>(count, 1));
    if (n <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < n; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<T> out;
    out.reserve(count);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

struct ChainSpec {
    /// "drift", "dense" or "file".
    std::string source = "drift";
    std::size_t horizon = 5;
    double drift = 1.0;
    std::filesystem::path path;
};

struct SimulateConfig {
    std::size_t trajectories = 100;
    double smoothing = 0.0;
};

struct PricingBenchConfig {
    std::size_t instances = 5;
    std::size_t types = 4;
    double value_bound = 10.0;
    std::string prior = "random";
    std::size_t sample_size = 20;
    /// Zero means the same as sample_size.
    std::size_t test_size = 0;
    double search_cost = 0.0;
    double budget_seconds = 30.0;
    /// Reaching the node limit is deterministic; reaching the time budget is not.
    std::size_t node_limit = 1'000'000;
    std::string oos_rule = "uniform-half";
    /// Optional inputs; a trajectory file forces a single instance.
    std::filesystem::path trajectories_path;
    std::filesystem::path population_path;
};

struct LearningGridConfig {
    std::size_t types = 5;
    std::size_t states = 10;
    std::size_t horizon = 15;
    double value_bound = 10.0;
    double search_cost = 0.1;
    /// Posted price = markup * mean valuation of each metric.
    double price_markup = 1.2;
    double drift = 2.0;
    std::vector<std::string> priors{"random"};
    std::vector<std::string> schedules{"inverse-sqrt"};
    std::vector<std::size_t> batches{100};
    std::vector<std::size_t> rounds{10000};
    std::size_t seeds = 1;
    /// Write every k-th round of the KL trace (the last round is always kept).
    std::size_t record_every = 1;
};

struct DiscoveryBenchConfig {
    std::size_t models = 8;
    std::size_t augmentations = 200;
    std::size_t clusters = 10;
    double noise = 0.02;
    double model_gap = 0.1;
    double cluster_gap = 0.1;
    std::size_t max_iterations = 300;
    double gamma = 0.1;
    std::size_t cheap_model = 0;
    std::size_t sweep_every = 10;
    std::size_t seeds = 1;
    /// When set, evaluations go to this command over NDJSON instead of the
    /// synthetic environment (which still supplies the pool).
    std::string external_command;
};

struct CeeConfig {
    std::size_t types = 3;
    std::size_t states = 4;
    std::size_t horizon = 3;
    double value_bound = 10.0;
    double drift = 1.0;
    std::vector<double> epsilons{0.0, 0.01, 0.02, 0.04, 0.08};
    std::size_t seeds = 20;
    std::size_t sample_size = 4;
    /// "prior", "chain" or "both".
    std::string target = "both";
    double gap_tol = 1e-9;
};

struct PipelineConfig {
    std::size_t discovery_runs = 40;
    std::size_t period = 30;
    std::size_t periods = 5;
    double metric_resolution = 0.1;
    std::size_t types = 3;
    double value_bound = 10.0;
    double search_cost = 0.05;
    std::size_t buyers = 500;
    double smoothing = 0.0;
    double budget_seconds = 30.0;
    std::size_t node_limit = 1'000'000;
};

struct ExperimentConfig {
    /// discovery-benchmark | pricing-benchmark | prior-learning | cee |
    /// pipeline | simulate. Informational; each command reads its section.
    std::string kind;
    std::uint64_t seed = 1;
    std::size_t threads = 0;
    MetricGrid grid = MetricGrid::uniform(0.0, 0.09, 0.01);
    ChainSpec chain;
    SimulateConfig simulate;
    PricingBenchConfig pricing;
    LearningGridConfig learning;
    DiscoveryBenchConfig discovery;
    CeeConfig cee;
    PipelineConfig pipeline;
    /// The document as given, used for the manifest hash.
    nlohmann::json source;
};

/// Missing keys take the defaults above; unknown keys and wrong types are
/// errors naming the key. Relative paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

struct OutputFile {
    std::string name;
    std::string content;
};

struct CommandResult {
    std::vector<OutputFile> files;
    /// Stage name and wall seconds, in order.
    std::vector<std::pair<std::string, double>> wall_times;
};

CommandResult cmd_simulate(const ExperimentConfig& config);
CommandResult cmd_price(const ExperimentConfig& config);
CommandResult cmd_learn(const ExperimentConfig& config);
CommandResult cmd_discover(const ExperimentConfig& config);
CommandResult cmd_cee(const ExperimentConfig& config);
CommandResult cmd_pipeline(const ExperimentConfig& config);

/// Synthetic environment of the discovery section for seed index `index`.
SyntheticEnvironment discovery_environment(const ExperimentConfig& config, std::size_t index);

/// Writes the files under `dir` plus manifest.json (config hash, version,
/// per-file FNV-1a checksums and sizes, wall times).
void write_outputs(const std::filesystem::path& dir, const std::string& command, const ExperimentConfig& config,
                   const CommandResult& result);

/// Least-squares fit y = c0 + c1 x + c2 x^2. Needs three distinct x.
std::array<double, 3> fit_quadratic(std::span<const double> x, std::span<const double> y);

struct OneSidedTest {
    double mean = 0.0;
    double t = 0.0;
    /// Pr(T >= t) under mean 0.
    double p_value = 1.0;
};
/// One-sample t-test of H0: mean <= 0 against mean > 0.
OneSidedTest t_test_positive(std::span<const double> samples);

const char* tool_version();

} // namespace market
