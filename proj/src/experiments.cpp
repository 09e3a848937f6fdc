#include "market/experiments.hpp"

#include "market/generators.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace market {

const char* tool_version() { return "1.0.0"; }

std::size_t worker_count(std::size_t requested) {
    if (requested > 0) return requested;
    return std::max<unsigned>(1, std::thread::hardware_concurrency());
}

namespace {

using nlohmann::json;

// Reads one JSON object, remembering which keys were consumed so that typos
// surface as errors instead of silently falling back to defaults.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw std::runtime_error("config '" + where() + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw std::runtime_error("config key '" + path_ + key + "': " + e.what());
        }
    }

    void path(const char* key, std::filesystem::path& out, const std::filesystem::path& base) {
        std::string s;
        get(key, s);
        if (s.empty()) return;
        out = std::filesystem::path(s).is_relative() && !base.empty() ? base / s : std::filesystem::path(s);
        if (!std::filesystem::exists(out))
            throw std::runtime_error("config key '" + path_ + key + "': file '" + out.string() + "' does not exist");
    }

    std::optional<Section> sub(const char* key) {
        if (!j_.contains(key)) return std::nullopt;
        seen_.insert(key);
        return Section(j_.at(key), path_ + key + ".");
    }

    const json& raw(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }
    bool has(const char* key) const { return j_.contains(key); }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw std::runtime_error("unknown config key '" + path_ + k + "'");
    }

private:
    std::string where() const { return path_.empty() ? "<root>" : path_.substr(0, path_.size() - 1); }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

class Stopwatch {
public:
    template <typename F>
    decltype(auto) stage(const std::string& name, F&& fn) {
        const auto start = std::chrono::steady_clock::now();
        struct Record {
            Stopwatch* self;
            std::string name;
            std::chrono::steady_clock::time_point start;
            ~Record() {
                self->times.emplace_back(
                    name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
            }
        } record{this, name, start};
        return in_stage(name, std::forward<F>(fn));
    }

    std::vector<std::pair<std::string, double>> times;
};

MarkovChain make_chain(const ChainSpec& spec, const MetricGrid& grid, Rng& rng) {
    if (spec.source == "file") return chain_from_json(read_json_file(spec.path));
    if (spec.horizon == 0) throw std::invalid_argument("chain horizon must be >= 1");
    if (spec.source == "drift") return random_drift_chain(grid, spec.horizon, spec.drift, rng);
    if (spec.source == "dense") return random_dense_chain(grid, spec.horizon, rng);
    throw std::invalid_argument("unknown chain source '" + spec.source + "'");
}

MetricGrid index_grid(std::size_t states) {
    if (states == 0) throw std::invalid_argument("grid needs at least one state");
    return MetricGrid::uniform(0.0, 0.01 * static_cast<double>(states - 1), 0.01);
}

std::string str(double v) { return format_number(v); }
std::string str(std::size_t v) { return std::to_string(v); }

PriceCurve markup_curve(const Population& pop, double markup) {
    PriceCurve c;
    c.prices.assign(pop.types.front().values.size(), 0.0);
    for (const auto& t : pop.types)
        for (std::size_t q = 0; q < c.size(); ++q) c.prices[q] += markup * t.values[q] / static_cast<double>(pop.size());
    return c;
}

std::string join_ids(const std::vector<std::size_t>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ";" : "") + std::to_string(ids[i]);
    return s;
}

} // namespace

ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    c.source = doc;
    Section root(doc, "");
    root.get("kind", c.kind);
    root.get("seed", c.seed);
    root.get("threads", c.threads);
    if (root.has("grid")) {
        root.sub("grid");
        try {
            c.grid = grid_from_json(root.raw("grid"));
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("config key 'grid': ") + e.what());
        }
    }
    if (auto s = root.sub("chain")) {
        s->get("source", c.chain.source);
        s->get("horizon", c.chain.horizon);
        s->get("drift", c.chain.drift);
        s->path("path", c.chain.path, base_dir);
        s->finish();
        if (c.chain.source == "file" && c.chain.path.empty())
            throw std::runtime_error("config key 'chain.path' is required when chain.source is \"file\"");
    }
    if (auto s = root.sub("simulate")) {
        s->get("trajectories", c.simulate.trajectories);
        s->get("smoothing", c.simulate.smoothing);
        s->finish();
    }
    if (auto s = root.sub("pricing")) {
        auto& p = c.pricing;
        s->get("instances", p.instances);
        s->get("types", p.types);
        s->get("value_bound", p.value_bound);
        s->get("prior", p.prior);
        s->get("sample_size", p.sample_size);
        s->get("test_size", p.test_size);
        s->get("search_cost", p.search_cost);
        s->get("budget_seconds", p.budget_seconds);
        s->get("node_limit", p.node_limit);
        s->get("oos_rule", p.oos_rule);
        s->path("trajectories", p.trajectories_path, base_dir);
        s->path("population", p.population_path, base_dir);
        s->finish();
    }
    if (auto s = root.sub("learning")) {
        auto& l = c.learning;
        s->get("types", l.types);
        s->get("states", l.states);
        s->get("horizon", l.horizon);
        s->get("value_bound", l.value_bound);
        s->get("search_cost", l.search_cost);
        s->get("price_markup", l.price_markup);
        s->get("drift", l.drift);
        s->get("priors", l.priors);
        s->get("schedules", l.schedules);
        s->get("batches", l.batches);
        s->get("rounds", l.rounds);
        s->get("seeds", l.seeds);
        s->get("record_every", l.record_every);
        s->finish();
    }
    if (auto s = root.sub("discovery")) {
        auto& d = c.discovery;
        s->get("models", d.models);
        s->get("augmentations", d.augmentations);
        s->get("clusters", d.clusters);
        s->get("noise", d.noise);
        s->get("model_gap", d.model_gap);
        s->get("cluster_gap", d.cluster_gap);
        s->get("max_iterations", d.max_iterations);
        s->get("gamma", d.gamma);
        s->get("cheap_model", d.cheap_model);
        s->get("sweep_every", d.sweep_every);
        s->get("seeds", d.seeds);
        s->get("external_command", d.external_command);
        s->finish();
    }
    if (auto s = root.sub("cee")) {
        auto& e = c.cee;
        s->get("types", e.types);
        s->get("states", e.states);
        s->get("horizon", e.horizon);
        s->get("value_bound", e.value_bound);
        s->get("drift", e.drift);
        s->get("epsilons", e.epsilons);
        s->get("seeds", e.seeds);
        s->get("sample_size", e.sample_size);
        s->get("target", e.target);
        s->get("gap_tol", e.gap_tol);
        s->finish();
    }
    if (auto s = root.sub("pipeline")) {
        auto& p = c.pipeline;
        s->get("discovery_runs", p.discovery_runs);
        s->get("period", p.period);
        s->get("periods", p.periods);
        s->get("metric_resolution", p.metric_resolution);
        s->get("types", p.types);
        s->get("value_bound", p.value_bound);
        s->get("search_cost", p.search_cost);
        s->get("buyers", p.buyers);
        s->get("smoothing", p.smoothing);
        s->get("budget_seconds", p.budget_seconds);
        s->get("node_limit", p.node_limit);
        s->finish();
    }
    root.finish();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return parse_config(read_json_file(path), path.parent_path());
}

CommandResult cmd_simulate(const ExperimentConfig& config) {
    Stopwatch sw;
    CommandResult out;
    const auto chain = sw.stage("chain", [&] {
        Rng rng(derive_seed(config.seed, "simulate-chain"));
        return make_chain(config.chain, config.grid, rng);
    });
    const auto sample = sw.stage("sample", [&] {
        if (config.simulate.trajectories == 0) throw std::invalid_argument("empty sample requested");
        Rng rng(derive_seed(config.seed, "simulate-sample"));
        return sample_trajectories(chain, config.simulate.trajectories, rng);
    });
    const auto estimate =
        sw.stage("estimate", [&] { return estimate_chain(sample, chain.grid(), config.simulate.smoothing); });
    out.files.push_back({"simulate_trajectories.csv", trajectories_to_csv(sample, chain.grid()).str()});
    out.files.push_back({"simulate_chain.json", chain_to_json(estimate).dump(2) + "\n"});
    out.files.push_back({"simulate_true_chain.json", chain_to_json(chain).dump(2) + "\n"});
    out.wall_times = sw.times;
    return out;
}

namespace {

struct PriceRows {
    std::vector<std::vector<std::string>> summary;
    std::vector<std::vector<std::string>> curves;
};

PriceRows price_instance(const ExperimentConfig& config, std::size_t index) {
    const auto& p = config.pricing;
    Rng rng(derive_seed(config.seed, "price-instance", index));

    std::vector<Trajectory> train;
    std::optional<MarkovChain> chain;
    if (!p.trajectories_path.empty()) {
        const MetricGrid grid = config.chain.source == "file"
                                    ? chain_from_json(read_json_file(config.chain.path)).grid()
                                    : config.grid;
        std::istringstream in(read_text_file(p.trajectories_path));
        train = trajectories_from_csv(CsvTable::parse(in), grid);
        if (train.empty()) throw std::invalid_argument("empty sample requested");
        chain = config.chain.source == "file" ? make_chain(config.chain, grid, rng) : estimate_chain(train, grid);
    } else {
        chain = make_chain(config.chain, config.grid, rng);
        if (p.sample_size == 0) throw std::invalid_argument("empty sample requested");
        Rng srng(derive_seed(config.seed, "price-train", index));
        train = sample_trajectories(*chain, p.sample_size, srng);
    }
    const MetricGrid& grid = chain->grid();

    PricingInstance inst;
    inst.population = p.population_path.empty()
                          ? random_population(p.types, grid.size(), p.value_bound, parse_prior_family(p.prior), rng)
                          : population_from_json(read_json_file(p.population_path));
    inst.sample = train;
    inst.cost = SearchCost{p.search_cost};
    inst.options.oos_subset_rule = parse_subset_rule(p.oos_rule);
    inst.validate();

    const std::size_t test_size = p.test_size ? p.test_size : train.size();
    Rng trng(derive_seed(config.seed, "price-test", index));
    const auto test = sample_trajectories(*chain, test_size, trng);
    const std::uint64_t thin_seed = derive_seed(config.seed, "price-thin", index);

    PricingSolveConfig solve;
    solve.mip.time_budget_seconds = p.budget_seconds;
    solve.mip.node_limit = p.node_limit;

    PriceRows rows;
    const std::string id = std::to_string(index);
    auto emit = [&](const std::string& scheme, const PriceCurve& curve, const std::string& status, bool hit_limit,
                    double gap, const std::vector<Trajectory>& is_sample, bool with_oos) {
        const auto is = evaluate_revenue(curve, inst.population, is_sample, EvalMode::InSample);
        rows.summary.push_back({id, scheme, "IS", str(is.expected_revenue), str(is.total_welfare),
                                str(is.fraction_of_welfare), status, hit_limit ? "1" : "0", str(gap)});
        if (with_oos) {
            Rng thin(thin_seed);
            const auto oos = evaluate_revenue(curve, inst.population, test, EvalMode::OutOfSample,
                                              inst.options.oos_subset_rule, &thin);
            rows.summary.push_back({id, scheme, "OOS", str(oos.expected_revenue), str(oos.total_welfare),
                                    str(oos.fraction_of_welfare), status, hit_limit ? "1" : "0", str(gap)});
        }
        for (std::size_t q = 0; q < curve.size(); ++q)
            rows.curves.push_back({id, scheme, str(q), str(grid.value(q)), str(curve[q])});
    };

    const auto milp = solve_optimal_pricing(inst, solve);
    emit("milp", milp.curve, to_string(milp.status), milp.hit_limit, milp.gap, train, true);
    emit("independent", independent_pricing(inst), "heuristic", false, 0.0, train, true);
    emit("shift", shift_pricing(inst), "heuristic", false, 0.0, train, true);
    emit("jiggle", jiggle_pricing(inst), "heuristic", false, 0.0, train, true);

    // What the best posted curve earns on the held-out buyers had it been
    // fitted to exactly the metrics they observe.
    Rng thin(thin_seed);
    PricingInstance hindsight = inst;
    hindsight.sample = thin_trajectories(test, inst.options.oos_subset_rule, thin);
    const auto ref = solve_optimal_pricing(hindsight, solve);
    const auto rep = evaluate_revenue(ref.curve, inst.population, hindsight.sample, EvalMode::InSample);
    rows.summary.push_back({id, "oos-reference", "OOS", str(rep.expected_revenue), str(rep.total_welfare),
                            str(rep.fraction_of_welfare), to_string(ref.status), ref.hit_limit ? "1" : "0",
                            str(ref.gap)});
    for (std::size_t q = 0; q < ref.curve.size(); ++q)
        rows.curves.push_back({id, "oos-reference", str(q), str(grid.value(q)), str(ref.curve[q])});
    return rows;
}

} // namespace

CommandResult cmd_price(const ExperimentConfig& config) {
    Stopwatch sw;
    CommandResult out;
    const std::size_t count = config.pricing.trajectories_path.empty() ? config.pricing.instances : 1;
    if (count == 0) throw StageError("pricing", "no instances requested");
    const auto parts = sw.stage("pricing", [&] {
        return parallel_map<PriceRows>(count, config.threads,
                                       [&](std::size_t i) { return price_instance(config, i); });
    });
    CsvTable summary({"instance", "scheme", "mode", "revenue", "welfare", "fraction_of_welfare", "status",
                      "hit_limit", "gap"});
    CsvTable curves({"instance", "scheme", "metric_index", "metric", "price"});
    for (const auto& part : parts) {
        for (const auto& r : part.summary) summary.add(r);
        for (const auto& r : part.curves) curves.add(r);
    }
    out.files.push_back({"price_summary.csv", summary.str()});
    out.files.push_back({"price_curves.csv", curves.str()});
    out.wall_times = sw.times;
    return out;
}

namespace {

struct LearnTask {
    std::string prior;
    std::string schedule;
    std::size_t batch;
    std::size_t rounds;
    std::size_t seed;

    std::string cell() const {
        return "learn_" + prior + "_" + schedule + "_b" + std::to_string(batch) + "_n" + std::to_string(rounds);
    }
};

} // namespace

CommandResult cmd_learn(const ExperimentConfig& config) {
    const auto& l = config.learning;
    Stopwatch sw;
    CommandResult out;
    std::vector<LearnTask> tasks;
    for (const auto& pr : l.priors)
        for (const auto& sc : l.schedules)
            for (std::size_t b : l.batches)
                for (std::size_t n : l.rounds)
                    for (std::size_t s = 0; s < l.seeds; ++s) tasks.push_back({pr, sc, b, n, s});
    if (tasks.empty()) throw StageError("learning", "the learning grid is empty");
    if (l.record_every == 0) throw StageError("learning", "record_every must be >= 1");

    const auto traces = sw.stage("learning", [&] {
        return parallel_map<LearningTrace>(tasks.size(), config.threads, [&](std::size_t i) {
            const auto& t = tasks[i];
            Rng irng(derive_seed(config.seed, "learn-instance:" + t.prior, t.seed));
            const auto pop =
                random_population(l.types, l.states, l.value_bound, parse_prior_family(t.prior), irng);
            const auto chain = random_drift_chain(index_grid(l.states), l.horizon, l.drift, irng);
            LearningConfig cfg;
            cfg.rounds = t.rounds;
            cfg.batch_size = t.batch;
            cfg.schedule = parse_rate_schedule(t.schedule);
            Rng rng(derive_seed(config.seed, "learn-run:" + t.cell(), t.seed));
            return run_learning(pop.prior, pop, markup_curve(pop, l.price_markup), chain,
                                SearchCost{l.search_cost}, cfg, rng);
        });
    });

    CsvTable summary({"prior", "schedule", "batch", "rounds", "seed", "final_kl", "classes", "impossible_observations"});
    std::vector<std::pair<std::string, CsvTable>> cells;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto& t = tasks[i];
        const auto& tr = traces[i];
        if (cells.empty() || cells.back().first != t.cell()) cells.emplace_back(t.cell(), CsvTable({"seed", "round", "kl"}));
        auto& table = cells.back().second;
        for (std::size_t r = 1; r <= tr.kl.size(); ++r)
            if (r % l.record_every == 0 || r == tr.kl.size()) table.add({str(t.seed), str(r), str(tr.kl[r - 1])});
        summary.add({t.prior, t.schedule, str(t.batch), str(t.rounds), str(t.seed), str(tr.kl.back()),
                     str(tr.classes.count), str(tr.impossible_observations)});
    }
    for (const auto& [name, table] : cells) out.files.push_back({name + ".csv", table.str()});
    out.files.push_back({"learn_summary.csv", summary.str()});
    out.wall_times = sw.times;
    return out;
}

SyntheticEnvironment discovery_environment(const ExperimentConfig& config, std::size_t index) {
    const auto& d = config.discovery;
    Rng rng(derive_seed(config.seed, "discover-env", index));
    auto spec = planted_spec(d.models, d.augmentations, d.clusters, d.noise, rng, d.model_gap, d.cluster_gap);
    return make_synthetic_env(spec, rng);
}

namespace {

const char* const kDrivers[] = {"data-bandit", "data-all", "data-alt", "automl-only"};

struct DiscoverRun {
    std::vector<DiscoveryTrace> traces;
    std::vector<double> best_noiseless;
    std::vector<std::optional<std::size_t>> to_optimum;
    double optimum = 0.0;
};

} // namespace

CommandResult cmd_discover(const ExperimentConfig& config) {
    const auto& d = config.discovery;
    Stopwatch sw;
    CommandResult out;
    if (d.seeds == 0) throw StageError("discovery", "no seeds requested");
    const auto runs = sw.stage("discovery", [&] {
        return parallel_map<DiscoverRun>(d.seeds, config.threads, [&](std::size_t s) {
            const auto env = discovery_environment(config, s);
            std::unique_ptr<ExternalEnvironment> external;
            if (!d.external_command.empty())
                external = std::make_unique<ExternalEnvironment>(
                    d.external_command, d.models,
                    std::vector<Augmentation>(env.augmentations().begin(), env.augmentations().end()));
            const TaskEnvironment& task = external ? static_cast<const TaskEnvironment&>(*external) : env;
            StopRule stop;
            stop.max_iterations = d.max_iterations;
            DiscoverRun run;
            run.optimum = env.single_augmentation_optimum();
            for (const char* driver : kDrivers) {
                Rng rng(derive_seed(config.seed, std::string("discover:") + driver, s));
                const std::string name = driver;
                DiscoveryTrace tr;
                if (name == "data-bandit") {
                    DiscoveryConfig dc;
                    dc.gamma = d.gamma;
                    tr = run_discovery(task, stop, dc, rng);
                } else if (name == "data-all") {
                    tr = run_data_all(task, stop, rng);
                } else if (name == "data-alt") {
                    tr = run_data_alt(task, stop, d.cheap_model, d.sweep_every, rng);
                } else {
                    tr = run_automl_only(task, stop, rng);
                }
                run.best_noiseless.push_back(env.noiseless(tr.best_model, tr.best_augmentations));
                run.to_optimum.push_back(external ? std::nullopt : evaluations_to_reach(tr, env, run.optimum));
                run.traces.push_back(std::move(tr));
            }
            return run;
        });
    });

    CsvTable summary({"seed", "driver", "iterations", "loop_evaluations", "final_pass_evaluations",
                      "expected_loop_evaluations", "best_metric", "best_noiseless", "optimum",
                      "evaluations_to_optimum"});
    for (std::size_t k = 0; k < std::size(kDrivers); ++k) {
        CsvTable table({"seed", "record", "iteration", "model", "augmentations", "metric", "best", "final_pass"});
        for (std::size_t s = 0; s < runs.size(); ++s) {
            const auto& tr = runs[s].traces[k];
            for (std::size_t r = 0; r < tr.records.size(); ++r) {
                const auto& rec = tr.records[r];
                table.add({str(s), str(r + 1), str(rec.iteration), str(rec.model), join_ids(rec.augmentations),
                           str(rec.metric), str(rec.best), rec.final_pass ? "1" : "0"});
            }
            const std::string driver = kDrivers[k];
            std::size_t expected = tr.iterations;
            if (driver == "data-all") expected = tr.iterations * d.models;
            if (driver == "data-alt") expected = tr.iterations + (tr.iterations / d.sweep_every) * d.models;
            const auto& hit = runs[s].to_optimum[k];
            summary.add({str(s), driver, str(tr.iterations), str(tr.loop_evaluations), str(tr.final_pass_evaluations),
                         str(expected), str(tr.best_metric), str(runs[s].best_noiseless[k]), str(runs[s].optimum),
                         hit ? str(*hit) : ""});
        }
        out.files.push_back({std::string("discover_") + kDrivers[k] + ".csv", table.str()});
    }
    out.files.push_back({"discover_summary.csv", summary.str()});
    out.wall_times = sw.times;
    return out;
}

std::array<double, 3> fit_quadratic(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("fit needs matching x and y");
    std::set<double> distinct(x.begin(), x.end());
    if (distinct.size() < 3) throw std::invalid_argument("quadratic fit needs three distinct x values");
    // Normal equations, solved by Gaussian elimination with partial pivoting.
    double a[3][4] = {};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double p[3] = {1.0, x[i], x[i] * x[i]};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) a[r][c] += p[r] * p[c];
            a[r][3] += p[r] * y[i];
        }
    }
    for (int c = 0; c < 3; ++c) {
        int piv = c;
        for (int r = c + 1; r < 3; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        std::swap(a[c], a[piv]);
        for (int r = 0; r < 3; ++r) {
            if (r == c) continue;
            const double f = a[r][c] / a[c][c];
            for (int k = c; k < 4; ++k) a[r][k] -= f * a[c][k];
        }
    }
    return {a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]};
}

OneSidedTest t_test_positive(std::span<const double> samples) {
    if (samples.size() < 2) throw std::invalid_argument("a t-test needs at least two samples");
    const double n = static_cast<double>(samples.size());
    OneSidedTest out;
    out.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : samples) ss += (v - out.mean) * (v - out.mean);
    const double se = std::sqrt(ss / (n - 1.0) / n);
    if (se == 0.0) {
        out.t = out.mean > 0 ? std::numeric_limits<double>::infinity()
                             : (out.mean < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
        out.p_value = out.mean > 0 ? 0.0 : 1.0;
        return out;
    }
    out.t = out.mean / se;
    boost::math::students_t dist(n - 1.0);
    out.p_value = boost::math::cdf(boost::math::complement(dist, out.t));
    return out;
}

CommandResult cmd_cee(const ExperimentConfig& config) {
    const auto& e = config.cee;
    Stopwatch sw;
    CommandResult out;
    if (e.target != "prior" && e.target != "chain" && e.target != "both")
        throw StageError("cee", "target must be \"prior\", \"chain\" or \"both\"");
    if (e.seeds == 0 || e.epsilons.empty()) throw StageError("cee", "the sweep is empty");
    const auto results = sw.stage("cee", [&] {
        return parallel_map<std::vector<CeeResult>>(e.seeds, config.threads, [&](std::size_t s) {
            Rng rng(derive_seed(config.seed, "cee-instance", s));
            const auto pop = random_population(e.types, e.states, e.value_bound, PriorFamily::Random, rng);
            const auto chain = random_drift_chain(index_grid(e.states), e.horizon, e.drift, rng);
            CeeTemplate tmpl;
            tmpl.sample_size = e.sample_size;
            tmpl.solver.mip.gap_tol = e.gap_tol;
            std::vector<CeeResult> row;
            for (double eps : e.epsilons) {
                // One perturbation direction per seed, scaled by eps.
                Rng prng(derive_seed(config.seed, "cee-perturb-prior", s));
                Rng crng(derive_seed(config.seed, "cee-perturb-chain", s));
                const bool on_prior = e.target != "chain", on_chain = e.target != "prior";
                const auto prior = on_prior && eps > 0 ? perturb_prior(pop.prior, eps, prng) : pop.prior;
                const auto est_chain = on_chain && eps > 0 ? perturb_chain(chain, eps, crng) : chain;
                row.push_back(cost_of_estimation_error(pop, chain, prior, est_chain, tmpl,
                                                       derive_seed(config.seed, "cee-sample", s)));
            }
            return row;
        });
    });

    CsvTable table({"seed", "epsilon", "cee", "true_optimum", "revenue_of_estimate"});
    for (std::size_t s = 0; s < results.size(); ++s)
        for (std::size_t k = 0; k < e.epsilons.size(); ++k) {
            const auto& r = results[s][k];
            table.add({str(s), str(e.epsilons[k]), str(r.value), str(r.true_optimum), str(r.revenue_of_estimate)});
        }
    out.files.push_back({"cee_sweep.csv", table.str()});

    CsvTable fit({"statistic", "value"});
    std::vector<double> xs;
    std::vector<std::size_t> cols;
    for (std::size_t k = 0; k < e.epsilons.size(); ++k)
        if (e.epsilons[k] > 0) {
            xs.push_back(e.epsilons[k]);
            cols.push_back(k);
        }
    if (std::set<double>(xs.begin(), xs.end()).size() >= 3) {
        std::vector<double> medians, quads;
        for (std::size_t k : cols) {
            std::vector<double> v;
            for (const auto& r : results) v.push_back(r[k].value);
            std::sort(v.begin(), v.end());
            medians.push_back(v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]));
        }
        const auto mc = fit_quadratic(xs, medians);
        for (const auto& r : results) {
            std::vector<double> ys;
            for (std::size_t k : cols) ys.push_back(r[k].value);
            quads.push_back(fit_quadratic(xs, ys)[2]);
        }
        fit.add({"median_intercept", str(mc[0])});
        fit.add({"median_slope", str(mc[1])});
        fit.add({"median_quadratic", str(mc[2])});
        if (quads.size() >= 2) {
            const auto t = t_test_positive(quads);
            fit.add({"mean_seed_quadratic", str(t.mean)});
            fit.add({"t_statistic", str(t.t)});
            fit.add({"p_value", str(t.p_value)});
            fit.add({"verdict", t.p_value < 0.05 ? "superlinear" : "at-most-linear"});
        }
    }
    out.files.push_back({"cee_fit.csv", fit.str()});
    out.wall_times = sw.times;
    return out;
}

CommandResult cmd_pipeline(const ExperimentConfig& config) {
    const auto& p = config.pipeline;
    Stopwatch sw;
    CommandResult out;
    const auto grid = sw.stage("config", [&] {
        if (p.period == 0 || p.periods == 0) throw std::invalid_argument("period and periods must be >= 1");
        if (p.discovery_runs == 0) throw std::invalid_argument("empty sample requested");
        return MetricGrid::uniform(0.0, 1.0, p.metric_resolution);
    });

    const auto trajectories = sw.stage("discovery", [&] {
        const auto env = discovery_environment(config, 0);
        StopRule stop;
        stop.max_iterations = p.period * p.periods;
        DiscoveryConfig dc;
        dc.gamma = config.discovery.gamma;
        return parallel_map<Trajectory>(p.discovery_runs, config.threads, [&](std::size_t r) {
            Rng rng(derive_seed(config.seed, "pipeline-discovery", r));
            return trace_to_trajectory(run_discovery(env, stop, dc, rng), grid, p.period);
        });
    });
    const auto chain = sw.stage("chain", [&] { return estimate_chain(trajectories, grid, p.smoothing); });

    PricingInstance inst;
    const auto priced = sw.stage("pricing", [&] {
        Rng rng(derive_seed(config.seed, "pipeline-population"));
        inst.population = random_population(p.types, grid.size(), p.value_bound, PriorFamily::Random, rng);
        inst.sample = trajectories;
        inst.cost = SearchCost{p.search_cost};
        PricingSolveConfig solve;
        solve.mip.time_budget_seconds = p.budget_seconds;
        solve.mip.node_limit = p.node_limit;
        return solve_optimal_pricing(inst, solve);
    });

    CsvTable buyers({"buyer", "type", "stop_time", "purchased_index", "payment", "value", "search_cost",
                     "utility", "best_value_seen"});
    double revenue = 0.0, value = 0.0, welfare = 0.0, cost = 0.0;
    sw.stage("buyers", [&] {
        std::vector<PolicyTable> policies;
        for (const auto& t : inst.population.types)
            policies.push_back(solve_optimal_stopping(t, priced.curve, chain, inst.cost));
        Rng rng(derive_seed(config.seed, "pipeline-buyers"));
        for (std::size_t b = 0; b < p.buyers; ++b) {
            const std::size_t type = rng.categorical(inst.population.prior);
            const auto traj = sample_trajectory(chain, rng);
            const auto& bt = inst.population.types[type];
            const auto o = simulate_buyer(bt, policies[type], traj, priced.curve, inst.cost);
            double seen = 0.0;
            for (std::size_t k = 0; k < o.stop_time; ++k) seen = std::max(seen, bt.values[traj.metrics[k]]);
            const double v = o.purchased ? bt.values[*o.purchased] : 0.0;
            buyers.add({str(b), str(type), str(o.stop_time), o.purchased ? str(*o.purchased) : "", str(o.payment),
                        str(v), str(o.search_cost_paid), str(o.buyer_utility), str(seen)});
            revenue += o.payment;
            value += v;
            welfare += seen;
            cost += o.search_cost_paid;
        }
        return 0;
    });
    const double n = static_cast<double>(std::max<std::size_t>(p.buyers, 1));

    CsvTable prices({"metric_index", "metric", "price"});
    for (std::size_t q = 0; q < priced.curve.size(); ++q)
        prices.add({str(q), str(grid.value(q)), str(priced.curve[q])});
    CsvTable summary({"statistic", "value"});
    summary.add({"trajectories", str(trajectories.size())});
    summary.add({"milp_status", to_string(priced.status)});
    summary.add({"milp_in_sample_revenue", str(priced.objective)});
    summary.add({"buyers", str(p.buyers)});
    summary.add({"mean_revenue", str(revenue / n)});
    summary.add({"mean_purchased_value", str(value / n)});
    summary.add({"mean_best_value_seen", str(welfare / n)});
    summary.add({"mean_search_cost", str(cost / n)});

    out.files.push_back({"pipeline_trajectories.csv", trajectories_to_csv(trajectories, grid).str()});
    out.files.push_back({"pipeline_chain.json", chain_to_json(chain).dump(2) + "\n"});
    out.files.push_back({"pipeline_population.json", population_to_json(inst.population).dump(2) + "\n"});
    out.files.push_back({"pipeline_prices.csv", prices.str()});
    out.files.push_back({"pipeline_buyers.csv", buyers.str()});
    out.files.push_back({"pipeline_summary.csv", summary.str()});
    out.wall_times = sw.times;
    return out;
}

void write_outputs(const std::filesystem::path& dir, const std::string& command, const ExperimentConfig& config,
                   const CommandResult& result) {
    in_stage("output", [&] {
        std::filesystem::create_directories(dir);
        nlohmann::json files = nlohmann::json::array();
        for (const auto& f : result.files) {
            write_text_file(dir / f.name, f.content);
            files.push_back({{"file", f.name}, {"fnv1a64", hex64(fnv1a64(f.content))}, {"bytes", f.content.size()}});
        }
        nlohmann::json times = nlohmann::json::object();
        for (const auto& [stage, secs] : result.wall_times) times[stage] = secs;
        const nlohmann::json manifest{{"tool", "market"},
                                      {"version", tool_version()},
                                      {"command", command},
                                      {"seed", config.seed},
                                      {"config_hash", hex64(fnv1a64(config.source.dump()))},
                                      {"outputs", std::move(files)},
                                      {"wall_seconds", std::move(times)}};
        write_text_file(dir / (command + "_manifest.json"), manifest.dump(2) + "\n");
        return 0;
    });
}

} // namespace market
