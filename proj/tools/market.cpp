// market: command-line front end for the pricing and discovery experiments.
//
//   market <command> --config <path> [--seed N] [--out DIR] [--threads K]
//
// Commands: simulate, price, learn, discover, cee, pipeline, serve-env.

#include "market/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace market;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "out";
    std::optional<std::size_t> threads;
    std::size_t env_index = 0;
};

ExperimentConfig load(const Options& o) {
    ExperimentConfig c = o.config.empty() ? parse_config(nlohmann::json::object())
                                          : in_stage("config", [&] { return load_config(o.config); });
    if (o.seed) {
        c.seed = *o.seed;
        c.source["seed"] = *o.seed;
    }
    if (o.threads) c.threads = *o.threads;
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pricing and simulation engine for a data-augmented model market"};
    app.set_version_flag("--version", tool_version());
    app.require_subcommand(1);
    Options opts;

    using Runner = CommandResult (*)(const ExperimentConfig&);
    const std::pair<const char*, Runner> commands[] = {
        {"simulate", cmd_simulate}, {"price", cmd_price}, {"learn", cmd_learn},
        {"discover", cmd_discover}, {"cee", cmd_cee},     {"pipeline", cmd_pipeline},
    };
    const char* help[] = {
        "Sample metric trajectories and estimate their chain",
        "Benchmark MILP and heuristic price curves in and out of sample",
        "Run the prior-learning grid and write KL traces",
        "Compare discovery drivers on planted environments",
        "Sweep the cost of estimation error over perturbation sizes",
        "Discovery to trajectories to chain to prices to simulated buyers",
    };
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        auto* sub = app.add_subcommand(commands[i].first, help[i]);
        sub->add_option("--config", opts.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", opts.seed, "Master seed; overrides the config");
        sub->add_option("--out", opts.out, "Output directory")->capture_default_str();
        sub->add_option("--threads", opts.threads, "Worker threads (0 = all cores)");
        subs.push_back(sub);
    }
    auto* serve = app.add_subcommand("serve-env", "Serve a synthetic environment as NDJSON on stdin/stdout");
    serve->add_option("--config", opts.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    serve->add_option("--seed", opts.seed, "Master seed; overrides the config");
    serve->add_option("--index", opts.env_index, "Environment index within the discovery seeds");

    CLI11_PARSE(app, argc, argv);

    try {
        if (serve->parsed()) {
            const auto config = load(opts);
            const auto env = discovery_environment(config, opts.env_index);
            Rng rng(derive_seed(config.seed, "serve-env", opts.env_index));
            serve_environment(env, std::cin, std::cout, rng);
            return 0;
        }
        for (std::size_t i = 0; i < subs.size(); ++i) {
            if (!subs[i]->parsed()) continue;
            const auto config = load(opts);
            const auto result = commands[i].second(config);
            write_outputs(opts.out, commands[i].first, config, result);
            for (const auto& f : result.files) std::cout << (std::filesystem::path(opts.out) / f.name).string() << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "market: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
