#include "market/discovery.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <sys/wait.h>
#include <unistd.h>

namespace market {

void SyntheticSpec::validate() const {
    if (models == 0) throw std::invalid_argument("environment needs at least one model");
    if (clusters == 0 && augmentations > 0) throw std::invalid_argument("augmentations need at least one cluster");
    if (model_offsets.size() != models) throw std::invalid_argument("one model offset per model is required");
    if (cluster_gains.size() != clusters) throw std::invalid_argument("one gain per cluster is required");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be nonnegative");
}

SyntheticEnvironment::SyntheticEnvironment(SyntheticSpec spec, std::vector<Augmentation> pool)
    : spec_(std::move(spec)), pool_(std::move(pool)) {
    spec_.validate();
    for (std::size_t i = 0; i < pool_.size(); ++i) {
        if (pool_[i].id != i) throw std::invalid_argument("augmentation ids must be 0..n-1 in order");
        if (pool_[i].cluster >= spec_.clusters) throw std::invalid_argument("augmentation cluster out of range");
    }
}

double SyntheticEnvironment::noiseless(std::size_t model, std::span<const std::size_t> augmentation_ids) const {
    if (model >= spec_.models) throw std::out_of_range("model index out of range");
    std::vector<char> present(spec_.clusters, 0);
    for (std::size_t id : augmentation_ids) {
        if (id >= pool_.size()) throw std::out_of_range("augmentation id out of range");
        present[pool_[id].cluster] = 1;
    }
    double m = spec_.base + spec_.model_offsets[model];
    for (std::size_t c = 0; c < spec_.clusters; ++c)
        if (present[c]) m += spec_.cluster_gains[c];
    return std::clamp(m, 0.0, 1.0);
}

double SyntheticEnvironment::evaluate(std::size_t model, std::span<const std::size_t> augmentation_ids,
                                      Rng& rng) const {
    const double clean = noiseless(model, augmentation_ids);
    if (spec_.noise_sigma == 0.0) return clean;
    return std::clamp(clean + rng.normal(0.0, spec_.noise_sigma), 0.0, 1.0);
}

double SyntheticEnvironment::single_augmentation_optimum() const {
    double best = 0.0;
    for (std::size_t m = 0; m < spec_.models; ++m) {
        best = std::max(best, noiseless(m, {}));
        for (const auto& a : pool_) {
            const std::size_t id = a.id;
            best = std::max(best, noiseless(m, std::span<const std::size_t>(&id, 1)));
        }
    }
    return best;
}

SyntheticEnvironment make_synthetic_env(const SyntheticSpec& spec, Rng& rng) {
    spec.validate();
    std::vector<std::size_t> labels(spec.augmentations);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % spec.clusters;
    rng.shuffle(labels.begin(), labels.end());
    std::vector<std::vector<double>> centres(spec.clusters, std::vector<double>(spec.profile_dim));
    for (auto& c : centres)
        for (auto& v : c) v = rng.normal();
    std::vector<Augmentation> pool(spec.augmentations);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i].id = i;
        pool[i].cluster = labels[i];
        pool[i].profile = centres[labels[i]];
        for (auto& v : pool[i].profile) v += 0.1 * rng.normal();
    }
    return SyntheticEnvironment(spec, std::move(pool));
}

SyntheticSpec planted_spec(std::size_t models, std::size_t augmentations, std::size_t clusters, double noise_sigma,
                           Rng& rng, double model_gap, double cluster_gap) {
    SyntheticSpec spec;
    spec.models = models;
    spec.augmentations = augmentations;
    spec.clusters = clusters;
    spec.base = 0.3;
    spec.noise_sigma = noise_sigma;
    const double top_offset = 0.3, top_gain = 0.3;
    const std::size_t best_model = rng.uniform_index(models);
    for (std::size_t m = 0; m < models; ++m)
        spec.model_offsets.push_back(m == best_model ? top_offset : (top_offset - model_gap) * rng.uniform());
    const std::size_t best_cluster = clusters ? rng.uniform_index(clusters) : 0;
    for (std::size_t c = 0; c < clusters; ++c)
        spec.cluster_gains.push_back(c == best_cluster ? top_gain : (top_gain - cluster_gap) * rng.uniform());
    return spec;
}

Exp3State::Exp3State(std::size_t arms, double g) : log_weights(arms, 0.0), gamma(g) {
    if (arms == 0) throw std::invalid_argument("Exp3 needs at least one arm");
    if (!(g > 0.0 && g <= 1.0)) throw std::invalid_argument("Exp3 gamma must lie in (0, 1]");
}

std::vector<double> Exp3State::weights() const {
    const double top = *std::max_element(log_weights.begin(), log_weights.end());
    std::vector<double> w(log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = std::max(std::exp(log_weights[i] - top), std::numeric_limits<double>::min());
    return w;
}

std::vector<double> exp3_probabilities(const Exp3State& state) {
    const double top = *std::max_element(state.log_weights.begin(), state.log_weights.end());
    const double k = static_cast<double>(state.arms());
    std::vector<double> p(state.arms());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(state.log_weights[i] - top);
        total += p[i];
    }
    for (auto& v : p) v = (1.0 - state.gamma) * v / total + state.gamma / k;
    return p;
}

void exp3_update(Exp3State& state, std::size_t arm, double reward) {
    if (arm >= state.arms()) throw std::out_of_range("Exp3 arm out of range");
    if (!(reward >= 0.0 && reward <= 1.0)) throw std::invalid_argument("Exp3 reward must lie in [0, 1]");
    const double p = exp3_probabilities(state)[arm];
    state.log_weights[arm] += state.gamma * (reward / p) / static_cast<double>(state.arms());
}

AugmentationSelector::AugmentationSelector(std::span<const Augmentation> pool)
    : cluster_of_id_(pool.size()), position_of_id_(pool.size()), tried_(pool.size(), 0) {
    std::vector<std::size_t> labels;
    for (const auto& a : pool) labels.push_back(a.cluster);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    for (std::size_t l : labels) clusters_.push_back(Cluster{l, {}});
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].id != i) throw std::invalid_argument("augmentation ids must be 0..n-1 in order");
        const auto k = static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), pool[i].cluster) -
                                                labels.begin());
        cluster_of_id_[i] = k;
        position_of_id_[i] = clusters_[k].members.size();
        clusters_[k].members.push_back(i);
    }
}

std::optional<std::size_t> AugmentationSelector::next() const {
    const Cluster* pick = nullptr;
    double pick_score = 0.0;
    for (const auto& c : clusters_) {
        if (c.cursor == c.members.size()) continue;
        const double score =
            c.samples == 0 ? std::numeric_limits<double>::infinity() : c.total / static_cast<double>(c.samples);
        if (!pick || score > pick_score) {
            pick = &c;
            pick_score = score;
        }
    }
    if (!pick) return std::nullopt;
    return pick->members[pick->cursor];
}

void AugmentationSelector::record(std::size_t augmentation_id, double metric) {
    if (augmentation_id >= tried_.size()) throw std::out_of_range("augmentation id out of range");
    if (tried_[augmentation_id]) throw std::invalid_argument("augmentation already tried");
    tried_[augmentation_id] = 1;
    ++tried_count_;
    auto& c = clusters_[cluster_of_id_[augmentation_id]];
    c.total += metric;
    ++c.samples;
    while (c.cursor < c.members.size() && tried_[c.members[c.cursor]]) ++c.cursor;
}

const AugmentationSelector::Cluster& AugmentationSelector::best_cluster() const {
    if (clusters_.empty()) throw std::logic_error("augmentation pool is empty");
    const Cluster* best = &clusters_.front();
    auto mean = [](const Cluster& c) { return c.samples ? c.total / static_cast<double>(c.samples) : 0.0; };
    for (const auto& c : clusters_)
        if (mean(c) > mean(*best)) best = &c;
    return *best;
}

std::size_t AugmentationSelector::revisit() const {
    const auto& c = best_cluster();
    return c.members[c.revisits % c.members.size()];
}

void AugmentationSelector::record_revisit(std::size_t augmentation_id, double metric) {
    if (augmentation_id >= tried_.size()) throw std::out_of_range("augmentation id out of range");
    auto& c = clusters_[cluster_of_id_[augmentation_id]];
    c.total += metric;
    ++c.samples;
    ++c.revisits;
}

std::optional<std::size_t> select_augmentation(std::span<const Augmentation> pool,
                                               std::span<const TriedAugmentation> history) {
    if (pool.empty()) throw std::invalid_argument("augmentation pool is empty");
    AugmentationSelector s(pool);
    for (const auto& h : history) s.record(h.id, h.metric);
    return s.next();
}

namespace {

class Recorder {
public:
    Recorder(const StopRule& stop) : stop_(stop), start_(std::chrono::steady_clock::now()) {}

    bool keep_going(std::size_t iteration) const {
        if (iteration >= stop_.max_iterations) return false;
        if (budget_spent()) return false;
        if (stop_.wall_budget_seconds > 0.0 &&
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count() >=
                stop_.wall_budget_seconds)
            return false;
        if (stop_.stop_signal && stop_.stop_signal()) return false;
        return true;
    }
    bool budget_spent() const { return stop_.max_evaluations > 0 && trace.loop_evaluations >= stop_.max_evaluations; }

    double add(std::size_t iteration, std::size_t model, std::vector<std::size_t> augs, double metric,
               bool final_pass) {
        if (trace.records.empty() || metric > trace.best_metric) {
            trace.best_metric = metric;
            trace.best_model = model;
            trace.best_augmentations = augs;
        }
        trace.records.push_back({iteration, model, std::move(augs), metric, trace.best_metric, final_pass});
        (final_pass ? trace.final_pass_evaluations : trace.loop_evaluations) += 1;
        return metric;
    }

    DiscoveryTrace trace;

private:
    const StopRule& stop_;
    std::chrono::steady_clock::time_point start_;
};

double evaluate_one(const TaskEnvironment& env, std::size_t model, std::size_t aug, Rng& rng) {
    return env.evaluate(model, std::span<const std::size_t>(&aug, 1), rng);
}

} // namespace

DiscoveryTrace run_discovery(const TaskEnvironment& env, const StopRule& stop, const DiscoveryConfig& config,
                             Rng& rng) {
    const auto pool = env.augmentations();
    if (pool.empty()) throw std::invalid_argument("augmentation pool is empty");
    AugmentationSelector selector(pool);
    Exp3State bandit(env.model_count(), config.gamma);
    Recorder rec(stop);
    std::vector<TriedAugmentation> tried;

    std::size_t it = 0;
    while (rec.keep_going(it)) {
        const auto fresh = selector.next();
        const std::size_t aug = fresh ? *fresh : selector.revisit();
        ++it;
        const std::size_t model = rng.categorical(exp3_probabilities(bandit));
        const double m = evaluate_one(env, model, aug, rng);
        exp3_update(bandit, model, m);
        if (fresh) {
            selector.record(aug, m);
            tried.push_back({aug, m});
        } else {
            selector.record_revisit(aug, m);
        }
        rec.add(it, model, {aug}, m, false);
    }
    rec.trace.iterations = it;

    if (config.final_pass && !tried.empty()) {
        const auto t = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(std::max<std::size_t>(pool.size(), 2)))));
        std::stable_sort(tried.begin(), tried.end(),
                         [](const TriedAugmentation& a, const TriedAugmentation& b) { return a.metric > b.metric; });
        const auto& lw = bandit.log_weights;
        const auto best_model = static_cast<std::size_t>(std::max_element(lw.begin(), lw.end()) - lw.begin());
        for (std::size_t k = 0; k < std::min(t, tried.size()); ++k)
            rec.add(it, best_model, {tried[k].id}, evaluate_one(env, best_model, tried[k].id, rng), true);
    }
    return std::move(rec.trace);
}

DiscoveryTrace run_data_all(const TaskEnvironment& env, const StopRule& stop, Rng& rng) {
    AugmentationSelector selector(env.augmentations());
    Recorder rec(stop);
    std::size_t it = 0;
    while (rec.keep_going(it)) {
        const auto aug = selector.next();
        if (!aug) break;
        ++it;
        double best = 0.0;
        for (std::size_t m = 0; m < env.model_count() && !rec.budget_spent(); ++m)
            best = std::max(best, rec.add(it, m, {*aug}, evaluate_one(env, m, *aug, rng), false));
        selector.record(*aug, best);
    }
    rec.trace.iterations = it;
    return std::move(rec.trace);
}

DiscoveryTrace run_data_alt(const TaskEnvironment& env, const StopRule& stop, std::size_t cheap_model,
                            std::size_t sweep_every, Rng& rng) {
    if (cheap_model >= env.model_count()) throw std::out_of_range("cheap model index out of range");
    if (sweep_every == 0) throw std::invalid_argument("sweep interval must be >= 1");
    AugmentationSelector selector(env.augmentations());
    Recorder rec(stop);
    std::optional<TriedAugmentation> leader;
    std::size_t it = 0;
    while (rec.keep_going(it)) {
        const auto aug = selector.next();
        if (!aug) break;
        ++it;
        const double m = rec.add(it, cheap_model, {*aug}, evaluate_one(env, cheap_model, *aug, rng), false);
        selector.record(*aug, m);
        if (!leader || m > leader->metric) leader = TriedAugmentation{*aug, m};
        if (it % sweep_every == 0)
            for (std::size_t model = 0; model < env.model_count() && !rec.budget_spent(); ++model)
                rec.add(it, model, {leader->id}, evaluate_one(env, model, leader->id, rng), false);
    }
    rec.trace.iterations = it;
    return std::move(rec.trace);
}

DiscoveryTrace run_automl_only(const TaskEnvironment& env, const StopRule& stop, Rng& rng) {
    Recorder rec(stop);
    std::size_t it = 0;
    while (rec.keep_going(it)) {
        const std::size_t model = it % env.model_count();
        ++it;
        rec.add(it, model, {}, env.evaluate(model, {}, rng), false);
    }
    rec.trace.iterations = it;
    return std::move(rec.trace);
}

std::optional<std::size_t> evaluations_to_reach(const DiscoveryTrace& trace, const SyntheticEnvironment& env,
                                                double target) {
    for (std::size_t i = 0; i < trace.records.size(); ++i)
        if (env.noiseless(trace.records[i].model, trace.records[i].augmentations) >= target - 1e-12) return i + 1;
    return std::nullopt;
}

Trajectory trace_to_trajectory(const DiscoveryTrace& trace, const MetricGrid& grid, std::size_t period) {
    if (period == 0) throw std::invalid_argument("period must be >= 1");
    std::vector<double> loop;
    for (const auto& r : trace.records)
        if (!r.final_pass) loop.push_back(r.metric);
    if (loop.size() < period) throw std::invalid_argument("trace is shorter than one period");
    Trajectory out;
    for (std::size_t end = period; end <= loop.size(); end += period) out.metrics.push_back(quantize(loop[end - 1], grid));
    return out;
}

struct ExternalEnvironment::Process {
    pid_t pid = -1;
    FILE* to_child = nullptr;
    FILE* from_child = nullptr;
    std::mutex mutex;
};

ExternalEnvironment::ExternalEnvironment(const std::string& command, std::size_t models, std::vector<Augmentation> pool)
    : models_(models), pool_(std::move(pool)), process_(std::make_unique<Process>()) {
    if (models == 0) throw std::invalid_argument("external environment needs at least one model");
    int down[2], up[2];
    if (pipe(down) != 0) throw std::runtime_error("cannot create pipe to the environment process");
    if (pipe(up) != 0) {
        close(down[0]);
        close(down[1]);
        throw std::runtime_error("cannot create pipe from the environment process");
    }
    const pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("cannot fork the environment process");
    if (pid == 0) {
        dup2(down[0], STDIN_FILENO);
        dup2(up[1], STDOUT_FILENO);
        close(down[0]);
        close(down[1]);
        close(up[0]);
        close(up[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(down[0]);
    close(up[1]);
    process_->pid = pid;
    process_->to_child = fdopen(down[1], "w");
    process_->from_child = fdopen(up[0], "r");
}

ExternalEnvironment::~ExternalEnvironment() {
    if (process_->to_child) std::fclose(process_->to_child);
    if (process_->from_child) std::fclose(process_->from_child);
    if (process_->pid > 0) waitpid(process_->pid, nullptr, 0);
}

double ExternalEnvironment::evaluate(std::size_t model, std::span<const std::size_t> augmentation_ids, Rng&) const {
    if (model >= models_) throw std::out_of_range("model index out of range");
    std::lock_guard lock(process_->mutex);
    nlohmann::json request{{"model", model},
                           {"augmentation_ids", std::vector<std::size_t>(augmentation_ids.begin(), augmentation_ids.end())}};
    const std::string line = request.dump() + "\n";
    if (std::fputs(line.c_str(), process_->to_child) < 0 || std::fflush(process_->to_child) != 0)
        throw std::runtime_error("environment process closed its input");
    std::string reply;
    for (int ch; (ch = std::fgetc(process_->from_child)) != EOF && ch != '\n';) reply.push_back(static_cast<char>(ch));
    if (reply.empty()) throw std::runtime_error("environment process sent no reply");
    const auto doc = nlohmann::json::parse(reply, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw std::runtime_error("environment reply is not a JSON object: " + reply);
    if (doc.contains("error")) throw std::runtime_error("environment error: " + doc["error"].dump());
    if (!doc.contains("metric") || !doc["metric"].is_number())
        throw std::runtime_error("environment reply has no numeric metric: " + reply);
    const double m = doc["metric"].get<double>();
    if (!(m >= 0.0 && m <= 1.0)) throw std::runtime_error("environment metric outside [0, 1]");
    return m;
}

void serve_environment(const TaskEnvironment& env, std::istream& in, std::ostream& out, Rng& rng) {
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json reply;
        try {
            const auto req = nlohmann::json::parse(line);
            const auto model = req.at("model").get<std::size_t>();
            const auto ids = req.value("augmentation_ids", std::vector<std::size_t>{});
            if (model >= env.model_count()) throw std::out_of_range("model index out of range");
            for (std::size_t id : ids)
                if (id >= env.augmentations().size()) throw std::out_of_range("augmentation id out of range");
            reply["metric"] = env.evaluate(model, ids, rng);
        } catch (const std::exception& e) {
            reply = nlohmann::json{{"error", e.what()}};
        }
        out << reply.dump() << '\n' << std::flush;
    }
}

} // namespace market
