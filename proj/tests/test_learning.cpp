#include <doctest.h>

#include "market/generators.hpp"
#include "market/learning.hpp"
#include "test_support.hpp"

#include <cmath>
#include <numeric>

using namespace market;
using testing_support::random_chain;
using testing_support::total_variation;

namespace {

LikelihoodTable two_type_table(std::vector<double> a, std::vector<double> b) {
    LikelihoodTable t;
    t.rows = {std::move(a), std::move(b)};
    return t;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// A chain that climbs one state with probability 0.7 per period. "low" never
// buys and leaves at once, "mid" waits for metric 2 and "high" for metric 3.
struct Spread {
    Population population;
    PriceCurve price;
    MarkovChain chain;
    SearchCost cost{0.1};
};

Spread spread_setting() {
    const std::size_t n = 4;
    std::vector<SquareMatrix> trans;
    for (int t = 1; t < 6; ++t) {
        SquareMatrix m(n);
        for (std::size_t r = 0; r + 1 < n; ++r) {
            m(r, r) = 0.3;
            m(r, r + 1) = 0.7;
        }
        m(n - 1, n - 1) = 1.0;
        trans.push_back(m);
    }
    MarkovChain chain(MetricGrid::uniform(0.0, 0.03, 0.01), {0.7, 0.3, 0.0, 0.0}, trans);
    Population pop{{BuyerType{"low", {0.5, 1.0, 1.5, 2.0}}, BuyerType{"mid", {1.0, 3.0, 5.0, 5.5}},
                    BuyerType{"high", {1.0, 3.0, 6.0, 12.0}}},
                   {1.0 / 3, 1.0 / 3, 1.0 / 3}};
    return Spread{pop, PriceCurve{{1.0, 2.0, 3.0, 4.0}}, std::move(chain)};
}

double variance(std::span<const double> v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

} // namespace

TEST_CASE("learning-rate schedules") {
    CHECK(learning_rate(RateSchedule::Harmonic, 1) == 0.5);
    CHECK(learning_rate(RateSchedule::Harmonic, 3) == 0.25);
    CHECK(learning_rate(RateSchedule::InverseSqrt, 4) == 0.5);
    CHECK(learning_rate(RateSchedule::Constant, 99) == 0.5);
    CHECK_THROWS_AS(learning_rate(RateSchedule::Constant, 0), std::invalid_argument);
    CHECK(parse_rate_schedule("inverse-sqrt") == RateSchedule::InverseSqrt);
    CHECK_THROWS_AS(parse_rate_schedule("sqrt"), std::invalid_argument);
}

TEST_CASE("likelihood rows are the stop-time distributions") {
    Rng rng(4);
    const auto chain = random_chain(3, 4, rng);
    const BuyerType b{"b", {2.0, 4.0, 6.0}};
    const PriceCurve x{{1.0, 2.5, 3.0}};
    const auto table = precompute_likelihoods(Population{{b}, {1.0}}, x, chain, SearchCost{0.2});
    const auto dist = stopping_distribution(b, x, chain, SearchCost{0.2});
    REQUIRE(table.types() == 1);
    CHECK(table.rows[0] == dist.stop_probability);
    CHECK(sum(table.rows[0]) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identical valuations give identical rows and merge") {
    Rng rng(5);
    const auto chain = random_chain(3, 4, rng);
    Population pop{{BuyerType{"a", {2.0, 4.0, 6.0}}, BuyerType{"b", {0.0, 0.0, 0.0}}, BuyerType{"c", {2.0, 4.0, 6.0}}},
                   {0.2, 0.5, 0.3}};
    const auto table = precompute_likelihoods(pop, PriceCurve{{1.0, 2.0, 3.0}}, chain, SearchCost{0.1});
    CHECK(table.rows[0] == table.rows[2]);
    const auto classes = indistinguishable_classes(table);
    CHECK(classes.count == 2);
    CHECK(classes.class_of[0] == classes.class_of[2]);
    CHECK(classes.class_of[0] != classes.class_of[1]);
    const auto merged = merge_prior(pop.prior, classes);
    CHECK(merged[classes.class_of[0]] == doctest::Approx(0.5));
    CHECK(merge_table(table, classes).types() == 2);
}

TEST_CASE("likelihood rows match a Monte-Carlo oracle") {
    Rng rng(6);
    for (int rep = 0; rep < 3; ++rep) {
        const auto chain = random_chain(4, 5, rng);
        Population pop;
        for (int i = 0; i < 3; ++i) pop.types.push_back(testing_support::random_type(4, rng));
        pop.prior = {0.3, 0.3, 0.4};
        const auto x = testing_support::random_curve(4, rng, 6.0);
        const SearchCost cost{0.05 * static_cast<double>(rep)};
        const auto table = precompute_likelihoods(pop, x, chain, cost);
        for (std::size_t i = 0; i < pop.size(); ++i) {
            const auto policy = solve_optimal_stopping(pop.types[i], x, chain, cost);
            std::vector<double> freq(chain.horizon(), 0.0);
            const int runs = 100000;
            for (int r = 0; r < runs; ++r) {
                const auto traj = sample_trajectory(chain, rng);
                freq[simulate_buyer(pop.types[i], policy, traj, x, cost).stop_time - 1] += 1.0 / runs;
            }
            CHECK(total_variation(freq, table.rows[i]) < 0.01);
        }
    }
}

TEST_CASE("posterior update by hand") {
    const auto t = two_type_table({0.7, 0.3}, {0.9, 0.1});
    const std::vector<double> mu{0.5, 0.5};
    const auto w = posterior_update(t, mu, 2);
    REQUIRE(w);
    CHECK((*w)[0] == doctest::Approx(0.75));
    CHECK((*w)[1] == doctest::Approx(0.25));

    const auto only = posterior_update(two_type_table({0.5, 0.5}, {1.0, 0.0}), mu, 2);
    REQUIRE(only);
    CHECK((*only)[0] == 1.0);
    CHECK((*only)[1] == 0.0);

    const std::vector<double> skew{0.2, 0.8};
    const auto same = posterior_update(two_type_table({0.4, 0.6}, {0.4, 0.6}), skew, 1);
    CHECK((*same)[0] == doctest::Approx(0.2));

    CHECK_FALSE(posterior_update(two_type_table({1.0, 0.0}, {1.0, 0.0}), mu, 2));
    // Mass-free types do not make an observation possible.
    CHECK_FALSE(posterior_update(two_type_table({1.0, 0.0}, {0.0, 1.0}), std::vector<double>{1.0, 0.0}, 2));
    CHECK_THROWS_AS(posterior_update(t, mu, 3), std::invalid_argument);
}

TEST_CASE("learning step limits") {
    const auto t = two_type_table({0.7, 0.3}, {0.9, 0.1});
    LearningState s{{0.5, 0.5}, 0, RateSchedule::Constant, 1};
    const std::vector<std::size_t> y{2};

    const auto frozen = learning_step_with_rate(s, t, y, 0.0);
    CHECK(frozen.prior == s.prior);
    CHECK(frozen.round == 1);

    const auto jump = learning_step_with_rate(s, t, y, 1.0);
    CHECK(jump.prior[0] == doctest::Approx(0.75));

    const std::vector<std::size_t> repeated(7, 2);
    const auto batched = learning_step_with_rate(LearningState{{0.5, 0.5}, 0, RateSchedule::Constant, 7}, t, repeated, 0.4);
    const auto single = learning_step_with_rate(s, t, y, 0.4);
    CHECK(batched.prior[0] == doctest::Approx(single.prior[0]).epsilon(1e-14));

    // Schedule is applied at the next round index.
    const auto h = learning_step(LearningState{{0.5, 0.5}, 0, RateSchedule::Harmonic, 1}, t, y);
    CHECK(h.prior[0] == doctest::Approx(0.5 + 0.5 * 0.25));
    CHECK_THROWS_AS(learning_step(s, t, repeated), std::invalid_argument);

    std::size_t skipped = 0;
    const auto imp = learning_step(s, two_type_table({1.0, 0.0}, {1.0, 0.0}), y, &skipped);
    CHECK(skipped == 1);
    CHECK(imp.prior == s.prior);
    CHECK(imp.round == 1);
}

TEST_CASE("property: the prior stays in the simplex") {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t types = 2 + rng.uniform_index(5), horizon = 2 + rng.uniform_index(6);
        LikelihoodTable t;
        for (std::size_t i = 0; i < types; ++i) t.rows.push_back(testing_support::random_row(horizon, rng, 0.3));
        const auto schedule = static_cast<RateSchedule>(rng.uniform_index(3));
        const std::size_t batch = 1 + rng.uniform_index(8);
        LearningState s{make_prior(types, PriorFamily::Random, rng), 0, schedule, batch};
        for (int round = 0; round < 40; ++round) {
            std::vector<std::size_t> ys(batch);
            for (auto& y : ys) y = 1 + rng.uniform_index(horizon);
            s = learning_step(s, t, ys);
            CHECK(sum(s.prior) == doctest::Approx(1.0).epsilon(1e-9));
            for (double p : s.prior) CHECK(p >= 0.0);
            const auto w = posterior_update(t, s.prior, 1 + rng.uniform_index(horizon));
            if (w) CHECK(std::abs(sum(*w) - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("kl divergence") {
    const std::vector<double> p{0.5, 0.5}, q{0.25, 0.75}, r{1.0, 0.0};
    CHECK(kl_divergence(p, p) == 0.0);
    CHECK(kl_divergence(p, q) == doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)));
    CHECK(std::isinf(kl_divergence(p, r)));
    CHECK(kl_divergence(r, p) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("a point-mass truth is learned quickly") {
    const auto s = spread_setting();
    const auto table = precompute_likelihoods(s.population, s.price, s.chain, s.cost);
    REQUIRE(indistinguishable_classes(table).count == 3);
    Rng rng(12);
    LearningConfig cfg;
    cfg.rounds = 1000;
    cfg.batch_size = 10;
    cfg.schedule = RateSchedule::Constant;
    const auto trace = run_learning({0.0, 1.0, 0.0}, s.population, s.price, s.chain, s.cost, cfg, rng);
    CHECK(trace.kl.size() == 1000);
    CHECK(trace.kl.back() < 1e-3);
    for (double k : trace.kl) CHECK(k >= 0.0);
    CHECK(trace.impossible_observations == 0);
}

TEST_CASE("final KL falls as rounds grow") {
    const auto s = spread_setting();
    const std::vector<double> truth{0.2, 0.5, 0.3};
    double short_kl = 0.0, long_kl = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        // A first rate of 1 can zero out a type for good when the first
        // batch never shows its stop time, so this uses 1/(t+1).
        LearningConfig cfg;
        cfg.schedule = RateSchedule::Harmonic;
        cfg.batch_size = 10;
        cfg.rounds = 1000;
        Rng a(100 + seed), b(100 + seed);
        short_kl += run_learning(truth, s.population, s.price, s.chain, s.cost, cfg, a).kl.back();
        cfg.rounds = 10000;
        long_kl += run_learning(truth, s.population, s.price, s.chain, s.cost, cfg, b).kl.back();
    }
    CHECK(long_kl < short_kl);
}

TEST_CASE("larger batches steady a constant-rate trace") {
    const auto s = spread_setting();
    const std::vector<double> truth{0.2, 0.5, 0.3};
    double var_small = 0.0, var_large = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        LearningConfig cfg;
        cfg.schedule = RateSchedule::Constant;
        cfg.rounds = 400;
        for (std::size_t batch : {10, 100}) {
            cfg.batch_size = batch;
            Rng rng(200 + seed);
            const auto kl = run_learning(truth, s.population, s.price, s.chain, s.cost, cfg, rng).kl;
            const double v = variance(std::span<const double>(kl).subspan(200));
            (batch == 10 ? var_small : var_large) += v;
        }
    }
    CHECK(var_large < var_small);
}

TEST_CASE("indistinguishable types do not block convergence") {
    auto s = spread_setting();
    s.population.types.push_back(s.population.types[1]);
    s.population.types.back().id = "mid-twin";
    s.population.prior = {0.25, 0.25, 0.25, 0.25};
    Rng rng(16);
    LearningConfig cfg;
    cfg.rounds = 2000;
    cfg.batch_size = 20;
    const auto trace = run_learning({0.1, 0.3, 0.4, 0.2}, s.population, s.price, s.chain, s.cost, cfg, rng);
    CHECK(trace.classes.count == 3);
    CHECK(trace.kl.back() < 0.01);
    // The twin split keeps the uniform start's 1:1 ratio.
    CHECK(trace.final_prior[1] == doctest::Approx(trace.final_prior[3]));
}

TEST_CASE("resolve hook replaces the curve on schedule") {
    const auto s = spread_setting();
    int calls = 0;
    LearningConfig cfg;
    cfg.rounds = 30;
    cfg.resolve_every = 10;
    cfg.resolve = [&](const std::vector<double>& prior) {
        ++calls;
        CHECK(sum(prior) == doctest::Approx(1.0));
        return PriceCurve{{0.5, 1.5, 2.5, 3.5}};
    };
    Rng rng(18);
    const auto trace = run_learning({0.3, 0.3, 0.4}, s.population, s.price, s.chain, s.cost, cfg, rng);
    CHECK(calls == 2);
    CHECK(trace.kl.size() == 30);
}

TEST_CASE("KL direction is configurable") {
    const auto s = spread_setting();
    LearningConfig cfg;
    cfg.rounds = 5;
    cfg.schedule = RateSchedule::Harmonic;
    cfg.initial_prior = {0.6, 0.2, 0.2};
    Rng a(20), b(20);
    const auto fwd = run_learning({0.2, 0.5, 0.3}, s.population, s.price, s.chain, s.cost, cfg, a);
    cfg.kl_direction = KlDirection::LearnedToTruth;
    const auto rev = run_learning({0.2, 0.5, 0.3}, s.population, s.price, s.chain, s.cost, cfg, b);
    CHECK(fwd.final_prior == rev.final_prior);
    const auto cls = merge_prior(std::vector<double>{0.2, 0.5, 0.3}, fwd.classes);
    const auto got = merge_prior(fwd.final_prior, fwd.classes);
    CHECK(fwd.kl.back() == doctest::Approx(kl_divergence(cls, got)));
    CHECK(rev.kl.back() == doctest::Approx(kl_divergence(got, cls)));
}

TEST_CASE("cost of estimation error") {
    Rng rng(21);
    const auto grid = MetricGrid::uniform(0.0, 0.03, 0.01);
    CeeTemplate tmpl;
    tmpl.sample_size = 4;
    for (int rep = 0; rep < 5; ++rep) {
        const auto pop = random_population(3, 4, 10.0, PriorFamily::Random, rng);
        const auto chain = random_drift_chain(grid, 3, 1.0, rng);
        const auto zero = cost_of_estimation_error(pop, chain, pop.prior, chain, tmpl, 30 + rep);
        CHECK(std::abs(zero.value) <= 2 * tmpl.solver.mip.gap_tol);
        CHECK(zero.true_curve == zero.estimated_curve);
        for (double eps : {0.02, 0.08}) {
            const auto mu = perturb_prior(pop.prior, eps, rng);
            const auto p = perturb_chain(chain, eps, rng);
            const auto r = cost_of_estimation_error(pop, chain, mu, p, tmpl, 30 + rep);
            CHECK(r.value >= -2 * tmpl.solver.mip.gap_tol);
            CHECK(r.revenue_of_estimate <= r.true_optimum + 1e-9);
        }
    }
    tmpl.sample_size = 0;
    const auto pop = random_population(2, 4, 10.0, PriorFamily::Random, rng);
    const auto chain = random_drift_chain(grid, 3, 1.0, rng);
    CHECK_THROWS_WITH_AS(cost_of_estimation_error(pop, chain, pop.prior, chain, tmpl, 1), "empty sample requested",
                         std::invalid_argument);
}
