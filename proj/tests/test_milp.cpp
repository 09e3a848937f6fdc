#include <doctest.h>

#include "lp_oracle.hpp"
#include "market/mip.hpp"
#include "market/rng.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace market;

namespace {

struct DenseLp {
    std::vector<std::vector<double>> a;
    std::vector<double> b, c;
};

LinearProgram to_model(const DenseLp& d) {
    LinearProgram lp;
    for (double cj : d.c) lp.add_variable(cj, 0.0, kInf);
    for (std::size_t i = 0; i < d.a.size(); ++i) {
        std::vector<std::pair<std::size_t, double>> row;
        for (std::size_t j = 0; j < d.c.size(); ++j) row.push_back({j, d.a[i][j]});
        lp.add_row(row, RowSense::LessEqual, d.b[i]);
    }
    return lp;
}

DenseLp random_dense_lp(Rng& rng, bool bounded) {
    DenseLp d;
    const std::size_t n = 1 + rng.uniform_index(20);
    const std::size_t m = 1 + rng.uniform_index(bounded ? 19 : 20);
    for (std::size_t j = 0; j < n; ++j) d.c.push_back(2.0 * rng.uniform() - 0.5);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> row;
        for (std::size_t j = 0; j < n; ++j) row.push_back(rng.uniform() < 0.3 ? 0.0 : 2.0 * rng.uniform() - 0.7);
        d.a.push_back(row);
        d.b.push_back(6.0 * rng.uniform() - 1.0);
    }
    if (bounded) {
        d.a.push_back(std::vector<double>(n, 1.0));
        d.b.push_back(10.0);
    }
    return d;
}

struct RandomMip {
    MipModel model;
    std::size_t binaries;
    std::size_t continuous;
};

// Binaries occupy the first columns; optional SOS1 group over the first few.
RandomMip random_mip(Rng& rng, bool with_sos) {
    RandomMip r;
    r.binaries = 1 + rng.uniform_index(12);
    r.continuous = rng.uniform_index(4);
    auto& lp = r.model.lp;
    for (std::size_t j = 0; j < r.binaries; ++j) {
        lp.add_variable(std::round((3.0 * rng.uniform() - 0.5) * 100) / 100, 0.0, 1.0);
        r.model.binaries.push_back(j);
    }
    for (std::size_t j = 0; j < r.continuous; ++j)
        lp.add_variable(std::round((2.0 * rng.uniform() - 0.5) * 100) / 100, 0.0, 5.0);
    const std::size_t rows = 1 + rng.uniform_index(6);
    for (std::size_t i = 0; i < rows; ++i) {
        std::vector<std::pair<std::size_t, double>> row;
        for (std::size_t j = 0; j < r.binaries + r.continuous; ++j)
            if (rng.uniform() < 0.7) row.push_back({j, std::round((2.5 * rng.uniform() - 0.5) * 100) / 100});
        lp.add_row(row, RowSense::LessEqual, std::round(4.0 * rng.uniform() * 100) / 100);
    }
    if (with_sos && r.binaries >= 2) {
        const std::size_t k = 2 + rng.uniform_index(r.binaries - 1);
        std::vector<std::pair<std::size_t, double>> row;
        std::vector<std::size_t> group;
        for (std::size_t j = 0; j < k; ++j) {
            row.push_back({j, 1.0});
            group.push_back(j);
        }
        lp.add_row(row, RowSense::Equal, 1.0);
        r.model.sos1.push_back(group);
    }
    return r;
}

// Exhaustive oracle: every binary assignment, then the continuous LP.
std::optional<double> enumerate_mip(const RandomMip& r) {
    const auto& lp = r.model.lp;
    std::optional<double> best;
    for (std::size_t mask = 0; mask < (std::size_t{1} << r.binaries); ++mask) {
        std::vector<std::vector<double>> a;
        std::vector<double> b;
        double fixed_obj = 0.0;
        for (std::size_t j = 0; j < r.binaries; ++j)
            if ((mask >> j) & 1U) fixed_obj += lp.objective[j];
        std::vector<std::vector<double>> dense(lp.num_rows(), std::vector<double>(lp.num_vars(), 0.0));
        for (const auto& e : lp.entries) dense[e.row][e.col] += e.value;
        for (std::size_t i = 0; i < lp.num_rows(); ++i) {
            double rhs = lp.rhs[i];
            for (std::size_t j = 0; j < r.binaries; ++j)
                if ((mask >> j) & 1U) rhs -= dense[i][j];
            std::vector<double> row(dense[i].begin() + static_cast<std::ptrdiff_t>(r.binaries), dense[i].end());
            a.push_back(row);
            b.push_back(rhs);
            if (lp.senses[i] == RowSense::Equal) {
                for (double& v : row) v = -v;
                a.push_back(row);
                b.push_back(-rhs);
            }
        }
        for (std::size_t j = 0; j < r.continuous; ++j) {
            std::vector<double> row(r.continuous, 0.0);
            row[j] = 1.0;
            a.push_back(row);
            b.push_back(5.0);
        }
        std::vector<double> c(lp.objective.begin() + static_cast<std::ptrdiff_t>(r.binaries), lp.objective.end());
        if (r.continuous == 0) {
            bool ok = true;
            for (double v : b) ok = ok && v >= -1e-12;
            if (!ok) continue;
            if (!best || fixed_obj > *best) best = fixed_obj;
            continue;
        }
        const auto res = lp_oracle::solve(a, b, c);
        if (res.result != lp_oracle::Result::Optimal) continue;
        const double v = fixed_obj + res.objective;
        if (!best || v > *best) best = v;
    }
    return best;
}

} // namespace

TEST_CASE("lp: trivial bounded and unbounded") {
    LinearProgram lp;
    lp.add_variable(1.0, 0.0, kInf);
    lp.add_row({{0, 1.0}}, RowSense::LessEqual, 3.0);
    const auto s = solve_lp(lp);
    CHECK(s.status == LpStatus::Optimal);
    CHECK(s.x[0] == doctest::Approx(3.0));
    CHECK(s.objective == doctest::Approx(3.0));

    LinearProgram open;
    open.add_variable(1.0, 0.0, kInf);
    CHECK(solve_lp(open).status == LpStatus::Unbounded);
}

TEST_CASE("lp: equality, >= rows, free variables and infeasibility") {
    LinearProgram lp;
    const auto x = lp.add_variable(1.0, -kInf, kInf);
    const auto y = lp.add_variable(2.0, 0.0, 4.0);
    lp.add_row({{x, 1.0}, {y, 1.0}}, RowSense::Equal, 5.0);
    lp.add_row({{x, 1.0}}, RowSense::GreaterEqual, -3.0);
    const auto s = solve_lp(lp);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK(s.x[x] == doctest::Approx(1.0));
    CHECK(s.x[y] == doctest::Approx(4.0));
    CHECK(s.objective == doctest::Approx(9.0));

    lp.add_row({{x, 1.0}}, RowSense::LessEqual, -4.0);
    CHECK(solve_lp(lp).status == LpStatus::Infeasible);
}

TEST_CASE("lp: bad models are rejected") {
    LinearProgram lp;
    lp.add_variable(1.0, 2.0, 1.0);
    CHECK_THROWS_AS(solve_lp(lp), std::invalid_argument);
    LinearProgram bad_row;
    bad_row.add_variable(1.0, 0.0, 1.0);
    bad_row.entries.push_back({3, 0, 1.0});
    CHECK_THROWS_AS(solve_lp(bad_row), std::invalid_argument);
}

TEST_CASE("lp: iteration limit is reported") {
    LinearProgram lp;
    for (int j = 0; j < 3; ++j) lp.add_variable(1.0, 0.0, kInf);
    lp.add_row({{0, 1.0}, {1, 2.0}, {2, 1.0}}, RowSense::LessEqual, 4.0);
    lp.add_row({{0, 2.0}, {1, 1.0}, {2, 3.0}}, RowSense::LessEqual, 5.0);
    LpOptions opt;
    opt.max_iterations = 1;
    CHECK(solve_lp(lp, opt).status == LpStatus::IterationLimit);
}

TEST_CASE("lp: classic cycling example terminates") {
    LinearProgram lp;
    for (double c : {0.75, -150.0, 0.02, -6.0}) lp.add_variable(c, 0.0, kInf);
    lp.add_row({{0, 0.25}, {1, -60.0}, {2, -0.04}, {3, 9.0}}, RowSense::LessEqual, 0.0);
    lp.add_row({{0, 0.5}, {1, -90.0}, {2, -0.02}, {3, 3.0}}, RowSense::LessEqual, 0.0);
    lp.add_row({{2, 1.0}}, RowSense::LessEqual, 1.0);
    for (std::size_t after : {0, 1, 50}) {
        LpOptions opt;
        opt.bland_after = after;
        const auto s = solve_lp(lp, opt);
        REQUIRE(s.status == LpStatus::Optimal);
        CHECK(s.objective == doctest::Approx(0.05));
    }
}

TEST_CASE("lp: random dense programs agree with the textbook oracle") {
    Rng rng(2024);
    int optimal = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const auto d = random_dense_lp(rng, rep % 5 != 0);
        const auto ours = solve_lp(to_model(d));
        const auto ref = lp_oracle::solve(d.a, d.b, d.c);
        switch (ref.result) {
        case lp_oracle::Result::Optimal:
            ++optimal;
            REQUIRE(ours.status == LpStatus::Optimal);
            CHECK(std::abs(ours.objective - ref.objective) < 1e-7);
            CHECK(to_model(d).max_violation(ours.x) < 1e-7);
            break;
        case lp_oracle::Result::Infeasible: CHECK(ours.status == LpStatus::Infeasible); break;
        case lp_oracle::Result::Unbounded: CHECK(ours.status == LpStatus::Unbounded); break;
        }
    }
    CHECK(optimal >= 30);
}

TEST_CASE("mip: integral root needs no branching") {
    MipModel m;
    m.lp.add_variable(1.0, 0.0, 1.0);
    m.lp.add_variable(1.0, 0.0, 1.0);
    m.lp.add_row({{0, 1.0}, {1, 1.0}}, RowSense::LessEqual, 1.0);
    m.binaries = {0, 1};
    const auto s = solve_mip(m);
    CHECK(s.status == MipStatus::Optimal);
    CHECK(s.objective == doctest::Approx(1.0));
    CHECK(s.nodes == 1);
}

TEST_CASE("mip: tiny knapsack") {
    MipModel m;
    for (double v : {6.0, 5.0, 4.0}) m.binaries.push_back(m.lp.add_variable(v, 0.0, 1.0));
    m.lp.add_row({{0, 3.0}, {1, 3.0}, {2, 3.0}}, RowSense::LessEqual, 6.0);
    const auto s = solve_mip(m);
    CHECK(s.status == MipStatus::Optimal);
    CHECK(s.objective == doctest::Approx(11.0));
    CHECK(s.values[0] == 1.0);
    CHECK(s.values[1] == 1.0);
    CHECK(s.values[2] == 0.0);
}

TEST_CASE("mip: infeasible model and exhausted budget") {
    MipModel m;
    m.binaries.push_back(m.lp.add_variable(1.0, 0.0, 1.0));
    m.binaries.push_back(m.lp.add_variable(1.0, 0.0, 1.0));
    m.lp.add_row({{0, 1.0}, {1, 1.0}}, RowSense::Equal, 1.5);
    CHECK(solve_mip(m).status == MipStatus::Infeasible);

    MipModel k;
    for (double v : {6.0, 5.0, 4.0}) k.binaries.push_back(k.lp.add_variable(v, 0.0, 1.0));
    k.lp.add_row({{0, 3.0}, {1, 3.0}, {2, 3.0}}, RowSense::LessEqual, 6.0);
    MipConfig cfg;
    cfg.node_limit = 0;
    CHECK_THROWS_AS(solve_mip(k, cfg), std::runtime_error);
    cfg.warm_start = std::vector<double>{1.0, 0.0, 0.0};
    const auto s = solve_mip(k, cfg);
    CHECK(s.status == MipStatus::Feasible);
    CHECK(s.objective == doctest::Approx(6.0));
    CHECK(s.hit_limit);
}

TEST_CASE("mip: warm start is validated and never undercut") {
    MipModel k;
    for (double v : {6.0, 5.0, 4.0}) k.binaries.push_back(k.lp.add_variable(v, 0.0, 1.0));
    k.lp.add_row({{0, 3.0}, {1, 3.0}, {2, 3.0}}, RowSense::LessEqual, 6.0);
    MipConfig cfg;
    cfg.warm_start = std::vector<double>{1.0, 1.0, 1.0};
    CHECK_THROWS_AS(solve_mip(k, cfg), std::invalid_argument);
    cfg.warm_start = std::vector<double>{0.5, 0.0, 0.0};
    CHECK_THROWS_AS(solve_mip(k, cfg), std::invalid_argument);
    cfg.warm_start = std::vector<double>{1.0, 1.0, 0.0};
    const auto s = solve_mip(k, cfg);
    CHECK(s.objective >= 11.0 - 1e-12);
    CHECK(s.status == MipStatus::Optimal);
}

TEST_CASE("mip: dense size cap falls back to the warm start") {
    MipModel k;
    for (double v : {6.0, 5.0, 4.0}) k.binaries.push_back(k.lp.add_variable(v, 0.0, 1.0));
    k.lp.add_row({{0, 3.0}, {1, 3.0}, {2, 3.0}}, RowSense::LessEqual, 6.0);
    MipConfig cfg;
    cfg.max_dense_entries = 1;
    CHECK_THROWS_AS(solve_mip(k, cfg), std::runtime_error);
    cfg.warm_start = std::vector<double>{0.0, 0.0, 1.0};
    const auto s = solve_mip(k, cfg);
    CHECK(s.status == MipStatus::Feasible);
    CHECK(s.objective == 4.0);
}

TEST_CASE("mip: random small models match exhaustive enumeration") {
    Rng rng(77);
    int feasible = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const auto r = random_mip(rng, rep % 2 == 1);
        const auto expected = enumerate_mip(r);
        MipConfig cfg;
        cfg.gap_tol = 0.0;
        const auto s = solve_mip(r.model, cfg);
        if (!expected) {
            CHECK(s.status == MipStatus::Infeasible);
            continue;
        }
        ++feasible;
        REQUIRE(s.status == MipStatus::Optimal);
        CHECK(std::abs(s.objective - *expected) < 1e-6);
        CHECK(r.model.lp.max_violation(s.values) < 1e-7);
        const auto relax = solve_lp(r.model.lp);
        REQUIRE(relax.status == LpStatus::Optimal);
        CHECK(relax.objective >= s.objective - 1e-9);
    }
    CHECK(feasible >= 60);
}

TEST_CASE("mip: LP text format and file-exchange backend") {
    MipModel k;
    for (double v : {6.0, 5.0, 4.0}) k.binaries.push_back(k.lp.add_variable(v, 0.0, 1.0));
    k.lp.add_row({{0, 3.0}, {1, 3.0}, {2, 3.0}}, RowSense::LessEqual, 6.0);
    std::ostringstream os;
    write_lp_format(k.lp, k.binaries, os);
    const auto text = os.str();
    for (const char* section : {"Maximize", "Subject To", "Bounds", "Binary", "End"})
        CHECK(text.find(section) != std::string::npos);
    CHECK(text.find("r0: 3 v0 + 3 v1 + 3 v2 <= 6") != std::string::npos);

    const auto dir = (std::filesystem::temp_directory_path() / "market_ext_test").string();
    const auto s = solve_mip_external(k, "printf 'v0 1\\nv1 1\\nv2 0\\n' > {solution}", dir);
    CHECK(s.objective == doctest::Approx(11.0));
    CHECK_THROWS_AS(solve_mip_external(k, "printf 'v0 1\\nv1 1\\nv2 1\\n' > {solution}", dir), std::runtime_error);
    CHECK_THROWS_AS(solve_mip_external(k, "false", dir), std::runtime_error);
}
