#include "market/pricing.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>

namespace market {

SubsetRule parse_subset_rule(const std::string& name) {
    if (name == "uniform-half") return SubsetRule::UniformHalf;
    if (name == "full") return SubsetRule::Full;
    throw std::invalid_argument("unknown OOS subset rule '" + name + "'");
}

const char* to_string(SubsetRule rule) { return rule == SubsetRule::Full ? "full" : "uniform-half"; }

std::size_t PricingInstance::grid_size() const {
    return population.types.empty() ? 0 : population.types.front().values.size();
}

double PricingInstance::big_m() const {
    if (options.big_m) return *options.big_m;
    return 2.0 * population.max_value();
}

void PricingInstance::validate() const {
    const std::size_t n = grid_size();
    population.validate(n);
    if (sample.empty()) throw std::invalid_argument("pricing instance needs at least one trajectory");
    for (const auto& s : sample) {
        if (s.metrics.empty()) throw std::invalid_argument("empty trajectory in pricing sample");
        for (std::size_t q : s.metrics)
            if (q >= n) throw std::invalid_argument("trajectory index outside the valuation grid");
    }
    if (!(big_m() > 0.0) || !std::isfinite(big_m())) throw std::invalid_argument("big-M must be positive and finite");
}

std::vector<ChoiceGroup> group_sample(const Population& population, std::span<const Trajectory> sample) {
    std::map<std::pair<std::size_t, std::vector<std::size_t>>, double> merged;
    const double per = 1.0 / static_cast<double>(sample.size());
    for (const auto& s : sample) {
        std::vector<std::size_t> items(s.metrics.begin(), s.metrics.end());
        std::sort(items.begin(), items.end());
        items.erase(std::unique(items.begin(), items.end()), items.end());
        for (std::size_t t = 0; t < population.size(); ++t) {
            if (population.prior[t] == 0.0) continue;
            merged[{t, items}] += population.prior[t] * per;
        }
    }
    std::vector<ChoiceGroup> out;
    out.reserve(merged.size());
    for (auto& [key, w] : merged) out.push_back({key.first, key.second, w});
    return out;
}

double grouped_revenue(const PriceCurve& curve, const Population& population, std::span<const ChoiceGroup> groups) {
    double rev = 0.0;
    for (const auto& g : groups) {
        const auto pick = best_choice_full_trajectory(population.types[g.type], curve, g.items);
        if (pick) rev += g.weight * curve[*pick];
    }
    return rev;
}

PricingModel build_pricing_milp(const PricingInstance& instance) {
    instance.validate();
    const auto& pop = instance.population;
    const bool null_option = instance.options.allow_no_purchase;
    const double big_m = instance.big_m();

    PricingModel pm;
    pm.big_m = big_m;
    auto& lp = pm.mip.lp;
    const auto groups = group_sample(pop, instance.sample);

    pm.price_var.assign(instance.grid_size(), std::nullopt);
    for (const auto& g : groups)
        for (std::size_t q : g.items)
            if (!pm.price_var[q])
                pm.price_var[q] = lp.add_variable(0.0, 0.0, null_option ? big_m : kInf, "x" + std::to_string(q));

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        const auto& v = pop.types[g.type].values;
        const std::string tag = std::to_string(gi);
        double vmax = 0.0;
        for (std::size_t q : g.items) vmax = std::max(vmax, v[q]);

        PricingModel::Group rec;
        rec.choice = g;
        // a is the buyer's best surplus. With the null item it lies in
        // [0, vmax], which lets every big-M constant shrink to a valid bound.
        rec.a_var = null_option ? lp.add_variable(0.0, 0.0, vmax, "a" + tag)
                                : lp.add_variable(0.0, -kInf, kInf, "a" + tag);
        std::vector<std::pair<std::size_t, double>> sos_row;
        for (std::size_t k = 0; k < g.items.size(); ++k) {
            const std::size_t q = g.items[k];
            const std::size_t x = *pm.price_var[q];
            const std::string item_tag = tag + "_" + std::to_string(q);
            const double y_cap = null_option ? std::min(big_m, v[q]) : big_m;
            const std::size_t z = lp.add_variable(0.0, 0.0, 1.0, "z" + item_tag);
            const std::size_t y = lp.add_variable(g.weight, 0.0, y_cap, "y" + item_tag);
            pm.mip.binaries.push_back(z);
            rec.z_vars.push_back(z);
            rec.y_vars.push_back(y);
            sos_row.push_back({z, 1.0});

            const double m_choice = null_option ? vmax + big_m - v[q] : big_m;
            lp.add_row({{rec.a_var, 1.0}, {x, 1.0}}, RowSense::GreaterEqual, v[q]);
            lp.add_row({{rec.a_var, 1.0}, {x, 1.0}, {z, m_choice}}, RowSense::LessEqual, v[q] + m_choice);
            lp.add_row({{y, 1.0}, {x, -1.0}}, RowSense::LessEqual, 0.0);
            lp.add_row({{y, 1.0}, {z, -y_cap}}, RowSense::LessEqual, 0.0);
            lp.add_row({{y, 1.0}, {x, -1.0}, {z, -big_m}}, RowSense::GreaterEqual, -big_m);
        }
        if (null_option) {
            const std::size_t z = lp.add_variable(0.0, 0.0, 1.0, "z" + tag + "_null");
            pm.mip.binaries.push_back(z);
            rec.z_null = z;
            sos_row.push_back({z, 1.0});
            if (vmax > 0.0) lp.add_row({{rec.a_var, 1.0}, {z, vmax}}, RowSense::LessEqual, vmax);
        }
        lp.add_row(sos_row, RowSense::Equal, 1.0);
        // Payment equals the chosen value minus the surplus. Redundant for
        // integer points, but it ties y to a in the relaxation.
        std::vector<std::pair<std::size_t, double>> pay_row{{rec.a_var, 1.0}};
        for (std::size_t k = 0; k < g.items.size(); ++k) {
            pay_row.push_back({rec.y_vars[k], 1.0});
            pay_row.push_back({rec.z_vars[k], -v[g.items[k]]});
        }
        lp.add_row(pay_row, RowSense::LessEqual, 0.0);
        std::vector<std::size_t> members;
        for (const auto& [z, c] : sos_row) members.push_back(z);
        pm.mip.sos1.push_back(std::move(members));
        pm.groups.push_back(std::move(rec));
    }
    return pm;
}

std::vector<double> warm_start_from_curve(const PricingModel& model, const PricingInstance& instance,
                                          const PriceCurve& curve) {
    const auto& lp = model.mip.lp;
    std::vector<double> x(lp.num_vars(), 0.0);
    PriceCurve capped = curve;
    for (std::size_t q = 0; q < model.price_var.size(); ++q) {
        if (!model.price_var[q]) continue;
        capped.prices[q] = std::clamp(curve[q], lp.lower[*model.price_var[q]], lp.upper[*model.price_var[q]]);
        x[*model.price_var[q]] = capped.prices[q];
    }
    const bool null_option = instance.options.allow_no_purchase;
    for (const auto& g : model.groups) {
        const auto& type = instance.population.types[g.choice.type];
        auto pick = best_choice_full_trajectory(type, capped, g.choice.items);
        double best_surplus = -kInf;
        for (std::size_t q : g.choice.items) best_surplus = std::max(best_surplus, type.values[q] - capped[q]);
        if (!null_option && !pick) {
            // Without the outside option the buyer must take something.
            std::size_t arg = g.choice.items.front();
            for (std::size_t q : g.choice.items)
                if (type.values[q] - capped[q] > type.values[arg] - capped[arg]) arg = q;
            pick = arg;
        }
        x[g.a_var] = null_option ? std::clamp(best_surplus, 0.0, lp.upper[g.a_var]) : best_surplus;
        if (!pick) {
            x[*g.z_null] = 1.0;
            continue;
        }
        for (std::size_t k = 0; k < g.choice.items.size(); ++k) {
            if (g.choice.items[k] != *pick) continue;
            x[g.z_vars[k]] = 1.0;
            x[g.y_vars[k]] = capped[*pick];
        }
    }
    return x;
}

PriceCurve independent_pricing(const PricingInstance& instance) {
    const auto& pop = instance.population;
    const std::size_t n = instance.grid_size();
    PriceCurve curve{std::vector<double>(n, 0.0)};
    for (std::size_t q = 0; q < n; ++q) {
        double best_price = 0.0, best_rev = -1.0;
        for (std::size_t cand = 0; cand < pop.size(); ++cand) {
            if (pop.prior[cand] == 0.0) continue;
            const double p = pop.types[cand].values[q];
            double mass = 0.0;
            for (std::size_t t = 0; t < pop.size(); ++t)
                if (pop.types[t].values[q] >= p) mass += pop.prior[t];
            const double rev = p * mass;
            if (rev > best_rev + 1e-12 || (std::abs(rev - best_rev) <= 1e-12 && p < best_price)) {
                best_rev = rev;
                best_price = p;
            }
        }
        curve.prices[q] = best_price;
    }
    return curve;
}

namespace {

// Sorted distinct valuations per metric: the rank ladder used by the shift
// and jiggle heuristics.
struct Ladders {
    std::vector<std::vector<double>> values;
    std::vector<std::size_t> base_rank;

    PriceCurve curve(const std::vector<long>& ranks) const {
        PriceCurve c{std::vector<double>(values.size(), 0.0)};
        for (std::size_t q = 0; q < values.size(); ++q) c.prices[q] = values[q][static_cast<std::size_t>(ranks[q])];
        return c;
    }
};

Ladders build_ladders(const PricingInstance& instance) {
    const auto& pop = instance.population;
    const auto base = independent_pricing(instance);
    Ladders l;
    for (std::size_t q = 0; q < instance.grid_size(); ++q) {
        std::vector<double> vals;
        for (std::size_t t = 0; t < pop.size(); ++t)
            if (pop.prior[t] > 0.0) vals.push_back(pop.types[t].values[q]);
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        const auto it = std::lower_bound(vals.begin(), vals.end(), base[q]);
        l.base_rank.push_back(static_cast<std::size_t>(it - vals.begin()));
        l.values.push_back(std::move(vals));
    }
    return l;
}

std::vector<long> shifted_ranks(const Ladders& l, long k) {
    std::vector<long> r(l.values.size());
    for (std::size_t q = 0; q < r.size(); ++q) {
        const long top = static_cast<long>(l.values[q].size()) - 1;
        r[q] = std::clamp(static_cast<long>(l.base_rank[q]) + k, 0L, top);
    }
    return r;
}

std::vector<long> best_shift(const Ladders& l, const PricingInstance& instance,
                             std::span<const ChoiceGroup> groups, double* revenue) {
    const long span = static_cast<long>(instance.population.size());
    auto best = shifted_ranks(l, 0);
    double best_rev = grouped_revenue(l.curve(best), instance.population, groups);
    for (long step = 1; step <= span; ++step) {
        for (long k : {-step, step}) {
            auto r = shifted_ranks(l, k);
            const double rev = grouped_revenue(l.curve(r), instance.population, groups);
            if (rev > best_rev + 1e-12) {
                best_rev = rev;
                best = std::move(r);
            }
        }
    }
    if (revenue) *revenue = best_rev;
    return best;
}

} // namespace

PriceCurve shift_pricing(const PricingInstance& instance) {
    instance.validate();
    const auto groups = group_sample(instance.population, instance.sample);
    const auto l = build_ladders(instance);
    return l.curve(best_shift(l, instance, groups, nullptr));
}

PriceCurve jiggle_pricing(const PricingInstance& instance) {
    instance.validate();
    const auto& pop = instance.population;
    const auto groups = group_sample(pop, instance.sample);
    const auto l = build_ladders(instance);
    const std::size_t n = instance.grid_size();

    std::vector<char> observed(n, 0);
    for (const auto& g : groups)
        for (std::size_t q : g.items) observed[q] = 1;

    double root_rev = 0.0;
    auto root = best_shift(l, instance, groups, &root_rev);
    const std::size_t budget = pop.size() * n;

    struct Candidate {
        double revenue;
        std::size_t id;
        std::vector<long> ranks;
    };
    auto worse = [](const Candidate& a, const Candidate& b) {
        if (a.revenue != b.revenue) return a.revenue < b.revenue;
        return a.id > b.id;
    };
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse)> frontier(worse);
    std::set<std::vector<long>> seen{root};
    std::size_t next_id = 0, evaluations = 0;
    frontier.push({root_rev, next_id++, root});
    Candidate best{root_rev, 0, root};

    while (!frontier.empty() && evaluations < budget) {
        const Candidate node = frontier.top();
        frontier.pop();
        const auto curve = l.curve(node.ranks);

        // Purchase probability of each observed metric under this curve.
        std::vector<double> bought(n, 0.0);
        for (const auto& g : groups)
            if (auto pick = best_choice_full_trajectory(pop.types[g.type], curve, g.items)) bought[*pick] += g.weight;
        std::vector<std::size_t> order;
        for (std::size_t q = 0; q < n; ++q)
            if (observed[q]) order.push_back(q);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return bought[a] > bought[b]; });
        const std::size_t raise = (order.size() + 1) / 2;

        for (std::size_t k = 0; k < order.size() && evaluations < budget; ++k) {
            const std::size_t q = order[k];
            auto ranks = node.ranks;
            ranks[q] += k < raise ? 1 : -1;
            if (ranks[q] < 0 || ranks[q] >= static_cast<long>(l.values[q].size())) continue;
            if (!seen.insert(ranks).second) continue;
            ++evaluations;
            const double rev = grouped_revenue(l.curve(ranks), pop, groups);
            if (rev > node.revenue + 1e-12) {
                Candidate child{rev, next_id++, std::move(ranks)};
                if (rev > best.revenue + 1e-12) best = child;
                frontier.push(std::move(child));
            }
        }
    }
    return l.curve(best.ranks);
}

PricingResult solve_optimal_pricing(const PricingInstance& instance, const PricingSolveConfig& config) {
    instance.validate();
    const auto model = build_pricing_milp(instance);
    MipConfig mip = config.mip;
    PricingResult res;
    if (config.warm_start) {
        const auto start = jiggle_pricing(instance);
        mip.warm_start = warm_start_from_curve(model, instance, start);
        res.warm_start_revenue = model.mip.lp.evaluate(*mip.warm_start);
    }
    const auto sol = solve_mip(model.mip, mip);
    res.status = sol.status;
    res.gap = sol.gap;
    res.nodes = sol.nodes;
    res.hit_limit = sol.hit_limit;
    if (sol.status == MipStatus::Unbounded || sol.status == MipStatus::Infeasible)
        throw std::runtime_error(std::string("pricing MILP is ") + to_string(sol.status));
    res.objective = sol.objective;
    res.curve = independent_pricing(instance);
    for (std::size_t q = 0; q < model.price_var.size(); ++q)
        if (model.price_var[q]) res.curve.prices[q] = sol.values[*model.price_var[q]];
    // A non-optimal incumbent may leave zero-surplus ties broken against the
    // seller; its prices then earn more than the incumbent's objective.
    if (sol.status != MipStatus::Optimal && instance.options.allow_no_purchase) {
        std::vector<ChoiceGroup> groups;
        for (const auto& g : model.groups) groups.push_back(g.choice);
        const double actual = grouped_revenue(res.curve, instance.population, groups);
        if (actual > res.objective) {
            res.objective = actual;
            res.gap = std::max(0.0, sol.best_bound - actual);
        }
    }
    return res;
}

BruteForceResult brute_force_optimal(const PricingInstance& instance, std::size_t cap) {
    instance.validate();
    const auto& pop = instance.population;
    const bool null_option = instance.options.allow_no_purchase;
    const double big_m = instance.big_m();
    const std::size_t n = instance.grid_size();

    // Merge identical (type, metric set) buyers; this is the oracle's own
    // bookkeeping and deliberately does not reuse group_sample.
    std::map<std::pair<std::size_t, std::set<std::size_t>>, double> buyers;
    for (const auto& s : instance.sample)
        for (std::size_t t = 0; t < pop.size(); ++t)
            if (pop.prior[t] > 0.0)
                buyers[{t, std::set<std::size_t>(s.metrics.begin(), s.metrics.end())}] +=
                    pop.prior[t] / static_cast<double>(instance.sample.size());
    struct Buyer {
        std::size_t type;
        std::vector<std::size_t> items;
        double weight;
        double best_case;
    };
    std::vector<Buyer> list;
    std::set<std::size_t> used;
    for (const auto& [key, w] : buyers) {
        Buyer b{key.first, {key.second.begin(), key.second.end()}, w, 0.0};
        for (std::size_t q : b.items) b.best_case = std::max(b.best_case, std::min(big_m, pop.types[b.type].values[q]));
        list.push_back(std::move(b));
        used.insert(key.second.begin(), key.second.end());
    }
    std::stable_sort(list.begin(), list.end(), [](const Buyer& x, const Buyer& y) { return x.weight > y.weight; });
    // tail[b] bounds the revenue still obtainable from buyers b, b+1, ...
    std::vector<double> tail(list.size() + 1, 0.0);
    for (std::size_t b = list.size(); b-- > 0;) tail[b] = tail[b + 1] + list[b].weight * list[b].best_case;

    // Node 0 is the zero potential; node q+1 is x(q). An edge u -> v with
    // weight w encodes x_v - x_u <= w. Shortest distances from node 0 give
    // the componentwise largest feasible prices, which maximize any
    // nonnegative objective over the chosen items.
    struct Edge {
        std::size_t from, to;
        double w;
    };
    const std::size_t nodes = n + 1;
    std::vector<Edge> edges;
    for (std::size_t q : used) {
        edges.push_back({0, q + 1, big_m});
        edges.push_back({q + 1, 0, 0.0});
    }
    std::vector<double> objective(n, 0.0);
    std::vector<double> dist(nodes);
    auto potentials = [&]() {
        std::fill(dist.begin(), dist.end(), kInf);
        dist[0] = 0.0;
        bool changed = true;
        for (std::size_t pass = 0; pass < nodes && changed; ++pass) {
            changed = false;
            for (const auto& e : edges)
                if (dist[e.from] + e.w < dist[e.to] - 1e-12) {
                    dist[e.to] = dist[e.from] + e.w;
                    changed = true;
                }
        }
        for (const auto& e : edges)
            if (dist[e.from] + e.w < dist[e.to] - 1e-9) return false;
        return true;
    };

    BruteForceResult best;
    best.revenue = -1.0;
    std::size_t visited = 0;
    // Infeasible partial assignments stay infeasible when extended, and the
    // bound prunes only branches that cannot beat the incumbent.
    auto dfs = [&](auto&& self, std::size_t b) -> void {
        const auto& buyer = list[b];
        const auto& v = pop.types[buyer.type].values;
        const std::size_t options = buyer.items.size() + (null_option ? 1 : 0);
        for (std::size_t c = 0; c < options; ++c) {
            if (++visited > cap) throw std::length_error("brute-force assignment count exceeds the cap");
            const std::size_t mark = edges.size();
            if (c == buyer.items.size()) {
                for (std::size_t q : buyer.items) edges.push_back({q + 1, 0, -v[q]});
            } else {
                const std::size_t item = buyer.items[c];
                objective[item] += buyer.weight;
                if (null_option) edges.push_back({0, item + 1, v[item]});
                for (std::size_t q : buyer.items)
                    if (q != item) edges.push_back({q + 1, item + 1, v[item] - v[q]});
            }
            if (potentials()) {
                double rev = 0.0;
                for (std::size_t q : used) rev += objective[q] * dist[q + 1];
                if (b + 1 == list.size()) {
                    ++best.assignments;
                    if (rev > best.revenue + 1e-12) {
                        best.revenue = rev;
                        best.curve = independent_pricing(instance);
                        for (std::size_t q : used) best.curve.prices[q] = dist[q + 1];
                    }
                } else if (rev + tail[b + 1] > best.revenue + 1e-12) {
                    self(self, b + 1);
                }
            }
            edges.resize(mark);
            if (c < buyer.items.size()) objective[buyer.items[c]] -= buyer.weight;
        }
    };
    if (!list.empty()) dfs(dfs, 0);
    return best;
}

std::vector<Trajectory> thin_trajectories(std::span<const Trajectory> sample, SubsetRule rule, Rng& rng) {
    std::vector<Trajectory> out;
    out.reserve(sample.size());
    for (const auto& s : sample) {
        if (rule == SubsetRule::Full) {
            out.push_back(s);
            continue;
        }
        const std::size_t len = s.length();
        const std::size_t keep = (len + 1) / 2;
        std::vector<std::size_t> pos(len);
        for (std::size_t i = 0; i < len; ++i) pos[i] = i;
        for (std::size_t i = 0; i < keep; ++i) std::swap(pos[i], pos[i + rng.uniform_index(len - i)]);
        std::sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(keep));
        Trajectory t;
        for (std::size_t i = 0; i < keep; ++i) t.metrics.push_back(s.metrics[pos[i]]);
        out.push_back(std::move(t));
    }
    return out;
}

RevenueReport evaluate_revenue(const PriceCurve& curve, const Population& population,
                               std::span<const Trajectory> sample, EvalMode mode, SubsetRule rule, Rng* rng) {
    if (sample.empty()) throw std::invalid_argument("cannot evaluate revenue on an empty sample");
    std::vector<Trajectory> thinned;
    if (mode == EvalMode::OutOfSample && rule != SubsetRule::Full) {
        if (!rng) throw std::invalid_argument("OOS evaluation needs a random source");
        thinned = thin_trajectories(sample, rule, *rng);
        sample = thinned;
    }
    RevenueReport rep;
    rep.per_type_revenue.assign(population.size(), 0.0);
    rep.per_type_welfare.assign(population.size(), 0.0);
    const double per = 1.0 / static_cast<double>(sample.size());
    for (const auto& s : sample) {
        for (std::size_t t = 0; t < population.size(); ++t) {
            const auto& v = population.types[t].values;
            double top = 0.0;
            for (std::size_t q : s.metrics) top = std::max(top, v[q]);
            rep.per_type_welfare[t] += per * top;
            if (auto pick = best_choice_full_trajectory(population.types[t], curve, s.metrics))
                rep.per_type_revenue[t] += per * curve[*pick];
        }
    }
    for (std::size_t t = 0; t < population.size(); ++t) {
        rep.expected_revenue += population.prior[t] * rep.per_type_revenue[t];
        rep.total_welfare += population.prior[t] * rep.per_type_welfare[t];
    }
    rep.fraction_of_welfare = rep.total_welfare > 0.0 ? rep.expected_revenue / rep.total_welfare : 0.0;
    return rep;
}

} // namespace market
