#include "market/mip.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace market {

void MipModel::validate() const {
    lp.validate();
    std::vector<char> is_binary(lp.num_vars(), 0);
    for (std::size_t j : binaries) {
        if (j >= lp.num_vars()) throw std::invalid_argument("binary index out of range");
        is_binary[j] = 1;
    }
    for (const auto& group : sos1) {
        if (group.empty()) throw std::invalid_argument("empty SOS1 group");
        for (std::size_t j : group)
            if (j >= lp.num_vars() || !is_binary[j]) throw std::invalid_argument("SOS1 member is not a binary");
    }
}

const char* to_string(MipStatus status) {
    switch (status) {
    case MipStatus::Optimal: return "optimal";
    case MipStatus::Feasible: return "feasible";
    case MipStatus::Infeasible: return "infeasible";
    case MipStatus::Unbounded: return "unbounded";
    }
    return "unknown";
}

namespace {

struct Fix {
    std::size_t var;
    double value;
};

struct Node {
    std::size_t id;
    double bound;
    std::vector<Fix> fixes;
};

struct NodeOrder {
    bool operator()(const Node& a, const Node& b) const {
        if (a.bound != b.bound) return a.bound < b.bound;
        return a.id > b.id;
    }
};

struct Branch {
    std::vector<Fix> first;
    std::vector<Fix> second;
};

class BranchAndBound {
public:
    BranchAndBound(const MipModel& model, const MipConfig& config)
        : model_(model), config_(config), start_(std::chrono::steady_clock::now()) {}

    MipSolution run() {
        MipSolution out;
        const auto& lp = model_.lp;
        if (config_.warm_start) {
            const auto& ws = *config_.warm_start;
            if (ws.size() != lp.num_vars()) throw std::invalid_argument("warm start has the wrong length");
            if (lp.max_violation(ws) > 1e-7) throw std::invalid_argument("warm start violates the model");
            for (std::size_t j : model_.binaries)
                if (std::abs(ws[j] - std::round(ws[j])) > 1e-7)
                    throw std::invalid_argument("warm start is not integral");
            incumbent_ = ws;
            incumbent_value_ = lp.evaluate(ws);
        }

        const std::size_t rows = lp.num_rows();
        const std::size_t dense = rows * (lp.num_vars() + 2 * rows);
        if (dense > config_.max_dense_entries) {
            if (!incumbent_) throw std::runtime_error("model too large for the dense solver and no warm start given");
            out.status = MipStatus::Feasible;
            out.values = *incumbent_;
            out.objective = incumbent_value_;
            out.best_bound = kInf;
            out.gap = kInf;
            out.hit_limit = true;
            return out;
        }

        WarmStartLp relaxation(lp, config_.lp);
        std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
        std::optional<Node> plunge = Node{next_id_++, kInf, {}};
        bool root = true;
        bool limit_hit = false;

        while (plunge || !open.empty()) {
            if (nodes_ >= config_.node_limit || elapsed() > config_.time_budget_seconds) {
                limit_hit = true;
                break;
            }
            Node node;
            if (plunge) {
                node = std::move(*plunge);
                plunge.reset();
            } else {
                node = open.top();
                open.pop();
            }
            if (incumbent_ && node.bound <= incumbent_value_ + config_.gap_tol) continue;

            ++nodes_;
            auto lower = lp.lower;
            auto upper = lp.upper;
            for (const auto& f : node.fixes) lower[f.var] = upper[f.var] = f.value;
            for (std::size_t j : model_.binaries) {
                lower[j] = std::max(lower[j], 0.0);
                upper[j] = std::min(upper[j], 1.0);
            }
            const LpSolution rel = relaxation.solve(lower, upper);
            lp_iterations_ += rel.iterations;
            if (rel.status == LpStatus::Unbounded) {
                if (root) {
                    out.status = MipStatus::Unbounded;
                    out.nodes = nodes_;
                    return out;
                }
                throw std::runtime_error("LP relaxation became unbounded below the root");
            }
            if (rel.status == LpStatus::IterationLimit)
                throw std::runtime_error("simplex hit its iteration limit (numerical trouble)");
            root = false;
            if (rel.status == LpStatus::Infeasible) continue;
            if (incumbent_ && rel.objective <= incumbent_value_ + config_.gap_tol) continue;

            auto branch = choose_branch(rel.x);
            if (!branch) {
                auto vals = rel.x;
                for (std::size_t j : model_.binaries) vals[j] = std::round(vals[j]);
                incumbent_ = std::move(vals);
                incumbent_value_ = rel.objective;
                continue;
            }
            Node first{next_id_++, rel.objective, node.fixes};
            first.fixes.insert(first.fixes.end(), branch->first.begin(), branch->first.end());
            Node second{next_id_++, rel.objective, std::move(node.fixes)};
            second.fixes.insert(second.fixes.end(), branch->second.begin(), branch->second.end());
            plunge = std::move(first);
            open.push(std::move(second));
        }

        double bound = incumbent_ ? incumbent_value_ : -kInf;
        if (limit_hit) {
            if (plunge) bound = std::max(bound, plunge->bound);
            if (!open.empty()) bound = std::max(bound, open.top().bound);
        }
        out.nodes = nodes_;
        out.lp_iterations = lp_iterations_;
        out.hit_limit = limit_hit;
        if (!incumbent_) {
            if (limit_hit) throw std::runtime_error("branch-and-bound budget exhausted with no incumbent");
            out.status = MipStatus::Infeasible;
            return out;
        }
        out.values = *incumbent_;
        out.objective = incumbent_value_;
        out.best_bound = bound;
        out.gap = std::max(0.0, bound - incumbent_value_);
        out.status = out.gap <= config_.gap_tol ? MipStatus::Optimal : MipStatus::Feasible;
        return out;
    }

private:
    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    bool fractional(double v) const { return std::abs(v - std::round(v)) > config_.integrality_tol; }

    // Splits the most spread-out fractional SOS1 group at the cumulative LP
    // mass closest to one half; otherwise branches on the most fractional
    // binary. The side holding more LP mass is explored first.
    std::optional<Branch> choose_branch(const std::vector<double>& x) const {
        std::size_t best_group = model_.sos1.size();
        double best_spread = 0.0;
        for (std::size_t g = 0; g < model_.sos1.size(); ++g) {
            const auto& group = model_.sos1[g];
            double top = 0.0;
            std::size_t support = 0;
            bool frac = false;
            for (std::size_t j : group) {
                top = std::max(top, x[j]);
                if (x[j] > config_.integrality_tol) ++support;
                frac = frac || fractional(x[j]);
            }
            if (!frac && support <= 1) continue;
            const double spread = 1.0 - top;
            if (best_group == model_.sos1.size() || spread > best_spread + 1e-12) {
                best_group = g;
                best_spread = spread;
            }
        }
        if (best_group < model_.sos1.size()) {
            const auto& group = model_.sos1[best_group];
            double total = 0.0;
            for (std::size_t j : group) total += std::max(x[j], 0.0);
            // Split after position k: both sides must carry positive mass.
            std::size_t first_pos = group.size(), last_pos = 0;
            for (std::size_t k = 0; k < group.size(); ++k)
                if (x[group[k]] > config_.integrality_tol) {
                    first_pos = std::min(first_pos, k);
                    last_pos = k;
                }
            std::size_t split = first_pos;
            double best_dist = kInf, cum = 0.0;
            for (std::size_t k = 0; k < group.size(); ++k) {
                cum += std::max(x[group[k]], 0.0);
                if (k < first_pos || k >= last_pos) continue;
                const double dist = std::abs(cum - 0.5 * total);
                if (dist < best_dist - 1e-12) {
                    best_dist = dist;
                    split = k;
                }
            }
            if (first_pos >= last_pos) {
                // A single fractional member: branch it to one and to zero.
                const std::size_t j = group[first_pos];
                Branch b;
                b.first.push_back({j, 1.0});
                b.second.push_back({j, 0.0});
                return b;
            }
            double left_mass = 0.0;
            for (std::size_t k = 0; k <= split; ++k) left_mass += std::max(x[group[k]], 0.0);
            Branch keep_left, keep_right;
            for (std::size_t k = 0; k < group.size(); ++k)
                (k <= split ? keep_right.first : keep_left.first).push_back({group[k], 0.0});
            Branch b;
            if (left_mass >= total - left_mass) {
                b.first = std::move(keep_left.first);
                b.second = std::move(keep_right.first);
            } else {
                b.first = std::move(keep_right.first);
                b.second = std::move(keep_left.first);
            }
            return b;
        }

        std::size_t pick = model_.lp.num_vars();
        double best = -1.0;
        for (std::size_t j : model_.binaries) {
            if (!fractional(x[j])) continue;
            const double score = 0.5 - std::abs(x[j] - std::floor(x[j]) - 0.5);
            if (score > best + 1e-12 || (std::abs(score - best) <= 1e-12 && j < pick)) {
                best = score;
                pick = j;
            }
        }
        if (pick == model_.lp.num_vars()) return std::nullopt;
        Branch b;
        const double up_first = x[pick] >= 0.5 ? 1.0 : 0.0;
        b.first.push_back({pick, up_first});
        b.second.push_back({pick, 1.0 - up_first});
        return b;
    }

    const MipModel& model_;
    const MipConfig& config_;
    std::chrono::steady_clock::time_point start_;
    std::optional<std::vector<double>> incumbent_;
    double incumbent_value_ = -kInf;
    std::size_t next_id_ = 0;
    std::size_t nodes_ = 0;
    std::size_t lp_iterations_ = 0;
};

} // namespace

MipSolution solve_mip(const MipModel& model, const MipConfig& config) {
    model.validate();
    BranchAndBound bb(model, config);
    return bb.run();
}

MipSolution solve_mip_external(const MipModel& model, const std::string& command, const std::string& work_dir) {
    model.validate();
    namespace fs = std::filesystem;
    fs::create_directories(work_dir);
    const fs::path model_path = fs::path(work_dir) / "model.lp";
    const fs::path sol_path = fs::path(work_dir) / "solution.txt";
    {
        std::ofstream out(model_path);
        if (!out) throw std::runtime_error("cannot write " + model_path.string());
        write_lp_format(model.lp, model.binaries, out);
    }
    std::error_code ec;
    fs::remove(sol_path, ec);

    std::string cmd = command;
    auto replace = [&](const std::string& key, const std::string& value) {
        for (auto p = cmd.find(key); p != std::string::npos; p = cmd.find(key, p + value.size()))
            cmd.replace(p, key.size(), value);
    };
    replace("{model}", model_path.string());
    replace("{solution}", sol_path.string());
    if (std::system(cmd.c_str()) != 0) throw std::runtime_error("external solver command failed: " + cmd);

    std::ifstream in(sol_path);
    if (!in) throw std::runtime_error("external solver wrote no solution file");
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t j = 0; j < model.lp.num_vars(); ++j) index[model.lp.names[j]] = j;

    MipSolution sol;
    sol.values.assign(model.lp.num_vars(), 0.0);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string name;
        double value;
        if (!(ls >> name >> value)) continue;
        if (auto it = index.find(name); it != index.end()) sol.values[it->second] = value;
    }
    if (model.lp.max_violation(sol.values) > 1e-6)
        throw std::runtime_error("external solution violates the model");
    sol.status = MipStatus::Feasible;
    sol.objective = model.lp.evaluate(sol.values);
    sol.best_bound = kInf;
    sol.gap = kInf;
    return sol;
}

} // namespace market
