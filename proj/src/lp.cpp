#include "market/lp.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>

namespace market {

std::size_t LinearProgram::add_variable(double obj, double lo, double hi, std::string name) {
    objective.push_back(obj);
    lower.push_back(lo);
    upper.push_back(hi);
    if (name.empty()) name = "v" + std::to_string(objective.size() - 1);
    names.push_back(std::move(name));
    return objective.size() - 1;
}

std::size_t LinearProgram::add_row(std::span<const std::pair<std::size_t, double>> coeffs, RowSense sense,
                                   double value) {
    const std::size_t row = rhs.size();
    for (const auto& [col, coef] : coeffs)
        if (coef != 0.0) entries.push_back({row, col, coef});
    senses.push_back(sense);
    rhs.push_back(value);
    return row;
}

std::size_t LinearProgram::add_row(std::initializer_list<std::pair<std::size_t, double>> coeffs, RowSense sense,
                                   double value) {
    return add_row(std::span<const std::pair<std::size_t, double>>(coeffs.begin(), coeffs.size()), sense, value);
}

void LinearProgram::validate() const {
    const std::size_t n = num_vars();
    if (lower.size() != n || upper.size() != n) throw std::invalid_argument("bound vectors differ in length");
    if (!names.empty() && names.size() != n) throw std::invalid_argument("name vector differs in length");
    if (senses.size() != rhs.size()) throw std::invalid_argument("row senses and right-hand sides differ in length");
    for (std::size_t j = 0; j < n; ++j) {
        if (!std::isfinite(objective[j])) throw std::invalid_argument("objective coefficient is not finite");
        if (std::isnan(lower[j]) || std::isnan(upper[j]) || lower[j] > upper[j])
            throw std::invalid_argument("variable " + std::to_string(j) + " has crossed bounds");
        if (lower[j] == kInf || upper[j] == -kInf)
            throw std::invalid_argument("variable " + std::to_string(j) + " has an infinite bound on the wrong side");
    }
    for (double b : rhs)
        if (!std::isfinite(b)) throw std::invalid_argument("right-hand side is not finite");
    for (const auto& e : entries) {
        if (e.row >= rhs.size() || e.col >= n) throw std::invalid_argument("matrix entry out of range");
        if (!std::isfinite(e.value)) throw std::invalid_argument("matrix entry is not finite");
    }
}

double LinearProgram::max_violation(std::span<const double> x) const {
    double worst = 0.0;
    for (std::size_t j = 0; j < num_vars(); ++j) {
        worst = std::max(worst, lower[j] - x[j]);
        worst = std::max(worst, x[j] - upper[j]);
    }
    std::vector<double> act(num_rows(), 0.0);
    for (const auto& e : entries) act[e.row] += e.value * x[e.col];
    for (std::size_t i = 0; i < num_rows(); ++i) {
        const double diff = act[i] - rhs[i];
        switch (senses[i]) {
        case RowSense::LessEqual: worst = std::max(worst, diff); break;
        case RowSense::GreaterEqual: worst = std::max(worst, -diff); break;
        case RowSense::Equal: worst = std::max(worst, std::abs(diff)); break;
        }
    }
    return worst;
}

double LinearProgram::evaluate(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < num_vars(); ++j) s += objective[j] * x[j];
    return s;
}

const char* to_string(LpStatus status) {
    switch (status) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
    case LpStatus::IterationLimit: return "iteration-limit";
    }
    return "unknown";
}

namespace {

// Columns are laid out as [structural | row slacks | artificials]. Row i reads
// A_i x + s_i (+ sigma_i art_i) = b_i, and the slack bounds encode the sense.
class Tableau {
public:
    Tableau(const LinearProgram& lp, std::span<const double> lower, std::span<const double> upper,
            const LpOptions& options)
        : m_(lp.num_rows()), n_(lp.num_vars()), tol_(options.tolerance), bland_after_(options.bland_after) {
        dense_a_.assign(m_ * n_, 0.0);
        for (const auto& e : lp.entries) dense_a_[e.row * n_ + e.col] += e.value;
        b_ = lp.rhs;

        lo_.assign(lower.begin(), lower.end());
        up_.assign(upper.begin(), upper.end());
        x_.resize(n_);
        for (std::size_t j = 0; j < n_; ++j) x_[j] = initial_value(lo_[j], up_[j]);
        for (std::size_t i = 0; i < m_; ++i) {
            switch (lp.senses[i]) {
            case RowSense::LessEqual: lo_.push_back(0.0); up_.push_back(kInf); break;
            case RowSense::GreaterEqual: lo_.push_back(-kInf); up_.push_back(0.0); break;
            case RowSense::Equal: lo_.push_back(0.0); up_.push_back(0.0); break;
            }
            x_.push_back(0.0);
        }

        // Decide which rows start on their slack and which need an artificial.
        std::vector<double> residual(b_);
        for (std::size_t i = 0; i < m_; ++i)
            for (std::size_t j = 0; j < n_; ++j) residual[i] -= dense_a_[i * n_ + j] * x_[j];
        sigma_.assign(m_, 1.0);
        std::vector<std::size_t> art_row;
        for (std::size_t i = 0; i < m_; ++i) {
            const std::size_t s = n_ + i;
            if (residual[i] >= lo_[s] - tol_ && residual[i] <= up_[s] + tol_) continue;
            const double bound = residual[i] < lo_[s] ? lo_[s] : up_[s];
            x_[s] = bound;
            sigma_[i] = residual[i] - bound > 0 ? 1.0 : -1.0;
            art_row.push_back(i);
        }
        num_art_ = art_row.size();
        cols_ = n_ + m_ + num_art_;
        for (std::size_t k = 0; k < num_art_; ++k) {
            lo_.push_back(0.0);
            up_.push_back(kInf);
            x_.push_back(0.0);
        }

        t_.assign(m_ * cols_, 0.0);
        basis_.assign(m_, 0);
        pos_.assign(cols_, kNone);
        std::vector<std::size_t> row_art(m_, kNone);
        for (std::size_t k = 0; k < num_art_; ++k) row_art[art_row[k]] = n_ + m_ + k;
        for (std::size_t i = 0; i < m_; ++i) {
            const double sg = sigma_[i];
            double* row = &t_[i * cols_];
            for (std::size_t j = 0; j < n_; ++j) row[j] = sg * dense_a_[i * n_ + j];
            row[n_ + i] = sg;
            if (row_art[i] != kNone) {
                row[row_art[i]] = 1.0;
                basis_[i] = row_art[i];
            } else {
                basis_[i] = n_ + i;
            }
            pos_[basis_[i]] = i;
        }
        refresh_basic_values();
    }

    LpSolution run(const LinearProgram& lp, std::size_t max_iterations) {
        LpSolution sol;
        max_iterations_ = max_iterations;

        if (num_art_ > 0) {
            cost_.assign(cols_, 0.0);
            for (std::size_t k = 0; k < num_art_; ++k) cost_[n_ + m_ + k] = -1.0;
            const auto status = iterate();
            sol.iterations = iterations_;
            if (status == Step::Limit) {
                sol.status = LpStatus::IterationLimit;
                return sol;
            }
            refresh_basic_values();
            double infeas = 0.0;
            for (std::size_t k = 0; k < num_art_; ++k) infeas += x_[n_ + m_ + k];
            double scale = 1.0;
            for (double b : b_) scale = std::max(scale, std::abs(b));
            if (infeas > 1e-8 * scale) {
                sol.status = LpStatus::Infeasible;
                return sol;
            }
            drive_out_artificials();
            for (std::size_t k = 0; k < num_art_; ++k) {
                up_[n_ + m_ + k] = 0.0;
                x_[n_ + m_ + k] = 0.0;
            }
            refresh_basic_values();
        }

        cost_.assign(cols_, 0.0);
        std::copy(lp.objective.begin(), lp.objective.end(), cost_.begin());
        const auto status = iterate();
        sol.iterations = iterations_;
        if (status == Step::Limit) {
            sol.status = LpStatus::IterationLimit;
            return sol;
        }
        if (status == Step::Unbounded) {
            sol.status = LpStatus::Unbounded;
            return sol;
        }
        finish(lp, sol);
        return sol;
    }

    // Re-solves under new structural bounds starting from the current basis,
    // which must be the optimal basis of an earlier phase-two solve. Returns
    // nullopt when that basis is not a dual-feasible start for the new bounds.
    std::optional<LpSolution> resolve(const LinearProgram& lp, std::span<const double> lower,
                                      std::span<const double> upper, std::size_t max_iterations) {
        iterations_ = 0;
        max_iterations_ = max_iterations;
        for (std::size_t j = 0; j < n_; ++j) {
            lo_[j] = lower[j];
            up_[j] = upper[j];
        }
        compute_reduced_costs();
        for (std::size_t j = 0; j < cols_; ++j) {
            if (pos_[j] != kNone) continue;
            if (lo_[j] == up_[j]) {
                x_[j] = lo_[j];
            } else if (d_[j] > tol_) {
                if (!std::isfinite(up_[j])) return std::nullopt;
                x_[j] = up_[j];
            } else if (d_[j] < -tol_) {
                if (!std::isfinite(lo_[j])) return std::nullopt;
                x_[j] = lo_[j];
            } else {
                x_[j] = std::clamp(x_[j], lo_[j], up_[j]);
            }
        }
        refresh_basic_values();

        LpSolution sol;
        std::size_t since_refresh = 0;
        while (true) {
            std::size_t r = kNone;
            double worst = 0.0;
            for (std::size_t i = 0; i < m_; ++i) {
                const std::size_t bv = basis_[i];
                const double below = lo_[bv] - x_[bv], above = x_[bv] - up_[bv];
                const double viol = std::max(below, above);
                if (viol > tol_ * (1.0 + std::abs(viol > 0 && below > above ? lo_[bv] : up_[bv])) && viol > worst) {
                    worst = viol;
                    r = i;
                }
            }
            if (r == kNone) break;
            if (iterations_ >= max_iterations_) {
                sol.status = LpStatus::IterationLimit;
                sol.iterations = iterations_;
                return sol;
            }
            const std::size_t out = basis_[r];
            const bool raise = x_[out] < lo_[out];
            const double target = raise ? lo_[out] : up_[out];

            std::size_t q = kNone;
            double best_ratio = kInf, best_alpha = 0.0;
            for (std::size_t j = 0; j < cols_; ++j) {
                if (pos_[j] != kNone || lo_[j] == up_[j]) continue;
                const double a = t_[r * cols_ + j];
                if (std::abs(a) <= 1e-9) continue;
                // Direction x_j must move for x_out to head toward its bound.
                const bool increase = raise ? a < 0 : a > 0;
                if (increase && x_[j] >= up_[j]) continue;
                if (!increase && x_[j] <= lo_[j]) continue;
                const double ratio = std::abs(d_[j]) / std::abs(a);
                if (ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && std::abs(a) > std::abs(best_alpha))) {
                    best_ratio = ratio;
                    best_alpha = a;
                    q = j;
                }
            }
            if (q == kNone) {
                sol.status = LpStatus::Infeasible;
                sol.iterations = iterations_;
                return sol;
            }
            ++iterations_;
            const double delta = (x_[out] - target) / t_[r * cols_ + q];
            x_[q] += delta;
            for (std::size_t i = 0; i < m_; ++i) {
                const double a = t_[i * cols_ + q];
                if (a != 0.0) x_[basis_[i]] -= a * delta;
            }
            pivot(r, q);
            x_[out] = target;
            if (++since_refresh >= 100) {
                since_refresh = 0;
                refresh_basic_values();
                compute_reduced_costs();
            }
        }

        // Primal clean-up; normally zero iterations.
        const auto status = iterate();
        sol.iterations = iterations_;
        if (status == Step::Limit) {
            sol.status = LpStatus::IterationLimit;
            return sol;
        }
        if (status == Step::Unbounded) {
            sol.status = LpStatus::Unbounded;
            return sol;
        }
        finish(lp, sol);
        return sol;
    }

private:
    static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

    void finish(const LinearProgram& lp, LpSolution& sol) {
        refresh_basic_values();
        sol.status = LpStatus::Optimal;
        sol.x.assign(x_.begin(), x_.begin() + static_cast<std::ptrdiff_t>(n_));
        // Snap values within tolerance of a bound onto it.
        for (std::size_t j = 0; j < n_; ++j) {
            if (std::abs(sol.x[j] - lo_[j]) <= tol_) sol.x[j] = lo_[j];
            if (std::abs(sol.x[j] - up_[j]) <= tol_) sol.x[j] = up_[j];
        }
        sol.objective = lp.evaluate(sol.x);
    }
    enum class Step { Optimal, Unbounded, Limit };

    static double initial_value(double lo, double up) {
        if (std::isfinite(lo)) return lo;
        if (std::isfinite(up)) return up;
        return 0.0;
    }

    double& at(std::size_t i, std::size_t j) { return t_[i * cols_ + j]; }

    // xB = B^-1 (b - N x_N), with B^-1 read off the slack columns.
    void refresh_basic_values() {
        std::vector<double> rhs(b_);
        for (std::size_t j = 0; j < cols_; ++j) {
            if (pos_[j] != kNone || x_[j] == 0.0) continue;
            if (j < n_) {
                for (std::size_t i = 0; i < m_; ++i) rhs[i] -= dense_a_[i * n_ + j] * x_[j];
            } else if (j < n_ + m_) {
                rhs[j - n_] -= x_[j];
            }
            // Nonbasic artificials always sit at zero.
        }
        for (std::size_t i = 0; i < m_; ++i) {
            const double* row = &t_[i * cols_ + n_];
            double v = 0.0;
            for (std::size_t k = 0; k < m_; ++k) v += row[k] * rhs[k];
            x_[basis_[i]] = v;
        }
    }

    void compute_reduced_costs() {
        d_.assign(cost_.begin(), cost_.end());
        for (std::size_t i = 0; i < m_; ++i) {
            const double cb = cost_[basis_[i]];
            if (cb == 0.0) continue;
            const double* row = &t_[i * cols_];
            for (std::size_t j = 0; j < cols_; ++j) d_[j] -= cb * row[j];
        }
        for (std::size_t i = 0; i < m_; ++i) d_[basis_[i]] = 0.0;
    }

    void pivot(std::size_t r, std::size_t q) {
        double* prow = &t_[r * cols_];
        const double inv = 1.0 / prow[q];
        for (std::size_t j = 0; j < cols_; ++j) prow[j] *= inv;
        prow[q] = 1.0;
        for (std::size_t i = 0; i < m_; ++i) {
            if (i == r) continue;
            double* row = &t_[i * cols_];
            const double f = row[q];
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < cols_; ++j) row[j] -= f * prow[j];
            row[q] = 0.0;
        }
        const double dq = d_[q];
        if (dq != 0.0) {
            for (std::size_t j = 0; j < cols_; ++j) d_[j] -= dq * prow[j];
            d_[q] = 0.0;
        }
        pos_[basis_[r]] = kNone;
        basis_[r] = q;
        pos_[q] = r;
    }

    Step iterate() {
        compute_reduced_costs();
        std::size_t degenerate_run = 0;
        std::size_t since_refresh = 0;
        while (true) {
            if (iterations_ >= max_iterations_) return Step::Limit;
            const bool bland = degenerate_run >= bland_after_;

            std::size_t q = kNone;
            double best = 0.0;
            double dir = 0.0;
            for (std::size_t j = 0; j < cols_; ++j) {
                if (pos_[j] != kNone || lo_[j] == up_[j]) continue;
                const double dj = d_[j];
                double cand_dir = 0.0;
                if (dj > tol_ && x_[j] < up_[j]) cand_dir = 1.0;
                else if (dj < -tol_ && x_[j] > lo_[j]) cand_dir = -1.0;
                if (cand_dir == 0.0) continue;
                if (bland) {
                    q = j;
                    dir = cand_dir;
                    break;
                }
                if (std::abs(dj) > best) {
                    best = std::abs(dj);
                    q = j;
                    dir = cand_dir;
                }
            }
            if (q == kNone) return Step::Optimal;

            double theta = kInf;
            std::size_t leave = kNone;
            double leave_alpha = 0.0;
            if (std::isfinite(lo_[q]) && std::isfinite(up_[q])) theta = up_[q] - lo_[q];
            for (std::size_t i = 0; i < m_; ++i) {
                const double alpha = dir * t_[i * cols_ + q];
                const std::size_t bv = basis_[i];
                double limit;
                if (alpha > tol_) {
                    if (!std::isfinite(lo_[bv])) continue;
                    limit = std::max(0.0, (x_[bv] - lo_[bv]) / alpha);
                } else if (alpha < -tol_) {
                    if (!std::isfinite(up_[bv])) continue;
                    limit = std::max(0.0, (up_[bv] - x_[bv]) / -alpha);
                } else {
                    continue;
                }
                bool take = limit < theta - 1e-12;
                if (!take && leave != kNone && limit <= theta + 1e-12)
                    take = bland ? bv < basis_[leave] : std::abs(alpha) > std::abs(leave_alpha);
                if (take) {
                    theta = limit;
                    leave = i;
                    leave_alpha = alpha;
                }
            }
            if (!std::isfinite(theta)) return Step::Unbounded;

            ++iterations_;
            degenerate_run = theta <= tol_ ? degenerate_run + 1 : 0;

            if (theta != 0.0) {
                x_[q] += dir * theta;
                for (std::size_t i = 0; i < m_; ++i) {
                    const double a = t_[i * cols_ + q];
                    if (a != 0.0) x_[basis_[i]] -= dir * theta * a;
                }
            }
            if (leave == kNone) {
                x_[q] = dir > 0 ? up_[q] : lo_[q];
                continue;
            }
            const std::size_t out = basis_[leave];
            x_[out] = leave_alpha > 0 ? lo_[out] : up_[out];
            pivot(leave, q);

            if (++since_refresh >= 100) {
                since_refresh = 0;
                refresh_basic_values();
                compute_reduced_costs();
            }
        }
    }

    void drive_out_artificials() {
        for (std::size_t r = 0; r < m_; ++r) {
            if (basis_[r] < n_ + m_) continue;
            std::size_t q = kNone;
            double best = 1e-7;
            for (std::size_t j = 0; j < n_ + m_; ++j) {
                if (pos_[j] != kNone) continue;
                const double a = std::abs(t_[r * cols_ + j]);
                if (a > best) {
                    best = a;
                    q = j;
                }
            }
            if (q == kNone) continue; // redundant row: the artificial stays basic at zero
            d_.assign(cols_, 0.0);
            const std::size_t out = basis_[r];
            pivot(r, q);
            x_[out] = 0.0;
        }
    }

    std::size_t m_, n_;
    std::size_t cols_ = 0;
    std::size_t num_art_ = 0;
    double tol_;
    std::size_t bland_after_;
    std::size_t max_iterations_ = 0;
    std::size_t iterations_ = 0;
    std::vector<double> dense_a_, b_;
    std::vector<double> t_;
    std::vector<double> lo_, up_, x_, cost_, d_;
    std::vector<double> sigma_;
    std::vector<std::size_t> basis_, pos_;
};

} // namespace

LpSolution solve_lp(const LinearProgram& lp, std::span<const double> lower, std::span<const double> upper,
                    const LpOptions& options) {
    lp.validate();
    if (lower.size() != lp.num_vars() || upper.size() != lp.num_vars())
        throw std::invalid_argument("bound override has the wrong length");
    for (std::size_t j = 0; j < lp.num_vars(); ++j)
        if (lower[j] > upper[j]) return LpSolution{LpStatus::Infeasible, {}, 0.0, 0};
    Tableau tab(lp, lower, upper, options);
    const std::size_t limit =
        options.max_iterations ? options.max_iterations : 50 * (lp.num_vars() + 2 * lp.num_rows()) + 1000;
    return tab.run(lp, limit);
}

LpSolution solve_lp(const LinearProgram& lp, const LpOptions& options) {
    return solve_lp(lp, lp.lower, lp.upper, options);
}

struct WarmStartLp::Impl {
    const LinearProgram& lp;
    LpOptions options;
    std::optional<Tableau> tableau;
    std::size_t limit;
    std::size_t warm = 0;
    std::size_t cold = 0;
};

WarmStartLp::WarmStartLp(const LinearProgram& lp, const LpOptions& options)
    : impl_(std::make_unique<Impl>(Impl{lp, options, std::nullopt, 0})) {
    lp.validate();
    impl_->limit = options.max_iterations ? options.max_iterations : 50 * (lp.num_vars() + 2 * lp.num_rows()) + 1000;
}

WarmStartLp::~WarmStartLp() = default;

LpSolution WarmStartLp::solve(std::span<const double> lower, std::span<const double> upper) {
    auto& im = *impl_;
    if (lower.size() != im.lp.num_vars() || upper.size() != im.lp.num_vars())
        throw std::invalid_argument("bound override has the wrong length");
    for (std::size_t j = 0; j < im.lp.num_vars(); ++j)
        if (lower[j] > upper[j]) return LpSolution{LpStatus::Infeasible, {}, 0.0, 0};
    if (im.tableau) {
        auto sol = im.tableau->resolve(im.lp, lower, upper, im.limit);
        if (sol && sol->status != LpStatus::IterationLimit) {
            ++im.warm;
            if (sol->status != LpStatus::Optimal && sol->status != LpStatus::Infeasible) im.tableau.reset();
            return *sol;
        }
        im.tableau.reset();
    }
    ++im.cold;
    im.tableau.emplace(im.lp, lower, upper, im.options);
    auto sol = im.tableau->run(im.lp, im.limit);
    if (sol.status != LpStatus::Optimal) im.tableau.reset();
    return sol;
}

std::size_t WarmStartLp::warm_solves() const { return impl_->warm; }
std::size_t WarmStartLp::cold_solves() const { return impl_->cold; }

void write_lp_format(const LinearProgram& lp, std::span<const std::size_t> binaries, std::ostream& out) {
    lp.validate();
    auto name = [&](std::size_t j) { return lp.names.empty() ? "v" + std::to_string(j) : lp.names[j]; };
    auto term = [&](double coef, std::size_t j, bool first) {
        if (coef < 0) out << " - " << -coef << ' ' << name(j);
        else out << (first ? " " : " + ") << coef << ' ' << name(j);
    };
    out.precision(17);
    out << "Maximize\n obj:";
    bool first = true;
    for (std::size_t j = 0; j < lp.num_vars(); ++j) {
        if (lp.objective[j] == 0.0) continue;
        term(lp.objective[j], j, first);
        first = false;
    }
    if (first) out << " 0 " << name(0);
    out << "\nSubject To\n";
    std::vector<std::vector<std::pair<std::size_t, double>>> rows(lp.num_rows());
    for (const auto& e : lp.entries) rows[e.row].push_back({e.col, e.value});
    for (std::size_t i = 0; i < lp.num_rows(); ++i) {
        out << " r" << i << ":";
        bool f = true;
        for (const auto& [j, c] : rows[i]) {
            term(c, j, f);
            f = false;
        }
        if (f) out << " 0 " << name(0);
        switch (lp.senses[i]) {
        case RowSense::LessEqual: out << " <= "; break;
        case RowSense::GreaterEqual: out << " >= "; break;
        case RowSense::Equal: out << " = "; break;
        }
        out << lp.rhs[i] << '\n';
    }
    out << "Bounds\n";
    for (std::size_t j = 0; j < lp.num_vars(); ++j) {
        const double lo = lp.lower[j], hi = lp.upper[j];
        if (lo == -kInf && hi == kInf) {
            out << ' ' << name(j) << " free\n";
            continue;
        }
        out << ' ';
        if (lo == -kInf) out << "-inf";
        else out << lo;
        out << " <= " << name(j) << " <= ";
        if (hi == kInf) out << "+inf";
        else out << hi;
        out << '\n';
    }
    if (!binaries.empty()) {
        out << "Binary\n";
        for (std::size_t j : binaries) out << ' ' << name(j) << '\n';
    }
    out << "End\n";
}

} // namespace market
