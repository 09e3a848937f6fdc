#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace market {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class RowSense { LessEqual, Equal, GreaterEqual };

struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
};

/// max c'x  s.t.  rows of A x (sense) b,  lower <= x <= upper.
/// The constraint matrix is kept in triplet form; duplicates are summed.
struct LinearProgram {
    std::vector<double> objective;
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<std::string> names;
    std::vector<Triplet> entries;
    std::vector<RowSense> senses;
    std::vector<double> rhs;

    std::size_t num_vars() const { return objective.size(); }
    std::size_t num_rows() const { return rhs.size(); }

    std::size_t add_variable(double obj, double lo, double hi, std::string name = {});
    std::size_t add_row(std::span<const std::pair<std::size_t, double>> coeffs, RowSense sense, double rhs);
    std::size_t add_row(std::initializer_list<std::pair<std::size_t, double>> coeffs, RowSense sense, double rhs);

    /// Throws std::invalid_argument on inconsistent dimensions, crossed bounds
    /// or non-finite data.
    void validate() const;

    /// Largest violation of any row or bound at x (0 when feasible).
    double max_violation(std::span<const double> x) const;
    double evaluate(std::span<const double> x) const;
};

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

const char* to_string(LpStatus status);

struct LpOptions {
    double tolerance = 1e-9;
    /// 0 picks a limit proportional to the model size.
    std::size_t max_iterations = 0;
    /// Consecutive degenerate pivots before switching to Bland's rule.
    std::size_t bland_after = 50;
};

struct LpSolution {
    LpStatus status = LpStatus::Infeasible;
    std::vector<double> x;
    double objective = 0.0;
    std::size_t iterations = 0;
};

/// Bounded-variable primal simplex on a dense tableau (two phases).
LpSolution solve_lp(const LinearProgram& lp, const LpOptions& options = {});

/// Same, with the variable bounds replaced by `lower`/`upper`.
LpSolution solve_lp(const LinearProgram& lp, std::span<const double> lower, std::span<const double> upper,
                    const LpOptions& options = {});

/// Repeated solves of one LP under changing variable bounds. After the first
/// optimal solve, later calls restart from the previous optimal basis with a
/// dual simplex and fall back to a fresh two-phase solve when that basis is
/// unusable.
class WarmStartLp {
public:
    explicit WarmStartLp(const LinearProgram& lp, const LpOptions& options = {});
    ~WarmStartLp();
    WarmStartLp(const WarmStartLp&) = delete;
    WarmStartLp& operator=(const WarmStartLp&) = delete;

    /// `lp` must outlive this object.
    LpSolution solve(std::span<const double> lower, std::span<const double> upper);
    std::size_t warm_solves() const;
    std::size_t cold_solves() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Writes the model in the common CPLEX-style LP text format.
void write_lp_format(const LinearProgram& lp, std::span<const std::size_t> binaries, std::ostream& out);

} // namespace market
