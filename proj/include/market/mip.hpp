#pragma once

#include "market/lp.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace market {

/// LP plus binary variables and SOS1 groups. Each group's members must also
/// appear in `binaries` and their sum-to-one row must be part of the LP.
struct MipModel {
    LinearProgram lp;
    std::vector<std::size_t> binaries;
    std::vector<std::vector<std::size_t>> sos1;

    void validate() const;
};

enum class MipStatus { Optimal, Feasible, Infeasible, Unbounded };

const char* to_string(MipStatus status);

struct MipConfig {
    /// Absolute gap (bound - incumbent) at which a solve is declared optimal.
    double gap_tol = 1e-9;
    std::size_t node_limit = 1'000'000;
    double time_budget_seconds = 30.0;
    double integrality_tol = 1e-7;
    std::optional<std::vector<double>> warm_start;
    /// Dense tableaus above this many entries are not attempted; the warm
    /// start is returned instead (status Feasible).
    std::size_t max_dense_entries = 40'000'000;
    LpOptions lp;
};

struct MipSolution {
    MipStatus status = MipStatus::Infeasible;
    std::vector<double> values;
    double objective = 0.0;
    double best_bound = 0.0;
    double gap = 0.0;
    std::size_t nodes = 0;
    std::size_t lp_iterations = 0;
    bool hit_limit = false;
};

/// Best-first branch and bound with depth-first plunging. Throws
/// std::invalid_argument for an infeasible warm start and std::runtime_error
/// when the budget runs out with no incumbent.
MipSolution solve_mip(const MipModel& model, const MipConfig& config = {});

/// Hands the model to an external solver through files. `command` may use
/// {model} and {solution} placeholders; the solution file is read as lines of
/// "<variable name> <value>" (other lines are ignored). Throws
/// std::runtime_error when the command fails or the output is unusable.
MipSolution solve_mip_external(const MipModel& model, const std::string& command, const std::string& work_dir);

} // namespace market
