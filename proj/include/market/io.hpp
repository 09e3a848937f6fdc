#pragma once

#include "market/buyer.hpp"
#include "market/markov_chain.hpp"
#include "market/metric_grid.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace market {

/// Shortest decimal that reads back to the same double ("%.17g" trimmed).
/// Used for every number written to CSV so that outputs are byte-stable.
std::string format_number(double value);

/// In-memory CSV with a fixed header. Fields containing a comma, quote or
/// newline are quoted on output.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header);

    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    const std::vector<std::string>& row(std::size_t i) const { return rows_.at(i); }

    /// Throws std::invalid_argument when the width differs from the header.
    void add(std::vector<std::string> row);
    std::string str() const;

    static CsvTable parse(std::istream& in);

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

nlohmann::json grid_to_json(const MetricGrid& grid);
MetricGrid grid_from_json(const nlohmann::json& j);

/// {"grid": ..., "initial": [...], "transitions": [[[...]]]}.
nlohmann::json chain_to_json(const MarkovChain& chain);
MarkovChain chain_from_json(const nlohmann::json& j);

/// {"types": [{"id": ..., "values": [...]}], "prior": [...]}.
nlohmann::json population_to_json(const Population& population);
Population population_from_json(const nlohmann::json& j);

/// One row per trajectory, columns q_1..q_T holding grid values. Shorter
/// trajectories leave trailing cells empty.
CsvTable trajectories_to_csv(std::span<const Trajectory> trajectories, const MetricGrid& grid);
/// Every value must sit on `grid`.
std::vector<Trajectory> trajectories_from_csv(const CsvTable& table, const MetricGrid& grid);

/// Whole-file helpers with messages naming the path.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);
nlohmann::json read_json_file(const std::filesystem::path& path);

std::string hex64(std::uint64_t value);

} // namespace market
