#include "market/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>
#include <stdexcept>

namespace market {

std::string format_number(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    if (value == 0.0) return "0";
    char buf[64];
    // Shortest round-trip representation.
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
    if (header_.empty()) throw std::invalid_argument("CSV header is empty");
}

void CsvTable::add(std::vector<std::string> row) {
    if (row.size() != header_.size())
        throw std::invalid_argument("CSV row has " + std::to_string(row.size()) + " fields, header has " +
                                    std::to_string(header_.size()));
    rows_.push_back(std::move(row));
}

namespace {

void put_field(std::string& out, const std::string& f) {
    if (f.find_first_of(",\"\n\r") == std::string::npos) {
        out += f;
        return;
    }
    out += '"';
    for (char c : f) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
}

void put_row(std::string& out, const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) out += ',';
        put_field(out, row[i]);
    }
    out += '\n';
}

// One record, honoring quotes. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    if (in.peek() == std::char_traits<char>::eof()) return false;
    std::string cur;
    bool quoted = false;
    for (int ch; (ch = in.get()) != std::char_traits<char>::eof();) {
        const char c = static_cast<char>(ch);
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    cur += '"';
                    in.get();
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c == '\n') {
            break;
        } else if (c != '\r') {
            cur += c;
        }
    }
    if (quoted) throw std::runtime_error("unterminated quoted CSV field");
    fields.push_back(std::move(cur));
    return true;
}

} // namespace

std::string CsvTable::str() const {
    std::string out;
    put_row(out, header_);
    for (const auto& r : rows_) put_row(out, r);
    return out;
}

CsvTable CsvTable::parse(std::istream& in) {
    std::vector<std::string> fields;
    if (!read_record(in, fields)) throw std::runtime_error("CSV input is empty");
    CsvTable t(fields);
    std::size_t line = 1;
    while (read_record(in, fields)) {
        ++line;
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() != t.header_.size())
            throw std::runtime_error("CSV line " + std::to_string(line) + " has " + std::to_string(fields.size()) +
                                     " fields, expected " + std::to_string(t.header_.size()));
        t.rows_.push_back(fields);
    }
    return t;
}

nlohmann::json grid_to_json(const MetricGrid& grid) {
    return {{"values", std::vector<double>(grid.values().begin(), grid.values().end())},
            {"resolution", grid.resolution()}};
}

MetricGrid grid_from_json(const nlohmann::json& j) {
    if (j.contains("values"))
        return MetricGrid(j.at("values").get<std::vector<double>>(), j.at("resolution").get<double>());
    return MetricGrid::uniform(j.at("lo").get<double>(), j.at("hi").get<double>(), j.at("resolution").get<double>());
}

nlohmann::json chain_to_json(const MarkovChain& chain) {
    nlohmann::json trans = nlohmann::json::array();
    for (const auto& m : chain.transitions()) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t r = 0; r < m.size(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
        trans.push_back(std::move(rows));
    }
    return {{"grid", grid_to_json(chain.grid())},
            {"initial", std::vector<double>(chain.initial().begin(), chain.initial().end())},
            {"transitions", std::move(trans)}};
}

MarkovChain chain_from_json(const nlohmann::json& j) {
    auto grid = grid_from_json(j.at("grid"));
    const auto initial = j.at("initial").get<std::vector<double>>();
    std::vector<SquareMatrix> trans;
    for (const auto& rows : j.at("transitions")) {
        const auto r = rows.get<std::vector<std::vector<double>>>();
        SquareMatrix m(r.size());
        for (std::size_t a = 0; a < r.size(); ++a) {
            if (r[a].size() != r.size()) throw std::invalid_argument("transition matrix is not square");
            for (std::size_t b = 0; b < r.size(); ++b) m(a, b) = r[a][b];
        }
        trans.push_back(std::move(m));
    }
    return MarkovChain(std::move(grid), initial, std::move(trans));
}

nlohmann::json population_to_json(const Population& population) {
    nlohmann::json types = nlohmann::json::array();
    for (const auto& t : population.types) types.push_back({{"id", t.id}, {"values", t.values}});
    return {{"types", std::move(types)}, {"prior", population.prior}};
}

Population population_from_json(const nlohmann::json& j) {
    Population p;
    for (const auto& t : j.at("types")) p.types.push_back({t.value("id", ""), t.at("values").get<std::vector<double>>()});
    p.prior = j.at("prior").get<std::vector<double>>();
    return p;
}

CsvTable trajectories_to_csv(std::span<const Trajectory> trajectories, const MetricGrid& grid) {
    std::size_t width = 0;
    for (const auto& t : trajectories) width = std::max(width, t.metrics.size());
    std::vector<std::string> header;
    for (std::size_t k = 1; k <= std::max<std::size_t>(width, 1); ++k) header.push_back("q_" + std::to_string(k));
    CsvTable t(header);
    for (const auto& tr : trajectories) {
        std::vector<std::string> row(header.size());
        for (std::size_t k = 0; k < tr.metrics.size(); ++k) row[k] = format_number(grid.value(tr.metrics[k]));
        t.add(std::move(row));
    }
    return t;
}

std::vector<Trajectory> trajectories_from_csv(const CsvTable& table, const MetricGrid& grid) {
    const auto& h = table.header();
    for (std::size_t k = 0; k < h.size(); ++k)
        if (h[k] != "q_" + std::to_string(k + 1))
            throw std::runtime_error("trajectory CSV column " + std::to_string(k + 1) + " is '" + h[k] +
                                     "', expected 'q_" + std::to_string(k + 1) + "'");
    std::vector<Trajectory> out;
    for (std::size_t r = 0; r < table.rows(); ++r) {
        const auto& row = table.row(r);
        const std::string where = "trajectory CSV row " + std::to_string(r + 2);
        Trajectory t;
        bool ended = false;
        for (const auto& cell : row) {
            if (cell.empty()) {
                ended = true;
                continue;
            }
            if (ended) throw std::runtime_error(where + " has a gap before its last metric");
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                throw std::runtime_error(where + ": bad metric '" + cell + "'");
            const std::size_t q = quantize(v, grid);
            if (std::abs(grid.value(q) - v) > 1e-9 * (1.0 + std::abs(v)))
                throw std::runtime_error(where + ": metric " + cell + " is off the grid");
            t.metrics.push_back(q);
        }
        if (t.metrics.empty()) throw std::runtime_error(where + " is empty");
        out.push_back(std::move(t));
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << content;
    if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

} // namespace market
