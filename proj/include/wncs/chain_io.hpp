#pragma once

// Labeled transition matrices as CSV: a header row "state,<label>,..." and
// one row per source state, "<label>,<p>,...", probabilities written with 17
// significant digits so that reading back reproduces the matrix exactly.

#include "wncs/error.hpp"
#include "wncs/markov.hpp"

#include <fmt/format.h>

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace wncs::io {

inline void write_chain_csv(std::ostream& os, const markov::StochasticMatrix& m) {
    os << "state";
    for (const auto& l : m.labels()) os << ',' << l;
    os << '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        os << m.labels()[i];
        for (std::size_t j = 0; j < m.size(); ++j) os << fmt::format(",{:.17g}", m(i, j));
        os << '\n';
    }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
        throw config_error(where + ": '" + s + "' is not a number");
    }
    return v;
}

/// Parses the format written by write_chain_csv. Row validation errors are
/// reported as ConfigError with the row index.
inline markov::StochasticMatrix read_chain_csv(std::istream& is, const std::string& source = "chain") {
    std::string line;
    if (!std::getline(is, line)) throw config_error(source + ": empty chain file");
    auto header = split_csv_line(line);
    if (header.size() < 2 || header[0] != "state") throw config_error(source + ": header must start with 'state'");
    std::vector<std::string> labels(header.begin() + 1, header.end());
    const auto n = static_cast<Eigen::Index>(labels.size());
    markov::Matrix m(n, n);
    Eigen::Index row = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        if (row >= n) throw config_error(fmt::format("{}: more than {} data rows", source, n));
        auto cells = split_csv_line(line);
        if (static_cast<Eigen::Index>(cells.size()) != n + 1) {
            throw config_error(fmt::format("{}: row index {} has {} entries, expected {}", source, row,
                                           cells.size() - 1, n));
        }
        if (cells[0] != labels[static_cast<std::size_t>(row)]) {
            throw config_error(fmt::format("{}: row index {} is labeled '{}', header says '{}'", source, row,
                                           cells[0], labels[static_cast<std::size_t>(row)]));
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            m(row, j) = parse_double(cells[static_cast<std::size_t>(j + 1)], fmt::format("{}: row index {}", source, row));
        }
        ++row;
    }
    if (row != n) throw config_error(fmt::format("{}: {} data rows, expected {}", source, row, n));
    try {
        return markov::StochasticMatrix(std::move(m), std::move(labels));
    } catch (const RowSumDeviation& e) {
        throw config_error(fmt::format("{}: row index {} sums to {:.12g}", source, e.row(), e.sum()));
    } catch (const Error& e) {
        throw config_error(source + ": " + e.what());
    }
}

inline markov::StochasticMatrix read_chain_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open chain file '" + path + "'");
    return read_chain_csv(in, path);
}

}  // namespace wncs::io
