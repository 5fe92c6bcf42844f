#pragma once

// =============================================================================
// Configuration files
// =============================================================================
// Sectioned key = value text. Matrices are written as "RxC" followed by R
// indented lines of C numbers each. '#' starts a comment.
//
//   [network]
//   ca_max = 1
//   joint_channel = 2x2
//     0.9 0.1
//     0.2 0.8
// =============================================================================

#include "wncs/chain_io.hpp"
#include "wncs/error.hpp"
#include "wncs/model.hpp"
#include "wncs/plant.hpp"
#include "wncs/simulator.hpp"
#include "wncs/stability.hpp"

#include <fmt/format.h>

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace wncs::config {

struct RawChain {
    markov::StochasticMatrix chain;
    markov::IndexSet s0;
};

struct PlantSection {
    std::string name;
    std::vector<double> params;
    plant::NoiseSpec noise;
    plant::Vector x0;
};

enum class RunMode { dual, baseline, both };

struct RunSection {
    long horizon = 800;
    std::uint64_t seed = 1;
    std::size_t seeds = 1;
    RunMode mode = RunMode::dual;
    long window_start = 100;
};

struct ValidateSection {
    std::size_t cycles = 100000;
    std::uint64_t seed = 7;
};

struct AppConfig {
    std::filesystem::path source;
    std::optional<model::NetworkConfig> network;
    std::optional<stability::PlantMargins> margins;
    stability::FWeighting weighting = stability::FWeighting::joint_stationary;
    std::optional<PlantSection> plant;
    RunSection run;
    ValidateSection validate;
    std::optional<RawChain> raw_chain;

    const model::NetworkConfig& require_network() const {
        if (!network) throw config_error("a [network] section is required");
        return *network;
    }
    const stability::PlantMargins& require_margins() const {
        if (!margins) throw config_error("a [margins] section with rho and alpha is required");
        return *margins;
    }

    sim::SimConfig sim_config(const plant::Registry& registry = {}) const {
        if (!plant) throw config_error("a [plant] section is required");
        sim::SimConfig c;
        c.network = require_network();
        c.plant = registry.make(plant->name, plant->params);
        c.noise = plant->noise;
        c.margins = margins;
        c.horizon = run.horizon;
        c.seed = run.seed;
        c.x0 = plant->x0;
        c.window_start = run.window_start;
        c.validate();
        return c;
    }
};

namespace detail {

struct Entry {
    std::string value;
    std::vector<std::string> rows;  // indented continuation lines
    int line = 0;
};

using Section = std::map<std::string, Entry>;

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
}

class Reader {
public:
    Reader(const std::map<std::string, Section>& sections) : sections_(sections) {}

    bool has(const std::string& section) const { return sections_.count(section) > 0; }

    const Entry* find(const std::string& section, const std::string& key) const {
        auto s = sections_.find(section);
        if (s == sections_.end()) return nullptr;
        auto e = s->second.find(key);
        return e == s->second.end() ? nullptr : &e->second;
    }

    const Entry& get(const std::string& section, const std::string& key) const {
        const Entry* e = find(section, key);
        if (!e) throw config_error(fmt::format("[{}] is missing '{}'", section, key));
        return *e;
    }

    static std::string where(const std::string& section, const std::string& key, const Entry& e) {
        return fmt::format("line {}: [{}] {}", e.line, section, key);
    }

    double real(const std::string& section, const std::string& key) const {
        const Entry& e = get(section, key);
        return io::parse_double(e.value, where(section, key, e));
    }

    long integer(const std::string& section, const std::string& key) const {
        const Entry& e = get(section, key);
        return parse_long(e.value, where(section, key, e));
    }

    static long parse_long(const std::string& s, const std::string& where) {
        errno = 0;
        char* end = nullptr;
        const long v = std::strtol(s.c_str(), &end, 10);
        if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
            throw config_error(where + ": '" + s + "' is not an integer");
        }
        return v;
    }

    std::vector<double> reals(const std::string& section, const std::string& key) const {
        const Entry& e = get(section, key);
        std::vector<double> out;
        for (const auto& w : words(e.value)) out.push_back(io::parse_double(w, where(section, key, e)));
        return out;
    }

    std::vector<long> integers(const std::string& section, const std::string& key) const {
        const Entry& e = get(section, key);
        std::vector<long> out;
        for (const auto& w : words(e.value)) out.push_back(parse_long(w, where(section, key, e)));
        return out;
    }

    markov::Matrix matrix(const std::string& section, const std::string& key) const {
        const Entry& e = get(section, key);
        const std::string at = where(section, key, e);
        long r = 0, c = 0;
        const auto x = e.value.find('x');
        if (x == std::string::npos) throw config_error(at + ": expected dimensions 'RxC'");
        r = parse_long(trim(e.value.substr(0, x)), at);
        c = parse_long(trim(e.value.substr(x + 1)), at);
        if (r < 0 || c < 0) throw config_error(at + ": negative dimension");
        if (static_cast<long>(e.rows.size()) != r) {
            throw config_error(fmt::format("{}: declared {} rows, found {}", at, r, e.rows.size()));
        }
        markov::Matrix m(r, c);
        for (long i = 0; i < r; ++i) {
            const auto cells = words(e.rows[static_cast<std::size_t>(i)]);
            if (static_cast<long>(cells.size()) != c) {
                throw config_error(fmt::format("{}: row index {} has {} entries, expected {}", at, i, cells.size(), c));
            }
            for (long j = 0; j < c; ++j) {
                m(i, j) = io::parse_double(cells[static_cast<std::size_t>(j)], fmt::format("{}: row index {}", at, i));
            }
        }
        return m;
    }

    markov::StochasticMatrix stochastic(const std::string& section, const std::string& key,
                                        std::vector<std::string> labels = {}) const {
        const Entry& e = get(section, key);
        try {
            return markov::StochasticMatrix(matrix(section, key), std::move(labels));
        } catch (const RowSumDeviation& err) {
            throw config_error(fmt::format("{}: row index {} sums to {:.12g}", where(section, key, e), err.row(),
                                           err.sum()));
        } catch (const Error& err) {
            if (err.code() == Errc::config_error) throw;
            throw config_error(where(section, key, e) + ": " + err.what());
        }
    }

private:
    const std::map<std::string, Section>& sections_;
};

inline const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"network",
         {"ca_max", "sc_levels", "joint_channel", "compute", "ca_drop", "sc_drop", "buf_controller", "buf_actuator",
          "initial", "l0_policy"}},
        {"margins", {"rho", "alpha"}},
        {"analysis", {"f_weighting"}},
        {"plant", {"name", "params", "noise", "variance", "x0"}},
        {"run", {"horizon", "seed", "seeds", "mode", "window_start"}},
        {"raw-chain", {"matrix", "file", "s0", "labels"}},
        {"validate", {"cycles", "seed"}},
    };
    return keys;
}

inline std::map<std::string, Section> tokenize(std::istream& in) {
    std::map<std::string, Section> sections;
    std::string section;
    Entry* last = nullptr;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const bool indented = std::isspace(static_cast<unsigned char>(line.front())) != 0;
        if (indented) {
            if (!last) throw config_error(fmt::format("line {}: continuation line without a key", lineno));
            last->rows.push_back(t);
            continue;
        }
        last = nullptr;
        if (t.front() == '[') {
            if (t.back() != ']') throw config_error(fmt::format("line {}: malformed section header", lineno));
            section = trim(t.substr(1, t.size() - 2));
            if (!known_keys().count(section)) {
                throw config_error(fmt::format("line {}: unknown section [{}]", lineno, section));
            }
            if (sections.count(section)) {
                throw config_error(fmt::format("line {}: duplicate section [{}]", lineno, section));
            }
            sections[section];
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw config_error(fmt::format("line {}: expected 'key = value'", lineno));
        if (section.empty()) throw config_error(fmt::format("line {}: key outside any section", lineno));
        const std::string key = trim(t.substr(0, eq));
        if (!known_keys().at(section).count(key)) {
            throw config_error(fmt::format("line {}: unknown key '{}' in [{}]", lineno, key, section));
        }
        auto& sec = sections[section];
        if (sec.count(key)) throw config_error(fmt::format("line {}: duplicate key '{}'", lineno, key));
        last = &sec[key];
        last->value = trim(t.substr(eq + 1));
        last->line = lineno;
    }
    return sections;
}

inline model::NetworkConfig parse_network(const Reader& r) {
    model::NetworkConfig n;
    n.ca_max = static_cast<int>(r.integer("network", "ca_max"));
    n.sc_levels = static_cast<int>(r.integer("network", "sc_levels"));
    n.joint_channel = r.stochastic("network", "joint_channel");
    n.compute = r.stochastic("network", "compute");
    n.ca_drop = r.real("network", "ca_drop");
    n.sc_drop = r.reals("network", "sc_drop");
    n.buf_controller = static_cast<int>(r.integer("network", "buf_controller"));
    n.buf_actuator = static_cast<int>(r.integer("network", "buf_actuator"));
    const auto init = r.integers("network", "initial");
    if (init.size() != 3) throw config_error("[network] initial needs three integers: B B' N");
    n.initial = {static_cast<int>(init[0]), static_cast<int>(init[1]), static_cast<int>(init[2])};
    if (r.find("network", "l0_policy")) n.l0_policy = model::parse_l0_policy(r.get("network", "l0_policy").value);
    n.validate(false);
    return n;
}

inline PlantSection parse_plant(const Reader& r) {
    PlantSection p;
    p.name = r.get("plant", "name").value;
    if (r.find("plant", "params")) p.params = r.reals("plant", "params");
    if (const auto* e = r.find("plant", "noise")) {
        if (e->value == "none") {
            p.noise.kind = plant::NoiseKind::none;
        } else if (e->value == "gaussian") {
            p.noise.kind = plant::NoiseKind::gaussian;
        } else {
            throw config_error(Reader::where("plant", "noise", *e) + ": expected none or gaussian");
        }
    }
    if (r.find("plant", "variance")) p.noise.variance = r.real("plant", "variance");
    p.noise.validate();
    const auto x0 = r.reals("plant", "x0");
    p.x0 = Eigen::Map<const plant::Vector>(x0.data(), static_cast<Eigen::Index>(x0.size()));
    return p;
}

inline RawChain parse_raw_chain(const Reader& r, const std::filesystem::path& base) {
    const bool has_matrix = r.find("raw-chain", "matrix") != nullptr;
    const bool has_file = r.find("raw-chain", "file") != nullptr;
    if (has_matrix == has_file) throw config_error("[raw-chain] needs exactly one of 'matrix' or 'file'");
    RawChain rc;
    if (has_file) {
        auto p = std::filesystem::path(r.get("raw-chain", "file").value);
        if (p.is_relative()) p = base / p;
        rc.chain = io::read_chain_csv_file(p.string());
        if (r.find("raw-chain", "labels")) throw config_error("[raw-chain] labels come from the chain file");
    } else {
        std::vector<std::string> labels;
        if (r.find("raw-chain", "labels")) labels = words(r.get("raw-chain", "labels").value);
        rc.chain = r.stochastic("raw-chain", "matrix", labels);
    }
    if (r.find("raw-chain", "s0")) {
        for (long i : r.integers("raw-chain", "s0")) {
            if (i < 0 || static_cast<std::size_t>(i) >= rc.chain.size()) {
                throw config_error(fmt::format("[raw-chain] s0 index {} out of range", i));
            }
            rc.s0.push_back(static_cast<std::size_t>(i));
        }
        std::sort(rc.s0.begin(), rc.s0.end());
        rc.s0.erase(std::unique(rc.s0.begin(), rc.s0.end()), rc.s0.end());
    } else {
        rc.s0 = model::split_s0(rc.chain).s0;
    }
    return rc;
}

}  // namespace detail

/// Parses a configuration document. Relative file references resolve
/// against `base_dir`. Every failure is a ConfigError.
inline AppConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = ".") {
    const auto sections = detail::tokenize(in);
    const detail::Reader r(sections);
    AppConfig cfg;
    try {
        if (r.has("network")) cfg.network = detail::parse_network(r);
        if (r.has("margins")) cfg.margins.emplace(r.real("margins", "rho"), r.real("margins", "alpha"));
        if (r.find("analysis", "f_weighting")) {
            cfg.weighting = stability::parse_f_weighting(r.get("analysis", "f_weighting").value);
        }
        if (r.has("plant")) cfg.plant = detail::parse_plant(r);
        if (r.has("run")) {
            if (r.find("run", "horizon")) cfg.run.horizon = r.integer("run", "horizon");
            if (r.find("run", "seed")) cfg.run.seed = static_cast<std::uint64_t>(r.integer("run", "seed"));
            if (r.find("run", "seeds")) {
                const long s = r.integer("run", "seeds");
                if (s < 1) throw config_error("[run] seeds must be >= 1");
                cfg.run.seeds = static_cast<std::size_t>(s);
            }
            if (const auto* e = r.find("run", "mode")) {
                if (e->value == "dual") cfg.run.mode = RunMode::dual;
                else if (e->value == "baseline") cfg.run.mode = RunMode::baseline;
                else if (e->value == "both") cfg.run.mode = RunMode::both;
                else throw config_error("[run] mode must be dual, baseline or both");
            }
            if (r.find("run", "window_start")) cfg.run.window_start = r.integer("run", "window_start");
            if (cfg.run.horizon < 1) throw config_error("[run] horizon must be >= 1");
        }
        if (r.has("raw-chain")) cfg.raw_chain = detail::parse_raw_chain(r, base_dir);
        if (r.has("validate")) {
            if (r.find("validate", "cycles")) {
                const long c = r.integer("validate", "cycles");
                if (c < 2) throw config_error("[validate] cycles must be >= 2");
                cfg.validate.cycles = static_cast<std::size_t>(c);
            }
            if (r.find("validate", "seed")) cfg.validate.seed = static_cast<std::uint64_t>(r.integer("validate", "seed"));
        }
    } catch (const Error& e) {
        if (e.code() == Errc::config_error) throw;
        throw config_error(e.what());
    }
    return cfg;
}

inline AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config '" + path.string() + "'");
    auto cfg = parse_config(in, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
    cfg.source = path;
    return cfg;
}

}  // namespace wncs::config
