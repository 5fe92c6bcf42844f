#pragma once

// =============================================================================
// Command-line front end
// =============================================================================
// wncs --config <file> [--quiet] [--json] [--l0-policy P] analyze  [--report P] [--dump-chain P] [--gamma-bar-sweep a,b,...]
// wncs --config <file> [--quiet] [--json] simulate [--trace P] [--baseline] [--seeds N]
// wncs --config <file> [--quiet] [--json] validate
//
// Exit status: 0 success, 1 validation failure, 2 configuration error,
// 3 analysis error.
// =============================================================================

#include "wncs/chain_io.hpp"
#include "wncs/config.hpp"
#include "wncs/error.hpp"
#include "wncs/model.hpp"
#include "wncs/report.hpp"
#include "wncs/simulator.hpp"
#include "wncs/stability.hpp"
#include "wncs/validation.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace wncs::cli {

enum ExitCode : int { kOk = 0, kValidationFailed = 1, kConfigError = 2, kAnalysisError = 3 };

namespace detail {

struct Globals {
    std::string config;
    std::string l0_policy;  // empty: keep the config's value
    bool quiet = false;
    bool json = false;
};

struct Console {
    std::ostream& out;
    std::ostream& err;
    bool quiet;
    void print(const std::string& s) const {
        if (!quiet) out << s;
    }
};

/// "dir/name.ext" -> "dir/name<suffix>.ext".
inline std::string with_suffix(const std::string& path, const std::string& suffix) {
    std::filesystem::path p(path);
    auto stem = p.stem().string() + suffix;
    return (p.parent_path() / (stem + p.extension().string())).string();
}

inline std::ofstream open_output(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot write '" + path + "'");
    return f;
}

inline std::vector<double> parse_sweep(const std::string& list) {
    std::vector<double> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = config::detail::trim(item);
        if (!item.empty()) out.push_back(io::parse_double(item, "--gamma-bar-sweep"));
    }
    if (out.empty()) throw config_error("--gamma-bar-sweep needs at least one value");
    return out;
}

/// Runs `jobs` independent tasks on a small pool; the first failure (in job
/// order) is rethrown after all tasks finish.
template <class F>
void parallel_for(std::size_t jobs, F&& body) {
    std::vector<std::exception_ptr> errors(jobs);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs; i = next++) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned n = std::min<unsigned>(sim::resolve_threads(0), static_cast<unsigned>(std::max<std::size_t>(jobs, 1)));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// =============================================================================
// analyze
// =============================================================================

struct AnalyzeArgs {
    std::string report;
    std::string dump_chain;
    std::string sweep;
};

inline int analyze(const config::AppConfig& cfg, const AnalyzeArgs& args, const Globals& g, const Console& con) {
    const auto& margins = cfg.require_margins();
    std::vector<std::optional<double>> gammas;
    if (!args.sweep.empty()) {
        if (cfg.raw_chain) throw config_error("--gamma-bar-sweep needs a protocol chain, not [raw-chain]");
        cfg.require_network();
        for (double v : parse_sweep(args.sweep)) gammas.emplace_back(v);
    } else {
        gammas.emplace_back(std::nullopt);
    }
    if (!cfg.raw_chain) cfg.require_network();

    struct Result {
        report::Context ctx;
        stability::StabilityReport rep;
        std::optional<markov::StochasticMatrix> chain;
    };
    std::vector<Result> results(gammas.size());
    parallel_for(gammas.size(), [&](std::size_t i) {
        Result& r = results[i];
        r.ctx.source = cfg.source.string();
        markov::StochasticMatrix z;
        markov::IndexSet s0;
        if (cfg.raw_chain) {
            z = cfg.raw_chain->chain;
            s0 = cfg.raw_chain->s0;
        } else {
            model::NetworkConfig net = *cfg.network;
            if (gammas[i]) net.ca_drop = *gammas[i];
            try {
                net.validate(true);
            } catch (const Error& e) {
                throw config_error(e.what());
            }
            r.ctx.gamma_bar = net.ca_drop;
            r.ctx.l0_policy = model::to_string(net.l0_policy);
            z = model::build_z_chain(net);
            s0 = model::split_s0(model::enumerate_z(net)).s0;
        }
        r.rep = stability::certify(z, s0, margins, cfg.weighting);
        if (!args.dump_chain.empty()) r.chain = std::move(z);
    });

    const bool sweep = gammas.size() > 1 || gammas.front().has_value();
    report::json all = report::json::array();
    for (const auto& r : results) {
        const std::string suffix = sweep && r.ctx.gamma_bar ? fmt::format("_g{}", *r.ctx.gamma_bar) : "";
        const auto j = report::to_json(r.rep, r.ctx);
        const auto text = report::to_text(r.rep, r.ctx);
        if (g.json) {
            all.push_back(j);
        } else {
            con.print(text);
            if (results.size() > 1) con.print("\n");
        }
        if (!args.report.empty()) {
            const std::string path = with_suffix(args.report, suffix);
            if (std::filesystem::path(path).extension() == ".json") {
                open_output(path) << j.dump(2) << '\n';
            } else {
                open_output(path) << text;
                open_output(std::filesystem::path(path).replace_extension(".json").string()) << j.dump(2) << '\n';
            }
        }
        if (r.chain) {
            auto f = open_output(with_suffix(args.dump_chain, suffix));
            io::write_chain_csv(f, *r.chain);
        }
    }
    if (g.json) con.print((all.size() == 1 ? all.front() : all).dump(2) + "\n");
    return kOk;
}

// =============================================================================
// simulate
// =============================================================================

struct SimulateArgs {
    std::string trace;
    bool baseline = false;
    long seeds = -1;  // -1: take the count from the config
};

inline int simulate(const config::AppConfig& cfg, const SimulateArgs& args, const Globals& g, const Console& con) {
    sim::SimConfig sc = cfg.sim_config();
    std::size_t count = cfg.run.seeds;
    if (args.seeds != -1) {
        if (args.seeds < 1) throw config_error("--seeds must be >= 1");
        count = static_cast<std::size_t>(args.seeds);
    }
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < count; ++k) seeds.push_back(cfg.run.seed + k);

    std::vector<sim::Mode> modes;
    if (args.baseline || cfg.run.mode == config::RunMode::both) {
        modes = {sim::Mode::dual_buffer, sim::Mode::baseline};
    } else {
        modes = {cfg.run.mode == config::RunMode::baseline ? sim::Mode::baseline : sim::Mode::dual_buffer};
    }

    sim::MonteCarloOptions mo;
    mo.sim.max_records = 0;
    std::vector<sim::MonteCarloReport> reports;
    for (auto m : modes) {
        sc.mode = m;
        reports.push_back(sim::monte_carlo(sc, seeds, mo));
        if (!args.trace.empty()) {
            for (auto seed : seeds) {
                std::string path = args.trace;
                if (m == sim::Mode::baseline) path = with_suffix(path, "_baseline");
                if (seeds.size() > 1) path = with_suffix(path, fmt::format("_s{}", seed));
                auto f = open_output(path);
                sim::SimConfig one = sc;
                one.seed = seed;
                sim::SimOptions so;
                so.max_records = 0;
                so.stream = &f;
                sim::run(one, so);
            }
        }
    }

    std::size_t failed = 0;
    for (const auto& r : reports) failed += r.failed;
    if (g.json) {
        report::json j;
        for (std::size_t i = 0; i < modes.size(); ++i) j[sim::to_string(modes[i])] = report::monte_carlo_json(reports[i]);
        if (modes.size() == 2) j["dual_below_baseline"] = reports[0].window_mean_norm < reports[1].window_mean_norm;
        con.print(j.dump(2) + "\n");
    } else {
        std::string text;
        for (std::size_t i = 0; i < modes.size(); ++i) text += report::monte_carlo_text(sim::to_string(modes[i]), reports[i]);
        if (modes.size() == 2) {
            text += fmt::format("comparison.dual_below_baseline = {}\n",
                                reports[0].window_mean_norm < reports[1].window_mean_norm);
        }
        con.print(text);
    }
    if (failed > 0) {
        con.err << fmt::format("{} seed run(s) failed\n", failed);
        return kAnalysisError;
    }
    return kOk;
}

// =============================================================================
// validate
// =============================================================================

inline int validate(const config::AppConfig& cfg, const Globals& g, const Console& con) {
    const auto& net = cfg.require_network();
    validation::ValidationOptions opts;
    opts.cycles = cfg.validate.cycles;
    opts.seed = cfg.validate.seed;
    std::optional<markov::StochasticMatrix> analytic;
    if (cfg.raw_chain) analytic = cfg.raw_chain->chain;
    const auto rep = validation::cross_validate(net, opts, analytic);
    con.print(g.json ? report::validation_json(rep).dump(2) + "\n" : report::validation_text(rep));
    return rep.all_pass() ? kOk : kValidationFailed;
}

}  // namespace detail

/// Entry point; returns the process exit status.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Stability certificates and protocol simulation for dual-buffer wireless control loops", "wncs"};
    app.fallthrough();
    app.require_subcommand(1);
    detail::Globals g;
    app.add_option("--config", g.config, "Configuration file")->required();
    app.add_flag("--quiet", g.quiet, "Suppress standard output");
    app.add_flag("--json", g.json, "Machine-readable output");
    app.add_option("--l0-policy", g.l0_policy, "Override [network] l0_policy (literal or forced-drop)");

    detail::AnalyzeArgs aa;
    auto* analyze = app.add_subcommand("analyze", "Build the chain and compute the stability certificates");
    analyze->add_option("--report", aa.report, "Write the report (text, plus a .json twin)");
    analyze->add_option("--dump-chain", aa.dump_chain, "Write the aggregated chain as CSV");
    analyze->add_option("--gamma-bar-sweep", aa.sweep, "Comma-separated C-A drop probabilities");

    detail::SimulateArgs sa;
    auto* simulate = app.add_subcommand("simulate", "Monte-Carlo simulation of the closed loop");
    simulate->add_option("--trace", sa.trace, "Write per-step CSV traces");
    simulate->add_flag("--baseline", sa.baseline, "Also run the single-buffer baseline");
    simulate->add_option("--seeds", sa.seeds, "Number of seeds");

    auto* validate = app.add_subcommand("validate", "Cross-check the analysis against simulation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kOk : kConfigError;
    }

    const detail::Console con{out, err, g.quiet};
    try {
        auto cfg = config::load_config(g.config);
        if (!g.l0_policy.empty()) {
            const auto policy = model::parse_l0_policy(g.l0_policy);
            if (!cfg.network) throw config_error("--l0-policy needs a [network] section");
            cfg.network->l0_policy = policy;
        }
        if (analyze->parsed()) return detail::analyze(cfg, aa, g, con);
        if (simulate->parsed()) return detail::simulate(cfg, sa, g, con);
        if (validate->parsed()) return detail::validate(cfg, g, con);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.code() == Errc::config_error ? kConfigError : kAnalysisError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kAnalysisError;
    }
    return kConfigError;
}

}  // namespace wncs::cli
