#pragma once

// Text and JSON renderings of stability reports and simulation aggregates.

#include "wncs/markov.hpp"
#include "wncs/simulator.hpp"
#include "wncs/stability.hpp"
#include "wncs/validation.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace wncs::report {

using json = nlohmann::ordered_json;

/// Run context shown next to the numbers: values the caller chose that the
/// numbers depend on.
struct Context {
    std::string source;                 // config path or "raw-chain"
    std::optional<double> gamma_bar;
    std::optional<std::string> l0_policy;
};

inline constexpr Eigen::Index kPrintMatrixLimit = 8;  // S0 size up to which matrices are printed

inline json matrix_json(const markov::Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string matrix_text(const markov::Matrix& m, int indent = 2) {
    std::string out;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        out += std::string(static_cast<std::size_t>(indent), ' ');
        for (Eigen::Index j = 0; j < m.cols(); ++j) out += fmt::format("{}{:.4f}", j ? " " : "", m(i, j));
        out += '\n';
    }
    return out;
}

inline json context_json(const Context& ctx) {
    json j;
    j["source"] = ctx.source;
    j["gamma_bar"] = ctx.gamma_bar ? json(*ctx.gamma_bar) : json(nullptr);
    j["l0_policy"] = ctx.l0_policy ? json(*ctx.l0_policy) : json(nullptr);
    return j;
}

/// Numeric part of a report; identical for identical chains regardless of
/// where the chain came from.
inline json results_json(const stability::StabilityReport& r) {
    json j;
    j["omega"] = r.omega;
    j["omega_prime"] = r.omega_prime;
    j["lambda_max_U"] = r.lambda_max_u;
    j["max_r"] = r.max_r;
    j["rho"] = r.rho;
    j["alpha"] = r.alpha;
    j["f_weighting"] = stability::to_string(r.weighting);
    j["omega_other_weighting"] = r.omega_alt;
    j["lambda_max_U_other_weighting"] = r.lambda_max_u_alt;
    j["verdict_loose"] = r.verdict_loose;
    j["verdict_tight"] = r.verdict_tight;
    j["verdict_robust"] = r.verdict_robust;
    j["counts"] = {{"total", r.counts.total},
                   {"transient", r.counts.transient},
                   {"recurrent", r.counts.recurrent},
                   {"s0", r.counts.s0}};
    j["ia_check"] = {{"irreducible", r.ia_check.irreducible}, {"period", r.ia_check.period}};
    j["s0_labels"] = r.s0_labels;
    j["v_tilde"] = matrix_json(r.analysis.v_tilde.entries());
    j["pi"] = std::vector<double>(r.analysis.pi.weights().data(),
                                  r.analysis.pi.weights().data() + r.analysis.pi.weights().size());
    j["r"] = matrix_json(r.analysis.r);
    if (r.analysis.r.rows() <= kPrintMatrixLimit) {
        j["f"] = matrix_json(r.analysis.f);
        j["u"] = matrix_json(r.analysis.u);
    }
    return j;
}

inline json to_json(const stability::StabilityReport& r, const Context& ctx) {
    json j;
    j["context"] = context_json(ctx);
    j["results"] = results_json(r);
    return j;
}

inline std::string to_text(const stability::StabilityReport& r, const Context& ctx) {
    std::string out;
    out += "stability report\n";
    out += fmt::format("source = {}\n", ctx.source);
    out += fmt::format("gamma_bar = {}\n", ctx.gamma_bar ? fmt::format("{}", *ctx.gamma_bar) : "n/a");
    out += fmt::format("l0_policy = {}\n", ctx.l0_policy ? *ctx.l0_policy : "n/a");
    out += fmt::format("f_weighting = {}\n", stability::to_string(r.weighting));
    out += fmt::format("rho = {}\nalpha = {}\n", r.rho, r.alpha);
    out += fmt::format("counts.total = {}\ncounts.transient = {}\ncounts.recurrent = {}\ncounts.s0 = {}\n",
                       r.counts.total, r.counts.transient, r.counts.recurrent, r.counts.s0);
    out += fmt::format("return_chain.irreducible = {}\nreturn_chain.period = {}\n", r.ia_check.irreducible,
                       r.ia_check.period);
    out += fmt::format("max_r = {:.10g}\n", r.max_r);
    out += fmt::format("lambda_max_U = {:.10g}\n", r.lambda_max_u);
    out += fmt::format("omega_prime = {:.10g}\n", r.omega_prime);
    out += fmt::format("omega = {:.10g}\n", r.omega);
    out += fmt::format("omega_other_weighting = {:.10g}\n", r.omega_alt);
    out += fmt::format("verdict_loose = {}\n", r.verdict_loose ? "certified" : "not certified");
    out += fmt::format("verdict_tight = {}\n", r.verdict_tight ? "certified" : "not certified");
    out += fmt::format("verdict_robust = {}\n", r.verdict_robust ? "certified" : "not certified");
    if (r.analysis.r.rows() <= kPrintMatrixLimit) {
        out += "v_tilde =\n" + matrix_text(r.analysis.v_tilde.entries());
        out += "pi =\n" + matrix_text(r.analysis.pi.weights().transpose());
        out += "r =\n" + matrix_text(r.analysis.r);
        out += "u =\n" + matrix_text(r.analysis.u);
    }
    return out;
}

// =============================================================================
// Simulation aggregates
// =============================================================================

inline json monte_carlo_json(const sim::MonteCarloReport& m) {
    json j;
    j["seeds"] = m.runs.size();
    j["failed"] = m.failed;
    j["mean_norm_window"] = m.window_mean_norm;
    j["max_norm"] = m.max_norm;
    j["open_loop_fraction"] = m.open_loop_fraction;
    if (!m.mean_xi.empty()) {
        j["mean_xi"] = m.mean_xi;
        j["xi_decay_rate"] = m.xi_decay_rate;
    }
    json runs = json::array();
    for (const auto& r : m.runs) {
        json e;
        e["seed"] = r.seed;
        e["ok"] = r.ok;
        if (!r.ok) e["error"] = r.error;
        e["mean_norm_window"] = r.window_mean_norm;
        e["max_norm"] = r.max_norm;
        e["open_loop_fraction"] = r.open_loop_fraction;
        e["cycles"] = r.cycles;
        runs.push_back(std::move(e));
    }
    j["runs"] = std::move(runs);
    return j;
}

inline std::string monte_carlo_text(const std::string& prefix, const sim::MonteCarloReport& m) {
    std::string out;
    out += fmt::format("{}.seeds = {}\n", prefix, m.runs.size());
    out += fmt::format("{}.failed = {}\n", prefix, m.failed);
    out += fmt::format("{}.mean_norm_window = {:.10g}\n", prefix, m.window_mean_norm);
    out += fmt::format("{}.max_norm = {:.10g}\n", prefix, m.max_norm);
    out += fmt::format("{}.open_loop_fraction = {:.10g}\n", prefix, m.open_loop_fraction);
    if (!m.mean_xi.empty()) out += fmt::format("{}.xi_decay_rate = {:.10g}\n", prefix, m.xi_decay_rate);
    for (const auto& r : m.runs) {
        if (!r.ok) out += fmt::format("{}.seed_{}.error = {}\n", prefix, r.seed, r.error);
    }
    return out;
}

// =============================================================================
// Validation
// =============================================================================

inline std::string validation_text(const validation::ValidationReport& v) {
    std::string out = fmt::format("{:<20} {:<6} {}\n", "check", "result", "detail");
    for (const auto& c : v.checks) out += fmt::format("{:<20} {:<6} {}\n", c.name, c.pass ? "PASS" : "FAIL", c.detail);
    out += fmt::format("simulated {} cycles over {} steps\n", v.simulated_cycles, v.simulated_steps);
    return out;
}

inline json validation_json(const validation::ValidationReport& v) {
    json j;
    json checks = json::array();
    for (const auto& c : v.checks) checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    j["checks"] = std::move(checks);
    j["all_pass"] = v.all_pass();
    j["simulated_cycles"] = v.simulated_cycles;
    j["simulated_steps"] = v.simulated_steps;
    j["z_max_diff"] = v.z_max_diff;
    j["v_tilde_max_diff"] = v.v_tilde_max_diff;
    j["counts"] = {{"total", v.counts.total},
                   {"transient", v.counts.transient},
                   {"recurrent", v.counts.recurrent},
                   {"s0", v.counts.s0}};
    return j;
}

}  // namespace wncs::report
