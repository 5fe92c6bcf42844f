#pragma once

// =============================================================================
// Analysis vs. simulation cross-checks
// =============================================================================
// The analytic Z-chain, return chain V~ and cycle-length law D(l)/V~ are
// compared with a long run of the protocol kernel (no plant). Empirical rows
// are compared entrywise within an absolute tolerance on rows whose visit
// count makes that tolerance at least four worst-case standard errors, and
// by a pooled chi-square goodness-of-fit test over every row with at least
// `min_gof_visits` visits.
// =============================================================================

#include "wncs/error.hpp"
#include "wncs/markov.hpp"
#include "wncs/model.hpp"
#include "wncs/simulator.hpp"
#include "wncs/stability.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wncs::validation {

using markov::IndexSet;
using markov::Matrix;
using model::ZState;

struct ValidationOptions {
    std::size_t cycles = 100000;
    std::uint64_t seed = 7;
    double tolerance = 0.02;         // absolute, per entry
    std::size_t min_row_visits = 0;  // 0: derived from tolerance as (4 * 0.5 / tolerance)^2
    std::size_t min_gof_visits = 1000;
    std::size_t min_pair_observations = 1000;
    double significance = 0.01;
    double min_expected = 5.0;       // chi-square bin merging threshold
};

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct ChiSquarePair {
    std::size_t from = 0;
    std::size_t to = 0;
    std::size_t observations = 0;
    std::size_t bins = 0;
    double statistic = 0.0;
    double critical = 0.0;
    double p_value = 1.0;
    bool pass = true;
};

/// Sum of per-row chi-square statistics, tested once against the pooled
/// degrees of freedom.
struct PooledGof {
    double statistic = 0.0;
    std::size_t df = 0;
    std::size_t rows = 0;
    std::size_t impossible = 0;  // observations on zero-probability entries
    double p_value = 1.0;
    bool pass = true;

    /// Adds one row: `probs` sums to one, `obs` are counts over the same
    /// columns. Adjacent columns are merged until each bin expects at least
    /// `min_expected`.
    void add_row(const std::vector<double>& probs, const std::vector<double>& obs, double min_expected) {
        double n = 0.0;
        for (double o : obs) n += o;
        if (n == 0.0) return;
        ++rows;
        std::vector<double> e_bins, o_bins;
        double e_acc = 0.0, o_acc = 0.0;
        for (std::size_t j = 0; j < probs.size(); ++j) {
            if (probs[j] <= 0.0 && obs[j] > 0.0) impossible += static_cast<std::size_t>(obs[j]);
            e_acc += n * probs[j];
            o_acc += obs[j];
            if (e_acc >= min_expected) {
                e_bins.push_back(e_acc);
                o_bins.push_back(o_acc);
                e_acc = o_acc = 0.0;
            }
        }
        if (e_bins.empty()) {
            e_bins.push_back(e_acc);
            o_bins.push_back(o_acc);
        } else {
            e_bins.back() += e_acc;
            o_bins.back() += o_acc;
        }
        for (std::size_t b = 0; b < e_bins.size(); ++b) {
            if (e_bins[b] > 0.0) statistic += (o_bins[b] - e_bins[b]) * (o_bins[b] - e_bins[b]) / e_bins[b];
        }
        df += e_bins.size() - 1;
    }

    void finish(double significance) {
        if (df > 0) {
            const boost::math::chi_squared dist(static_cast<double>(df));
            p_value = boost::math::cdf(boost::math::complement(dist, statistic));
        }
        pass = impossible == 0 && p_value >= significance;
    }
};

struct ValidationReport {
    std::vector<Check> checks;
    std::size_t simulated_cycles = 0;
    long simulated_steps = 0;
    std::size_t z_rows_compared = 0;
    double z_max_diff = 0.0;
    std::size_t v_tilde_rows_compared = 0;
    double v_tilde_max_diff = 0.0;
    std::size_t row_visit_threshold = 0;
    PooledGof z_gof;
    PooledGof v_tilde_gof;
    std::vector<ChiSquarePair> chi_square;
    stability::Counts counts;

    bool all_pass() const {
        return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
    }
};

/// Goodness of fit of observed cycle lengths against P(Delta = l) = probs[l-1]
/// (the remaining mass belongs to lengths beyond probs.size()). Adjacent
/// lengths are merged until every bin expects at least `min_expected`.
inline ChiSquarePair chi_square_lengths(const std::map<long, std::size_t>& observed, const std::vector<double>& probs,
                                        double significance, double min_expected) {
    ChiSquarePair out;
    for (const auto& [l, c] : observed) out.observations += c;
    const double n = static_cast<double>(out.observations);
    if (out.observations == 0) return out;

    // Bin upper bounds (inclusive); the final bin is open-ended.
    std::vector<long> upper;
    std::vector<double> expected;
    double acc = 0.0, used = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        const double rest = std::max(1.0 - used - acc, 0.0);
        if (n * acc >= min_expected && n * rest >= min_expected) {
            upper.push_back(static_cast<long>(i + 1));
            expected.push_back(n * acc);
            used += acc;
            acc = 0.0;
        }
    }
    upper.push_back(std::numeric_limits<long>::max());
    expected.push_back(n * std::max(1.0 - used, 0.0));

    std::vector<double> obs(expected.size(), 0.0);
    for (const auto& [l, c] : observed) {
        const auto bin = static_cast<std::size_t>(std::lower_bound(upper.begin(), upper.end(), l) - upper.begin());
        obs[bin] += static_cast<double>(c);
    }
    out.bins = expected.size();
    for (std::size_t b = 0; b < expected.size(); ++b) {
        if (expected[b] <= 0.0) {
            if (obs[b] > 0.0) out.statistic = std::numeric_limits<double>::infinity();
            continue;
        }
        out.statistic += (obs[b] - expected[b]) * (obs[b] - expected[b]) / expected[b];
    }
    if (out.bins < 2) {
        out.pass = out.statistic == 0.0;
        out.p_value = out.pass ? 1.0 : 0.0;
        return out;
    }
    const boost::math::chi_squared dist(static_cast<double>(out.bins - 1));
    out.critical = boost::math::quantile(dist, 1.0 - significance);
    out.p_value = std::isfinite(out.statistic) ? boost::math::cdf(boost::math::complement(dist, out.statistic)) : 0.0;
    out.pass = out.statistic <= out.critical;
    return out;
}

/// Runs every check. `analytic` replaces build_z_chain(net) as the analytic
/// side when given; its labels must name aggregated states.
inline ValidationReport cross_validate(const model::NetworkConfig& net, const ValidationOptions& opts = {},
                                       const std::optional<markov::StochasticMatrix>& analytic = std::nullopt) {
    ValidationReport rep;
    rep.row_visit_threshold = opts.min_row_visits
                                  ? opts.min_row_visits
                                  : static_cast<std::size_t>(std::ceil(std::pow(4.0 * 0.5 / opts.tolerance, 2)));
    const markov::StochasticMatrix z = analytic ? *analytic : model::build_z_chain(net);
    std::map<ZState, std::size_t> z_index;
    for (std::size_t i = 0; i < z.size(); ++i) {
        auto parsed = ZState::parse(z.labels()[i]);
        if (!parsed) throw config_error("state label '" + z.labels()[i] + "' is not an aggregated state");
        z_index.emplace(*parsed, i);
    }

    // Analytic side.
    const auto classes = markov::recurrent_states(z);
    rep.counts.total = z.size();
    rep.counts.transient = classes.transient.size();
    rep.counts.recurrent = classes.recurrent.size();
    const auto w = markov::restrict(z, classes.recurrent);
    const auto split = model::split_s0(w);
    rep.counts.s0 = split.s0.size();
    if (split.s0.empty()) throw Error(Errc::empty_partition, "no recurrent open-loop state");
    if (split.s1.empty()) throw Error(Errc::no_closed_loop_states, "every recurrent state is open-loop; S1 is empty");
    const auto blocks = stability::partition(w, split.s0);
    std::vector<std::string> s0_labels;
    std::vector<ZState> s0_states;
    for (auto k : split.s0) {
        s0_labels.push_back(w.labels()[k]);
        s0_states.push_back(*ZState::parse(w.labels()[k]));
    }
    const auto v_tilde = stability::return_chain(blocks, 0.5, s0_labels).v_tilde;

    {
        const auto ia = markov::is_irreducible_aperiodic(w);
        rep.checks.push_back({"chain_ia", classes.closed_classes == 1 && ia.aperiodic(),
                              fmt::format("closed classes {}, period {}", classes.closed_classes, ia.period)});
        const ZState init{0, 0, net.initial.b, net.initial.bp, net.initial.n};
        const auto it = z_index.find(init);
        const bool recurrent =
            it != z_index.end() && std::binary_search(classes.recurrent.begin(), classes.recurrent.end(), it->second);
        rep.checks.push_back({"initial_recurrent", recurrent, init.label()});
        const auto via = markov::is_irreducible_aperiodic(v_tilde);
        rep.checks.push_back({"return_chain_ia", via.aperiodic(),
                              fmt::format("irreducible {}, period {}", via.irreducible, via.period)});
    }

    // Simulated side.
    sim::SimConfig sc;
    sc.network = net;
    sc.horizon = std::numeric_limits<long>::max();
    sc.seed = opts.seed;
    sc.window_start = 0;
    sim::SimOptions so;
    so.max_records = 0;
    so.record_z = true;
    so.stop_after_markers = opts.cycles + 1;
    const auto trace = sim::run(sc, so);
    rep.simulated_steps = trace.steps;
    rep.simulated_cycles = trace.markers.empty() ? 0 : trace.markers.size() - 1;

    // One-step transitions of Z.
    {
        std::map<std::size_t, std::map<std::size_t, std::size_t>> counts;
        std::size_t unknown = 0;
        for (std::size_t t = 0; t + 1 < trace.z_path.size(); ++t) {
            const auto a = z_index.find(trace.z_path[t]);
            const auto b = z_index.find(trace.z_path[t + 1]);
            if (a == z_index.end() || b == z_index.end()) {
                ++unknown;
                continue;
            }
            ++counts[a->second][b->second];
        }
        for (const auto& [row, cols] : counts) {
            std::size_t total = 0;
            for (const auto& [c, k] : cols) total += k;
            std::vector<double> probs(z.size()), obs(z.size(), 0.0);
            for (std::size_t j = 0; j < z.size(); ++j) probs[j] = z(row, j);
            for (const auto& [c, k] : cols) obs[c] = static_cast<double>(k);
            if (total >= opts.min_gof_visits) rep.z_gof.add_row(probs, obs, opts.min_expected);
            if (total < rep.row_visit_threshold) continue;
            ++rep.z_rows_compared;
            for (std::size_t j = 0; j < z.size(); ++j) {
                rep.z_max_diff = std::max(rep.z_max_diff, std::abs(obs[j] / static_cast<double>(total) - probs[j]));
            }
        }
        rep.z_gof.finish(opts.significance);
        rep.checks.push_back({"z_transitions", rep.z_rows_compared > 0 && rep.z_max_diff <= opts.tolerance && unknown == 0,
                              fmt::format("{} rows with >= {} visits, max |diff| {:.4f}, unknown states {}",
                                          rep.z_rows_compared, rep.row_visit_threshold, rep.z_max_diff, unknown)});
        rep.checks.push_back({"z_transitions_gof", rep.z_gof.rows > 0 && rep.z_gof.pass,
                              fmt::format("{} rows with >= {} visits, chi2 {:.1f} on {} df, p {:.3g}, impossible {}",
                                          rep.z_gof.rows, opts.min_gof_visits, rep.z_gof.statistic, rep.z_gof.df,
                                          rep.z_gof.p_value, rep.z_gof.impossible)});
    }

    // Return chain and cycle-length law.
    const auto cs = sim::cycle_stats(trace, std::nullopt, s0_states);
    for (std::size_t i = 0; i < s0_states.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        if (cs.row_visits[i] >= opts.min_gof_visits) {
            std::vector<double> probs(s0_states.size()), obs(s0_states.size());
            for (std::size_t j = 0; j < s0_states.size(); ++j) {
                probs[j] = v_tilde.entries()(ii, static_cast<Eigen::Index>(j));
                obs[j] = cs.counts(ii, static_cast<Eigen::Index>(j));
            }
            rep.v_tilde_gof.add_row(probs, obs, opts.min_expected);
        }
        if (cs.row_visits[i] < rep.row_visit_threshold) continue;
        ++rep.v_tilde_rows_compared;
        rep.v_tilde_max_diff =
            std::max(rep.v_tilde_max_diff, (cs.v_tilde.row(ii) - v_tilde.entries().row(ii)).cwiseAbs().maxCoeff());
    }
    rep.v_tilde_gof.finish(opts.significance);
    rep.checks.push_back(
        {"return_chain", rep.v_tilde_rows_compared > 0 && rep.v_tilde_max_diff <= opts.tolerance && cs.unmatched == 0,
         fmt::format("{} of {} rows with >= {} visits, max |diff| {:.4f}, unmatched cycles {}",
                     rep.v_tilde_rows_compared, s0_states.size(), rep.row_visit_threshold, rep.v_tilde_max_diff,
                     cs.unmatched)});
    rep.checks.push_back({"return_chain_gof", rep.v_tilde_gof.rows > 0 && rep.v_tilde_gof.pass,
                          fmt::format("{} rows with >= {} visits, chi2 {:.1f} on {} df, p {:.3g}, impossible {}",
                                      rep.v_tilde_gof.rows, opts.min_gof_visits, rep.v_tilde_gof.statistic,
                                      rep.v_tilde_gof.df, rep.v_tilde_gof.p_value, rep.v_tilde_gof.impossible)});

    long max_delta = 1;
    for (const auto& [pair, hist] : cs.delta_hist)
        if (!hist.empty()) max_delta = std::max(max_delta, hist.rbegin()->first);
    const auto& v00 = blocks.v00.entries();
    const auto& v01 = blocks.v01.entries();
    const auto& v10 = blocks.v10.entries();
    const auto& v11 = blocks.v11.entries();
    std::vector<Matrix> d_law;  // D(1), D(2), ...
    d_law.push_back(v00);
    Matrix pw = v10;
    for (long l = 2; l <= max_delta; ++l) {
        d_law.push_back(v01 * pw);
        pw = v11 * pw;
    }
    std::size_t failed = 0;
    for (const auto& [pair, hist] : cs.delta_hist) {
        std::size_t obs = 0;
        for (const auto& [l, c] : hist) obs += c;
        if (obs < opts.min_pair_observations) continue;
        const auto i = static_cast<Eigen::Index>(pair.first), j = static_cast<Eigen::Index>(pair.second);
        const double vt = v_tilde.entries()(i, j);
        std::vector<double> probs;
        for (const auto& d : d_law) probs.push_back(vt > 0.0 ? d(i, j) / vt : 0.0);
        auto res = chi_square_lengths(hist, probs, opts.significance, opts.min_expected);
        res.from = pair.first;
        res.to = pair.second;
        if (!res.pass) ++failed;
        rep.chi_square.push_back(res);
    }
    rep.checks.push_back({"cycle_length_law", !rep.chi_square.empty() && failed == 0,
                          fmt::format("{} pairs with >= {} cycles, {} rejected at level {}", rep.chi_square.size(),
                                      opts.min_pair_observations, failed, opts.significance)});
    return rep;
}

}  // namespace wncs::validation
