#pragma once

// =============================================================================
// Closed-loop protocol simulation
// =============================================================================
// Slot order: S-C transmission, command computation, C-A transmission,
// actuation, plant update; the channel and computation states for the next
// slot are drawn at the end of the slot so that Z(t) is known when slot t
// finishes.
// =============================================================================

#include "wncs/error.hpp"
#include "wncs/model.hpp"
#include "wncs/plant.hpp"
#include "wncs/rng.hpp"
#include "wncs/stability.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace wncs::sim {

using markov::Matrix;
using model::ZState;
using plant::Vector;

enum class Mode { dual_buffer, baseline };

inline std::string to_string(Mode m) { return m == Mode::dual_buffer ? "dual" : "baseline"; }

struct SimConfig {
    model::NetworkConfig network;
    std::shared_ptr<const plant::PlantModel> plant;  // null: protocol kernel only, no plant state
    plant::NoiseSpec noise;
    std::optional<stability::PlantMargins> margins;
    long horizon = 800;
    std::uint64_t seed = 1;
    Mode mode = Mode::dual_buffer;
    Vector x0;
    long window_start = 100;  // first step of the averaging window for mean |x|

    void validate() const {
        network.validate(false);
        noise.validate();
        if (horizon < 1) throw config_error("horizon must be >= 1");
        if (window_start < 0) throw config_error("window_start must be >= 0");
        const int ls = plant ? plant->dims().state : 0;
        if (x0.size() != ls) {
            throw config_error(fmt::format("x0 has {} entries, plant state has {}", x0.size(), ls));
        }
    }
};

struct SimOptions {
    std::size_t max_records = 1'000'000;  // in-memory step records; further steps only go to `stream`
    std::ostream* stream = nullptr;       // receives every step as a CSV row, header first
    bool record_z = false;                // keep Z(t) for every step
    std::size_t stop_after_markers = 0;   // end early once this many cycle markers exist (0: never)
};

struct BufferPair {
    std::vector<Vector> controller;
    std::vector<Vector> actuator;

    model::Lengths lengths() const {
        return {static_cast<int>(controller.size()), static_cast<int>(actuator.size())};
    }
};

struct StepRecord {
    long t = 0;
    Vector x;
    double norm_x = 0.0;
    Vector u;
    int lam_c = 0;
    int lam_a = 0;
    int b = 0;
    int bp = 1;
    int n = 0;
    bool gamma = false;
    bool gamma_p = false;
    int L = 0;
    bool open_loop = false;
    bool cycle_start = false;
};

/// Step k_n with lam_a(k_n) = 0 together with Z(k_n).
struct CycleMarker {
    long t = 0;
    ZState z;
};

struct SimTrace {
    Mode mode = Mode::dual_buffer;
    std::uint64_t seed = 0;
    long steps = 0;
    int state_dim = 0;
    int input_dim = 0;
    std::vector<StepRecord> records;
    std::vector<CycleMarker> markers;
    std::vector<ZState> z_path;  // filled when SimOptions::record_z
    Vector x_final;

    // Running statistics over all steps, independent of record retention.
    double norm_max = 0.0;
    double window_norm_sum = 0.0;
    long window_count = 0;
    long open_loop_steps = 0;
    double lyapunov_sum = 0.0;

    double window_mean_norm() const { return window_count ? window_norm_sum / static_cast<double>(window_count) : 0.0; }
    double open_loop_fraction() const { return steps ? static_cast<double>(open_loop_steps) / static_cast<double>(steps) : 0.0; }

    std::vector<long> deltas() const {
        std::vector<long> d;
        for (std::size_t i = 1; i < markers.size(); ++i) d.push_back(markers[i].t - markers[i - 1].t);
        return d;
    }
};

// =============================================================================
// CSV export
// =============================================================================

inline std::string trace_header(int state_dim, int input_dim) {
    std::string h = "t";
    for (int i = 0; i < state_dim; ++i) h += fmt::format(",x{}", i);
    h += ",norm_x";
    for (int i = 0; i < input_dim; ++i) h += fmt::format(",u{}", i);
    h += ",lam_c,lam_a,B,Bp,N,gamma,gamma_p,L,open_loop,cycle_start";
    return h;
}

inline std::string trace_row(const StepRecord& r) {
    std::string s = fmt::format("{}", r.t);
    for (Eigen::Index i = 0; i < r.x.size(); ++i) s += fmt::format(",{:.17g}", r.x(i));
    s += fmt::format(",{:.17g}", r.norm_x);
    for (Eigen::Index i = 0; i < r.u.size(); ++i) s += fmt::format(",{:.17g}", r.u(i));
    s += fmt::format(",{},{},{},{},{},{},{},{},{},{}", r.lam_c, r.lam_a, r.b, r.bp, r.n, int(r.gamma), int(r.gamma_p),
                     r.L, int(r.open_loop), int(r.cycle_start));
    return s;
}

/// Writes the retained records. Traces longer than the retention limit must
/// be captured through SimOptions::stream instead.
inline void write_trace_csv(std::ostream& os, const SimTrace& trace) {
    if (trace.records.size() != static_cast<std::size_t>(trace.steps)) {
        throw Error(Errc::size_limit, "trace exceeds the in-memory record limit; stream it instead");
    }
    os << trace_header(trace.state_dim, trace.input_dim) << '\n';
    for (const auto& r : trace.records) os << trace_row(r) << '\n';
}

// =============================================================================
// Simulation
// =============================================================================

namespace detail {

/// Cumulative distribution of each row, used for inverse-CDF sampling.
class RowSampler {
public:
    explicit RowSampler(const Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            std::vector<double> cum;
            double acc = 0.0;
            std::size_t last_positive = 0;
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                acc += m(i, j);
                cum.push_back(acc);
                if (m(i, j) > 0.0) last_positive = static_cast<std::size_t>(j);
            }
            rows_.push_back(std::move(cum));
            last_.push_back(last_positive);
        }
    }

    std::size_t sample(std::size_t row, std::mt19937_64& gen) const {
        const auto& cum = rows_[row];
        const double u = uniform01(gen) * cum.back();
        const auto it = std::upper_bound(cum.begin(), cum.end(), u);
        return std::min(static_cast<std::size_t>(it - cum.begin()), last_[row]);
    }

private:
    std::vector<std::vector<double>> rows_;
    std::vector<std::size_t> last_;
};

inline void drop_front(std::vector<Vector>& buf, std::size_t k = 1) {
    buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(std::min(k, buf.size())));
}

}  // namespace detail

/// Runs the configured protocol (dual-buffer or single-buffer baseline).
inline SimTrace run(const SimConfig& cfg, const SimOptions& opts = {}) {
    cfg.validate();
    const auto& net = cfg.network;
    const plant::PlantModel* model = cfg.plant.get();
    const int ls = model ? model->dims().state : 0;
    const int lu = model ? model->dims().input : 0;

    RngStreams rng(cfg.seed);
    const detail::RowSampler channel(net.joint_channel.entries());
    const detail::RowSampler compute(net.compute.entries());
    std::normal_distribution<double> normal(0.0, std::sqrt(cfg.noise.variance));

    SimTrace trace;
    trace.mode = cfg.mode;
    trace.seed = cfg.seed;
    trace.state_dim = ls;
    trace.input_dim = lu;
    if (opts.stream) *opts.stream << trace_header(ls, lu) << '\n';

    Vector x = cfg.x0;
    model::ChannelState ch = net.initial;
    BufferPair buf;
    const Vector zero_u = Vector::Zero(lu);
    Vector w = Vector::Zero(ls);

    for (long t = 0; t < cfg.horizon; ++t) {
        const model::Lengths prev = buf.lengths();
        StepRecord rec;
        rec.t = t;
        rec.x = x;
        rec.norm_x = model ? x.norm() : 0.0;
        rec.b = ch.b;
        rec.bp = ch.bp;
        rec.n = ch.n;

        // S-C link and computation.
        rec.gamma_p = uniform01(rng.sc_link) >= net.sc_drop[static_cast<std::size_t>(ch.bp - 1)];
        const bool fresh = rec.gamma_p && ch.n > 0;
        std::vector<Vector> seq;
        if (fresh) {
            seq = model ? plant::generate_sequence(*model, x, ch.n)
                        : std::vector<Vector>(static_cast<std::size_t>(ch.n), Vector());
        }

        // C-A link.
        const bool ca_ok = uniform01(rng.ca_link) >= net.ca_drop;
        if (cfg.mode == Mode::dual_buffer) {
            rec.L = model::compute_L(rec.gamma_p, ch.n, ch.b, prev.lam_c, prev.lam_a, net);
            rec.gamma = ca_ok && !(net.l0_policy == model::L0Policy::forced_drop && rec.L == 0);
            const auto L = static_cast<std::size_t>(rec.L);

            std::vector<Vector> act = buf.actuator;
            if (!rec.gamma) {
                detail::drop_front(act);
            } else if (fresh) {
                act.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(L));
            } else if (prev.lam_a == 0) {
                act.clear();
            } else {
                detail::drop_front(act);
                act.insert(act.end(), buf.controller.begin(), buf.controller.begin() + static_cast<std::ptrdiff_t>(L));
            }

            if (fresh) {
                if (rec.gamma) {
                    buf.controller.assign(seq.begin() + static_cast<std::ptrdiff_t>(L), seq.end());
                } else {
                    buf.controller.clear();
                }
            } else if (prev.lam_a == 0) {
                buf.controller.clear();
            } else if (rec.gamma) {
                detail::drop_front(buf.controller, L);
            }
            buf.actuator = std::move(act);

            const auto expect = model::step_lengths(prev, {rec.gamma, rec.gamma_p, rec.L}, ch.n, net);
            if (expect != buf.lengths()) {
                throw Error(Errc::range_violation,
                            fmt::format("slot {}: buffer contents ({}, {}) disagree with length rule ({}, {})", t,
                                        buf.controller.size(), buf.actuator.size(), expect.lam_c, expect.lam_a));
            }
        } else {
            // Single buffer: the controller forwards one command per slot and
            // the actuator keeps nothing beyond the current slot.
            if (fresh) {
                buf.controller = std::move(seq);
            } else if (prev.lam_a == 0) {
                buf.controller.clear();
            }
            rec.L = (!buf.controller.empty() && ch.b >= 1) ? 1 : 0;
            rec.gamma = ca_ok && !(net.l0_policy == model::L0Policy::forced_drop && rec.L == 0);
            buf.actuator.clear();
            if (rec.gamma && rec.L == 1) {
                buf.actuator.push_back(buf.controller.front());
                detail::drop_front(buf.controller);
            } else if (!rec.gamma) {
                buf.controller.clear();
            }
        }

        rec.lam_c = static_cast<int>(buf.controller.size());
        rec.lam_a = static_cast<int>(buf.actuator.size());
        rec.open_loop = rec.lam_a == 0;
        rec.cycle_start = rec.open_loop;
        rec.u = buf.actuator.empty() ? zero_u : buf.actuator.front();

        if (model) {
            if (cfg.noise.active()) {
                for (int i = 0; i < ls; ++i) w(i) = normal(rng.noise);
            }
            trace.lyapunov_sum += model->lyapunov(x);
            x = model->step(x, rec.u, w);
        }

        // Channel and computation state for the next slot.
        const auto ch_idx = channel.sample(net.channel_index(ch.b, ch.bp), rng.channel);
        const auto [b2, bp2] = net.channel_pair(ch_idx);
        ch = {b2, bp2, static_cast<int>(compute.sample(static_cast<std::size_t>(ch.n), rng.compute))};

        const ZState z{rec.lam_c, rec.lam_a, ch.b, ch.bp, ch.n};
        if (opts.record_z) trace.z_path.push_back(z);
        if (rec.open_loop) {
            trace.markers.push_back({t, z});
            ++trace.open_loop_steps;
        }
        trace.norm_max = std::max(trace.norm_max, rec.norm_x);
        if (t >= cfg.window_start) {
            trace.window_norm_sum += rec.norm_x;
            ++trace.window_count;
        }
        ++trace.steps;
        if (opts.stream) *opts.stream << trace_row(rec) << '\n';
        if (trace.records.size() < opts.max_records) trace.records.push_back(std::move(rec));
        if (opts.stop_after_markers && trace.markers.size() >= opts.stop_after_markers) break;
    }
    trace.x_final = x;
    return trace;
}

/// Single-buffer comparison run: identical sample path, actuator without a buffer.
inline SimTrace run_baseline(SimConfig cfg, const SimOptions& opts = {}) {
    cfg.mode = Mode::baseline;
    return run(cfg, opts);
}

// =============================================================================
// Cycle statistics
// =============================================================================

struct CycleStats {
    std::vector<ZState> s0;             // row/column order of the matrices below
    Matrix counts;                      // transitions Z(k_n) -> Z(k_{n+1})
    Matrix v_tilde;                     // row-normalised counts
    std::vector<std::size_t> row_visits;
    std::map<std::pair<std::size_t, std::size_t>, std::map<long, std::size_t>> delta_hist;
    std::vector<long> deltas;
    std::vector<double> log_xi;  // log Xi(n), n = 1..cycles; empty without margins
    std::size_t unmatched = 0;   // cycles whose endpoints are not in `s0`
};

/// Groups consecutive cycle markers by their Z endpoints. When `s0` is
/// empty the index is built from the distinct marker states, sorted.
inline CycleStats cycle_stats(const SimTrace& trace, const std::optional<stability::PlantMargins>& margins,
                              std::vector<ZState> s0 = {}) {
    if (trace.markers.size() < 2) {
        throw Error(Errc::insufficient_cycles,
                    fmt::format("{} cycle marker(s); at least 2 are needed", trace.markers.size()));
    }
    if (s0.empty()) {
        std::set<ZState> seen;
        for (const auto& m : trace.markers) seen.insert(m.z);
        s0.assign(seen.begin(), seen.end());
    }
    std::map<ZState, std::size_t> index;
    for (std::size_t i = 0; i < s0.size(); ++i) index.emplace(s0[i], i);

    CycleStats cs;
    const auto s = static_cast<Eigen::Index>(s0.size());
    cs.counts = Matrix::Zero(s, s);
    cs.row_visits.assign(s0.size(), 0);
    double log_sum = 0.0;
    for (std::size_t k = 1; k < trace.markers.size(); ++k) {
        const long delta = trace.markers[k].t - trace.markers[k - 1].t;
        cs.deltas.push_back(delta);
        if (margins) {
            log_sum += std::log(margins->alpha()) + static_cast<double>(delta - 1) * std::log(margins->rho());
            cs.log_xi.push_back(log_sum);
        }
        const auto from = index.find(trace.markers[k - 1].z);
        const auto to = index.find(trace.markers[k].z);
        if (from == index.end() || to == index.end()) {
            ++cs.unmatched;
            continue;
        }
        cs.counts(static_cast<Eigen::Index>(from->second), static_cast<Eigen::Index>(to->second)) += 1.0;
        ++cs.row_visits[from->second];
        ++cs.delta_hist[{from->second, to->second}][delta];
    }
    cs.v_tilde = cs.counts;
    for (Eigen::Index i = 0; i < s; ++i) {
        const double total = cs.counts.row(i).sum();
        if (total > 0) cs.v_tilde.row(i) /= total;
    }
    cs.s0 = std::move(s0);
    return cs;
}

// =============================================================================
// Monte-Carlo fan-out
// =============================================================================

struct SeedResult {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double window_mean_norm = 0.0;
    double max_norm = 0.0;
    double open_loop_fraction = 0.0;
    double lyapunov_sum = 0.0;
    std::size_t cycles = 0;
    std::vector<double> log_xi;
};

struct MonteCarloOptions {
    unsigned threads = 0;          // 0: WNCS_THREADS or hardware concurrency
    std::size_t xi_cycles = 10;    // cycles entering the Xi decay fit
    bool keep_traces = false;
    SimOptions sim;
};

struct MonteCarloReport {
    std::vector<SeedResult> runs;  // ordered as the seed list
    std::vector<SimTrace> traces;  // when keep_traces
    std::size_t failed = 0;
    double window_mean_norm = 0.0;  // averaged over successful seeds
    double max_norm = 0.0;
    double open_loop_fraction = 0.0;
    std::vector<double> mean_xi;    // E[Xi(n)], n = 1..; over seeds with >= n cycles
    double xi_decay_rate = std::numeric_limits<double>::quiet_NaN();  // fitted slope of log E[Xi(n)]
};

inline unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("WNCS_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Least-squares slope of y against x = 1..y.size().
inline double fit_slope(const std::vector<double>& y) {
    const auto n = static_cast<double>(y.size());
    if (y.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double xi = static_cast<double>(i + 1);
        sx += xi;
        sy += y[i];
        sxx += xi * xi;
        sxy += xi * y[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Independent runs, one per seed; per-seed failures are recorded, not thrown.
inline MonteCarloReport monte_carlo(const SimConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                    const MonteCarloOptions& opts = {}) {
    if (seeds.empty()) throw config_error("seed list is empty");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
        throw config_error("seed list contains duplicates");
    }
    cfg.validate();

    MonteCarloReport rep;
    rep.runs.resize(seeds.size());
    if (opts.keep_traces) rep.traces.resize(seeds.size());
    SimOptions sim_opts = opts.sim;
    sim_opts.stream = nullptr;

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < seeds.size(); i = next++) {
            SeedResult& r = rep.runs[i];
            r.seed = seeds[i];
            try {
                SimConfig c = cfg;
                c.seed = seeds[i];
                SimTrace tr = run(c, sim_opts);
                r.window_mean_norm = tr.window_mean_norm();
                r.max_norm = tr.norm_max;
                r.open_loop_fraction = tr.open_loop_fraction();
                r.lyapunov_sum = tr.lyapunov_sum;
                r.cycles = tr.markers.size() > 0 ? tr.markers.size() - 1 : 0;
                if (cfg.margins && tr.markers.size() >= 2) r.log_xi = cycle_stats(tr, cfg.margins).log_xi;
                if (opts.keep_traces) rep.traces[i] = std::move(tr);
                r.ok = true;
            } catch (const std::exception& e) {
                r.error = e.what();
            }
        }
    };
    const unsigned n_threads = std::min<unsigned>(resolve_threads(opts.threads), static_cast<unsigned>(seeds.size()));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n_threads; ++k) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    // Deterministic fold in seed-list order.
    std::size_t ok = 0;
    for (const auto& r : rep.runs) {
        if (!r.ok) {
            ++rep.failed;
            continue;
        }
        ++ok;
        rep.window_mean_norm += r.window_mean_norm;
        rep.open_loop_fraction += r.open_loop_fraction;
        rep.max_norm = std::max(rep.max_norm, r.max_norm);
    }
    if (ok) {
        rep.window_mean_norm /= static_cast<double>(ok);
        rep.open_loop_fraction /= static_cast<double>(ok);
    }
    if (cfg.margins) {
        std::vector<double> log_mean;
        for (std::size_t n = 0; n < opts.xi_cycles; ++n) {
            double sum = 0.0;
            std::size_t cnt = 0;
            for (const auto& r : rep.runs) {
                if (r.ok && r.log_xi.size() > n) {
                    sum += std::exp(r.log_xi[n]);
                    ++cnt;
                }
            }
            if (cnt == 0) break;
            rep.mean_xi.push_back(sum / static_cast<double>(cnt));
            log_mean.push_back(std::log(rep.mean_xi.back()));
        }
        rep.xi_decay_rate = fit_slope(log_mean);
    }
    return rep;
}

}  // namespace wncs::sim
