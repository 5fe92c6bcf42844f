#pragma once

// =============================================================================
// Dual-buffer protocol model
// =============================================================================
// Network configuration, the L(t) rule, effective-buffer-length transitions
// and the aggregated chain Z(t) = (lam_c(t), lam_a(t), B(t+1), B'(t+1), N(t+1)).
// =============================================================================

#include "wncs/error.hpp"
#include "wncs/markov.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <compare>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace wncs::model {

using markov::IndexSet;
using markov::Matrix;
using markov::StochasticMatrix;

/// What happens to gamma when nothing is transmitted (L = 0).
/// `literal`: gamma is sampled every slot regardless of L.
/// `forced_drop`: a slot with L = 0 is treated as a C-A failure (gamma = 0).
enum class L0Policy { literal, forced_drop };

inline std::string to_string(L0Policy p) {
    return p == L0Policy::literal ? "literal" : "forced_drop";
}

inline L0Policy parse_l0_policy(const std::string& s) {
    if (s == "literal") return L0Policy::literal;
    if (s == "forced_drop" || s == "forced-drop") return L0Policy::forced_drop;
    throw config_error("unknown l0_policy '" + s + "' (expected literal or forced_drop)");
}

struct ChannelState {
    int b = 0;   // C-A capacity level, 0..ca_max
    int bp = 1;  // S-C level, 1..sc_levels
    int n = 0;   // computation availability, 0..n_max

    auto operator<=>(const ChannelState&) const = default;
};

struct NetworkConfig {
    int ca_max = 0;     // B-bar
    int sc_levels = 1;  // B'-bar
    StochasticMatrix joint_channel;  // over (B, B') pairs, B-major: idx = b * sc_levels + (bp - 1)
    StochasticMatrix compute;        // over N in 0..n_max
    double ca_drop = 0.5;            // gamma-bar
    std::vector<double> sc_drop;     // per S-C level 1..sc_levels
    int buf_controller = 1;          // Lambda_c
    int buf_actuator = 1;            // Lambda_a
    ChannelState initial;
    L0Policy l0_policy = L0Policy::literal;

    int n_max() const noexcept { return static_cast<int>(compute.size()) - 1; }
    int lam_a_max() const noexcept { return std::min(buf_actuator, n_max()); }
    int channel_count() const noexcept { return (ca_max + 1) * sc_levels; }

    std::size_t channel_index(int b, int bp) const noexcept {
        return static_cast<std::size_t>(b * sc_levels + (bp - 1));
    }
    std::pair<int, int> channel_pair(std::size_t idx) const noexcept {
        const int i = static_cast<int>(idx);
        return {i / sc_levels, i % sc_levels + 1};
    }

    /// Throws ConfigError on any violated invariant. `strict_drop` demands
    /// ca_drop in (0, 1), which the chain analysis needs; simulation accepts
    /// the closed interval.
    void validate(bool strict_drop = true) const {
        if (ca_max < 0) throw config_error("ca_max must be >= 0");
        if (sc_levels < 1) throw config_error("sc_levels must be >= 1");
        if (static_cast<int>(joint_channel.size()) != channel_count()) {
            throw config_error(fmt::format("joint_channel must be {0}x{0} for ca_max={1}, sc_levels={2}",
                                           channel_count(), ca_max, sc_levels));
        }
        if (compute.size() == 0) throw config_error("compute matrix is empty");
        if (buf_controller < 0 || buf_actuator < 0) throw config_error("buffer sizes must be >= 0");
        if (buf_actuator > buf_controller) throw config_error("buf_actuator must not exceed buf_controller");
        if (n_max() > buf_controller) throw config_error("compute levels must not exceed buf_controller");
        if (strict_drop ? !(ca_drop > 0.0 && ca_drop < 1.0) : !(ca_drop >= 0.0 && ca_drop <= 1.0)) {
            throw config_error(fmt::format("ca_drop = {} outside {}", ca_drop, strict_drop ? "(0, 1)" : "[0, 1]"));
        }
        if (static_cast<int>(sc_drop.size()) != sc_levels) {
            throw config_error(fmt::format("sc_drop needs {} entries, got {}", sc_levels, sc_drop.size()));
        }
        for (double p : sc_drop) {
            if (!(p >= 0.0 && p <= 1.0)) throw config_error(fmt::format("sc_drop entry {} outside [0, 1]", p));
        }
        if (initial.b < 0 || initial.b > ca_max || initial.bp < 1 || initial.bp > sc_levels ||
            initial.n < 0 || initial.n > n_max()) {
            throw config_error(fmt::format("initial state ({}, {}, {}) out of range", initial.b, initial.bp,
                                           initial.n));
        }
    }
};

// =============================================================================
// Aggregated state
// =============================================================================

struct ZState {
    int lam_c = 0;
    int lam_a = 0;
    int b_next = 0;
    int bp_next = 1;
    int n_next = 0;

    auto operator<=>(const ZState&) const = default;

    std::string label() const {
        return fmt::format("lc{}_la{}_B{}_Bp{}_N{}", lam_c, lam_a, b_next, bp_next, n_next);
    }

    static std::optional<ZState> parse(const std::string& label) {
        ZState z;
        int consumed = 0;
        if (std::sscanf(label.c_str(), "lc%d_la%d_B%d_Bp%d_N%d%n", &z.lam_c, &z.lam_a, &z.b_next, &z.bp_next,
                        &z.n_next, &consumed) != 5 ||
            consumed != static_cast<int>(label.size())) {
            return std::nullopt;
        }
        return z;
    }
};

struct Lengths {
    int lam_c = 0;
    int lam_a = 0;

    auto operator<=>(const Lengths&) const = default;
};

struct SlotOutcome {
    bool gamma = false;    // C-A success
    bool gamma_p = false;  // S-C success
    int L = 0;             // commands transmitted
};

/// Number of commands sent over the C-A link in a slot.
inline int compute_L(bool gamma_p, int n, int b, int lam_c_prev, int lam_a_prev, const NetworkConfig& cfg) {
    int L = 0;
    if (gamma_p && n > 0) {
        L = std::min({b, n, cfg.buf_actuator});
    } else if (lam_a_prev != 0) {
        L = std::min({b, lam_c_prev, cfg.buf_actuator - lam_a_prev});
    }
    return std::max(L, 0);
}

/// Effective buffer lengths after one slot.
inline Lengths step_lengths(Lengths prev, const SlotOutcome& o, int n, const NetworkConfig& /*cfg*/) {
    const bool fresh = o.gamma_p && n > 0;
    Lengths next;
    if (fresh) {
        next.lam_c = o.gamma ? n - o.L : 0;
    } else if (prev.lam_a == 0) {
        next.lam_c = 0;
    } else {
        next.lam_c = o.gamma ? prev.lam_c - o.L : prev.lam_c;
    }

    if (!o.gamma) {
        next.lam_a = std::max(prev.lam_a - 1, 0);
    } else if (fresh) {
        next.lam_a = o.L;
    } else if (prev.lam_a == 0) {
        next.lam_a = 0;
    } else {
        next.lam_a = prev.lam_a + o.L - 1;
    }

    if (next.lam_c < 0 || next.lam_a < 0) {
        throw Error(Errc::range_violation,
                    fmt::format("lengths ({}, {}) from prev ({}, {}), gamma={}, gamma'={}, N={}, L={}", next.lam_c,
                                next.lam_a, prev.lam_c, prev.lam_a, o.gamma, o.gamma_p, n, o.L));
    }
    return next;
}

/// All aggregated states in lexicographic (lam_c, lam_a, b_next, bp_next, n_next) order.
inline std::vector<ZState> enumerate_z(const NetworkConfig& cfg) {
    std::vector<ZState> out;
    out.reserve(static_cast<std::size_t>((cfg.buf_controller + 1) * (cfg.lam_a_max() + 1) * cfg.channel_count() *
                                         (cfg.n_max() + 1)));
    for (int lc = 0; lc <= cfg.buf_controller; ++lc)
        for (int la = 0; la <= cfg.lam_a_max(); ++la)
            for (int b = 0; b <= cfg.ca_max; ++b)
                for (int bp = 1; bp <= cfg.sc_levels; ++bp)
                    for (int n = 0; n <= cfg.n_max(); ++n) out.push_back({lc, la, b, bp, n});
    return out;
}

/// Position of `z` in enumerate_z(cfg).
inline std::size_t z_index(const NetworkConfig& cfg, const ZState& z) {
    const int nl = cfg.n_max() + 1;
    const int nbp = cfg.sc_levels;
    const int nb = cfg.ca_max + 1;
    const int na = cfg.lam_a_max() + 1;
    return static_cast<std::size_t>(
        (((z.lam_c * na + z.lam_a) * nb + z.b_next) * nbp + (z.bp_next - 1)) * nl + z.n_next);
}

inline std::vector<std::string> z_labels(const std::vector<ZState>& states) {
    std::vector<std::string> labels;
    labels.reserve(states.size());
    for (const auto& z : states) labels.push_back(z.label());
    return labels;
}

/// Transition matrix of the aggregated chain, states ordered as enumerate_z.
inline StochasticMatrix build_z_chain(const NetworkConfig& cfg) {
    cfg.validate(true);
    const auto states = enumerate_z(cfg);
    const auto n_states = static_cast<Eigen::Index>(states.size());
    const auto& chan = cfg.joint_channel.entries();
    const auto& comp = cfg.compute.entries();
    const int la_cap = cfg.lam_a_max();
    Matrix v = Matrix::Zero(n_states, n_states);

    for (std::size_t src = 0; src < states.size(); ++src) {
        const ZState& s = states[src];
        const auto ch = static_cast<Eigen::Index>(cfg.channel_index(s.b_next, s.bp_next));
        const double sc_drop = cfg.sc_drop[static_cast<std::size_t>(s.bp_next - 1)];
        for (int g = 0; g <= 1; ++g) {
            for (int gp = 0; gp <= 1; ++gp) {
                const double p = (g ? 1.0 - cfg.ca_drop : cfg.ca_drop) * (gp ? 1.0 - sc_drop : sc_drop);
                if (p == 0.0) continue;
                SlotOutcome o;
                o.gamma_p = gp == 1;
                o.L = compute_L(o.gamma_p, s.n_next, s.b_next, s.lam_c, s.lam_a, cfg);
                o.gamma = g == 1 && !(cfg.l0_policy == L0Policy::forced_drop && o.L == 0);
                Lengths next = step_lengths({s.lam_c, s.lam_a}, o, s.n_next, cfg);
                // Only sources outside the reachable set (lam_c + lam_a > n_max) can overshoot.
                next.lam_a = std::min(next.lam_a, la_cap);
                next.lam_c = std::min(next.lam_c, cfg.buf_controller);
                for (Eigen::Index ch2 = 0; ch2 < chan.cols(); ++ch2) {
                    const double pc = chan(ch, ch2);
                    if (pc == 0.0) continue;
                    const auto [b2, bp2] = cfg.channel_pair(static_cast<std::size_t>(ch2));
                    for (Eigen::Index n2 = 0; n2 < comp.cols(); ++n2) {
                        const double pn = comp(s.n_next, n2);
                        if (pn == 0.0) continue;
                        const ZState dst{next.lam_c, next.lam_a, b2, bp2, static_cast<int>(n2)};
                        v(static_cast<Eigen::Index>(src), static_cast<Eigen::Index>(z_index(cfg, dst))) +=
                            p * pc * pn;
                    }
                }
            }
        }
    }
    return StochasticMatrix(std::move(v), z_labels(states));
}

struct S0Split {
    IndexSet s0;  // open-loop states, lam_a = 0
    IndexSet s1;
};

inline S0Split split_s0(const std::vector<ZState>& states) {
    S0Split out;
    for (std::size_t i = 0; i < states.size(); ++i) (states[i].lam_a == 0 ? out.s0 : out.s1).push_back(i);
    return out;
}

/// Split by the lam_a field encoded in the chain's labels.
inline S0Split split_s0(const StochasticMatrix& z) {
    std::vector<ZState> states;
    states.reserve(z.size());
    for (const auto& label : z.labels()) {
        auto parsed = ZState::parse(label);
        if (!parsed) throw config_error("state label '" + label + "' is not of the form lc<i>_la<j>_B<k>_Bp<l>_N<m>");
        states.push_back(*parsed);
    }
    return split_s0(states);
}

}  // namespace wncs::model
