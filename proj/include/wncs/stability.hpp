#pragma once

// =============================================================================
// Cycle-cost stability certificates
// =============================================================================
// Block partition of the aggregated chain around the open-loop set S0, the
// return chain V~ observed at open-loop instants, the discounted cycle
// matrix sum_l rho^l D(l), conditional factors r_ij = E[rho^Delta | i -> j],
// and the two certificates
//   Omega' = (alpha/rho) max r_ij
//   Omega  = (alpha/rho) lambda_max(U).
// =============================================================================

#include "wncs/error.hpp"
#include "wncs/markov.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

namespace wncs::stability {

using markov::Distribution;
using markov::IndexSet;
using markov::Matrix;
using markov::StochasticMatrix;
using markov::SubstochasticMatrix;
using markov::Vector;

inline constexpr double kZeroReturn = 1e-15;
inline constexpr double kSeriesTolerance = 1e-14;
inline constexpr double kMinStationaryMass = 1e-14;
inline constexpr std::size_t kMaxS0 = 64;

/// Closed-loop contraction rho and open-loop expansion alpha of the plant.
class PlantMargins {
public:
    PlantMargins(double rho, double alpha) : rho_(rho), alpha_(alpha) {
        if (!(rho > 0.0 && rho < 1.0)) throw config_error(fmt::format("rho = {} outside (0, 1)", rho));
        if (!(alpha > 0.0)) throw config_error(fmt::format("alpha = {} must be > 0", alpha));
    }

    double rho() const noexcept { return rho_; }
    double alpha() const noexcept { return alpha_; }

private:
    double rho_;
    double alpha_;
};

/// How the stationary weights enter the coupling matrix F.
/// `time_reversal`:    F = diag(pi) V~ diag(pi)^-1 (column sums one).
/// `joint_stationary`: F = diag(pi) V~ diag(pi), f_{k',k} = pi_k' v~_k'k pi_k.
enum class FWeighting { time_reversal, joint_stationary };

inline std::string to_string(FWeighting w) {
    return w == FWeighting::time_reversal ? "time_reversal" : "joint_stationary";
}

inline FWeighting parse_f_weighting(const std::string& s) {
    if (s == "time_reversal" || s == "time-reversal") return FWeighting::time_reversal;
    if (s == "joint_stationary" || s == "joint-stationary") return FWeighting::joint_stationary;
    throw config_error("unknown f_weighting '" + s + "' (expected time_reversal or joint_stationary)");
}

struct Blocks {
    SubstochasticMatrix v00, v01, v10, v11;
};

struct ReturnChain {
    StochasticMatrix v_tilde;
    Matrix d_weighted;  // sum_l rho^l D(l)
};

struct Counts {
    std::size_t total = 0;
    std::size_t transient = 0;
    std::size_t recurrent = 0;
    std::size_t s0 = 0;
};

struct CycleAnalysis {
    Blocks v_blocks;
    StochasticMatrix v_tilde;
    Matrix d_weighted;
    Distribution pi;
    Matrix r;
    Matrix f;
    Matrix u;
};

struct StabilityReport {
    double rho = 0.0;
    double alpha = 0.0;
    FWeighting weighting = FWeighting::joint_stationary;
    double max_r = 0.0;
    double lambda_max_u = 0.0;
    double lambda_max_u_alt = 0.0;  // the other weighting, for comparison
    double omega_prime = 0.0;
    double omega = 0.0;
    double omega_alt = 0.0;
    bool verdict_loose = false;   // omega_prime < 1
    bool verdict_tight = false;   // omega < 1
    bool verdict_robust = false;  // same statistic as verdict_tight
    markov::IrreducibilityCheck ia_check;
    Counts counts;
    std::vector<std::string> s0_labels;
    CycleAnalysis analysis;
};

// =============================================================================
// Pipeline stages
// =============================================================================

namespace detail {

inline Matrix submatrix(const Matrix& m, const IndexSet& rows, const IndexSet& cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                m(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
    return out;
}

inline void require_returning(const Blocks& b) {
    if (b.v11.empty()) return;
    const double sr = markov::spectral_radius(b.v11.entries());
    if (sr >= 1.0 - 1e-12) {
        throw Error(Errc::divergent_cycle,
                    fmt::format("spectral radius of the closed-loop block is {:.15g}; cycles may never end", sr));
    }
}

inline StochasticMatrix as_return_chain(Matrix v, std::vector<std::string> labels) {
    // Clean round-off so validation sees exact zeros and unit row sums.
    v = v.cwiseMax(0.0);
    return StochasticMatrix(std::move(v), std::move(labels));
}

}  // namespace detail

/// Four blocks with S0 first. S0 may be the full set (then only V00 is
/// nonempty) but not empty.
inline Blocks partition(const StochasticMatrix& z, const IndexSet& s0) {
    if (s0.empty()) throw Error(Errc::empty_partition, "S0 is empty");
    std::vector<bool> in_s0(z.size(), false);
    for (auto i : s0) {
        if (i >= z.size()) throw Error(Errc::dimension_mismatch, "S0 index out of range");
        in_s0[i] = true;
    }
    IndexSet s1;
    for (std::size_t i = 0; i < z.size(); ++i)
        if (!in_s0[i]) s1.push_back(i);
    const Matrix& m = z.entries();
    return {SubstochasticMatrix(detail::submatrix(m, s0, s0)), SubstochasticMatrix(detail::submatrix(m, s0, s1)),
            SubstochasticMatrix(detail::submatrix(m, s1, s0)), SubstochasticMatrix(detail::submatrix(m, s1, s1))};
}

/// Closed forms V~ = V00 + V01 (I - V11)^-1 V10 and
/// sum_l rho^l D(l) = rho V00 + rho^2 V01 (I - rho V11)^-1 V10.
inline ReturnChain return_chain(const Blocks& b, double rho, std::vector<std::string> labels = {}) {
    detail::require_returning(b);
    const Matrix& v00 = b.v00.entries();
    Matrix vt = v00;
    Matrix dw = rho * v00;
    if (!b.v11.empty()) {
        const auto n1 = b.v11.rows();
        const Matrix eye = Matrix::Identity(n1, n1);
        vt += b.v01.entries() * (eye - b.v11.entries()).partialPivLu().solve(b.v10.entries());
        dw += rho * rho * b.v01.entries() * (eye - rho * b.v11.entries()).partialPivLu().solve(b.v10.entries());
    }
    return {detail::as_return_chain(std::move(vt), std::move(labels)), std::move(dw)};
}

/// Same quantities by summing D(l) term by term until the newest term's
/// largest entry drops below 1e-14 and so does the probability of a cycle
/// still being open (a zero term alone does not end the sum: excursions can
/// skip lengths).
inline ReturnChain return_chain_series(const Blocks& b, double rho, std::vector<std::string> labels = {}) {
    detail::require_returning(b);
    const Matrix& v00 = b.v00.entries();
    Matrix vt = v00;
    Matrix dw = rho * v00;
    if (!b.v11.empty()) {
        const std::size_t states = static_cast<std::size_t>(v00.rows() + b.v11.rows());
        const std::size_t backstop = std::max<std::size_t>(10 * states, 20000);
        Matrix open = b.v01.entries();  // V01 V11^(l-2)
        double rho_l = rho * rho;
        bool converged = false;
        for (std::size_t l = 2; l <= backstop; ++l) {
            const Matrix term = open * b.v10.entries();
            vt += term;
            dw += rho_l * term;
            open = open * b.v11.entries();
            if (term.maxCoeff() < kSeriesTolerance && open.rowwise().sum().maxCoeff() < kSeriesTolerance) {
                converged = true;
                break;
            }
            rho_l *= rho;
        }
        if (!converged) {
            throw Error(Errc::divergent_cycle,
                        fmt::format("cycle-length series not converged after {} terms", backstop));
        }
    }
    return {detail::as_return_chain(std::move(vt), std::move(labels)), std::move(dw)};
}

/// r_ij = [sum_l rho^l D(l)]_ij / v~_ij, zero where v~_ij <= 1e-15.
inline Matrix conditional_r(const Matrix& d_weighted, const StochasticMatrix& v_tilde) {
    const Matrix& vt = v_tilde.entries();
    Matrix r = Matrix::Zero(vt.rows(), vt.cols());
    for (Eigen::Index i = 0; i < vt.rows(); ++i)
        for (Eigen::Index j = 0; j < vt.cols(); ++j)
            if (vt(i, j) > kZeroReturn) r(i, j) = d_weighted(i, j) / vt(i, j);
    return r;
}

inline Matrix conditional_r(const Blocks& b, const StochasticMatrix& v_tilde, double rho) {
    if (!(rho > 0.0 && rho < 1.0)) throw config_error(fmt::format("rho = {} outside (0, 1)", rho));
    return conditional_r(return_chain(b, rho).d_weighted, v_tilde);
}

inline Matrix build_F(const StochasticMatrix& v_tilde, const Distribution& pi, FWeighting weighting) {
    const Vector& w = pi.weights();
    if (static_cast<std::size_t>(w.size()) != v_tilde.size()) {
        throw Error(Errc::dimension_mismatch, "stationary vector does not match the return chain");
    }
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        if (w(i) <= kMinStationaryMass) {
            throw Error(Errc::zero_stationary_mass,
                        fmt::format("state {} has stationary mass {:.3g}", v_tilde.labels()[static_cast<std::size_t>(i)],
                                    w(i)));
        }
    }
    const Vector right = weighting == FWeighting::time_reversal ? Vector(w.cwiseInverse()) : w;
    return w.asDiagonal() * v_tilde.entries() * right.asDiagonal();
}

/// U[i*S + k, k*S + k'] = r[k, i] * f[k', k]; zero elsewhere.
inline Matrix build_U(const Matrix& r, const Matrix& f) {
    const auto s = r.rows();
    Matrix u = Matrix::Zero(s * s, s * s);
    for (Eigen::Index i = 0; i < s; ++i)
        for (Eigen::Index k = 0; k < s; ++k)
            for (Eigen::Index kp = 0; kp < s; ++kp) u(i * s + k, k * s + kp) = r(k, i) * f(kp, k);
    return u;
}

// =============================================================================
// Full pipeline
// =============================================================================

/// Certificates for the chain `z` with open-loop set `s0`. Transient states
/// are removed first; the recurrent part must be a single closed class.
inline StabilityReport certify(const StochasticMatrix& z, const IndexSet& s0, const PlantMargins& margins,
                               FWeighting weighting = FWeighting::joint_stationary) {
    StabilityReport rep;
    rep.rho = margins.rho();
    rep.alpha = margins.alpha();
    rep.weighting = weighting;

    const auto classes = markov::recurrent_states(z);
    rep.counts.total = z.size();
    rep.counts.transient = classes.transient.size();
    rep.counts.recurrent = classes.recurrent.size();
    if (classes.closed_classes != 1) {
        throw Error(Errc::not_irreducible,
                    fmt::format("chain has {} closed classes; expected exactly one", classes.closed_classes));
    }
    const StochasticMatrix w = markov::restrict(z, classes.recurrent);

    std::vector<bool> in_s0(z.size(), false);
    for (auto i : s0) {
        if (i >= z.size()) throw Error(Errc::dimension_mismatch, "S0 index out of range");
        in_s0[i] = true;
    }
    IndexSet s0r;
    for (std::size_t k = 0; k < classes.recurrent.size(); ++k)
        if (in_s0[classes.recurrent[k]]) s0r.push_back(k);
    rep.counts.s0 = s0r.size();
    if (s0r.empty()) throw Error(Errc::empty_partition, "no recurrent state lies in S0");
    if (s0r.size() == w.size()) {
        throw Error(Errc::no_closed_loop_states, "every recurrent state is open-loop; S1 is empty");
    }
    if (s0r.size() > kMaxS0) {
        throw Error(Errc::size_limit, fmt::format("|S0| = {} exceeds {}", s0r.size(), kMaxS0));
    }
    for (auto k : s0r) rep.s0_labels.push_back(w.labels()[k]);

    CycleAnalysis& a = rep.analysis;
    a.v_blocks = partition(w, s0r);
    auto rc = return_chain(a.v_blocks, margins.rho(), rep.s0_labels);
    a.v_tilde = std::move(rc.v_tilde);
    a.d_weighted = std::move(rc.d_weighted);
    rep.ia_check = markov::is_irreducible_aperiodic(a.v_tilde);
    a.pi = markov::stationary(a.v_tilde);
    a.r = conditional_r(a.d_weighted, a.v_tilde);
    a.f = build_F(a.v_tilde, a.pi, weighting);
    a.u = build_U(a.r, a.f);

    const FWeighting other =
        weighting == FWeighting::time_reversal ? FWeighting::joint_stationary : FWeighting::time_reversal;
    const double gain = margins.alpha() / margins.rho();
    rep.max_r = a.r.maxCoeff();
    rep.lambda_max_u = markov::spectral_radius(a.u);
    rep.lambda_max_u_alt = markov::spectral_radius(build_U(a.r, build_F(a.v_tilde, a.pi, other)));
    rep.omega_prime = gain * rep.max_r;
    rep.omega = gain * rep.lambda_max_u;
    rep.omega_alt = gain * rep.lambda_max_u_alt;
    rep.verdict_loose = rep.omega_prime < 1.0;
    rep.verdict_tight = rep.omega < 1.0;
    rep.verdict_robust = rep.verdict_tight;
    return rep;
}

}  // namespace wncs::stability
