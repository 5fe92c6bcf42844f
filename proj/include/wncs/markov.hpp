#pragma once

// =============================================================================
// Finite Markov-chain utilities
// =============================================================================
// Validation of row-stochastic matrices, support-graph analysis (closed
// classes, transient states, period), stationary distributions and spectral
// radius of nonnegative matrices. Dense storage throughout.
// =============================================================================

#include "wncs/error.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <queue>
#include <string>
#include <utility>
#include <vector>

namespace wncs::markov {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexSet = std::vector<std::size_t>;  // sorted, unique

inline constexpr double kRowSumTolerance = 1e-9;
inline constexpr double kEdgeThreshold = 1e-12;  // entry > this counts as an edge
inline constexpr double kStationaryResidual = 1e-10;
inline constexpr std::size_t kMaxPowerIterations = 100000;
inline constexpr Eigen::Index kDenseEigenLimit = 512;

namespace detail {

inline std::vector<std::string> default_labels(std::size_t n) {
    std::vector<std::string> labels;
    labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) labels.push_back("s" + std::to_string(i));
    return labels;
}

inline void require_square(const Matrix& m) {
    if (m.rows() != m.cols()) {
        throw Error(Errc::non_square, "matrix is " + std::to_string(m.rows()) + "x" +
                                          std::to_string(m.cols()));
    }
}

inline void require_nonnegative(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (!(m(i, j) >= 0.0)) {
                throw Error(Errc::negative_entry, "entry (" + std::to_string(i) + ", " +
                                                      std::to_string(j) +
                                                      ") = " + std::to_string(m(i, j)));
            }
        }
    }
}

}  // namespace detail

// =============================================================================
// Domain types
// =============================================================================

/// Row-stochastic matrix over a labeled state space. Construction validates;
/// instances are immutable afterwards.
class StochasticMatrix {
public:
    StochasticMatrix() = default;

    explicit StochasticMatrix(Matrix entries, std::vector<std::string> labels = {})
        : entries_(std::move(entries)), labels_(std::move(labels)) {
        detail::require_square(entries_);
        const auto n = static_cast<std::size_t>(entries_.rows());
        if (labels_.empty()) labels_ = detail::default_labels(n);
        if (labels_.size() != n) {
            throw Error(Errc::dimension_mismatch, std::to_string(labels_.size()) +
                                                      " labels for a " + std::to_string(n) +
                                                      "-state matrix");
        }
        auto sorted = labels_;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw Error(Errc::dimension_mismatch, "state labels are not unique");
        }
        detail::require_nonnegative(entries_);
        for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
            const double s = entries_.row(i).sum();
            if (std::abs(s - 1.0) > kRowSumTolerance) {
                throw RowSumDeviation(static_cast<std::size_t>(i), s);
            }
            if (entries_.row(i).maxCoeff() > 1.0 + kRowSumTolerance) {
                throw Error(Errc::row_sum_deviation,
                            "row " + std::to_string(i) + " has an entry above 1");
            }
        }
    }

    const Matrix& entries() const noexcept { return entries_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
    double operator()(std::size_t i, std::size_t j) const {
        return entries_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }

private:
    Matrix entries_;
    std::vector<std::string> labels_;
};

/// Nonnegative matrix whose rows sum to at most one.
class SubstochasticMatrix {
public:
    SubstochasticMatrix() = default;

    explicit SubstochasticMatrix(Matrix entries) : entries_(std::move(entries)) {
        detail::require_nonnegative(entries_);
        for (Eigen::Index i = 0; i < entries_.rows(); ++i) {
            const double s = entries_.row(i).sum();
            if (s > 1.0 + kRowSumTolerance) throw RowSumDeviation(static_cast<std::size_t>(i), s);
        }
    }

    const Matrix& entries() const noexcept { return entries_; }
    Eigen::Index rows() const noexcept { return entries_.rows(); }
    Eigen::Index cols() const noexcept { return entries_.cols(); }
    bool empty() const noexcept { return entries_.size() == 0; }

private:
    Matrix entries_;
};

/// Probability vector.
class Distribution {
public:
    Distribution() = default;

    explicit Distribution(Vector weights) : weights_(std::move(weights)) {
        for (Eigen::Index i = 0; i < weights_.size(); ++i) {
            if (!(weights_(i) >= 0.0)) {
                throw Error(Errc::negative_entry, "weight " + std::to_string(i) + " = " +
                                                      std::to_string(weights_(i)));
            }
        }
        if (std::abs(weights_.sum() - 1.0) > kRowSumTolerance) {
            throw Error(Errc::row_sum_deviation,
                        "distribution sums to " + std::to_string(weights_.sum()));
        }
    }

    const Vector& weights() const noexcept { return weights_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(weights_.size()); }
    double operator[](std::size_t i) const { return weights_(static_cast<Eigen::Index>(i)); }

private:
    Vector weights_;
};

struct StateClasses {
    IndexSet recurrent;
    IndexSet transient;
    std::size_t closed_classes = 0;
};

struct IrreducibilityCheck {
    bool irreducible = false;
    unsigned period = 0;  // 0 when the chain is not irreducible

    bool aperiodic() const noexcept { return irreducible && period == 1; }
};

// =============================================================================
// Support graph
// =============================================================================

using Adjacency = std::vector<std::vector<std::size_t>>;

inline Adjacency support_graph(const Matrix& m) {
    Adjacency adj(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (m(i, j) > kEdgeThreshold) adj[static_cast<std::size_t>(i)].push_back(static_cast<std::size_t>(j));
        }
    }
    return adj;
}

/// Strongly connected components (iterative Tarjan). Returns the component id
/// of every vertex; ids are assigned in reverse topological order.
inline std::vector<std::size_t> strong_components(const Adjacency& adj, std::size_t* count = nullptr) {
    const std::size_t n = adj.size();
    constexpr std::size_t unvisited = static_cast<std::size_t>(-1);
    std::vector<std::size_t> index(n, unvisited), low(n, 0), comp(n, unvisited);
    std::vector<bool> on_stack(n, false);
    std::vector<std::size_t> stack;
    std::vector<std::pair<std::size_t, std::size_t>> call;  // (vertex, next edge)
    std::size_t next_index = 0, next_comp = 0;

    for (std::size_t root = 0; root < n; ++root) {
        if (index[root] != unvisited) continue;
        call.emplace_back(root, 0);
        index[root] = low[root] = next_index++;
        stack.push_back(root);
        on_stack[root] = true;
        while (!call.empty()) {
            auto& [v, e] = call.back();
            if (e < adj[v].size()) {
                const std::size_t w = adj[v][e++];
                if (index[w] == unvisited) {
                    index[w] = low[w] = next_index++;
                    stack.push_back(w);
                    on_stack[w] = true;
                    call.emplace_back(w, 0);
                } else if (on_stack[w]) {
                    low[v] = std::min(low[v], index[w]);
                }
                continue;
            }
            if (low[v] == index[v]) {
                std::size_t w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = false;
                    comp[w] = next_comp;
                } while (w != v);
                ++next_comp;
            }
            const std::size_t finished = v;
            call.pop_back();
            if (!call.empty()) {
                const std::size_t parent = call.back().first;
                low[parent] = std::min(low[parent], low[finished]);
            }
        }
    }
    if (count) *count = next_comp;
    return comp;
}

// =============================================================================
// Operations
// =============================================================================

inline StochasticMatrix validate_stochastic(const Matrix& m, std::vector<std::string> labels = {}) {
    return StochasticMatrix(m, std::move(labels));
}

/// Recurrent states are the members of closed strongly connected components
/// of the support digraph; everything else is transient.
inline StateClasses recurrent_states(const StochasticMatrix& m) {
    const auto adj = support_graph(m.entries());
    std::size_t ncomp = 0;
    const auto comp = strong_components(adj, &ncomp);
    std::vector<bool> closed(ncomp, true);
    for (std::size_t v = 0; v < adj.size(); ++v) {
        for (std::size_t w : adj[v]) {
            if (comp[w] != comp[v]) closed[comp[v]] = false;
        }
    }
    StateClasses out;
    out.closed_classes = static_cast<std::size_t>(std::count(closed.begin(), closed.end(), true));
    for (std::size_t v = 0; v < adj.size(); ++v) {
        (closed[comp[v]] ? out.recurrent : out.transient).push_back(v);
    }
    return out;
}

/// Principal submatrix over `keep`. Every kept row must still sum to one.
inline StochasticMatrix restrict(const StochasticMatrix& m, const IndexSet& keep) {
    const auto k = static_cast<Eigen::Index>(keep.size());
    Matrix sub(k, k);
    std::vector<std::string> labels;
    labels.reserve(keep.size());
    for (Eigen::Index a = 0; a < k; ++a) {
        if (keep[static_cast<std::size_t>(a)] >= m.size()) {
            throw Error(Errc::dimension_mismatch, "restriction index out of range");
        }
        for (Eigen::Index b = 0; b < k; ++b) {
            sub(a, b) = m(keep[static_cast<std::size_t>(a)], keep[static_cast<std::size_t>(b)]);
        }
        labels.push_back(m.labels()[keep[static_cast<std::size_t>(a)]]);
        const double s = sub.row(a).sum();
        if (s < 1.0 - kRowSumTolerance) {
            throw Error(Errc::leaky_restriction, "state " + labels.back() + " keeps only " +
                                                     std::to_string(s) + " of its mass");
        }
    }
    return StochasticMatrix(std::move(sub), std::move(labels));
}

inline IrreducibilityCheck is_irreducible_aperiodic(const StochasticMatrix& m) {
    const auto adj = support_graph(m.entries());
    const std::size_t n = adj.size();
    IrreducibilityCheck out;
    if (n == 0) return out;
    std::size_t ncomp = 0;
    strong_components(adj, &ncomp);
    if (ncomp != 1) return out;
    out.irreducible = true;

    // Period: gcd of (level[u] + 1 - level[v]) over all edges, BFS levels from 0.
    std::vector<long> level(n, -1);
    std::queue<std::size_t> q;
    level[0] = 0;
    q.push(0);
    while (!q.empty()) {
        const auto u = q.front();
        q.pop();
        for (auto v : adj[u]) {
            if (level[v] < 0) {
                level[v] = level[u] + 1;
                q.push(v);
            }
        }
    }
    long g = 0;
    for (std::size_t u = 0; u < n; ++u) {
        for (auto v : adj[u]) g = std::gcd(g, std::abs(level[u] + 1 - level[v]));
    }
    out.period = static_cast<unsigned>(g);
    return out;
}

/// Unique stationary distribution of an irreducible chain, from the linear
/// system (m^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
inline Distribution stationary(const StochasticMatrix& m) {
    if (!is_irreducible_aperiodic(m).irreducible) {
        throw Error(Errc::not_irreducible, "stationary distribution is not unique");
    }
    const auto n = static_cast<Eigen::Index>(m.size());
    Matrix a = m.entries().transpose() - Matrix::Identity(n, n);
    a.row(n - 1).setOnes();
    Vector rhs = Vector::Zero(n);
    rhs(n - 1) = 1.0;
    Eigen::PartialPivLU<Matrix> lu(a);
    Vector pi = lu.solve(rhs);
    for (int refine = 0; refine < 3; ++refine) {
        const Vector residual = rhs - a * pi;
        if (residual.lpNorm<Eigen::Infinity>() < 1e-15) break;
        pi += lu.solve(residual);
    }
    pi = pi.cwiseMax(0.0);
    pi /= pi.sum();
    return Distribution(std::move(pi));
}

/// Max-norm of pi^T m - pi^T.
inline double stationary_residual(const StochasticMatrix& m, const Distribution& pi) {
    return (m.entries().transpose() * pi.weights() - pi.weights()).lpNorm<Eigen::Infinity>();
}

/// Spectral radius by (shifted) power iteration. The unshifted iteration is
/// tried first; if the estimate oscillates (imprimitive matrices) the
/// iteration restarts on m + cI with c the max row sum, whose dominant
/// eigenvalue rho + c is strictly separated in modulus.
inline double spectral_radius_power(const Matrix& m, std::size_t max_iterations = kMaxPowerIterations,
                                    double tolerance = 1e-14) {
    detail::require_square(m);
    detail::require_nonnegative(m);
    const auto n = m.rows();
    if (n == 0) return 0.0;

    const std::size_t unshifted_budget = std::min<std::size_t>(max_iterations, 2000);
    auto iterate = [&](double shift, std::size_t budget, std::size_t& used, double& result) {
        Vector x = Vector::Ones(n);
        double previous = -1.0;
        int stable = 0;
        for (std::size_t it = 0; it < budget; ++it, ++used) {
            Vector y = m * x;
            if (shift != 0.0) y += shift * x;
            const double norm = y.lpNorm<Eigen::Infinity>();
            if (norm == 0.0) {
                result = 0.0;
                return true;
            }
            const double estimate = norm - shift;
            x = y / norm;
            if (std::abs(estimate - previous) <= tolerance * std::max(norm, 1e-300)) {
                if (++stable >= 3) {
                    result = std::max(estimate, 0.0);
                    return true;
                }
            } else {
                stable = 0;
            }
            previous = estimate;
        }
        return false;
    };

    std::size_t used = 0;
    double result = 0.0;
    if (iterate(0.0, unshifted_budget, used, result)) return result;
    const double shift = std::max(m.rowwise().sum().maxCoeff(), 1e-300);
    if (iterate(shift, max_iterations - used, used, result)) return result;
    throw NoConvergence(max_iterations);
}

/// Spectral radius from a full dense eigensolve.
inline double spectral_radius_eigen(const Matrix& m) {
    detail::require_square(m);
    if (m.rows() == 0) return 0.0;
    Eigen::EigenSolver<Matrix> solver(m, false);
    if (solver.info() != Eigen::Success) throw NoConvergence(0);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// Spectral radius of a nonnegative square matrix: full eigensolve up to
/// 512 states, power iteration beyond.
inline double spectral_radius(const Matrix& m) {
    detail::require_square(m);
    detail::require_nonnegative(m);
    if (m.rows() <= kDenseEigenLimit) return spectral_radius_eigen(m);
    return spectral_radius_power(m);
}

}  // namespace wncs::markov
