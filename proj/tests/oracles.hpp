#pragma once

// Test-only reference computations. Nothing here calls into the library's
// numerical routines, so agreement with the library is a genuine cross-check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Characteristic polynomial coefficients c[0..n] of det(zI - A), monic
/// (c[n] = 1), by the Faddeev-LeVerrier recursion.
inline std::vector<double> char_poly(const Matrix& a) {
    const auto n = a.rows();
    std::vector<double> c(static_cast<std::size_t>(n + 1), 0.0);
    c[static_cast<std::size_t>(n)] = 1.0;
    Matrix m = Matrix::Zero(n, n);
    const Matrix eye = Matrix::Identity(n, n);
    for (Eigen::Index k = 1; k <= n; ++k) {
        m = a * m + c[static_cast<std::size_t>(n - k + 1)] * eye;
        c[static_cast<std::size_t>(n - k)] = -(a * m).trace() / static_cast<double>(k);
    }
    return c;
}

/// All roots of a monic polynomial by Durand-Kerner iteration.
inline std::vector<std::complex<double>> poly_roots(const std::vector<double>& c) {
    const std::size_t n = c.size() - 1;
    std::vector<std::complex<double>> z(n);
    const std::complex<double> seed(0.4, 0.9);
    for (std::size_t i = 0; i < n; ++i) z[i] = std::pow(seed, static_cast<double>(i));
    auto eval = [&](std::complex<double> x) {
        std::complex<double> acc = 0.0;
        for (std::size_t k = n + 1; k-- > 0;) acc = acc * x + c[k];
        return acc;
    };
    for (int it = 0; it < 5000; ++it) {
        double delta = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::complex<double> denom = 1.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i) denom *= (z[i] - z[j]);
            if (std::abs(denom) < 1e-300) denom = 1e-300;
            const auto step = eval(z[i]) / denom;
            z[i] -= step;
            delta = std::max(delta, std::abs(step));
        }
        if (delta < 1e-15) break;
    }
    return z;
}

inline double spectral_radius(const Matrix& a) {
    if (a.rows() == 0) return 0.0;
    double best = 0.0;
    for (const auto& r : poly_roots(char_poly(a))) best = std::max(best, std::abs(r));
    return best;
}

/// Random row-stochastic matrix whose support contains the cycle
/// 0 -> 1 -> ... -> n-1 -> 0 plus a self-loop at 0, so it is irreducible
/// and aperiodic.
inline Matrix random_irreducible(std::mt19937_64& gen, int n, double density) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix m = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j)
            if (u(gen) < density) m(i, j) = u(gen);
        m(i, (i + 1) % n) += 0.05 + u(gen);
    }
    m(0, 0) += 0.05 + u(gen);
    for (int i = 0; i < n; ++i) m.row(i) /= m.row(i).sum();
    return m;
}

/// Walks the chain with std::discrete_distribution and returns visit frequencies.
inline Vector occupation(const Matrix& p, std::size_t steps, std::uint64_t seed, int start = 0) {
    std::mt19937_64 gen(seed);
    std::vector<std::discrete_distribution<int>> rows;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        std::vector<double> w;
        for (Eigen::Index j = 0; j < p.cols(); ++j) w.push_back(p(i, j));
        rows.emplace_back(w.begin(), w.end());
    }
    Vector freq = Vector::Zero(p.rows());
    int s = start;
    for (std::size_t t = 0; t < steps; ++t) {
        s = rows[static_cast<std::size_t>(s)](gen);
        freq(s) += 1.0;
    }
    return freq / static_cast<double>(steps);
}

/// Empirical return chain: walk the chain, record consecutive visits to the
/// set {0..s0-1}, return row-normalised counts of (previous, next) pairs.
inline Matrix empirical_return_chain(const Matrix& p, int s0, std::size_t cycles, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::vector<std::discrete_distribution<int>> rows;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        std::vector<double> w;
        for (Eigen::Index j = 0; j < p.cols(); ++j) w.push_back(p(i, j));
        rows.emplace_back(w.begin(), w.end());
    }
    Matrix counts = Matrix::Zero(s0, s0);
    int s = 0;
    int last = 0;
    std::size_t done = 0;
    while (done < cycles) {
        s = rows[static_cast<std::size_t>(s)](gen);
        if (s < s0) {
            counts(last, s) += 1.0;
            last = s;
            ++done;
        }
    }
    for (Eigen::Index i = 0; i < s0; ++i) {
        const double t = counts.row(i).sum();
        if (t > 0) counts.row(i) /= t;
    }
    return counts;
}

}  // namespace oracle
