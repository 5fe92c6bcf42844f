#include "oracles.hpp"
#include "wncs/stability.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace wncs;
using markov::IndexSet;
using markov::Matrix;
using markov::StochasticMatrix;
using stability::FWeighting;
using stability::PlantMargins;

namespace {

Matrix small_v() {
    Matrix v(4, 4);
    v << 0.10, 0.10, 0.10, 0.70,  //
        0.30, 0.20, 0.10, 0.40,   //
        0.60, 0.20, 0.10, 0.10,   //
        0.90, 0.05, 0.02, 0.03;
    return v;
}

IndexSet random_split(std::mt19937_64& gen, int n) {
    IndexSet s0;
    std::bernoulli_distribution coin(0.4);
    for (int i = 0; i < n; ++i)
        if (coin(gen)) s0.push_back(static_cast<std::size_t>(i));
    if (s0.empty()) s0.push_back(0);
    if (s0.size() == static_cast<std::size_t>(n)) s0.pop_back();
    return s0;
}

}  // namespace

// =============================================================================
// Published four-state example
// =============================================================================

TEST(SmallExample, ReproducesPublishedMatrices) {
    const auto rep = stability::certify(StochasticMatrix(small_v()), {0, 1}, PlantMargins(0.8, 0.8));
    const auto& a = rep.analysis;

    Matrix vt(2, 2), r(2, 2), u(4, 4);
    vt << 0.8378, 0.1622, 0.7546, 0.2454;
    r << 0.6511, 0.7323, 0.6971, 0.7673;
    u << 0.3695, 0.0716, 0, 0,  //
        0, 0, 0.0165, 0.0054,   //
        0.4156, 0.0805, 0, 0,   //
        0, 0, 0.0181, 0.0059;

    EXPECT_LE((a.v_tilde.entries() - vt).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_NEAR(a.pi[0], 0.8231, 1e-3);
    EXPECT_NEAR(a.pi[1], 0.1769, 1e-3);
    EXPECT_LE((a.r - r).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_LE((a.u - u).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_NEAR(rep.max_r, 0.7673, 1e-3);
    EXPECT_NEAR(rep.lambda_max_u, 0.3731, 1e-3);
    EXPECT_NEAR(rep.omega_prime, rep.max_r, 1e-15);
    EXPECT_TRUE(rep.verdict_loose);
    EXPECT_TRUE(rep.verdict_tight);
    EXPECT_EQ(rep.counts.total, 4u);
    EXPECT_EQ(rep.counts.s0, 2u);
    EXPECT_EQ(rep.counts.transient, 0u);
}

TEST(SmallExample, WeightingsDiffer) {
    const StochasticMatrix v(small_v());
    const auto joint = stability::certify(v, {0, 1}, PlantMargins(0.8, 0.8), FWeighting::joint_stationary);
    const auto rev = stability::certify(v, {0, 1}, PlantMargins(0.8, 0.8), FWeighting::time_reversal);
    EXPECT_NEAR(joint.lambda_max_u_alt, rev.lambda_max_u, 1e-14);
    EXPECT_NEAR(rev.lambda_max_u_alt, joint.lambda_max_u, 1e-14);
    EXPECT_GT(rev.lambda_max_u, joint.lambda_max_u);
    EXPECT_LE(rev.lambda_max_u, rev.max_r + 1e-12);
}

// =============================================================================
// Return chain
// =============================================================================

TEST(ReturnChain, GeometricCycleOracle) {
    // S0 = {0}; a cycle leaves with 1 - a and comes back each slot w.p. q.
    for (double a : {0.0, 0.3, 0.9}) {
        for (double q : {0.1, 0.5, 1.0}) {
            Matrix v(2, 2);
            v << a, 1 - a, q, 1 - q;
            const double rho = 0.7;
            double expected = rho * a;
            double tail = (1 - a) * q;
            for (int l = 2; l < 5000; ++l) {
                expected += std::pow(rho, l) * tail;
                tail *= 1 - q;
            }
            const auto blocks = stability::partition(StochasticMatrix(v), {0});
            const auto rc = stability::return_chain(blocks, rho);
            EXPECT_NEAR(rc.v_tilde(0, 0), 1.0, 1e-12);
            EXPECT_NEAR(stability::conditional_r(blocks, rc.v_tilde, rho)(0, 0), expected, 1e-12);
        }
    }
    // a = 0, q = 1: every cycle lasts exactly two slots.
    Matrix v(2, 2);
    v << 0, 1, 1, 0;
    const auto blocks = stability::partition(StochasticMatrix(v), {0});
    EXPECT_NEAR(stability::conditional_r(blocks, stability::return_chain(blocks, 0.5).v_tilde, 0.5)(0, 0), 0.25,
                1e-15);
}

TEST(ReturnChain, SeriesMatchesClosedForm) {
    std::mt19937_64 gen(17);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + trial % 10;
        const StochasticMatrix v(oracle::random_irreducible(gen, n, 0.4));
        const auto blocks = stability::partition(v, random_split(gen, n));
        const auto closed = stability::return_chain(blocks, 0.8);
        const auto series = stability::return_chain_series(blocks, 0.8);
        ASSERT_LE((closed.v_tilde.entries() - series.v_tilde.entries()).cwiseAbs().maxCoeff(), 1e-10);
        ASSERT_LE((closed.d_weighted - series.d_weighted).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(ReturnChain, MatchesSimulatedReturns) {
    std::mt19937_64 gen(99);
    const Matrix p = oracle::random_irreducible(gen, 6, 0.5);
    const auto blocks = stability::partition(StochasticMatrix(p), {0, 1, 2});
    const auto vt = stability::return_chain(blocks, 0.5).v_tilde.entries();
    const Matrix emp = oracle::empirical_return_chain(p, 3, 400000, 5);
    EXPECT_LE((vt - emp).cwiseAbs().maxCoeff(), 0.01);
}

TEST(ReturnChain, ClosedLoopTrapIsDivergent) {
    Matrix v(3, 3);
    v << 0.5, 0.5, 0, 0, 0.5, 0.5, 0, 0.5, 0.5;
    const auto blocks = stability::partition(StochasticMatrix(v), {0});
    for (auto fn : {&stability::return_chain, &stability::return_chain_series}) {
        try {
            fn(blocks, 0.5, {});
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::divergent_cycle);
        }
    }
}

TEST(ReturnChain, SlowReturnsStillConverge) {
    // An excursion lasts 100 slots on average; the series needs thousands of terms.
    Matrix v(2, 2);
    v << 0.5, 0.5, 1e-2, 1 - 1e-2;
    const auto blocks = stability::partition(StochasticMatrix(v), {0});
    const auto closed = stability::return_chain(blocks, 0.9);
    const auto series = stability::return_chain_series(blocks, 0.9);
    EXPECT_NEAR(series.v_tilde(0, 0), 1.0, 1e-10);
    EXPECT_NEAR(closed.d_weighted(0, 0), series.d_weighted(0, 0), 1e-12);
}

TEST(ReturnChain, SeriesBackstop) {
    Matrix v(2, 2);
    v << 0.5, 0.5, 1e-4, 1 - 1e-4;
    const auto blocks = stability::partition(StochasticMatrix(v), {0});
    EXPECT_NO_THROW(stability::return_chain(blocks, 0.9));
    try {
        stability::return_chain_series(blocks, 0.9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::divergent_cycle);
    }
}

TEST(ReturnChain, SeriesSurvivesMissingCycleLengths) {
    // 0 -> 1 -> 2 -> 0: no cycle of length 2, every cycle has length 3.
    Matrix v(3, 3);
    v << 0, 1, 0, 0, 0, 1, 1, 0, 0;
    const auto blocks = stability::partition(StochasticMatrix(v), {0});
    const auto series = stability::return_chain_series(blocks, 0.5);
    EXPECT_NEAR(series.v_tilde(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(series.d_weighted(0, 0), 0.125, 1e-15);
}

TEST(ReturnChain, HalfGeometricCycles) {
    Matrix v(2, 2);
    v << 0.5, 0.5, 0.5, 0.5;
    const auto blocks = stability::partition(StochasticMatrix(v), {0});
    const auto rc = stability::return_chain(blocks, 0.8);
    EXPECT_NEAR(stability::conditional_r(rc.d_weighted, rc.v_tilde)(0, 0), 2.0 / 3.0, 1e-12);
}

TEST(Partition, Blocks) {
    const auto b = stability::partition(StochasticMatrix(small_v()), {1, 3});
    EXPECT_DOUBLE_EQ(b.v00.entries()(0, 1), 0.40);
    EXPECT_DOUBLE_EQ(b.v01.entries()(1, 0), 0.90);
    EXPECT_DOUBLE_EQ(b.v10.entries()(1, 0), 0.20);
    EXPECT_DOUBLE_EQ(b.v11.entries()(0, 0), 0.10);
    try {
        stability::partition(StochasticMatrix(small_v()), {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::empty_partition);
    }
}

// =============================================================================
// F and U
// =============================================================================

TEST(CouplingMatrices, ColumnSums) {
    std::mt19937_64 gen(4);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + trial % 6;
        const StochasticMatrix vt(oracle::random_irreducible(gen, n, 0.5));
        const auto pi = markov::stationary(vt);
        const Matrix rev = stability::build_F(vt, pi, FWeighting::time_reversal);
        const Matrix joint = stability::build_F(vt, pi, FWeighting::joint_stationary);
        for (int k = 0; k < n; ++k) {
            ASSERT_NEAR(rev.col(k).sum(), 1.0, 1e-12);
            ASSERT_NEAR(joint.col(k).sum(), pi[static_cast<std::size_t>(k)] * pi[static_cast<std::size_t>(k)], 1e-12);
        }
    }
}

TEST(CouplingMatrices, ZeroStationaryMassRejected) {
    Matrix v(2, 2);
    v << 0, 1, 0, 1;
    Eigen::VectorXd w(2);
    w << 0.0, 1.0;
    try {
        stability::build_F(StochasticMatrix(v), markov::Distribution(w), FWeighting::time_reversal);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::zero_stationary_mass);
    }
}

TEST(CouplingMatrices, UZeroWhenRZero) {
    const Matrix u = stability::build_U(Matrix::Zero(3, 3), Matrix::Constant(3, 3, 0.2));
    EXPECT_EQ(u.rows(), 9);
    EXPECT_EQ(markov::spectral_radius(u), 0.0);
}

// The eigen-equation of U reduces to an S0 x S0 problem: lambda(U) equals
// the spectral radius of A with A[k, k'] = f[k', k] r[k', k].
TEST(CouplingMatrices, SpectralRadiusReducesToSmallProblem) {
    std::mt19937_64 gen(8);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 3 + trial % 6;
        const StochasticMatrix v(oracle::random_irreducible(gen, n, 0.5));
        const auto s0 = random_split(gen, n);
        for (auto w : {FWeighting::time_reversal, FWeighting::joint_stationary}) {
            const auto rep = stability::certify(v, s0, PlantMargins(0.7, 1.0), w);
            const auto& a = rep.analysis;
            const Matrix small = (a.f.array() * a.r.array()).matrix().transpose();
            ASSERT_NEAR(rep.lambda_max_u, oracle::spectral_radius(small), 1e-9);
        }
    }
}

// =============================================================================
// Certificates
// =============================================================================

TEST(Certify, PerronOrderingOnRandomChains) {
    std::mt19937_64 gen(1234);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int trial = 0; trial < 150; ++trial) {
        const int n = 2 + trial % 14;
        const StochasticMatrix v(oracle::random_irreducible(gen, n, 0.35));
        const auto s0 = random_split(gen, n);
        const PlantMargins m(u(gen), 2 * u(gen));
        for (auto w : {FWeighting::time_reversal, FWeighting::joint_stationary}) {
            const auto rep = stability::certify(v, s0, m, w);
            ASSERT_LE(rep.omega, rep.omega_prime + 1e-9);
            ASSERT_GE(rep.lambda_max_u, 0.0);
            ASSERT_LE(rep.max_r, m.rho() + 1e-12);
            for (Eigen::Index i = 0; i < rep.analysis.u.rows(); ++i) {
                ASSERT_LE(rep.analysis.u.row(i).sum(), rep.max_r + 1e-12);
            }
        }
    }
}

TEST(Certify, MonotoneInRho) {
    std::mt19937_64 gen(77);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 3 + trial % 7;
        const StochasticMatrix v(oracle::random_irreducible(gen, n, 0.4));
        const auto s0 = random_split(gen, n);
        double prev_r = 0, prev_u = 0;
        for (double rho : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            const auto rep = stability::certify(v, s0, PlantMargins(rho, 1.0));
            ASSERT_GE(rep.max_r, prev_r - 1e-12);
            ASSERT_GE(rep.lambda_max_u, prev_u - 1e-12);
            prev_r = rep.max_r;
            prev_u = rep.lambda_max_u;
        }
    }
}

TEST(Certify, SingleOpenLoopStateCollapses) {
    std::mt19937_64 gen(31);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 2 + trial % 9;
        const StochasticMatrix v(oracle::random_irreducible(gen, n, 0.4));
        for (auto w : {FWeighting::time_reversal, FWeighting::joint_stationary}) {
            const auto rep = stability::certify(v, {0}, PlantMargins(0.6, 0.9), w);
            ASSERT_EQ(rep.analysis.u.rows(), 1);
            ASSERT_NEAR(rep.omega, rep.omega_prime, 1e-12);
            ASSERT_NEAR(rep.analysis.v_tilde(0, 0), 1.0, 1e-12);
        }
    }
}

TEST(Certify, TransientStatesAreDropped) {
    Matrix v = Matrix::Zero(5, 5);
    v.topLeftCorner(4, 4) = small_v();
    v(4, 0) = 0.5;
    v(4, 4) = 0.5;
    Matrix padded = Matrix::Zero(5, 5);
    // put the transient state first so the index mapping is exercised
    const std::vector<int> perm = {4, 0, 1, 2, 3};
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) padded(i, j) = v(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    const auto rep = stability::certify(StochasticMatrix(padded), {0, 1, 2}, PlantMargins(0.8, 0.8));
    EXPECT_EQ(rep.counts.transient, 1u);
    EXPECT_EQ(rep.counts.recurrent, 4u);
    EXPECT_EQ(rep.counts.s0, 2u);
    EXPECT_NEAR(rep.lambda_max_u, 0.3731, 1e-3);
    EXPECT_EQ(rep.s0_labels, (std::vector<std::string>{"s1", "s2"}));
}

TEST(Certify, ErrorCases) {
    auto code_of = [](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::config_error;
    };
    const PlantMargins m(0.8, 0.8);
    const StochasticMatrix v(small_v());
    EXPECT_EQ(code_of([&] { stability::certify(v, {0, 1, 2, 3}, m); }), Errc::no_closed_loop_states);
    EXPECT_EQ(code_of([&] { stability::certify(v, {}, m); }), Errc::empty_partition);
    EXPECT_EQ(code_of([&] { stability::certify(StochasticMatrix(Matrix::Identity(2, 2)), {0}, m); }),
              Errc::not_irreducible);

    std::mt19937_64 gen(3);
    const StochasticMatrix big(oracle::random_irreducible(gen, 70, 0.1));
    IndexSet s0;
    for (std::size_t i = 0; i < 65; ++i) s0.push_back(i);
    EXPECT_EQ(code_of([&] { stability::certify(big, s0, m); }), Errc::size_limit);
    s0.pop_back();
    EXPECT_NO_THROW(stability::certify(big, s0, m));

    EXPECT_THROW(PlantMargins(1.0, 0.5), Error);
    EXPECT_THROW(PlantMargins(0.5, 0.0), Error);
    EXPECT_THROW(stability::parse_f_weighting("both"), Error);
}
