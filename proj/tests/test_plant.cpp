#include "wncs/plant.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace wncs;
using plant::Vector;

namespace {

Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

}  // namespace

TEST(Saturation, Clamps) {
    EXPECT_EQ(plant::sat(12.0), 10.0);
    EXPECT_EQ(plant::sat(-10.5), -10.0);
    EXPECT_EQ(plant::sat(3.25), 3.25);
}

TEST(SaturatedPlant, StepAndPolicy) {
    const plant::SaturatedPlant p;
    const Vector x = vec2(3, 9);
    EXPECT_TRUE(p.step(x, vec2(0, 0)).isApprox(vec2(9, -10)));
    EXPECT_TRUE(p.step(x, vec2(1, 2), vec2(0.5, -0.5)).isApprox(vec2(10.5, -8.5)));
    EXPECT_TRUE(p.policy(x).isApprox(vec2(-9, 5.05)));
    EXPECT_DOUBLE_EQ(p.lyapunov(vec2(3, 4)), 5.0);
    EXPECT_EQ(p.dims().state, 2);
}

TEST(SaturatedPlant, ClosedLoopContracts) {
    // Under kappa the state becomes (0, -0.495 sat(x1 + x2)), so |x+| <= 0.495 sqrt(2) |x|.
    const plant::SaturatedPlant p;
    std::mt19937_64 gen(1);
    std::uniform_real_distribution<double> u(-50, 50);
    for (int i = 0; i < 10000; ++i) {
        const Vector x = vec2(u(gen), u(gen));
        const Vector next = p.step(x, p.policy(x));
        ASSERT_NEAR(next(0), 0.0, 1e-12);
        ASSERT_LE(p.lyapunov(next), 0.495 * std::sqrt(2.0) * p.lyapunov(x) + 1e-12);
    }
}

TEST(GenerateSequence, WorkedExample) {
    const plant::SaturatedPlant p;
    const auto seq = plant::generate_sequence(p, vec2(1, 1), 2);
    ASSERT_EQ(seq.size(), 2u);
    EXPECT_TRUE(seq[0].isApprox(vec2(-1, 1.01)));
    EXPECT_TRUE(seq[1].isApprox(vec2(0.99, 0.505 * -0.99)));
    EXPECT_TRUE(plant::generate_sequence(p, vec2(1, 1), 0).empty());
}

TEST(GenerateSequence, PrefixAndSelfConsistency) {
    const plant::SaturatedPlant p;
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(-20, 20);
    for (int trial = 0; trial < 200; ++trial) {
        const Vector x = vec2(u(gen), u(gen));
        const auto longer = plant::generate_sequence(p, x, 5);
        for (int n = 1; n <= 5; ++n) {
            const auto shorter = plant::generate_sequence(p, x, n);
            for (int i = 0; i < n; ++i) ASSERT_EQ(shorter[static_cast<std::size_t>(i)], longer[static_cast<std::size_t>(i)]);
        }
        // Each command is the policy at the nominal prediction.
        Vector xp = x;
        for (const auto& cmd : longer) {
            ASSERT_TRUE(cmd.isApprox(p.policy(xp)));
            xp = p.step(xp, cmd);
        }
    }
}

TEST(LinearPlant, Basics) {
    const plant::LinearScalarPlant p(1.2, 0.4);
    const Vector x = Vector::Constant(1, 2.0);
    EXPECT_DOUBLE_EQ(p.step(x, p.policy(x))(0), 1.6);
    EXPECT_DOUBLE_EQ(p.step(x, Vector::Zero(1))(0), 2.4);
    const auto seq = plant::generate_sequence(p, x, 3);
    EXPECT_DOUBLE_EQ(seq[2](0), -0.4 * 2.0 * 0.8 * 0.8);
}

TEST(CheckMargins, Linear) {
    const plant::LinearScalarPlant p(1.5, 1.25);
    const Vector lo = Vector::Constant(1, -5), hi = Vector::Constant(1, 5);
    auto rep = plant::check_margins(p, stability::PlantMargins(0.5, 2.0), 1000, lo, hi);
    EXPECT_NEAR(rep.ratio_closed, 0.25, 1e-12);
    EXPECT_NEAR(rep.ratio_open, 1.5, 1e-12);
    EXPECT_FALSE(rep.rho_violated);
    EXPECT_FALSE(rep.alpha_violated);
    EXPECT_EQ(rep.evaluated, 1000u);
    rep = plant::check_margins(p, stability::PlantMargins(0.2, 1.5), 1000, lo, hi);
    EXPECT_TRUE(rep.rho_violated);
    EXPECT_TRUE(rep.alpha_violated);
    EXPECT_THROW(plant::check_margins(p, stability::PlantMargins(0.4, 1.5), 10, Vector::Zero(2), Vector::Zero(2)),
                 Error);
}

TEST(CheckMargins, SaturatedPlant) {
    const plant::SaturatedPlant p;
    const Vector lo = vec2(-30, -30), hi = vec2(30, 30);
    const auto rep = plant::check_margins(p, stability::PlantMargins(0.8, 1.7), 20000, lo, hi, 5);
    EXPECT_FALSE(rep.rho_violated);
    EXPECT_FALSE(rep.alpha_violated);
    // the open-loop gain is bounded by the golden ratio
    EXPECT_LE(rep.ratio_open, (1 + std::sqrt(5.0)) / 2 + 1e-12);
    EXPECT_TRUE(plant::check_margins(p, stability::PlantMargins(0.6, 1.7), 20000, lo, hi, 5).rho_violated);
}

TEST(Registry, Lookup) {
    const plant::Registry r;
    EXPECT_EQ(r.names(), (std::vector<std::string>{"linear1d", "saturated2d"}));
    EXPECT_EQ(r.make("saturated2d")->name(), "saturated2d");
    EXPECT_EQ(r.make("linear1d", {1.1, 0.5})->dims().state, 1);
    EXPECT_THROW(r.make("pendulum"), Error);
    EXPECT_THROW(r.make("linear1d", {1.0}), Error);
    EXPECT_THROW(r.make("saturated2d", {1.0}), Error);
}

TEST(Noise, Validation) {
    plant::NoiseSpec n{plant::NoiseKind::gaussian, -0.1};
    EXPECT_THROW(n.validate(), Error);
    n.variance = 0.0;
    EXPECT_NO_THROW(n.validate());
    EXPECT_FALSE(n.active());
    n.variance = 0.1;
    EXPECT_TRUE(n.active());
}
