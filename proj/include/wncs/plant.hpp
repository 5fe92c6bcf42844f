#pragma once

// =============================================================================
// Plant models
// =============================================================================

#include "wncs/error.hpp"
#include "wncs/stability.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace wncs::plant {

using Vector = Eigen::VectorXd;

struct Dims {
    int state = 0;
    int input = 0;
};

/// Discrete-time plant x+ = f(x, u, w) with a stabilizing policy kappa and a
/// Lyapunov function V. Implementations must be stateless.
class PlantModel {
public:
    virtual ~PlantModel() = default;

    virtual Vector step(const Vector& x, const Vector& u, const Vector& w) const = 0;
    virtual Vector policy(const Vector& x) const = 0;
    virtual double lyapunov(const Vector& x) const = 0;
    virtual Dims dims() const = 0;
    virtual std::string name() const = 0;

    Vector step(const Vector& x, const Vector& u) const { return step(x, u, Vector::Zero(dims().state)); }
};

// =============================================================================
// Concrete plants
// =============================================================================

inline double sat(double v) { return std::clamp(v, -10.0, 10.0); }

/// x1+ = x2 + u1, x2+ = -sat(x1 + x2) + u2, with
/// kappa(x) = [-x2, 0.505 sat(x1 + x2)] and V(x) = |x|.
class SaturatedPlant final : public PlantModel {
public:
    using PlantModel::step;
    Vector step(const Vector& x, const Vector& u, const Vector& w) const override {
        Vector next(2);
        next(0) = x(1) + u(0) + w(0);
        next(1) = -sat(x(0) + x(1)) + u(1) + w(1);
        return next;
    }
    Vector policy(const Vector& x) const override {
        Vector u(2);
        u(0) = -x(1);
        u(1) = 0.505 * sat(x(0) + x(1));
        return u;
    }
    double lyapunov(const Vector& x) const override { return x.norm(); }
    Dims dims() const override { return {2, 2}; }
    std::string name() const override { return "saturated2d"; }
};

/// x+ = a x + u + w, kappa(x) = -k x, V(x) = |x|.
class LinearScalarPlant final : public PlantModel {
public:
    LinearScalarPlant(double a, double k) : a_(a), k_(k) {}

    using PlantModel::step;

    Vector step(const Vector& x, const Vector& u, const Vector& w) const override {
        return Vector::Constant(1, a_ * x(0) + u(0) + w(0));
    }
    Vector policy(const Vector& x) const override { return Vector::Constant(1, -k_ * x(0)); }
    double lyapunov(const Vector& x) const override { return std::abs(x(0)); }
    Dims dims() const override { return {1, 1}; }
    std::string name() const override { return "linear1d"; }

    double a() const noexcept { return a_; }
    double k() const noexcept { return k_; }

private:
    double a_;
    double k_;
};

// =============================================================================
// Registry
// =============================================================================

using PlantFactory = std::function<std::shared_ptr<const PlantModel>(const std::vector<double>& params)>;

/// Name -> factory map. Ships "saturated2d" (no parameters) and
/// "linear1d" (parameters: a k).
class Registry {
public:
    Registry() {
        add("saturated2d", [](const std::vector<double>& p) -> std::shared_ptr<const PlantModel> {
            if (!p.empty()) throw config_error("saturated2d takes no parameters");
            return std::make_shared<SaturatedPlant>();
        });
        add("linear1d", [](const std::vector<double>& p) -> std::shared_ptr<const PlantModel> {
            if (p.size() != 2) throw config_error("linear1d takes two parameters: a k");
            return std::make_shared<LinearScalarPlant>(p[0], p[1]);
        });
    }

    void add(const std::string& name, PlantFactory factory) { factories_[name] = std::move(factory); }

    std::shared_ptr<const PlantModel> make(const std::string& name, const std::vector<double>& params = {}) const {
        auto it = factories_.find(name);
        if (it == factories_.end()) throw config_error("unknown plant '" + name + "'");
        return it->second(params);
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : factories_) out.push_back(k);
        return out;
    }

private:
    std::map<std::string, PlantFactory> factories_;
};

// =============================================================================
// Noise and sequence generation
// =============================================================================

enum class NoiseKind { none, gaussian };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::none;
    double variance = 0.0;  // per coordinate

    void validate() const {
        if (!(variance >= 0.0)) throw config_error("noise variance must be >= 0");
    }
    bool active() const noexcept { return kind == NoiseKind::gaussian && variance > 0.0; }
};

/// Tentative commands from a noise-free rollout of the nominal model:
/// u_1 = kappa(x), x'_{i+1} = f(x'_i, u_i, 0), u_{i+1} = kappa(x'_{i+1}).
inline std::vector<Vector> generate_sequence(const PlantModel& model, const Vector& x, int n) {
    std::vector<Vector> seq;
    seq.reserve(static_cast<std::size_t>(std::max(n, 0)));
    Vector xp = x;
    for (int i = 0; i < n; ++i) {
        seq.push_back(model.policy(xp));
        if (i + 1 < n) xp = model.step(xp, seq.back());
    }
    return seq;
}

// =============================================================================
// Margin falsification
// =============================================================================

struct MarginReport {
    double ratio_closed = 0.0;  // max V(f(x, kappa(x), 0)) / V(x)
    double ratio_open = 0.0;    // max V(f(x, 0, 0)) / V(x)
    bool rho_violated = false;
    bool alpha_violated = false;
    std::size_t evaluated = 0;  // samples with V(x) >= 1e-12
};

/// Samples `samples` states uniformly in the box [lo, hi] and checks
/// V(f(x, kappa(x))) <= rho V(x) and V(f(x, 0)) < alpha V(x).
inline MarginReport check_margins(const PlantModel& model, const stability::PlantMargins& margins,
                                  std::size_t samples, const Vector& lo, const Vector& hi,
                                  std::uint64_t seed = 1) {
    const int ls = model.dims().state;
    if (lo.size() != ls || hi.size() != ls) throw Error(Errc::dimension_mismatch, "sampling box dimension");
    std::mt19937_64 gen(seed);
    MarginReport rep;
    const Vector zero_u = Vector::Zero(model.dims().input);
    for (std::size_t s = 0; s < samples; ++s) {
        Vector x(ls);
        for (int i = 0; i < ls; ++i) x(i) = std::uniform_real_distribution<double>(lo(i), hi(i))(gen);
        const double v = model.lyapunov(x);
        if (v < 1e-12) continue;
        ++rep.evaluated;
        rep.ratio_closed = std::max(rep.ratio_closed, model.lyapunov(model.step(x, model.policy(x))) / v);
        rep.ratio_open = std::max(rep.ratio_open, model.lyapunov(model.step(x, zero_u)) / v);
    }
    rep.rho_violated = rep.ratio_closed > margins.rho();
    rep.alpha_violated = rep.ratio_open >= margins.alpha();
    return rep;
}

}  // namespace wncs::plant
