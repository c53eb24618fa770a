#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kobs/weight_fit.hpp"

using namespace kobs;

namespace {

std::vector<double> first_order_targets(const FrequencyGrid& g, double k, double p) {
    std::vector<double> b;
    for (double th : g.theta) b.push_back(std::abs(k / (1.0 - p * std::polar(1.0, -th))));
    return b;
}

void expect_bound(const BoundWeight& w, const std::vector<double>& b) {
    auto m = w.magnitude(w.grid);
    for (std::size_t k = 0; k < b.size(); ++k) ASSERT_GE(m[k], b[k]) << k;
    EXPECT_LE(w.max_undershoot, 0.0);
    EXPECT_LE(w.max_pole_modulus, 1 - 1e-6);
}

}  // namespace

TEST(WeightFit, ReflectionRoundTrip) {
    std::vector<double> k{0.3, -0.7, 0.95};
    auto a = reflection_to_poly(k);
    EXPECT_EQ(a.size(), 4u);
    EXPECT_EQ(a[0], 1.0);
    auto back = poly_to_reflection(a);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(back[i], k[i], 1e-12);
    EXPECT_THROW(poly_to_reflection({1.0, -2.0}), std::invalid_argument);
}

TEST(WeightFit, ConstantProfile) {
    auto g = FrequencyGrid::default_grid();
    std::vector<double> b(g.size(), 0.5);
    auto w = fit_bound(b, g, 0);
    ASSERT_EQ(w.num.size(), 1u);
    EXPECT_NEAR(w.num[0], 0.5, 1e-12);
    expect_bound(w, b);
    EXPECT_NEAR(w.mean_log_overshoot, 0.0, 1e-12);
}

TEST(WeightFit, FirstOrderTargetRecovered) {
    auto g = FrequencyGrid::default_grid();
    auto b = first_order_targets(g, 0.3, 0.8);
    auto w = fit_bound(b, g, 1);
    expect_bound(w, b);
    EXPECT_LT(w.mean_log_overshoot, 0.01);
    EXPECT_FALSE(w.warning);
}

TEST(WeightFit, HigherOrderNeverWorse) {
    auto g = FrequencyGrid::logspace(1e-3, M_PI, 128);
    // resonant-looking profile a first-order weight cannot follow
    std::vector<double> b;
    for (double th : g.theta) {
        const cplx zi = std::polar(1.0, -th);
        b.push_back(std::abs(0.05 / (1.0 - 1.6 * std::cos(0.3) * zi + 0.64 * zi * zi)) + 0.02);
    }
    double prev = INFINITY;
    for (int n = 0; n <= 3; ++n) {
        auto w = fit_bound(b, g, n);
        expect_bound(w, b);
        EXPECT_EQ(w.order, n);
        EXPECT_LE(w.mean_log_overshoot, prev + 1e-12) << n;
        prev = w.mean_log_overshoot;
    }
}

TEST(WeightFit, RandomProfilesStayBoundedAndStable) {
    std::mt19937 gen(8);
    std::uniform_real_distribution<double> U(0, 1);
    auto g = FrequencyGrid::logspace(1e-3, M_PI, 96);
    for (int t = 0; t < 6; ++t) {
        std::vector<double> b;
        double x = U(gen);
        for (std::size_t k = 0; k < g.size(); ++k) {
            x = std::abs(x + 0.1 * (U(gen) - 0.5));
            b.push_back(k % 17 == 0 ? 0.0 : x);
        }
        auto w = fit_bound(b, g, 2);
        expect_bound(w, b);
    }
}

TEST(WeightFit, ZeroTargets) {
    auto g = FrequencyGrid::logspace(1e-3, M_PI, 32);
    std::vector<double> b(g.size(), 0.0);
    auto w = fit_bound(b, g, 2);
    for (double c : w.num) EXPECT_EQ(c, 0.0);
    EXPECT_EQ(w.magnitude(0.3), 0.0);
    EXPECT_THROW(fit_bound(std::vector<double>(3, 1.0), g, 1), std::invalid_argument);
    b[0] = -1;
    EXPECT_THROW(fit_bound(b, g, 1), std::invalid_argument);
}

TEST(WeightFit, CapLimitsLowFrequencyGain) {
    auto g = FrequencyGrid::logspace(0.05, M_PI, 128);
    auto b = first_order_targets(g, 0.05, 0.95);
    FitOptions opt;
    auto free = fit_bound(b, g, 1, 1.0, opt);
    opt.cap = 0.9;
    auto capped = fit_bound(b, g, 1, 1.0, opt);
    expect_bound(capped, b);
    EXPECT_GT(free.magnitude(0.0), 0.95);
    EXPECT_LT(capped.magnitude(0.0), 0.9 * 1.02);
}

TEST(WeightFit, StateSpaceMatchesRational) {
    BoundWeight w;
    w.num = {0.4, -0.1, 0.05};
    w.den = {1.0, -0.5, 0.06};
    w.dt = 1e-3;
    auto ss = w.state_space();
    EXPECT_EQ(ss.nx(), 2);
    for (double th : {1e-3, 0.2, 1.0, 3.0}) EXPECT_LT(std::abs(eval_tf(ss, th)(0, 0) - w.eval(th)), 1e-12);
    BoundWeight c;
    c.num = {0.7};
    EXPECT_EQ(c.state_space().nx(), 0);
    EXPECT_NEAR(eval_tf(c.state_space(), 0.5)(0, 0).real(), 0.7, 1e-15);
}

TEST(WeightFit, MatrixFitPerEntry) {
    auto g = FrequencyGrid::logspace(1e-3, M_PI, 64);
    // 2x1 residuals: entry 0 is large and flat, entry 1 first-order and small
    ResidualSet rs;
    rs.grid = g;
    rs.drive_ids = {0, 1};
    auto b1 = first_order_targets(g, 0.01, 0.9);
    for (int d = 0; d < 2; ++d) {
        std::vector<CMat> r;
        for (std::size_t k = 0; k < g.size(); ++k) {
            CMat e(2, 1);
            e << (d ? 1.0 : 0.6), (d ? 0.5 : 1.0) * b1[k];
            r.push_back(e);
        }
        rs.residuals.push_back(r);
    }
    rs.bound = population_bound(rs);
    auto W = fit_bound_matrix(rs, {{0}, {1}});
    ASSERT_EQ(W.size(), 2u);
    expect_bound(W[0][0], rs.entry_bound(0, 0));
    expect_bound(W[1][0], rs.entry_bound(1, 0));
    EXPECT_NEAR(W[0][0].magnitude(1.0), 1.0, 1e-9);
    // the small entry keeps its own, much smaller, bound
    EXPECT_LT(W[1][0].magnitude(3.0), 0.02);
    auto ss = weight_state_space(W);
    EXPECT_EQ(ss.nu(), 1);
    EXPECT_EQ(ss.ny(), 2);
    for (double th : {0.01, 2.0}) {
        auto r = eval_tf(ss, th);
        EXPECT_LT(std::abs(r(0, 0) - W[0][0].eval(th)), 1e-12);
        EXPECT_LT(std::abs(r(1, 0) - W[1][0].eval(th)), 1e-12);
    }
    auto mags = weight_magnitudes(W, g);
    EXPECT_NEAR(mags[5](1, 0), W[1][0].magnitude(g.theta[5]), 1e-15);
    EXPECT_THROW(fit_bound_matrix(rs, {{0}}), std::invalid_argument);
}
