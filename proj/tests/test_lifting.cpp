#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kobs/lifting.hpp"

using namespace kobs;

namespace {

// constant-velocity run whose velocity error is a pure sinusoid in r*theta
Episode sinusoid_episode(double v, double phi, double amp, double seconds, double r = 100) {
    Episode ep;
    ep.dt = 1e-3;
    const auto n = static_cast<std::size_t>(seconds / ep.dt);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = k * ep.dt, th = 0.3 + v * t;
        ep.t.push_back(t);
        ep.ref_pos.push_back(th);
        ep.ref_vel.push_back(v);
        ep.meas_pos.push_back(th);
        ep.meas_vel.push_back(v - amp * std::sin(r * th + phi));
        ep.current.push_back(0);
    }
    return ep;
}

}  // namespace

TEST(Lifting, RoundTripLinear) {
    auto cfg = LiftingConfig::linear(3, 2);
    std::mt19937 g(1);
    std::normal_distribution<double> N;
    for (int i = 0; i < 50; ++i) {
        Vec x(3), u(2);
        for (int j = 0; j < 3; ++j) x(j) = N(g);
        for (int j = 0; j < 2; ++j) u(j) = N(g);
        auto l = lift(cfg, x, u);
        EXPECT_EQ(retract(cfg, l.theta_part), x);
        EXPECT_EQ(l.upsilon_part, u);
    }
}

TEST(Lifting, DriveValues) {
    auto cfg = LiftingConfig::drive(100, 0.7);
    Vec x(2), u(1);
    x << 0.01, 2.0;
    u << 0.5;
    auto l = lift(cfg, x, u);
    ASSERT_EQ(l.theta_part.size(), 3);
    EXPECT_DOUBLE_EQ(l.theta_part(0), 0.01);
    EXPECT_DOUBLE_EQ(l.theta_part(1), 2.0);
    EXPECT_NEAR(l.theta_part(2), std::sin(1.0 + 0.7), 1e-15);
    EXPECT_EQ(retract(cfg, l.theta_part), x);
    EXPECT_EQ(cfg.p_theta(), 3);
    EXPECT_EQ(cfg.p_upsilon(), 1);
}

TEST(Lifting, DimensionErrors) {
    auto cfg = LiftingConfig::drive(100, 0);
    EXPECT_THROW(lift(cfg, Vec::Zero(3), Vec::Zero(1)), std::invalid_argument);
    EXPECT_THROW(lift(cfg, Vec::Zero(2), Vec::Zero(2)), std::invalid_argument);
    EXPECT_THROW(retract(cfg, Vec::Zero(2)), std::invalid_argument);
    LiftingConfig bad = cfg;
    bad.state_dim = 3;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Lifting, CircularMeanWraps) {
    EXPECT_NEAR(std::remainder(circular_mean({0.1, 2 * M_PI - 0.1}), 2 * M_PI), 0.0, 1e-12);
    EXPECT_NEAR(circular_mean({1.0, 1.2}), 1.1, 1e-12);
    EXPECT_NEAR(wrap_2pi(-0.5), 2 * M_PI - 0.5, 1e-15);
}

TEST(Lifting, SegmentsOfStepProfile) {
    // 0.3 s at 0, 0.8 s at 1, 0.6 s at -2 with a small ripple, 0.2 s at 3
    std::vector<double> v;
    for (int k = 0; k < 300; ++k) v.push_back(0);
    for (int k = 0; k < 800; ++k) v.push_back(1);
    for (int k = 0; k < 600; ++k) v.push_back(-2 + 0.001 * std::sin(k * 0.1));
    for (int k = 0; k < 200; ++k) v.push_back(3);
    auto s = constant_velocity_segments(v, 1e-3, M_PI);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].begin, 300u);
    EXPECT_EQ(s[0].end, 1100u);
    EXPECT_EQ(s[1].begin, 1100u);
    EXPECT_EQ(s[1].end, 1700u);
}

TEST(Lifting, SegmentDeviationBelowTolerance) {
    std::mt19937 g(3);
    std::uniform_real_distribution<double> U(-1, 1);
    std::vector<double> v;
    double x = 0;
    for (int k = 0; k < 20000; ++k) {
        x += 0.002 * U(g);
        v.push_back(x);
    }
    const double vmax = 1.0;
    for (auto s : constant_velocity_segments(v, 1e-3, vmax)) {
        double m = 0;
        for (auto k = s.begin; k < s.end; ++k) m += v[k];
        m /= double(s.end - s.begin);
        for (auto k = s.begin; k < s.end; ++k) EXPECT_LT(std::abs(v[k] - m), 0.01 * vmax);
        EXPECT_GE(s.end - s.begin, 500u);
    }
}

TEST(Lifting, CalibrationRecoversPhase) {
    auto cfg = LiftingConfig::drive(100, 0);
    PhaseOptions opt;
    auto est = calibrate_phase({sinusoid_episode(1.0, 0.7, 0.01, 2.0)}, cfg, opt);
    EXPECT_EQ(est.segments_used, 1);
    EXPECT_LE(std::abs(std::remainder(est.phi - 0.7, 2 * M_PI)), 2 * M_PI / opt.n_samples);
}

TEST(Lifting, CalibrationAveragesDirections) {
    auto cfg = LiftingConfig::drive(100, 0);
    PhaseOptions opt;
    opt.quadrature = true;
    // responses lag by a quarter period with the sign of the travel direction
    const double phi = 5.9;
    auto pos = sinusoid_episode(1.5, phi + M_PI / 2, 0.01, 1.0);
    auto neg = sinusoid_episode(-1.5, phi - M_PI / 2, 0.01, 1.0);
    auto est = calibrate_phase({pos, neg}, cfg, opt);
    EXPECT_EQ(est.segments_used, 2);
    EXPECT_LE(std::abs(std::remainder(est.phi - phi, 2 * M_PI)), 2 * M_PI / opt.n_samples);
}

TEST(Lifting, ZeroEnergySegmentsSkipped) {
    auto cfg = LiftingConfig::drive(100, 0);
    auto flat = sinusoid_episode(1.0, 0, 0.0, 1.0);
    auto good = sinusoid_episode(1.0, 2.0, 0.01, 1.0);
    auto est = calibrate_phase({flat, good}, cfg);
    EXPECT_EQ(est.segments_used, 1);
    EXPECT_EQ(est.segments_skipped, 1);
    EXPECT_NEAR(est.phi, 2.0, 2 * M_PI / 1000);
    EXPECT_THROW(calibrate_phase({flat}, cfg), std::runtime_error);
    EXPECT_THROW(calibrate_phase({good}, LiftingConfig::linear(2, 1)), std::invalid_argument);
}
