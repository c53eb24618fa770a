#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kobs/edmd.hpp"
#include "oracles.hpp"

using namespace kobs;
using namespace kobs::oracle;

TEST(Edmd, SnapshotsDoNotCrossEpisodes) {
    auto cfg = LiftingConfig::linear(1, 1);
    std::vector<Mat> X{Mat::Constant(1, 3, 1.0), Mat::Constant(1, 3, 2.0)};
    std::vector<Mat> U{Mat::Zero(1, 3), Mat::Zero(1, 3)};
    X[0](0, 2) = 5;
    auto s = build_snapshots(X, U, cfg);
    EXPECT_EQ(s.q(), 4);
    EXPECT_EQ(s.ThetaPlus(0, 1), 5);
    EXPECT_EQ(s.Psi(0, 2), 2);
    EXPECT_THROW(build_snapshots(X, {Mat::Zero(2, 3), Mat::Zero(1, 3)}, cfg), std::invalid_argument);
}

TEST(Edmd, ExactRecoveryAtZeroAlpha) {
    auto cfg = LiftingConfig::linear(3, 2);
    for (unsigned seed = 1; seed <= 10; ++seed) {
        auto d = linear_data(seed);
        auto s = build_snapshots(d.X, d.In, cfg);
        auto ridge = fit_edmd_tikhonov(s, 0.0, cfg, 1e-3);
        auto ls = fit_least_squares(s, cfg, 1e-3);
        EXPECT_LT((ridge.U - d.U).norm(), 1e-8);
        EXPECT_LT((ridge.U - ls.U).norm(), 1e-10);
        EXPECT_LT(ridge.residual_rms, 1e-6);
        EXPECT_FALSE(ridge.pinv_fallback);
    }
}

TEST(Edmd, RidgeShrinks) {
    auto cfg = LiftingConfig::linear(3, 2);
    std::mt19937 g(5);
    std::normal_distribution<double> N;
    for (unsigned seed = 0; seed < 20; ++seed) {
        auto d = linear_data(100 + seed, 3, 2, 2, 40);
        for (auto& x : d.X) x += 0.1 * Mat::NullaryExpr(x.rows(), x.cols(), [&] { return N(g); });
        auto m = moments(build_snapshots(d.X, d.In, cfg));
        double prev = 1e300;
        for (double a : {0.0, 1.0, 10.0, 100.0, 1e4}) {
            const double nrm = fit_edmd_tikhonov(m, a, cfg, 1).U.norm();
            EXPECT_LE(nrm, prev * (1 + 1e-12));
            prev = nrm;
        }
    }
}

TEST(Edmd, SingularGramFallsBack) {
    auto cfg = LiftingConfig::linear(2, 1);
    // second state copies the first
    Mat x(2, 50), u(1, 50);
    for (int k = 0; k < 50; ++k) {
        x(0, k) = x(1, k) = std::sin(0.3 * k);
        u(0, k) = std::cos(0.7 * k);
    }
    auto s = build_snapshots({x}, {u}, cfg);
    auto r = fit_edmd_tikhonov(s, 0.0, cfg, 1);
    auto ls = fit_least_squares(s, cfg, 1);
    EXPECT_TRUE(r.pinv_fallback);
    EXPECT_TRUE(ls.pinv_fallback);
    EXPECT_LT((r.U - ls.U).norm(), 1e-6);
}

// scalar moments with a closed-form flip: A(alpha) = a h / (h + alpha / q)
TEST(Edmd, StabilizingAlphaMatchesScan) {
    auto cfg = LiftingConfig::linear(1, 1);
    Moments m;
    m.q = 100;
    const double h = 0.5, a = 1.11;
    m.H = Mat::Identity(2, 2);
    m.H(0, 0) = h;
    m.G = Mat::Zero(1, 2);
    m.G(0, 0) = a * h;
    m.T2 = Mat::Identity(1, 1);
    double scan = -1;
    for (int i = 0; i <= 2000; ++i) {
        const double al = 0.01 * i;
        if (is_schur(fit_edmd_tikhonov(m, al, cfg, 1).A())) {
            scan = al;
            break;
        }
    }
    ASSERT_GT(scan, 5.0);
    ASSERT_LT(scan, 6.0);
    for (double tol : {0.5, 1e-3}) {
        auto f = min_stabilizing_alpha({m}, {cfg}, 1.0, 100.0, tol);
        EXPECT_LE(std::abs(f.alpha - scan), tol + 0.01) << tol;
        EXPECT_TRUE(is_schur(f.models[0].A()));
        EXPECT_LT(f.worst_rho, 1.0);
    }
    EXPECT_THROW(min_stabilizing_alpha({m}, {cfg}, 1.0, 2.0), std::runtime_error);
    m.G(0, 0) = 0.5 * h;
    EXPECT_EQ(min_stabilizing_alpha({m}, {cfg}, 1.0, 100.0).alpha, 0.0);
}

TEST(Edmd, LocalPredictionRelifts) {
    auto cfg = LiftingConfig::drive(100, 0.3);
    KoopmanModel m;
    m.cfg = cfg;
    m.U = Mat::Zero(3, 4);
    m.U(0, 0) = 1;
    m.U(0, 1) = 1e-3;
    m.U(1, 1) = 0.9;
    m.U(1, 2) = 0.5;  // sin coordinate drives velocity
    m.U(1, 3) = 0.1;
    m.U(2, 2) = 7;    // discarded by the retraction
    Vec x0(2);
    x0 << 0.01, 1.0;
    Mat u = Mat::Constant(1, 2, 2.0);
    auto p = predict_local(m, x0, u);
    Vec x1(2);
    x1 << 0.01 + 1e-3, 0.9 + 0.5 * std::sin(1.0 + 0.3) + 0.2;
    EXPECT_LT((p.X.col(1) - x1).norm(), 1e-14);
    Vec x2(2);
    x2 << x1(0) + 1e-3 * x1(1), 0.9 * x1(1) + 0.5 * std::sin(100 * x1(0) + 0.3) + 0.2;
    EXPECT_LT((p.X.col(2) - x2).norm(), 1e-14);
}

TEST(Edmd, StateSpaceView) {
    auto cfg = LiftingConfig::drive(100, 0);
    KoopmanModel m;
    m.cfg = cfg;
    m.U = Mat::Random(3, 4);
    auto ss = m.state_space({0, 1});
    EXPECT_EQ(ss.nx(), 3);
    EXPECT_EQ(ss.ny(), 2);
    EXPECT_EQ(ss.C(1, 1), 1.0);
    EXPECT_EQ(ss.B, m.U.col(3));
    EXPECT_THROW(m.state_space({3}), std::invalid_argument);
}
