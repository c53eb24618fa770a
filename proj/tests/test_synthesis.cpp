#include <gtest/gtest.h>

#include <random>

#include "kobs/synthesis.hpp"
#include "oracles.hpp"

using namespace kobs;
using namespace kobs::oracle;

namespace {

Mat m1(double v) { return Mat::Constant(1, 1, v); }
StateSpace ss1(double a, double b, double c, double d) { return StateSpace(m1(a), m1(b), m1(c), m1(d), 0.001); }

}  // namespace

TEST(GeneralizedPlant, ScalarHandSubstitution) {
    const double a = 0.9, b = 0.5, c = 2.0;
    StateSpace nom(m1(a), m1(b), m1(c), m1(0), 0.001);
    StateSpace Wp = ss1(0.1, 0.2, 0.3, 0.4), Wu = ss1(0.5, 0.6, 0.7, 0.8), Wd = ss1(0.15, 0.25, 0.35, 0.45);
    GeneralizedPlant P = build_generalized_plant(nom, Wp, Wu, Wd);
    ASSERT_EQ(P.sys.nx(), 5);
    Mat A(5, 5);
    A << a, 0, 0, b * 0.7, b * 0.35,  //
        0, a, 0, b * 0.7, 0,          //
        0.2, -0.2, 0.1, 0, 0,         //
        0, 0, 0, 0.5, 0,              //
        0, 0, 0, 0, 0.15;
    Mat B(5, 3);
    B << b * 0.8, b * 0.45, 0,  //
        b * 0.8, 0, b,          //
        0, 0, 0,                //
        0.6, 0, 0,              //
        0, 0.25, 0;
    Mat C(3, 5);
    C << 0.4, -0.4, 0.3, 0, 0,  //
        0, 0, 0, 0.7, 0.35,     //
        c, -c, 0, 0, 0;
    Mat D(3, 3);
    D << 0, 0, 0,  //
        0.8, 0.45, 0, //
        0, 0, 0;
    EXPECT_EQ((P.sys.A - A).norm(), 0.0);
    EXPECT_EQ((P.sys.B - B).norm(), 0.0);
    EXPECT_EQ((P.sys.C - C).norm(), 0.0);
    EXPECT_EQ((P.sys.D - D).norm(), 0.0);
}

TEST(GeneralizedPlant, ZeroUncertaintyWeightKillsChannel) {
    StateSpace nom(m1(0.9), m1(1), m1(1), m1(0), 0.001);
    GeneralizedPlant P = build_generalized_plant(nom, StateSpace::gain(m1(1), 0.001), StateSpace::gain(m1(1), 0.001),
                                                 ss1(0.5, 0.0, 0.0, 0.0));
    StateSpace t = select_io(P.sys, {P.nz1}, {P.nw1});
    FreqResponse fr = freq_response(t, FrequencyGrid::default_grid());
    for (const auto& s : fr.samples) EXPECT_EQ(std::abs(s(0, 0)), 0.0);
}

TEST(GeneralizedPlant, StateDimensionAndErrors) {
    Mat A = Mat::Identity(3, 3) * 0.5, B = Mat::Ones(3, 1), C = Mat::Zero(1, 3);
    C(0, 0) = 1;
    StateSpace nom(A, B, C, Mat::Zero(1, 1), 0.001);
    StateSpace Wp(Mat::Identity(2, 2) * 0.3, Mat::Ones(2, 3), Mat::Ones(3, 2), Mat::Identity(3, 3), 0.001);
    StateSpace Wd(Mat::Identity(3, 3) * 0.2, Mat::Ones(3, 1), Mat::Ones(1, 3), m1(0.1), 0.001);
    GeneralizedPlant P = build_generalized_plant(nom, Wp, StateSpace::gain(m1(1), 0.001), Wd);
    EXPECT_EQ(P.sys.nx(), 2 * 3 + 2 + 0 + 3);
    StateSpace badWp = StateSpace::gain(Mat::Identity(2, 2), 0.001);
    try {
        build_generalized_plant(nom, badWp, StateSpace::gain(m1(1), 0.001), Wd);
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("Wp"), std::string::npos);
    }
}

TEST(GeneralizedPlant, LinearInWeightData) {
    StateSpace nom(m1(0.8), m1(0.7), m1(1), m1(0), 0.001);
    auto P = [&](double d) {
        return build_generalized_plant(nom, StateSpace::gain(m1(1), 0.001), StateSpace::gain(m1(1), 0.001),
                                       StateSpace::gain(m1(d), 0.001));
    };
    GeneralizedPlant p1 = P(0.3), p2 = P(0.5), p12 = P(0.8), p0 = P(0.0);
    EXPECT_LT((p1.sys.B + p2.sys.B - p0.sys.B - p12.sys.B).norm(), 1e-15);
    EXPECT_LT((p1.sys.D + p2.sys.D - p0.sys.D - p12.sys.D).norm(), 1e-15);
}

TEST(Synthesis, H2MatchesRiccatiOracle) {
    for (double a : {0.5, 0.95, 1.2}) {
        GeneralizedPlant P = lqg_benchmark(a, 0.0);
        double ref = riccati_cost(P);
        SynthesisOptions o;
        o.sensor_noise = 0.0;
        o.h2_channel = H2Channel::W1;
        SynthesisResult r = synth_mixed_h2_hinf(P, o);
        ASSERT_TRUE(r.feasible) << r.message;
        EXPECT_NEAR(r.h2_cost, ref, 0.02 * ref) << "a=" << a;
        EXPECT_NEAR(r.h2_cost, r.sdp_h2, 0.01 * r.sdp_h2);
    }
}

TEST(Synthesis, InactiveConstraintLeavesCost) {
    GeneralizedPlant P = lqg_benchmark(0.9, 0.0);
    SynthesisOptions o;
    o.sensor_noise = 0.0;
    o.h2_channel = H2Channel::W1;
    SynthesisResult with = synth_mixed_h2_hinf(P, o);
    o.hinf_constraint = false;
    SynthesisResult without = synth_mixed_h2_hinf(P, o);
    ASSERT_TRUE(with.feasible && without.feasible);
    EXPECT_NEAR(with.h2_cost, without.h2_cost, 1e-3);
}

TEST(Synthesis, RandomPlantsPureVsMixedWithoutChannel) {
    std::mt19937 rng(17);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 3; ++trial) {
        const int n = 2;
        Mat A = Mat::NullaryExpr(n, n, [&] { return nd(rng); });
        A *= 0.9 / spectral_radius(A);
        Mat B(n, 4), C(4, n), D = Mat::Zero(4, 4);
        B << Mat::NullaryExpr(n, 1, [&] { return nd(rng); }), Mat::Zero(n, 1), Mat::Zero(n, 1),
            Mat::NullaryExpr(n, 1, [&] { return nd(rng); });
        C << Mat::NullaryExpr(1, n, [&] { return nd(rng); }), Mat::Zero(1, n), Mat::Zero(1, n),
            Mat::NullaryExpr(1, n, [&] { return nd(rng); });
        D(1, 3) = 0.3;  // control weight
        D(3, 1) = 0.2;  // sensor noise
        GeneralizedPlant P;
        P.sys = StateSpace(A, B, C, D, 1.0);
        P.nw1 = 2, P.nw2 = 1, P.nu = 1, P.nz1 = 2, P.nz2 = 1, P.ny = 1;
        SynthesisOptions o;
        o.sensor_noise = 0.0;
        o.h2_channel = H2Channel::W1;
        SynthesisResult mixed = synth_mixed_h2_hinf(P, o);
        o.hinf_constraint = false;
        SynthesisResult pure = synth_mixed_h2_hinf(P, o);
        ASSERT_TRUE(mixed.feasible && pure.feasible);
        EXPECT_NEAR(mixed.h2_cost, pure.h2_cost, 1e-5 * (1 + pure.h2_cost));
    }
}

TEST(Synthesis, ActiveConstraintAndPerturbedGainDetected) {
    // z2 = control effort seen through w2 -> x: the bound now depends on K
    GeneralizedPlant P = lqg_benchmark(0.9, 0.0, 1.0);
    P.sys.B(0, 2) = 1.0;  // w2 drives the state
    SynthesisOptions o;
    o.sensor_noise = 0.0;
    o.h2_channel = H2Channel::W1;
    o.hinf_constraint = false;
    SynthesisResult pure = synth_mixed_h2_hinf(P, o);
    ASSERT_TRUE(pure.feasible);
    o.hinf_constraint = true;
    o.hinf_level = 0.5 * pure.report.hinf_22;
    SynthesisResult mixed = synth_mixed_h2_hinf(P, o);
    ASSERT_TRUE(mixed.feasible) << mixed.message;
    EXPECT_LT(mixed.report.hinf_22, o.hinf_level * (1 + 1e-6));
    EXPECT_GE(mixed.h2_cost, pure.h2_cost * (1 - 1e-6));
    // constraint in normalized form: hinf_22 < 1 means scale the channel first
    GeneralizedPlant Pn = P;
    Pn.sys.C.row(2) /= o.hinf_level;
    Pn.sys.D.row(2) /= o.hinf_level;
    o.hinf_level = 1.0 - 1e-6;
    SynthesisResult norm = synth_mixed_h2_hinf(Pn, o);
    ASSERT_TRUE(norm.feasible);
    ClosedLoopReport ok = validate_closed_loop(Pn, norm.K, o);
    EXPECT_LT(ok.hinf_22, 1.0);
    // the shared Lyapunov matrix leaves slack here, x1.5 lands just under 1
    StateSpace Kp = norm.K;
    Kp.C *= 2.5;
    Kp.D *= 2.5;
    ClosedLoopReport bad = validate_closed_loop(Pn, Kp, o);
    EXPECT_TRUE(!bad.schur || bad.hinf_22 > 1.0) << ok.hinf_22 << " " << bad.hinf_22 << " " << norm.message;
}

TEST(Synthesis, ValidateZeroControllerGivesOpenLoop) {
    GeneralizedPlant P = lqg_benchmark(0.6, 0.5);
    SynthesisOptions o;
    o.sensor_noise = 0.0;
    ClosedLoopReport r = validate_closed_loop(P, StateSpace::gain(m1(0), 1.0), o);
    ASSERT_TRUE(r.schur);
    StateSpace ol = select_io(P.sys, {0, 1}, {0, 1});
    EXPECT_NEAR(r.h2_11, h2_norm(ol), 1e-12);
    EXPECT_NEAR(r.hinf_22, hinf_norm(select_io(P.sys, {2}, {2}), o.grid), 1e-12);
}

TEST(Synthesis, DrivePlantShapeMixed) {
    // two-state double-integrator-like model, measured position, lowpass weight
    const double dt = 0.001;
    Mat A(2, 2), B(2, 1), C(1, 2);
    A << 1.0, dt, 0.0, 0.9995;
    A *= 0.99995;
    B << 0.5 * dt * dt, dt;
    C << 1.0, 0.0;
    StateSpace nom(A, B, C, Mat::Zero(1, 1), dt);
    StateSpace Wd(m1(0.99), m1(1.0), m1(0.006), m1(0.04), dt);
    GeneralizedPlant P = build_generalized_plant(nom, StateSpace::gain(Mat::Identity(2, 2), dt),
                                                 StateSpace::gain(m1(1), dt), Wd);
    SynthesisResult r = synth_mixed_h2_hinf(P);
    ASSERT_TRUE(r.feasible) << r.message;
    EXPECT_LT(r.hinf_22, 1.0);
    EXPECT_TRUE(r.report.schur);
    EXPECT_NEAR(r.h2_cost, r.sdp_h2, 0.01 * r.sdp_h2) << r.message;
}

TEST(HinfSynthesis, UnityWeightsGammaMatchesGrid) {
    StateSpace nom(m1(0.9), m1(1), m1(1), m1(0), 0.001);
    GeneralizedPlant P = build_generalized_plant(nom, StateSpace::gain(m1(1), 0.001), StateSpace::gain(m1(1), 0.001),
                                                 StateSpace::gain(m1(0), 0.001));
    HinfResult r = synth_hinf(P);
    ASSERT_TRUE(r.feasible) << r.message;
    EXPECT_NEAR(r.gamma, r.gamma_sdp, 0.02 * r.gamma_sdp);
}

TEST(HinfSynthesis, GammaNonincreasingAsWeightShrinks) {
    GeneralizedPlant P = lqg_benchmark(0.9, 0.0, 1.0);
    double prev = 1e300;
    for (double k : {1.0, 0.5, 0.25}) {
        GeneralizedPlant Q = P;
        Q.sys.B(0, 2) = k;
        HinfResult r = synth_hinf(Q);
        ASSERT_TRUE(r.feasible) << r.message;
        EXPECT_LE(r.gamma_sdp, prev * (1 + 1e-6));
        prev = r.gamma_sdp;
    }
}

TEST(HinfSynthesis, UnstabilizableIsInfeasible) {
    // the true-plant copy is unstable and u cannot reach it
    StateSpace nom(m1(1.2), m1(1), m1(1), m1(0), 0.001);
    GeneralizedPlant P = build_generalized_plant(nom, StateSpace::gain(m1(1), 0.001), StateSpace::gain(m1(1), 0.001),
                                                 StateSpace::gain(m1(0.5), 0.001));
    HinfResult r = synth_hinf(P);
    EXPECT_FALSE(r.feasible);
    SynthesisResult m = synth_mixed_h2_hinf(P);
    EXPECT_FALSE(m.feasible);
}
