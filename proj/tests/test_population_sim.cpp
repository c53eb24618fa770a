#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "kobs/population_sim.hpp"

using namespace kobs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("kobs_test_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(Trajectory, SingleMove) {
    TrajectoryOptions o;
    auto tr = gen_trajectory({2 * M_PI}, o);
    double peak = 0;
    for (double v : tr.vel) peak = std::max(peak, std::abs(v));
    EXPECT_NEAR(peak, M_PI, 1e-9);
    EXPECT_NEAR(tr.pos.back(), 2 * M_PI, 1e-6);
    EXPECT_NEAR(tr.pos.front(), 0.0, 1e-12);
}

TEST(Trajectory, AccelerationAndConsistency) {
    TrajectoryOptions o;
    auto tr = gen_trajectory({1.0, -3.0, 0.2, 6.0}, o);
    for (std::size_t k = 1; k < tr.vel.size(); ++k) {
        EXPECT_LE(std::abs(tr.vel[k] - tr.vel[k - 1]) / o.dt, o.amax * (1 + 1e-9));
        // position is the running sum of velocity up to the sampling of the ramps
        EXPECT_NEAR((tr.pos[k] - tr.pos[k - 1]) / o.dt, 0.5 * (tr.vel[k] + tr.vel[k - 1]), 0.02);
    }
}

TEST(Trajectory, DurationPaddingAndOverflow) {
    TrajectoryOptions o;
    o.duration = 5.0;
    auto tr = gen_trajectory({1.0}, o);
    EXPECT_EQ(tr.pos.size(), 5000u);
    EXPECT_NEAR(tr.pos.back(), 1.0, 1e-12);
    o.duration = 0.5;
    EXPECT_THROW(gen_trajectory({1.0, -1.0, 1.0}, o), std::runtime_error);
    o.duration = 20.0;
    auto r = random_trajectory(9, 10, 2 * M_PI, o);
    EXPECT_EQ(r.pos.size(), 20000u);
    EXPECT_LE(r.natural_duration, 20.0);
}

// with no disturbance the plant is linear and the current is held over a
// sample, so the exact zero-order-hold update is available in closed form
TEST(Simulator, MatchesExactLinearUpdate) {
    DriveParams p;
    p.a1 = p.a2 = 0;
    p.noise_std = 0;
    TrajectoryOptions o;
    auto tr = gen_trajectory({1.5, -0.5}, o);
    auto ep = simulate_drive(p, tr, false, 1);
    const double e = std::exp(-p.b * o.dt / p.J);
    double th = tr.pos[0], w = 0;
    double worst = 0;
    for (std::size_t k = 0; k < tr.pos.size(); ++k) {
        worst = std::max(worst, std::abs(ep.meas_pos[k] - th));
        const double i = p.kp * (tr.pos[k] - th) + p.kd * (tr.vel[k] - w);
        EXPECT_NEAR(ep.current[k], i, 1e-8);
        const double ws = p.kt * i / p.b;
        th += (p.J / p.b) * (w - ws) * (1 - e) + ws * o.dt;
        w = ws + (w - ws) * e;
    }
    EXPECT_LT(worst, 1e-11);
}

TEST(Simulator, VelocityFilterRecursion) {
    DriveParams p;
    auto tr = gen_trajectory({0.7}, {});
    auto ep = simulate_drive(p, tr, true, 4);
    const double beta = std::exp(-2 * M_PI * 200 * ep.dt);
    EXPECT_EQ(ep.meas_vel[0], 0.0);
    for (std::size_t k = 1; k < ep.size(); ++k) {
        const double v = beta * ep.meas_vel[k - 1] + (1 - beta) * (ep.meas_pos[k] - ep.meas_pos[k - 1]) / ep.dt;
        ASSERT_NEAR(ep.meas_vel[k], v, 1e-9);
    }
}

TEST(Simulator, DisturbanceAndLoadShowInCurrent) {
    DriveParams p;
    p.noise_std = 0;
    TrajectoryOptions o;
    o.duration = 4;
    auto tr = gen_trajectory({3.0}, o);
    auto quiet = p;
    quiet.a1 = quiet.a2 = 0;
    auto a = simulate_drive(quiet, tr, false, 0);
    auto b = simulate_drive(p, tr, false, 0);
    auto c = simulate_drive(quiet, tr, true, 0);
    double db = 0, dc = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        db = std::max(db, std::abs(a.current[k] - b.current[k]));
        dc = std::max(dc, std::abs(a.current[k] - c.current[k]));
    }
    EXPECT_GT(db, 0.1);
    EXPECT_GT(dc, 1.0);  // load amplitude 3 against kt = 1
}

TEST(Simulator, Deterministic) {
    DriveParams p;
    auto tr = gen_trajectory({1.0, -1.0}, {});
    auto a = simulate_drive(p, tr, false, 77);
    auto b = simulate_drive(p, tr, false, 77);
    auto c = simulate_drive(p, tr, false, 78);
    EXPECT_EQ(a.meas_pos, b.meas_pos);
    EXPECT_NE(a.meas_pos, c.meas_pos);
}

TEST(Population, RangesAndOutliers) {
    auto pop = gen_population(40, 5, 2);
    ASSERT_EQ(pop.size(), 40u);
    DriveParams nom;
    for (int d = 0; d < 40; ++d) {
        const auto& p = pop[d];
        EXPECT_LE(std::abs(p.J / nom.J - 1), 0.03);
        EXPECT_LE(std::abs(p.b / nom.b - 1), 0.03);
        EXPECT_LE(std::abs(p.kt / nom.kt - 1), 0.03);
        const double f = d >= 38 ? 5.0 : 1.0;
        EXPECT_EQ(p.outlier, d >= 38);
        EXPECT_LE(std::abs(p.a1 / (f * nom.a1) - 1), 0.2 + 1e-12);
        EXPECT_LE(std::abs(p.a2 / (f * nom.a2) - 1), 0.2 + 1e-12);
        EXPECT_GE(p.phi1, 0);
        EXPECT_LT(p.phi1, 2 * M_PI);
    }
    auto again = gen_population(40, 5, 2);
    EXPECT_EQ(again[17].J, pop[17].J);
    EXPECT_THROW(gen_population(3, 1, 4), std::invalid_argument);
}

TEST(Population, SplitIsPartition) {
    auto s = split_episodes(20, 2, 11, 3);
    EXPECT_EQ(s.train.size(), 18u);
    EXPECT_EQ(s.test.size(), 2u);
    std::set<int> all(s.train.begin(), s.train.end());
    all.insert(s.test.begin(), s.test.end());
    EXPECT_EQ(all.size(), 20u);
    auto t = split_episodes(20, 2, 11, 3);
    EXPECT_EQ(s.test, t.test);
    // never an empty training set
    auto tiny = split_episodes(2, 5, 1, 0);
    EXPECT_EQ(tiny.train.size(), 1u);
}

TEST(Csv, RoundTripIsExact) {
    DriveParams p;
    TrajectoryOptions o;
    o.duration = 1.0;
    auto ep = simulate_drive(p, gen_trajectory({0.4}, o), false, 3);
    auto dir = scratch("csv");
    write_episode_csv(dir / "e.csv", ep);
    auto back = read_episode_csv(dir / "e.csv");
    EXPECT_EQ(back.meas_vel, ep.meas_vel);
    EXPECT_EQ(back.current, ep.current);
    EXPECT_DOUBLE_EQ(back.dt, ep.dt);
}

TEST(Csv, MalformedLineNamed) {
    auto dir = scratch("bad");
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "e.csv");
        f << "t,ref_pos,ref_vel,meas_pos,meas_vel,current\n0,0,0,0,0,0\n0.001,0,0,x,0,0\n";
    }
    try {
        read_episode_csv(dir / "e.csv");
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
    }
    {
        std::ofstream f(dir / "m.csv");
        f << "t,ref_pos,ref_vel,meas_pos,meas_vel\n0,0,0,0,0\n";
    }
    EXPECT_THROW(read_episode_csv(dir / "m.csv"), std::runtime_error);
}

TEST(Csv, ForeignColumnsViaAliases) {
    auto dir = scratch("alias");
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "e.csv");
        f << "time,extra,q_ref,dq_ref,q,dq,i\n0,9,1,2,3,4,5\n0.002,9,1,2,3,4,6\n";
    }
    std::map<std::string, std::string> al{{"time", "t"},   {"q_ref", "ref_pos"}, {"dq_ref", "ref_vel"},
                                          {"q", "meas_pos"}, {"dq", "meas_vel"},   {"i", "current"}};
    auto ep = read_episode_csv(dir / "e.csv", al);
    EXPECT_DOUBLE_EQ(ep.dt, 0.002);
    EXPECT_EQ(ep.current, (std::vector<double>{5, 6}));
    EXPECT_EQ(ep.meas_pos, (std::vector<double>{3, 3}));
}

TEST(Csv, DatasetLayout) {
    DriveParams p;
    TrajectoryOptions o;
    o.duration = 1.0;
    auto ep = simulate_drive(p, gen_trajectory({0.2}, o), false, 3);
    std::vector<DriveData> ds(2);
    ds[0].id = 0;
    ds[1].id = 12;
    ds[0].unloaded = {ep, ep};
    ds[0].loaded = {ep};
    ds[1].unloaded = {ep};
    auto dir = scratch("ds");
    write_dataset(dir, ds);
    EXPECT_TRUE(fs::exists(dir / "012" / "unloaded" / "000.csv"));
    EXPECT_TRUE(fs::exists(dir / "000" / "loaded" / "000.csv"));
    auto back = read_dataset(dir);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].id, 12);
    EXPECT_EQ(back[0].unloaded.size(), 2u);
    EXPECT_EQ(back[0].loaded.size(), 1u);
}
