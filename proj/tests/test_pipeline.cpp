#include <gtest/gtest.h>

#include <fstream>
#include <unistd.h>

#include "kobs/pipeline.hpp"

using namespace kobs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("kobs_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

// small enough to run in a few seconds, long enough for constant-velocity segments
PipelineConfig tiny(const fs::path& dir, int seed = 3) {
    return load_config(std::nullopt, {"workdir=" + dir.string(), "seed=" + std::to_string(seed), "population.drives=4",
                                      "population.episodes=4", "population.duration=8", "population.checkpoints=4"});
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
    const auto c = parse_config(json::object());
    EXPECT_EQ(c.drives, 38);
    EXPECT_EQ(c.forms.size(), 2u);
    EXPECT_DOUBLE_EQ(c.gear_band_center(), 50.0);
    ASSERT_TRUE(c.cap.has_value());
}

TEST(Config, SetOverridesAndTypes) {
    auto c = load_config(std::nullopt, {"seed=11", "synthesis.perf_weight=[2, 3]", "weights.cap=null",
                                        "dataset.aliases.pos=theta", "outliers.kind=linear"},
                         3);
    EXPECT_EQ(c.seed, 11u);
    EXPECT_EQ(c.jobs, 3);
    EXPECT_EQ(c.perf_weight, (std::vector<double>{2, 3}));
    EXPECT_FALSE(c.cap.has_value());
    EXPECT_EQ(c.aliases.at("pos"), "theta");
    EXPECT_EQ(c.outlier_kind, "linear");
}

TEST(Config, Errors) {
    EXPECT_THROW(load_config(std::nullopt, {"no_such_key=1"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"population.nope=1"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"population.drives=many"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"seed"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"quantify.forms=[\"sideways\"]"}), ConfigError);
    EXPECT_THROW(load_config(std::nullopt, {"synthesis.h2_channel=\"z9\""}), ConfigError);
    EXPECT_THROW(parse_config(json{{"population", 3}}), ConfigError);

    const auto dir = scratch("cfg");
    fs::create_directories(dir);
    std::ofstream(dir / "bad.json") << "{ \"seed\": ";
    EXPECT_THROW(load_config(dir / "bad.json", {}), ConfigError);
    fs::remove_all(dir);
}

TEST(Pipeline, StagesNeedTheirInputs) {
    const auto dir = scratch("missing");
    auto c = tiny(dir);
    EXPECT_THROW(cmd_quantify(c), std::runtime_error);
    EXPECT_THROW(cmd_evaluate(c), std::runtime_error);
    fs::remove_all(dir);
}

TEST(Pipeline, TinyEndToEnd) {
    const auto dir = scratch("e2e");
    auto c = tiny(dir);
    cmd_simulate(c);
    EXPECT_TRUE(fs::exists(dir / "dataset" / "003" / "loaded" / "001.csv"));
    cmd_identify(c);
    const json id = read_json(dir / "models" / "identify.json");
    EXPECT_EQ(id.at("drives").size(), 4u);
    EXPECT_DOUBLE_EQ(id.at("alpha").at("koopman").get<double>(),
                     read_json(dir / "models" / "koopman" / "002.json").at("alpha").get<double>());
    cmd_quantify(c);
    cmd_fit_weights(c);
    for (const auto& k : model_kinds())
        for (const auto& row : read_json(dir / "weights" / (k + ".json")).at("entries"))
            for (const auto& w : row) EXPECT_LE(w.at("max_undershoot").get<double>(), 0.0);

    // a weight matrix of the wrong shape is a config error
    auto bad = c;
    bad.orders["koopman"] = {{1, 1}};
    EXPECT_THROW(cmd_fit_weights(bad), ConfigError);

    cmd_synthesize(c);
    const json m = cmd_evaluate(c);
    EXPECT_TRUE(m.at("episodes").contains("nominal"));
    EXPECT_TRUE(m.at("episodes").contains("loaded"));
    EXPECT_TRUE(fs::exists(dir / "evaluate" / "nominal_psd.csv"));
    const json o = cmd_outliers(c);
    EXPECT_TRUE(o.at("flagged").empty());
    fs::remove_all(dir);
}

// T22 is the uncertainty weight itself, so a fitted weight reaching one anywhere rules out every design
TEST(Pipeline, InfeasibleDesignIsReported) {
    const auto dir = scratch("infeasible");
    auto c = tiny(dir, 1);
    cmd_simulate(c);
    cmd_identify(c);
    cmd_quantify(c);
    cmd_fit_weights(c);
    const auto w = weight_from_json(read_json(dir / "weights" / "linear.json").at("entries")[0][0]);
    ASSERT_GE(hinf_norm(w.state_space(), FrequencyGrid::logspace(1e-6, M_PI, 4000)), 1.0);
    EXPECT_THROW(cmd_synthesize(c), InfeasibleError);
    EXPECT_FALSE(read_json(dir / "synthesis" / "linear.json").at("feasible").get<bool>());
    EXPECT_THROW(cmd_evaluate(c), InfeasibleError);
    fs::remove_all(dir);
}
