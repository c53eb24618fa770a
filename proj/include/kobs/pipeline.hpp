#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kobs/io.hpp"
#include "kobs/population_sim.hpp"
#include "kobs/synthesis.hpp"
#include "kobs/uncertainty.hpp"

namespace kobs {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PipelineConfig {
    std::filesystem::path workdir = "kobs_run";
    std::uint64_t seed = 7;
    int jobs = 1;

    // population
    int drives = 38, outliers = 0, episodes = 40;  // per drive, half loaded
    int checkpoints = 10;
    double range = 2 * M_PI;
    PopulationOptions pop;
    TrajectoryOptions traj;

    // dataset
    std::filesystem::path dataset;  // empty: <workdir>/dataset
    std::map<std::string, std::string> aliases;
    int test_episodes = 2;

    // identify
    double alpha_max = 1e6, alpha_tol = 0.5;
    double gear_ratio = 100;
    PhaseOptions phase;

    // quantify
    std::vector<UncertaintyForm> forms{UncertaintyForm::InputMult, UncertaintyForm::InverseInputMult};
    FrequencyGrid grid = FrequencyGrid::default_grid();
    double screen_ratio = 1.25;  // own peak over the rest of the population

    // weights
    std::map<std::string, std::vector<std::vector<int>>> orders{{"linear", {{2}}}, {"koopman", {{3}}}};
    std::optional<double> cap = 0.99;

    // synthesis
    SynthesisOptions syn;
    std::vector<double> perf_weight{1.0, 1.0};
    double input_weight = 1.0;
    std::vector<int> measured{0};

    // evaluate
    int eval_drive = -1;       // -1: the koopman nominal
    double band_center = 0.0;  // 0: r * vmax / 2pi
    double band_halfwidth = 2.0;
    double load_band = 2.0;    // Hz, [0, load_band]
    int nperseg = 4096;
    bool relift_drive_phase = true;

    // outliers
    std::string outlier_kind = "koopman";
    double margin = 0.0;

    std::filesystem::path dataset_dir() const { return dataset.empty() ? workdir / "dataset" : dataset; }
    double gear_band_center() const;
};

json default_config_json();
// rejects unknown keys and ill-typed values with ConfigError
PipelineConfig parse_config(const json& j);
// file (optional), then --set key=value overrides, then --jobs
PipelineConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& sets,
                           std::optional<int> jobs = std::nullopt);

const std::vector<std::string>& model_kinds();  // linear, koopman

void cmd_simulate(const PipelineConfig& c);
void cmd_identify(const PipelineConfig& c);
void cmd_quantify(const PipelineConfig& c);
void cmd_fit_weights(const PipelineConfig& c);
// throws InfeasibleError after writing its outputs if a design is infeasible
void cmd_synthesize(const PipelineConfig& c);
json cmd_evaluate(const PipelineConfig& c);
json cmd_outliers(const PipelineConfig& c);

}  // namespace kobs
