#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kobs/episode.hpp"

namespace kobs {

struct DriveParams {
    double J = 1.0;    // inertia
    double b = 0.1;    // viscous friction
    double kt = 1.0;   // torque constant
    double kp = 400.0, kd = 40.0;  // PD position loop
    double r = 100.0;  // gear ratio
    // current-referred disturbance a1 sin(r th + phi1) + a2 sin(2 r th + phi2)
    double a1 = 2.0, a2 = 0.4;
    double phi1 = 0.0, phi2 = 0.0;
    // position-dependent load torque AL sin(th + phiL), only on loaded runs
    double load_amp = 3.0, load_phase = 0.0;
    double noise_std = 1e-5;      // encoder noise, rad
    double vel_cutoff_hz = 200;   // velocity estimate lowpass
    int substeps = 10;            // RK4 steps per sample
    bool outlier = false;

    void validate() const;
};

struct TrajectoryOptions {
    double dt = 1e-3;
    double vmax = M_PI;
    double amax = 4 * M_PI;
    double dwell = 0.25;      // s at each checkpoint
    double smoothing = 0.05;  // moving-average window, s
    double start = 0.0;
    double duration = 0.0;    // pad to this length; 0 keeps the natural length
};

struct Trajectory {
    double dt = 1e-3;
    std::vector<double> pos, vel;
    double natural_duration = 0.0;  // s, before padding
};

// trapezoidal point-to-point moves through the checkpoints, smoothed
Trajectory gen_trajectory(const std::vector<double>& checkpoints, const TrajectoryOptions& opt = {});

// Rejection-samples n uniform checkpoints in [-range, range] until the moves
// fit opt.duration. Throws after max_tries.
Trajectory random_trajectory(std::uint64_t seed, int n, double range, const TrajectoryOptions& opt,
                             int max_tries = 1000);

Episode simulate_drive(const DriveParams& p, const Trajectory& traj, bool loaded, std::uint64_t seed);

struct PopulationOptions {
    DriveParams nominal;
    double rel_mech = 0.03;        // J, b, kt
    double rel_dist = 0.20;        // a1, a2
    double outlier_factor = 5.0;   // a1, a2 scaling on outliers
};

// outliers are the last n_outliers drives
std::vector<DriveParams> gen_population(int n, std::uint64_t seed, int n_outliers, const PopulationOptions& opt = {});

// SplitMix64 mix of a seed with two stream indices
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

struct DriveData {
    int id = 0;
    std::vector<Episode> unloaded, loaded;
};

struct Split {
    std::vector<int> train, test;
};

// deterministic shuffle of n episode indices; the last n_test go to test
Split split_episodes(int n, int n_test, std::uint64_t seed, int drive);

void write_episode_csv(const std::filesystem::path& path, const Episode& ep);

// Header names select the columns, in any order. `aliases` maps a foreign
// column name onto one of t, ref_pos, ref_vel, meas_pos, meas_vel, current.
Episode read_episode_csv(const std::filesystem::path& path, const std::map<std::string, std::string>& aliases = {});

// <root>/<drive_id>/<unloaded|loaded>/<episode_id>.csv
void write_dataset(const std::filesystem::path& root, const std::vector<DriveData>& drives);
std::filesystem::path episode_path(const std::filesystem::path& root, int drive, bool loaded, int episode);
// numeric drive directories under root, ascending
std::vector<int> list_drives(const std::filesystem::path& root);
DriveData read_drive(const std::filesystem::path& root, int drive,
                     const std::map<std::string, std::string>& aliases = {}, bool include_loaded = true);
// number of episode files of one condition
int count_episodes(const std::filesystem::path& root, int drive, bool loaded);
std::vector<DriveData> read_dataset(const std::filesystem::path& root,
                                    const std::map<std::string, std::string>& aliases = {});

}  // namespace kobs
