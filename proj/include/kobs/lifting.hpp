#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "kobs/episode.hpp"
#include "kobs/lti.hpp"

namespace kobs {

enum class LiftingKind { Linear, DriveSinusoid };

struct LiftingConfig {
    LiftingKind kind = LiftingKind::Linear;
    double r = 100.0;   // gearbox ratio, DriveSinusoid only
    double phi = 0.0;   // phase offset in [0, 2pi), DriveSinusoid only
    int state_dim = 2;  // m
    int input_dim = 1;  // n

    int p_theta() const { return kind == LiftingKind::Linear ? state_dim : state_dim + 1; }
    int p_upsilon() const { return input_dim; }
    void validate() const;

    static LiftingConfig linear(int m, int n);
    // x = (theta, theta_dot), u = (i)
    static LiftingConfig drive(double r, double phi);
};

std::string to_string(LiftingKind k);
LiftingKind lifting_kind_from_string(const std::string& s);

struct LiftedState {
    Vec theta_part;
    Vec upsilon_part;
};

LiftedState lift(const LiftingConfig& cfg, const Vec& x, const Vec& u);
Vec lift_state(const LiftingConfig& cfg, const Vec& x);
Vec retract(const LiftingConfig& cfg, const Vec& theta_part);

double wrap_2pi(double a);
double circular_mean(const std::vector<double>& angles);

struct Segment {
    std::size_t begin = 0, end = 0;  // [begin, end)
};

// maximal runs of at least min_len seconds whose reference velocity stays
// within tol * vmax of the run mean
std::vector<Segment> constant_velocity_segments(const std::vector<double>& ref_vel, double dt, double vmax,
                                                double min_len = 0.5, double tol = 0.01);

struct PhaseOptions {
    int n_samples = 1000;
    double vmax = M_PI;
    double min_len = 0.5;
    double tol = 0.01;
    // The velocity error of a current disturbance sin(r theta + phi) lags it by
    // a quarter period with a sign set by the travel direction. When set, each
    // segment estimate is shifted by -sign(v) pi/2 and both directions are
    // averaged separately before the final circular mean.
    bool quadrature = false;
};

struct PhaseEstimate {
    double phi = 0.0;
    int segments_used = 0;
    int segments_skipped = 0;  // zero-energy error, or standstill
    std::vector<double> per_segment;
};

PhaseEstimate calibrate_phase(const std::vector<Episode>& episodes, const LiftingConfig& cfg,
                              const PhaseOptions& opt = {});

}  // namespace kobs
