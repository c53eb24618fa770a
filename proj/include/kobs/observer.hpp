#pragma once

#include <vector>

#include "kobs/edmd.hpp"
#include "kobs/episode.hpp"
#include "kobs/lifting.hpp"
#include "kobs/lti.hpp"

namespace kobs {

enum class ObserverMode { LinearLTI, KoopmanRelift };

// Internal nominal copy x+ = A x + B (u + yc), corrected through the
// controller K driven by the innovation y - C x.
struct Observer {
    ObserverMode mode = ObserverMode::LinearLTI;
    Mat A, B, C;
    StateSpace K;
    LiftingConfig cfg;
    Vec xhat, xc;

    struct Step {
        Vec x;          // estimate in original coordinates, before the update
        Vec correction; // yc, added to the input
        Vec innovation;
    };

    // x0 in original coordinates
    void reset(const Vec& x0);
    Step step(const Vec& u, const Vec& y);
};

// measured outputs are the listed lifted-state components
Observer make_observer(const KoopmanModel& nominal, const StateSpace& K, const std::vector<int>& measured,
                       ObserverMode mode);

struct ObserverRun {
    Mat x;           // m x T estimates
    Mat correction;  // n x T
    std::vector<double> vel_error;      // estimate - measured velocity
    std::vector<double> current_error;  // corrected input - recorded current
    std::vector<double> pos_error;
};

// drive episodes: u = current, y = meas_pos; starts at (first position, 0)
ObserverRun run_observer(Observer obs, const Episode& ep);

struct Psd {
    std::vector<double> f, p;  // Hz, units^2 / Hz, one-sided
    double df = 0.0;
    int segments = 0;
    bool single_periodogram = false;  // signal shorter than one segment
};

// Welch: Hann window, 50% overlap, per-segment mean removed
Psd welch_psd(const std::vector<double>& x, double fs, int nperseg = 4096);
// integral of the PSD over [f0 - half_width, f0 + half_width]
double band_power(const Psd& psd, double f0, double half_width);
// PSD value at the bin nearest f
double psd_at(const Psd& psd, double f);

}  // namespace kobs
