#pragma once

#include <string>

#include "kobs/lti.hpp"
#include "kobs/sdp.hpp"

namespace kobs {

// inputs (w1, w2, u), outputs (z1, z2, y)
struct GeneralizedPlant {
    StateSpace sys;
    int nw1 = 0, nw2 = 0, nu = 0;
    int nz1 = 0, nz2 = 0, ny = 0;

    void validate() const;
    int nw() const { return nw1 + nw2; }
    int nz() const { return nz1 + nz2; }

    Mat B1() const { return sys.B.leftCols(nw()); }
    Mat B2() const { return sys.B.rightCols(nu); }
    Mat C1() const { return sys.C.topRows(nz()); }
    Mat C2() const { return sys.C.bottomRows(ny); }
    Mat D11() const { return sys.D.topLeftCorner(nz(), nw()); }
    Mat D12() const { return sys.D.topRightCorner(nz(), nu); }
    Mat D21() const { return sys.D.bottomLeftCorner(ny, nw()); }
    Mat D22() const { return sys.D.bottomRightCorner(ny, nu); }
};

// state order (x, xhat, x_Wp, x_Wu, x_Wd); nominal.C is the measurement map
// y = C (x - xhat), z1 = Wp (x - xhat), z2 = Wu w1 + Wd w2
GeneralizedPlant build_generalized_plant(const StateSpace& nominal, const StateSpace& Wp, const StateSpace& Wu,
                                         const StateSpace& Wd);

enum class H2Channel {
    W1,   // w1 -> z1 only
    All,  // every exogenous input (w1, w2 and sensor noise) -> z1
};

struct SynthesisOptions {
    H2Channel h2_channel = H2Channel::All;
    // std of white noise added to y; 0 keeps the plant as assembled
    double sensor_noise = 1e-5;
    bool hinf_constraint = true;
    double hinf_level = 1.0 - 1e-6;
    double lyap_margin = 1e-9;
    double recon_cond_max = 1e8;
    double reduce_tol = 1e-10;
    bool balance = true;
    sdp::Options sdp{1e-9, 200, false, false};
    bool retry_extended = true;  // rerun in long double if the double solve fails
    FrequencyGrid grid = FrequencyGrid::default_grid();
};

struct ClosedLoopReport {
    bool schur = false;
    double spectral_radius = 0.0;
    double h2_11 = 0.0;      // w1 -> z1
    double h2_design = 0.0;  // channel used by the H2 objective, noise included
    double hinf_22 = 0.0;    // w2 -> z2
    double hinf_full = 0.0;  // (w1, w2) -> (z1, z2)
};

struct SynthesisResult {
    bool feasible = false;
    StateSpace K;
    double h2_cost = 0.0;  // verified h2_design
    double sdp_h2 = 0.0;   // sqrt of the SDP objective
    double hinf_22 = 0.0;
    ClosedLoopReport report;
    sdp::Result solver;
    bool extended_precision = false;
    int reduced_order = 0;
    double cond_recon = 0.0;
    std::string message;
};

SynthesisResult synth_mixed_h2_hinf(const GeneralizedPlant& P, const SynthesisOptions& opt = {});

struct HinfResult {
    bool feasible = false;
    StateSpace K;
    double gamma = 0.0;      // verified on the grid
    double gamma_sdp = 0.0;  // SDP optimum
    bool below_one = false;
    ClosedLoopReport report;
    sdp::Result solver;
    std::string message;
};

// minimizes the full (w, z) channel norm
HinfResult synth_hinf(const GeneralizedPlant& P, const SynthesisOptions& opt = {});

ClosedLoopReport validate_closed_loop(const GeneralizedPlant& P, const StateSpace& K, const SynthesisOptions& opt = {});

}  // namespace kobs
