#pragma once

#include <vector>

#include "kobs/episode.hpp"
#include "kobs/lifting.hpp"
#include "kobs/lti.hpp"

namespace kobs {

// Psi = [Theta; Upsilon] at k, ThetaPlus = Theta at k+1, columns are samples
struct SnapshotMatrices {
    Mat Psi, ThetaPlus;
    long q() const { return Psi.cols(); }
};

// states are (meas_pos, meas_vel), input is current; columns never cross episodes
SnapshotMatrices build_snapshots(const std::vector<Episode>& episodes, const LiftingConfig& cfg);
// generic form: X[e] is m x T_e, U[e] is n x T_e
SnapshotMatrices build_snapshots(const std::vector<Mat>& X, const std::vector<Mat>& U, const LiftingConfig& cfg);

// normalized second moments, enough to refit for any alpha
struct Moments {
    Mat G;    // ThetaPlus Psi' / q
    Mat H;    // Psi Psi' / q
    Mat T2;   // ThetaPlus ThetaPlus' / q
    long q = 0;
};
Moments moments(const SnapshotMatrices& s);

struct KoopmanModel {
    Mat U;  // p_theta x (p_theta + p_upsilon)
    LiftingConfig cfg;
    double dt = 1e-3;
    double alpha = 0.0;
    double residual_rms = 0.0;
    bool pinv_fallback = false;

    int p_theta() const { return cfg.p_theta(); }
    int p_upsilon() const { return cfg.p_upsilon(); }
    Mat A() const { return U.leftCols(p_theta()); }
    Mat B() const { return U.rightCols(p_upsilon()); }
    // outputs are the listed lifted-state components
    StateSpace state_space(const std::vector<int>& outputs) const;
};

// U = ThetaPlus pinv(Psi), singular values below 1e-12 sigma_max dropped
KoopmanModel fit_least_squares(const SnapshotMatrices& s, const LiftingConfig& cfg, double dt);

// U = G (H + alpha/q I)^-1; alpha = 0 with a singular H falls back to the pseudoinverse
KoopmanModel fit_edmd_tikhonov(const SnapshotMatrices& s, double alpha, const LiftingConfig& cfg, double dt);
KoopmanModel fit_edmd_tikhonov(const Moments& m, double alpha, const LiftingConfig& cfg, double dt);

struct StabilizingFit {
    double alpha = 0.0;
    std::vector<KoopmanModel> models;
    double worst_rho = 0.0;  // largest spectral radius at alpha
    int bisections = 0;
};

// Smallest alpha in [0, alpha_max] (to within tol) for which every model's A is
// Schur. Throws if alpha_max does not stabilize all of them.
StabilizingFit min_stabilizing_alpha(const std::vector<Moments>& data, const std::vector<LiftingConfig>& cfgs,
                                     double dt, double alpha_max, double tol = 0.5);

struct LocalPrediction {
    Mat X;  // m x (T+1), column 0 is x0
};

// x_{k+1} = retract(A lift(x_k) + B u_k)
LocalPrediction predict_local(const KoopmanModel& model, const Vec& x0, const Mat& inputs);

}  // namespace kobs
