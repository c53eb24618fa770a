#include "kobs/edmd.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace kobs {

SnapshotMatrices build_snapshots(const std::vector<Mat>& X, const std::vector<Mat>& U, const LiftingConfig& cfg) {
    cfg.validate();
    if (X.size() != U.size()) throw std::invalid_argument("snapshots: state and input episode counts differ");
    long q = 0;
    for (std::size_t e = 0; e < X.size(); ++e) {
        if (X[e].rows() != cfg.state_dim || U[e].rows() != cfg.input_dim)
            throw std::invalid_argument("snapshots: episode " + std::to_string(e) + " has wrong channel count");
        if (X[e].cols() != U[e].cols())
            throw std::invalid_argument("snapshots: episode " + std::to_string(e) + " is ragged");
        q += std::max<long>(X[e].cols() - 1, 0);
    }
    if (q < 1) throw std::invalid_argument("snapshots: no transitions");
    const int pt = cfg.p_theta(), pu = cfg.p_upsilon();
    SnapshotMatrices s;
    s.Psi.resize(pt + pu, q);
    s.ThetaPlus.resize(pt, q);
    long c = 0;
    for (std::size_t e = 0; e < X.size(); ++e) {
        const long T = X[e].cols();
        if (T < 2) continue;
        Vec next = lift_state(cfg, X[e].col(0));
        for (long k = 0; k + 1 < T; ++k) {
            s.Psi.col(c).head(pt) = next;
            s.Psi.col(c).tail(pu) = U[e].col(k);
            next = lift_state(cfg, X[e].col(k + 1));
            s.ThetaPlus.col(c) = next;
            ++c;
        }
    }
    return s;
}

SnapshotMatrices build_snapshots(const std::vector<Episode>& episodes, const LiftingConfig& cfg) {
    if (cfg.state_dim != 2 || cfg.input_dim != 1)
        throw std::invalid_argument("snapshots: episodes carry two states and one input");
    std::vector<Mat> X, U;
    for (const auto& ep : episodes) {
        ep.validate();
        const long T = static_cast<long>(ep.size());
        Mat x(2, T), u(1, T);
        for (long k = 0; k < T; ++k) {
            x(0, k) = ep.meas_pos[k];
            x(1, k) = ep.meas_vel[k];
            u(0, k) = ep.current[k];
        }
        X.push_back(std::move(x));
        U.push_back(std::move(u));
    }
    return build_snapshots(X, U, cfg);
}

Moments moments(const SnapshotMatrices& s) {
    Moments m;
    m.q = s.q();
    if (m.q < 1) throw std::invalid_argument("moments: empty snapshot set");
    const double iq = 1.0 / static_cast<double>(m.q);
    m.G = s.ThetaPlus * s.Psi.transpose() * iq;
    m.H = s.Psi * s.Psi.transpose() * iq;
    m.T2 = s.ThetaPlus * s.ThetaPlus.transpose() * iq;
    return m;
}

namespace {

void check_shapes(const Mat& G, const Mat& H, const LiftingConfig& cfg) {
    cfg.validate();
    const int p = cfg.p_theta() + cfg.p_upsilon();
    if (H.rows() != p || H.cols() != p || G.rows() != cfg.p_theta() || G.cols() != p)
        throw std::invalid_argument("edmd: snapshot dimensions do not match the lifting");
}

double residual_from_moments(const Moments& m, const Mat& U) {
    const double r2 = m.T2.trace() - 2 * (U * m.G.transpose()).trace() + (U * m.H * U.transpose()).trace();
    return std::sqrt(std::max(r2, 0.0) / static_cast<double>(U.rows()));
}

}  // namespace

KoopmanModel fit_least_squares(const SnapshotMatrices& s, const LiftingConfig& cfg, double dt) {
    check_shapes(s.ThetaPlus * s.Psi.transpose(), Mat(s.Psi.rows(), s.Psi.rows()), cfg);
    // Psi' = W S V'  =>  pinv(Psi) = W S^-1 V'
    Eigen::BDCSVD<Mat> svd(s.Psi.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec& sv = svd.singularValues();
    const double cut = 1e-12 * (sv.size() ? sv(0) : 0.0);
    Vec inv = Vec::Zero(sv.size());
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > cut) inv(i) = 1.0 / sv(i);
    KoopmanModel m;
    m.cfg = cfg;
    m.dt = dt;
    m.U = (s.ThetaPlus * svd.matrixU()) * inv.asDiagonal() * svd.matrixV().transpose();
    m.pinv_fallback = (inv.array() == 0).any();
    const Mat R = s.ThetaPlus - m.U * s.Psi;
    m.residual_rms = std::sqrt(R.squaredNorm() / static_cast<double>(R.size()));
    return m;
}

KoopmanModel fit_edmd_tikhonov(const Moments& mo, double alpha, const LiftingConfig& cfg, double dt) {
    check_shapes(mo.G, mo.H, cfg);
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw std::invalid_argument("edmd: alpha must be finite and >= 0");
    KoopmanModel m;
    m.cfg = cfg;
    m.dt = dt;
    m.alpha = alpha;
    const long p = mo.H.rows();
    const Mat Hr = mo.H + (alpha / static_cast<double>(mo.q)) * Mat::Identity(p, p);
    Eigen::LLT<Mat> llt(Hr);
    Eigen::JacobiSVD<Mat> svd(Hr);
    const Vec sv = svd.singularValues();
    const bool singular = llt.info() != Eigen::Success || sv(p - 1) <= 1e-12 * sv(0);
    if (singular) {
        if (alpha > 0) throw std::runtime_error("edmd: regularized Gram matrix is singular");
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(Hr);
        cod.setThreshold(1e-12);
        m.U = mo.G * cod.pseudoInverse();
        m.pinv_fallback = true;
    } else {
        m.U = llt.solve(mo.G.transpose()).transpose();
    }
    m.residual_rms = residual_from_moments(mo, m.U);
    return m;
}

KoopmanModel fit_edmd_tikhonov(const SnapshotMatrices& s, double alpha, const LiftingConfig& cfg, double dt) {
    return fit_edmd_tikhonov(moments(s), alpha, cfg, dt);
}

StateSpace KoopmanModel::state_space(const std::vector<int>& outputs) const {
    const int pt = p_theta();
    Mat C = Mat::Zero(static_cast<long>(outputs.size()), pt);
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (outputs[i] < 0 || outputs[i] >= pt) throw std::invalid_argument("state_space: output index out of range");
        C(static_cast<long>(i), outputs[i]) = 1.0;
    }
    return StateSpace(A(), B(), C, Mat::Zero(C.rows(), p_upsilon()), dt);
}

StabilizingFit min_stabilizing_alpha(const std::vector<Moments>& data, const std::vector<LiftingConfig>& cfgs,
                                     double dt, double alpha_max, double tol) {
    if (data.empty() || data.size() != cfgs.size())
        throw std::invalid_argument("min_stabilizing_alpha: need one lifting per data set");
    if (!(tol > 0) || !(alpha_max > 0)) throw std::invalid_argument("min_stabilizing_alpha: bad bounds");
    auto fit_all = [&](double a, StabilizingFit& f) {
        f.models.clear();
        f.worst_rho = 0;
        bool ok = true;
        for (std::size_t i = 0; i < data.size(); ++i) {
            f.models.push_back(fit_edmd_tikhonov(data[i], a, cfgs[i], dt));
            const double rho = spectral_radius(f.models.back().A());
            f.worst_rho = std::max(f.worst_rho, rho);
            ok = ok && is_schur(f.models.back().A());
        }
        f.alpha = a;
        return ok;
    };
    StabilizingFit best;
    if (fit_all(0.0, best)) return best;
    if (!fit_all(alpha_max, best))
        throw std::runtime_error("min_stabilizing_alpha: alpha_max = " + std::to_string(alpha_max) +
                                 " leaves a spectral radius of " + std::to_string(best.worst_rho));
    double lo = 0.0, hi = alpha_max;
    StabilizingFit trial;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        ++best.bisections;
        if (fit_all(mid, trial)) {
            hi = mid;
            trial.bisections = best.bisections;
            best = trial;
        } else {
            lo = mid;
        }
    }
    return best;
}

LocalPrediction predict_local(const KoopmanModel& model, const Vec& x0, const Mat& inputs) {
    if (inputs.rows() != model.p_upsilon()) throw std::invalid_argument("predict_local: input dimension mismatch");
    const Mat A = model.A(), B = model.B();
    LocalPrediction out;
    out.X.resize(model.cfg.state_dim, inputs.cols() + 1);
    out.X.col(0) = x0;
    for (long k = 0; k < inputs.cols(); ++k) {
        const auto l = lift(model.cfg, out.X.col(k), inputs.col(k));
        out.X.col(k + 1) = retract(model.cfg, A * l.theta_part + B * l.upsilon_part);
    }
    return out;
}

}  // namespace kobs
