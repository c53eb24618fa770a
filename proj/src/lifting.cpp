#include "kobs/lifting.hpp"

#include <cmath>
#include <stdexcept>

namespace kobs {

void LiftingConfig::validate() const {
    if (state_dim < 1 || input_dim < 1) throw std::invalid_argument("lifting: state and input dimension must be >= 1");
    if (kind == LiftingKind::DriveSinusoid) {
        if (state_dim != 2 || input_dim != 1)
            throw std::invalid_argument("lifting: drive lifting needs x = (theta, theta_dot) and one input");
        if (!std::isfinite(r) || r <= 0) throw std::invalid_argument("lifting: gear ratio must be positive");
        if (!std::isfinite(phi)) throw std::invalid_argument("lifting: phase is not finite");
    }
}

LiftingConfig LiftingConfig::linear(int m, int n) {
    LiftingConfig c;
    c.kind = LiftingKind::Linear;
    c.state_dim = m;
    c.input_dim = n;
    return c;
}

LiftingConfig LiftingConfig::drive(double r, double phi) {
    LiftingConfig c;
    c.kind = LiftingKind::DriveSinusoid;
    c.r = r;
    c.phi = wrap_2pi(phi);
    return c;
}

std::string to_string(LiftingKind k) { return k == LiftingKind::Linear ? "linear" : "drive_sinusoid"; }

LiftingKind lifting_kind_from_string(const std::string& s) {
    if (s == "linear") return LiftingKind::Linear;
    if (s == "drive_sinusoid" || s == "koopman") return LiftingKind::DriveSinusoid;
    throw std::invalid_argument("unknown lifting kind '" + s + "'");
}

Vec lift_state(const LiftingConfig& cfg, const Vec& x) {
    if (x.size() != cfg.state_dim)
        throw std::invalid_argument("lift: state has dimension " + std::to_string(x.size()) + ", expected " +
                                    std::to_string(cfg.state_dim));
    if (cfg.kind == LiftingKind::Linear) return x;
    Vec th(3);
    th << x(0), x(1), std::sin(cfg.r * x(0) + cfg.phi);
    return th;
}

LiftedState lift(const LiftingConfig& cfg, const Vec& x, const Vec& u) {
    if (u.size() != cfg.input_dim)
        throw std::invalid_argument("lift: input has dimension " + std::to_string(u.size()) + ", expected " +
                                    std::to_string(cfg.input_dim));
    return {lift_state(cfg, x), u};
}

Vec retract(const LiftingConfig& cfg, const Vec& theta_part) {
    if (theta_part.size() != cfg.p_theta())
        throw std::invalid_argument("retract: lifted state has dimension " + std::to_string(theta_part.size()) +
                                    ", expected " + std::to_string(cfg.p_theta()));
    return theta_part.head(cfg.state_dim);
}

double wrap_2pi(double a) {
    double w = std::fmod(a, 2 * M_PI);
    if (w < 0) w += 2 * M_PI;
    if (w >= 2 * M_PI) w = 0.0;
    return w;
}

double circular_mean(const std::vector<double>& angles) {
    if (angles.empty()) throw std::invalid_argument("circular_mean: no angles");
    double s = 0, c = 0;
    for (double a : angles) {
        s += std::sin(a);
        c += std::cos(a);
    }
    return wrap_2pi(std::atan2(s, c));
}

std::vector<Segment> constant_velocity_segments(const std::vector<double>& v, double dt, double vmax,
                                                double min_len, double tol) {
    if (dt <= 0 || vmax <= 0) throw std::invalid_argument("segments: dt and vmax must be positive");
    // keeping max - min below tol*vmax bounds every deviation from the run mean
    const double band = tol * vmax;
    std::vector<Segment> out;
    const std::size_t n = v.size();
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        double lo = v[i], hi = v[i];
        while (j < n) {
            double lo2 = std::min(lo, v[j]), hi2 = std::max(hi, v[j]);
            if (hi2 - lo2 >= band) break;
            lo = lo2;
            hi = hi2;
            ++j;
        }
        if (static_cast<double>(j - i) * dt >= min_len - 1e-12) out.push_back({i, j});
        i = j;
    }
    return out;
}

PhaseEstimate calibrate_phase(const std::vector<Episode>& episodes, const LiftingConfig& cfg, const PhaseOptions& opt) {
    if (cfg.kind != LiftingKind::DriveSinusoid) throw std::invalid_argument("calibrate_phase: needs the drive lifting");
    if (opt.n_samples < 2) throw std::invalid_argument("calibrate_phase: need at least two phase samples");
    PhaseEstimate est;
    std::vector<double> pos_dir, neg_dir;
    for (const auto& ep : episodes) {
        ep.validate();
        for (auto seg : constant_velocity_segments(ep.ref_vel, ep.dt, opt.vmax, opt.min_len, opt.tol)) {
            const std::size_t len = seg.end - seg.begin;
            double vmean = 0;
            for (std::size_t k = seg.begin; k < seg.end; ++k) vmean += ep.ref_vel[k];
            vmean /= static_cast<double>(len);
            if (std::abs(vmean) < opt.tol * opt.vmax) {
                ++est.segments_skipped;
                continue;
            }
            std::vector<double> e(len);
            double emean = 0;
            for (std::size_t k = 0; k < len; ++k) {
                e[k] = ep.ref_vel[seg.begin + k] - ep.meas_vel[seg.begin + k];
                emean += e[k];
            }
            emean /= static_cast<double>(len);
            double nrm = 0;
            for (double& x : e) {
                x -= emean;
                nrm += x * x;
            }
            nrm = std::sqrt(nrm);
            if (!(nrm > 1e-300)) {
                ++est.segments_skipped;
                continue;
            }
            // sum e sin(r th + p) = cos(p) S + sin(p) C
            double S = 0, C = 0;
            for (std::size_t k = 0; k < len; ++k) {
                const double a = cfg.r * ep.meas_pos[seg.begin + k];
                S += e[k] / nrm * std::sin(a);
                C += e[k] / nrm * std::cos(a);
            }
            int best = 0;
            double best_val = -1e300;
            for (int j = 0; j < opt.n_samples; ++j) {
                const double p = 2 * M_PI * j / opt.n_samples;
                const double val = std::cos(p) * S + std::sin(p) * C;
                if (val > best_val) {
                    best_val = val;
                    best = j;
                }
            }
            double phi = 2 * M_PI * best / opt.n_samples;
            if (opt.quadrature) phi = wrap_2pi(phi - (vmean > 0 ? 1.0 : -1.0) * M_PI / 2);
            est.per_segment.push_back(phi);
            (vmean > 0 ? pos_dir : neg_dir).push_back(phi);
            ++est.segments_used;
        }
    }
    if (est.per_segment.empty()) throw std::runtime_error("calibrate_phase: no usable constant-velocity segment");
    if (opt.quadrature && !pos_dir.empty() && !neg_dir.empty())
        est.phi = circular_mean({circular_mean(pos_dir), circular_mean(neg_dir)});
    else
        est.phi = circular_mean(est.per_segment);
    return est;
}

}  // namespace kobs
