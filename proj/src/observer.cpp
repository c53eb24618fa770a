#include "kobs/observer.hpp"

#include <unsupported/Eigen/FFT>
#include <cmath>
#include <stdexcept>

namespace kobs {

void Observer::reset(const Vec& x0) {
    xhat = mode == ObserverMode::KoopmanRelift ? lift_state(cfg, x0) : x0;
    if (xhat.size() != A.rows()) throw std::invalid_argument("observer: initial state dimension mismatch");
    xc = Vec::Zero(K.nx());
}

Observer::Step Observer::step(const Vec& u, const Vec& y) {
    if (u.size() != B.cols() || y.size() != C.rows()) throw std::invalid_argument("observer: signal dimension mismatch");
    Step s;
    s.x = mode == ObserverMode::KoopmanRelift ? retract(cfg, xhat) : xhat;
    s.innovation = y - C * xhat;
    s.correction = K.C * xc + K.D * s.innovation;
    xc = K.A * xc + K.B * s.innovation;
    xhat = A * xhat + B * (u + s.correction);
    // keep the lifted coordinates consistent with the estimated state
    if (mode == ObserverMode::KoopmanRelift) xhat = lift_state(cfg, retract(cfg, xhat));
    return s;
}

Observer make_observer(const KoopmanModel& nominal, const StateSpace& K, const std::vector<int>& measured,
                       ObserverMode mode) {
    Observer o;
    o.mode = mode;
    o.cfg = nominal.cfg;
    o.A = nominal.A();
    o.B = nominal.B();
    o.C = nominal.state_space(measured).C;
    o.K = K;
    K.validate();
    if (K.nu() != o.C.rows() || K.ny() != o.B.cols())
        throw std::invalid_argument("observer: controller maps " + std::to_string(K.nu()) + " -> " +
                                    std::to_string(K.ny()) + ", expected " + std::to_string(o.C.rows()) + " -> " +
                                    std::to_string(o.B.cols()));
    return o;
}

ObserverRun run_observer(Observer obs, const Episode& ep) {
    if (ep.size() == 0) return {};
    ep.validate();
    if (obs.cfg.state_dim != 2 || obs.B.cols() != 1 || obs.C.rows() != 1)
        throw std::invalid_argument("run_observer: drive episodes need a position-measuring, current-driven observer");
    const long T = static_cast<long>(ep.size());
    Vec x0(2);
    x0 << ep.meas_pos[0], 0.0;
    obs.reset(x0);
    ObserverRun r;
    r.x.resize(2, T);
    r.correction.resize(1, T);
    Vec u(1), y(1);
    for (long k = 0; k < T; ++k) {
        u(0) = ep.current[k];
        y(0) = ep.meas_pos[k];
        auto s = obs.step(u, y);
        r.x.col(k) = s.x;
        r.correction(0, k) = s.correction(0);
        r.pos_error.push_back(s.x(0) - ep.meas_pos[k]);
        r.vel_error.push_back(s.x(1) - ep.meas_vel[k]);
        r.current_error.push_back(s.correction(0));
    }
    return r;
}

Psd welch_psd(const std::vector<double>& x, double fs, int nperseg) {
    if (!(fs > 0) || nperseg < 2) throw std::invalid_argument("welch: bad sample rate or segment length");
    if (x.size() < 2) throw std::invalid_argument("welch: signal too short");
    Psd out;
    int L = nperseg;
    if (static_cast<long>(x.size()) < L) {
        L = static_cast<int>(x.size());
        out.single_periodogram = true;
    }
    const int step = L / 2;
    std::vector<double> w(L);
    double wss = 0;
    for (int i = 0; i < L; ++i) {
        // periodic Hann
        w[i] = 0.5 - 0.5 * std::cos(2 * M_PI * i / L);
        wss += w[i] * w[i];
    }
    const int nf = L / 2 + 1;
    out.p.assign(nf, 0.0);
    Eigen::FFT<double> fft;
    std::vector<double> seg(L);
    std::vector<std::complex<double>> X;
    for (long start = 0; start + L <= static_cast<long>(x.size()); start += step) {
        double mean = 0;
        for (int i = 0; i < L; ++i) mean += x[start + i];
        mean /= L;
        for (int i = 0; i < L; ++i) seg[i] = (x[start + i] - mean) * w[i];
        fft.fwd(X, seg);
        for (int k = 0; k < nf; ++k) out.p[k] += std::norm(X[k]);
        ++out.segments;
        if (out.single_periodogram) break;
    }
    const double scale = 1.0 / (fs * wss * out.segments);
    for (int k = 0; k < nf; ++k) {
        out.p[k] *= scale;
        // one-sided: fold negative frequencies except DC and Nyquist
        if (k > 0 && !(L % 2 == 0 && k == nf - 1)) out.p[k] *= 2;
    }
    out.df = fs / L;
    out.f.resize(nf);
    for (int k = 0; k < nf; ++k) out.f[k] = k * out.df;
    return out;
}

double band_power(const Psd& psd, double f0, double hw) {
    double acc = 0;
    for (std::size_t k = 0; k < psd.f.size(); ++k)
        if (psd.f[k] >= f0 - hw - 1e-9 && psd.f[k] <= f0 + hw + 1e-9) acc += psd.p[k];
    return acc * psd.df;
}

double psd_at(const Psd& psd, double f) {
    if (psd.f.empty()) throw std::invalid_argument("psd_at: empty spectrum");
    const long k = std::lround(f / psd.df);
    return psd.p[std::clamp<long>(k, 0, static_cast<long>(psd.p.size()) - 1)];
}

}  // namespace kobs
