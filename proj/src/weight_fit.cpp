#include "kobs/weight_fit.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kobs {

cplx BoundWeight::eval(double theta) const {
    const cplx zi = std::polar(1.0, -theta);
    cplx n = 0, d = 0, p = 1;
    for (std::size_t i = 0; i < std::max(num.size(), den.size()); ++i) {
        if (i < num.size()) n += num[i] * p;
        if (i < den.size()) d += den[i] * p;
        p *= zi;
    }
    return n / d;
}

std::vector<double> BoundWeight::magnitude(const FrequencyGrid& g) const {
    std::vector<double> m(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) m[k] = magnitude(g.theta[k]);
    return m;
}

StateSpace BoundWeight::state_space() const {
    const int n = static_cast<int>(den.size()) - 1;
    if (den.empty() || den[0] != 1.0) throw std::invalid_argument("weight: denominator must be monic");
    auto nc = [&](int i) { return i < static_cast<int>(num.size()) ? num[i] : 0.0; };
    Mat A = Mat::Zero(n, n), B = Mat::Zero(n, 1), C(1, n), D(1, 1);
    for (int i = 0; i < n; ++i) {
        A(0, i) = -den[i + 1];
        if (i + 1 < n) A(i + 1, i) = 1.0;
        C(0, i) = nc(i + 1) - nc(0) * den[i + 1];
    }
    if (n > 0) B(0, 0) = 1.0;
    D(0, 0) = nc(0);
    return StateSpace(A, B, C, D, dt);
}

std::vector<double> reflection_to_poly(const std::vector<double>& k) {
    std::vector<double> a{1.0};
    for (double ki : k) {
        std::vector<double> b(a.size() + 1, 0.0);
        for (std::size_t i = 0; i < a.size(); ++i) b[i] += a[i];
        for (std::size_t i = 0; i < a.size(); ++i) b[a.size() - i] += ki * a[i];
        a = std::move(b);
    }
    return a;
}

std::vector<double> poly_to_reflection(const std::vector<double>& poly) {
    std::vector<double> a = poly;
    const int n = static_cast<int>(a.size()) - 1;
    std::vector<double> k(n);
    for (int m = n; m >= 1; --m) {
        const double km = a[m];
        if (std::abs(km) >= 1) throw std::invalid_argument("poly_to_reflection: polynomial not strictly stable");
        k[m - 1] = km;
        std::vector<double> b(m);
        for (int i = 0; i < m; ++i) b[i] = (a[i] - km * a[m - i]) / (1 - km * km);
        a = std::move(b);
    }
    return k;
}

namespace {

double max_root_modulus(const std::vector<double>& den) {
    const int n = static_cast<int>(den.size()) - 1;
    if (n <= 0) return 0.0;
    Mat C = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        C(0, i) = -den[i + 1];
        if (i + 1 < n) C(i + 1, i) = 1.0;
    }
    return spectral_radius(C);
}

struct Problem {
    int order;
    double rho;
    std::vector<double> theta, logb;
    std::vector<double> cap_theta;  // grid plus low extension
    std::optional<double> log_cap;

    void unpack(const Eigen::VectorXd& x, std::vector<double>& num, std::vector<double>& den) const {
        num.assign(x.data(), x.data() + order + 1);
        std::vector<double> k(order);
        for (int i = 0; i < order; ++i) k[i] = std::tanh(x(order + 1 + i));
        den = reflection_to_poly(k);
        double s = 1;
        for (auto& d : den) {
            d *= s;
            s *= rho;
        }
    }
};

double log_mag(const std::vector<double>& num, const std::vector<double>& den, double th) {
    BoundWeight w;
    w.num = num;
    w.den = den;
    return std::log(std::max(w.magnitude(th), 1e-300));
}

// functor layout expected by Eigen's NumericalDiff / LevenbergMarquardt
struct Functor {
    using Scalar = double;
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

    const Problem* p;
    double mu;
    int nin, nval;
    Functor(const Problem* pr, double m, int ni, int nv) : p(pr), mu(m), nin(ni), nval(nv) {}
    int inputs() const { return nin; }
    int values() const { return nval; }
    int operator()(const InputType& x, ValueType& f) const {
        std::vector<double> num, den;
        p->unpack(x, num, den);
        const std::size_t K = p->theta.size();
        const double sm = std::sqrt(mu);
        for (std::size_t k = 0; k < K; ++k) {
            const double d = log_mag(num, den, p->theta[k]) - p->logb[k];
            f(k) = d;
            f(K + k) = sm * std::min(d, 0.0);
        }
        if (p->log_cap) {
            const double sc = std::sqrt(std::max(mu, 1.0));
            for (std::size_t k = 0; k < p->cap_theta.size(); ++k)
                f(2 * K + k) = sc * std::max(log_mag(num, den, p->cap_theta[k]) - *p->log_cap, 0.0);
        }
        return 0;
    }
};

void finish(BoundWeight& w, const std::vector<double>& b, const FitOptions& opt) {
    auto m = w.magnitude(w.grid);
    double s = 1.0;
    for (std::size_t k = 0; k < b.size(); ++k)
        if (m[k] < b[k]) s = std::max(s, m[k] > 0 ? b[k] / m[k] : INFINITY);
    if (!std::isfinite(s)) throw std::runtime_error("fit_bound: weight vanishes where the target does not");
    if (s != 1.0) {
        for (auto& c : w.num) c *= s;
        m = w.magnitude(w.grid);
    }
    // near z = 1 the evaluation itself is only good to ~1e-11, so re-scale with a growing nudge
    double nudge = 1e-15;
    for (int tries = 0; tries < 64; ++tries, nudge *= 2) {
        double short_by = 1.0;
        for (std::size_t k = 0; k < b.size(); ++k)
            if (m[k] < b[k]) short_by = std::max(short_by, b[k] / m[k]);
        if (short_by == 1.0) break;
        for (auto& c : w.num) c *= short_by * (1 + nudge);
        m = w.magnitude(w.grid);
    }
    w.max_undershoot = -INFINITY;
    double acc = 0;
    for (std::size_t k = 0; k < b.size(); ++k) {
        w.max_undershoot = std::max(w.max_undershoot, b[k] - m[k]);
        acc += std::log(std::max(m[k], 1e-300)) - std::log(std::max(b[k], opt.eps));
    }
    w.mean_log_overshoot = acc / static_cast<double>(b.size());
    w.max_pole_modulus = max_root_modulus(w.den);
    w.warning = w.mean_log_overshoot > std::log(100.0);  // 40 dB
}

void check_inputs(const std::vector<double>& b, const FrequencyGrid& grid, int order) {
    grid.validate();
    if (b.size() != grid.size()) throw std::invalid_argument("fit_bound: target and grid lengths differ");
    if (order < 0) throw std::invalid_argument("fit_bound: order must be >= 0");
    for (double x : b)
        if (!(x >= 0) || !std::isfinite(x)) throw std::invalid_argument("fit_bound: targets must be finite and >= 0");
}

}  // namespace

BoundWeight fit_bound_from(const std::vector<double>& b, const FrequencyGrid& grid, int order, double dt,
                           const FitOptions& opt, const BoundWeight* init) {
    check_inputs(b, grid, order);
    const double bmax = *std::max_element(b.begin(), b.end());
    BoundWeight w;
    w.dt = dt;
    w.order = order;
    w.grid = grid;
    w.num.assign(order + 1, 0.0);
    w.den.assign(order + 1, 0.0);
    w.den[0] = 1.0;
    if (bmax == 0.0) {
        finish(w, b, opt);
        return w;
    }

    Problem p;
    p.order = order;
    p.rho = opt.stability_radius;
    p.theta = grid.theta;
    for (double x : b) p.logb.push_back(std::log(std::max(x, opt.eps)));
    if (opt.cap) {
        if (!(*opt.cap > 0)) throw std::invalid_argument("fit_bound: cap must be positive");
        p.log_cap = std::log(*opt.cap);
        p.cap_theta = {0.0, grid.theta[0] / 100, grid.theta[0] / 10};
        p.cap_theta.insert(p.cap_theta.end(), grid.theta.begin(), grid.theta.end());
    }

    // starting point: embedded lower-order weight, or gain with coincident poles and zeros
    std::vector<double> num0, den0;
    if (init) {
        if (init->order > order) throw std::invalid_argument("fit_bound: initial weight has a higher order");
        num0 = init->num;
        den0 = init->den;
        num0.resize(order + 1, 0.0);
        den0.resize(order + 1, 0.0);
    } else {
        std::vector<double> roots;
        for (int i = 0; i < order; ++i) roots.push_back(order == 1 ? 0.1 : 0.1 + 0.8 * i / (order - 1));
        den0 = {1.0};
        for (double r : roots) {
            std::vector<double> nx(den0.size() + 1, 0.0);
            for (std::size_t i = 0; i < den0.size(); ++i) {
                nx[i] += den0[i];
                nx[i + 1] -= r * den0[i];
            }
            den0 = nx;
        }
        num0 = den0;
        for (auto& c : num0) c *= bmax;
    }
    Eigen::VectorXd x(2 * order + 1);
    for (int i = 0; i <= order; ++i) x(i) = num0[i];
    {
        std::vector<double> unscaled = den0;
        double s = 1;
        for (auto& d : unscaled) {
            d /= s;
            s *= p.rho;
        }
        auto k = poly_to_reflection(unscaled);
        for (int i = 0; i < order; ++i) x(order + 1 + i) = std::atanh(std::clamp(k[i], -1 + 1e-15, 1 - 1e-15));
    }

    const int nval = static_cast<int>(2 * p.theta.size() + p.cap_theta.size());
    for (double mu : opt.penalties) {
        Functor f(&p, mu, static_cast<int>(x.size()), nval);
        Eigen::NumericalDiff<Functor> nd(f);
        Eigen::LevenbergMarquardt<Eigen::NumericalDiff<Functor>> lm(nd);
        lm.parameters.maxfev = opt.max_fev;
        lm.minimize(x);
    }
    p.unpack(x, w.num, w.den);
    finish(w, b, opt);
    return w;
}

BoundWeight fit_bound(const std::vector<double>& b, const FrequencyGrid& grid, int order, double dt,
                      const FitOptions& opt) {
    check_inputs(b, grid, order);
    BoundWeight best = fit_bound_from(b, grid, 0, dt, opt, nullptr);
    for (int n = 1; n <= order; ++n) {
        BoundWeight fresh = fit_bound_from(b, grid, n, dt, opt, nullptr);
        BoundWeight grown = fit_bound_from(b, grid, n, dt, opt, &best);
        BoundWeight cand = fresh.mean_log_overshoot <= grown.mean_log_overshoot ? fresh : grown;
        if (cand.mean_log_overshoot > best.mean_log_overshoot) {
            // keep the lower-order solution, padded with a cancelling pole/zero at 0
            cand = best;
            cand.num.resize(n + 1, 0.0);
            cand.den.resize(n + 1, 0.0);
        }
        cand.order = n;
        best = cand;
    }
    return best;
}

WeightMatrix fit_bound_matrix(const ResidualSet& rs, const std::vector<std::vector<int>>& orders, double dt,
                              const FitOptions& opt) {
    const int R = rs.rows(), C = rs.cols();
    if (static_cast<int>(orders.size()) != R) throw std::invalid_argument("fit_bound_matrix: order rows mismatch");
    WeightMatrix W(R);
    for (int i = 0; i < R; ++i) {
        if (static_cast<int>(orders[i].size()) != C) throw std::invalid_argument("fit_bound_matrix: order cols mismatch");
        for (int j = 0; j < C; ++j) W[i].push_back(fit_bound(rs.entry_bound(i, j), rs.grid, orders[i][j], dt, opt));
    }
    return W;
}

std::vector<Mat> weight_magnitudes(const WeightMatrix& W, const FrequencyGrid& grid) {
    const long R = static_cast<long>(W.size()), C = R ? static_cast<long>(W[0].size()) : 0;
    std::vector<Mat> out(grid.size(), Mat(R, C));
    for (long i = 0; i < R; ++i)
        for (long j = 0; j < C; ++j) {
            auto m = W[i][j].magnitude(grid);
            for (std::size_t k = 0; k < grid.size(); ++k) out[k](i, j) = m[k];
        }
    return out;
}

StateSpace weight_state_space(const WeightMatrix& W) {
    const int R = static_cast<int>(W.size());
    if (R == 0 || W[0].empty()) throw std::invalid_argument("weight_state_space: empty weight matrix");
    const int C = static_cast<int>(W[0].size());
    std::vector<StateSpace> parts;
    int nx = 0;
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) {
            parts.push_back(W[i][j].state_space());
            nx += parts.back().nx();
        }
    Mat A = Mat::Zero(nx, nx), B = Mat::Zero(nx, C), Cm = Mat::Zero(R, nx), D = Mat::Zero(R, C);
    int off = 0, e = 0;
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j, ++e) {
            const auto& s = parts[e];
            const int n = s.nx();
            A.block(off, off, n, n) = s.A;
            B.block(off, j, n, 1) = s.B;
            Cm.block(i, off, 1, n) = s.C;
            D(i, j) = s.D(0, 0);
            off += n;
        }
    return StateSpace(A, B, Cm, D, W[0][0].dt);
}

}  // namespace kobs
