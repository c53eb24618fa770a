#include "kobs/synthesis.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <sstream>

namespace kobs {

void GeneralizedPlant::validate() const {
    sys.validate();
    if (nw1 < 0 || nw2 < 0 || nu < 1 || nz1 < 0 || nz2 < 0 || ny < 1)
        throw std::invalid_argument("GeneralizedPlant: bad channel sizes");
    if (nw() + nu != sys.nu()) throw std::invalid_argument("GeneralizedPlant: input partition does not sum to B cols");
    if (nz() + ny != sys.ny()) throw std::invalid_argument("GeneralizedPlant: output partition does not sum to C rows");
    if (D22().cwiseAbs().maxCoeff() != 0.0) throw std::invalid_argument("GeneralizedPlant: D_yu must be zero");
}

namespace {

void need(bool ok, const char* block, const std::string& what) {
    if (!ok) throw std::invalid_argument(std::string("build_generalized_plant: ") + block + ": " + what);
}

Mat z(Eigen::Index r, Eigen::Index c) { return Mat::Zero(r, c); }

// assembled by row blocks
Mat blocks(const std::vector<std::vector<Mat>>& rows) {
    Eigen::Index R = 0, C = 0;
    for (const auto& r : rows) R += r[0].rows();
    for (const auto& b : rows[0]) C += b.cols();
    Mat out(R, C);
    Eigen::Index r0 = 0;
    for (const auto& r : rows) {
        Eigen::Index c0 = 0;
        for (const auto& b : r) {
            out.block(r0, c0, b.rows(), b.cols()) = b;
            c0 += b.cols();
        }
        r0 += r[0].rows();
    }
    return out;
}

}  // namespace

GeneralizedPlant build_generalized_plant(const StateSpace& nom, const StateSpace& Wp, const StateSpace& Wu,
                                         const StateSpace& Wd) {
    nom.validate();
    const int n = nom.nx(), m = nom.nu(), p = nom.ny();
    need(Wp.nu() == n, "Wp", "input count must equal the nominal state dimension");
    need(Wu.ny() == m, "Wu", "output count must equal the plant input dimension");
    need(Wd.ny() == m, "Wd", "output count must equal the plant input dimension");
    need(nom.D.cwiseAbs().maxCoeff() == 0.0, "nominal", "measurement feedthrough D must be zero");
    const int np = Wp.nx(), nuu = Wu.nx(), nd = Wd.nx();
    const int nw1 = Wu.nu(), nw2 = Wd.nu(), nz1 = Wp.ny();
    const Mat& A = nom.A;
    const Mat& B = nom.B;
    const Mat& C = nom.C;

    Mat AA = blocks({{A, z(n, n), z(n, np), B * Wu.C, B * Wd.C},
                     {z(n, n), A, z(n, np), B * Wu.C, z(n, nd)},
                     {Wp.B, -Wp.B, Wp.A, z(np, nuu), z(np, nd)},
                     {z(nuu, n), z(nuu, n), z(nuu, np), Wu.A, z(nuu, nd)},
                     {z(nd, n), z(nd, n), z(nd, np), z(nd, nuu), Wd.A}});
    Mat B1 = blocks({{B * Wu.D, B * Wd.D},
                     {B * Wu.D, z(n, nw2)},
                     {z(np, nw1), z(np, nw2)},
                     {Wu.B, z(nuu, nw2)},
                     {z(nd, nw1), Wd.B}});
    Mat B2 = blocks({{z(n, m)}, {B}, {z(np + nuu + nd, m)}});
    Mat C1 = blocks({{Wp.D, -Wp.D, Wp.C, z(nz1, nuu), z(nz1, nd)},
                     {z(m, n), z(m, n), z(m, np), Wu.C, Wd.C}});
    Mat D11 = blocks({{z(nz1, nw1), z(nz1, nw2)}, {Wu.D, Wd.D}});
    Mat C2 = blocks({{C, -C, z(p, np + nuu + nd)}});

    GeneralizedPlant P;
    P.nw1 = nw1;
    P.nw2 = nw2;
    P.nu = m;
    P.nz1 = nz1;
    P.nz2 = m;
    P.ny = p;
    const int N = AA.rows();
    Mat Ball(N, nw1 + nw2 + m), Call(nz1 + m + p, N), Dall = Mat::Zero(nz1 + m + p, nw1 + nw2 + m);
    Ball << B1, B2;
    Call << C1, C2;
    Dall.topLeftCorner(nz1 + m, nw1 + nw2) = D11;
    P.sys = StateSpace(AA, Ball, Call, Dall, nom.dt);
    P.validate();
    return P;
}

namespace {

// plant data with the sensor-noise column and the channel index sets
struct Design {
    Mat A, B1, B2, C1, C2, D11, D12, D21;
    std::vector<int> h2_in, h2_out, hi_in, hi_out;
};

Design make_design(const GeneralizedPlant& P, const SynthesisOptions& opt) {
    Design d;
    d.A = P.sys.A;
    d.B2 = P.B2();
    d.C1 = P.C1();
    d.C2 = P.C2();
    d.D12 = P.D12();
    const int nw = P.nw(), nn = opt.sensor_noise > 0 ? P.ny : 0;
    d.B1 = Mat::Zero(d.A.rows(), nw + nn);
    d.B1.leftCols(nw) = P.B1();
    d.D11 = Mat::Zero(P.nz(), nw + nn);
    d.D11.leftCols(nw) = P.D11();
    d.D21 = Mat::Zero(P.ny, nw + nn);
    d.D21.leftCols(nw) = P.D21();
    if (nn) d.D21.rightCols(nn) = opt.sensor_noise * Mat::Identity(nn, nn);

    d.h2_in = index_range(0, P.nw1);
    if (opt.h2_channel == H2Channel::All)
        for (int i = P.nw1; i < nw; ++i) d.h2_in.push_back(i);
    for (int i = nw; i < nw + nn; ++i) d.h2_in.push_back(i);
    d.h2_out = index_range(0, P.nz1);
    d.hi_in = index_range(P.nw1, nw);
    d.hi_out = index_range(P.nz1, P.nz());
    return d;
}

Mat cols(const Mat& M, const std::vector<int>& idx) {
    Mat out(M.rows(), idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(j) = M.col(idx[j]);
    return out;
}
Mat rows(const Mat& M, const std::vector<int>& idx) {
    Mat out(idx.size(), M.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = M.row(idx[i]);
    return out;
}

// orthonormal basis of the observable subspace of (A, C)
Mat observable_basis(const Mat& A, const Mat& C, double tol) {
    const int n = A.rows();
    Mat V(n, 0);
    Mat W = C.transpose();
    for (int it = 0; it <= n && W.cols() > 0; ++it) {
        if (V.cols() > 0) W -= V * (V.transpose() * W);
        Eigen::JacobiSVD<Mat> svd(W, Eigen::ComputeThinU);
        const auto& s = svd.singularValues();
        if (s.size() == 0) break;
        int r = 0;
        double ref = std::max(1.0, s(0));
        while (r < s.size() && s(r) > tol * ref) ++r;
        if (r == 0) break;
        Mat Vn = svd.matrixU().leftCols(r);
        Mat Vc(n, V.cols() + r);
        Vc << V, Vn;
        V = Vc;
        if (V.cols() >= n) break;
        W = A.transpose() * Vn;
    }
    return V;
}

void reduce_and_balance(Design& d, const SynthesisOptions& opt, int& order) {
    Mat Call(d.C1.rows() + d.C2.rows(), d.A.cols());
    Call << d.C1, d.C2;
    Mat V = observable_basis(d.A, Call, opt.reduce_tol);
    if (V.cols() < d.A.rows()) {
        d.A = V.transpose() * d.A * V;
        d.B1 = V.transpose() * d.B1;
        d.B2 = V.transpose() * d.B2;
        d.C1 = d.C1 * V;
        d.C2 = d.C2 * V;
    }
    order = d.A.rows();
    if (!opt.balance || order == 0) return;
    // diagonal state scaling from the input gramian of a contracted A
    const double rho = 0.99;
    Mat Ball(order, d.B1.cols() + d.B2.cols());
    Ball << d.B1, d.B2;
    Mat Ar = d.A;
    double sr = spectral_radius(Ar);
    if (sr >= 1.0) Ar *= rho / sr;
    else Ar *= rho;
    Mat Q = solve_dlyap(Ar, Ball * Ball.transpose());
    Vec s = Q.diagonal().cwiseMax(1e-300).cwiseSqrt();
    double smax = s.maxCoeff();
    for (int i = 0; i < order; ++i) s(i) = std::max(s(i), 1e-12 * smax);
    Vec si = s.cwiseInverse();
    d.A = si.asDiagonal() * d.A * s.asDiagonal();
    d.B1 = si.asDiagonal() * d.B1;
    d.B2 = si.asDiagonal() * d.B2;
    d.C1 = d.C1 * s.asDiagonal();
    d.C2 = d.C2 * s.asDiagonal();
}

using sdp::Affine;

struct Vars {
    Affine X, Y, Ah, Bh, Ch, Dh;
    Affine P, AA;
};

Vars make_vars(sdp::Builder& b, const Design& d) {
    const int n = d.A.rows(), nu = d.B2.cols(), ny = d.C2.rows();
    Vars v;
    v.X = b.sym(n);
    v.Y = b.sym(n);
    v.Ah = b.full(n, n);
    v.Bh = b.full(n, ny);
    v.Ch = b.full(nu, n);
    v.Dh = b.full(nu, ny);
    Affine I = sdp::eye(n);
    v.P = sdp::bmat({{v.Y, I}, {I, v.X}});
    v.AA = sdp::bmat({{d.A * v.Y + d.B2 * v.Ch, d.A + d.B2 * v.Dh * d.C2}, {v.Ah, v.X * d.A + v.Bh * d.C2}});
    return v;
}

Affine BB(const Vars& v, const Design& d, const std::vector<int>& in) {
    Mat B1 = cols(d.B1, in), D21 = cols(d.D21, in);
    return sdp::bmat({{B1 + d.B2 * v.Dh * D21}, {v.X * B1 + v.Bh * D21}});
}
Affine CC(const Vars& v, const Design& d, const std::vector<int>& out) {
    Mat C1 = rows(d.C1, out), D12 = rows(d.D12, out);
    return sdp::bmat({{C1 * v.Y + D12 * v.Ch, C1 + D12 * v.Dh * d.C2}});
}
Affine DD(const Vars& v, const Design& d, const std::vector<int>& out, const std::vector<int>& in) {
    Mat D11 = cols(rows(d.D11, out), in), D12 = rows(d.D12, out), D21 = cols(d.D21, in);
    return D11 + D12 * v.Dh * D21;
}

// [P AA BB 0; AA' P 0 CC'; BB' 0 gI DD'; 0 CC DD gI] >= 0
Affine hinf_lmi(const Vars& v, const Design& d, const std::vector<int>& in, const std::vector<int>& out,
                const Affine& g) {
    const int n2 = 2 * d.A.rows(), k = in.size(), q = out.size();
    Affine bb = BB(v, d, in), cc = CC(v, d, out), dd = DD(v, d, out, in);
    auto gI = [&](int m) {
        Affine r(m, m);
        for (int i = 0; i < m; ++i) {
            Mat e = Mat::Zero(m, 1);
            e(i, 0) = 1.0;
            r = r + e * g * e.transpose();
        }
        return r;
    };
    return sdp::bmat({{v.P, v.AA, bb, sdp::zeros(n2, q)},
                      {v.AA.transpose(), v.P, sdp::zeros(n2, k), cc.transpose()},
                      {bb.transpose(), sdp::zeros(k, n2), gI(k), dd.transpose()},
                      {sdp::zeros(q, n2), cc, dd, gI(q)}});
}

struct Recon {
    StateSpace K;
    double cond = 0.0;
};

Recon reconstruct(const Vars& v, const Design& d, const Vec& y, double dt, double cond_max) {
    const int n = d.A.rows();
    Mat X = v.X.value(y), Y = v.Y.value(y);
    Mat Ah = v.Ah.value(y), Bh = v.Bh.value(y), Ch = v.Ch.value(y), Dh = v.Dh.value(y);
    Mat M = Mat::Identity(n, n) - X * Y;
    Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec s = svd.singularValues();
    if (s.size() == 0 || !(s(s.size() - 1) > 0.0)) throw std::runtime_error("synthesis: I - XY is singular, rescale the weights");
    Vec rs = s.cwiseSqrt();
    Mat U = svd.matrixU() * rs.asDiagonal();
    Mat V = svd.matrixV() * rs.asDiagonal();
    double cond = rs(0) / rs(rs.size() - 1);
    if (!(cond < cond_max)) {
        std::ostringstream os;
        os << "synthesis: controller reconstruction conditioning " << cond << " exceeds " << cond_max
           << "; rescale the weights";
        throw std::runtime_error(os.str());
    }
    Eigen::PartialPivLU<Mat> Ul(U), Vl(V);
    Mat Dk = Dh;
    Mat Ck = Vl.solve((Ch - Dk * d.C2 * Y).transpose()).transpose();
    Mat Bk = Ul.solve(Bh - X * d.B2 * Dk);
    Mat T = Ah - X * (d.A + d.B2 * Dk * d.C2) * Y - U * Bk * d.C2 * Y - X * d.B2 * Ck * V.transpose();
    Mat Ak = Vl.solve(Ul.solve(T).transpose()).transpose();
    return {StateSpace(Ak, Bk, Ck, Dk, dt), cond};
}

Mat stack_h(const Mat& a, const Mat& b) {
    Mat out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

// closed loop of the design plant (noise column included) with K
StateSpace design_closed_loop(const Design& d, const StateSpace& K, double dt) {
    const int nx = d.A.rows();
    Mat B = stack_h(d.B1, d.B2);
    Mat C(d.C1.rows() + d.C2.rows(), nx);
    C << d.C1, d.C2;
    Mat D = Mat::Zero(C.rows(), B.cols());
    D.topLeftCorner(d.D11.rows(), d.D11.cols()) = d.D11;
    D.topRightCorner(d.D12.rows(), d.D12.cols()) = d.D12;
    D.bottomLeftCorner(d.D21.rows(), d.D21.cols()) = d.D21;
    StateSpace P(d.A, B, C, D, dt);
    return feedback_lft(P, d.B2.cols(), d.C2.rows(), K);
}

}  // namespace

ClosedLoopReport validate_closed_loop(const GeneralizedPlant& P, const StateSpace& K, const SynthesisOptions& opt) {
    P.validate();
    if (K.nu() != P.ny || K.ny() != P.nu) throw std::invalid_argument("validate_closed_loop: controller shape mismatch");
    ClosedLoopReport r;
    Design d = make_design(P, opt);
    StateSpace cl = design_closed_loop(d, K, P.sys.dt);
    r.spectral_radius = spectral_radius(cl.A);
    r.schur = is_schur(cl.A);
    if (!r.schur) return r;
    auto idx = [](int a, int b) { return index_range(a, b); };
    r.h2_11 = h2_norm(select_io(cl, idx(0, P.nz1), idx(0, P.nw1)));
    r.h2_design = h2_norm(select_io(cl, d.h2_out, d.h2_in));
    if (P.nz2 > 0 && P.nw2 > 0) r.hinf_22 = hinf_norm(select_io(cl, d.hi_out, d.hi_in), opt.grid);
    r.hinf_full = hinf_norm(select_io(cl, idx(0, P.nz()), idx(0, P.nw())), opt.grid);
    return r;
}

namespace {

template <class Build>
sdp::Result solve_with_retry(const Build& build, const SynthesisOptions& opt, bool& extended) {
    sdp::Problem prob = build();
    sdp::Options so = opt.sdp;
    extended = so.extended_precision;
    sdp::Result r = sdp::solve(prob, so);
    if (r.status != sdp::Status::Optimal && r.status != sdp::Status::Infeasible && opt.retry_extended &&
        !so.extended_precision) {
        so.extended_precision = true;
        sdp::Result r2 = sdp::solve(prob, so);
        if (r2.status == sdp::Status::Optimal || r2.rel_gap + r2.primal_infeas < r.rel_gap + r.primal_infeas) {
            r = r2;
            extended = true;
        }
    }
    return r;
}

}  // namespace

SynthesisResult synth_mixed_h2_hinf(const GeneralizedPlant& P, const SynthesisOptions& opt) {
    P.validate();
    SynthesisResult res;
    Design d = make_design(P, opt);
    reduce_and_balance(d, opt, res.reduced_order);
    const int n = d.A.rows();

    sdp::Builder b;
    Vars v = make_vars(b, d);
    const int nz = d.h2_out.size(), k = d.h2_in.size();
    Affine W = b.sym(nz);
    {
        Affine bb = BB(v, d, d.h2_in), cc = CC(v, d, d.h2_out), dd = DD(v, d, d.h2_out, d.h2_in);
        const int n2 = 2 * n;
        b.add_lmi(sdp::bmat({{v.P, v.AA, bb},
                             {v.AA.transpose(), v.P, sdp::zeros(n2, k)},
                             {bb.transpose(), sdp::zeros(k, n2), sdp::eye(k)}}),
                  opt.lyap_margin);
        // no margin here: it would bias the objective, strictness comes from the block above
        b.add_lmi(sdp::bmat({{W, cc, dd}, {cc.transpose(), v.P, sdp::zeros(n2, k)}, {dd.transpose(), sdp::zeros(k, n2), sdp::eye(k)}}));
    }
    if (opt.hinf_constraint && !d.hi_in.empty() && !d.hi_out.empty()) {
        Affine g = Affine::constant(Mat::Constant(1, 1, opt.hinf_level));
        b.add_lmi(hinf_lmi(v, d, d.hi_in, d.hi_out, g), opt.lyap_margin);
    }
    Affine tr(1, 1);
    for (int i = 0; i < nz; ++i) {
        Mat e = Mat::Zero(1, nz);
        e(0, i) = 1.0;
        tr = tr + e * W * e.transpose();
    }
    b.minimize(tr);

    res.solver = solve_with_retry([&] { return b.problem(); }, opt, res.extended_precision);
    res.sdp_h2 = std::sqrt(std::max(0.0, res.solver.primal_obj));
    if (res.solver.status == sdp::Status::Infeasible || res.solver.status == sdp::Status::Unbounded) {
        res.message = std::string("SDP ") + sdp::to_string(res.solver.status);
        return res;
    }
    Recon rc;
    try {
        rc = reconstruct(v, d, res.solver.y, P.sys.dt, opt.recon_cond_max);
    } catch (const std::runtime_error& e) {
        if (res.solver.status == sdp::Status::Optimal) throw;
        res.message = std::string("SDP ") + sdp::to_string(res.solver.status) + ": " + e.what();
        return res;
    }
    res.K = rc.K;
    res.cond_recon = rc.cond;
    res.report = validate_closed_loop(P, res.K, opt);
    res.h2_cost = res.report.h2_design;
    res.hinf_22 = res.report.hinf_22;
    const bool hinf_ok = !opt.hinf_constraint || P.nw2 == 0 || P.nz2 == 0 || res.report.hinf_22 < 1.0;
    res.feasible = res.report.schur && hinf_ok;
    std::ostringstream os;
    os << "SDP " << sdp::to_string(res.solver.status) << (res.extended_precision ? " (long double)" : "")
       << ", closed loop " << (res.report.schur ? "Schur" : "NOT Schur") << ", hinf_22 " << res.report.hinf_22;
    res.message = os.str();
    return res;
}

HinfResult synth_hinf(const GeneralizedPlant& P, const SynthesisOptions& opt) {
    P.validate();
    HinfResult res;
    SynthesisOptions o = opt;
    o.sensor_noise = 0.0;
    Design d = make_design(P, o);
    int order = 0;
    reduce_and_balance(d, o, order);
    sdp::Builder b;
    Vars v = make_vars(b, d);
    Affine g = b.scalar();
    b.add_lmi(hinf_lmi(v, d, index_range(0, P.nw()), index_range(0, P.nz()), g), o.lyap_margin);
    b.minimize(g);
    bool ext = false;
    res.solver = solve_with_retry([&] { return b.problem(); }, o, ext);
    if (res.solver.status == sdp::Status::Infeasible || res.solver.status == sdp::Status::Unbounded) {
        res.message = std::string("SDP ") + sdp::to_string(res.solver.status);
        return res;
    }
    res.gamma_sdp = res.solver.primal_obj;
    Recon rc;
    try {
        rc = reconstruct(v, d, res.solver.y, P.sys.dt, o.recon_cond_max);
    } catch (const std::runtime_error& e) {
        if (res.solver.status == sdp::Status::Optimal) throw;
        res.message = std::string("SDP ") + sdp::to_string(res.solver.status) + ": " + e.what();
        return res;
    }
    res.K = rc.K;
    res.report = validate_closed_loop(P, res.K, o);
    res.feasible = res.report.schur;
    res.gamma = res.report.hinf_full;
    res.below_one = res.feasible && res.gamma < 1.0;
    res.message = std::string("SDP ") + sdp::to_string(res.solver.status);
    return res;
}

}  // namespace kobs
