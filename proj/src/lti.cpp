#include "kobs/lti.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace kobs {

StateSpace::StateSpace(Mat a, Mat b, Mat c, Mat d, double dt_)
    : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)), dt(dt_) {
    validate();
}

void StateSpace::validate() const {
    const auto n = A.rows();
    if (A.cols() != n) throw std::invalid_argument("StateSpace: A must be square");
    if (B.rows() != n) throw std::invalid_argument("StateSpace: B rows != nx");
    if (C.cols() != n) throw std::invalid_argument("StateSpace: C cols != nx");
    if (D.rows() != C.rows() || D.cols() != B.cols())
        throw std::invalid_argument("StateSpace: D shape does not match C rows x B cols");
    if (!(dt > 0)) throw std::invalid_argument("StateSpace: dt must be positive");
}

StateSpace StateSpace::gain(const Mat& d, double dt) {
    return StateSpace(Mat(0, 0), Mat(0, d.cols()), Mat(d.rows(), 0), d, dt);
}

FrequencyGrid::FrequencyGrid(std::vector<double> t) : theta(std::move(t)) { validate(); }

void FrequencyGrid::validate() const {
    if (theta.empty()) throw std::invalid_argument("FrequencyGrid: empty");
    for (std::size_t k = 0; k < theta.size(); ++k) {
        if (!(theta[k] > 0.0) || theta[k] > M_PI + 1e-15)
            throw std::invalid_argument("FrequencyGrid: theta outside (0, pi]");
        if (k > 0 && !(theta[k] > theta[k - 1]))
            throw std::invalid_argument("FrequencyGrid: not strictly increasing");
    }
}

FrequencyGrid FrequencyGrid::logspace(double lo, double hi, int n) {
    if (n < 1 || !(lo > 0) || !(hi >= lo)) throw std::invalid_argument("logspace: bad range");
    std::vector<double> t(n);
    if (n == 1) {
        t[0] = lo;
    } else {
        const double a = std::log10(lo), b = std::log10(hi);
        for (int k = 0; k < n; ++k) t[k] = std::pow(10.0, a + (b - a) * k / (n - 1));
        t[n - 1] = hi;  // pow(10, log10(pi)) can land a hair above pi
    }
    return FrequencyGrid(std::move(t));
}

FrequencyGrid FrequencyGrid::default_grid() { return logspace(1e-4, M_PI, 512); }

CMat eval_tf(const StateSpace& sys, double theta) {
    const int n = sys.nx();
    CMat out = sys.D.cast<cplx>();
    if (n == 0) return out;
    const cplx z = std::polar(1.0, theta);
    CMat R = -sys.A.cast<cplx>();
    R.diagonal().array() += z;
    Eigen::PartialPivLU<CMat> lu(R);
    // rcond check so that a singular resolvent is reported instead of returning inf
    const double rc = lu.rcond();
    if (!(rc > 1e-15)) {
        std::ostringstream os;
        os << "freq_response: singular resolvent at theta=" << theta;
        throw std::runtime_error(os.str());
    }
    out += sys.C.cast<cplx>() * lu.solve(sys.B.cast<cplx>());
    return out;
}

FreqResponse freq_response(const StateSpace& sys, const FrequencyGrid& grid) {
    FreqResponse fr;
    fr.grid = grid;
    fr.samples.reserve(grid.size());
    if (sys.nx() == 0) {
        for (std::size_t k = 0; k < grid.size(); ++k) fr.samples.push_back(sys.D.cast<cplx>());
        return fr;
    }
    // one Hessenberg-free path: complex Schur once, then triangular solves per point
    Eigen::ComplexSchur<CMat> schur(sys.A.cast<cplx>());
    const CMat& T = schur.matrixT();
    const CMat& U = schur.matrixU();
    const CMat Bt = U.adjoint() * sys.B.cast<cplx>();
    const CMat Ct = sys.C.cast<cplx>() * U;
    const CMat Dc = sys.D.cast<cplx>();
    for (double th : grid.theta) {
        const cplx z = std::polar(1.0, th);
        CMat R = -T;
        R.diagonal().array() += z;
        double dmin = R.diagonal().cwiseAbs().minCoeff();
        if (!(dmin > 1e-14)) {
            std::ostringstream os;
            os << "freq_response: singular resolvent at theta=" << th;
            throw std::runtime_error(os.str());
        }
        CMat X = R.triangularView<Eigen::Upper>().solve(Bt);
        fr.samples.push_back(Ct * X + Dc);
    }
    return fr;
}

double spectral_radius(const Mat& A) {
    if (A.rows() == 0) return 0.0;
    Eigen::EigenSolver<Mat> es(A, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

bool is_schur(const Mat& A, double tol) { return spectral_radius(A) < 1.0 - tol; }
bool is_schur(const StateSpace& sys, double tol) { return is_schur(sys.A, tol); }

Mat solve_dlyap(const Mat& A, const Mat& Q) {
    const int n = static_cast<int>(A.rows());
    if (A.cols() != n || Q.rows() != n || Q.cols() != n)
        throw std::invalid_argument("solve_dlyap: dimension mismatch");
    if (n == 0) return Mat(0, 0);
    // Bartels-Stewart on the complex Schur form: T X T^H - X = -Qt
    Eigen::ComplexSchur<CMat> schur(A.cast<cplx>());
    const CMat& T = schur.matrixT();
    const CMat& U = schur.matrixU();
    CMat Qt = U.adjoint() * Q.cast<cplx>() * U;
    CMat X = CMat::Zero(n, n);
    CMat TX = CMat::Zero(n, n);  // T * X, filled column by column
    for (int j = n - 1; j >= 0; --j) {
        Eigen::VectorXcd rhs = -Qt.col(j);
        for (int k = j + 1; k < n; ++k) rhs -= TX.col(k) * std::conj(T(j, k));
        CMat M = std::conj(T(j, j)) * T;
        M.diagonal().array() -= 1.0;
        for (int i = 0; i < n; ++i)
            if (std::abs(M(i, i)) < 1e-300) throw std::runtime_error("solve_dlyap: A has reciprocal eigenvalues");
        X.col(j) = M.triangularView<Eigen::Upper>().solve(rhs);
        TX.col(j) = T * X.col(j);
    }
    Mat P = (U * X * U.adjoint()).real();
    return 0.5 * (P + P.transpose());
}

double h2_norm(const StateSpace& sys) {
    if (!is_schur(sys)) throw std::runtime_error("h2_norm: system is not Schur stable");
    double v = (sys.D.transpose() * sys.D).trace();
    if (sys.nx() > 0) {
        Mat P = solve_dlyap(sys.A, sys.B * sys.B.transpose());
        v += (sys.C * P * sys.C.transpose()).trace();
    }
    return std::sqrt(std::max(v, 0.0));
}

double sigma_max(const CMat& M) {
    if (M.size() == 0) return 0.0;
    Eigen::JacobiSVD<CMat> svd(M);
    return svd.singularValues()(0);
}

double hinf_norm(const StateSpace& sys, const FrequencyGrid& grid) {
    if (!is_schur(sys)) throw std::runtime_error("hinf_norm: system is not Schur stable");
    FreqResponse fr = freq_response(sys, grid);
    double m = 0.0;
    for (const auto& s : fr.samples) m = std::max(m, sigma_max(s));
    return m;
}

StateSpace series(const StateSpace& g1, const StateSpace& g2) {
    if (g1.ny() != g2.nu()) throw std::invalid_argument("series: g1 outputs != g2 inputs");
    const int n1 = g1.nx(), n2 = g2.nx();
    Mat A = Mat::Zero(n1 + n2, n1 + n2);
    A.topLeftCorner(n1, n1) = g1.A;
    A.bottomLeftCorner(n2, n1) = g2.B * g1.C;
    A.bottomRightCorner(n2, n2) = g2.A;
    Mat B(n1 + n2, g1.nu());
    B << g1.B, g2.B * g1.D;
    Mat C(g2.ny(), n1 + n2);
    C << g2.D * g1.C, g2.C;
    return StateSpace(A, B, C, g2.D * g1.D, g1.dt);
}

StateSpace append(const StateSpace& g1, const StateSpace& g2) {
    const int n1 = g1.nx(), n2 = g2.nx();
    Mat A = Mat::Zero(n1 + n2, n1 + n2);
    A.topLeftCorner(n1, n1) = g1.A;
    A.bottomRightCorner(n2, n2) = g2.A;
    Mat B = Mat::Zero(n1 + n2, g1.nu() + g2.nu());
    B.topLeftCorner(n1, g1.nu()) = g1.B;
    B.bottomRightCorner(n2, g2.nu()) = g2.B;
    Mat C = Mat::Zero(g1.ny() + g2.ny(), n1 + n2);
    C.topLeftCorner(g1.ny(), n1) = g1.C;
    C.bottomRightCorner(g2.ny(), n2) = g2.C;
    Mat D = Mat::Zero(g1.ny() + g2.ny(), g1.nu() + g2.nu());
    D.topLeftCorner(g1.ny(), g1.nu()) = g1.D;
    D.bottomRightCorner(g2.ny(), g2.nu()) = g2.D;
    return StateSpace(A, B, C, D, g1.dt);
}

StateSpace feedback_lft(const StateSpace& P, int nu, int ny, const StateSpace& K) {
    const int nw = P.nu() - nu, nz = P.ny() - ny;
    if (nw < 0 || nz < 0) throw std::invalid_argument("feedback_lft: channel sizes exceed plant");
    if (K.nu() != ny || K.ny() != nu) throw std::invalid_argument("feedback_lft: controller shape mismatch");
    const int n = P.nx(), nk = K.nx();
    Mat B1 = P.B.leftCols(nw), B2 = P.B.rightCols(nu);
    Mat C1 = P.C.topRows(nz), C2 = P.C.bottomRows(ny);
    Mat D11 = P.D.topLeftCorner(nz, nw), D12 = P.D.topRightCorner(nz, nu);
    Mat D21 = P.D.bottomLeftCorner(ny, nw), D22 = P.D.bottomRightCorner(ny, nu);
    // u = Ck xk + Dk y, y = C2 x + D21 w + D22 u
    Mat E = Mat::Identity(nu, nu) - K.D * D22;
    Eigen::PartialPivLU<Mat> lu(E);
    if (!(lu.rcond() > 1e-14)) throw std::runtime_error("feedback_lft: ill-posed interconnection");
    Mat Eu_x = lu.solve(K.D * C2);   // u = Eu_x x + Eu_k xk + Eu_w w
    Mat Eu_k = lu.solve(K.C);
    Mat Eu_w = lu.solve(K.D * D21);
    Mat Yx = C2 + D22 * Eu_x, Yk = D22 * Eu_k, Yw = D21 + D22 * Eu_w;
    Mat A = Mat::Zero(n + nk, n + nk);
    A.topLeftCorner(n, n) = P.A + B2 * Eu_x;
    A.topRightCorner(n, nk) = B2 * Eu_k;
    A.bottomLeftCorner(nk, n) = K.B * Yx;
    A.bottomRightCorner(nk, nk) = K.A + K.B * Yk;
    Mat B(n + nk, nw);
    B << B1 + B2 * Eu_w, K.B * Yw;
    Mat C(nz, n + nk);
    C << C1 + D12 * Eu_x, D12 * Eu_k;
    Mat D = D11 + D12 * Eu_w;
    return StateSpace(A, B, C, D, P.dt);
}

StateSpace select_io(const StateSpace& sys, const std::vector<int>& outs, const std::vector<int>& ins) {
    Mat B(sys.nx(), ins.size()), C(outs.size(), sys.nx()), D(outs.size(), ins.size());
    for (std::size_t j = 0; j < ins.size(); ++j) B.col(j) = sys.B.col(ins[j]);
    for (std::size_t i = 0; i < outs.size(); ++i) C.row(i) = sys.C.row(outs[i]);
    for (std::size_t i = 0; i < outs.size(); ++i)
        for (std::size_t j = 0; j < ins.size(); ++j) D(i, j) = sys.D(outs[i], ins[j]);
    return StateSpace(sys.A, B, C, D, sys.dt);
}

std::vector<int> index_range(int begin, int end) {
    std::vector<int> v;
    for (int i = begin; i < end; ++i) v.push_back(i);
    return v;
}

}  // namespace kobs
