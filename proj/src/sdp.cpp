#include "kobs/sdp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace kobs::sdp {

const char* to_string(Status s) {
    switch (s) {
        case Status::Optimal: return "optimal";
        case Status::Infeasible: return "infeasible";
        case Status::Unbounded: return "unbounded";
        case Status::MaxIterations: return "max_iterations";
        case Status::NumericalError: return "numerical_error";
    }
    return "unknown";
}

namespace {

template <class S>
using MatS = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecS = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
struct BlockS {
    int dim = 0;
    MatS<S> F0;
    std::vector<int> var;
    std::vector<MatS<S>> F;
};

template <class S>
S frob(const MatS<S>& m) {
    return m.norm();
}

// largest alpha with X + alpha dX >= 0 (inf if unbounded)
template <class S>
S max_step(const MatS<S>& X, const MatS<S>& dX, bool& ok) {
    Eigen::LLT<MatS<S>> llt(X);
    if (llt.info() != Eigen::Success) {
        ok = false;
        return S(0);
    }
    MatS<S> L = llt.matrixL();
    MatS<S> W = L.template triangularView<Eigen::Lower>().solve(dX);
    W = L.template triangularView<Eigen::Lower>().solve(W.transpose()).transpose();
    W = S(0.5) * (W + W.transpose());
    Eigen::SelfAdjointEigenSolver<MatS<S>> es(W, Eigen::EigenvaluesOnly);
    S lmin = es.eigenvalues()(0);
    if (lmin >= S(0)) return std::numeric_limits<S>::infinity();
    return S(-1) / lmin;
}

template <class S>
Result solve_impl(const Problem& prob, const Options& opt) {
    using M = MatS<S>;
    using V = VecS<S>;
    const int m = prob.nvar;
    Result res;
    std::vector<BlockS<S>> blk(prob.blocks.size());
    int N = 0;
    for (std::size_t j = 0; j < prob.blocks.size(); ++j) {
        const auto& b = prob.blocks[j];
        blk[j].dim = b.dim;
        blk[j].F0 = b.F0.template cast<S>();
        for (const auto& [i, F] : b.terms) {
            if (i < 0 || i >= m) throw std::invalid_argument("sdp: variable index out of range");
            blk[j].var.push_back(i);
            blk[j].F.push_back(F.template cast<S>());
        }
        N += b.dim;
    }
    V c = prob.c.template cast<S>();
    if (c.size() != m) throw std::invalid_argument("sdp: objective size mismatch");

    const std::size_t nb = blk.size();
    std::vector<M> X(nb), Z(nb);
    V y = V::Zero(m);

    // starting point scaled to the data
    S normF0 = 0, normC = c.norm();
    for (std::size_t j = 0; j < nb; ++j) {
        S d = std::sqrt(S(blk[j].dim));
        S fmax = frob<S>(blk[j].F0);
        for (const auto& F : blk[j].F) fmax = std::max(fmax, frob<S>(F));
        S cmax = 0;
        for (std::size_t t = 0; t < blk[j].F.size(); ++t)
            cmax = std::max(cmax, (S(1) + std::abs(c(blk[j].var[t]))) / (S(1) + frob<S>(blk[j].F[t])));
        S eta = std::max(S(10), std::max(d, fmax));
        S xi = std::max(S(10), d * cmax);
        Z[j] = eta * M::Identity(blk[j].dim, blk[j].dim);
        X[j] = xi * M::Identity(blk[j].dim, blk[j].dim);
        normF0 += frob<S>(blk[j].F0) * frob<S>(blk[j].F0);
    }
    normF0 = std::sqrt(normF0);
    S X0norm = 0;
    for (std::size_t j = 0; j < nb; ++j) X0norm = std::max(X0norm, frob<S>(X[j]));

    auto Fy = [&](std::size_t j, const V& yy) {
        M F = blk[j].F0;
        for (std::size_t t = 0; t < blk[j].F.size(); ++t) F += yy(blk[j].var[t]) * blk[j].F[t];
        return F;
    };
    auto Aop = [&](const std::vector<M>& W) {
        V a = V::Zero(m);
        for (std::size_t j = 0; j < nb; ++j)
            for (std::size_t t = 0; t < blk[j].F.size(); ++t)
                a(blk[j].var[t]) += blk[j].F[t].cwiseProduct(W[j]).sum();
        return a;
    };

    const S tol = S(opt.tol);
    int stall = 0;
    S best_merit = std::numeric_limits<S>::infinity();
    V best_y = y;
    std::vector<M> Zi(nb), Rz(nb);

    for (int it = 0; it < opt.max_iter; ++it) {
        res.iterations = it;
        S mu = 0;
        for (std::size_t j = 0; j < nb; ++j) mu += X[j].cwiseProduct(Z[j]).sum();
        mu /= S(N);
        S pinf = 0;
        for (std::size_t j = 0; j < nb; ++j) {
            Rz[j] = Fy(j, y) - Z[j];
            pinf += Rz[j].squaredNorm();
        }
        pinf = std::sqrt(pinf) / (S(1) + normF0);
        V rc = c - Aop(X);
        S dinf = rc.norm() / (S(1) + normC);
        S pobj = c.dot(y);
        S dobj = 0;
        for (std::size_t j = 0; j < nb; ++j) dobj -= blk[j].F0.cwiseProduct(X[j]).sum();
        S gap = std::abs(pobj - dobj) / (S(1) + std::abs(pobj) + std::abs(dobj));
        S cgap = mu * S(N) / (S(1) + std::abs(pobj) + std::abs(dobj));

        res.primal_obj = static_cast<double>(pobj);
        res.dual_obj = static_cast<double>(dobj);
        res.rel_gap = static_cast<double>(std::max(gap, cgap));
        res.primal_infeas = static_cast<double>(pinf);
        res.dual_infeas = static_cast<double>(dinf);
        if (opt.verbose)
            std::fprintf(stderr, "sdp it %3d pobj % .10e dobj % .10e gap %.2e pinf %.2e dinf %.2e mu %.2e\n", it,
                         (double)pobj, (double)dobj, (double)gap, (double)pinf, (double)dinf, (double)mu);

        S merit = std::max(std::max(gap, cgap), std::max(pinf, dinf));
        if (merit < best_merit) {
            best_merit = merit;
            best_y = y;
        }
        if (gap < tol && cgap < tol && pinf < tol && dinf < tol) {
            res.status = Status::Optimal;
            break;
        }

        // infeasibility certificates: X blowing up with A(X) ~ 0 and tr(F0 X) < 0
        S Xn = 0;
        for (std::size_t j = 0; j < nb; ++j) Xn = std::max(Xn, frob<S>(X[j]));
        if (Xn > S(1e10) * (S(1) + X0norm)) {
            S f0x = 0;
            for (std::size_t j = 0; j < nb; ++j) f0x += blk[j].F0.cwiseProduct(X[j]).sum();
            V ax = Aop(X);
            if (f0x / Xn < S(0) && ax.norm() / Xn < S(1e-6) * (S(1) + normC)) {
                res.status = Status::Infeasible;
                res.message = "primal LMI infeasible (dual ray)";
                break;
            }
        }
        if (y.norm() > S(1e12)) {
            res.status = Status::Unbounded;
            res.message = "objective unbounded below";
            break;
        }

        // Schur complement
        for (std::size_t j = 0; j < nb; ++j) {
            Eigen::LLT<M> llt(Z[j]);
            if (llt.info() != Eigen::Success) {
                res.status = Status::NumericalError;
                res.message = "Z lost definiteness";
                goto done;
            }
            Zi[j] = llt.solve(M::Identity(blk[j].dim, blk[j].dim));
            Zi[j] = S(0.5) * (Zi[j] + Zi[j].transpose());
        }
        {
            M Msch = M::Zero(m, m);
            std::vector<std::vector<M>> H(nb);
            for (std::size_t j = 0; j < nb; ++j) {
                const auto& b = blk[j];
                H[j].resize(b.F.size());
                for (std::size_t t = 0; t < b.F.size(); ++t) H[j][t] = (Zi[j] * b.F[t] * X[j]).transpose();
                for (std::size_t t = 0; t < b.F.size(); ++t)
                    for (std::size_t s = 0; s <= t; ++s) {
                        S v = b.F[s].cwiseProduct(H[j][t]).sum();
                        Msch(b.var[s], b.var[t]) += v;
                        if (s != t) Msch(b.var[t], b.var[s]) += v;
                    }
            }
            // variables appearing in the same block twice are summed above; symmetrize
            Msch = S(0.5) * (Msch + Msch.transpose());
            S dmax = Msch.diagonal().cwiseAbs().maxCoeff();
            Eigen::LLT<M> mllt(Msch);
            M Mreg;
            if (mllt.info() != Eigen::Success) {
                Mreg = Msch;
                Mreg.diagonal().array() += std::max(dmax, S(1)) * S(1e-14);
                mllt.compute(Mreg);
            }
            Eigen::LDLT<M> mldlt;
            bool use_ldlt = mllt.info() != Eigen::Success;
            if (use_ldlt) mldlt.compute(Msch);

            auto solveM = [&](const V& r) -> V { return use_ldlt ? V(mldlt.solve(r)) : V(mllt.solve(r)); };

            auto direction = [&](S sigma, const std::vector<M>* corr, V& dy, std::vector<M>& dX, std::vector<M>& dZ) {
                std::vector<M> T(nb);
                for (std::size_t j = 0; j < nb; ++j) {
                    T[j] = sigma * mu * Zi[j] - X[j] - Zi[j] * Rz[j] * X[j];
                    if (corr) T[j] -= (*corr)[j];
                }
                V rhs = Aop(T) - rc;
                dy = solveM(rhs);
                for (std::size_t j = 0; j < nb; ++j) {
                    dZ[j] = Rz[j];
                    for (std::size_t t = 0; t < blk[j].F.size(); ++t) dZ[j] += dy(blk[j].var[t]) * blk[j].F[t];
                    dZ[j] = S(0.5) * (dZ[j] + dZ[j].transpose());
                    M d = sigma * mu * Zi[j] - X[j] - Zi[j] * dZ[j] * X[j];
                    if (corr) d -= (*corr)[j];
                    dX[j] = S(0.5) * (d + d.transpose());
                }
            };

            auto steps = [&](const std::vector<M>& dX, const std::vector<M>& dZ, S& ap, S& ad) -> bool {
                ap = std::numeric_limits<S>::infinity();
                ad = ap;
                bool ok = true;
                for (std::size_t j = 0; j < nb; ++j) {
                    ap = std::min(ap, max_step<S>(X[j], dX[j], ok));
                    ad = std::min(ad, max_step<S>(Z[j], dZ[j], ok));
                }
                return ok;
            };

            V dya(m), dyc(m);
            std::vector<M> dXa(nb), dZa(nb), dXc(nb), dZc(nb);
            direction(S(0), nullptr, dya, dXa, dZa);
            S ap, ad;
            if (!steps(dXa, dZa, ap, ad)) {
                res.status = Status::NumericalError;
                res.message = "iterate lost definiteness";
                goto done;
            }
            ap = std::min(S(1), ap);
            ad = std::min(S(1), ad);
            S mua = 0;
            for (std::size_t j = 0; j < nb; ++j)
                mua += (X[j] + ap * dXa[j]).cwiseProduct(Z[j] + ad * dZa[j]).sum();
            mua /= S(N);
            S ratio = std::max(S(0), mua / mu);
            S sigma = std::min(S(1), ratio * ratio * ratio);
            // keep some centering while infeasible
            if (std::max(pinf, dinf) > S(1e3) * tol) sigma = std::max(sigma, S(1e-3));

            std::vector<M> corr(nb);
            for (std::size_t j = 0; j < nb; ++j) corr[j] = Zi[j] * dZa[j] * dXa[j];
            direction(sigma, &corr, dyc, dXc, dZc);
            if (!steps(dXc, dZc, ap, ad)) {
                res.status = Status::NumericalError;
                res.message = "iterate lost definiteness";
                goto done;
            }
            const S gamma = S(0.95);
            ap = std::min(S(1), gamma * ap);
            ad = std::min(S(1), gamma * ad);
            if (ap < S(1e-10) && ad < S(1e-10)) {
                if (++stall > 3) {
                    res.status = Status::NumericalError;
                    res.message = "step length collapsed";
                    break;
                }
            } else {
                stall = 0;
            }
            for (std::size_t j = 0; j < nb; ++j) {
                X[j] += ap * dXc[j];
                Z[j] += ad * dZc[j];
                X[j] = S(0.5) * (X[j] + X[j].transpose());
                Z[j] = S(0.5) * (Z[j] + Z[j].transpose());
            }
            y += ad * dyc;
        }
        if (it == opt.max_iter - 1) {
            res.status = Status::MaxIterations;
            res.iterations = opt.max_iter;
        }
    }
done:
    if (res.status != Status::Optimal && res.status != Status::Infeasible && res.status != Status::Unbounded)
        y = best_y;
    res.y = y.template cast<double>();
    S lmin = std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j < nb; ++j) {
        if (blk[j].dim == 0) continue;
        Eigen::SelfAdjointEigenSolver<M> es(Fy(j, y), Eigen::EigenvaluesOnly);
        lmin = std::min(lmin, es.eigenvalues()(0));
    }
    res.min_eig = static_cast<double>(lmin);
    res.primal_obj = static_cast<double>(c.dot(y));
    return res;
}

}  // namespace

Result solve(const Problem& prob, const Options& opt) {
    if (opt.extended_precision) return solve_impl<long double>(prob, opt);
    return solve_impl<double>(prob, opt);
}

// ---------------------------------------------------------------- Affine

Affine Affine::constant(const Mat& m) {
    Affine a;
    a.c0 = m;
    return a;
}

Affine Affine::operator+(const Affine& o) const {
    if (rows() != o.rows() || cols() != o.cols()) throw std::invalid_argument("Affine +: shape mismatch");
    Affine r = *this;
    r.c0 += o.c0;
    for (const auto& [k, v] : o.terms) {
        auto it = r.terms.find(k);
        if (it == r.terms.end())
            r.terms.emplace(k, v);
        else
            it->second += v;
    }
    return r;
}

Affine Affine::operator-() const { return scaled(-1.0); }
Affine Affine::operator-(const Affine& o) const { return *this + (-o); }

Affine Affine::scaled(double s) const {
    Affine r = *this;
    r.c0 *= s;
    for (auto& [k, v] : r.terms) v *= s;
    return r;
}

Affine Affine::operator*(const Mat& R) const {
    if (cols() != R.rows()) throw std::invalid_argument("Affine *: shape mismatch");
    Affine r;
    r.c0 = c0 * R;
    for (const auto& [k, v] : terms) r.terms.emplace(k, v * R);
    return r;
}

Affine operator*(const Mat& L, const Affine& a) {
    if (L.cols() != a.rows()) throw std::invalid_argument("Affine *: shape mismatch");
    Affine r;
    r.c0 = L * a.c0;
    for (const auto& [k, v] : a.terms) r.terms.emplace(k, L * v);
    return r;
}

Affine operator+(const Affine& a, const Mat& m) { return a + Affine::constant(m); }
Affine operator+(const Mat& m, const Affine& a) { return Affine::constant(m) + a; }

Affine Affine::transpose() const {
    Affine r;
    r.c0 = c0.transpose();
    for (const auto& [k, v] : terms) r.terms.emplace(k, v.transpose());
    return r;
}

Mat Affine::value(const Vec& y) const {
    Mat v = c0;
    for (const auto& [k, m] : terms) v += y(k) * m;
    return v;
}

Affine bmat(const std::vector<std::vector<Affine>>& rows) {
    if (rows.empty()) return Affine(0, 0);
    std::vector<int> rh, cw;
    for (const auto& r : rows) {
        if (r.size() != rows[0].size()) throw std::invalid_argument("bmat: ragged block rows");
        rh.push_back(r[0].rows());
    }
    for (const auto& b : rows[0]) cw.push_back(b.cols());
    int R = 0, C = 0;
    for (int v : rh) R += v;
    for (int v : cw) C += v;
    Affine out(R, C);
    int r0 = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        int c0 = 0;
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            const Affine& b = rows[i][j];
            if (b.rows() != rh[i] || b.cols() != cw[j]) throw std::invalid_argument("bmat: block shape mismatch");
            out.c0.block(r0, c0, rh[i], cw[j]) = b.c0;
            for (const auto& [k, v] : b.terms) {
                auto it = out.terms.find(k);
                if (it == out.terms.end()) it = out.terms.emplace(k, Mat::Zero(R, C)).first;
                it->second.block(r0, c0, rh[i], cw[j]) += v;
            }
            c0 += cw[j];
        }
        r0 += rh[i];
    }
    return out;
}

Affine Builder::sym(int n) {
    Affine a(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i <= j; ++i) {
            Mat e = Mat::Zero(n, n);
            e(i, j) = 1.0;
            e(j, i) = 1.0;
            a.terms.emplace(n_++, e);
        }
    return a;
}

Affine Builder::full(int r, int c) {
    Affine a(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) {
            Mat e = Mat::Zero(r, c);
            e(i, j) = 1.0;
            a.terms.emplace(n_++, e);
        }
    return a;
}

Affine Builder::scalar() { return full(1, 1); }

void Builder::add_lmi(const Affine& F, double margin) {
    if (F.rows() != F.cols()) throw std::invalid_argument("add_lmi: not square");
    lmis_.push_back((F + F.transpose()).scaled(0.5));
    margins_.push_back(margin);
}

void Builder::minimize(const Affine& objective) {
    if (objective.rows() != 1 || objective.cols() != 1) throw std::invalid_argument("minimize: objective must be 1x1");
    obj_ = objective;
}

Problem Builder::problem() const {
    Problem p;
    p.nvar = n_;
    p.c = Vec::Zero(n_);
    for (const auto& [k, v] : obj_.terms) p.c(k) += v(0, 0);
    for (std::size_t i = 0; i < lmis_.size(); ++i) {
        const Affine& F = lmis_[i];
        Block b;
        b.dim = F.rows();
        b.F0 = F.c0 - margins_[i] * Mat::Identity(b.dim, b.dim);
        for (const auto& [k, v] : F.terms)
            if (v.cwiseAbs().maxCoeff() > 0.0) b.terms.emplace_back(k, v);
        p.blocks.push_back(std::move(b));
    }
    return p;
}

}  // namespace kobs::sdp
