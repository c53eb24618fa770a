#include "kobs/uncertainty.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kobs {

const std::vector<UncertaintyForm>& all_forms() {
    static const std::vector<UncertaintyForm> f{UncertaintyForm::Additive,        UncertaintyForm::InputMult,
                                                UncertaintyForm::OutputMult,      UncertaintyForm::InverseAdditive,
                                                UncertaintyForm::InverseInputMult, UncertaintyForm::InverseOutputMult};
    return f;
}

std::string to_string(UncertaintyForm f) {
    switch (f) {
        case UncertaintyForm::Additive: return "additive";
        case UncertaintyForm::InputMult: return "input_mult";
        case UncertaintyForm::OutputMult: return "output_mult";
        case UncertaintyForm::InverseAdditive: return "inverse_additive";
        case UncertaintyForm::InverseInputMult: return "inverse_input_mult";
        case UncertaintyForm::InverseOutputMult: return "inverse_output_mult";
    }
    return "?";
}

UncertaintyForm form_from_string(const std::string& s) {
    for (auto f : all_forms())
        if (to_string(f) == s) return f;
    throw std::invalid_argument("unknown uncertainty form '" + s + "'");
}

namespace {

struct Pinv {
    CMat M;
    bool ill;
};

Pinv pinv_flag(const CMat& A) {
    Eigen::JacobiSVD<CMat> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec sv = svd.singularValues();
    Pinv out{CMat::Zero(A.cols(), A.rows()), false};
    if (sv.size() == 0 || sv(0) == 0) {
        out.ill = true;
        return out;
    }
    out.ill = sv(sv.size() - 1) < kCondFlag * sv(0);
    Eigen::VectorXcd inv = Eigen::VectorXcd::Zero(sv.size());
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > 1e-14 * sv(0)) inv(i) = 1.0 / sv(i);
    out.M = svd.matrixV() * inv.asDiagonal() * svd.matrixU().adjoint();
    return out;
}

CMat eye_like(long n) { return CMat::Identity(n, n); }

}  // namespace

CMat pinv(const CMat& M) { return pinv_flag(M).M; }

CMat residual_at(UncertaintyForm f, const CMat& G, const CMat& Gp, bool* ill) {
    if (G.rows() != Gp.rows() || G.cols() != Gp.cols()) throw std::invalid_argument("residual: shape mismatch");
    const CMat D = Gp - G;
    bool flag = false;
    CMat E;
    switch (f) {
        case UncertaintyForm::Additive: E = D; break;
        case UncertaintyForm::InputMult: {
            auto p = pinv_flag(G);
            flag = p.ill;
            E = p.M * D;
            break;
        }
        case UncertaintyForm::OutputMult: {
            auto p = pinv_flag(G);
            flag = p.ill;
            E = D * p.M;
            break;
        }
        case UncertaintyForm::InverseAdditive: {
            auto pg = pinv_flag(G), pp = pinv_flag(Gp);
            flag = pg.ill || pp.ill;
            E = pp.M * D * pg.M;
            break;
        }
        case UncertaintyForm::InverseInputMult: {
            auto p = pinv_flag(Gp);
            flag = p.ill;
            E = eye_like(G.cols()) - p.M * G;
            break;
        }
        case UncertaintyForm::InverseOutputMult: {
            auto p = pinv_flag(Gp);
            flag = p.ill;
            E = D * p.M;
            break;
        }
    }
    if (ill) *ill = flag;
    return E;
}

CMat reconstruct_at(UncertaintyForm f, const CMat& G, const CMat& E) {
    switch (f) {
        case UncertaintyForm::Additive: return G + E;
        case UncertaintyForm::InputMult: return G * (eye_like(G.cols()) + E);
        case UncertaintyForm::OutputMult: return (eye_like(G.rows()) + E) * G;
        case UncertaintyForm::InverseAdditive: return (G.inverse() - E).inverse();
        case UncertaintyForm::InverseInputMult: return G * (eye_like(G.cols()) - E).inverse();
        case UncertaintyForm::InverseOutputMult: return (eye_like(G.rows()) - E).inverse() * G;
    }
    throw std::logic_error("reconstruct: bad form");
}

namespace {

void check_grids(const FreqResponse& a, const FreqResponse& b) {
    if (a.grid.theta != b.grid.theta || a.samples.size() != b.samples.size())
        throw std::invalid_argument("residual: frequency grids differ");
}

}  // namespace

Residuals residual(UncertaintyForm f, const FreqResponse& Gnom, const FreqResponse& Gpert) {
    check_grids(Gnom, Gpert);
    Residuals r;
    r.E.reserve(Gnom.samples.size());
    for (std::size_t k = 0; k < Gnom.samples.size(); ++k) {
        bool ill = false;
        r.E.push_back(residual_at(f, Gnom.samples[k], Gpert.samples[k], &ill));
        if (ill) r.ill_conditioned.push_back(static_cast<int>(k));
    }
    return r;
}

std::vector<double> ResidualSet::sigma_profile(std::size_t d) const {
    std::vector<double> s(grid.size());
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = sigma_max(residuals.at(d)[k]);
    return s;
}

double ResidualSet::peak() const { return bound.empty() ? 0.0 : *std::max_element(bound.begin(), bound.end()); }

double ResidualSet::argmax_theta() const {
    if (bound.empty()) return 0.0;
    return grid.theta[std::max_element(bound.begin(), bound.end()) - bound.begin()];
}

int ResidualSet::rows() const { return residuals.empty() ? 0 : static_cast<int>(residuals[0][0].rows()); }
int ResidualSet::cols() const { return residuals.empty() ? 0 : static_cast<int>(residuals[0][0].cols()); }

std::vector<double> ResidualSet::entry_bound(int i, int j) const {
    std::vector<double> b(grid.size(), 0.0);
    for (const auto& r : residuals)
        for (std::size_t k = 0; k < b.size(); ++k) b[k] = std::max(b[k], std::abs(r[k](i, j)));
    return b;
}

std::vector<double> population_bound(const ResidualSet& rs) {
    if (rs.residuals.empty()) throw std::invalid_argument("population_bound: empty residual set");
    std::vector<double> b(rs.grid.size(), 0.0);
    for (std::size_t d = 0; d < rs.residuals.size(); ++d) {
        auto s = rs.sigma_profile(d);
        for (std::size_t k = 0; k < b.size(); ++k) b[k] = std::max(b[k], s[k]);
    }
    return b;
}

ResidualSet make_residual_set(UncertaintyForm f, std::size_t nominal_index, const std::vector<FreqResponse>& models,
                              const std::vector<int>& ids) {
    if (models.size() != ids.size() || models.empty()) throw std::invalid_argument("residual set: ids and models differ");
    if (nominal_index >= models.size()) throw std::invalid_argument("residual set: nominal index out of range");
    ResidualSet rs;
    rs.form = f;
    rs.nominal_id = ids[nominal_index];
    rs.grid = models[nominal_index].grid;
    rs.drive_ids = ids;
    for (const auto& m : models) {
        auto r = residual(f, models[nominal_index], m);
        rs.ill_conditioned += static_cast<int>(r.ill_conditioned.size());
        rs.residuals.push_back(std::move(r.E));
    }
    rs.bound = population_bound(rs);
    return rs;
}

Selection select_nominal(const std::vector<FreqResponse>& models, const std::vector<int>& ids,
                         const std::vector<UncertaintyForm>& forms) {
    if (models.size() < 2) throw std::invalid_argument("select_nominal: need at least two drives");
    if (forms.empty()) throw std::invalid_argument("select_nominal: no uncertainty forms");
    // candidates in id order so a strict comparison implements the tie-break
    std::vector<std::size_t> order(models.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    std::vector<UncertaintyForm> fs = forms;
    std::sort(fs.begin(), fs.end());
    fs.erase(std::unique(fs.begin(), fs.end()), fs.end());

    Selection sel;
    double best = INFINITY;
    for (std::size_t c : order) {
        for (auto f : fs) {
            auto rs = make_residual_set(f, c, models, ids);
            const double pk = rs.peak();
            sel.table.push_back({ids[c], f, pk});
            if (pk < best) {
                best = pk;
                sel.set = std::move(rs);
            }
        }
    }
    return sel;
}

OutlierFlags detect_outliers(const std::vector<Mat>& wmag, const FreqResponse& cand, const FreqResponse& Gnom,
                             UncertaintyForm f, double margin) {
    check_grids(Gnom, cand);
    if (wmag.size() != Gnom.samples.size()) throw std::invalid_argument("detect_outliers: weight grid mismatch");
    auto r = residual(f, Gnom, cand);
    const long R = r.E[0].rows(), C = r.E[0].cols();
    if (wmag[0].rows() != R || wmag[0].cols() != C)
        throw std::invalid_argument("detect_outliers: weights do not cover every residual entry");
    OutlierFlags out;
    out.entry.assign(R, std::vector<bool>(C, false));
    out.first_index.assign(R, std::vector<int>(C, -1));
    for (std::size_t k = 0; k < r.E.size(); ++k) {
        for (long i = 0; i < R; ++i)
            for (long j = 0; j < C; ++j) {
                const double e = std::abs(r.E[k](i, j)), w = wmag[k](i, j);
                if (w > 0) out.worst_ratio = std::max(out.worst_ratio, e / w);
                else if (e > 0) out.worst_ratio = INFINITY;
                if (e > (1 + margin) * w && !out.entry[i][j]) {
                    out.entry[i][j] = true;
                    out.first_index[i][j] = static_cast<int>(k);
                    out.outlier = true;
                }
            }
    }
    return out;
}

ScreenResult screen_population(const ResidualSet& rs, double threshold) {
    const std::size_t n = rs.residuals.size();
    std::vector<std::vector<double>> prof(n);
    for (std::size_t d = 0; d < n; ++d) prof[d] = rs.sigma_profile(d);
    ScreenResult out;
    for (std::size_t d = 0; d < n; ++d) {
        double own = 0, others = 0;
        for (std::size_t k = 0; k < rs.grid.size(); ++k) {
            own = std::max(own, prof[d][k]);
            for (std::size_t e = 0; e < n; ++e)
                if (e != d) others = std::max(others, prof[e][k]);
        }
        const double ratio = others > 0 ? own / others : (own > 0 ? INFINITY : 0.0);
        out.ratio.push_back(ratio);
        if (ratio > threshold && rs.drive_ids[d] != rs.nominal_id)
            out.removed.push_back(rs.drive_ids[d]);
        else
            out.kept.push_back(rs.drive_ids[d]);
    }
    return out;
}

}  // namespace kobs
