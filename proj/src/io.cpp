#include "kobs/io.hpp"

#include <fstream>
#include <stdexcept>

namespace kobs {

json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (long i = 0; i < m.rows(); ++i) {
        json r = json::array();
        for (long j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(r);
    }
    return rows;
}

Mat mat_from_json(const json& j, long cols_if_empty) {
    if (!j.is_array()) throw std::invalid_argument("matrix: expected an array of rows");
    const long r = static_cast<long>(j.size());
    if (r == 0) return Mat(0, cols_if_empty);
    const long c = static_cast<long>(j[0].size());
    Mat m(r, c);
    for (long i = 0; i < r; ++i) {
        if (!j[i].is_array() || static_cast<long>(j[i].size()) != c)
            throw std::invalid_argument("matrix: ragged rows");
        for (long k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
    }
    return m;
}

json to_json(const StateSpace& s) {
    return {{"A", mat_to_json(s.A)}, {"B", mat_to_json(s.B)}, {"C", mat_to_json(s.C)},
            {"D", mat_to_json(s.D)}, {"dt", s.dt}};
}

StateSpace state_space_from_json(const json& j) {
    Mat D = mat_from_json(j.at("D"));
    Mat A = mat_from_json(j.at("A"));
    Mat B = mat_from_json(j.at("B"), D.cols());
    Mat C = mat_from_json(j.at("C"));
    // empty rows lose their column count
    if (A.rows() == 0) {
        B.resize(0, D.cols());
        C.resize(D.rows(), 0);
    }
    return StateSpace(A, B, C, D, j.at("dt").get<double>());
}

json to_json(const LiftingConfig& c) {
    return {{"kind", to_string(c.kind)}, {"r", c.r}, {"phi", c.phi}, {"state_dim", c.state_dim},
            {"input_dim", c.input_dim}};
}

LiftingConfig lifting_from_json(const json& j) {
    LiftingConfig c;
    c.kind = lifting_kind_from_string(j.at("kind").get<std::string>());
    c.r = j.at("r").get<double>();
    c.phi = j.at("phi").get<double>();
    c.state_dim = j.at("state_dim").get<int>();
    c.input_dim = j.at("input_dim").get<int>();
    c.validate();
    return c;
}

json to_json(const KoopmanModel& m) {
    return {{"U", mat_to_json(m.U)},
            {"p_theta", m.p_theta()},
            {"p_upsilon", m.p_upsilon()},
            {"cfg", to_json(m.cfg)},
            {"dt", m.dt},
            {"alpha", m.alpha},
            {"residual_rms", m.residual_rms},
            {"pinv_fallback", m.pinv_fallback}};
}

KoopmanModel koopman_from_json(const json& j) {
    KoopmanModel m;
    m.cfg = lifting_from_json(j.at("cfg"));
    m.U = mat_from_json(j.at("U"));
    m.dt = j.at("dt").get<double>();
    m.alpha = j.at("alpha").get<double>();
    m.residual_rms = j.at("residual_rms").get<double>();
    m.pinv_fallback = j.value("pinv_fallback", false);
    if (m.U.rows() != m.p_theta() || m.U.cols() != m.p_theta() + m.p_upsilon() ||
        j.at("p_theta").get<int>() != m.p_theta() || j.at("p_upsilon").get<int>() != m.p_upsilon())
        throw std::invalid_argument("koopman model: U does not match the lifting dimensions");
    return m;
}

json to_json(const BoundWeight& w) {
    return {{"num", w.num},
            {"den", w.den},
            {"dt", w.dt},
            {"order", w.order},
            {"max_undershoot", w.max_undershoot},
            {"mean_log_overshoot", w.mean_log_overshoot},
            {"max_pole_modulus", w.max_pole_modulus},
            {"warning", w.warning}};
}

BoundWeight weight_from_json(const json& j) {
    BoundWeight w;
    w.num = j.at("num").get<std::vector<double>>();
    w.den = j.at("den").get<std::vector<double>>();
    w.dt = j.at("dt").get<double>();
    w.order = j.value("order", static_cast<int>(w.den.size()) - 1);
    w.max_undershoot = j.value("max_undershoot", 0.0);
    w.mean_log_overshoot = j.value("mean_log_overshoot", 0.0);
    w.max_pole_modulus = j.value("max_pole_modulus", 0.0);
    w.warning = j.value("warning", false);
    if (w.den.empty() || w.den[0] != 1.0) throw std::invalid_argument("weight: denominator must start with 1");
    return w;
}

json to_json(const DriveParams& p) {
    return {{"J", p.J},           {"b", p.b},
            {"kt", p.kt},         {"kp", p.kp},
            {"kd", p.kd},         {"r", p.r},
            {"a1", p.a1},         {"a2", p.a2},
            {"phi1", p.phi1},     {"phi2", p.phi2},
            {"load_amp", p.load_amp}, {"load_phase", p.load_phase},
            {"noise_std", p.noise_std}, {"vel_cutoff_hz", p.vel_cutoff_hz},
            {"substeps", p.substeps}, {"outlier", p.outlier}};
}

DriveParams drive_params_from_json(const json& j) {
    DriveParams p;
    p.J = j.at("J").get<double>();
    p.b = j.at("b").get<double>();
    p.kt = j.at("kt").get<double>();
    p.kp = j.at("kp").get<double>();
    p.kd = j.at("kd").get<double>();
    p.r = j.at("r").get<double>();
    p.a1 = j.at("a1").get<double>();
    p.a2 = j.at("a2").get<double>();
    p.phi1 = j.at("phi1").get<double>();
    p.phi2 = j.at("phi2").get<double>();
    p.load_amp = j.at("load_amp").get<double>();
    p.load_phase = j.at("load_phase").get<double>();
    p.noise_std = j.at("noise_std").get<double>();
    p.vel_cutoff_hz = j.at("vel_cutoff_hz").get<double>();
    p.substeps = j.at("substeps").get<int>();
    p.outlier = j.at("outlier").get<bool>();
    return p;
}

void write_json(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << j.dump(2) << "\n";
}

json read_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace kobs
