#include "kobs/population_sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace kobs {

namespace fs = std::filesystem;

void Episode::validate() const {
    const std::size_t n = t.size();
    if (n < 2) throw std::invalid_argument("episode: fewer than two samples");
    if (ref_pos.size() != n || ref_vel.size() != n || meas_pos.size() != n || meas_vel.size() != n ||
        current.size() != n)
        throw std::invalid_argument("episode: channel lengths differ");
    if (!(dt > 0)) throw std::invalid_argument("episode: dt must be positive");
}

void DriveParams::validate() const {
    if (!(J > 0) || !(kt > 0) || !(r > 0)) throw std::invalid_argument("drive: J, kt and r must be positive");
    if (b < 0 || noise_std < 0 || a1 < 0 || a2 < 0) throw std::invalid_argument("drive: negative parameter");
    if (substeps < 1) throw std::invalid_argument("drive: substeps must be >= 1");
    if (!(vel_cutoff_hz > 0)) throw std::invalid_argument("drive: velocity cutoff must be positive");
}

namespace {

// one trapezoidal move from p0 to p1, samples at dt, 2dt, ... until done
void trap_move(double p0, double p1, const TrajectoryOptions& o, std::vector<double>& P, std::vector<double>& V) {
    const double d = p1 - p0, D = std::abs(d), s = d > 0 ? 1.0 : -1.0;
    if (D == 0) return;
    double ta = o.vmax / o.amax, vp = o.vmax, tc;
    if (D < o.vmax * ta) {
        ta = std::sqrt(D / o.amax);
        vp = o.amax * ta;
        tc = 0;
    } else {
        tc = (D - o.vmax * ta) / o.vmax;
    }
    const double T = 2 * ta + tc;
    const long n = static_cast<long>(std::ceil(T / o.dt - 1e-9));
    for (long k = 1; k <= n; ++k) {
        const double t = k * o.dt;
        double p, v;
        if (t < ta) {
            v = o.amax * t;
            p = 0.5 * o.amax * t * t;
        } else if (t < ta + tc) {
            v = vp;
            p = 0.5 * o.amax * ta * ta + vp * (t - ta);
        } else {
            const double rem = std::max(T - t, 0.0);
            v = o.amax * rem;
            p = D - 0.5 * o.amax * rem * rem;
        }
        P.push_back(p0 + s * p);
        V.push_back(s * v);
    }
}

std::vector<double> moving_average(const std::vector<double>& x, long h) {
    const long n = static_cast<long>(x.size());
    std::vector<double> y(x.size());
    if (h <= 0) return x;
    auto at = [&](long i) { return x[std::clamp(i, 0L, n - 1)]; };
    double acc = 0;
    for (long i = -h; i <= h; ++i) acc += at(i);
    const double w = static_cast<double>(2 * h + 1);
    for (long k = 0; k < n; ++k) {
        y[k] = acc / w;
        acc += at(k + h + 1) - at(k - h);
    }
    return y;
}

}  // namespace

Trajectory gen_trajectory(const std::vector<double>& cps, const TrajectoryOptions& o) {
    if (!(o.dt > 0) || !(o.vmax > 0) || !(o.amax > 0) || o.dwell < 0 || o.smoothing < 0)
        throw std::invalid_argument("trajectory: dt, vmax, amax must be positive");
    const long nd = std::lround(o.dwell / o.dt);
    const long h = std::lround(o.smoothing / (2 * o.dt));
    // start and end at rest, outside the reach of the smoothing window
    std::vector<double> P(h + 1, o.start), V(h + 1, 0.0);
    double cur = o.start;
    for (double c : cps) {
        if (!std::isfinite(c)) throw std::invalid_argument("trajectory: checkpoint is not finite");
        trap_move(cur, c, o, P, V);
        cur = c;
        P.insert(P.end(), nd, cur);
        V.insert(V.end(), nd, 0.0);
    }
    // let the smoothing window settle at the end
    P.insert(P.end(), h + 1, cur);
    V.insert(V.end(), h + 1, 0.0);
    Trajectory tr;
    tr.dt = o.dt;
    tr.natural_duration = static_cast<double>(P.size()) * o.dt;
    if (o.duration > 0) {
        const auto n = static_cast<std::size_t>(std::lround(o.duration / o.dt));
        if (P.size() > n)
            throw std::runtime_error("trajectory: moves need " + std::to_string(tr.natural_duration) +
                                     " s, longer than the episode duration");
        P.resize(n, cur);
        V.resize(n, 0.0);
    }
    tr.pos = moving_average(P, h);
    tr.vel = moving_average(V, h);
    return tr;
}

Trajectory random_trajectory(std::uint64_t seed, int n, double range, const TrajectoryOptions& opt, int max_tries) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-range, range);
    for (int k = 0; k < max_tries; ++k) {
        std::vector<double> cps(n);
        for (auto& c : cps) c = U(rng);
        TrajectoryOptions free = opt;
        free.duration = 0;
        auto tr = gen_trajectory(cps, free);
        if (opt.duration <= 0 || tr.natural_duration <= opt.duration) return gen_trajectory(cps, opt);
    }
    throw std::runtime_error("trajectory: no checkpoint draw fits the episode duration");
}

Episode simulate_drive(const DriveParams& p, const Trajectory& tr, bool loaded, std::uint64_t seed) {
    p.validate();
    const std::size_t n = tr.pos.size();
    if (n < 2 || tr.vel.size() != n) throw std::invalid_argument("simulate: trajectory too short or ragged");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0.0, 1.0);

    const double dt = tr.dt, h = dt / p.substeps;
    const double AL = loaded ? p.load_amp : 0.0;
    auto accel = [&](double th, double w, double i) {
        const double id = p.a1 * std::sin(p.r * th + p.phi1) + p.a2 * std::sin(2 * p.r * th + p.phi2);
        return (p.kt * (i + id) - p.b * w - AL * std::sin(th + p.load_phase)) / p.J;
    };
    const double beta = std::exp(-2 * M_PI * p.vel_cutoff_hz * dt);

    Episode ep;
    ep.dt = dt;
    ep.t.resize(n);
    ep.ref_pos = tr.pos;
    ep.ref_vel = tr.vel;
    ep.meas_pos.resize(n);
    ep.meas_vel.resize(n);
    ep.current.resize(n);
    double th = tr.pos[0], w = 0, vf = 0, prev = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double i = p.kp * (tr.pos[k] - th) + p.kd * (tr.vel[k] - w);
        const double m = th + p.noise_std * N(rng);
        vf = k == 0 ? 0.0 : beta * vf + (1 - beta) * (m - prev) / dt;
        prev = m;
        ep.t[k] = static_cast<double>(k) * dt;
        ep.meas_pos[k] = m;
        ep.meas_vel[k] = vf;
        ep.current[k] = i;
        for (int s = 0; s < p.substeps; ++s) {
            const double k1w = w, k1a = accel(th, w, i);
            const double k2w = w + h / 2 * k1a, k2a = accel(th + h / 2 * k1w, k2w, i);
            const double k3w = w + h / 2 * k2a, k3a = accel(th + h / 2 * k2w, k3w, i);
            const double k4w = w + h * k3a, k4a = accel(th + h * k3w, k4w, i);
            th += h / 6 * (k1w + 2 * k2w + 2 * k3w + k4w);
            w += h / 6 * (k1a + 2 * k2a + 2 * k3a + k4a);
        }
    }
    return ep;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

std::vector<DriveParams> gen_population(int n, std::uint64_t seed, int n_outliers, const PopulationOptions& o) {
    if (n < 1) throw std::invalid_argument("population: need at least one drive");
    if (n_outliers < 0 || n_outliers > n) throw std::invalid_argument("population: bad outlier count");
    std::vector<DriveParams> out;
    for (int d = 0; d < n; ++d) {
        std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(d), 0x706f70));
        std::uniform_real_distribution<double> U(-1.0, 1.0), P(0.0, 2 * M_PI);
        DriveParams p = o.nominal;
        p.J *= 1 + o.rel_mech * U(rng);
        p.b *= 1 + o.rel_mech * U(rng);
        p.kt *= 1 + o.rel_mech * U(rng);
        p.a1 *= 1 + o.rel_dist * U(rng);
        p.a2 *= 1 + o.rel_dist * U(rng);
        p.phi1 = P(rng);
        p.phi2 = P(rng);
        p.load_phase = P(rng);
        if (d >= n - n_outliers) {
            p.a1 *= o.outlier_factor;
            p.a2 *= o.outlier_factor;
            p.outlier = true;
        }
        out.push_back(p);
    }
    return out;
}

Split split_episodes(int n, int n_test, std::uint64_t seed, int drive) {
    if (n < 2) throw std::invalid_argument("split: need at least two episodes");
    n_test = std::clamp(n_test, 1, n - 1);
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(drive), 0x73706c));
    // Fisher-Yates with an explicit draw, std::shuffle is not portable across libraries
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(idx[i], idx[j]);
    }
    Split s;
    s.train.assign(idx.begin(), idx.end() - n_test);
    s.test.assign(idx.end() - n_test, idx.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

void write_episode_csv(const fs::path& path, const Episode& ep) {
    ep.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << "t,ref_pos,ref_vel,meas_pos,meas_vel,current\n";
    char buf[160];
    for (std::size_t k = 0; k < ep.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", ep.t[k], ep.ref_pos[k], ep.ref_vel[k],
                      ep.meas_pos[k], ep.meas_vel[k], ep.current[k]);
        f << buf;
    }
}

Episode read_episode_csv(const fs::path& path, const std::map<std::string, std::string>& aliases) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    auto fail = [&](std::size_t line, const std::string& what) {
        throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
    };
    std::string line;
    if (!std::getline(f, line)) fail(1, "empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    static const std::vector<std::string> names{"t", "ref_pos", "ref_vel", "meas_pos", "meas_vel", "current"};
    std::vector<int> col_of(names.size(), -1);
    {
        std::stringstream ss(line);
        std::string h;
        int c = 0;
        while (std::getline(ss, h, ',')) {
            auto a = aliases.find(h);
            const std::string key = a == aliases.end() ? h : a->second;
            auto it = std::find(names.begin(), names.end(), key);
            if (it != names.end()) {
                auto& slot = col_of[it - names.begin()];
                if (slot >= 0) fail(1, "duplicate column '" + key + "'");
                slot = c;
            }
            ++c;
        }
    }
    for (std::size_t i = 0; i < names.size(); ++i)
        if (col_of[i] < 0) fail(1, "missing column '" + names[i] + "'");

    std::vector<std::vector<double>*> dst;
    Episode ep;
    dst = {&ep.t, &ep.ref_pos, &ep.ref_vel, &ep.meas_pos, &ep.meas_vel, &ep.current};
    std::size_t ln = 1;
    std::vector<double> row;
    while (std::getline(f, line)) {
        ++ln;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        row.clear();
        const char* p = line.data();
        const char* end = p + line.size();
        while (true) {
            const char* q = std::find(p, end, ',');
            double v;
            auto [ptr, ec] = std::from_chars(p, q, v);
            if (ec != std::errc() || ptr != q) fail(ln, "bad number in column " + std::to_string(row.size() + 1));
            if (!std::isfinite(v)) fail(ln, "non-finite value in column " + std::to_string(row.size() + 1));
            row.push_back(v);
            if (q == end) break;
            p = q + 1;
        }
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (col_of[i] >= static_cast<int>(row.size())) fail(ln, "too few columns");
            dst[i]->push_back(row[col_of[i]]);
        }
    }
    if (ep.t.size() < 2) fail(ln, "fewer than two samples");
    ep.dt = ep.t[1] - ep.t[0];
    if (!(ep.dt > 0)) fail(3, "time column is not increasing");
    for (std::size_t k = 1; k < ep.t.size(); ++k)
        if (std::abs(ep.t[k] - ep.t[k - 1] - ep.dt) > 1e-6 * ep.dt + 1e-12)
            fail(k + 2, "non-uniform sampling");
    return ep;
}

fs::path episode_path(const fs::path& root, int drive, bool loaded, int episode) {
    char d[32], e[32];
    std::snprintf(d, sizeof d, "%03d", drive);
    std::snprintf(e, sizeof e, "%03d.csv", episode);
    return root / d / (loaded ? "loaded" : "unloaded") / e;
}

void write_dataset(const fs::path& root, const std::vector<DriveData>& drives) {
    for (const auto& d : drives) {
        for (std::size_t e = 0; e < d.unloaded.size(); ++e)
            write_episode_csv(episode_path(root, d.id, false, static_cast<int>(e)), d.unloaded[e]);
        for (std::size_t e = 0; e < d.loaded.size(); ++e)
            write_episode_csv(episode_path(root, d.id, true, static_cast<int>(e)), d.loaded[e]);
    }
}

std::vector<int> list_drives(const fs::path& root) {
    if (!fs::is_directory(root)) throw std::runtime_error("dataset: " + root.string() + " is not a directory");
    std::vector<int> ids;
    for (const auto& e : fs::directory_iterator(root)) {
        if (!e.is_directory()) continue;
        const std::string nm = e.path().filename().string();
        int id = 0;
        auto [ptr, ec] = std::from_chars(nm.data(), nm.data() + nm.size(), id);
        if (ec == std::errc() && ptr == nm.data() + nm.size()) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw std::runtime_error("dataset: no drive directories under " + root.string());
    return ids;
}

int count_episodes(const fs::path& root, int drive, bool loaded) {
    const fs::path sub = episode_path(root, drive, loaded, 0).parent_path();
    if (!fs::is_directory(sub)) return 0;
    int n = 0;
    for (const auto& e : fs::directory_iterator(sub))
        if (e.path().extension() == ".csv") ++n;
    return n;
}

DriveData read_drive(const fs::path& root, int drive, const std::map<std::string, std::string>& aliases,
                     bool include_loaded) {
    DriveData d;
    d.id = drive;
    const fs::path dir = episode_path(root, drive, false, 0).parent_path().parent_path();
    for (int cond = 0; cond < (include_loaded ? 2 : 1); ++cond) {
        const fs::path sub = dir / (cond == 0 ? "unloaded" : "loaded");
        if (!fs::is_directory(sub)) continue;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(sub))
            if (e.path().extension() == ".csv") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        auto& eps = cond == 0 ? d.unloaded : d.loaded;
        for (const auto& f : files) eps.push_back(read_episode_csv(f, aliases));
    }
    return d;
}

std::vector<DriveData> read_dataset(const fs::path& root, const std::map<std::string, std::string>& aliases) {
    std::vector<DriveData> out;
    for (int id : list_drives(root)) out.push_back(read_drive(root, id, aliases));
    return out;
}

}  // namespace kobs
