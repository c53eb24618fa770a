#include "kobs/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "kobs/edmd.hpp"
#include "kobs/lifting.hpp"
#include "kobs/observer.hpp"
#include "kobs/weight_fit.hpp"

namespace kobs {

namespace fs = std::filesystem;

double PipelineConfig::gear_band_center() const {
    return band_center > 0 ? band_center : gear_ratio * traj.vmax / (2 * M_PI);
}

const std::vector<std::string>& model_kinds() {
    static const std::vector<std::string> k{"linear", "koopman"};
    return k;
}

// ---------------------------------------------------------------- config

json default_config_json() {
    const PipelineConfig d;
    const DriveParams& n = d.pop.nominal;
    return {
        {"workdir", d.workdir.string()},
        {"seed", d.seed},
        {"jobs", d.jobs},
        {"population",
         {{"drives", d.drives},
          {"outliers", d.outliers},
          {"episodes", d.episodes},
          {"checkpoints", d.checkpoints},
          {"range", d.range},
          {"duration", 20.0},
          {"dt", d.traj.dt},
          {"vmax", d.traj.vmax},
          {"amax", d.traj.amax},
          {"dwell", d.traj.dwell},
          {"smoothing", d.traj.smoothing},
          {"rel_mech", d.pop.rel_mech},
          {"rel_dist", d.pop.rel_dist},
          {"outlier_factor", d.pop.outlier_factor},
          {"nominal",
           {{"J", n.J},
            {"b", n.b},
            {"kt", n.kt},
            {"kp", n.kp},
            {"kd", n.kd},
            {"r", n.r},
            {"a1", n.a1},
            {"a2", n.a2},
            {"load_amp", n.load_amp},
            {"noise_std", n.noise_std},
            {"vel_cutoff_hz", n.vel_cutoff_hz},
            {"substeps", n.substeps}}}}},
        {"dataset", {{"path", ""}, {"aliases", json::object()}, {"test_episodes", d.test_episodes}}},
        {"identify",
         {{"alpha_max", d.alpha_max},
          {"alpha_tol", d.alpha_tol},
          {"gear_ratio", d.gear_ratio},
          {"phase_samples", d.phase.n_samples},
          {"phase_quadrature", true},
          {"segment_min_len", d.phase.min_len},
          {"segment_tol", d.phase.tol},
          {"segment_vmax", d.phase.vmax}}},
        {"quantify",
         {{"forms", {"input_mult", "inverse_input_mult"}},
          {"grid", {{"lo", 1e-4}, {"hi", M_PI}, {"n", 512}}},
          {"screen_ratio", d.screen_ratio}}},
        {"weights", {{"orders", {{"linear", {{2}}}, {"koopman", {{3}}}}}, {"cap", 0.99}}},
        {"synthesis",
         {{"h2_channel", "all"},
          {"sensor_noise", d.syn.sensor_noise},
          {"hinf_constraint", d.syn.hinf_constraint},
          {"perf_weight", d.perf_weight},
          {"input_weight", d.input_weight},
          {"measured", d.measured}}},
        {"evaluate",
         {{"drive", d.eval_drive},
          {"band_center", d.band_center},
          {"band_halfwidth", d.band_halfwidth},
          {"load_band", d.load_band},
          {"nperseg", d.nperseg},
          {"relift_phase", "drive"}}},
        {"outliers", {{"kind", d.outlier_kind}, {"margin", d.margin}}},
    };
}

namespace {

// objects whose keys are free-form
bool free_map(const std::string& path) { return path == "dataset.aliases" || path == "weights.orders"; }

void merge(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + path + "'");
        json& slot = base[it.key()];
        if (slot.is_object() && !free_map(path))
            merge(slot, it.value(), path);
        else
            slot = it.value();
    }
}

void set_path(json& base, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &base;
    std::string path;
    std::size_t pos = 0;
    while (true) {
        const auto dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        path += (path.empty() ? "" : ".") + part;
        const bool last = dot == std::string::npos;
        const bool parent_free = free_map(path.substr(0, path.size() - part.size() - (path.size() > part.size())));
        if (!node->is_object() || (!node->contains(part) && !parent_free))
            throw ConfigError("config: unknown key '" + path + "'");
        if (last) {
            json wrapped = {{part, value}};
            if (parent_free)
                (*node)[part] = value;
            else
                merge(*node, wrapped, path.substr(0, path.size() - part.size() - (path.size() > part.size())));
            return;
        }
        node = &(*node)[part];
        pos = dot + 1;
    }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value for '" + where + "." + key + "': " + e.what());
    }
}

}  // namespace

PipelineConfig parse_config(const json& user) {
    json j = default_config_json();
    merge(j, user, "");
    PipelineConfig c;
    try {
        c.workdir = get<std::string>(j, "workdir", "");
        c.seed = get<std::uint64_t>(j, "seed", "");
        c.jobs = get<int>(j, "jobs", "");

        const json& p = j["population"];
        c.drives = get<int>(p, "drives", "population");
        c.outliers = get<int>(p, "outliers", "population");
        c.episodes = get<int>(p, "episodes", "population");
        c.checkpoints = get<int>(p, "checkpoints", "population");
        c.range = get<double>(p, "range", "population");
        c.traj.duration = get<double>(p, "duration", "population");
        c.traj.dt = get<double>(p, "dt", "population");
        c.traj.vmax = get<double>(p, "vmax", "population");
        c.traj.amax = get<double>(p, "amax", "population");
        c.traj.dwell = get<double>(p, "dwell", "population");
        c.traj.smoothing = get<double>(p, "smoothing", "population");
        c.pop.rel_mech = get<double>(p, "rel_mech", "population");
        c.pop.rel_dist = get<double>(p, "rel_dist", "population");
        c.pop.outlier_factor = get<double>(p, "outlier_factor", "population");
        const json& n = p["nominal"];
        auto& d = c.pop.nominal;
        d.J = get<double>(n, "J", "population.nominal");
        d.b = get<double>(n, "b", "population.nominal");
        d.kt = get<double>(n, "kt", "population.nominal");
        d.kp = get<double>(n, "kp", "population.nominal");
        d.kd = get<double>(n, "kd", "population.nominal");
        d.r = get<double>(n, "r", "population.nominal");
        d.a1 = get<double>(n, "a1", "population.nominal");
        d.a2 = get<double>(n, "a2", "population.nominal");
        d.load_amp = get<double>(n, "load_amp", "population.nominal");
        d.noise_std = get<double>(n, "noise_std", "population.nominal");
        d.vel_cutoff_hz = get<double>(n, "vel_cutoff_hz", "population.nominal");
        d.substeps = get<int>(n, "substeps", "population.nominal");

        const json& ds = j["dataset"];
        c.dataset = get<std::string>(ds, "path", "dataset");
        c.aliases = get<std::map<std::string, std::string>>(ds, "aliases", "dataset");
        c.test_episodes = get<int>(ds, "test_episodes", "dataset");

        const json& id = j["identify"];
        c.alpha_max = get<double>(id, "alpha_max", "identify");
        c.alpha_tol = get<double>(id, "alpha_tol", "identify");
        c.gear_ratio = get<double>(id, "gear_ratio", "identify");
        c.phase.n_samples = get<int>(id, "phase_samples", "identify");
        c.phase.quadrature = get<bool>(id, "phase_quadrature", "identify");
        c.phase.min_len = get<double>(id, "segment_min_len", "identify");
        c.phase.tol = get<double>(id, "segment_tol", "identify");
        c.phase.vmax = get<double>(id, "segment_vmax", "identify");

        const json& q = j["quantify"];
        c.forms.clear();
        for (const auto& f : get<std::vector<std::string>>(q, "forms", "quantify")) c.forms.push_back(form_from_string(f));
        const json& g = q["grid"];
        c.grid = FrequencyGrid::logspace(get<double>(g, "lo", "quantify.grid"), get<double>(g, "hi", "quantify.grid"),
                                         get<int>(g, "n", "quantify.grid"));
        c.screen_ratio = get<double>(q, "screen_ratio", "quantify");

        const json& w = j["weights"];
        c.orders = get<std::map<std::string, std::vector<std::vector<int>>>>(w, "orders", "weights");
        if (w["cap"].is_null())
            c.cap.reset();
        else
            c.cap = get<double>(w, "cap", "weights");

        const json& s = j["synthesis"];
        const auto ch = get<std::string>(s, "h2_channel", "synthesis");
        if (ch == "all")
            c.syn.h2_channel = H2Channel::All;
        else if (ch == "w1")
            c.syn.h2_channel = H2Channel::W1;
        else
            throw ConfigError("config: synthesis.h2_channel must be 'all' or 'w1'");
        c.syn.sensor_noise = get<double>(s, "sensor_noise", "synthesis");
        c.syn.hinf_constraint = get<bool>(s, "hinf_constraint", "synthesis");
        c.syn.grid = c.grid;
        c.perf_weight = get<std::vector<double>>(s, "perf_weight", "synthesis");
        c.input_weight = get<double>(s, "input_weight", "synthesis");
        c.measured = get<std::vector<int>>(s, "measured", "synthesis");

        const json& e = j["evaluate"];
        c.eval_drive = get<int>(e, "drive", "evaluate");
        c.band_center = get<double>(e, "band_center", "evaluate");
        c.band_halfwidth = get<double>(e, "band_halfwidth", "evaluate");
        c.load_band = get<double>(e, "load_band", "evaluate");
        c.nperseg = get<int>(e, "nperseg", "evaluate");
        const auto rp = get<std::string>(e, "relift_phase", "evaluate");
        if (rp != "drive" && rp != "model") throw ConfigError("config: evaluate.relift_phase must be 'drive' or 'model'");
        c.relift_drive_phase = rp == "drive";

        const json& o = j["outliers"];
        c.outlier_kind = get<std::string>(o, "kind", "outliers");
        c.margin = get<double>(o, "margin", "outliers");
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    if (c.jobs < 1) throw ConfigError("config: jobs must be >= 1");
    if (c.drives < 2) throw ConfigError("config: population.drives must be >= 2");
    if (c.outliers < 0 || c.outliers >= c.drives) throw ConfigError("config: population.outliers out of range");
    if (c.episodes < 2) throw ConfigError("config: population.episodes must be >= 2");
    if (c.test_episodes < 1) throw ConfigError("config: dataset.test_episodes must be >= 1");
    if (c.forms.empty()) throw ConfigError("config: quantify.forms is empty");
    if (c.outlier_kind != "linear" && c.outlier_kind != "koopman")
        throw ConfigError("config: outliers.kind must be 'linear' or 'koopman'");
    for (const auto& k : model_kinds())
        if (!c.orders.count(k)) throw ConfigError("config: weights.orders has no entry for '" + k + "'");
    if (c.measured.empty()) throw ConfigError("config: synthesis.measured is empty");
    for (int m : c.measured)
        if (m < 0 || m > 1) throw ConfigError("config: synthesis.measured indexes (position, velocity)");
    if (c.perf_weight.empty() || c.perf_weight.size() > 2)
        throw ConfigError("config: synthesis.perf_weight needs one or two entries");
    if (!(c.alpha_tol > 0) || !(c.alpha_max > 0)) throw ConfigError("config: alpha bounds must be positive");
    return c;
}

PipelineConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& sets,
                           std::optional<int> jobs) {
    json user = json::object();
    if (file) {
        try {
            user = read_json(*file);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
    }
    json full = default_config_json();
    merge(full, user, "");
    for (const auto& s : sets) set_path(full, s);
    if (jobs) full["jobs"] = *jobs;
    return parse_config(full);
}

// ---------------------------------------------------------------- helpers

namespace {

template <class F>
void parallel_for(int n, int jobs, F&& f) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr err;
    std::mutex m;
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(jobs, n); ++t)
        pool.emplace_back([&] {
            while (true) {
                const int i = next++;
                if (i >= n) break;
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(m);
                    if (!err) err = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

void log(const std::string& s) { std::cerr << s << "\n"; }

std::string id_name(int id) {
    char b[32];
    std::snprintf(b, sizeof b, "%03d", id);
    return b;
}

fs::path model_path(const PipelineConfig& c, const std::string& kind, int id) {
    return c.workdir / "models" / kind / (id_name(id) + ".json");
}

json need(const fs::path& p, const std::string& stage) {
    if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + " (run '" + stage + "' first)");
    return read_json(p);
}

struct Population {
    std::vector<int> ids;
    std::vector<KoopmanModel> models;
    std::vector<FreqResponse> fr;

    std::size_t index(int id) const {
        auto it = std::find(ids.begin(), ids.end(), id);
        if (it == ids.end()) throw std::runtime_error("drive " + std::to_string(id) + " not in the population");
        return static_cast<std::size_t>(it - ids.begin());
    }
};

Population load_population(const PipelineConfig& c, const std::string& kind) {
    const json ident = need(c.workdir / "models" / "identify.json", "identify");
    Population p;
    for (const auto& d : ident.at("drives")) p.ids.push_back(d.at("id").get<int>());
    p.models.resize(p.ids.size());
    p.fr.resize(p.ids.size());
    parallel_for(static_cast<int>(p.ids.size()), c.jobs, [&](int i) {
        p.models[i] = koopman_from_json(read_json(model_path(c, kind, p.ids[i])));
        // uncertainty plant: current -> (position, velocity)
        p.fr[i] = freq_response(p.models[i].state_space({0, 1}), c.grid);
    });
    return p;
}

struct Quantified {
    Selection sel;
    std::vector<int> kept, removed;
    std::vector<std::pair<int, double>> screen_ratios;
};

Quantified quantify_population(const PipelineConfig& c, const Population& pop) {
    Quantified q;
    q.kept = pop.ids;
    for (int round = 0; round < 10; ++round) {
        std::vector<FreqResponse> fr;
        for (int id : q.kept) fr.push_back(pop.fr[pop.index(id)]);
        q.sel = select_nominal(fr, q.kept, c.forms);
        auto sc = screen_population(q.sel.set, c.screen_ratio);
        if (round == 0)
            for (std::size_t i = 0; i < q.kept.size(); ++i) q.screen_ratios.emplace_back(q.kept[i], sc.ratio[i]);
        // comparing a drive against one or two others says little
        if (sc.removed.empty() || sc.kept.size() < 3) break;
        q.removed.insert(q.removed.end(), sc.removed.begin(), sc.removed.end());
        q.kept = sc.kept;
    }
    std::sort(q.removed.begin(), q.removed.end());
    return q;
}

ResidualSet residual_set_from_summary(const Population& pop, const json& s) {
    const auto kept = s.at("kept").get<std::vector<int>>();
    const int nominal = s.at("nominal_id").get<int>();
    std::vector<FreqResponse> fr;
    std::size_t nidx = 0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        fr.push_back(pop.fr[pop.index(kept[i])]);
        if (kept[i] == nominal) nidx = i;
    }
    return make_residual_set(form_from_string(s.at("form").get<std::string>()), nidx, fr, kept);
}

WeightMatrix fit_weights_for(const PipelineConfig& c, const std::string& kind, const ResidualSet& rs, double dt) {
    const auto& orders = c.orders.at(kind);
    if (static_cast<int>(orders.size()) != rs.rows() ||
        std::any_of(orders.begin(), orders.end(), [&](const auto& r) { return static_cast<int>(r.size()) != rs.cols(); }))
        throw ConfigError("config: weights.orders." + kind + " must be " + std::to_string(rs.rows()) + "x" +
                          std::to_string(rs.cols()) + " for the " + to_string(rs.form) + " residuals");
    FitOptions fo;
    fo.cap = c.cap;
    return fit_bound_matrix(rs, orders, dt, fo);
}

json weights_to_json(const WeightMatrix& W) {
    json rows = json::array();
    for (const auto& r : W) {
        json row = json::array();
        for (const auto& w : r) row.push_back(to_json(w));
        rows.push_back(row);
    }
    return rows;
}

WeightMatrix weights_from_json(const json& j) {
    WeightMatrix W;
    for (const auto& r : j) {
        W.emplace_back();
        for (const auto& w : r) W.back().push_back(weight_from_json(w));
    }
    return W;
}

GeneralizedPlant drive_plant(const PipelineConfig& c, const KoopmanModel& nom, const WeightMatrix& W) {
    const StateSpace G = nom.state_space(c.measured);
    const int p = nom.p_theta(), nu = nom.p_upsilon();
    Mat Wp = Mat::Zero(static_cast<long>(c.perf_weight.size()), p);
    for (std::size_t i = 0; i < c.perf_weight.size(); ++i) Wp(static_cast<long>(i), static_cast<long>(i)) = c.perf_weight[i];
    const StateSpace Wd = weight_state_space(W);
    if (Wd.nu() != nu || Wd.ny() != nu)
        throw ConfigError("config: the uncertainty weight must be " + std::to_string(nu) + "x" + std::to_string(nu) +
                          " to act at the plant input; choose an input-side form");
    return build_generalized_plant(G, StateSpace::gain(Wp, nom.dt), StateSpace::gain(c.input_weight * Mat::Identity(nu, nu), nom.dt),
                                   Wd);
}

double rms(const std::vector<double>& x) {
    if (x.empty()) return 0.0;
    double s = 0;
    for (double v : x) s += v * v;
    return std::sqrt(s / static_cast<double>(x.size()));
}

}  // namespace

// ---------------------------------------------------------------- stages

void cmd_simulate(const PipelineConfig& c) {
    const auto params = gen_population(c.drives, c.seed, c.outliers, c.pop);
    const fs::path root = c.dataset_dir();
    const int n_loaded = c.episodes / 2, n_unloaded = c.episodes - n_loaded;
    log("simulate: " + std::to_string(c.drives) + " drives x " + std::to_string(c.episodes) + " episodes -> " +
        root.string());
    parallel_for(c.drives, c.jobs, [&](int d) {
        for (int e = 0; e < c.episodes; ++e) {
            const bool loaded = e >= n_unloaded;
            const auto tr = random_trajectory(stream_seed(c.seed, static_cast<std::uint64_t>(d), 2ULL * e), c.checkpoints,
                                              c.range, c.traj);
            const auto ep = simulate_drive(params[d], tr, loaded, stream_seed(c.seed, static_cast<std::uint64_t>(d), 2ULL * e + 1));
            for (double v : ep.meas_pos)
                if (!std::isfinite(v)) throw std::runtime_error("simulate: non-finite state on drive " + std::to_string(d));
            write_episode_csv(episode_path(root, d, loaded, loaded ? e - n_unloaded : e), ep);
        }
    });
    json pj = json::array();
    std::vector<int> outl;
    for (int d = 0; d < c.drives; ++d) {
        json e = to_json(params[d]);
        e["id"] = d;
        pj.push_back(e);
        if (params[d].outlier) outl.push_back(d);
    }
    write_json(c.workdir / "population.json", {{"seed", c.seed}, {"drives", pj}, {"outlier_ids", outl}});
}

void cmd_identify(const PipelineConfig& c) {
    const fs::path root = c.dataset_dir();
    const auto ids = list_drives(root);
    const int n = static_cast<int>(ids.size());
    if (n < 2) throw std::runtime_error("identify: need at least two drives");
    log("identify: " + std::to_string(n) + " drives from " + root.string());

    std::vector<Moments> mlin(n), mkoop(n);
    std::vector<LiftingConfig> clin(n), ckoop(n);
    std::vector<json> info(n);
    double dt = 0;
    std::mutex dm;
    parallel_for(n, c.jobs, [&](int i) {
        const DriveData dd = read_drive(root, ids[i], c.aliases, true);
        if (dd.unloaded.size() < 2)
            throw std::runtime_error("identify: drive " + std::to_string(ids[i]) + " has fewer than two unloaded episodes");
        const Split sp = split_episodes(static_cast<int>(dd.unloaded.size()), c.test_episodes, c.seed, ids[i]);
        const int nl = static_cast<int>(dd.loaded.size());
        Split lsp;
        if (nl >= 2)
            lsp = split_episodes(nl, c.test_episodes, c.seed + 1, ids[i]);
        else if (nl == 1)
            lsp.test = {0};
        std::vector<Episode> train, phase_eps;
        for (int e : sp.train) train.push_back(dd.unloaded[e]);
        // the load is slow next to the gear harmonics, so loaded training data also serves the phase fit
        phase_eps = train;
        for (int e : lsp.train) phase_eps.push_back(dd.loaded[e]);
        const auto ph = calibrate_phase(phase_eps, LiftingConfig::drive(c.gear_ratio, 0.0), c.phase);
        clin[i] = LiftingConfig::linear(2, 1);
        ckoop[i] = LiftingConfig::drive(c.gear_ratio, ph.phi);
        mlin[i] = moments(build_snapshots(train, clin[i]));
        mkoop[i] = moments(build_snapshots(train, ckoop[i]));
        info[i] = {{"id", ids[i]},
                   {"phase", ph.phi},
                   {"phase_segments_used", ph.segments_used},
                   {"phase_segments_skipped", ph.segments_skipped},
                   {"train", sp.train},
                   {"test", sp.test},
                   {"loaded_train", lsp.train},
                   {"loaded_test", lsp.test}};
        std::lock_guard<std::mutex> lk(dm);
        dt = train[0].dt;
    });

    json summary = {{"drives", info}, {"alpha", json::object()}, {"worst_rho", json::object()}, {"bisections", json::object()}};
    for (const auto& kind : model_kinds()) {
        const bool koop = kind == "koopman";
        const auto fit = min_stabilizing_alpha(koop ? mkoop : mlin, koop ? ckoop : clin, dt, c.alpha_max, c.alpha_tol);
        log("identify: " + kind + " alpha = " + std::to_string(fit.alpha) + ", worst rho = " + std::to_string(fit.worst_rho));
        for (int i = 0; i < n; ++i) write_json(model_path(c, kind, ids[i]), to_json(fit.models[i]));
        summary["alpha"][kind] = fit.alpha;
        summary["worst_rho"][kind] = fit.worst_rho;
        summary["bisections"][kind] = fit.bisections;
    }
    write_json(c.workdir / "models" / "identify.json", summary);
}

void cmd_quantify(const PipelineConfig& c) {
    for (const auto& kind : model_kinds()) {
        const Population pop = load_population(c, kind);
        const Quantified q = quantify_population(c, pop);
        const ResidualSet& rs = q.sel.set;
        log("quantify: " + kind + " nominal " + std::to_string(rs.nominal_id) + ", " + to_string(rs.form) +
            ", peak " + std::to_string(rs.peak()) + ", screened out " + std::to_string(q.removed.size()));

        json table = json::array();
        for (const auto& t : q.sel.table) table.push_back({{"nominal_id", t.nominal_id}, {"form", to_string(t.form)}, {"peak", t.peak}});
        // every form at the chosen nominal, for reference
        json forms = json::array();
        {
            std::vector<FreqResponse> fr;
            std::size_t nidx = 0;
            for (std::size_t i = 0; i < q.kept.size(); ++i) {
                fr.push_back(pop.fr[pop.index(q.kept[i])]);
                if (q.kept[i] == rs.nominal_id) nidx = i;
            }
            for (auto f : all_forms()) {
                auto r = make_residual_set(f, nidx, fr, q.kept);
                forms.push_back({{"form", to_string(f)}, {"peak", r.peak()}, {"ill_conditioned", r.ill_conditioned}});
            }
        }
        json drive_peaks = json::array();
        for (std::size_t d = 0; d < rs.drive_ids.size(); ++d) {
            auto s = rs.sigma_profile(d);
            drive_peaks.push_back({{"id", rs.drive_ids[d]}, {"peak", *std::max_element(s.begin(), s.end())}});
        }
        json ratios = json::array();
        for (const auto& [id, r] : q.screen_ratios) ratios.push_back({{"id", id}, {"ratio", r}});
        const fs::path dir = c.workdir / "quantify" / kind;
        write_json(dir / "summary.json", {{"kind", kind},
                                          {"nominal_id", rs.nominal_id},
                                          {"form", to_string(rs.form)},
                                          {"peak", rs.peak()},
                                          {"argmax_theta", rs.argmax_theta()},
                                          {"kept", q.kept},
                                          {"removed", q.removed},
                                          {"screen_ratio", c.screen_ratio},
                                          {"screen", ratios},
                                          {"drive_peaks", drive_peaks},
                                          {"table", table},
                                          {"forms_at_nominal", forms},
                                          {"ill_conditioned", rs.ill_conditioned}});
        std::ofstream f(dir / "residuals.csv");
        f << "theta,drive_id,sigma_max\n";
        char buf[96];
        for (std::size_t d = 0; d < rs.drive_ids.size(); ++d) {
            auto s = rs.sigma_profile(d);
            for (std::size_t k = 0; k < s.size(); ++k) {
                std::snprintf(buf, sizeof buf, "%.10g,%d,%.10g\n", rs.grid.theta[k], rs.drive_ids[d], s[k]);
                f << buf;
            }
        }
    }
}

void cmd_fit_weights(const PipelineConfig& c) {
    for (const auto& kind : model_kinds()) {
        const Population pop = load_population(c, kind);
        const json s = need(c.workdir / "quantify" / kind / "summary.json", "quantify");
        const ResidualSet rs = residual_set_from_summary(pop, s);
        const WeightMatrix W = fit_weights_for(c, kind, rs, pop.models[0].dt);
        double worst_under = -INFINITY;
        for (const auto& r : W)
            for (const auto& w : r) worst_under = std::max(worst_under, w.max_undershoot);
        log("fit-weights: " + kind + " max undershoot " + std::to_string(worst_under));
        write_json(c.workdir / "weights" / (kind + ".json"),
                   {{"kind", kind}, {"nominal_id", rs.nominal_id}, {"form", to_string(rs.form)}, {"entries", weights_to_json(W)}});
        std::ofstream f(c.workdir / "weights" / (kind + "_bound.csv"));
        f << "theta,i,j,bound,weight\n";
        char buf[128];
        for (int i = 0; i < rs.rows(); ++i)
            for (int j = 0; j < rs.cols(); ++j) {
                const auto b = rs.entry_bound(i, j);
                const auto m = W[i][j].magnitude(rs.grid);
                for (std::size_t k = 0; k < b.size(); ++k) {
                    std::snprintf(buf, sizeof buf, "%.10g,%d,%d,%.10g,%.10g\n", rs.grid.theta[k], i, j, b[k], m[k]);
                    f << buf;
                }
            }
    }
}

void cmd_synthesize(const PipelineConfig& c) {
    std::vector<std::string> infeasible;
    for (const auto& kind : model_kinds()) {
        const json wj = need(c.workdir / "weights" / (kind + ".json"), "fit-weights");
        const int nominal = wj.at("nominal_id").get<int>();
        const KoopmanModel nom = koopman_from_json(read_json(model_path(c, kind, nominal)));
        const GeneralizedPlant P = drive_plant(c, nom, weights_from_json(wj.at("entries")));
        const SynthesisResult r = synth_mixed_h2_hinf(P, c.syn);
        log("synthesize: " + kind + (r.feasible ? " feasible" : " infeasible") + ", h2 " + std::to_string(r.h2_cost) +
            ", hinf_22 " + std::to_string(r.hinf_22) + " (" + r.message + ")");
        json out = {{"kind", kind},
                    {"nominal_id", nominal},
                    {"feasible", r.feasible},
                    {"K", to_json(r.K)},
                    {"h2_cost", r.h2_cost},
                    {"sdp_h2", r.sdp_h2},
                    {"hinf_22", r.hinf_22},
                    {"schur", r.report.schur},
                    {"spectral_radius", r.report.spectral_radius},
                    {"h2_11", r.report.h2_11},
                    {"hinf_full", r.report.hinf_full},
                    {"solver", {{"status", sdp::to_string(r.solver.status)}, {"iterations", r.solver.iterations},
                                {"rel_gap", r.solver.rel_gap}}},
                    {"extended_precision", r.extended_precision},
                    {"reduced_order", r.reduced_order},
                    {"cond_recon", r.cond_recon},
                    {"message", r.message}};
        write_json(c.workdir / "synthesis" / (kind + ".json"), out);
        if (!r.feasible) infeasible.push_back(kind);
    }
    if (!infeasible.empty()) {
        std::string s;
        for (const auto& k : infeasible) s += (s.empty() ? "" : ", ") + k;
        throw InfeasibleError("synthesize: infeasible design for " + s);
    }
}

namespace {

struct EvalEpisode {
    std::string label;
    int drive;
    bool loaded;
    int episode;
};

void write_series(const fs::path& path, const Episode& ep, const std::vector<ObserverRun>& runs) {
    std::ofstream f(path);
    f << "t";
    for (const auto& k : model_kinds()) f << ",vel_err_" << k << ",cur_err_" << k;
    f << "\n";
    char buf[64];
    for (std::size_t t = 0; t < ep.size(); ++t) {
        std::snprintf(buf, sizeof buf, "%.6g", ep.t[t]);
        f << buf;
        for (const auto& r : runs) {
            std::snprintf(buf, sizeof buf, ",%.10g,%.10g", r.vel_error[t], r.current_error[t]);
            f << buf;
        }
        f << "\n";
    }
}

}  // namespace

json cmd_evaluate(const PipelineConfig& c) {
    const json ident = need(c.workdir / "models" / "identify.json", "identify");
    const json qk = need(c.workdir / "quantify" / "koopman" / "summary.json", "quantify");
    const fs::path root = c.dataset_dir();
    const double fc = c.gear_band_center(), hw = c.band_halfwidth;

    auto drive_info = [&](int id) -> const json& {
        for (const auto& d : ident.at("drives"))
            if (d.at("id").get<int>() == id) return d;
        throw std::runtime_error("evaluate: drive " + std::to_string(id) + " not identified");
    };
    const int nominal = c.eval_drive >= 0 ? c.eval_drive : qk.at("nominal_id").get<int>();
    int worst = -1;
    double worst_peak = -1;
    for (const auto& d : qk.at("drive_peaks")) {
        const int id = d.at("id").get<int>();
        if (id != nominal && d.at("peak").get<double>() > worst_peak) {
            worst_peak = d.at("peak").get<double>();
            worst = id;
        }
    }
    std::vector<EvalEpisode> eps{{"nominal", nominal, false, drive_info(nominal).at("test")[0].get<int>()}};
    if (worst >= 0) eps.push_back({"worst", worst, false, drive_info(worst).at("test")[0].get<int>()});
    if (!drive_info(nominal).at("loaded_test").empty())
        eps.push_back({"loaded", nominal, true, drive_info(nominal).at("loaded_test")[0].get<int>()});

    // ground-truth load for the loaded comparison, when the data came from the simulator
    std::optional<json> truth;
    if (fs::exists(c.workdir / "population.json")) truth = read_json(c.workdir / "population.json");

    struct Obs {
        KoopmanModel nom;
        StateSpace K;
        bool feasible;
    };
    std::map<std::string, Obs> obs;
    for (const auto& kind : model_kinds()) {
        const json sj = need(c.workdir / "synthesis" / (kind + ".json"), "synthesize");
        if (!sj.at("feasible").get<bool>())
            throw InfeasibleError("evaluate: the " + kind + " design is infeasible, nothing to evaluate");
        obs[kind] = {koopman_from_json(read_json(model_path(c, kind, sj.at("nominal_id").get<int>()))),
                     state_space_from_json(sj.at("K")), sj.at("feasible").get<bool>()};
    }

    json metrics = {{"band", {{"center_hz", fc}, {"halfwidth_hz", hw}}},
                    {"load_band_hz", c.load_band},
                    {"nominal_drive", nominal},
                    {"worst_drive", worst},
                    {"episodes", json::object()}};
    const fs::path dir = c.workdir / "evaluate";
    fs::create_directories(dir);
    for (const auto& e : eps) {
        const Episode ep = read_episode_csv(episode_path(root, e.drive, e.loaded, e.episode), c.aliases);
        const double fs_hz = 1.0 / ep.dt;
        std::vector<double> track(ep.size());
        for (std::size_t k = 0; k < ep.size(); ++k) track[k] = ep.ref_vel[k] - ep.meas_vel[k];
        const Psd ptrack = welch_psd(track, fs_hz, c.nperseg);
        json em = {{"drive", e.drive},
                   {"condition", e.loaded ? "loaded" : "unloaded"},
                   {"episode", e.episode},
                   {"band_power_50hz_before", band_power(ptrack, fc, hw)}};
        std::vector<ObserverRun> runs;
        std::vector<Psd> pv, pc;
        for (const auto& kind : model_kinds()) {
            const Obs& o = obs.at(kind);
            const bool koop = kind == "koopman";
            Observer ob = make_observer(o.nom, o.K, c.measured, koop ? ObserverMode::KoopmanRelift : ObserverMode::LinearLTI);
            if (koop && c.relift_drive_phase) ob.cfg.phi = drive_info(e.drive).at("phase").get<double>();
            runs.push_back(run_observer(ob, ep));
            const auto& r = runs.back();
            pv.push_back(welch_psd(r.vel_error, fs_hz, c.nperseg));
            pc.push_back(welch_psd(r.current_error, fs_hz, c.nperseg));
            em[kind] = {{"feasible", o.feasible},
                        {"rms_pos_error", rms(r.pos_error)},
                        {"rms_vel_error", rms(r.vel_error)},
                        {"rms_current_error", rms(r.current_error)},
                        {"band_power_50hz_after", band_power(pv.back(), fc, hw)},
                        {"current_band_power_50hz", band_power(pc.back(), fc, hw)},
                        {"current_psd_at_50hz", psd_at(pc.back(), fc)},
                        {"current_low_band_power", band_power(pc.back(), c.load_band / 2, c.load_band / 2)},
                        {"psd_single_periodogram", pv.back().single_periodogram}};
        }
        if (e.loaded && truth) {
            const json& p = truth->at("drives").at(static_cast<std::size_t>(e.drive));
            const double AL = p.at("load_amp").get<double>(), ph = p.at("load_phase").get<double>(),
                         kt = p.at("kt").get<double>();
            // load torque in current units, as it enters the plant input
            std::vector<double> load(ep.size());
            for (std::size_t k = 0; k < ep.size(); ++k) load[k] = -AL * std::sin(ep.meas_pos[k] + ph) / kt;
            const Psd pl = welch_psd(load, fs_hz, c.nperseg);
            const double lp = band_power(pl, c.load_band / 2, c.load_band / 2);
            em["load_low_band_power"] = lp;
            for (const auto& kind : model_kinds()) {
                const double cp = em[kind]["current_low_band_power"].get<double>();
                em[kind]["load_tracking_db"] = 10 * std::log10(cp / lp);
            }
        }
        write_series(dir / (e.label + "_timeseries.csv"), ep, runs);
        std::ofstream f(dir / (e.label + "_psd.csv"));
        f << "f,vel_err_linear,vel_err_koopman,cur_err_linear,cur_err_koopman,tracking_error\n";
        char buf[160];
        for (std::size_t k = 0; k < pv[0].f.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.8g,%.10g,%.10g,%.10g,%.10g,%.10g\n", pv[0].f[k], pv[0].p[k], pv[1].p[k],
                          pc[0].p[k], pc[1].p[k], ptrack.p[k]);
            f << buf;
        }
        metrics["episodes"][e.label] = em;
        log("evaluate: " + e.label + " drive " + std::to_string(e.drive) + " vel band power linear " +
            std::to_string(em["linear"]["band_power_50hz_after"].get<double>()) + ", koopman " +
            std::to_string(em["koopman"]["band_power_50hz_after"].get<double>()));
    }
    write_json(dir / "metrics.json", metrics);
    return metrics;
}

json cmd_outliers(const PipelineConfig& c) {
    const std::string kind = c.outlier_kind;
    const Population pop = load_population(c, kind);
    const Quantified q = quantify_population(c, pop);
    const ResidualSet& rs = q.sel.set;
    const WeightMatrix W = fit_weights_for(c, kind, rs, pop.models[0].dt);
    const auto wmag = weight_magnitudes(W, c.grid);
    const FreqResponse& gnom = pop.fr[pop.index(rs.nominal_id)];

    json drives = json::array();
    std::vector<int> flagged;
    for (std::size_t i = 0; i < pop.ids.size(); ++i) {
        const auto fl = detect_outliers(wmag, pop.fr[i], gnom, rs.form, c.margin);
        json entries = json::array();
        for (std::size_t a = 0; a < fl.entry.size(); ++a)
            for (std::size_t b = 0; b < fl.entry[a].size(); ++b)
                if (fl.entry[a][b])
                    entries.push_back({{"i", a}, {"j", b}, {"theta", c.grid.theta[fl.first_index[a][b]]}});
        drives.push_back({{"id", pop.ids[i]}, {"outlier", fl.outlier}, {"worst_ratio", fl.worst_ratio}, {"entries", entries}});
        if (fl.outlier) flagged.push_back(pop.ids[i]);
    }
    json report = {{"kind", kind},
                   {"form", to_string(rs.form)},
                   {"nominal_id", rs.nominal_id},
                   {"margin", c.margin},
                   {"screened_out", q.removed},
                   {"flagged", flagged},
                   {"drives", drives}};
    if (fs::exists(c.workdir / "population.json"))
        report["truth"] = read_json(c.workdir / "population.json").at("outlier_ids");
    write_json(c.workdir / "outliers" / "report.json", report);
    std::string s;
    for (int id : flagged) s += " " + std::to_string(id);
    log("outliers: flagged" + (s.empty() ? std::string(" none") : s));
    return report;
}

}  // namespace kobs
