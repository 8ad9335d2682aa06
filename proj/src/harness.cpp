#include "linflow/harness.hpp"

#include "linflow/recipes.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace linflow {

namespace fs = std::filesystem;

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("LINFLOW_LOG");
        if (!env) return LogLevel::warn;
        const std::string v = env;
        if (v == "error") return LogLevel::error;
        if (v == "info") return LogLevel::info;
        if (v == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return level;
}

void log(LogLevel level, const std::string& msg) {
    if (level > log_level()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[linflow " << names[static_cast<int>(level)] << "] " << msg << '\n';
}

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

void require_object(const Json& j, const std::string& where) {
    if (!j.is_object()) config_error(where + " must be an object");
}

void reject_unknown(const Json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
    require_object(obj, where);
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                    [&](const char* k) { return it.key() == k; });
        if (!ok) config_error("unknown key '" + where + "." + it.key() + "'");
    }
}

// exactly one of the listed keys
std::string pick_one(const Json& obj, std::initializer_list<const char*> keys,
                     const std::string& where) {
    require_object(obj, where);
    std::string found;
    for (const char* k : keys) {
        if (obj.contains(k)) {
            if (!found.empty()) config_error(where + " sets both '" + found + "' and '" + k + "'");
            found = k;
        }
    }
    if (found.empty() || obj.size() != 1) {
        std::string opts;
        for (const char* k : keys) opts += std::string(opts.empty() ? "" : ", ") + k;
        config_error(where + " needs exactly one of: " + opts);
    }
    return found;
}

double num(const Json& obj, const char* key, double def, const std::string& where) {
    if (!obj.contains(key)) return def;
    if (!obj[key].is_number()) config_error(where + "." + key + " must be a number");
    return obj[key].get<double>();
}

long integer(const Json& obj, const char* key, long def, const std::string& where) {
    if (!obj.contains(key)) return def;
    if (!obj[key].is_number_integer()) config_error(where + "." + key + " must be an integer");
    return obj[key].get<long>();
}

std::uint64_t u64(const Json& obj, const char* key, std::uint64_t def, const std::string& where) {
    if (!obj.contains(key)) return def;
    if (!obj[key].is_number_unsigned() && !(obj[key].is_number_integer() && obj[key].get<long>() >= 0))
        config_error(where + "." + key + " must be a non-negative integer");
    return obj[key].get<std::uint64_t>();
}

std::string str(const Json& obj, const char* key, const std::string& def, const std::string& where) {
    if (!obj.contains(key)) return def;
    if (!obj[key].is_string()) config_error(where + "." + key + " must be a string");
    return obj[key].get<std::string>();
}

Vec num_vec(const Json& j, const std::string& where) {
    if (!j.is_array()) config_error(where + " must be an array of numbers");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) config_error(where + " must be an array of numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

Mat num_mat(const Json& j, const std::string& where) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        config_error(where + " must be a non-empty array of rows");
    const std::size_t rows = j.size(), cols = j[0].size();
    Mat m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const Vec row = num_vec(j[r], where);
        if (static_cast<std::size_t>(row.size()) != cols) config_error(where + " has ragged rows");
        m.row(r) = row.transpose();
    }
    return m;
}

Json canonical_target(const Json& t, ExperimentConfig& cfg, std::uint64_t root_seed) {
    const std::string kind = pick_one(t, {"factors", "random"}, "target");
    Json out;
    const Tolerances tol;
    if (kind == "factors") {
        const Json& f = t["factors"];
        reject_unknown(f, {"sv", "U", "V", "d_y", "d_x"}, "target.factors");
        if (!f.contains("sv")) config_error("target.factors.sv is required");
        const Vec sv = num_vec(f["sv"], "target.factors.sv");
        const int d = static_cast<int>(sv.size());
        Mat U, V;
        if (f.contains("U")) {
            U = num_mat(f["U"], "target.factors.U");
        } else {
            const long n = integer(f, "d_y", d, "target.factors");
            U = Mat::Identity(n, n);
        }
        if (f.contains("V")) {
            V = num_mat(f["V"], "target.factors.V");
        } else {
            const long n = integer(f, "d_x", d, "target.factors");
            V = Mat::Identity(n, n);
        }
        cfg.target = target_from_factors(U, sv, V, tol);
        out["factors"] = {{"sv", f["sv"]}, {"U", mat_to_json(U)}, {"V", mat_to_json(V)}};
    } else {
        const Json& r = t["random"];
        reject_unknown(r, {"d_y", "d_x", "d", "sv", "sv_range", "min_gap", "seed"}, "target.random");
        const long d_y = integer(r, "d_y", -1, "target.random");
        const long d_x = integer(r, "d_x", -1, "target.random");
        if (d_y < 1 || d_x < 1) config_error("target.random needs positive d_y and d_x");
        const std::uint64_t seed = u64(r, "seed", mix_seed(root_seed, 1), "target.random");
        cfg.seed_trail.emplace_back("target", seed);
        Rng rng(seed);
        Vec sv;
        Json sv_json;
        if (r.contains("sv") == r.contains("sv_range"))
            config_error("target.random needs exactly one of sv, sv_range");
        if (r.contains("sv")) {
            sv = num_vec(r["sv"], "target.random.sv");
            sv_json = r["sv"];
        } else {
            const Vec range = num_vec(r["sv_range"], "target.random.sv_range");
            const long d = integer(r, "d", -1, "target.random");
            const double gap = num(r, "min_gap", 0.0, "target.random");
            if (range.size() != 2 || !(range(0) > 0.0) || !(range(1) > range(0)))
                config_error("target.random.sv_range must be [lo, hi] with 0 < lo < hi");
            if (d < 1) config_error("target.random.d is required with sv_range");
            bool ok = false;
            sv.resize(d);
            for (int attempt = 0; attempt < 100000 && !ok; ++attempt) {
                for (long i = 0; i < d; ++i) sv(i) = rng.uniform(range(0), range(1));
                std::sort(sv.data(), sv.data() + d, std::greater<double>());
                ok = true;
                for (long i = 1; i < d; ++i) ok = ok && sv(i - 1) - sv(i) >= std::max(gap, tol.gap);
            }
            if (!ok) config_error("could not draw singular values with the requested gap");
            sv_json = vec_to_json(sv);
        }
        if (r.contains("d") && integer(r, "d", 0, "target.random") != sv.size())
            config_error("target.random.d disagrees with the number of singular values");
        const Mat Uf = rng.orthogonal(static_cast<int>(d_y));
        const Mat Vf = rng.orthogonal(static_cast<int>(d_x));
        const int d = static_cast<int>(sv.size());
        if (d > std::min(d_y, d_x)) config_error("rank exceeds min(d_y, d_x)");
        cfg.target = target_from_factors(Uf, sv, Vf, tol);
        out["random"] = {{"d_y", d_y}, {"d_x", d_x}, {"sv", sv_json}, {"seed", seed}};
    }
    return out;
}

Json canonical_network(const Json& n, ExperimentConfig& cfg) {
    reject_unknown(n, {"N", "widths"}, "network");
    const long N = integer(n, "N", -1, "network");
    if (N < 2) config_error("network.N must be at least 2");
    cfg.network.N = static_cast<int>(N);
    if (n.contains("widths")) {
        if (!n["widths"].is_array()) config_error("network.widths must be an array");
        for (const auto& w : n["widths"]) {
            if (!w.is_number_integer()) config_error("network.widths must hold integers");
            cfg.network.widths.push_back(w.get<int>());
        }
    } else {
        cfg.network.widths.assign(N + 1, 1);
        cfg.network.widths.front() = cfg.target.d_x;
        cfg.network.widths.back() = cfg.target.d_y;
    }
    cfg.network.validate(cfg.target.d_x, cfg.target.d_y);
    return {{"N", N}, {"widths", cfg.network.widths}};
}

Json canonical_init(const Json& i, ExperimentConfig& cfg, std::uint64_t root_seed) {
    const std::string kind = pick_one(i, {"k_cancel", "explicit", "stack_file"}, "init");
    Json out;
    if (kind == "k_cancel") {
        const Json& k = i["k_cancel"];
        reject_unknown(k, {"k", "rho", "seed", "s0", "stack_seed"}, "init.k_cancel");
        cfg.init_kind = InitKind::k_cancel;
        cfg.k_cancel.k = static_cast<int>(integer(k, "k", 0, "init.k_cancel"));
        if (k.contains("rho")) cfg.k_cancel.rho = num(k, "rho", 0.0, "init.k_cancel");
        cfg.k_cancel.seed = u64(k, "seed", mix_seed(root_seed, 2), "init.k_cancel");
        cfg.k_cancel.s0 = num(k, "s0", 1.0, "init.k_cancel");
        cfg.s0 = cfg.k_cancel.s0;
        cfg.stack_seed = u64(k, "stack_seed", mix_seed(root_seed, 3), "init.k_cancel");
        cfg.seed_trail.emplace_back("k_cancel", cfg.k_cancel.seed);
        cfg.seed_trail.emplace_back("stack", cfg.stack_seed);
        out["k_cancel"] = {{"k", cfg.k_cancel.k},
                           {"seed", cfg.k_cancel.seed},
                           {"s0", cfg.s0},
                           {"stack_seed", cfg.stack_seed}};
        if (cfg.k_cancel.rho) out["k_cancel"]["rho"] = *cfg.k_cancel.rho;
    } else if (kind == "explicit") {
        const Json& e = i["explicit"];
        reject_unknown(e, {"u0", "v0", "s0", "stack_seed"}, "init.explicit");
        if (!e.contains("u0") || !e.contains("v0")) config_error("init.explicit needs u0 and v0");
        cfg.init_kind = InitKind::explicit_uv;
        cfg.u0 = num_vec(e["u0"], "init.explicit.u0");
        cfg.v0 = num_vec(e["v0"], "init.explicit.v0");
        cfg.s0 = num(e, "s0", 1.0, "init.explicit");
        cfg.stack_seed = u64(e, "stack_seed", mix_seed(root_seed, 3), "init.explicit");
        cfg.seed_trail.emplace_back("stack", cfg.stack_seed);
        if (cfg.u0.size() != cfg.target.d_y || cfg.v0.size() != cfg.target.d_x)
            config_error("init.explicit: u0 must have d_y entries and v0 d_x entries");
        out["explicit"] = {{"u0", e["u0"]}, {"v0", e["v0"]}, {"s0", cfg.s0}, {"stack_seed", cfg.stack_seed}};
    } else {
        if (!i["stack_file"].is_string()) config_error("init.stack_file must be a path");
        cfg.init_kind = InitKind::stack_file;
        cfg.stack_file = i["stack_file"].get<std::string>();
        out["stack_file"] = cfg.stack_file;
    }
    if (cfg.init_kind != InitKind::stack_file && !(cfg.s0 > 0.0))
        config_error("init s0 must be positive");
    return out;
}

Json canonical_run(const Json& r, ExperimentConfig& cfg) {
    reject_unknown(r, {"mode", "flow", "gd"}, "run");
    const std::string mode = str(r, "mode", "flow", "run");
    if (mode == "flow") cfg.mode = RunMode::flow;
    else if (mode == "gd") cfg.mode = RunMode::gd;
    else if (mode == "both") cfg.mode = RunMode::both;
    else config_error("run.mode must be flow, gd or both");

    const Json f = r.value("flow", Json::object());
    reject_unknown(f, {"representation", "method", "dt", "rtol", "atol", "dt_min", "dt_max", "t_max",
                       "s_below", "converged", "stage", "sample_dt", "max_samples"},
                   "run.flow");
    const std::string repr = str(f, "representation", "coords", "run.flow");
    if (repr == "coords") cfg.flow_repr = FlowRepr::coords;
    else if (repr == "induced") cfg.flow_repr = FlowRepr::induced;
    else config_error("run.flow.representation must be coords or induced");
    const std::string method = str(f, "method", "rk45", "run.flow");
    if (method == "rk45") cfg.flow.method = Method::rk45_adaptive;
    else if (method == "rk4") cfg.flow.method = Method::rk4_fixed;
    else config_error("run.flow.method must be rk45 or rk4");
    IntegratorConfig& ic = cfg.flow;
    ic.dt = num(f, "dt", ic.dt, "run.flow");
    ic.rtol = num(f, "rtol", ic.rtol, "run.flow");
    ic.atol = num(f, "atol", ic.atol, "run.flow");
    ic.dt_min = num(f, "dt_min", ic.dt_min, "run.flow");
    ic.dt_max = num(f, "dt_max", ic.dt_max, "run.flow");
    ic.t_max = num(f, "t_max", ic.t_max, "run.flow");
    if (f.contains("s_below")) ic.s_below = num(f, "s_below", 0.0, "run.flow");
    if (f.contains("converged")) ic.converged = num(f, "converged", 0.0, "run.flow");
    const std::string stage = str(f, "stage", "none", "run.flow");
    if (stage == "none") ic.stage = StageStop::none;
    else if (stage == "t1") ic.stage = StageStop::t1;
    else if (stage == "t2") ic.stage = StageStop::t2;
    else config_error("run.flow.stage must be none, t1 or t2");
    ic.sample_dt = num(f, "sample_dt", ic.sample_dt, "run.flow");
    const long ms = integer(f, "max_samples", static_cast<long>(ic.max_samples), "run.flow");
    if (ms < 2) config_error("run.flow.max_samples must be at least 2");
    ic.max_samples = static_cast<std::size_t>(ms);

    const Json g = r.value("gd", Json::object());
    reject_unknown(g, {"lr", "steps", "record_every"}, "run.gd");
    cfg.gd.lr = num(g, "lr", cfg.gd.lr, "run.gd");
    cfg.gd.steps = integer(g, "steps", cfg.gd.steps, "run.gd");
    cfg.gd.record_every = integer(g, "record_every", cfg.gd.record_every, "run.gd");
    if (!(cfg.gd.lr > 0.0) || cfg.gd.steps < 1 || cfg.gd.record_every < 1)
        config_error("run.gd needs lr > 0, steps >= 1 and record_every >= 1");
    if (cfg.mode == RunMode::both && ic.sample_dt == 0.0)
        ic.sample_dt = cfg.gd.lr * static_cast<double>(cfg.gd.record_every);
    try {
        ic.validate();
    } catch (const Error& e) {
        config_error(std::string("run.flow: ") + e.what());
    }

    Json out;
    out["mode"] = mode;
    out["flow"] = {{"representation", repr}, {"method", method},   {"dt", ic.dt},
                   {"rtol", ic.rtol},        {"atol", ic.atol},     {"dt_min", ic.dt_min},
                   {"dt_max", ic.dt_max},    {"t_max", ic.t_max},   {"stage", stage},
                   {"sample_dt", ic.sample_dt}, {"max_samples", ic.max_samples}};
    if (ic.s_below) out["flow"]["s_below"] = *ic.s_below;
    if (ic.converged) out["flow"]["converged"] = *ic.converged;
    out["gd"] = {{"lr", cfg.gd.lr}, {"steps", cfg.gd.steps}, {"record_every", cfg.gd.record_every}};
    return out;
}

std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

const char* status_name(BoundStatus s) {
    switch (s) {
        case BoundStatus::checked: return "checked";
        case BoundStatus::not_applicable: return "not_applicable";
        case BoundStatus::window_empty: return "window_empty";
    }
    return "unknown";
}

Json opt_json(const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); }

int exit_code_for(const Error& e) {
    switch (e.code()) {
        case ErrorCode::AmbiguousIndicator: return kExitAmbiguous;
        case ErrorCode::ConfigError: return kExitConfig;
        default: return kExitRuntime;
    }
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + p.string());
    os << text;
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + p.string());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

Json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path);
    try {
        return Json::parse(is);
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::ConfigError, path + ": " + e.what());
    }
}

void apply_override(Json& cfg, const std::string& key_value) {
    const auto eq = key_value.find('=');
    if (eq == std::string::npos || eq == 0)
        config_error("override '" + key_value + "' is not KEY=VALUE");
    const std::string key = key_value.substr(0, eq), raw = key_value.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(raw);
    } catch (const Json::exception&) {
        value = raw;
    }
    Json* node = &cfg;
    const auto parts = split(key, '.');
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (parts[i].empty()) config_error("override key '" + key + "' has an empty component");
        if (!node->is_object()) config_error("override key '" + key + "' descends into a non-object");
        if (i + 1 == parts.size()) {
            (*node)[parts[i]] = value;
        } else {
            node = &(*node)[parts[i]];
            if (node->is_null()) *node = Json::object();
        }
    }
}

ExperimentConfig parse_config(const Json& raw, std::optional<std::uint64_t> seed_override) {
    ExperimentConfig cfg;
    try {
        reject_unknown(raw, {"seed", "target", "network", "init", "run", "checks", "output"}, "config");
        cfg.seed = seed_override.value_or(u64(raw, "seed", 0, "config"));
        cfg.seed_trail.emplace_back("root", cfg.seed);
        if (!raw.contains("target")) config_error("config.target is required");
        if (!raw.contains("network")) config_error("config.network is required");
        if (!raw.contains("init")) config_error("config.init is required");
        Json c;
        c["seed"] = cfg.seed;
        c["target"] = canonical_target(raw["target"], cfg, cfg.seed);
        c["network"] = canonical_network(raw["network"], cfg);
        c["init"] = canonical_init(raw["init"], cfg, cfg.seed);
        c["run"] = canonical_run(raw.value("run", Json::object()), cfg);

        std::vector<std::string> checks;
        if (raw.contains("checks")) {
            if (!raw["checks"].is_array()) config_error("config.checks must be an array");
            for (const auto& x : raw["checks"]) {
                if (!x.is_string()) config_error("config.checks must hold strings");
                checks.push_back(x.get<std::string>());
            }
        }
        cfg.checks = expand_checks(checks);
        c["checks"] = cfg.checks;

        const Json o = raw.value("output", Json::object());
        reject_unknown(o, {"dir", "formats"}, "output");
        cfg.out_dir = str(o, "dir", ".", "output");
        if (o.contains("formats")) {
            cfg.formats.clear();
            if (!o["formats"].is_array()) config_error("output.formats must be an array");
            for (const auto& x : o["formats"]) {
                if (!x.is_string() || (x != "csv" && x != "json"))
                    config_error("output.formats entries must be csv or json");
                cfg.formats.push_back(x.get<std::string>());
            }
        }
        c["output"] = {{"dir", cfg.out_dir}, {"formats", cfg.formats}};
        cfg.canonical = std::move(c);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        throw Error(ErrorCode::ConfigError, e.what());
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::ConfigError, e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> seed_override) {
    Json raw = load_json_file(path);
    for (const auto& o : overrides) apply_override(raw, o);
    return parse_config(raw, seed_override);
}

std::string config_hash(const Json& canonical) {
    Json c = canonical;
    c.erase("output");
    const std::string text = c.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

InitialCondition build_initial(const ExperimentConfig& cfg) {
    InitialCondition ic;
    const TargetSpec& T = cfg.target;
    switch (cfg.init_kind) {
        case InitKind::k_cancel: {
            const Directions dirs = k_cancel_directions(T, cfg.k_cancel);
            ic.state = k_cancel_state(dirs, cfg.s0);
            ic.stack = balanced_stack(cfg.network, dirs.u0, dirs.v0, cfg.s0, cfg.stack_seed);
            ic.u_ref = dirs.u0;
            break;
        }
        case InitKind::explicit_uv: {
            ic.state = coords_from_uv(T, cfg.s0, cfg.u0, cfg.v0);
            ic.stack = balanced_stack(cfg.network, cfg.u0, cfg.v0, cfg.s0, cfg.stack_seed);
            ic.u_ref = cfg.u0;
            break;
        }
        case InitKind::stack_file: {
            ic.stack = stack_from_json(load_json_file(cfg.stack_file));
            if (ic.stack.depth() != cfg.network.N)
                throw Error(ErrorCode::WidthMismatch, "stack depth differs from network.N");
            for (int i = 0; i < ic.stack.depth(); ++i) {
                const Mat& L = ic.stack.layers[i];
                if (L.cols() != cfg.network.widths[i] || L.rows() != cfg.network.widths[i + 1])
                    throw Error(ErrorCode::WidthMismatch,
                                "layer " + std::to_string(i + 1) + " does not match network.widths");
            }
            const RankOne r = rank_one_svd(induced_weight(ic.stack));
            if (!r.defined) throw Error(ErrorCode::NonPositiveS, "stack has a zero product");
            ic.state = coords_from_uv(T, r.s, r.u, r.v);
            ic.u_ref = r.u;
            break;
        }
    }
    return ic;
}

void write_csv(const Trajectory& traj, std::ostream& os) {
    os << "t,s,q,q1,loss,bal_residual";
    for (int i = 1; i <= traj.d_y; ++i) os << ",a_" << i;
    for (int i = 1; i <= traj.d_x; ++i) os << ",b_" << i;
    os << '\n';
    for (const Sample& smp : traj.samples) {
        if (smp.a.size() != traj.d_y || smp.b.size() != traj.d_x)
            throw Error(ErrorCode::ShapeMismatch, "sample width differs from the trajectory header");
        os << fmt17(smp.t) << ',' << fmt17(smp.s) << ',' << fmt17(smp.q) << ',' << fmt17(smp.q1) << ','
           << fmt17(smp.loss) << ',' << fmt17(smp.bal_residual);
        for (int i = 0; i < traj.d_y; ++i) os << ',' << fmt17(smp.a(i));
        for (int i = 0; i < traj.d_x; ++i) os << ',' << fmt17(smp.b(i));
        os << '\n';
    }
}

void emit_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + path);
    write_csv(traj, os);
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path);
}

Trajectory parse_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw Error(ErrorCode::IoError, "missing CSV header");
    const auto head = split(line, ',');
    static const char* fixed[] = {"t", "s", "q", "q1", "loss", "bal_residual"};
    if (head.size() < 6) throw Error(ErrorCode::IoError, "CSV header too short");
    for (int i = 0; i < 6; ++i)
        if (head[i] != fixed[i]) throw Error(ErrorCode::IoError, "unexpected CSV column " + head[i]);
    Trajectory traj;
    std::size_t col = 6;
    while (col < head.size() && head[col] == "a_" + std::to_string(traj.d_y + 1)) ++traj.d_y, ++col;
    while (col < head.size() && head[col] == "b_" + std::to_string(traj.d_x + 1)) ++traj.d_x, ++col;
    if (col != head.size()) throw Error(ErrorCode::IoError, "unexpected CSV column " + head[col]);

    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split(line, ',');
        if (f.size() != head.size())
            throw Error(ErrorCode::IoError, "line " + std::to_string(lineno) + " has " +
                                                std::to_string(f.size()) + " fields");
        std::vector<double> x(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) {
            char* end = nullptr;
            x[i] = std::strtod(f[i].c_str(), &end);
            if (f[i].empty() || *end != '\0')
                throw Error(ErrorCode::IoError,
                            "line " + std::to_string(lineno) + ": bad number '" + f[i] + "'");
        }
        Sample smp;
        smp.t = x[0];
        smp.s = x[1];
        smp.q = x[2];
        smp.q1 = x[3];
        smp.loss = x[4];
        smp.bal_residual = x[5];
        smp.a = Eigen::Map<const Vec>(x.data() + 6, traj.d_y);
        smp.b = Eigen::Map<const Vec>(x.data() + 6 + traj.d_y, traj.d_x);
        traj.samples.push_back(std::move(smp));
    }
    return traj;
}

Trajectory read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path);
    return parse_csv(is);
}

Json vec_to_json(const Vec& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Vec vec_from_json(const Json& j) {
    const auto x = j.get<std::vector<double>>();
    return Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(x.size()));
}

Json mat_to_json(const Mat& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_to_json(m.row(r).transpose()));
    return rows;
}

Mat mat_from_json(const Json& j) {
    if (!j.is_array() || j.empty()) throw Error(ErrorCode::IoError, "matrix must be a non-empty array");
    Mat m(j.size(), j[0].size());
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != static_cast<std::size_t>(m.cols()))
            throw Error(ErrorCode::IoError, "matrix has ragged rows");
        m.row(r) = vec_from_json(j[r]).transpose();
    }
    return m;
}

Json stack_to_json(const LayerStack& stack) {
    Json layers = Json::array();
    for (const Mat& L : stack.layers) layers.push_back(mat_to_json(L));
    return {{"layers", layers}};
}

LayerStack stack_from_json(const Json& j) {
    if (!j.is_object() || !j.contains("layers") || !j["layers"].is_array())
        throw Error(ErrorCode::IoError, "stack file needs a 'layers' array");
    LayerStack st;
    for (const auto& L : j["layers"]) st.layers.push_back(mat_from_json(L));
    return st;
}

Json trajectory_to_json(const Trajectory& traj) {
    Json samples = Json::array();
    for (const Sample& s : traj.samples) {
        samples.push_back({{"t", s.t},
                           {"s", s.s},
                           {"q", s.q},
                           {"q1", s.q1},
                           {"loss", s.loss},
                           {"bal_residual", s.bal_residual},
                           {"a", vec_to_json(s.a)},
                           {"b", vec_to_json(s.b)}});
    }
    return {{"d_y", traj.d_y},
            {"d_x", traj.d_x},
            {"termination", termination_name(traj.termination)},
            {"samples", samples}};
}

Trajectory trajectory_from_json(const Json& j) {
    Trajectory traj;
    try {
        traj.d_y = j.at("d_y").get<int>();
        traj.d_x = j.at("d_x").get<int>();
        const std::string term = j.value("termination", "t_max");
        for (Termination t : {Termination::t_max, Termination::s_below, Termination::converged,
                              Termination::stage_reached, Termination::zero, Termination::steps_done})
            if (term == termination_name(t)) traj.termination = t;
        for (const auto& s : j.at("samples")) {
            Sample smp;
            smp.t = s.at("t").get<double>();
            smp.s = s.at("s").get<double>();
            smp.q = s.at("q").get<double>();
            smp.q1 = s.at("q1").get<double>();
            smp.loss = s.at("loss").get<double>();
            smp.bal_residual = s.at("bal_residual").get<double>();
            smp.a = vec_from_json(s.at("a"));
            smp.b = vec_from_json(s.at("b"));
            traj.samples.push_back(std::move(smp));
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::IoError, std::string("trajectory JSON: ") + e.what());
    }
    return traj;
}

Json target_to_json(const TargetSpec& target) {
    return {{"d_y", target.d_y},
            {"d_x", target.d_x},
            {"sv", vec_to_json(target.sv)},
            {"U", mat_to_json(target.U)},
            {"V", mat_to_json(target.V)}};
}

TargetSpec target_from_json(const Json& j) {
    try {
        return target_from_factors(mat_from_json(j.at("U")), vec_from_json(j.at("sv")),
                                   mat_from_json(j.at("V")));
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::IoError, std::string("target JSON: ") + e.what());
    }
}

Json prediction_to_json(const Prediction& p) {
    Json j{{"kind", limit_kind_name(p.kind)}, {"k", p.k}};
    if (p.limit_index) {
        j["index"] = *p.limit_index;
        j["limit_s"] = p.limit_s;
    }
    return j;
}

std::vector<std::string> expand_checks(const std::vector<std::string>& names) {
    std::vector<std::string> out;
    auto add = [&](const std::string& n) {
        if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
    };
    for (const auto& n : names) {
        if (n == "all") {
            add("invariants");
            add("stages");
            for (BoundSelector s : all_selectors()) add(selector_name(s));
        } else if (n == "invariants" || n == "stages" || selector_from_name(n)) {
            add(n);
        } else {
            config_error("unknown check '" + n + "'");
        }
    }
    return out;
}

BoundReport check_bound(const TargetSpec& target, const Trajectory& traj, int N, BoundSelector which,
                        const BoundOptions& opt) {
    BoundReport rep;
    rep.name = selector_name(which);
    const auto& S = traj.samples;
    auto c1 = [&](std::size_t i) { return S[i].a(0) * S[i].b(0); };
    std::function<bool(std::size_t)> ready = [](std::size_t) { return true; };
    switch (which) {
        case BoundSelector::stage2_lower:
        case BoundSelector::stage2_5:
        case BoundSelector::n2_stage23:
        case BoundSelector::n2_t2_inf:
            ready = [&](std::size_t i) { return c1(i) > 0.0; };
            break;
        case BoundSelector::stage3:
        case BoundSelector::n2_stage3:
            ready = [&](std::size_t i) { return c1(i) > 0.0 && S[i].q >= S[i].s; };
            break;
        default:
            break;
    }
    std::size_t origin = 0;
    while (origin < S.size() && !(ready(origin) && S[origin].s > 0.0)) ++origin;
    if (origin == S.size()) {
        rep.status = S.empty() ? BoundStatus::window_empty : BoundStatus::not_applicable;
        rep.note = S.empty() ? "empty trajectory" : "the bound's hypotheses never hold on this trajectory";
        return rep;
    }
    const Sample& o = S[origin];
    const BoundParams p = bound_params(target, CoordState{o.s, o.a, o.b, o.t}, N);
    return verify_bounds(traj, p, which, opt);
}

bool CheckOutcome::pass() const {
    if (invariants && !invariants->ok()) return false;
    if (stages && !(stages->a1b1_monotone_ok && stages->s_monotone_split_ok)) return false;
    return std::all_of(bounds.begin(), bounds.end(), [](const BoundReport& b) { return b.ok(); });
}

CheckOutcome run_checks(const TargetSpec& target, const Trajectory& traj, int N,
                        const std::vector<std::string>& checks) {
    CheckOutcome out;
    for (const auto& name : expand_checks(checks)) {
        if (name == "invariants") {
            out.invariants = monitor_invariants(target, traj);
        } else if (name == "stages") {
            out.stages = detect_stages(target, traj, N);
        } else {
            out.bounds.push_back(check_bound(target, traj, N, *selector_from_name(name)));
        }
    }
    return out;
}

Json check_outcome_to_json(const CheckOutcome& c) {
    Json j;
    j["pass"] = c.pass();
    if (c.invariants) {
        Json items = Json::array();
        for (const auto& it : c.invariants->items) {
            items.push_back({{"name", it.name},
                             {"applicable", it.applicable},
                             {"max_violation", it.max_violation},
                             {"first_violation_time", opt_json(it.first_violation_time)}});
        }
        j["invariants"] = {{"ok", c.invariants->ok()}, {"items", items}};
    }
    if (c.stages) {
        const StageReport& s = *c.stages;
        j["stages"] = {{"t1", opt_json(s.t1)},
                       {"t2", opt_json(s.t2)},
                       {"a1b1_max_drop", s.a1b1_max_drop},
                       {"s_max_wrong_way", s.s_max_wrong_way},
                       {"a1b1_monotone_ok", s.a1b1_monotone_ok},
                       {"s_monotone_split_ok", s.s_monotone_split_ok},
                       {"t2_crossing_rate", opt_json(s.t2_crossing_rate)}};
    }
    Json bounds = Json::array();
    for (const auto& b : c.bounds) {
        Json v = Json::array();
        for (const auto& x : b.violations) v.push_back({{"t", x.t}, {"observed", x.observed}, {"bound", x.bound}});
        Json e{{"name", b.name},
               {"status", status_name(b.status)},
               {"ok", b.ok()},
               {"n_checked", b.n_checked},
               {"n_violations", b.n_violations},
               {"violations", v}};
        if (!b.note.empty()) e["note"] = b.note;
        if (b.status == BoundStatus::checked) {
            e["window"] = {b.window_start, b.window_end};
            e["worst_margin"] = b.worst_margin;
        }
        bounds.push_back(e);
    }
    j["bounds"] = bounds;
    return j;
}

Comparison compare_trajectories(const Trajectory& x, const Trajectory& y, double t_tol) {
    Comparison c;
    std::size_t j = 0;
    for (const Sample& sx : x.samples) {
        const double tol = t_tol * std::max(1.0, std::abs(sx.t));
        while (j < y.samples.size() && y.samples[j].t < sx.t - tol) ++j;
        if (j == y.samples.size()) break;
        const Sample& sy = y.samples[j];
        if (std::abs(sy.t - sx.t) > tol) continue;
        if (sx.a.size() != sy.a.size() || sx.b.size() != sy.b.size())
            throw Error(ErrorCode::ShapeMismatch, "trajectories have different coordinate sizes");
        double best_a = 0.0, best_b = 0.0;
        double best = std::numeric_limits<double>::infinity();
        for (double sg : {1.0, -1.0}) {
            const double da = (sx.a - sg * sy.a).cwiseAbs().maxCoeff();
            const double db = (sx.b - sg * sy.b).cwiseAbs().maxCoeff();
            if (std::max(da, db) < best) {
                best = std::max(da, db);
                best_a = da;
                best_b = db;
            }
        }
        c.sup_s = std::max(c.sup_s, std::abs(sx.s - sy.s));
        c.sup_a = std::max(c.sup_a, best_a);
        c.sup_b = std::max(c.sup_b, best_b);
        ++c.matched;
    }
    return c;
}

Json comparison_to_json(const Comparison& c) {
    return {{"matched_samples", c.matched},
            {"sup_abs_diff", {{"s", c.sup_s}, {"a", c.sup_a}, {"b", c.sup_b}}},
            {"sup", c.sup()}};
}

SimulationResult simulate(const ExperimentConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    SimulationResult res;
    const InitialCondition ic = build_initial(cfg);
    const int N = cfg.network.N;

    Json pred;
    try {
        pred = prediction_to_json(predict_limit(cfg.target, ic.state));
    } catch (const Error& e) {
        if (e.code() != ErrorCode::AmbiguousIndicator) throw;
        pred = {{"error", e.what()}};
    }

    if (cfg.mode != RunMode::gd) {
        log(LogLevel::info, "integrating the flow");
        if (cfg.flow_repr == FlowRepr::coords) {
            res.flow = integrate_coords(cfg.target, ic.state, N, cfg.flow);
        } else {
            res.flow = integrate_induced(cfg.target, weight_from_coords(cfg.target, ic.state), N, cfg.flow);
        }
    }
    if (cfg.mode != RunMode::flow) {
        log(LogLevel::info, "running gradient descent");
        res.gd = gd_run(cfg.target, ic.stack, cfg.gd, &ic.u_ref);
    }
    if (res.flow && res.gd) res.comparison = compare_trajectories(*res.flow, *res.gd);

    const Trajectory& checked = res.flow ? *res.flow : *res.gd;
    res.checks = run_checks(cfg.target, checked, N, cfg.checks);

    Json& rep = res.report;
    rep["prediction"] = pred;
    rep["checked_trajectory"] = res.flow ? "flow" : "gd";
    rep["checks"] = check_outcome_to_json(res.checks);
    if (res.flow) rep["flow_termination"] = termination_name(res.flow->termination);
    if (res.comparison) rep["comparison"] = comparison_to_json(*res.comparison);
    rep["pass"] = res.checks.pass();

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    Json summary = Json::object();
    if (res.checks.invariants) summary["invariants"] = res.checks.invariants->ok() ? "pass" : "fail";
    if (res.checks.stages)
        summary["stages"] =
            res.checks.stages->a1b1_monotone_ok && res.checks.stages->s_monotone_split_ok ? "pass" : "fail";
    for (const auto& b : res.checks.bounds)
        summary[b.name] = b.status == BoundStatus::checked ? (b.ok() ? "pass" : "fail") : status_name(b.status);
    Json trail = Json::object();
    for (const auto& [k, v] : cfg.seed_trail) trail[k] = v;

    Json& man = res.manifest;
    man["version"] = kVersion;
    man["config_hash"] = config_hash(cfg.canonical);
    man["seed_trail"] = trail;
    man["wall_time_s"] = wall;
    man["checks"] = summary;
    man["N"] = N;
    man["target"] = target_to_json(cfg.target);
    man["config"] = cfg.canonical;
    return res;
}

int cli_simulate(const std::string& config_path, const std::vector<std::string>& overrides,
                 std::optional<std::uint64_t> seed, std::optional<std::string> out_dir,
                 std::ostream& out, std::ostream& err) {
    try {
        ExperimentConfig cfg = load_config(config_path, overrides, seed);
        if (out_dir) cfg.out_dir = *out_dir;
        SimulationResult res = simulate(cfg);

        const fs::path dir(cfg.out_dir);
        ensure_dir(dir);
        const bool csv = std::count(cfg.formats.begin(), cfg.formats.end(), "csv") > 0;
        const bool json = std::count(cfg.formats.begin(), cfg.formats.end(), "json") > 0;
        Json files = Json::array();
        auto emit = [&](const Trajectory& traj, const std::string& stem) {
            if (csv) {
                emit_csv(traj, (dir / (stem + ".csv")).string());
                files.push_back(stem + ".csv");
            }
            if (json) {
                write_text(dir / (stem + ".json"), trajectory_to_json(traj).dump());
                files.push_back(stem + ".json");
            }
        };
        if (res.flow && res.gd) {
            emit(*res.flow, "trajectory_flow");
            emit(*res.gd, "trajectory_gd");
        } else {
            emit(res.flow ? *res.flow : *res.gd, "trajectory");
        }
        if (!cfg.checks.empty() || res.comparison) {
            write_text(dir / "report.json", res.report.dump(2) + "\n");
            files.push_back("report.json");
        }
        res.manifest["files"] = files;
        write_text(dir / "manifest.json", res.manifest.dump(2) + "\n");
        out << "wrote " << files.size() + 1 << " files to " << dir.string() << '\n';
        if (!res.checks.pass()) {
            err << "checks failed; see report.json\n";
            return kExitViolation;
        }
        return kExitPass;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int cli_predict(const std::string& config_path, const std::vector<std::string>& overrides,
                std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
    try {
        const ExperimentConfig cfg = load_config(config_path, overrides, seed);
        const InitialCondition ic = build_initial(cfg);
        out << prediction_to_json(predict_limit(cfg.target, ic.state)).dump() << '\n';
        return kExitPass;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int cli_verify(const std::string& traj_path, const std::string& manifest_path,
               const std::vector<std::string>& checks, std::optional<std::string> out_dir,
               std::ostream& out, std::ostream& err) {
    try {
        const Trajectory traj = read_csv(traj_path);
        const Json man = load_json_file(manifest_path);
        if (!man.contains("target") || !man.contains("N"))
            throw Error(ErrorCode::ConfigError, "manifest lacks target or N");
        const TargetSpec target = target_from_json(man["target"]);
        const int N = man["N"].get<int>();
        if (traj.d_y != target.d_y || traj.d_x != target.d_x)
            throw Error(ErrorCode::ShapeMismatch, "trajectory columns do not match the manifest target");
        const CheckOutcome oc = run_checks(target, traj, N, checks.empty() ? std::vector<std::string>{"all"} : checks);
        Json rep{{"trajectory", traj_path}, {"checks", check_outcome_to_json(oc)}, {"pass", oc.pass()}};
        const fs::path dir = out_dir ? fs::path(*out_dir) : fs::path(traj_path).parent_path();
        if (!dir.empty()) ensure_dir(dir);
        write_text((dir.empty() ? fs::path(".") : dir) / "report.json", rep.dump(2) + "\n");
        out << rep.dump(2) << '\n';
        return oc.pass() ? kExitPass : kExitViolation;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int cli_reproduce(const std::string& figure, const std::string& out_dir,
                  std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
    try {
        ensure_dir(out_dir);
        if (figure == "k_sweep") {
            KSweepOptions opt;
            if (seed) opt.seed = *seed;
            const KSweepResult r = run_k_sweep(opt);
            const Json summary = write_k_sweep(r, out_dir);
            out << summary.dump(2) << '\n';
            return r.pass() ? kExitPass : kExitViolation;
        }
        if (figure == "three_stage") {
            ThreeStageOptions opt;
            if (seed) opt.seed = *seed;
            const ThreeStageResult r = run_three_stage(opt);
            const Json summary = write_three_stage(r, out_dir);
            out << summary.dump(2) << '\n';
            return r.pass() ? kExitPass : kExitViolation;
        }
        throw Error(ErrorCode::ConfigError, "unknown figure '" + figure + "' (k_sweep, three_stage)");
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace linflow
