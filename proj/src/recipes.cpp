#include "linflow/recipes.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace linflow {

namespace fs = std::filesystem;

namespace {

double elapsed(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_columns(const fs::path& path, const std::vector<std::string>& names,
                   const std::vector<std::vector<double>>& rows) {
    std::ofstream os(path);
    if (!os) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    for (std::size_t i = 0; i < names.size(); ++i) os << (i ? "," : "") << names[i];
    os << '\n';
    char buf[40];
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", r[i]);
            os << (i ? "," : "") << buf;
        }
        os << '\n';
    }
    if (!os) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

std::vector<std::vector<double>> tsqq1(const Trajectory& traj) {
    std::vector<std::vector<double>> rows;
    rows.reserve(traj.size());
    for (const auto& s : traj.samples) rows.push_back({s.t, s.s, s.q, s.q1});
    return rows;
}

IntegratorConfig limit_flow(double t_max) {
    IntegratorConfig ic;
    ic.rtol = 1e-12;
    ic.atol = 1e-14;
    ic.dt = 1e-3;
    ic.dt_max = 1.0;
    ic.t_max = t_max;
    ic.converged = 1e-9;
    ic.s_below = 1e-6;
    ic.max_samples = 4000;
    return ic;
}

ThreeStageSide analyse_side(const TargetSpec& target, Trajectory traj, int N,
                            const ThreeStageOptions& opt) {
    ThreeStageSide side;
    side.traj = std::move(traj);
    const auto& S = side.traj.samples;
    side.stages = detect_stages(target, side.traj, N);
    std::size_t imin = 0;
    for (std::size_t i = 1; i < S.size(); ++i)
        if (S[i].s < S[imin].s) imin = i;
    side.t_s = S[imin].t;
    side.split_ok = side.stages.t2.has_value() && side.stages.s_monotone_split_ok;

    if (side.stages.t1 && side.stages.t2 && *side.stages.t2 > *side.stages.t1) {
        try {
            side.stage2_poly = rate_fit(side.traj, *side.stages.t1, *side.stages.t2,
                                        Observable::one_minus_c1, target.s(1), true, *side.stages.t1);
        } catch (const Error&) {
        }
    }

    std::size_t origin = 0;
    while (origin < S.size() && !(S[origin].a(0) * S[origin].b(0) > 0.0 && S[origin].q >= S[origin].s))
        ++origin;
    if (origin == S.size()) return side;
    const Sample& o = S[origin];
    const BoundParams p = bound_params(target, CoordState{o.s, o.a, o.b, o.t}, N);
    std::vector<double> x, y;
    for (std::size_t i = origin; i < S.size(); ++i) {
        const double g = 1.0 - S[i].a(0) * S[i].b(0);
        if (g >= opt.fit_lo && g <= opt.fit_hi) {
            x.push_back(S[i].t);
            y.push_back(std::log(g));
        }
    }
    if (x.size() < 2) return side;
    StageFitResult f;
    f.t_origin = o.t;
    f.c5 = p.c5;
    f.fit = fit_line(x, y);
    f.ok = f.fit.slope <= -(1.0 - opt.fit_slack) * p.c5;
    side.stage3 = f;
    return side;
}

Json side_json(const ThreeStageSide& s) {
    auto opt = [](const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); };
    Json j{{"t1", opt(s.stages.t1)},
           {"t2", opt(s.stages.t2)},
           {"T_s", s.t_s},
           {"s_max_wrong_way", s.stages.s_max_wrong_way},
           {"a1b1_max_drop", s.stages.a1b1_max_drop},
           {"split_ok", s.split_ok},
           {"samples", s.traj.size()}};
    if (s.stage2_poly)
        j["stage2_poly_exponent"] = {{"slope", s.stage2_poly->slope}, {"r2", s.stage2_poly->r2}};
    if (s.stage3) {
        j["stage3_fit"] = {{"t_origin", s.stage3->t_origin},
                           {"slope", s.stage3->fit.slope},
                           {"r2", s.stage3->fit.r2},
                           {"points", s.stage3->fit.n},
                           {"c5", s.stage3->c5},
                           {"ok", s.stage3->ok}};
    } else {
        j["stage3_fit"] = nullptr;
    }
    j["ok"] = s.ok();
    return j;
}

void write_stage_csv(const fs::path& path, const ThreeStageSide& side) {
    std::vector<std::vector<double>> rows;
    const double t1 = side.stages.t1.value_or(INFINITY), t2 = side.stages.t2.value_or(INFINITY);
    for (const auto& s : side.traj.samples) {
        const double stage = 1.0 + (s.t >= t1 ? 1.0 : 0.0) + (s.t >= t2 ? 1.0 : 0.0);
        rows.push_back({s.t, s.s, s.q, s.q1, s.a(0) * s.b(0), stage});
    }
    write_columns(path, {"t", "s", "q", "q1", "a1b1", "stage"}, rows);
}

}  // namespace

TargetSpec sweep_target(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 11));
    const Mat U = rng.orthogonal(5);
    const Mat V = rng.orthogonal(8);
    Vec sv(5);
    sv << 5.0, 4.0, 3.0, 2.0, 1.0;
    return target_from_factors(U, sv, V);
}

double plateau_fraction(const Trajectory& traj, double level, double s1, double rel) {
    if (traj.empty()) return 0.0;
    std::size_t best = 0, run = 0;
    for (const auto& s : traj.samples) {
        run = std::abs(s.q - level) / s1 < rel ? run + 1 : 0;
        best = std::max(best, run);
    }
    return static_cast<double>(best) / static_cast<double>(traj.size());
}

bool KSweepResult::pass() const {
    for (const auto& r : rows)
        if (r.pred.kind != LimitKind::zero && !(r.flow_ok && r.gd_ok)) return false;
    return !rows.empty();
}

KSweepResult run_k_sweep(const KSweepOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    KSweepResult res;
    res.opt = opt;
    res.target = sweep_target(opt.seed);
    res.net.N = kSweepDepth;
    res.net.widths = kSweepWidths;
    res.net.validate(res.target.d_x, res.target.d_y);
    const double s1 = res.target.s(1);

    GDConfig gcfg;
    gcfg.lr = opt.lr;
    gcfg.steps = std::lround(opt.horizon / opt.lr);
    gcfg.record_every = opt.record_every;

    for (int k = 0; k <= res.target.d; ++k) {
        KSweepRow row;
        row.k = k;
        log(LogLevel::info, "k_sweep k=" + std::to_string(k));
        const Directions dirs = k_cancel_directions(res.target, {k, std::nullopt, mix_seed(opt.seed, 100 + k), 1.0});
        const CoordState st = k_cancel_state(dirs, 1.0);
        row.pred = predict_limit(res.target, st);
        row.level = res.target.s(k + 1);
        if (row.pred.kind == LimitKind::zero) {
            row.annotation = "every indicator a_i + b_i cancels, so the flow collapses to W = 0";
        } else {
            row.annotation = "flow limit s_" + std::to_string(k + 1) + " u_" + std::to_string(k + 1) +
                             " v_" + std::to_string(k + 1) + "^T";
        }

        row.flow = integrate_coords(res.target, st, kSweepDepth, limit_flow(opt.flow_t_max));
        row.flow_error = std::abs(row.flow.back().s - row.level);
        row.flow_ok = row.flow_error <= opt.flow_limit_tol;

        const LayerStack stack = balanced_stack(res.net, dirs.u0, dirs.v0, 1.0, mix_seed(opt.seed, 200 + k));
        row.gd = gd_run(res.target, stack, gcfg, &dirs.u0);
        row.gd_plateau = plateau_fraction(row.gd, row.level, s1, opt.plateau_rel);
        row.gd_ok = row.gd_plateau >= opt.plateau_min_fraction;
        res.rows.push_back(std::move(row));
    }
    res.seconds = elapsed(start);
    return res;
}

Json write_k_sweep(const KSweepResult& r, const std::string& out_dir) {
    const fs::path dir(out_dir);
    Json rows = Json::array();
    Json files = Json::array();
    for (const auto& row : r.rows) {
        const std::string g = "k_sweep_k" + std::to_string(row.k) + "_gd.csv";
        const std::string f = "k_sweep_k" + std::to_string(row.k) + "_flow.csv";
        write_columns(dir / g, {"t", "s", "q", "q1"}, tsqq1(row.gd));
        write_columns(dir / f, {"t", "s", "q", "q1"}, tsqq1(row.flow));
        files.push_back(g);
        files.push_back(f);
        rows.push_back({{"k", row.k},
                        {"prediction", prediction_to_json(row.pred)},
                        {"annotation", row.annotation},
                        {"level", row.level},
                        {"flow_final_s", row.flow.back().s},
                        {"flow_final_t", row.flow.back().t},
                        {"flow_termination", termination_name(row.flow.termination)},
                        {"flow_error", row.flow_error},
                        {"flow_ok", row.flow_ok},
                        {"gd_plateau_fraction", row.gd_plateau},
                        {"gd_ok", row.gd_ok}});
    }
    std::vector<int> out_to_in(r.net.widths.rbegin(), r.net.widths.rend());
    Json summary{{"figure", "k_sweep"},
                 {"N", r.net.N},
                 {"widths_input_to_output", r.net.widths},
                 {"widths_output_to_input", out_to_in},
                 {"sv", vec_to_json(r.target.sv)},
                 {"lr", r.opt.lr},
                 {"gd_steps", std::lround(r.opt.horizon / r.opt.lr)},
                 {"rows", rows},
                 {"pass", r.pass()},
                 {"seconds", r.seconds}};
    std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
    files.push_back("summary.json");
    Json man{{"version", kVersion},
             {"figure", "k_sweep"},
             {"seed", r.opt.seed},
             {"N", r.net.N},
             {"target", target_to_json(r.target)},
             {"files", files},
             {"wall_time_s", r.seconds}};
    std::ofstream(dir / "manifest.json") << man.dump(2) << '\n';
    return summary;
}

ThreeStageResult run_three_stage(const ThreeStageOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    ThreeStageResult res;
    res.opt = opt;
    res.target = sweep_target(opt.seed);
    res.net.N = kSweepDepth;
    res.net.widths = kSweepWidths;
    res.net.validate(res.target.d_x, res.target.d_y);

    Directions dirs;
    for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt > 100000) throw Error(ErrorCode::InvalidArgument, "no admissible start found");
        dirs = k_cancel_directions(res.target, {0, std::nullopt, mix_seed(opt.seed, 300 + attempt), opt.s0});
        const double c = dirs.alpha1(0) * dirs.alpha2(0);
        if (c > -opt.c1_window && c < 0.0 && std::abs(dirs.alpha1(0) + dirs.alpha2(0)) >= kIndicatorMargin)
            break;
    }
    res.init = k_cancel_state(dirs, opt.s0);

    GDConfig gcfg;
    gcfg.lr = opt.lr;
    gcfg.steps = std::lround(opt.horizon / opt.lr);
    gcfg.record_every = opt.record_every;

    IntegratorConfig ic;
    ic.rtol = 1e-11;
    ic.atol = 1e-14;
    ic.dt_max = 0.05;
    ic.t_max = opt.horizon;
    ic.sample_dt = opt.lr * static_cast<double>(opt.record_every);
    ic.max_samples = static_cast<std::size_t>(gcfg.steps / opt.record_every + 16);

    res.flow = analyse_side(res.target, integrate_coords(res.target, res.init, kSweepDepth, ic),
                            kSweepDepth, opt);
    const LayerStack stack = balanced_stack(res.net, dirs.u0, dirs.v0, opt.s0, mix_seed(opt.seed, 400));
    res.gd = analyse_side(res.target, gd_run(res.target, stack, gcfg, &dirs.u0), kSweepDepth, opt);
    res.seconds = elapsed(start);
    return res;
}

Json write_three_stage(const ThreeStageResult& r, const std::string& out_dir) {
    const fs::path dir(out_dir);
    write_stage_csv(dir / "three_stage_flow.csv", r.flow);
    write_stage_csv(dir / "three_stage_gd.csv", r.gd);
    Json summary{{"figure", "three_stage"},
                 {"N", r.net.N},
                 {"s0", r.opt.s0},
                 {"a1b1_0", r.init.a(0) * r.init.b(0)},
                 {"sv", vec_to_json(r.target.sv)},
                 {"lr", r.opt.lr},
                 {"flow", side_json(r.flow)},
                 {"gd", side_json(r.gd)},
                 {"pass", r.pass()},
                 {"seconds", r.seconds}};
    std::ofstream(dir / "three_stage_summary.json") << summary.dump(2) << '\n';
    Json man{{"version", kVersion},
             {"figure", "three_stage"},
             {"seed", r.opt.seed},
             {"N", r.net.N},
             {"target", target_to_json(r.target)},
             {"files", {"three_stage_flow.csv", "three_stage_gd.csv", "three_stage_summary.json"}},
             {"wall_time_s", r.seconds}};
    std::ofstream(dir / "manifest.json") << man.dump(2) << '\n';
    return summary;
}

}  // namespace linflow
