#include "linflow/theory.hpp"

#include "linflow/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace linflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxListed = 20;

std::optional<double> first_crossing(const Trajectory& traj, const std::vector<double>& g) {
    if (g.empty()) return std::nullopt;
    if (g[0] >= 0.0) return traj.samples[0].t;
    for (std::size_t i = 1; i < g.size(); ++i) {
        if (g[i] >= 0.0) {
            const double t0 = traj.samples[i - 1].t, t1 = traj.samples[i].t;
            const double w = -g[i - 1] / (g[i] - g[i - 1]);
            return t0 + w * (t1 - t0);
        }
    }
    return std::nullopt;
}

}  // namespace

const char* limit_kind_name(LimitKind k) {
    switch (k) {
        case LimitKind::global_min: return "global_min";
        case LimitKind::saddle: return "saddle";
        case LimitKind::zero: return "zero";
    }
    return "unknown";
}

Prediction predict_limit(const TargetSpec& target, const CoordState& state0,
                         const Tolerances& tol) {
    Prediction p;
    if (state0.s <= tol.s_zero) return p;
    const int d = target.d;
    int k = 0;
    while (k < d && std::abs(state0.a(k) + state0.b(k)) <= tol.indicator) ++k;
    for (int i = 0; i < std::min(k + 1, d); ++i) {
        const double x = std::abs(state0.a(i) + state0.b(i));
        if (x > tol.indicator && x < 10.0 * tol.indicator) {
            std::ostringstream os;
            os << "|a_" << i + 1 << " + b_" << i + 1 << "| = " << x << " is within a factor 10 of "
               << tol.indicator;
            throw Error(ErrorCode::AmbiguousIndicator, os.str());
        }
    }
    p.k = k;
    if (k == d) return p;
    p.kind = k == 0 ? LimitKind::global_min : LimitKind::saddle;
    p.limit_index = k + 1;
    p.limit_s = target.s(k + 1);
    return p;
}

double InvariantReport::worst() const {
    double w = 0.0;
    for (const auto& it : items)
        if (it.applicable) w = std::max(w, it.max_violation);
    return w;
}

bool InvariantReport::ok() const {
    for (const auto& it : items)
        if (it.applicable && it.first_violation_time) return false;
    return true;
}

InvariantReport monitor_invariants(const TargetSpec& target, const Trajectory& traj,
                                   double mono_tol, const Tolerances& tol) {
    if (traj.empty()) throw Error(ErrorCode::WindowEmpty, "empty trajectory");
    const auto& S = traj.samples;
    InvariantResult s_sign{"s_sign", 0.0, std::nullopt, true};
    InvariantResult q_mono{"q_nondecreasing", 0.0, std::nullopt, true};
    InvariantResult q1_mono{"q1_nondecreasing", 0.0, std::nullopt, true};
    InvariantResult ind_sign{"indicator_sign", 0.0, std::nullopt, true};
    InvariantResult active{"active_indicator_growth", 0.0, std::nullopt, true};

    auto note = [&](InvariantResult& r, double v, double t) {
        r.max_violation = std::max(r.max_violation, v);
        if (v > mono_tol && !r.first_violation_time) r.first_violation_time = t;
    };

    const int m = std::min(target.d_y, target.d_x);
    const double sgn_s = S[0].s > 0 ? 1.0 : (S[0].s < 0 ? -1.0 : 0.0);
    std::vector<double> ind0(m);
    for (int i = 0; i < m; ++i) ind0[i] = S[0].a(i) + S[0].b(i);

    int k = 0;
    while (k < target.d && std::abs(ind0[k]) <= tol.indicator) ++k;
    if (k >= target.d) active.applicable = false;

    for (std::size_t n = 0; n < S.size(); ++n) {
        const Sample& cur = S[n];
        if (sgn_s != 0.0) note(s_sign, std::max(0.0, -sgn_s * cur.s), cur.t);
        if (cur.s > 0.0) {
            for (int i = 0; i < m; ++i) {
                const double x = cur.a(i) + cur.b(i);
                const double v = std::abs(ind0[i]) <= tol.indicator
                                     ? std::max(0.0, std::abs(x) - tol.indicator)
                                     : std::max(0.0, ind0[i] > 0 ? -x : x);
                note(ind_sign, v, cur.t);
            }
        }
        if (n == 0) continue;
        const Sample& prev = S[n - 1];
        note(q_mono, std::max(0.0, prev.q - cur.q), cur.t);
        note(q1_mono, std::max(0.0, prev.q1 - cur.q1), cur.t);
        if (active.applicable) {
            const double xp = std::abs(prev.a(k) + prev.b(k));
            const double xc = std::abs(cur.a(k) + cur.b(k));
            note(active, std::max(0.0, xp - xc), cur.t);
        }
    }
    InvariantReport rep;
    rep.items = {s_sign, q_mono, q1_mono, ind_sign, active};
    return rep;
}

StageReport detect_stages(const TargetSpec& target, const Trajectory& traj, int N, double tol) {
    StageReport rep;
    if (traj.empty()) return rep;
    const auto& S = traj.samples;
    std::vector<double> c(S.size()), g(S.size());
    for (std::size_t i = 0; i < S.size(); ++i) {
        c[i] = S[i].a(0) * S[i].b(0);
        g[i] = S[i].q - S[i].s;
    }
    rep.t1 = first_crossing(traj, c);
    rep.t2 = first_crossing(traj, g);

    for (std::size_t i = 1; i < S.size(); ++i) {
        rep.a1b1_max_drop = std::max(rep.a1b1_max_drop, c[i - 1] - c[i]);
        const double ds = S[i].s - S[i - 1].s;
        if (!rep.t2 || S[i].t <= *rep.t2) {
            rep.s_max_wrong_way = std::max(rep.s_max_wrong_way, ds);
        } else if (S[i - 1].t >= *rep.t2) {
            rep.s_max_wrong_way = std::max(rep.s_max_wrong_way, -ds);
        }
    }
    rep.a1b1_max_drop = std::max(0.0, rep.a1b1_max_drop);
    rep.s_max_wrong_way = std::max(0.0, rep.s_max_wrong_way);
    rep.a1b1_monotone_ok = rep.a1b1_max_drop <= tol;
    rep.s_monotone_split_ok = rep.s_max_wrong_way <= tol;

    if (rep.t2 && *rep.t2 > S[0].t) {
        for (const auto& smp : S) {
            if (smp.t >= *rep.t2 && smp.s > 0.0) {
                CoordState cs{smp.s, smp.a, smp.b, smp.t};
                rep.t2_crossing_rate = dq_minus_ds_sign(target, cs, N);
                break;
            }
        }
    }
    return rep;
}

BoundParams bound_params(const TargetSpec& target, const CoordState& state0, int N) {
    if (!(state0.s > 0.0)) throw Error(ErrorCode::NonPositiveS, "bound_params needs s(0) > 0");
    if (N < 2) throw Error(ErrorCode::InvalidArgument, "N must be at least 2");
    BoundParams p;
    p.N = N;
    p.t_origin = state0.t;
    p.s0_init = state0.s;
    p.s1 = target.s(1);
    p.s2 = target.s(2);
    p.s_max = std::max(p.s1, p.s0_init);
    p.a1_0 = state0.a(0);
    p.b1_0 = state0.b(0);
    p.c1_0 = p.a1_0 * p.b1_0;
    p.q_0 = observables(target, state0).q;

    const double s0 = p.s0_init, s1 = p.s1, s2 = p.s2, sm = p.s_max;
    const double e = 1.0 - 2.0 / N;
    p.c1 = 1.0 / (s1 + sm);
    p.c2 = 2.0 * (s1 - s2) / (s1 + sm);
    p.c3 = 2.0 * std::pow(s1, e) * (s1 - s2);
    p.c4 = N * std::pow(s1, 2.0 - 2.0 / N);
    p.c5 = 2.0 * std::pow(s0, e) * (s1 - s2);
    p.c6 = N * std::pow(s0, 2.0 - 2.0 / N);
    p.A = p.c1_0 < 1.0 ? p.c1_0 / (1.0 - p.c1_0) : kInf;
    p.B = (s1 + sm) * std::pow(s0, e);

    const double ind = p.a1_0 + p.b1_0, dif = p.a1_0 - p.b1_0;
    if (ind != 0.0 && dif != 0.0) {
        p.A2 = ind / dif;
        p.C1 = std::abs(ind / dif);
    }
    if (N >= 3) {
        p.A1 = 2.0 * (s1 + sm) * (N - 2) * std::pow(s0, e);
        p.B1 = 1.0 / ((s1 + sm) * (N - 2));
        if (p.C1 && p.c1_0 < 0.0)
            p.T1 = std::expm1(-std::log(*p.C1) / *p.B1) / *p.A1;
    } else if (p.C1 && p.c1_0 < 0.0) {
        p.T2 = 0.5 * std::log(1.0 / *p.C1);
    }
    return p;
}

Envelope s_envelope(const BoundParams& p, double t) {
    Envelope e;
    e.upper = p.s_max;
    if (p.N == 2) {
        e.lower = p.s0_init * std::exp(-2.0 * (p.s1 + p.s_max) * t);
    } else {
        const double base = (p.s1 + p.s_max) * (p.N - 2) * t + std::pow(p.s0_init, 2.0 / p.N - 1.0);
        e.lower = std::pow(base, -static_cast<double>(p.N) / (p.N - 2));
    }
    return e;
}

namespace {

void require_stage1(const BoundParams& p) {
    if (p.N < 3) throw Error(ErrorCode::NotApplicable, "stage-1 bound needs N >= 3");
    if (!p.C1 || *p.C1 == 0.0)
        throw Error(ErrorCode::DegenerateIndicator, "a_1(0) + b_1(0) = 0");
    if (!(p.c1_0 < 0.0)) throw Error(ErrorCode::NotApplicable, "stage-1 bound needs a_1 b_1(0) < 0");
}

}  // namespace

double stage1_lower(const BoundParams& p, double t) {
    require_stage1(p);
    const double X = *p.C1 * std::pow(1.0 + *p.A1 * t, *p.B1);
    const double ratio = (X - 1.0) / (X + 1.0);
    if (ratio <= 0.0) return ratio;
    const double h = 0.5 * (p.a1_0 + p.b1_0);
    return ratio * h * h;
}

double stage1_omega_time(const BoundParams& p) {
    require_stage1(p);
    return (std::exp(1.0) * std::exp(-std::log(*p.C1) / *p.B1) - 1.0) / *p.A1;
}

double stage1_omega_constant(const BoundParams& p) {
    require_stage1(p);
    const double ind = p.a1_0 + p.b1_0;
    return *p.B1 / (2.0 + *p.B1) * ind * ind / 4.0;
}

double stage2_lower(const BoundParams& p, double t) {
    if (p.N < 3) throw Error(ErrorCode::NotApplicable, "stage-2 bound needs N >= 3");
    if (!(p.c1_0 > 0.0)) throw Error(ErrorCode::NotApplicable, "stage-2 bound needs a_1 b_1(0) > 0");
    if (std::isinf(p.A)) return 1.0;
    const double Y = std::pow(1.0 + p.B * (p.N - 2) * t, p.c2 / (p.N - 2));
    return 1.0 - 1.0 / (p.A * Y + 1.0);
}

const char* stage3_variant_name(Stage3Variant v) {
    switch (v) {
        case Stage3Variant::stage3: return "stage3";
        case Stage3Variant::stage2_5: return "stage2_5";
        case Stage3Variant::n2_stage23: return "n2_stage23";
        case Stage3Variant::n2_stage3: return "n2_stage3";
        case Stage3Variant::n2_t2_inf: return "n2_t2_inf";
    }
    return "unknown";
}

Stage3Bounds stage3_bounds(const BoundParams& p, double t, Stage3Variant v) {
    const bool n2 = v == Stage3Variant::n2_stage23 || v == Stage3Variant::n2_stage3 ||
                    v == Stage3Variant::n2_t2_inf;
    if (n2 && p.N != 2)
        throw Error(ErrorCode::NotApplicable, std::string(stage3_variant_name(v)) + " needs N = 2");
    if (!n2 && p.N < 3)
        throw Error(ErrorCode::NotApplicable, std::string(stage3_variant_name(v)) + " needs N >= 3");
    if (!(p.c1_0 > 0.0)) throw Error(ErrorCode::NotApplicable, "needs a_1 b_1(0) > 0");

    const double s0 = p.s0_init, s1 = p.s1, s2 = p.s2;
    // at N = 2 the exponents c3 and c5 both reduce to 2(s1 - s2)
    double c = p.c5;
    if (v == Stage3Variant::stage2_5) c = p.c3;
    if (n2) c = 2.0 * (s1 - s2);

    Stage3Bounds out;
    out.c1_lower = std::isinf(p.A) ? 1.0 : 1.0 - 1.0 / (1.0 + p.A * std::exp(c * t));
    switch (v) {
        case Stage3Variant::stage3:
        case Stage3Variant::n2_stage3: {
            const double tail = std::isinf(p.A) ? 0.0 : (s1 + s2) * p.c6 / (p.A * p.c5);
            out.s_lower = s1 - (s0 + s1) * std::exp(-p.c6 * t) - tail * std::exp(-p.c5 * t);
            out.s_upper = s1;
            break;
        }
        case Stage3Variant::stage2_5:
        case Stage3Variant::n2_t2_inf:
            out.s_lower = s1;
            out.s_upper = s1 + (s0 - s1) * std::exp(-p.c4 * t);
            break;
        case Stage3Variant::n2_stage23: {
            const Envelope e = s_envelope(p, t);
            out.s_lower = e.lower;
            out.s_upper = e.upper;
            break;
        }
    }
    return out;
}

double zero_limit_upper(double s0_init, int N, double t) {
    const double base = std::pow(s0_init, 2.0 / N - 2.0) + (2.0 * N - 2.0) * t;
    return std::pow(base, -static_cast<double>(N) / (2.0 * N - 2.0));
}

const char* selector_name(BoundSelector s) {
    switch (s) {
        case BoundSelector::s_envelope: return "s_envelope";
        case BoundSelector::stage1_lower: return "stage1_lower";
        case BoundSelector::stage2_lower: return "stage2_lower";
        case BoundSelector::stage3: return "stage3";
        case BoundSelector::stage2_5: return "stage2_5";
        case BoundSelector::n2_stage23: return "n2_stage23";
        case BoundSelector::n2_stage3: return "n2_stage3";
        case BoundSelector::n2_t2_inf: return "n2_t2_inf";
        case BoundSelector::zero_limit_upper: return "zero_limit_upper";
        case BoundSelector::t1_upper: return "t1_upper";
    }
    return "unknown";
}

std::vector<BoundSelector> all_selectors() {
    return {BoundSelector::s_envelope, BoundSelector::stage1_lower, BoundSelector::stage2_lower,
            BoundSelector::stage3,     BoundSelector::stage2_5,     BoundSelector::n2_stage23,
            BoundSelector::n2_stage3,  BoundSelector::n2_t2_inf,    BoundSelector::zero_limit_upper,
            BoundSelector::t1_upper};
}

std::optional<BoundSelector> selector_from_name(const std::string& name) {
    for (BoundSelector s : all_selectors())
        if (name == selector_name(s)) return s;
    return std::nullopt;
}

namespace {

struct Checker {
    BoundReport& rep;
    const BoundOptions& opt;
    bool first = true;

    void lower(double t, double observed, double bound) { check(t, observed - bound, observed, bound); }
    void upper(double t, double observed, double bound) { check(t, bound - observed, observed, bound); }

    void check(double t, double margin, double observed, double bound) {
        if (std::isinf(bound)) return;
        if (first || margin < rep.worst_margin) rep.worst_margin = margin;
        first = false;
        if (margin < -(opt.abs_slack + opt.rel_slack * std::abs(bound))) {
            ++rep.n_violations;
            if (rep.violations.size() < kMaxListed) rep.violations.push_back({t, observed, bound});
        }
    }
};

BoundReport not_applicable(BoundReport rep, const std::string& why) {
    rep.status = BoundStatus::not_applicable;
    rep.note = why;
    return rep;
}

}  // namespace

BoundReport verify_bounds(const Trajectory& traj, const BoundParams& p, BoundSelector which,
                          const BoundOptions& opt) {
    BoundReport rep;
    rep.name = selector_name(which);
    const double t0 = p.t_origin;
    std::vector<const Sample*> win;
    for (const auto& smp : traj.samples)
        if (smp.t >= t0 - 1e-12) win.push_back(&smp);

    const bool n3 = p.N >= 3;
    switch (which) {
        case BoundSelector::s_envelope:
        case BoundSelector::zero_limit_upper:
            break;
        case BoundSelector::stage1_lower:
            if (!n3) return not_applicable(rep, "needs N >= 3");
            if (!(p.c1_0 < 0.0) || !p.C1) return not_applicable(rep, "needs a_1 b_1(0) < 0 and a_1(0) + b_1(0) != 0");
            break;
        case BoundSelector::t1_upper:
            if (!(p.c1_0 < 0.0) || !p.C1) return not_applicable(rep, "needs a_1 b_1(0) < 0 and a_1(0) + b_1(0) != 0");
            break;
        case BoundSelector::stage2_lower:
            if (!n3) return not_applicable(rep, "needs N >= 3");
            if (!(p.c1_0 > 0.0)) return not_applicable(rep, "needs a_1 b_1(0) > 0");
            break;
        case BoundSelector::stage3:
        case BoundSelector::n2_stage3:
            if (n3 != (which == BoundSelector::stage3)) return not_applicable(rep, "depth mismatch");
            if (!(p.c1_0 > 0.0)) return not_applicable(rep, "needs a_1 b_1(0) > 0");
            if (!(p.q_0 >= p.s0_init)) return not_applicable(rep, "needs q(0) >= s(0)");
            break;
        case BoundSelector::stage2_5:
        case BoundSelector::n2_t2_inf:
            if (n3 != (which == BoundSelector::stage2_5)) return not_applicable(rep, "depth mismatch");
            if (!(p.c1_0 > 0.0)) return not_applicable(rep, "needs a_1 b_1(0) > 0");
            if (!(p.s0_init >= p.s1)) return not_applicable(rep, "needs s(0) >= s_1");
            break;
        case BoundSelector::n2_stage23:
            if (n3) return not_applicable(rep, "needs N = 2");
            if (!(p.c1_0 > 0.0)) return not_applicable(rep, "needs a_1 b_1(0) > 0");
            break;
    }

    // prefix windows: the derivations only hold while their hypotheses do
    if (which == BoundSelector::stage2_5 || which == BoundSelector::n2_t2_inf) {
        std::size_t n = 0;
        while (n < win.size() && win[n]->s >= p.s1) ++n;
        win.resize(n);
    }
    if (which == BoundSelector::zero_limit_upper) {
        if (!(p.q_0 <= 0.0)) return not_applicable(rep, "needs q(0) <= 0");
        std::size_t n = 0;
        while (n < win.size() && win[n]->q <= 0.0) ++n;
        win.resize(n);
    }
    if (win.empty()) {
        rep.status = BoundStatus::window_empty;
        rep.note = "no samples in the applicable window";
        return rep;
    }
    rep.window_start = win.front()->t;
    rep.window_end = win.back()->t;

    Checker ck{rep, opt};
    if (which == BoundSelector::t1_upper) {
        const double T = p.N >= 3 ? *p.T1 : *p.T2;
        std::optional<double> t1;
        for (std::size_t i = 0; i < win.size(); ++i) {
            const double c = win[i]->a(0) * win[i]->b(0);
            if (c >= 0.0) {
                if (i == 0) {
                    t1 = win[0]->t;
                } else {
                    const double cp = win[i - 1]->a(0) * win[i - 1]->b(0);
                    const double w = -cp / (c - cp);
                    t1 = win[i - 1]->t + w * (win[i]->t - win[i - 1]->t);
                }
                break;
            }
        }
        rep.n_checked = 1;
        if (t1) {
            ck.upper(*t1, *t1 - t0, T);
        } else if (rep.window_end - t0 > T) {
            ck.upper(rep.window_end, kInf, T);
            ++rep.n_violations;
            rep.violations.push_back({rep.window_end, rep.window_end - t0, T});
        } else {
            rep.note = "t1 not reached inside the window, which ends before the bound";
        }
        return rep;
    }

    for (const Sample* smp : win) {
        const double tau = smp->t - t0;
        const double c = smp->a(0) * smp->b(0);
        ++rep.n_checked;
        switch (which) {
            case BoundSelector::s_envelope: {
                const Envelope e = s_envelope(p, tau);
                ck.lower(smp->t, smp->s, e.lower);
                ck.upper(smp->t, smp->s, e.upper);
                break;
            }
            case BoundSelector::stage1_lower:
                ck.lower(smp->t, c, stage1_lower(p, tau));
                break;
            case BoundSelector::stage2_lower:
                ck.lower(smp->t, c, stage2_lower(p, tau));
                break;
            case BoundSelector::zero_limit_upper:
                ck.upper(smp->t, smp->s, zero_limit_upper(p.s0_init, p.N, tau));
                break;
            default: {
                Stage3Variant v = Stage3Variant::stage3;
                if (which == BoundSelector::stage2_5) v = Stage3Variant::stage2_5;
                if (which == BoundSelector::n2_stage23) v = Stage3Variant::n2_stage23;
                if (which == BoundSelector::n2_stage3) v = Stage3Variant::n2_stage3;
                if (which == BoundSelector::n2_t2_inf) v = Stage3Variant::n2_t2_inf;
                const Stage3Bounds b = stage3_bounds(p, tau, v);
                ck.lower(smp->t, c, b.c1_lower);
                ck.lower(smp->t, smp->s, b.s_lower);
                ck.upper(smp->t, smp->s, b.s_upper);
                break;
            }
        }
    }
    return rep;
}

double analytic_s(AnalyticKind kind, const TargetSpec& target, int index, double s0_init, int N,
                  double t) {
    if (index < 1 || index > target.d)
        throw Error(ErrorCode::NotAligned, "index " + std::to_string(index) + " outside [1, d]");
    if (kind == AnalyticKind::antisym_psd) {
        if (target.d_x != target.d_y || (target.U - target.V).cwiseAbs().maxCoeff() > 1e-10)
            throw Error(ErrorCode::NotAligned, "antisym_psd needs a symmetric PSD target (U = V)");
    }
    if (s0_init <= 0.0) return 0.0;
    const double si = target.s(index);
    // stationary directions leave the scalar ODE s' = N s^{2-2/N} (c - s)
    const double c = kind == AnalyticKind::aligned ? si : -si;
    if (N == 2) {
        const double e = std::exp(2.0 * c * t);
        return c * s0_init * e / (c - s0_init + s0_init * e);
    }
    auto f = [&](double s) { return s <= 0.0 ? 0.0 : N * std::pow(s, 2.0 - 2.0 / N) * (c - s); };
    return integrate_scalar(f, s0_init, t, 1e-12, 1e-15);
}

Stationarity stationary_check(const TargetSpec& target, const Vec& u, const Vec& v, double tol) {
    Stationarity st;
    const Vec Zv = target.Z * v;
    const Vec Ztu = target.Z.transpose() * u;
    const double q = u.dot(Zv);
    const double ru = (Zv - u * q).norm();
    const double rv = (Ztu - v * q).norm();
    st.residual = std::max(ru, rv);
    if (st.residual > tol) return st;
    if (std::abs(q) <= tol) {
        st.kind = StationaryKind::null_space;
        return st;
    }
    const Vec a = target.U.transpose() * u;
    const Vec b = target.V.transpose() * v;
    Eigen::Index i = 0;
    a.head(target.d).cwiseAbs().maxCoeff(&i);
    st.kind = StationaryKind::aligned;
    st.index = static_cast<int>(i) + 1;
    st.sign_u = a(i) >= 0 ? 1 : -1;
    st.sign_v = b(i) >= 0 ? 1 : -1;
    return st;
}

RateFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw Error(ErrorCode::WindowEmpty, "need at least two points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw Error(ErrorCode::WindowEmpty, "degenerate abscissa");
    RateFit f;
    f.n = n;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return f;
}

RateFit rate_fit(const Trajectory& traj, double t_begin, double t_end, Observable obs, double s1,
                 bool log_time, double t_shift) {
    std::vector<double> x, y;
    for (const auto& smp : traj.samples) {
        if (smp.t < t_begin || smp.t > t_end) continue;
        const double v = obs == Observable::one_minus_c1 ? 1.0 - smp.a(0) * smp.b(0) : s1 - smp.s;
        if (!(v > 0.0)) {
            std::ostringstream os;
            os << "observable " << v << " at t = " << smp.t;
            throw Error(ErrorCode::NonPositiveObservable, os.str());
        }
        const double tx = smp.t - t_shift;
        if (log_time && !(tx > 0.0)) continue;
        x.push_back(log_time ? std::log(tx) : tx);
        y.push_back(std::log(v));
    }
    return fit_line(x, y);
}

double dq_minus_ds_sign(const TargetSpec& target, const CoordState& state, int N) {
    if (!(state.s > 0.0)) throw Error(ErrorCode::NonPositiveS, "needs s > 0");
    const int ny = target.d_y, nx = target.d_x;
    Vec za = Vec::Zero(ny), zb = Vec::Zero(nx);
    for (int j = 0; j < target.d; ++j) {
        za(j) = target.sv(j) * state.b(j);
        zb(j) = target.sv(j) * state.a(j);
    }
    const double q = observables(target, state).q;
    const double ru = (za - state.a * state.a.dot(za)).squaredNorm();
    const double rv = (zb - state.b * state.b.dot(zb)).squaredNorm();
    const double s = state.s;
    return std::pow(s, 1.0 - 2.0 / N) * (ru + rv) - N * std::pow(s, 2.0 - 2.0 / N) * (q - s);
}

}  // namespace linflow
