#include "linflow/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>

namespace linflow {

void IntegratorConfig::validate() const {
    if (!(t_max > 0.0)) throw Error(ErrorCode::InvalidArgument, "t_max must be positive");
    if (method == Method::rk4_fixed && !(dt > 0.0))
        throw Error(ErrorCode::InvalidArgument, "dt must be positive");
    if (method == Method::rk45_adaptive && !(dt_max > 0.0 && rtol > 0.0 && atol > 0.0))
        throw Error(ErrorCode::InvalidArgument, "rk45 needs positive dt_max, rtol, atol");
    if (sample_dt < 0.0) throw Error(ErrorCode::InvalidArgument, "sample_dt must be >= 0");
    if (max_samples < 2) throw Error(ErrorCode::InvalidArgument, "max_samples must be >= 2");
}

namespace {

// y = [s, a_1..a_{d_y}, b_1..b_{d_x}]
void coord_rhs_packed(const TargetSpec& t, int N, const Vec& y, Vec& dy) {
    const int ny = t.d_y, nx = t.d_x;
    const double s = y(0);
    dy.resize(y.size());
    if (s <= 0.0) {
        dy.setZero();
        return;
    }
    const double* a = y.data() + 1;
    const double* b = y.data() + 1 + ny;
    double q = 0.0;
    for (int j = 0; j < t.d; ++j) q += t.sv(j) * a[j] * b[j];
    const double ps = std::pow(s, 1.0 - 2.0 / N);
    dy(0) = N * s * ps * (q - s);
    double* da = dy.data() + 1;
    double* db = dy.data() + 1 + ny;
    // written so that b_i = -a_i gives db_i = -da_i bit for bit
    for (int i = 0; i < ny; ++i) {
        const double si = t.s(i + 1);
        const double bi = i < nx ? b[i] : 0.0;
        da[i] = ps * (si * bi - a[i] * q);
    }
    for (int i = 0; i < nx; ++i) {
        const double si = t.s(i + 1);
        const double ai = i < ny ? a[i] : 0.0;
        db[i] = ps * (si * ai - b[i] * q);
    }
}

struct Recorder {
    std::vector<Sample> samples;
    std::size_t max_samples;
    long stride = 1;
    long counter = 0;
    bool last_recorded = false;

    explicit Recorder(std::size_t m) : max_samples(m) {}

    // offer every candidate; keeps one in `stride`, halving density when full
    void offer(Sample&& smp, bool force) {
        const bool take = force || (counter % stride == 0);
        ++counter;
        last_recorded = take;
        if (!take) return;
        samples.push_back(std::move(smp));
        if (samples.size() > max_samples) {
            std::vector<Sample> kept;
            kept.reserve(samples.size() / 2 + 1);
            for (std::size_t i = 0; i < samples.size(); i += 2) kept.push_back(std::move(samples[i]));
            samples.swap(kept);
            stride *= 2;
        }
    }
};

struct OdeHooks {
    std::function<void(const Vec&, Vec&)> rhs;
    std::function<void(Vec&)> project;
    // returns a termination when the state should stop the run
    std::function<std::optional<Termination>(double, const Vec&, const Vec&)> check;
    std::function<Sample(double, const Vec&)> sample;
};

constexpr double kA[7][6] = {
    {0, 0, 0, 0, 0, 0},
    {1.0 / 5, 0, 0, 0, 0, 0},
    {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
    {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
    {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
constexpr double kE[7] = {71.0 / 57600,  0,           -71.0 / 16695, 71.0 / 1920,
                          -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

Trajectory run_ode(Vec y, const IntegratorConfig& cfg, const OdeHooks& hk, int d_y, int d_x) {
    cfg.validate();
    Trajectory traj;
    traj.d_y = d_y;
    traj.d_x = d_x;
    Recorder rec(cfg.max_samples);
    const bool grid = cfg.sample_dt > 0.0;

    double t = 0.0;
    long grid_k = 1;
    Vec dy(y.size());
    hk.rhs(y, dy);
    rec.offer(hk.sample(t, y), true);
    if (auto stop = hk.check(t, y, dy)) {
        traj.samples = std::move(rec.samples);
        traj.termination = *stop;
        return traj;
    }

    const int n = static_cast<int>(y.size());
    std::vector<Vec> k(7, Vec(n));
    Vec ys(n), yn(n), err(n);
    double h = cfg.method == Method::rk4_fixed ? cfg.dt : std::min(cfg.dt, cfg.dt_max);
    Termination term = Termination::t_max;
    Vec dnew(n);

    while (t < cfg.t_max) {
        double hs = std::min(h, cfg.t_max - t);
        bool on_grid = false;
        if (grid) {
            const double tg = grid_k * cfg.sample_dt;
            if (t + hs >= tg * (1.0 - 1e-14)) {
                hs = tg - t;
                on_grid = true;
            }
        }
        if (hs <= 0.0) {
            // grid point coincides with t: advance the grid index
            ++grid_k;
            continue;
        }

        bool accepted = true;
        double fac = 1.0;
        if (cfg.method == Method::rk4_fixed) {
            hk.rhs(y, k[0]);
            ys = y + 0.5 * hs * k[0];
            hk.rhs(ys, k[1]);
            ys = y + 0.5 * hs * k[1];
            hk.rhs(ys, k[2]);
            ys = y + hs * k[2];
            hk.rhs(ys, k[3]);
            yn = y + (hs / 6.0) * (k[0] + 2.0 * k[1] + 2.0 * k[2] + k[3]);
        } else {
            hk.rhs(y, k[0]);
            for (int st = 1; st < 7; ++st) {
                ys = y;
                for (int j = 0; j < st; ++j)
                    if (kA[st][j] != 0.0) ys += (hs * kA[st][j]) * k[j];
                if (st < 6) {
                    hk.rhs(ys, k[st]);
                } else {
                    yn = ys;
                    hk.rhs(yn, k[6]);
                }
            }
            err.setZero();
            for (int j = 0; j < 7; ++j)
                if (kE[j] != 0.0) err += (hs * kE[j]) * k[j];
            double en = 0.0;
            for (int i = 0; i < n; ++i) {
                const double sc = cfg.atol + cfg.rtol * std::max(std::abs(y(i)), std::abs(yn(i)));
                en = std::max(en, std::abs(err(i)) / sc);
            }
            accepted = en <= 1.0;
            fac = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
            if (!accepted) {
                h = hs * fac;
                if (h < cfg.dt_min) {
                    if (y(0) < cfg.s_zero_threshold) {
                        term = Termination::zero;
                        break;
                    }
                    std::ostringstream os;
                    os << "step " << h << " below dt_min at t=" << t << ", s=" << y(0);
                    throw Error(ErrorCode::StepSizeUnderflow, os.str());
                }
                continue;
            }
        }

        t = on_grid ? grid_k * cfg.sample_dt : t + hs;
        if (on_grid) ++grid_k;
        y = yn;
        hk.project(y);
        if (cfg.method == Method::rk45_adaptive) {
            // keep the controller's proposal unless the step was cut short by the grid
            if (!on_grid || hs * fac > h) h = std::min(hs * fac, cfg.dt_max);
        }

        const bool need_deriv = cfg.converged.has_value();
        if (need_deriv) hk.rhs(y, dnew);
        auto stop = hk.check(t, y, dnew);
        const bool finished = stop.has_value() || t >= cfg.t_max;
        if (!grid || on_grid || finished) rec.offer(hk.sample(t, y), finished || grid);
        if (stop) {
            term = *stop;
            break;
        }
    }
    traj.samples = std::move(rec.samples);
    traj.termination = term;
    return traj;
}

std::optional<Termination> common_checks(const IntegratorConfig& cfg, double s, const Vec& dy) {
    if (s < cfg.s_zero_threshold) return Termination::zero;
    if (cfg.s_below && s < *cfg.s_below) return Termination::s_below;
    if (cfg.converged && dy.size() > 0 && dy.cwiseAbs().maxCoeff() < *cfg.converged)
        return Termination::converged;
    return std::nullopt;
}

}  // namespace

CoordDeriv rhs_coords(const TargetSpec& target, const CoordState& state, int N) {
    if (!(state.s > 0.0)) throw Error(ErrorCode::NonPositiveS, "rhs_coords needs s > 0");
    if (state.a.size() != target.d_y || state.b.size() != target.d_x)
        throw Error(ErrorCode::ShapeMismatch, "coordinate dimensions do not match the target");
    Vec y(1 + target.d_y + target.d_x), dy;
    y(0) = state.s;
    y.segment(1, target.d_y) = state.a;
    y.segment(1 + target.d_y, target.d_x) = state.b;
    coord_rhs_packed(target, N, y, dy);
    CoordDeriv out;
    out.ds = dy(0);
    out.da = dy.segment(1, target.d_y);
    out.db = dy.segment(1 + target.d_y, target.d_x);
    return out;
}

void renormalize_coords(Vec& a, Vec& b) {
    const int m = static_cast<int>(std::min(a.size(), b.size()));
    std::vector<char> paired(m, 0);
    double head = 0.0;
    for (int i = 0; i < m; ++i) {
        if (a(i) == -b(i)) {
            paired[i] = 1;
            head += a(i) * a(i);
        }
    }
    double ta = 0.0, tb = 0.0;
    for (int i = 0; i < a.size(); ++i)
        if (i >= m || !paired[i]) ta += a(i) * a(i);
    for (int i = 0; i < b.size(); ++i)
        if (i >= m || !paired[i]) tb += b(i) * b(i);
    if (head < 1.0 && ta > 0.0 && tb > 0.0) {
        const double fa = std::sqrt((1.0 - head) / ta);
        const double fb = std::sqrt((1.0 - head) / tb);
        for (int i = 0; i < a.size(); ++i)
            if (i >= m || !paired[i]) a(i) *= fa;
        for (int i = 0; i < b.size(); ++i)
            if (i >= m || !paired[i]) b(i) *= fb;
        return;
    }
    const double c = 2.0 / (a.norm() + b.norm());
    a *= c;
    b *= c;
}

Mat induced_rhs(const TargetSpec& target, int N, const Mat& W, const Tolerances& tol,
                double rank_tol) {
    if (W.rows() != target.d_y || W.cols() != target.d_x)
        throw Error(ErrorCode::ShapeMismatch, "W must be d_y x d_x");
    Tolerances t2 = tol;
    if (rank_tol >= 0.0) t2.rank = rank_tol;
    const RankOne r = rank_one_svd(W, t2);
    Mat out = Mat::Zero(W.rows(), W.cols());
    if (!r.defined) return out;
    const Mat E = W - target.Z;
    const Mat P = r.u * r.u.transpose();
    const Mat Q = r.v * r.v.transpose();
    for (int j = 1; j <= N; ++j) {
        const double pl = static_cast<double>(N - j) / N;
        const double pr = static_cast<double>(j - 1) / N;
        Mat term = E;
        if (pl > 0.0) term = std::pow(r.s, 2.0 * pl) * (P * term);
        if (pr > 0.0) term = std::pow(r.s, 2.0 * pr) * (term * Q);
        out -= term;
    }
    return out;
}

std::vector<Mat> layer_gradients(const TargetSpec& target, const LayerStack& stack) {
    const int N = stack.depth();
    const Mat W = induced_weight(stack);
    if (W.rows() != target.d_y || W.cols() != target.d_x)
        throw Error(ErrorCode::ShapeMismatch, "stack output shape does not match the target");
    const Mat E = W - target.Z;
    // pre[i] = W_i ... W_1, suf[i] = W_N ... W_{i+1}
    std::vector<Mat> pre(N + 1), suf(N + 1);
    pre[0] = Mat::Identity(stack.layers[0].cols(), stack.layers[0].cols());
    for (int i = 1; i <= N; ++i) pre[i] = stack.layers[i - 1] * pre[i - 1];
    suf[N] = Mat::Identity(stack.layers[N - 1].rows(), stack.layers[N - 1].rows());
    for (int i = N - 1; i >= 0; --i) suf[i] = suf[i + 1] * stack.layers[i];
    std::vector<Mat> G(N);
    for (int i = 1; i <= N; ++i) G[i - 1] = suf[i].transpose() * E * pre[i - 1].transpose();
    return G;
}

void align_sign(const Vec& u_ref, Vec& u, Vec& v) {
    if (u_ref.size() == u.size() && u_ref.dot(u) < 0.0) {
        u = -u;
        v = -v;
    }
}

Trajectory gd_run(const TargetSpec& target, const LayerStack& stack0, const GDConfig& cfg,
                  const Vec* u_ref, const Tolerances& tol) {
    if (!(cfg.lr > 0.0)) throw Error(ErrorCode::InvalidArgument, "lr must be positive");
    if (cfg.steps < 1 || cfg.record_every < 1)
        throw Error(ErrorCode::InvalidArgument, "steps and record_every must be positive");
    LayerStack st = stack0;
    Trajectory traj;
    traj.d_y = target.d_y;
    traj.d_x = target.d_x;
    traj.termination = Termination::steps_done;

    Vec prev_u;
    if (u_ref) prev_u = *u_ref;
    double guard = 0.0;

    auto record = [&](long step) {
        const Mat W = induced_weight(st);
        RankOne r = rank_one_svd(W, tol);
        CoordState c;
        c.t = step * cfg.lr;
        if (r.defined) {
            if (prev_u.size() > 0) align_sign(prev_u, r.u, r.v);
            prev_u = r.u;
            c = coords_from_uv(target, r.s, r.u, r.v, tol);
            c.t = step * cfg.lr;
        } else {
            c.a = Vec::Zero(target.d_y);
            c.b = Vec::Zero(target.d_x);
        }
        Sample smp = make_sample(target, c, balancedness_residual(st));
        smp.loss = loss(target, W);
        traj.samples.push_back(std::move(smp));
        return r.s;
    };

    const double s0 = record(0);
    guard = 10.0 * std::max(target.sv(0), s0);
    for (long step = 1; step <= cfg.steps; ++step) {
        const std::vector<Mat> G = layer_gradients(target, st);
        for (int i = 0; i < st.depth(); ++i) st.layers[i] -= cfg.lr * G[i];
        if (step % cfg.record_every == 0 || step == cfg.steps) {
            const double s = record(step);
            if (!(s <= guard)) {
                std::ostringstream os;
                os << "s = " << s << " exceeds guard " << guard << " at step " << step;
                throw Error(ErrorCode::DivergenceDetected, os.str());
            }
        }
    }
    return traj;
}

Trajectory integrate_coords(const TargetSpec& target, const CoordState& state0, int N,
                            const IntegratorConfig& cfg) {
    if (!(state0.s > 0.0)) throw Error(ErrorCode::NonPositiveS, "integrate_coords needs s(0) > 0");
    if (state0.a.size() != target.d_y || state0.b.size() != target.d_x)
        throw Error(ErrorCode::ShapeMismatch, "coordinate dimensions do not match the target");
    const int ny = target.d_y, nx = target.d_x;
    Vec y(1 + ny + nx);
    y(0) = state0.s;
    y.segment(1, ny) = state0.a;
    y.segment(1 + ny, nx) = state0.b;

    OdeHooks hk;
    hk.rhs = [&](const Vec& yy, Vec& dy) { coord_rhs_packed(target, N, yy, dy); };
    hk.project = [&](Vec& yy) {
        Vec a = yy.segment(1, ny), b = yy.segment(1 + ny, nx);
        renormalize_coords(a, b);
        yy.segment(1, ny) = a;
        yy.segment(1 + ny, nx) = b;
    };
    hk.sample = [&](double t, const Vec& yy) {
        CoordState c;
        c.t = state0.t + t;
        c.s = yy(0);
        c.a = yy.segment(1, ny);
        c.b = yy.segment(1 + ny, nx);
        return make_sample(target, c);
    };
    hk.check = [&](double, const Vec& yy, const Vec& dy) -> std::optional<Termination> {
        if (auto c = common_checks(cfg, yy(0), dy)) return c;
        if (cfg.stage != StageStop::none) {
            const Observables o = observables(target, yy.segment(1, ny), yy.segment(1 + ny, nx));
            if (cfg.stage == StageStop::t1 && o.q1 >= 0.0) return Termination::stage_reached;
            if (cfg.stage == StageStop::t2 && o.q >= yy(0)) return Termination::stage_reached;
        }
        return std::nullopt;
    };
    return run_ode(y, cfg, hk, ny, nx);
}

Trajectory integrate_induced(const TargetSpec& target, const Mat& W0, int N,
                             const IntegratorConfig& cfg, const Tolerances& tol) {
    if (W0.rows() != target.d_y || W0.cols() != target.d_x)
        throw Error(ErrorCode::ShapeMismatch, "W0 must be d_y x d_x");
    const int ny = target.d_y, nx = target.d_x;
    const RankOne r0 = rank_one_svd(W0, tol);
    if (!r0.defined) {
        cfg.validate();
        Trajectory traj;
        traj.d_y = ny;
        traj.d_x = nx;
        CoordState c{0.0, Vec::Zero(ny), Vec::Zero(nx), 0.0};
        traj.samples.push_back(make_sample(target, c));
        c.t = cfg.t_max;
        traj.samples.push_back(make_sample(target, c));
        traj.termination = Termination::zero;
        return traj;
    }
    const double inf = std::numeric_limits<double>::infinity();
    Vec prev_u = r0.u;
    auto as_mat = [&](const Vec& y) {
        return Mat(Eigen::Map<const Mat>(y.data(), ny, nx));
    };

    OdeHooks hk;
    hk.rhs = [&](const Vec& y, Vec& dy) {
        const Mat R = induced_rhs(target, N, as_mat(y), tol, inf);
        dy = Eigen::Map<const Vec>(R.data(), R.size());
    };
    hk.project = [&](Vec& y) {
        Eigen::JacobiSVD<Mat> svd(as_mat(y), Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Mat P = svd.singularValues()(0) * svd.matrixU().col(0) *
                      svd.matrixV().col(0).transpose();
        y = Eigen::Map<const Vec>(P.data(), P.size());
    };
    auto decompose = [&](const Vec& y) {
        Tolerances loose = tol;
        loose.rank = inf;
        RankOne r = rank_one_svd(as_mat(y), loose);
        if (r.defined) {
            align_sign(prev_u, r.u, r.v);
            prev_u = r.u;
        }
        return r;
    };
    hk.sample = [&](double t, const Vec& y) {
        const RankOne r = decompose(y);
        CoordState c;
        if (r.defined) {
            c = coords_from_uv(target, r.s, r.u, r.v, tol);
        } else {
            c.a = Vec::Zero(ny);
            c.b = Vec::Zero(nx);
        }
        c.t = t;
        return make_sample(target, c);
    };
    hk.check = [&](double, const Vec& y, const Vec& dy) -> std::optional<Termination> {
        Eigen::JacobiSVD<Mat> svd(as_mat(y));
        const double s = svd.singularValues()(0);
        if (auto c = common_checks(cfg, s, dy)) return c;
        if (cfg.stage != StageStop::none) {
            const RankOne r = decompose(y);
            const double q = r.u.dot(target.Z * r.v);
            const double q1 = r.u.dot(target.Z1 * r.v);
            if (cfg.stage == StageStop::t1 && q1 >= 0.0) return Termination::stage_reached;
            if (cfg.stage == StageStop::t2 && q >= s) return Termination::stage_reached;
        }
        return std::nullopt;
    };
    const Mat W = r0.s * r0.u * r0.v.transpose();
    Vec y = Eigen::Map<const Vec>(W.data(), W.size());
    return run_ode(y, cfg, hk, ny, nx);
}

}  // namespace linflow
