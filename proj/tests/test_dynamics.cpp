#include "linflow/dynamics.hpp"
#include "linflow/init.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace linflow;

namespace {

Vec vec(std::initializer_list<double> xs) {
    Vec v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

Vec e(int n, int i) {
    Vec v = Vec::Zero(n);
    v(i) = 1.0;
    return v;
}

TargetSpec diag21() { return target_from_factors(Mat::Identity(2, 2), vec({2, 1}), Mat::Identity(2, 2)); }

CoordState state(double s, Vec a, Vec b) {
    CoordState c;
    c.s = s;
    c.a = std::move(a);
    c.b = std::move(b);
    return c;
}

const Sample* at(const Trajectory& tr, double t) {
    for (const auto& s : tr.samples)
        if (std::abs(s.t - t) < 1e-9) return &s;
    return nullptr;
}

// composite adaptive Simpson, used as an independent oracle for t(s)
double simpson(const std::function<double(double)>& f, double a, double b, double eps, int depth = 40) {
    const double m = 0.5 * (a + b);
    const double fa = f(a), fb = f(b), fm = f(m);
    const std::function<double(double, double, double, double, double, double, double, int)> rec =
        [&](double lo, double hi, double flo, double fmid, double fhi, double whole, double tol, int d) {
            const double mid = 0.5 * (lo + hi), l = 0.5 * (lo + mid), r = 0.5 * (mid + hi);
            const double fl = f(l), fr = f(r);
            const double left = (mid - lo) / 6.0 * (flo + 4.0 * fl + fmid);
            const double right = (hi - mid) / 6.0 * (fmid + 4.0 * fr + fhi);
            if (d <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
                return left + right + (left + right - whole) / 15.0;
            return rec(lo, mid, flo, fl, fmid, left, tol / 2, d - 1) + rec(mid, hi, fmid, fr, fhi, right, tol / 2, d - 1);
        };
    return rec(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), eps, depth);
}

IntegratorConfig tight(double t_max, double sample_dt = 0.0) {
    IntegratorConfig ic;
    ic.rtol = 1e-12;
    ic.atol = 1e-14;
    ic.dt_max = 0.05;
    ic.t_max = t_max;
    ic.sample_dt = sample_dt;
    return ic;
}

}  // namespace

TEST_CASE("coordinate right-hand side at aligned states") {
    const TargetSpec T = diag21();
    CoordDeriv d = rhs_coords(T, state(1.0, e(2, 0), e(2, 0)), 2);
    CHECK(d.ds == doctest::Approx(2.0));
    CHECK(d.da.cwiseAbs().maxCoeff() == 0.0);
    CHECK(d.db.cwiseAbs().maxCoeff() == 0.0);
    d = rhs_coords(T, state(1.0, e(2, 0), -e(2, 0)), 2);
    CHECK(d.ds == doctest::Approx(-6.0));
}

TEST_CASE("induced right-hand side examples") {
    const TargetSpec T = diag21();
    for (int N : {2, 3, 5}) CHECK(induced_rhs(T, N, T.Z1).cwiseAbs().maxCoeff() < 1e-10);
    const Mat u1v1 = T.U.col(0) * T.V.col(0).transpose();
    CHECK((induced_rhs(T, 2, 0.5 * u1v1) - 1.5 * u1v1).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(induced_rhs(T, 3, Mat::Zero(2, 2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("property: induced flow equals the product rule on coordinates") {
    for (int trial = 0; trial < 30; ++trial) {
        Rng rng(mix_seed(21, trial));
        const int dy = 2 + trial % 3, dx = 2 + (trial / 3) % 3, d = std::min(dy, dx);
        Vec sv(d);
        for (int i = 0; i < d; ++i) sv(i) = 0.5 + d - i;
        const TargetSpec T = target_from_factors(rng.orthogonal(dy), sv, rng.orthogonal(dx));
        const int N = 2 + trial % 4;
        const CoordState c = state(rng.uniform(0.2, 3.0), rng.unit_vec(dy), rng.unit_vec(dx));
        const CoordDeriv dc = rhs_coords(T, c, N);
        const Vec u = T.U * c.a, v = T.V * c.b, du = T.U * dc.da, dv = T.V * dc.db;
        const Mat ref = dc.ds * u * v.transpose() + c.s * du * v.transpose() + c.s * u * dv.transpose();
        const Mat got = induced_rhs(T, N, weight_from_coords(T, c));
        CHECK((got - ref).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("layer gradients vanish at the target") {
    Rng rng(8);
    const TargetSpec T = target_from_factors(rng.orthogonal(3), vec({1.5}), rng.orthogonal(2));
    NetworkSpec net{3, {2, 1, 4, 3}};
    const LayerStack st = balanced_stack(net, T.U.col(0), T.V.col(0), 1.5, 1);
    for (const Mat& g : layer_gradients(T, st)) CHECK(g.cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("layer gradients match finite differences") {
    Rng rng(9);
    const TargetSpec T = target_from_factors(rng.orthogonal(3), vec({2.0, 0.7}), rng.orthogonal(4));
    NetworkSpec net{4, {4, 2, 1, 3, 3}};
    const LayerStack st = balanced_stack(net, rng.unit_vec(3), rng.unit_vec(4), 0.9, 2);
    const auto half = [&](const LayerStack& s) { return 0.5 * (induced_weight(s) - T.Z).squaredNorm(); };
    const std::vector<Mat> G = layer_gradients(T, st);
    for (int l = 0; l < net.N; ++l)
        for (Eigen::Index i = 0; i < st.layers[l].size(); ++i) {
            LayerStack p = st, m = st;
            p.layers[l].data()[i] += 1e-6;
            m.layers[l].data()[i] -= 1e-6;
            CHECK(G[l].data()[i] == doctest::Approx((half(p) - half(m)) / 2e-6).epsilon(1e-6).scale(1.0));
        }
}

TEST_CASE("gradient descent from Z1 is stationary") {
    Rng rng(10);
    const TargetSpec T = target_from_factors(rng.orthogonal(3), vec({2, 1}), rng.orthogonal(3));
    NetworkSpec net{3, {3, 2, 1, 3}};
    const LayerStack st = balanced_stack(net, T.U.col(0), T.V.col(0), 2.0, 3);
    GDConfig g;
    g.lr = 5e-4;
    g.steps = 1000;
    g.record_every = 100;
    const Trajectory tr = gd_run(T, st, g);
    REQUIRE(tr.size() == 11);
    for (const auto& s : tr.samples) {
        CHECK(std::abs(s.s - 2.0) < 1e-10);
        CHECK(std::abs(s.loss - tr.front().loss) < 1e-10);
    }
}

TEST_CASE("gradient descent balancedness drift is first order in the step") {
    Rng rng(11);
    const TargetSpec T = target_from_factors(rng.orthogonal(5), vec({5, 4, 3, 2, 1}), rng.orthogonal(8));
    NetworkSpec net{6, {8, 3, 5, 10, 1, 4, 5}};
    const LayerStack st = balanced_stack(net, rng.unit_vec(5), rng.unit_vec(8), 1.0, 4);
    const auto run = [&](double lr, long steps) {
        GDConfig g;
        g.lr = lr;
        g.steps = steps;
        g.record_every = 100;
        return gd_run(T, st, g);
    };
    const auto worst = [](const Trajectory& tr) {
        double w = 0.0;
        for (const auto& s : tr.samples) w = std::max(w, s.bal_residual);
        return w;
    };
    const Trajectory tr = run(5e-4, 10000);
    CHECK(tr.front().bal_residual <= 1e-12);
    // each step adds lr^2 (G_i G_i^T - G_{i+1}^T G_{i+1}), and the loss drops by about lr sum |G_i|^2 / 2
    // on the half-scaled objective, so the residual stays below lr * (loss drop) / 2
    const double drop = tr.front().loss - tr.back().loss;
    CHECK(worst(tr) <= 5e-4 * drop / 2.0);
    // halving the step over the same time halves the drift
    const double ratio = worst(run(2.5e-4, 20000)) / worst(tr);
    CHECK(ratio == doctest::Approx(0.5).epsilon(0.05));
    CHECK(tr.back().s == doctest::Approx(5.0).epsilon(1e-3));
    CHECK(tr.back().q1 == doctest::Approx(5.0).epsilon(1e-3));
}

TEST_CASE("aligned flow follows the logistic curve") {
    const TargetSpec T = diag21();
    const Trajectory tr = integrate_coords(T, state(1.0, e(2, 0), e(2, 0)), 2, tight(2.0, 0.5));
    for (double t : {0.5, 1.0, 2.0}) {
        const Sample* s = at(tr, t);
        REQUIRE(s != nullptr);
        CHECK(std::abs(s->s - 2.0 / (1.0 + std::exp(-4.0 * t))) < 1e-6);
    }
}

TEST_CASE("aligned flow at depth three matches quadrature of t(s)") {
    const TargetSpec T = diag21();
    const int N = 3;
    const double s0 = 0.4, s_end = 1.9, si = 2.0;
    const double t_end = simpson([&](double s) { return 1.0 / (N * std::pow(s, 2.0 - 2.0 / N) * (si - s)); }, s0,
                                 s_end, 1e-14);
    const Trajectory tr = integrate_coords(T, state(s0, e(2, 0), e(2, 0)), N, tight(t_end));
    CHECK(tr.back().t == doctest::Approx(t_end).epsilon(1e-14));
    CHECK(std::abs(tr.back().s - s_end) < 1e-9);
}

TEST_CASE("fully cancelled flow shrinks") {
    Rng rng(12);
    const TargetSpec T = target_from_factors(rng.orthogonal(3), vec({2, 1.5, 1}), rng.orthogonal(3));
    const Vec a = rng.unit_vec(3);
    const Trajectory tr = integrate_coords(T, state(1.0, a, -a), 3, tight(5.0));
    CHECK(tr.back().s < tr.front().s);
    for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr.samples[i].s <= tr.samples[i - 1].s);
    CHECK((tr.back().a + tr.back().b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("flow from the second singular pair stays there") {
    const TargetSpec T = diag21();
    IntegratorConfig ic = tight(40.0);
    ic.dt_max = 1.0;
    ic.converged = 1e-10;
    const Trajectory tr = integrate_coords(T, state(0.5, e(2, 1), e(2, 1)), 4, ic);
    CHECK(std::abs(tr.back().s - 1.0) < 1e-8);
    CHECK((tr.back().a - e(2, 1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((tr.back().b - e(2, 1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fixed-step and adaptive integrators agree") {
    Rng rng(13);
    const TargetSpec T = target_from_factors(rng.orthogonal(3), vec({2, 1.2, 0.5}), rng.orthogonal(4));
    const CoordState c = state(0.8, rng.unit_vec(3), rng.unit_vec(4));
    IntegratorConfig rk4 = tight(3.0, 0.1);
    rk4.method = Method::rk4_fixed;
    rk4.dt = 1e-3;
    const Trajectory x = integrate_coords(T, c, 3, rk4);
    const Trajectory y = integrate_coords(T, c, 3, tight(3.0, 0.1));
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(x.samples[i].t == doctest::Approx(y.samples[i].t));
        CHECK(std::abs(x.samples[i].s - y.samples[i].s) < 1e-9);
        CHECK((x.samples[i].a - y.samples[i].a).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("induced flow matches coordinates") {
    const TargetSpec T = diag21();
    const CoordState c = state(0.3, e(2, 0), e(2, 0));
    const Trajectory x = integrate_induced(T, weight_from_coords(T, c), 2, tight(2.0, 0.25));
    const Trajectory y = integrate_coords(T, c, 2, tight(2.0, 0.25));
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x.samples[i].s - y.samples[i].s) < 1e-8);

    const Trajectory z = integrate_induced(T, Mat::Zero(2, 2), 3, tight(1.0, 0.25));
    for (const auto& s : z.samples) CHECK(s.s == 0.0);
}

TEST_CASE("induced flow matches coordinates from a random rank-one start") {
    Rng rng(14);
    const TargetSpec T = target_from_factors(rng.orthogonal(3), vec({2, 1.3, 0.6}), rng.orthogonal(3));
    const CoordState c = state(0.7, rng.unit_vec(3), rng.unit_vec(3));
    IntegratorConfig ic = tight(10.0, 0.5);
    const Trajectory x = integrate_induced(T, weight_from_coords(T, c), 4, ic);
    const Trajectory y = integrate_coords(T, c, 4, ic);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double sign = x.samples[i].a.dot(y.samples[i].a) < 0.0 ? -1.0 : 1.0;
        CHECK(std::abs(x.samples[i].s - y.samples[i].s) < 1e-6);
        CHECK((sign * x.samples[i].a - y.samples[i].a).cwiseAbs().maxCoeff() < 1e-6);
        CHECK((sign * x.samples[i].b - y.samples[i].b).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("renormalization keeps exact cancellations") {
    Vec a = vec({0.3, -0.5, 0.81}), b = vec({-0.3, 0.5, 0.2});
    renormalize_coords(a, b);
    CHECK(a(0) + b(0) == 0.0);
    CHECK(a(1) + b(1) == 0.0);
    CHECK(a.norm() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(b.norm() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("scalar integrator") {
    const double y = integrate_scalar([](double x) { return -x; }, 1.0, 2.0);
    CHECK(y == doctest::Approx(std::exp(-2.0)).epsilon(1e-11));
}

TEST_CASE("sign alignment") {
    Vec u = vec({-1, 0}), v = vec({0, 1});
    align_sign(vec({1, 0}), u, v);
    CHECK(u(0) == 1.0);
    CHECK(v(1) == -1.0);
}

TEST_CASE("integrator config validation") {
    IntegratorConfig ic;
    ic.rtol = -1.0;
    CHECK_THROWS_AS(ic.validate(), Error);
}
