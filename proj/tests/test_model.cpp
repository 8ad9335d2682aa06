#include "linflow/model.hpp"

#include <doctest.h>

#include <cmath>

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

}  // namespace

TEST_CASE("target from identity factors") {
    const TargetSpec T = diag21();
    CHECK(T.d == 2);
    CHECK(T.Z(0, 0) == 2.0);
    CHECK(T.Z(1, 1) == 1.0);
    CHECK(T.Z(0, 1) == 0.0);
    CHECK(T.Z1(0, 0) == 2.0);
    CHECK(T.Z1(1, 1) == 0.0);
    CHECK(T.s(1) == 2.0);
    CHECK(T.s(3) == 0.0);
}

TEST_CASE("target factor validation") {
    const Mat I = Mat::Identity(2, 2);
    auto code = [](auto&& f) {
        try {
            f();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::InvalidArgument;
    };
    CHECK(code([&] { target_from_factors(I, vec({1, 1}), I); }) == ErrorCode::GapTooSmall);
    CHECK(code([&] { target_from_factors(I, vec({1, 2}), I); }) == ErrorCode::NonDecreasingSingularValues);
    Mat B = I;
    B(0, 1) = 0.1;
    CHECK(code([&] { target_from_factors(B, vec({2, 1}), I); }) == ErrorCode::NotOrthogonal);
}

TEST_CASE("target from random orthogonal factors reconstructs Z") {
    Rng rng(11);
    const Mat Qu = rng.orthogonal(3), Qv = rng.orthogonal(3);
    const TargetSpec T = target_from_factors(Qu, vec({3, 2, 1}), Qv);
    Mat ref = Mat::Zero(3, 3);
    for (int i = 0; i < 3; ++i) ref += (3.0 - i) * Qu.col(i) * Qv.col(i).transpose();
    CHECK((T.Z - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((T.Z1 - 3.0 * Qu.col(0) * Qv.col(0).transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("target from whitened data") {
    const Mat X = Mat::Identity(2, 2);
    Mat Y = Mat::Zero(2, 2);
    Y(0, 0) = 2.0;
    Y(1, 1) = 1.0;
    const TargetSpec T = target_from_data(X, Y);
    CHECK((T.Z - Y).cwiseAbs().maxCoeff() < 1e-14);

    try {
        target_from_data(std::sqrt(2.0) * X, Y);
        FAIL("expected NotWhitened");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotWhitened);
    }
}

TEST_CASE("target from data matches eigenvalues of Z Z^T") {
    Rng rng(12);
    Mat Y(3, 4);
    for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = rng.normal();
    const Mat X = Mat::Identity(4, 4);
    const TargetSpec T = target_from_data(X, Y);
    CHECK((T.Z - Y).cwiseAbs().maxCoeff() < 1e-13);
    // singular values as square roots of the Gram eigenvalues, largest first
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(Y * Y.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().reverse();
    REQUIRE(T.d == 3);
    for (int i = 0; i < 3; ++i) CHECK(T.sv(i) == doctest::Approx(std::sqrt(ev(i))).epsilon(1e-10));
}

TEST_CASE("induced weight of simple stacks") {
    LayerStack id;
    id.layers.assign(3, Mat::Identity(3, 3));
    CHECK((induced_weight(id) - Mat::Identity(3, 3)).norm() == 0.0);

    Rng rng(3);
    const Vec u0 = rng.unit_vec(3), v0 = rng.unit_vec(4);
    LayerStack two;
    two.layers = {Mat(v0.transpose()), Mat(u0)};
    const Mat W = induced_weight(two);
    CHECK((W - u0 * v0.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(rank_one_svd(W).s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("unit h-chain telescopes and is balanced") {
    Rng rng(4);
    const std::vector<int> widths{4, 3, 1, 2, 5};
    std::vector<Vec> h;
    for (int w : widths) h.push_back(rng.unit_vec(w));
    LayerStack st;
    for (std::size_t i = 1; i < widths.size(); ++i) st.layers.push_back(h[i] * h[i - 1].transpose());
    CHECK((induced_weight(st) - h.back() * h.front().transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(balancedness_residual(st) < 1e-14);

    st.layers[0] *= 2.0;
    CHECK(balancedness_residual(st) > 0.1);
}

TEST_CASE("rank-one svd") {
    const RankOne z = rank_one_svd(Mat::Zero(2, 3));
    CHECK(z.s == 0.0);
    CHECK_FALSE(z.defined);

    Mat W = Mat::Zero(3, 3);
    W(0, 1) = 3.0;
    const RankOne r = rank_one_svd(W);
    CHECK(r.s == doctest::Approx(3.0));
    CHECK((r.u * r.v.transpose() - e(3, 0) * e(3, 1).transpose()).cwiseAbs().maxCoeff() < 1e-14);

    Rng rng(5);
    const Vec u0 = rng.unit_vec(4), v0 = rng.unit_vec(3);
    const RankOne q = rank_one_svd(0.7 * u0 * v0.transpose());
    CHECK(q.s == doctest::Approx(0.7).epsilon(1e-13));
    CHECK((q.u * q.v.transpose() - u0 * v0.transpose()).cwiseAbs().maxCoeff() < 1e-12);

    Mat R(2, 2);
    R << 1, 0, 0, 1;
    CHECK_THROWS_AS(rank_one_svd(R), Error);
}

TEST_CASE("coordinates of singular vectors") {
    Rng rng(6);
    const TargetSpec T = target_from_factors(rng.orthogonal(3), vec({3, 2, 1}), rng.orthogonal(4));
    const Vec u1 = T.U.col(0), v1 = T.V.col(0);
    const CoordState c = coords_from_uv(T, 1.0, u1, v1);
    CHECK((c.a - e(3, 0)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((c.b - e(4, 0)).cwiseAbs().maxCoeff() < 1e-14);
    const CoordState m = coords_from_uv(T, 1.0, u1, Vec(-v1));
    CHECK((m.b + e(4, 0)).cwiseAbs().maxCoeff() < 1e-14);

    const Vec u = rng.unit_vec(3), v = rng.unit_vec(4);
    const CoordState g = coords_from_uv(T, 1.0, u, v);
    CHECK(g.a.squaredNorm() == doctest::Approx(1.0).epsilon(1e-12));
    Vec u2, v2;
    uv_from_coords(T, g, u2, v2);
    CHECK((u2 - u).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((v2 - v).cwiseAbs().maxCoeff() < 1e-14);
    CHECK_THROWS_AS(coords_from_uv(T, 1.0, Vec(2.0 * u), v), Error);
}

TEST_CASE("observables") {
    const TargetSpec T = diag21();
    CoordState st;
    st.s = 1.0;
    st.a = e(2, 0);
    st.b = e(2, 0);
    Observables o = observables(T, st);
    CHECK(o.q == 2.0);
    CHECK(o.q1 == 2.0);
    st.b = -e(2, 0);
    CHECK(observables(T, st).q == -2.0);
    o = observables(T, vec({0.6, 0.8}), vec({0.8, 0.6}));
    CHECK(o.q == doctest::Approx(1.44).epsilon(1e-15));
    CHECK(o.q1 == doctest::Approx(0.96).epsilon(1e-15));
}

TEST_CASE("loss values") {
    Rng rng(7);
    const TargetSpec T = target_from_factors(rng.orthogonal(3), vec({3, 2, 1}), rng.orthogonal(3));
    CHECK(loss(T, T.Z, 0.25) == doctest::Approx(0.25));
    CHECK(loss(T, Mat::Zero(3, 3), 0.25) == doctest::Approx(14.25));
    CHECK(loss(T, T.Z1) == doctest::Approx(5.0));

    // coordinate form agrees with the matrix form
    CoordState st;
    st.s = 0.8;
    st.a = rng.unit_vec(3);
    st.b = rng.unit_vec(3);
    const double q = observables(T, st).q;
    CHECK(loss_from_coords(T, st.s, q) == doctest::Approx(loss(T, weight_from_coords(T, st))).epsilon(1e-12));
}

TEST_CASE("property: coords round-trip for random targets") {
    for (int trial = 0; trial < 50; ++trial) {
        Rng rng(mix_seed(99, trial));
        const int dy = 2 + trial % 3, dx = 2 + (trial / 3) % 3;
        const int d = std::min(dy, dx);
        Vec sv(d);
        for (int i = 0; i < d; ++i) sv(i) = d - i;
        const TargetSpec T = target_from_factors(rng.orthogonal(dy), sv, rng.orthogonal(dx));
        const Vec u = rng.unit_vec(dy), v = rng.unit_vec(dx);
        const double s = rng.uniform(0.1, 3.0);
        const CoordState c = coords_from_uv(T, s, u, v);
        CHECK((weight_from_coords(T, c) - s * u * v.transpose()).cwiseAbs().maxCoeff() < 1e-13);
        CHECK(std::abs(c.b.squaredNorm() - 1.0) < 1e-12);
        // q = u^T Z v
        CHECK(observables(T, c).q == doctest::Approx(u.dot(T.Z * v)).epsilon(1e-12));
    }
}
