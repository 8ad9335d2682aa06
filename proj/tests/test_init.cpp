#include "linflow/init.hpp"
#include "linflow/theory.hpp"

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

TargetSpec random_target(std::uint64_t seed, int dy, int dx, const Vec& sv) {
    Rng rng(seed);
    return target_from_factors(rng.orthogonal(dy), sv, rng.orthogonal(dx));
}

Mat pair(const TargetSpec& T, int i, double s) { return s * T.U.col(i - 1) * T.V.col(i - 1).transpose(); }

}  // namespace

TEST_CASE("k = 0 directions give a global-minimum prediction") {
    const TargetSpec T = random_target(1, 4, 5, vec({3, 2, 1}));
    const Directions d = k_cancel_directions(T, {0, std::nullopt, 17, 1.0});
    const CoordState st = k_cancel_state(d, 1.0);
    CHECK(std::abs(st.a(0) + st.b(0)) >= kIndicatorMargin);
    const Prediction p = predict_limit(T, st);
    CHECK(p.kind == LimitKind::global_min);
    CHECK(p.limit_s == 3.0);
}

TEST_CASE("k = 2 of 5 cancels exactly") {
    const TargetSpec T = random_target(2, 5, 8, vec({5, 4, 3, 2, 1}));
    const Directions d = k_cancel_directions(T, {2, std::nullopt, 7, 1.0});
    const CoordState st = k_cancel_state(d, 1.0);
    CHECK(st.a(0) + st.b(0) == 0.0);
    CHECK(st.a(1) + st.b(1) == 0.0);
    CHECK(std::abs(st.a(2) + st.b(2)) >= 0.05);
    // the stored vectors carry the same coordinates up to round-off
    const CoordState re = coords_from_uv(T, 1.0, d.u0, d.v0);
    CHECK(std::abs(re.a(0) + re.b(0)) < 1e-14);
    CHECK((re.a - st.a).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("k = d cancels every indicator") {
    for (auto [dy, dx] : {std::pair{3, 3}, std::pair{3, 5}, std::pair{5, 3}}) {
        const TargetSpec T = random_target(3, dy, dx, vec({3, 2, 1}));
        const CoordState st = k_cancel_state(k_cancel_directions(T, {3, std::nullopt, 5, 1.0}), 1.0);
        for (int i = 0; i < 3; ++i) CHECK(st.a(i) + st.b(i) == 0.0);
        CHECK(predict_limit(T, st).kind == LimitKind::zero);
        CHECK(std::abs(st.a.norm() - 1.0) < 1e-14);
        CHECK(std::abs(st.b.norm() - 1.0) < 1e-14);
    }
}

TEST_CASE("k out of range and bad rho") {
    const TargetSpec T = random_target(4, 3, 3, vec({3, 2, 1}));
    try {
        k_cancel_directions(T, {4, std::nullopt, 1, 1.0});
        FAIL("expected KOutOfRange");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::KOutOfRange);
    }
    CHECK_THROWS_AS(k_cancel_directions(T, {1, 1.5, 1, 1.0}), Error);
}

TEST_CASE("property: k-cancel construction across shapes") {
    for (int trial = 0; trial < 60; ++trial) {
        const int dy = 2 + trial % 4, dx = 2 + (trial / 4) % 4, d = std::min(dy, dx);
        Vec sv(d);
        for (int i = 0; i < d; ++i) sv(i) = 1.0 + d - i;
        const TargetSpec T = random_target(mix_seed(40, trial), dy, dx, sv);
        for (int k = 0; k <= d; ++k) {
            const CoordState st = k_cancel_state(k_cancel_directions(T, {k, std::nullopt, mix_seed(41, trial), 1.0}), 1.0);
            for (int i = 0; i < k; ++i) CHECK(st.a(i) + st.b(i) == 0.0);
            if (k < d) CHECK(std::abs(st.a(k) + st.b(k)) >= kIndicatorMargin);
            const Prediction p = predict_limit(T, st);
            CHECK(p.k == k);
            CHECK(p.limit_s == T.s(k + 1));
        }
    }
}

TEST_CASE("balanced stack realises s0 u0 v0^T") {
    const TargetSpec T = random_target(5, 5, 8, vec({5, 4, 3, 2, 1}));
    NetworkSpec net{6, {8, 3, 5, 10, 1, 4, 5}};
    Rng rng(6);
    const Vec u0 = rng.unit_vec(5), v0 = rng.unit_vec(8);

    const LayerStack one = balanced_stack(net, u0, v0, 1.0, 9);
    CHECK((induced_weight(one) - u0 * v0.transpose()).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(balancedness_residual(one) <= 1e-12);

    const LayerStack five = balanced_stack(net, u0, v0, 5.0, 9);
    CHECK(rank_one_svd(induced_weight(five)).s == doctest::Approx(5.0).epsilon(1e-10));
    CHECK(balancedness_residual(five) <= 1e-12);

    NetworkSpec bad{2, {8, 2, 5}};
    CHECK_THROWS_AS(balanced_stack(bad, u0, v0, 1.0, 1), Error);
}

TEST_CASE("rank-stable set") {
    const TargetSpec T = random_target(7, 3, 3, vec({3, 2, 1}));
    CHECK(in_rank_stable_set(T, pair(T, 2, 2.0), 1.0));
    for (double b : {1e-3, 0.5, 2.0}) CHECK_FALSE(in_rank_stable_set(T, pair(T, 1, -1.0), b));
    CHECK(in_rank_stable_set(T, pair(T, 1, 6.0), 1.5));
}

TEST_CASE("global-minimum set") {
    const TargetSpec T = random_target(8, 3, 3, vec({3, 2, 1}));
    for (double b : {1e-3, 0.5, 2.0}) CHECK_FALSE(in_global_min_set(T, pair(T, 2, 2.0), b));
    CHECK(in_global_min_set(T, pair(T, 1, 3.0), 1.5));

    // k = 0 start with a_1 b_1 > 0
    for (std::uint64_t seed = 0;; ++seed) {
        const CoordState st = k_cancel_state(k_cancel_directions(T, {0, std::nullopt, seed, 1.0}), 1.0);
        if (st.a(0) * st.b(0) <= 0.0) continue;
        const double b = std::min(1.0, 3.0 * st.a(0) * st.b(0)) / 2.0;
        CHECK(in_global_min_set(T, weight_from_coords(T, st), b));
        break;
    }
}

TEST_CASE("restricted set of the earlier analysis") {
    const TargetSpec T = random_target(9, 3, 3, vec({3, 2, 1}));
    for (double alpha : {0.7, 0.9, 1.0}) CHECK_FALSE(in_eftekhari_set(T, pair(T, 2, 2.0), alpha));
    CHECK(in_eftekhari_set(T, pair(T, 1, 3.0), 2.0 / 3.0 + 1e-3));
    CHECK_THROWS_AS(in_eftekhari_set(T, pair(T, 1, 3.0), 0.5), Error);
}
