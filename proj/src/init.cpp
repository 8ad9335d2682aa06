#include "linflow/init.hpp"

#include <cmath>
#include <sstream>

namespace linflow {

namespace {

Vec scaled_unit(Rng& rng, int n, double norm) {
    if (n == 0 || norm == 0.0) return Vec::Zero(n);
    return norm * rng.unit_vec(n);
}

}  // namespace

Directions k_cancel_directions(const TargetSpec& target, const KCancelSpec& spec) {
    const int d = target.d, k = spec.k;
    if (k < 0 || k > d)
        throw Error(ErrorCode::KOutOfRange,
                    "k = " + std::to_string(k) + " outside [0, " + std::to_string(d) + "]");
    double rho = 0.0;
    if (k > 0) {
        rho = spec.rho.value_or(std::sqrt(static_cast<double>(k) / d));
        if (!(rho > 0.0 && rho <= 1.0))
            throw Error(ErrorCode::InvalidArgument, "rho must lie in (0, 1]");
    }
    const int ty = target.d_y - k, tx = target.d_x - k;
    // with no room for a tail on one side both tails must vanish
    if (k > 0 && (ty == 0 || tx == 0)) rho = 1.0;
    const double tail = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    if (k < d && tail == 0.0)
        throw Error(ErrorCode::InvalidArgument, "rho = 1 leaves no tail for index k+1");

    Rng rng(spec.seed);
    const Vec head = scaled_unit(rng, k, rho);
    Directions out;
    out.alpha1 = Vec::Zero(target.d_y);
    out.alpha2 = Vec::Zero(target.d_x);
    out.alpha1.head(k) = head;
    out.alpha2.head(k) = -head;
    for (int attempt = 0;; ++attempt) {
        out.alpha1.tail(ty) = scaled_unit(rng, ty, tail);
        out.alpha2.tail(tx) = scaled_unit(rng, tx, tail);
        if (k == d) break;
        if (std::abs(out.alpha1(k) + out.alpha2(k)) >= kIndicatorMargin) break;
        if (attempt > 10000)
            throw Error(ErrorCode::InvalidArgument, "could not meet the indicator margin");
    }
    out.u0 = target.U * out.alpha1;
    out.v0 = target.V * out.alpha2;
    return out;
}

CoordState k_cancel_state(const Directions& dirs, double s0) {
    CoordState c;
    c.s = s0;
    c.a = dirs.alpha1;
    c.b = dirs.alpha2;
    return c;
}

LayerStack balanced_stack(const NetworkSpec& net, const Vec& u0, const Vec& v0, double s0,
                          std::uint64_t seed, const Tolerances& tol) {
    const int N = net.N;
    net.validate(static_cast<int>(v0.size()), static_cast<int>(u0.size()));
    if (std::abs(u0.norm() - 1.0) > tol.unit || std::abs(v0.norm() - 1.0) > tol.unit)
        throw Error(ErrorCode::NotUnit, "u0 and v0 must be unit vectors");
    if (!(s0 > 0.0)) throw Error(ErrorCode::InvalidArgument, "s0 must be positive");

    Rng rng(seed);
    // h[i] for i = 1..N+1, h_i in R^{d_{i-1}}
    std::vector<Vec> h(N + 2);
    h[1] = v0;
    h[N + 1] = u0;
    for (int i = 2; i <= N; ++i) h[i] = rng.unit_vec(net.widths[i - 1]);
    const double c = std::pow(s0, 1.0 / N);
    LayerStack st;
    st.layers.reserve(N);
    for (int i = 1; i <= N; ++i) st.layers.push_back(c * h[i + 1] * h[i].transpose());
    return st;
}

namespace {

struct Probe {
    double s, q, q1;
};

Probe probe(const TargetSpec& target, const Mat& W, const Tolerances& tol) {
    const RankOne r = rank_one_svd(W, tol);
    if (!r.defined) return {0.0, 0.0, 0.0};
    return {r.s, r.u.dot(target.Z * r.v), r.u.dot(target.Z1 * r.v)};
}

}  // namespace

bool in_rank_stable_set(const TargetSpec& target, const Mat& W, double b, const Tolerances& tol) {
    const Probe p = probe(target, W, tol);
    return p.s > b && p.q > b;
}

bool in_global_min_set(const TargetSpec& target, const Mat& W, double b, const Tolerances& tol) {
    const Probe p = probe(target, W, tol);
    return p.s > b && p.q1 > b;
}

bool in_eftekhari_set(const TargetSpec& target, const Mat& W, double alpha,
                      const Tolerances& tol) {
    const double s1 = target.s(1), s2 = target.s(2);
    if (!(alpha > s2 / s1 && alpha <= 1.0)) {
        std::ostringstream os;
        os << "alpha = " << alpha << " outside (" << s2 / s1 << ", 1]";
        throw Error(ErrorCode::AlphaOutOfRange, os.str());
    }
    const Probe p = probe(target, W, tol);
    return p.s > alpha * s1 - s2 && p.q1 > alpha * s1;
}

}  // namespace linflow
