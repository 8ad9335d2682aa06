#include "linflow/model.hpp"

#include <cmath>
#include <sstream>

namespace linflow {

const char* error_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::NonDecreasingSingularValues: return "NonDecreasingSingularValues";
        case ErrorCode::NotOrthogonal: return "NotOrthogonal";
        case ErrorCode::GapTooSmall: return "GapTooSmall";
        case ErrorCode::NotWhitened: return "NotWhitened";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NotRankOne: return "NotRankOne";
        case ErrorCode::NotUnit: return "NotUnit";
        case ErrorCode::NonPositiveS: return "NonPositiveS";
        case ErrorCode::StepSizeUnderflow: return "StepSizeUnderflow";
        case ErrorCode::DivergenceDetected: return "DivergenceDetected";
        case ErrorCode::KOutOfRange: return "KOutOfRange";
        case ErrorCode::WidthMismatch: return "WidthMismatch";
        case ErrorCode::AlphaOutOfRange: return "AlphaOutOfRange";
        case ErrorCode::AmbiguousIndicator: return "AmbiguousIndicator";
        case ErrorCode::DegenerateIndicator: return "DegenerateIndicator";
        case ErrorCode::NotApplicable: return "NotApplicable";
        case ErrorCode::WindowEmpty: return "WindowEmpty";
        case ErrorCode::NotAligned: return "NotAligned";
        case ErrorCode::NonPositiveObservable: return "NonPositiveObservable";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

const char* termination_name(Termination t) {
    switch (t) {
        case Termination::t_max: return "t_max";
        case Termination::s_below: return "s_below";
        case Termination::converged: return "converged";
        case Termination::stage_reached: return "stage_reached";
        case Termination::zero: return "converged_to_zero";
        case Termination::steps_done: return "steps_done";
    }
    return "unknown";
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * M_PI * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
}

Vec Rng::normal_vec(int n) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x(i) = normal();
    return x;
}

Vec Rng::unit_vec(int n) {
    Vec x = normal_vec(n);
    double nrm = x.norm();
    while (nrm < 1e-8) {
        x = normal_vec(n);
        nrm = x.norm();
    }
    return x / nrm;
}

Mat Rng::orthogonal(int n) {
    Mat G(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) G(i, j) = normal();
    Eigen::HouseholderQR<Mat> qr(G);
    Mat Q = qr.householderQ() * Mat::Identity(n, n);
    const Mat R = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j)
        if (R(j, j) < 0) Q.col(j) *= -1.0;
    return Q;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

void check_singular_values(const Vec& sv, const Tolerances& tol) {
    if (sv.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty singular value list");
    for (int i = 0; i < sv.size(); ++i) {
        if (!(sv(i) > 0.0))
            throw Error(ErrorCode::NonDecreasingSingularValues,
                        "singular values must be positive, sv[" + std::to_string(i) + "] = " +
                            std::to_string(sv(i)));
    }
    for (int i = 0; i + 1 < sv.size(); ++i) {
        if (sv(i) < sv(i + 1))
            throw Error(ErrorCode::NonDecreasingSingularValues,
                        "sv[" + std::to_string(i) + "] < sv[" + std::to_string(i + 1) + "]");
        const double gap = (sv(i) - sv(i + 1)) / sv(0);
        if (gap < tol.gap) {
            std::ostringstream os;
            os << "relative gap " << gap << " between sv[" << i << "] and sv[" << i + 1
               << "] below " << tol.gap;
            throw Error(ErrorCode::GapTooSmall, os.str());
        }
    }
}

void check_orthogonal(const Mat& Q, const char* name, const Tolerances& tol) {
    if (Q.rows() != Q.cols())
        throw Error(ErrorCode::ShapeMismatch, std::string(name) + " is not square");
    const double r = max_abs(Q.transpose() * Q - Mat::Identity(Q.rows(), Q.cols()));
    if (r > tol.orth) {
        std::ostringstream os;
        os << name << " orthogonality residual " << r;
        throw Error(ErrorCode::NotOrthogonal, os.str());
    }
}

}  // namespace

void NetworkSpec::validate(int d_x, int d_y) const {
    if (N < 2) throw Error(ErrorCode::WidthMismatch, "depth must be at least 2");
    if (static_cast<int>(widths.size()) != N + 1)
        throw Error(ErrorCode::WidthMismatch,
                    "expected " + std::to_string(N + 1) + " widths, got " +
                        std::to_string(widths.size()));
    if (widths.front() != d_x || widths.back() != d_y)
        throw Error(ErrorCode::WidthMismatch, "end widths must equal (d_x, d_y)");
    int mn = widths.front();
    for (int w : widths) {
        if (w < 1) throw Error(ErrorCode::WidthMismatch, "widths must be positive");
        mn = std::min(mn, w);
    }
    if (mn != 1) throw Error(ErrorCode::WidthMismatch, "some width must equal 1");
}

TargetSpec target_from_factors(const Mat& U, const Vec& sv, const Mat& V, const Tolerances& tol) {
    check_singular_values(sv, tol);
    check_orthogonal(U, "U", tol);
    check_orthogonal(V, "V", tol);
    const int d = static_cast<int>(sv.size());
    if (d > std::min(U.rows(), V.rows()))
        throw Error(ErrorCode::ShapeMismatch, "rank exceeds min(d_y, d_x)");

    TargetSpec t;
    t.d_y = static_cast<int>(U.rows());
    t.d_x = static_cast<int>(V.rows());
    t.d = d;
    t.sv = sv;
    t.U = U;
    t.V = V;
    t.Z = Mat::Zero(t.d_y, t.d_x);
    for (int j = 0; j < d; ++j) t.Z += sv(j) * U.col(j) * V.col(j).transpose();
    t.Z1 = sv(0) * U.col(0) * V.col(0).transpose();

    Mat S = Mat::Zero(t.d_y, t.d_x);
    for (int j = 0; j < d; ++j) S(j, j) = sv(j);
    const double rec = max_abs(t.Z - U * S * V.transpose());
    if (rec > tol.recon)
        throw Error(ErrorCode::NotOrthogonal, "reconstruction residual " + std::to_string(rec));
    return t;
}

TargetSpec target_from_data(const Mat& X, const Mat& Y, const Tolerances& tol) {
    if (X.cols() != Y.cols())
        throw Error(ErrorCode::ShapeMismatch, "X and Y must have the same number of samples");
    const double w = max_abs(X * X.transpose() - Mat::Identity(X.rows(), X.rows()));
    if (w > tol.whiten) {
        std::ostringstream os;
        os << "max |XX^T - I| = " << w;
        throw Error(ErrorCode::NotWhitened, os.str());
    }
    const Mat Z = Y * X.transpose();
    Eigen::JacobiSVD<Mat> svd(Z, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec all = svd.singularValues();
    if (all.size() == 0 || all(0) <= 0.0)
        throw Error(ErrorCode::GapTooSmall, "target matrix is zero");
    int d = 0;
    while (d < all.size() && all(d) > all(0) * 1e-12) ++d;
    return target_from_factors(svd.matrixU(), all.head(d), svd.matrixV(), tol);
}

Mat induced_weight(const LayerStack& stack) {
    if (stack.layers.empty()) throw Error(ErrorCode::ShapeMismatch, "empty stack");
    Mat W = stack.layers.front();
    for (std::size_t i = 1; i < stack.layers.size(); ++i) {
        const Mat& L = stack.layers[i];
        if (L.cols() != W.rows())
            throw Error(ErrorCode::ShapeMismatch,
                        "layer " + std::to_string(i + 1) + " has " + std::to_string(L.cols()) +
                            " columns, expected " + std::to_string(W.rows()));
        W = L * W;
    }
    return W;
}

double balancedness_residual(const LayerStack& stack) {
    double r = 0.0;
    for (std::size_t i = 0; i + 1 < stack.layers.size(); ++i) {
        const Mat& Wi = stack.layers[i];
        const Mat& Wn = stack.layers[i + 1];
        if (Wn.cols() != Wi.rows())
            throw Error(ErrorCode::ShapeMismatch, "layers " + std::to_string(i + 1) + " and " +
                                                      std::to_string(i + 2) + " do not chain");
        r = std::max(r, max_abs(Wi * Wi.transpose() - Wn.transpose() * Wn));
    }
    return r;
}

RankOne rank_one_svd(const Mat& W, const Tolerances& tol) {
    RankOne out;
    if (W.size() == 0 || max_abs(W) == 0.0) return out;
    Eigen::JacobiSVD<Mat> svd(W, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec sv = svd.singularValues();
    if (sv(0) <= tol.s_zero) return out;
    if (sv.size() > 1 && sv(1) > tol.rank * sv(0)) {
        std::ostringstream os;
        os << "second singular value " << sv(1) << " vs first " << sv(0);
        throw Error(ErrorCode::NotRankOne, os.str());
    }
    out.s = sv(0);
    out.u = svd.matrixU().col(0);
    out.v = svd.matrixV().col(0);
    Eigen::Index imax = 0;
    out.u.cwiseAbs().maxCoeff(&imax);
    if (out.u(imax) < 0) {
        out.u = -out.u;
        out.v = -out.v;
    }
    out.defined = true;
    return out;
}

CoordState coords_from_uv(const TargetSpec& target, double s, const Vec& u, const Vec& v,
                          const Tolerances& tol) {
    if (u.size() != target.d_y || v.size() != target.d_x)
        throw Error(ErrorCode::ShapeMismatch, "u/v dimensions do not match the target");
    if (std::abs(u.norm() - 1.0) > tol.unit || std::abs(v.norm() - 1.0) > tol.unit) {
        std::ostringstream os;
        os << "|u| = " << u.norm() << ", |v| = " << v.norm();
        throw Error(ErrorCode::NotUnit, os.str());
    }
    CoordState c;
    c.s = s;
    c.a = target.U.transpose() * u;
    c.b = target.V.transpose() * v;
    return c;
}

void uv_from_coords(const TargetSpec& target, const CoordState& state, Vec& u, Vec& v) {
    u = target.U * state.a;
    v = target.V * state.b;
}

Mat weight_from_coords(const TargetSpec& target, const CoordState& state) {
    Vec u, v;
    uv_from_coords(target, state, u, v);
    return state.s * u * v.transpose();
}

Observables observables(const TargetSpec& target, const Vec& a, const Vec& b) {
    double q = 0.0;
    for (int j = 0; j < target.d; ++j) q += target.sv(j) * a(j) * b(j);
    return {q, target.sv(0) * a(0) * b(0)};
}

Observables observables(const TargetSpec& target, const CoordState& state) {
    return observables(target, state.a, state.b);
}

double loss(const TargetSpec& target, const Mat& W, double const_term) {
    if (W.rows() != target.d_y || W.cols() != target.d_x)
        throw Error(ErrorCode::ShapeMismatch, "W must be d_y x d_x");
    return (W - target.Z).squaredNorm() + const_term;
}

double loss_from_coords(const TargetSpec& target, double s, double q, double const_term) {
    return s * s - 2.0 * s * q + target.sv.squaredNorm() + const_term;
}

Sample make_sample(const TargetSpec& target, const CoordState& state, double bal_residual) {
    Sample smp;
    smp.t = state.t;
    smp.s = state.s;
    smp.a = state.a;
    smp.b = state.b;
    const Observables o = observables(target, state);
    smp.q = o.q;
    smp.q1 = o.q1;
    smp.loss = loss_from_coords(target, state.s, o.q);
    smp.bal_residual = bal_residual;
    return smp;
}

}  // namespace linflow
