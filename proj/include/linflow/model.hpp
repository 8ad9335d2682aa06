#pragma once

#include "linflow/common.hpp"

#include <optional>
#include <vector>

namespace linflow {

struct TargetSpec {
    int d_y = 0;
    int d_x = 0;
    int d = 0;
    Vec sv;
    Mat U;
    Mat V;
    Mat Z;
    Mat Z1;

    // 1-based singular value, zero past the rank
    double s(int i) const { return (i >= 1 && i <= d) ? sv(i - 1) : 0.0; }
};

struct NetworkSpec {
    int N = 2;
    std::vector<int> widths;  // d_0 = d_x ... d_N = d_y

    void validate(int d_x, int d_y) const;
};

struct LayerStack {
    std::vector<Mat> layers;  // layers[i-1] is W_i, shape d_i x d_{i-1}

    int depth() const { return static_cast<int>(layers.size()); }
};

struct CoordState {
    double s = 0.0;
    Vec a;
    Vec b;
    double t = 0.0;
};

struct Sample {
    double t = 0.0;
    double s = 0.0;
    double q = 0.0;
    double q1 = 0.0;
    double loss = 0.0;
    double bal_residual = 0.0;
    Vec a;
    Vec b;
};

enum class Termination { t_max, s_below, converged, stage_reached, zero, steps_done };

const char* termination_name(Termination t);

struct Trajectory {
    int d_y = 0;
    int d_x = 0;
    std::vector<Sample> samples;
    Termination termination = Termination::t_max;

    bool empty() const { return samples.empty(); }
    const Sample& front() const { return samples.front(); }
    const Sample& back() const { return samples.back(); }
    std::size_t size() const { return samples.size(); }
};

struct Observables {
    double q;
    double q1;
};

struct RankOne {
    double s = 0.0;
    Vec u;
    Vec v;
    bool defined = false;
};

TargetSpec target_from_factors(const Mat& U, const Vec& sv, const Mat& V,
                               const Tolerances& tol = {});
TargetSpec target_from_data(const Mat& X, const Mat& Y, const Tolerances& tol = {});

Mat induced_weight(const LayerStack& stack);
double balancedness_residual(const LayerStack& stack);

RankOne rank_one_svd(const Mat& W, const Tolerances& tol = {});

CoordState coords_from_uv(const TargetSpec& target, double s, const Vec& u, const Vec& v,
                          const Tolerances& tol = {});
// u = U a, v = V b
void uv_from_coords(const TargetSpec& target, const CoordState& state, Vec& u, Vec& v);
Mat weight_from_coords(const TargetSpec& target, const CoordState& state);

Observables observables(const TargetSpec& target, const CoordState& state);
Observables observables(const TargetSpec& target, const Vec& a, const Vec& b);

double loss(const TargetSpec& target, const Mat& W, double const_term = 0.0);
// same value from coordinates: s^2 - 2 s q + sum s_j^2
double loss_from_coords(const TargetSpec& target, double s, double q, double const_term = 0.0);

Sample make_sample(const TargetSpec& target, const CoordState& state, double bal_residual = 0.0);

}  // namespace linflow
