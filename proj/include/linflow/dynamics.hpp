#pragma once

#include "linflow/model.hpp"

#include <optional>

namespace linflow {

struct CoordDeriv {
    double ds = 0.0;
    Vec da;
    Vec db;
};

enum class Method { rk4_fixed, rk45_adaptive };

enum class StageStop { none, t1, t2 };

struct IntegratorConfig {
    Method method = Method::rk45_adaptive;
    double dt = 1e-3;  // rk4_fixed step, also the first rk45 trial step
    double rtol = 1e-8;
    double atol = 1e-10;
    double dt_min = 1e-14;
    double dt_max = 0.01;
    double t_max = 10.0;
    std::optional<double> s_below;
    std::optional<double> converged;  // sup norm of the right-hand side
    StageStop stage = StageStop::none;
    // when > 0, samples are taken exactly on multiples of sample_dt
    double sample_dt = 0.0;
    std::size_t max_samples = 20000;
    double s_zero_threshold = 1e-10;

    void validate() const;
};

struct GDConfig {
    double lr = 5e-4;
    long steps = 1000;
    long record_every = 1;
};

CoordDeriv rhs_coords(const TargetSpec& target, const CoordState& state, int N);

// rank_tol < 0 uses tol.rank; integrators pass +inf and rely on the
// best rank-one approximation of intermediate stage states
Mat induced_rhs(const TargetSpec& target, int N, const Mat& W, const Tolerances& tol = {},
                double rank_tol = -1.0);

std::vector<Mat> layer_gradients(const TargetSpec& target, const LayerStack& stack);

// Flips (u, v) together when that better matches the reference direction.
void align_sign(const Vec& u_ref, Vec& u, Vec& v);

Trajectory gd_run(const TargetSpec& target, const LayerStack& stack0, const GDConfig& cfg,
                  const Vec* u_ref = nullptr, const Tolerances& tol = {});

Trajectory integrate_coords(const TargetSpec& target, const CoordState& state0, int N,
                            const IntegratorConfig& cfg);

Trajectory integrate_induced(const TargetSpec& target, const Mat& W0, int N,
                             const IntegratorConfig& cfg, const Tolerances& tol = {});

// Rescales a and b to unit norm without disturbing exact a_i = -b_i pairs.
void renormalize_coords(Vec& a, Vec& b);

// Dormand-Prince 5(4) on a scalar ODE, used by the analytic oracles.
template <class F>
double integrate_scalar(F&& f, double y0, double t, double rtol = 1e-12, double atol = 1e-14);

}  // namespace linflow

#include "linflow/detail/scalar_ode.hpp"
