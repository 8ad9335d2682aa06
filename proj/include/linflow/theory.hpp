#pragma once

#include "linflow/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace linflow {

enum class LimitKind { global_min, saddle, zero };

const char* limit_kind_name(LimitKind k);

struct Prediction {
    LimitKind kind = LimitKind::zero;
    double limit_s = 0.0;
    std::optional<int> limit_index;  // 1-based
    int k = 0;                       // number of leading cancelled indicators
};

Prediction predict_limit(const TargetSpec& target, const CoordState& state0,
                         const Tolerances& tol = {});

struct InvariantResult {
    std::string name;
    double max_violation = 0.0;
    std::optional<double> first_violation_time;
    bool applicable = true;
};

struct InvariantReport {
    std::vector<InvariantResult> items;
    double worst() const;
    bool ok() const;
};

// mono_tol: per-step slack before a sample counts as a violation
InvariantReport monitor_invariants(const TargetSpec& target, const Trajectory& traj,
                                   double mono_tol = 1e-7, const Tolerances& tol = {});

struct StageReport {
    std::optional<double> t1;
    std::optional<double> t2;
    double a1b1_max_drop = 0.0;
    double s_max_wrong_way = 0.0;  // worst monotone-split violation
    bool a1b1_monotone_ok = true;
    bool s_monotone_split_ok = true;
    std::optional<double> t2_crossing_rate;  // d(q - s)/dt at the first sample past t2
};

StageReport detect_stages(const TargetSpec& target, const Trajectory& traj, int N,
                          double tol = 1e-8);

struct BoundParams {
    int N = 2;
    double t_origin = 0.0;
    double s0_init = 0.0;  // s(0)
    double s_max = 0.0;    // max(s_1, s(0))
    double s1 = 0.0, s2 = 0.0;
    double a1_0 = 0.0, b1_0 = 0.0;
    double c1_0 = 0.0;  // a_1(0) b_1(0)
    double q_0 = 0.0;
    double c1 = 0.0, c2 = 0.0, c3 = 0.0, c4 = 0.0, c5 = 0.0, c6 = 0.0;
    double A = 0.0, B = 0.0;
    std::optional<double> C1, A1, B1, A2, T1, T2;
};

BoundParams bound_params(const TargetSpec& target, const CoordState& state0, int N);

struct Envelope {
    double lower;
    double upper;
};

Envelope s_envelope(const BoundParams& p, double t);
double stage1_lower(const BoundParams& p, double t);
// the constant past which stage1_lower is at least stage1_omega_constant
double stage1_omega_time(const BoundParams& p);
double stage1_omega_constant(const BoundParams& p);
double stage2_lower(const BoundParams& p, double t);

enum class Stage3Variant { stage3, stage2_5, n2_stage23, n2_stage3, n2_t2_inf };

const char* stage3_variant_name(Stage3Variant v);

struct Stage3Bounds {
    double c1_lower;
    double s_lower;
    double s_upper;
};

Stage3Bounds stage3_bounds(const BoundParams& p, double t, Stage3Variant variant);
double zero_limit_upper(double s0_init, int N, double t);

enum class BoundSelector {
    s_envelope,
    stage1_lower,
    stage2_lower,
    stage3,
    stage2_5,
    n2_stage23,
    n2_stage3,
    n2_t2_inf,
    zero_limit_upper,
    t1_upper,
};

const char* selector_name(BoundSelector s);
std::optional<BoundSelector> selector_from_name(const std::string& name);
std::vector<BoundSelector> all_selectors();

struct BoundViolation {
    double t;
    double observed;
    double bound;
};

enum class BoundStatus { checked, not_applicable, window_empty };

struct BoundReport {
    std::string name;
    BoundStatus status = BoundStatus::checked;
    std::string note;
    double window_start = 0.0;
    double window_end = 0.0;
    double worst_margin = 0.0;  // most negative observed slack before tolerance
    std::size_t n_checked = 0;
    std::size_t n_violations = 0;
    std::vector<BoundViolation> violations;  // first few only

    bool ok() const { return n_violations == 0; }
};

struct BoundOptions {
    double abs_slack = 1e-6;
    double rel_slack = 1e-6;
};

// Checks samples with t >= p.t_origin; the bound is evaluated at t - t_origin.
BoundReport verify_bounds(const Trajectory& traj, const BoundParams& p, BoundSelector which,
                          const BoundOptions& opt = {});

enum class AnalyticKind { aligned, antialigned, antisym_psd };

double analytic_s(AnalyticKind kind, const TargetSpec& target, int index, double s0_init, int N,
                  double t);

enum class StationaryKind { aligned, null_space, not_stationary };

struct Stationarity {
    StationaryKind kind = StationaryKind::not_stationary;
    int index = 0;  // 1-based when aligned
    int sign_u = 0;
    int sign_v = 0;
    double residual = 0.0;
};

Stationarity stationary_check(const TargetSpec& target, const Vec& u, const Vec& v, double tol);

enum class Observable { one_minus_c1, s1_minus_s };

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;
};

RateFit fit_line(const std::vector<double>& x, const std::vector<double>& y);
RateFit rate_fit(const Trajectory& traj, double t_begin, double t_end, Observable obs, double s1,
                 bool log_time = false, double t_shift = 0.0);

double dq_minus_ds_sign(const TargetSpec& target, const CoordState& state, int N);

}  // namespace linflow
