#pragma once

#include "linflow/harness.hpp"

namespace linflow {

// Widths of the sweep network, input to output. Listed output to input
// they read (5, 4, 1, 10, 5, 3, 8).
inline const std::vector<int> kSweepWidths{8, 3, 5, 10, 1, 4, 5};
inline constexpr int kSweepDepth = 6;

// Target shared by both recipes: d_y = 5, d_x = 8, singular values 5..1 and
// seeded random orthogonal bases.
TargetSpec sweep_target(std::uint64_t seed);

// Longest contiguous run of samples with |q - level| / s_1 < rel, as a
// fraction of all samples.
double plateau_fraction(const Trajectory& traj, double level, double s1, double rel = 0.05);

struct KSweepOptions {
    std::uint64_t seed = 5;
    double lr = 5e-4;
    double horizon = 10.0;  // gradient descent runs for horizon / lr steps
    long record_every = 10;
    double flow_t_max = 1e4;
    double plateau_rel = 0.05;
    double plateau_min_fraction = 0.10;
    double flow_limit_tol = 1e-3;
};

struct KSweepRow {
    int k = 0;
    Prediction pred;
    std::string annotation;
    double level = 0.0;  // s_{k+1}, zero past the rank
    Trajectory flow;
    Trajectory gd;
    double flow_error = 0.0;
    bool flow_ok = false;
    double gd_plateau = 0.0;
    bool gd_ok = false;
};

struct KSweepResult {
    KSweepOptions opt;
    TargetSpec target;
    NetworkSpec net;
    std::vector<KSweepRow> rows;  // k = 0..d
    double seconds = 0.0;

    // flow limit and GD plateau for every k with a non-zero limit
    bool pass() const;
};

KSweepResult run_k_sweep(const KSweepOptions& opt);
// Per-k CSVs, summary.json and finally manifest.json. Returns the summary.
Json write_k_sweep(const KSweepResult& r, const std::string& out_dir);

struct ThreeStageOptions {
    std::uint64_t seed = 7;
    double s0 = 5.0;
    double lr = 5e-4;
    double horizon = 12.0;
    long record_every = 10;
    double c1_window = 0.05;  // a_1 b_1(0) drawn from (-c1_window, 0)
    double fit_hi = 1e-3;     // stage-3 fit uses 1 - a_1 b_1 within [fit_lo, fit_hi]
    double fit_lo = 1e-10;
    double fit_slack = 0.10;
};

struct StageFitResult {
    double t_origin = 0.0;
    double c5 = 0.0;
    RateFit fit;
    bool ok = false;
};

struct ThreeStageSide {
    Trajectory traj;
    StageReport stages;
    double t_s = 0.0;  // time of the smallest s
    bool split_ok = false;
    std::optional<StageFitResult> stage3;
    std::optional<RateFit> stage2_poly;  // log(1 - a_1 b_1) against log(t - t1)

    bool ok() const { return split_ok && stage3 && stage3->ok; }
};

struct ThreeStageResult {
    ThreeStageOptions opt;
    TargetSpec target;
    NetworkSpec net;
    CoordState init;
    ThreeStageSide flow;
    ThreeStageSide gd;
    double seconds = 0.0;

    bool pass() const { return flow.ok() && gd.ok(); }
};

ThreeStageResult run_three_stage(const ThreeStageOptions& opt);
Json write_three_stage(const ThreeStageResult& r, const std::string& out_dir);

}  // namespace linflow
