#pragma once

#include "linflow/model.hpp"

#include <optional>

namespace linflow {

struct KCancelSpec {
    int k = 0;
    std::optional<double> rho;  // default sqrt(k/d)
    std::uint64_t seed = 0;
    double s0 = 1.0;
};

struct Directions {
    Vec u0;
    Vec v0;
    Vec alpha1;  // coordinates of u0 in the U basis, exact by construction
    Vec alpha2;  // coordinates of v0 in the V basis
};

inline constexpr double kIndicatorMargin = 0.05;

Directions k_cancel_directions(const TargetSpec& target, const KCancelSpec& spec);

// Initial reduced state straight from the block coordinates, so a_i + b_i = 0
// holds exactly rather than up to the round-off of U^T U alpha.
CoordState k_cancel_state(const Directions& dirs, double s0);

LayerStack balanced_stack(const NetworkSpec& net, const Vec& u0, const Vec& v0, double s0,
                          std::uint64_t seed, const Tolerances& tol = {});

bool in_rank_stable_set(const TargetSpec& target, const Mat& W, double b,
                        const Tolerances& tol = {});
bool in_global_min_set(const TargetSpec& target, const Mat& W, double b,
                       const Tolerances& tol = {});
bool in_eftekhari_set(const TargetSpec& target, const Mat& W, double alpha,
                      const Tolerances& tol = {});

}  // namespace linflow
