#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace linflow {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

enum class ErrorCode {
    NonDecreasingSingularValues,
    NotOrthogonal,
    GapTooSmall,
    NotWhitened,
    ShapeMismatch,
    NotRankOne,
    NotUnit,
    NonPositiveS,
    StepSizeUnderflow,
    DivergenceDetected,
    KOutOfRange,
    WidthMismatch,
    AlphaOutOfRange,
    AmbiguousIndicator,
    DegenerateIndicator,
    NotApplicable,
    WindowEmpty,
    NotAligned,
    NonPositiveObservable,
    ConfigError,
    IoError,
    InvalidArgument,
};

const char* error_name(ErrorCode c);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

struct Tolerances {
    double orth = 1e-10;
    double recon = 1e-10;
    double unit = 1e-9;
    double gap = 1e-6;
    double bal = 1e-6;
    double rank = 1e-8;
    double s_zero = 1e-12;
    double whiten = 1e-10;
    double indicator = 1e-12;
};

// mt19937_64 is bit-specified by the standard; the distributions are not,
// so uniforms take the top 53 bits and normals use Box-Muller.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t next_u64() { return eng_(); }
    double normal();
    Vec normal_vec(int n);
    Vec unit_vec(int n);
    Mat orthogonal(int n);

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// splitmix64 finalizer, used to derive child seeds
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace linflow
