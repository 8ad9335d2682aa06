#pragma once

#include "linflow/dynamics.hpp"
#include "linflow/init.hpp"
#include "linflow/theory.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace linflow {

using Json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

// Exit codes shared by every subcommand.
inline constexpr int kExitPass = 0;
inline constexpr int kExitViolation = 1;
inline constexpr int kExitAmbiguous = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitRuntime = 4;

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

// Level from LINFLOW_LOG, warn when unset or unrecognised.
LogLevel log_level();
void log(LogLevel level, const std::string& msg);

enum class InitKind { k_cancel, explicit_uv, stack_file };
enum class RunMode { flow, gd, both };
enum class FlowRepr { coords, induced };

struct ExperimentConfig {
    Json canonical;  // validated config with every default filled in
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::uint64_t>> seed_trail;

    TargetSpec target;
    NetworkSpec network;

    InitKind init_kind = InitKind::k_cancel;
    KCancelSpec k_cancel;
    Vec u0, v0;
    double s0 = 1.0;
    std::string stack_file;
    std::uint64_t stack_seed = 0;

    RunMode mode = RunMode::flow;
    FlowRepr flow_repr = FlowRepr::coords;
    IntegratorConfig flow;
    GDConfig gd;

    std::vector<std::string> checks;
    std::string out_dir = ".";
    std::vector<std::string> formats{"csv"};
};

Json load_json_file(const std::string& path);
// KEY is a dotted path; VALUE is parsed as JSON, falling back to a plain string.
void apply_override(Json& cfg, const std::string& key_value);
ExperimentConfig parse_config(const Json& raw, std::optional<std::uint64_t> seed_override = {});
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> seed_override = {});
// FNV-1a over the canonical dump, output section excluded.
std::string config_hash(const Json& canonical);

struct InitialCondition {
    CoordState state;
    LayerStack stack;
    Vec u_ref;
};

InitialCondition build_initial(const ExperimentConfig& cfg);

void write_csv(const Trajectory& traj, std::ostream& os);
void emit_csv(const Trajectory& traj, const std::string& path);
Trajectory parse_csv(std::istream& is);
Trajectory read_csv(const std::string& path);

Json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const Json& j);
Json target_to_json(const TargetSpec& target);
TargetSpec target_from_json(const Json& j);
Json prediction_to_json(const Prediction& p);
Json vec_to_json(const Vec& v);
Vec vec_from_json(const Json& j);
Json mat_to_json(const Mat& m);
Mat mat_from_json(const Json& j);
Json stack_to_json(const LayerStack& stack);
LayerStack stack_from_json(const Json& j);

// "invariants", "stages", any bound selector name, or "all".
std::vector<std::string> expand_checks(const std::vector<std::string>& names);

// Bound check with the origin moved to the first sample where the bound's
// hypotheses hold (after t1 for stage-2 style bounds, after t1 and t2 for stage 3).
BoundReport check_bound(const TargetSpec& target, const Trajectory& traj, int N, BoundSelector which,
                        const BoundOptions& opt = {});

struct CheckOutcome {
    std::optional<InvariantReport> invariants;
    std::optional<StageReport> stages;
    std::vector<BoundReport> bounds;

    bool pass() const;
};

CheckOutcome run_checks(const TargetSpec& target, const Trajectory& traj, int N,
                        const std::vector<std::string>& checks);
Json check_outcome_to_json(const CheckOutcome& c);

struct Comparison {
    double sup_s = 0.0;
    double sup_a = 0.0;
    double sup_b = 0.0;
    std::size_t matched = 0;

    double sup() const { return std::max(sup_s, std::max(sup_a, sup_b)); }
};

// Matches samples by time and allows a joint (u, v) sign flip per sample.
Comparison compare_trajectories(const Trajectory& x, const Trajectory& y, double t_tol = 1e-9);
Json comparison_to_json(const Comparison& c);

struct SimulationResult {
    std::optional<Trajectory> flow;
    std::optional<Trajectory> gd;
    std::optional<Comparison> comparison;
    CheckOutcome checks;
    Json report;
    Json manifest;
};

// Runs the configured experiment without touching the filesystem.
SimulationResult simulate(const ExperimentConfig& cfg);

int cli_simulate(const std::string& config_path, const std::vector<std::string>& overrides,
                 std::optional<std::uint64_t> seed, std::optional<std::string> out_dir,
                 std::ostream& out, std::ostream& err);
int cli_predict(const std::string& config_path, const std::vector<std::string>& overrides,
                std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err);
int cli_verify(const std::string& traj_path, const std::string& manifest_path,
               const std::vector<std::string>& checks, std::optional<std::string> out_dir,
               std::ostream& out, std::ostream& err);
int cli_reproduce(const std::string& figure, const std::string& out_dir,
                  std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err);

}  // namespace linflow
