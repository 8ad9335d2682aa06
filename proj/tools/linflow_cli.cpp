#include "linflow/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    using namespace linflow;
    CLI::App app{"Gradient flow and descent on deep linear networks with a width-one layer"};
    app.require_subcommand(1);

    std::string config, out_dir, format, manifest, traj, figure;
    std::vector<std::string> overrides, checks;
    std::uint64_t seed = 0;

    auto* sim = app.add_subcommand("simulate", "run an experiment and write trajectories");
    sim->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", out_dir, "output directory (overrides output.dir)");
    sim->add_option("--seed", seed, "root seed (overrides config seed)");
    sim->add_option("--override", overrides, "dotted KEY=VALUE, repeatable");
    sim->add_option("--format", format, "trajectory format")->check(CLI::IsMember({"csv", "json"}));

    auto* pred = app.add_subcommand("predict", "print the predicted limit as JSON");
    pred->add_option("--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
    pred->add_option("--seed", seed, "root seed");
    pred->add_option("--override", overrides, "dotted KEY=VALUE, repeatable");

    auto* ver = app.add_subcommand("verify", "check a trajectory CSV against invariants and bounds");
    ver->add_option("trajectory", traj, "trajectory CSV")->required();
    ver->add_option("--manifest", manifest, "manifest.json of the run")->required();
    ver->add_option("--checks", checks, "checks to run (default all)")->delimiter(',');
    ver->add_option("--out", out_dir, "directory for report.json");

    auto* rep = app.add_subcommand("reproduce", "regenerate the k-sweep or three-stage experiment");
    rep->add_option("figure", figure, "k_sweep or three_stage")
        ->required()
        ->check(CLI::IsMember({"k_sweep", "three_stage"}));
    rep->add_option("--out", out_dir, "output directory")->required();
    rep->add_option("--seed", seed, "root seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    auto opt_seed = [&](CLI::App* sub) {
        return sub->count("--seed") ? std::optional<std::uint64_t>(seed) : std::nullopt;
    };
    auto opt_out = [&](CLI::App* sub) {
        return sub->count("--out") ? std::optional<std::string>(out_dir) : std::nullopt;
    };

    if (*sim) {
        if (!format.empty()) overrides.push_back("output.formats=[\"" + format + "\"]");
        return cli_simulate(config, overrides, opt_seed(sim), opt_out(sim), std::cout, std::cerr);
    }
    if (*pred) return cli_predict(config, overrides, opt_seed(pred), std::cout, std::cerr);
    if (*ver) return cli_verify(traj, manifest, checks, opt_out(ver), std::cout, std::cerr);
    return cli_reproduce(figure, out_dir, opt_seed(rep), std::cout, std::cerr);
}
