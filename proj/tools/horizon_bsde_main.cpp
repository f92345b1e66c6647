// horizon-bsde: config-driven experiment runner for random-horizon BSDE
// pipelines (simulate / solve / reduce-lift / verify / report).

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "horizon/experiment.hpp"

namespace {

std::string default_out_root() {
    if (const char* env = std::getenv("HORIZON_BSDE_OUT")) return env;
    return "horizon-out";
}

struct CommonArgs {
    std::string config;
    std::string out = default_out_root();
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    std::size_t refine = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config, "experiment configuration (JSON)")->required();
    cmd->add_option("--out", args.out, "output directory root");
    cmd->add_option("--seed", args.seed, "override the config seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_option("--threads", args.threads, "worker threads (0 = config value)");
    cmd->add_option("--refine", args.refine, "override the refinement level count");
}

horizon::ExperimentConfig load_with_overrides(const CommonArgs& args) {
    auto config = horizon::ExperimentConfig::load(args.config);
    if (args.seed_set) config.seed = args.seed;
    if (args.threads > 0) config.threads = args.threads;
    if (args.refine > 0) config.refinements = args.refine;
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"random-horizon BSDE experiment runner"};
    app.require_subcommand(1);

    CommonArgs run_args, sim_args, bsde_args, rbsde_args, lift_args, verify_args;
    std::vector<std::string> report_inputs;
    std::string report_out = default_out_root() + "/report";

    auto* cmd_run = app.add_subcommand("run", "full pipeline with refinements");
    add_common(cmd_run, run_args);
    auto* cmd_sim = app.add_subcommand("simulate", "build and persist the random-time model");
    add_common(cmd_sim, sim_args);
    auto* cmd_bsde = app.add_subcommand("solve-bsde", "solve the reduced equation");
    add_common(cmd_bsde, bsde_args);
    auto* cmd_rbsde = app.add_subcommand("solve-rbsde", "solve the reflected reduced equation");
    add_common(cmd_rbsde, rbsde_args);
    auto* cmd_lift = app.add_subcommand("reduce-lift", "lift a stored solution to the horizon");
    add_common(cmd_lift, lift_args);
    auto* cmd_verify = app.add_subcommand("verify", "run the configured checks");
    add_common(cmd_verify, verify_args);
    auto* cmd_report = app.add_subcommand("report", "collate stored runs into tables");
    cmd_report->add_option("runs", report_inputs, "run directories to collate")->required();
    cmd_report->add_option("--out", report_out, "collation output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_run->parsed()) {
            auto config = load_with_overrides(run_args);
            return horizon::run_experiment(config, run_args.out).exit_code;
        }
        auto one_stage = [&](const CommonArgs& args, horizon::StageSelection stages) {
            auto config = load_with_overrides(args);
            return horizon::run_stages(config, args.out, stages).exit_code;
        };
        horizon::StageSelection stages;
        if (cmd_sim->parsed()) {
            stages.simulate = true;
            return one_stage(sim_args, stages);
        }
        if (cmd_bsde->parsed()) {
            stages.solve_bsde = true;
            return one_stage(bsde_args, stages);
        }
        if (cmd_rbsde->parsed()) {
            stages.solve_rbsde = true;
            return one_stage(rbsde_args, stages);
        }
        if (cmd_lift->parsed()) {
            stages.reduce_lift = true;
            return one_stage(lift_args, stages);
        }
        if (cmd_verify->parsed()) {
            stages.reduce_lift = true;  // checks may need the lifted bundle
            stages.verify = true;
            return one_stage(verify_args, stages);
        }
        if (cmd_report->parsed()) return horizon::collate_report(report_inputs, report_out);
    } catch (const std::exception& e) {
        std::cerr << "horizon-bsde: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
