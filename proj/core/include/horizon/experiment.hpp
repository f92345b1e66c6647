#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "horizon/random_time.hpp"
#include "horizon/reduction.hpp"
#include "horizon/verify.hpp"

namespace horizon {

/// Named scalar-field recipe for rewards, barriers and generators.
struct RecipeConfig {
    std::string type = "const";  // const | linear | tanh | zero
    double value = 0.0;          // const level / tanh scale
    double a = 0.0;              // linear slope or tanh gain
    double b = 0.0;              // linear intercept
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    double horizon = 1.0;
    std::size_t steps = 100;
    std::size_t refinements = 1;
    std::size_t paths = 1000;
    int threads = 1;

    std::string backend = "cox";  // cox | poisson_shock | finite-oracle
    double cox_rate = 0.5;
    double cox_jump_time = -1.0;  // <0: no lump
    double cox_jump_size = 0.0;
    PoissonShockParams shock;
    std::string tree_file;

    RecipeConfig fr;       ///< generator against the user driver
    RecipeConfig fg;       ///< right-jump generator
    RecipeConfig reward_x;
    RecipeConfig reward_r;
    std::optional<RecipeConfig> barrier;

    int basis_degree = 2;
    double fp_tol = 1e-10;
    int fp_max_iter = 50;

    std::vector<std::string> checks;
    std::size_t mc_paths = 100000;
    double tolerance_scale = 1.0;

    std::string raw_json;  ///< canonical round-trip of the parsed file

    static ExperimentConfig load(const std::string& path);
    static ExperimentConfig parse(const std::string& text);
    std::uint64_t config_hash() const;
};

struct StageSelection {
    bool simulate = false;
    bool solve_bsde = false;
    bool solve_rbsde = false;
    bool reduce_lift = false;
    bool verify = false;
    static StageSelection all_bsde();
    static StageSelection all_rbsde();
};

struct RunResult {
    int exit_code = 0;
    std::vector<ResidualReport> reports;
    std::string out_dir;
};

/// Executes the selected stages for one grid level, reading and writing
/// artifacts under `out_dir`. Deterministic given (config, seed): artifacts
/// are byte-identical across reruns.
RunResult run_stages(const ExperimentConfig& config, const std::string& out_dir,
                     const StageSelection& stages);

/// Runs the configured pipeline across `refinements` grid halvings
/// (level-0 the coarsest), writes per-level artifacts plus a top-level
/// slopes summary, and returns the worst exit code.
RunResult run_experiment(const ExperimentConfig& config, const std::string& out_dir);

/// Collates previously written run directories into comparison tables:
/// comparison.csv (one row per check and level with the slope column) and
/// plotdata.csv (t, mean, se per level).
int collate_report(const std::vector<std::string>& run_dirs, const std::string& out_path);

// ---- artifact I/O ------------------------------------------------------

struct ArtifactMap {
    std::map<std::string, PathEnsemble> ensembles;
    std::map<std::string, std::vector<std::size_t>> indices;
    std::map<std::string, std::vector<double>> scalars;
};

void write_artifact(const std::string& path, const ArtifactMap& data);
ArtifactMap read_artifact(const std::string& path);

// ---- report I/O (report_io.cpp) ----------------------------------------

std::string report_to_json(const std::vector<ResidualReport>& reports,
                           const ExperimentConfig& config);
std::string report_table(const std::vector<ResidualReport>& reports);
std::vector<ResidualReport> reports_from_json(const std::string& text);

/// RFC-4180 rows: CRLF line ends, quoting only where needed.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

}  // namespace horizon
