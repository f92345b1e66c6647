#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "horizon/g_tree.hpp"
#include "horizon/reduction.hpp"
#include "horizon/skorokhod.hpp"

namespace horizon {

struct CheckpointStat {
    std::size_t node = 0;
    double time = 0.0;
    double mean = 0.0;
    double se = 0.0;
    double max_abs = 0.0;
};

/// One verification outcome. `metric` is what the pass flag compares to the
/// tolerance: the per-atom max on exact backends, the largest |ensemble
/// mean| across checkpoints on Monte Carlo backends (the pathwise文
/// representation noise is reported through max_abs and the se column).
struct ResidualReport {
    std::string name;
    std::vector<CheckpointStat> checkpoints;
    double max_abs = 0.0;
    double max_mean_abs = 0.0;
    double metric = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    double slope = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> refinement_dt;
    std::vector<double> refinement_metric;
    std::size_t worst_path = 0;
    std::size_t worst_node = 0;
    std::string details;
};

/// Least-squares slope of log(metric) against log(dt).
double fit_loglog_slope(const std::vector<double>& dt, const std::vector<double>& metric);

/// Inputs of the equation-residual checks. Paths of y/z/u may live on an
/// enlarged (atom) ensemble; `scenario` maps them to the problem/model path
/// index (identity when null). Residuals are evaluated in the module-wide
/// discrete conventions: optional integrands at the at slot, predictable
/// integrands through the step z, driver jumps through the stored left
/// jumps.
struct GResidualInputs {
    const GBsdeSpec* spec = nullptr;
    const RandomTimeModel* model = nullptr;
    const PathEnsemble* y_hat = nullptr;
    const std::vector<PathEnsemble>* z_hat = nullptr;
    const PathEnsemble* u_hat = nullptr;
    const ReflectionBundle* l_hat = nullptr;  ///< reflected checks only
    const std::vector<std::size_t>* theta = nullptr;
    const std::vector<std::size_t>* scenario = nullptr;
    BracketMode bracket = BracketMode::pathwise;
    bool exact = false;
    double tolerance = 1e-10;
    std::string name = "residual-g";
};

ResidualReport residual_g_bsde(const GResidualInputs& in);
ResidualReport residual_g_rbsde(const GResidualInputs& in, const SkorokhodTolerances& sk_tol);

struct FResidualInputs {
    const GBsdeSpec* spec = nullptr;
    const RandomTimeModel* model = nullptr;
    const SolutionBundle* solution = nullptr;
    BracketMode bracket = BracketMode::pathwise;
    bool exact = false;
    double tolerance = 1e-10;
    std::string name = "residual-f";
};

ResidualReport residual_f_bsde(const FResidualInputs& in);
ResidualReport residual_f_rbsde(const FResidualInputs& in, const SkorokhodTolerances& sk_tol);

/// Node-wise identity suite: Gtilde >= G, Gtilde - G = dA^o,
/// Gtilde - G_- = dm, G = m - A^o, G = n - A^p, Gtilde_+ = G, monotone
/// compensators with hazard jumps in [0,1].
ResidualReport azema_identity_suite(const RandomTimeModel& model, double tolerance);

struct AppendixReport {
    ResidualReport inverse_azema;      ///< discrete residual of the G^{-1} identity
    ResidualReport synthetic_y;        ///< residual of the Y = G^{-1}(K - R.A^o + C) dynamics
    ResidualReport integration_parts;  ///< optional integration by parts on FV pairs
};

/// K and C are optional synthetic inputs for the second identity (defaults
/// are built from the model's martingale when absent).
AppendixReport appendix_identity_checks(const RandomTimeModel& model, double tolerance,
                                        const PathEnsemble* K_mart = nullptr,
                                        const PathEnsemble* C_laglad = nullptr,
                                        const PathEnsemble* R_proc = nullptr,
                                        std::uint64_t synth_seed = 2024);

struct MartingaleTestInputs {
    const PathEnsemble* values = nullptr;
    std::vector<std::size_t> checkpoints;  ///< empty = quartile nodes
    RegressionCE::Features features;       ///< mc mode basis state
    CEEstimatorPtr exact_ce;               ///< set for exact mode
    double threshold = 3.0;                ///< |z| bound (mc)
    double exact_tolerance = 1e-12;
    std::string name = "martingale";
};

/// mc mode: orthogonality z-scores of window increments against the basis
/// functions of the state at the window start; pass when max |z| <=
/// threshold. exact mode: cell-conditional means of one-step increments.
ResidualReport martingale_test(const MartingaleTestInputs& in);

/// Stops every path of an ensemble at its per-path node.
PathEnsemble stop_ensemble(const PathEnsemble& values, const std::vector<std::size_t>& stop_node);

}  // namespace horizon
