#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "horizon/bsde_engine.hpp"
#include "horizon/random_time.hpp"

namespace horizon {

/// Pre-default payoff X, recovery R and the terminal stopping node.
struct RewardSpec {
    PathEnsemble X;
    PathEnsemble R;
    std::vector<std::size_t> tau_node;
    double bound = std::numeric_limits<double>::infinity();
};

/// X(tau) = R^tau + (X_tau - R_tau) 1_{(tau, inf)}: the F-adapted process
/// whose value at any theta equals the reward X-hat at tau.
PathEnsemble reduce_reward(const RewardSpec& reward);

/// User-level generators in the sign of the defining equations (they enter
/// through -int F dD). The context's path index is always the F-scenario.
using FGenerator =
    std::function<double(const StepContext&, double y, std::span<const double> z, double u)>;
using FgGenerator = std::function<double(const StepContext&, double y)>;

/// Description of the equation up to the random horizon: generators, the
/// user driver (cadlag components with flagged jumps plus right-jump
/// components), reward data, declared constants and an optional barrier.
struct GBsdeSpec {
    std::vector<FGenerator> Fr;
    std::vector<FgGenerator> Fg;
    std::vector<PathEnsemble> Dr;
    std::vector<PathEnsemble> Dg;
    std::vector<std::vector<std::uint32_t>> dr_jump_nodes;  ///< per path, sorted
    std::vector<std::vector<std::uint32_t>> dg_jump_nodes;  ///< per path, sorted
    RewardSpec reward;
    std::vector<double> lip_fr;
    double lip_fr_u = 0.0;  ///< Lipschitz of Fr in its u argument
    double fr_bound = std::numeric_limits<double>::infinity();
    double lip_fg = 0.0;
    std::optional<PathEnsemble> barrier;
};

/// F^r with the recovery correction folded in:
/// F''(y,z,u) = F(y,z,u) + (F(R,z,u) - F(y,z,u)) G^{-1} dA^o; collapses to
/// F^r wherever A^o is continuous.
std::vector<FGenerator> effective_generator(const std::vector<FGenerator>& Fr,
                                            const RandomTimeModel& model, const PathEnsemble& R);

/// Reduced problem ready for the jump-adapted engine, either in the plain
/// coordinates (with the [M,m]-drift components) or in the bar
/// transformation that removes them.
struct ReducedSystem {
    GeneratorSpec gen;
    DriverSpec driver;
    MartingaleSpec mart;
    TerminalSpec terminal;
    std::optional<PathEnsemble> barrier;
    bool transformed = false;
    const RandomTimeModel* model = nullptr;
    GBsdeSpec spec;
};

ReducedSystem build_reduced_system(const GBsdeSpec& spec, const RandomTimeModel& model);
ReducedSystem build_transformed_system(const GBsdeSpec& spec, const RandomTimeModel& model);

/// Forward/backward maps of the bar transformation: Ybar = G Y,
/// Zbar_k = G_- Z_k + G^{-1} Ybar nu_k, and its inverse.
void transform_forward(const RandomTimeModel& model, PathEnsemble& y,
                       std::vector<PathEnsemble>& z);
void transform_inverse(const RandomTimeModel& model, PathEnsemble& y,
                       std::vector<PathEnsemble>& z);

/// Pointwise U from the recovery identity
/// U = R - Y - (F^r(R,z,u) - F^r(Y,z,u)) dD^r; fixed point in u when Fr
/// depends on it (requires 2 lip_fr_u |dD^r| < 1).
PathEnsemble compute_U(const PathEnsemble& Y, const std::vector<PathEnsemble>& Z,
                       const GBsdeSpec& spec, const RandomTimeModel& model);

/// Solves the reduced equation with the engine and returns the solution in
/// the plain coordinates together with U. Dispatches through step1/step2.
SolutionBundle solve_reduced_F_bsde(const ReducedSystem& system, const CEEstimatorPtr& ce,
                                    const SolverOptions& opts = {});

/// The lifted solution up to the random horizon.
struct LiftedSolution {
    PathEnsemble y_hat;
    std::vector<PathEnsemble> z_hat;
    PathEnsemble u_hat;
    ReflectionBundle l_hat;
    bool reflected = false;
    std::vector<std::size_t> theta_node;    ///< kNever = beyond horizon
    std::vector<std::size_t> horizon_node;  ///< tau ^ theta per path
};

/// Y-hat = Y_0 + 1_{(0,theta)} . Y^r + 1_{[0,theta)} * Y^g
///        + (R_theta - Y_{theta-}) 1_{[theta,inf)} 1{tau >= theta},
/// Z-hat = Z stopped at theta, U-hat = U, L-hat = L stopped at theta.
LiftedSolution lift_solution(const SolutionBundle& f_solution, const RandomTimeModel& model,
                             const std::vector<std::size_t>& theta_node, const RewardSpec& reward);

}  // namespace horizon
