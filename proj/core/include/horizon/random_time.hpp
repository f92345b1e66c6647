#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "horizon/bsde_types.hpp"
#include "horizon/conditional_expectation.hpp"
#include "horizon/finite_filtration.hpp"
#include "horizon/laglad.hpp"

namespace horizon {

enum class RandomTimeBackend { cox, poisson_shock, finite_oracle };

/// F-level bundle of a random-time model: the Azema supermartingales, the
/// compensators, the hazard, the BMO martingale m and its integrands
/// against the driving martingale components.
///
/// Slot conventions: G is cadlag (pre = left limit), Gtilde is laglad with
/// post = G; Ao/Ap/Gamma are increasing with their jumps stored as left
/// jumps and continuous mass carried between nodes.
struct RandomTimeModel {
    RandomTimeBackend backend;
    TimeGridPtr grid;

    PathEnsemble G, Gtilde, m, Ao, Ap, n, Gamma;
    std::vector<PathEnsemble> nu;          ///< PRP integrand of m per martingale component
    std::vector<PathEnsemble> martingale;  ///< driving F-martingale components

    /// Predictable quadratic variation increment of component k over
    /// (t_{v-1}, t_v], per path; used for the deflation drift.
    std::function<double(std::size_t k, std::size_t path, std::size_t v)> bracket_increment;

    /// Regression features (F_t state variables) for LSMC estimators.
    RegressionCE::Features features;

    /// Per-path node of the driver jump time where one exists (poisson_shock's
    /// first Poisson jump), kNever otherwise.
    std::vector<std::size_t> jump_node;

    /// Draws one theta node per path (kNever = beyond horizon); absent on
    /// backends without a joint construction.
    std::function<std::vector<std::size_t>(std::uint64_t seed)> theta_sampler;

    std::shared_ptr<const FiniteFiltration> finite;  ///< finite-oracle backend only

    std::size_t n_paths() const { return G.n_paths(); }
};

/// Cox backend: G is the Doleans survival function of the supplied hazard,
/// exp(-Lambda^c) times prod(1 - dLambda); m = 1 and nu = 0. Hazard paths
/// must be increasing from 0 with left jumps <= 1 and their increments are
/// read predictably. Gamma reproduces the hazard exactly.
RandomTimeModel build_cox_model(const PathEnsemble& hazard, std::vector<PathEnsemble> driving,
                                RegressionCE::Features features);

struct PoissonShockParams {
    double lambda = 0.5;
    double b = 0.3;
    double sigma = 1.0;
    double p = 0.5;                 ///< conditional survival probability at T1
    double poisson_intensity = 1.0;
    std::size_t paths = 1000;
    std::uint64_t seed = 1;
    int threads = 1;
};

/// Brownian-Poisson model around the supermartingale J solving
/// dJ = -lambda J dt + (b/sigma) J (1-J) dW, J_0 = 1, simulated by
/// log-Euler on its multiplicative part. Gtilde = J - (1-p) J 1{T1 < t},
/// G = J - (1-p) J 1{T1 <= t}; m is Euler-integrated from its SDE and
/// Gamma_t = lambda t + (1-p) 1{T1 <= t}. No theta sampler: lift-side
/// operations take theta explicitly (sample_theta_by_hazard below thins on
/// dGamma when an explicit assignment is wanted).
RandomTimeModel build_poisson_shock_model(const PoissonShockParams& params, TimeGridPtr grid);

/// Exact bundle from a finite filtration, by enumeration.
RandomTimeModel build_finite_model(std::shared_ptr<const FiniteFiltration> finite);

enum class BracketMode {
    pathwise,    ///< [M,m] as the realized covariation (exact on trees)
    predictable  ///< integral of nu against the predictable bracket (MC backends)
};

/// M~ = M - Gtilde^{-1} . [M,m]; requires Gtilde > 0 on the window.
PathEnsemble deflate_martingale(const PathEnsemble& M, std::size_t component,
                                const RandomTimeModel& model, BracketMode mode);

struct EtaReport {
    std::vector<std::size_t> eta_node;        ///< first zero of G, kNever if none
    std::vector<std::size_t> tau_prime_node;  ///< tau ^ eta per path
    bool class_K = true;                      ///< Gtilde_eta > 0 wherever eta <= T
};

EtaReport detect_eta_and_truncate(const RandomTimeModel& model, std::size_t tau_node);

struct DefaultMartingales {
    PathEnsemble N_oG;
    PathEnsemble N_pG;
};

/// N^{o,G} = A - 1_{(0,theta]} . Gamma and
/// N^{p,G} = A - 1_{(0,theta]} G_-^{-1} . A^p, both stopped at theta.
DefaultMartingales build_default_martingales(const RandomTimeModel& model,
                                             const std::vector<std::size_t>& theta_node);

/// Thinning on dGamma increments: draws theta per path given the realized
/// hazard path. Exact for cox; for other backends it realizes a time with
/// the hazard's conditional law given F_infinity (pathwise identities hold;
/// the joint law is only faithful under immersion).
std::vector<std::size_t> sample_theta_by_hazard(const RandomTimeModel& model, std::uint64_t seed);

}  // namespace horizon
