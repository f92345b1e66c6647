#pragma once

#include "horizon/bsde_types.hpp"
#include "horizon/conditional_expectation.hpp"

namespace horizon {

/// One backward pass solving the discrete laglad BSDE/RBSDE.
///
/// Per step (t_u, t_{u+1}], per path, with xi_{u+1} the adjusted target at
/// the right node:
///   1. implicit Euler: x = CE[xi|F_u] + sum_j f_j(t_u, x, x, z_{u+1}, u) C_j(u+1)
///      where C_j is the cadlag component mass pre_j(v) - at_j(v-1) at
///      h-flagged v and the full at-increment elsewhere;
///        z_k(u+1) = CE[xi dM_k | F_u] / CE[dM_k^2 | F_u];
///      reflected: x is the unreflected candidate, then y = max(barrier, x)
///      and the lift is recorded on this step.
///   2. right-jump link at u: at = post - sum_l f_g_l(t_u, at, post) d+D_l(u)
///      (reflected: at = barrier v (...)), fixed point when f_g depends on at.
///   3. left-jump link at u when h-flagged: xi_u = at - h(t_u, L, at) with
///      L = CE[xi_u | F_{u-1}] (reflected: L = barrier_pre v CE[xi_u|F_{u-1}]);
///      the reported left limit pre(u) is L.
///
/// Fixed points iterate to opts.fp_tol (max opts.fp_max_iter) after a
/// contraction precheck against the declared Lipschitz constants; failures
/// throw std::runtime_error with the offending path and node.
SolutionBundle solve_jump_bsde(const GeneratorSpec& gen, const DriverSpec& driver,
                               const MartingaleSpec& mart, const TerminalSpec& terminal,
                               const CEEstimatorPtr& ce, const SolverOptions& opts = {},
                               const PathEnsemble* barrier = nullptr);

/// Continuous-driver solver: no jump flags allowed.
SolutionBundle solve_continuous_driver(const GeneratorSpec& gen, const DriverSpec& driver,
                                       const MartingaleSpec& mart, const TerminalSpec& terminal,
                                       const CEEstimatorPtr& ce, const SolverOptions& opts = {});

/// Cadlag BSDE with lump jumps h at flagged predictable times.
SolutionBundle step2_cadlag_solve(const GeneratorSpec& gen, const DriverSpec& driver,
                                  const MartingaleSpec& mart, const TerminalSpec& terminal,
                                  const CEEstimatorPtr& ce, const SolverOptions& opts = {});

/// Laglad driver: right-jump links plus everything step2 does.
SolutionBundle step1_laglad_solve(const GeneratorSpec& gen, const DriverSpec& driver,
                                  const MartingaleSpec& mart, const TerminalSpec& terminal,
                                  const CEEstimatorPtr& ce, const SolverOptions& opts = {});

/// Reflected counterparts.
SolutionBundle solve_reflected_continuous(const GeneratorSpec& gen, const DriverSpec& driver,
                                          const MartingaleSpec& mart, const TerminalSpec& terminal,
                                          const PathEnsemble& barrier, const CEEstimatorPtr& ce,
                                          const SolverOptions& opts = {});
SolutionBundle rstep2_cadlag_solve(const GeneratorSpec& gen, const DriverSpec& driver,
                                   const MartingaleSpec& mart, const TerminalSpec& terminal,
                                   const PathEnsemble& barrier, const CEEstimatorPtr& ce,
                                   const SolverOptions& opts = {});
SolutionBundle rstep1_laglad_solve(const GeneratorSpec& gen, const DriverSpec& driver,
                                   const MartingaleSpec& mart, const TerminalSpec& terminal,
                                   const PathEnsemble& barrier, const CEEstimatorPtr& ce,
                                   const SolverOptions& opts = {});

/// Affine-generator closed form for f(y) = a*y + b against dt:
/// y_t = e^{a(T-t)} CE[xi|F_t] + (b/a)(e^{a(T-t)} - 1), with the b(T-t)
/// limit at a = 0. CE is evaluated with the supplied estimator.
PathEnsemble solve_linear_closed_form(double a, double b_const, const TerminalSpec& terminal,
                                      const PathEnsemble& model_paths, const CEEstimatorPtr& ce);

}  // namespace horizon
