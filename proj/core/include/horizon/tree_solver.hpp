#pragma once

#include "horizon/bsde_types.hpp"
#include "horizon/finite_filtration.hpp"

namespace horizon {

/// Brute-force oracle on a finite filtration: backward recursion over
/// partition cells with exact conditional expectations; scalar implicit
/// equations are solved by bisection to `tol`, links with conditioning
/// inside by fixed-point iteration to `tol`.
///
/// Driver and martingale ensembles carry one path per scenario. The
/// discrete system is the same one solve_jump_bsde targets, so on any
/// instance the two must agree to combined tolerance.
SolutionBundle solve_tree_exact(const FiniteFiltration& finite, const GeneratorSpec& gen,
                                const DriverSpec& driver, const MartingaleSpec& mart,
                                const TerminalSpec& terminal, const PathEnsemble* barrier = nullptr,
                                double tol = 1e-13);

}  // namespace horizon
