#pragma once

#include "horizon/reduction.hpp"

namespace horizon {

/// Exact solutions on finite-oracle models, computed per partition cell in
/// the at-slot (explicit) discrete reading of the defining equations. These
/// require one-step completeness of the base tree for the driving
/// martingale components.
///
/// solve_g_tree_exact solves the equation up to the random horizon directly
/// on the enlarged space: per alive cell and step it solves the square
/// linear system pinning (Y-hat, Z-hat per component, U-hat per defaulting
/// child); reflected problems project onto the obstacle and record the lift
/// on the step. The reduced triple (optional projection of Y-hat, the
/// F-predictable Z-hat, U-hat) is returned alongside.
struct GTreeSolution {
    // per enlarged atom
    PathEnsemble y_hat;
    std::vector<PathEnsemble> z_hat;
    PathEnsemble u_hat;
    ReflectionBundle l_hat;
    std::vector<std::size_t> theta_node;
    std::vector<std::size_t> horizon_node;
    // reduced F-side objects, per scenario
    SolutionBundle f_reduced;
};

GTreeSolution solve_g_tree_exact(const GBsdeSpec& spec, const RandomTimeModel& model,
                                 const EnlargedSpace& enlarged);

/// The F-side exact solution of the reduced equation in the same at-slot
/// reading: per cell, (Y, Z) solve the square system over the one-step
/// transitions with U fed pointwise by its displayed formula.
SolutionBundle solve_f_tree_pathwise(const GBsdeSpec& spec, const RandomTimeModel& model);

}  // namespace horizon
