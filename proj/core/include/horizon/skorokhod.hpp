#pragma once

#include <cstddef>
#include <string>

#include "horizon/bsde_types.hpp"

namespace horizon {

/// Complementarity and dominance audit of a reflected solution.
///
/// The two Skorokhod sums pair each reflection increment with the solution-
/// minus-barrier gap at its contact slot: interior increments recorded on a
/// step contact at the at slot of the step's left node (the discrete left
/// limit of the interval the mass sits in), predictable-jump lifts at the
/// pre slot of their node, right-jump lifts at the at slot.
struct SkorokhodReport {
    double complementarity_r = 0.0;   ///< max over paths of |sum (y - X) dl^r|
    double complementarity_g = 0.0;   ///< max over paths of |sum (y - X) d+l^g|
    double max_barrier_violation = 0.0;
    double max_monotonicity_violation = 0.0;
    bool pass = false;
    double tol_complementarity = 0.0;
    double tol_barrier = 0.0;
    std::size_t worst_path = 0;
    std::size_t worst_node = 0;
    std::string note;
};

struct SkorokhodTolerances {
    double complementarity;
    double barrier;
    static SkorokhodTolerances oracle(double scale = 1.0) {
        return {1e-8 * scale, 1e-9 * scale};
    }
    static SkorokhodTolerances monte_carlo(double dt, double scale = 1.0) {
        return {10.0 * dt * scale, 10.0 * dt * scale};
    }
};

SkorokhodReport skorokhod_audit(const PathEnsemble& y, const ReflectionBundle& refl,
                                const SkorokhodTolerances& tol);

/// Per-path terminal cutoffs: increments and gaps past a path's terminal
/// node are ignored.
SkorokhodReport skorokhod_audit(const PathEnsemble& y, const ReflectionBundle& refl,
                                const SkorokhodTolerances& tol,
                                const std::vector<std::size_t>& terminal_node);

}  // namespace horizon
