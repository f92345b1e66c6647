#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "horizon/laglad.hpp"

namespace horizon {

constexpr std::size_t kNever = std::numeric_limits<std::size_t>::max();

struct StepContext {
    std::size_t path;
    std::size_t node;
    double time;
};

/// Generator against one cadlag driver component, in the backward-step
/// convention: y_u = CE[xi_{u+1}|F_u] + sum_j f_j(t_u, y_u, y_u, z_{u+1}, u) * dD_j(u+1).
/// A BSDE written as y_t = xi - int F dD - int z dM therefore passes f = -F.
using RGenerator =
    std::function<double(const StepContext&, double y_minus, double y, std::span<const double> z, double u)>;

/// Right-jump generator: post - at = f_g(t, at, post) * d+D^g at each
/// right-jump node (same sign as the equation's -int_{[t,.)} F^g dD^g_+,
/// i.e. f_g = +F^g).
using GGenerator = std::function<double(const StepContext&, double y, double y_plus)>;

/// Lump left-jump map at flagged nodes: at - pre = h(t, pre, at) + z dM + eps.
using JumpMap = std::function<double(const StepContext&, double y_minus, double y)>;

/// Optional pointwise feed for the generator's u argument.
using UMap = std::function<double(const StepContext&, double y, std::span<const double> z)>;

/// Generator bundle with declared regularity constants. The constants are
/// inputs, not measurements: the solver prechecks contraction with them and
/// refuses steps where `lip * increment >= 1`.
struct GeneratorSpec {
    std::vector<RGenerator> f_r;
    std::vector<GGenerator> f_g;
    JumpMap h;
    UMap u_map;

    std::vector<double> lip_fr;   ///< Lipschitz in y per f_r component (u-coupling included)
    double lip_fg = 0.0;          ///< Lipschitz of f_g in its first argument; 0 = independent
    double lip_h_yminus = 0.0;    ///< Lipschitz of h in y_minus; 0 = independent
    double bound = std::numeric_limits<double>::infinity();

    bool has_h() const { return static_cast<bool>(h); }
};

/// Driver data. Cadlag components enter backward steps through the mass
/// pre(v) - at(v-1); their left jumps at h-flagged nodes belong to the jump
/// map h. At unflagged nodes the full at-increment is stepped. Right-jump
/// components act only at g-flagged nodes through their right jumps.
struct DriverSpec {
    std::vector<PathEnsemble> d_r;
    std::vector<PathEnsemble> d_g;
    std::vector<std::vector<std::uint32_t>> h_nodes;  ///< per path, sorted
    std::vector<std::vector<std::uint32_t>> g_nodes;  ///< per path, sorted
    bool h_nodes_predictable = true;  ///< grid-deterministic times are announced

    bool path_has_h(std::size_t p, std::size_t node) const;
    bool path_has_g(std::size_t p, std::size_t node) const;
};

struct MartingaleSpec {
    std::vector<PathEnsemble> components;
    std::size_t dim() const { return components.size(); }
};

/// Terminal data xi at a per-path terminal node (tau as a stopping node).
struct TerminalSpec {
    std::vector<std::size_t> node;
    std::vector<double> value;
    static TerminalSpec common(std::size_t node, std::vector<double> values);
};

/// Reflection output. Interior increments are recorded on the step they
/// belong to: the projection applied while stepping into node v is stored as
/// the at-increment of l_r_interior at node v+1 (its contact is the at slot
/// of node v). Predictable-jump lifts at flagged nodes are left jumps of
/// l_r_jump at the node (contact at the pre slot); obstacle lifts at
/// right-jump links are right jumps of l_g (contact at the at slot).
struct ReflectionBundle {
    PathEnsemble l_r_interior;
    PathEnsemble l_r_jump;
    PathEnsemble l_g;
    PathEnsemble barrier;
    bool empty() const { return l_r_interior.n_paths() == 0; }
    /// Combined cadlag l^r = interior + jump parts.
    LagladPath l_r(std::size_t path) const;
};

struct SolverDiagnostics {
    double max_link_residual = 0.0;       ///< g-link and h-link equation residuals
    double max_step_residual = 0.0;       ///< implicit Euler fixed-point residuals
    int max_fp_iterations = 0;
    std::size_t steps = 0;
    std::string note;
};

/// (Y, Z, U[, L]) with per-path paths. z[k].path(p).at(v) is the integrand of
/// martingale component k over the step (t_{v-1}, t_v]; it is F_{t_{v-1}}
/// measurable. u holds the optional integrand when the problem carries one.
struct SolutionBundle {
    PathEnsemble y;
    std::vector<PathEnsemble> z;
    PathEnsemble u;
    ReflectionBundle l;
    SolverDiagnostics diagnostics;
};

struct SolverOptions {
    double fp_tol = 1e-10;
    int fp_max_iter = 50;
    int threads = 1;
};

}  // namespace horizon
