#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "horizon/time_grid.hpp"

namespace horizon {

/// Measurability tag of an integrand: predictable integrands enter a
/// Stieltjes sum through their left value, optional ones through the
/// value at the node.
enum class IntegrandKind { predictable, optional_ };

/// A process with left and right limits stored per grid node.
///
/// Each node u carries the triple (pre, at, post):
///   pre[u]  = v_{t_u-}, at[u] = v_{t_u}, post[u] = v_{t_u+}.
/// Left jumps are at - pre, right jumps are post - at; the increment
/// between nodes, at[u] - post[u-1], is read as the continuous move.
class LagladPath {
public:
    LagladPath() = default;
    explicit LagladPath(TimeGridPtr grid, double initial = 0.0);
    LagladPath(TimeGridPtr grid, std::vector<double> at_values);

    const TimeGrid& grid() const { return *grid_; }
    const TimeGridPtr& grid_ptr() const { return grid_; }
    std::size_t size() const { return at_.size(); }

    double pre(std::size_t u) const { return pre_[u]; }
    double at(std::size_t u) const { return at_[u]; }
    double post(std::size_t u) const { return post_[u]; }

    double& pre(std::size_t u) { return pre_[u]; }
    double& at(std::size_t u) { return at_[u]; }
    double& post(std::size_t u) { return post_[u]; }

    std::span<const double> at_values() const { return at_; }

    /// at[u] - pre[u].
    double left_jump(std::size_t u) const { return at_[u] - pre_[u]; }
    /// post[u] - at[u].
    double right_jump(std::size_t u) const { return post_[u] - at_[u]; }
    /// at[u] - at[u-1]; full increment used by the dot integral.
    double at_increment(std::size_t u) const { return at_[u] - at_[u - 1]; }

    /// Sets all three slots at node u.
    void set_flat(std::size_t u, double v) { pre_[u] = at_[u] = post_[u] = v; }
    void set(std::size_t u, double pre, double at, double post);

    /// Value by measurability convention: pre for predictable, at for optional.
    double value(std::size_t u, IntegrandKind kind) const {
        return kind == IntegrandKind::predictable ? pre_[u] : at_[u];
    }

    /// True when pre <= at <= post at every node and at is non-decreasing.
    bool is_increasing(double tol = 0.0) const;

    /// Caglad view helper: the cadlag version of a right-jump part,
    /// (C^g_+)_u = post[u] for a pure right-jump path.
    LagladPath cadlag_of_right_part() const;

    static LagladPath constant(TimeGridPtr grid, double value);
    static LagladPath from_function(TimeGridPtr grid, const std::function<double(double)>& f);
    /// Unit indicator 1_{[theta,inf)} for a grid node theta (cadlag staircase).
    static LagladPath indicator_from(TimeGridPtr grid, std::size_t theta_node);

private:
    TimeGridPtr grid_;
    std::vector<double> pre_, at_, post_;
};

/// Pathwise three-part decomposition C = C^c + C^d + C^g.
struct LagladDecomposition {
    LagladPath continuous;  ///< C^c
    LagladPath cadlag_jumps;  ///< C^d, sum of left jumps up to and including t
    LagladPath caglad_jumps;  ///< C^g, sum of right jumps strictly before t
    /// C^r = C^c + C^d (the cadlag part).
    LagladPath cadlag_part() const;
};

LagladDecomposition decompose_laglad(const LagladPath& path);

/// Ito-convention integral (X . Y)_{from,to} = sum over u in (from, to] of
/// X(u) dY(u), with dY(u) = Y.at(u) - Y.at(u-1) and X read per `kind`.
double integral_dot(const LagladPath& integrand, const LagladPath& integrator,
                    std::size_t from, std::size_t to,
                    IntegrandKind kind = IntegrandKind::predictable);

/// Left-window integral (X * Y)_{from,to} = sum over u in [from, to) of
/// X.at(u) * (Y.post(u) - Y.at(u)); the integrator is the right-jump part
/// read through its right jumps, so node `from` (including 0) contributes.
double integral_star(const LagladPath& integrand, const LagladPath& integrator_g,
                     std::size_t from, std::size_t to);

/// Running dot integral as a cadlag path (value at node u integrates (0,u]).
LagladPath integral_dot_path(const LagladPath& integrand, const LagladPath& integrator,
                             IntegrandKind kind = IntegrandKind::predictable);

/// Discrete quadratic covariation
/// [X,Y]_u = sum_{0<v<=u} dX_v dY_v + sum_{0<=v<u} d+X_v d+Y_v,
/// where dX_v is the full at-increment (so a sampled Brownian path
/// accumulates its realized variation) and d+ the right jumps.
LagladPath quadratic_covariation(const LagladPath& x, const LagladPath& y);

/// A bundle of paths over one grid with per-path weights (tree scenarios)
/// or uniform Monte Carlo weights.
class PathEnsemble {
public:
    PathEnsemble() = default;
    PathEnsemble(TimeGridPtr grid, std::size_t n_paths, double initial = 0.0);

    const TimeGrid& grid() const { return *grid_; }
    const TimeGridPtr& grid_ptr() const { return grid_; }
    std::size_t n_paths() const { return paths_.size(); }

    LagladPath& path(std::size_t p) { return paths_[p]; }
    const LagladPath& path(std::size_t p) const { return paths_[p]; }

    void push_back(LagladPath p);

    bool has_weights() const { return !weights_.empty(); }
    void set_weights(std::vector<double> w);
    /// Uniform 1/n when no explicit weights were set.
    double weight(std::size_t p) const;

    /// Weighted mean of at-values at a node.
    double mean_at(std::size_t node) const;
    /// Weighted standard error of the mean at a node (0 for one path).
    double se_at(std::size_t node) const;

private:
    TimeGridPtr grid_;
    std::vector<LagladPath> paths_;
    std::vector<double> weights_;
};

}  // namespace horizon
