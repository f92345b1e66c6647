#include "horizon/laglad.hpp"

#include <cmath>
#include <stdexcept>

namespace horizon {

namespace {

void require_same_grid(const LagladPath& a, const LagladPath& b) {
    if (!a.grid().same_as(b.grid()))
        throw std::invalid_argument("laglad: paths live on different grids");
}

}  // namespace

LagladPath::LagladPath(TimeGridPtr grid, double initial)
    : grid_(std::move(grid)),
      pre_(grid_->size(), initial),
      at_(grid_->size(), initial),
      post_(grid_->size(), initial) {}

LagladPath::LagladPath(TimeGridPtr grid, std::vector<double> at_values)
    : grid_(std::move(grid)), at_(std::move(at_values)) {
    if (at_.size() != grid_->size())
        throw std::invalid_argument("LagladPath: value count does not match grid");
    pre_ = at_;
    post_ = at_;
}

void LagladPath::set(std::size_t u, double pre, double at, double post) {
    pre_[u] = pre;
    at_[u] = at;
    post_[u] = post;
}

bool LagladPath::is_increasing(double tol) const {
    for (std::size_t u = 0; u < at_.size(); ++u) {
        if (pre_[u] > at_[u] + tol || at_[u] > post_[u] + tol) return false;
        if (u > 0 && at_[u] + tol < at_[u - 1]) return false;
    }
    return true;
}

LagladPath LagladPath::cadlag_of_right_part() const {
    LagladPath out(grid_);
    double acc = 0.0;
    for (std::size_t u = 0; u < size(); ++u) {
        out.pre_[u] = acc;
        acc += right_jump(u);
        out.at_[u] = acc;
        out.post_[u] = acc;
    }
    return out;
}

LagladPath LagladPath::constant(TimeGridPtr grid, double value) {
    return LagladPath(std::move(grid), value);
}

LagladPath LagladPath::from_function(TimeGridPtr grid, const std::function<double(double)>& f) {
    std::vector<double> v(grid->size());
    for (std::size_t u = 0; u < grid->size(); ++u) v[u] = f(grid->time(u));
    return LagladPath(std::move(grid), std::move(v));
}

LagladPath LagladPath::indicator_from(TimeGridPtr grid, std::size_t theta_node) {
    LagladPath p(grid, 0.0);
    for (std::size_t u = 0; u < p.size(); ++u) {
        const double at = u >= theta_node ? 1.0 : 0.0;
        const double pre = u > theta_node ? 1.0 : 0.0;
        p.set(u, pre, at, at);
    }
    return p;
}

LagladPath LagladDecomposition::cadlag_part() const {
    LagladPath out = continuous;
    for (std::size_t u = 0; u < out.size(); ++u) {
        out.pre(u) += cadlag_jumps.pre(u);
        out.at(u) += cadlag_jumps.at(u);
        out.post(u) += cadlag_jumps.post(u);
    }
    return out;
}

LagladDecomposition decompose_laglad(const LagladPath& path) {
    const std::size_t n = path.size();
    LagladDecomposition d{LagladPath(path.grid_ptr()), LagladPath(path.grid_ptr()),
                          LagladPath(path.grid_ptr())};
    double acc_d = 0.0, acc_g = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
        // C^d collects left jumps up to and including u.
        const double lj = path.left_jump(u);
        d.cadlag_jumps.set(u, acc_d, acc_d + lj, acc_d + lj);
        acc_d += lj;
        // C^g collects right jumps strictly before t; caglad, so pre = at.
        const double rj = path.right_jump(u);
        d.caglad_jumps.set(u, acc_g, acc_g, acc_g + rj);
        acc_g += rj;
    }
    // Continuous remainder: whatever the two jump parts do not explain.
    double c = path.pre(0);
    for (std::size_t u = 0; u < n; ++u) {
        if (u > 0) c += path.pre(u) - path.post(u - 1);
        d.continuous.set_flat(u, c);
    }
    return d;
}

double integral_dot(const LagladPath& integrand, const LagladPath& integrator,
                    std::size_t from, std::size_t to, IntegrandKind kind) {
    require_same_grid(integrand, integrator);
    if (from > to || to >= integrator.size())
        throw std::invalid_argument("integral_dot: bad window");
    double s = 0.0;
    for (std::size_t u = from + 1; u <= to; ++u)
        s += integrand.value(u, kind) * integrator.at_increment(u);
    return s;
}

double integral_star(const LagladPath& integrand, const LagladPath& integrator_g,
                     std::size_t from, std::size_t to) {
    require_same_grid(integrand, integrator_g);
    if (from > to || to >= integrator_g.size())
        throw std::invalid_argument("integral_star: bad window");
    double s = 0.0;
    for (std::size_t u = from; u < to; ++u)
        s += integrand.at(u) * integrator_g.right_jump(u);
    return s;
}

LagladPath integral_dot_path(const LagladPath& integrand, const LagladPath& integrator,
                             IntegrandKind kind) {
    require_same_grid(integrand, integrator);
    LagladPath out(integrand.grid_ptr());
    double acc = 0.0;
    out.set_flat(0, 0.0);
    for (std::size_t u = 1; u < integrand.size(); ++u) {
        const double inc = integrand.value(u, kind) * integrator.at_increment(u);
        out.set(u, acc, acc + inc, acc + inc);
        acc += inc;
    }
    return out;
}

LagladPath quadratic_covariation(const LagladPath& x, const LagladPath& y) {
    require_same_grid(x, y);
    LagladPath out(x.grid_ptr());
    const std::size_t n = x.size();
    double acc = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
        double left = 0.0;
        if (u > 0) left = x.at_increment(u) * y.at_increment(u);
        const double pre = acc;
        acc += left;
        const double right = x.right_jump(u) * y.right_jump(u);
        out.set(u, pre, acc, acc + right);
        acc += right;
    }
    return out;
}

PathEnsemble::PathEnsemble(TimeGridPtr grid, std::size_t n_paths, double initial)
    : grid_(std::move(grid)) {
    paths_.reserve(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) paths_.emplace_back(grid_, initial);
}

void PathEnsemble::push_back(LagladPath p) {
    if (!grid_) grid_ = p.grid_ptr();
    if (!p.grid().same_as(*grid_))
        throw std::invalid_argument("PathEnsemble: path grid mismatch");
    paths_.push_back(std::move(p));
}

void PathEnsemble::set_weights(std::vector<double> w) {
    if (w.size() != paths_.size())
        throw std::invalid_argument("PathEnsemble: weight count mismatch");
    weights_ = std::move(w);
}

double PathEnsemble::weight(std::size_t p) const {
    if (weights_.empty()) return 1.0 / static_cast<double>(paths_.size());
    return weights_[p];
}

double PathEnsemble::mean_at(std::size_t node) const {
    double m = 0.0, wsum = 0.0;
    for (std::size_t p = 0; p < paths_.size(); ++p) {
        m += weight(p) * paths_[p].at(node);
        wsum += weight(p);
    }
    return m / wsum;
}

double PathEnsemble::se_at(std::size_t node) const {
    if (paths_.size() < 2) return 0.0;
    const double m = mean_at(node);
    double v = 0.0, wsum = 0.0;
    for (std::size_t p = 0; p < paths_.size(); ++p) {
        const double d = paths_[p].at(node) - m;
        v += weight(p) * d * d;
        wsum += weight(p);
    }
    v /= wsum;
    return std::sqrt(v / static_cast<double>(paths_.size()));
}

}  // namespace horizon
