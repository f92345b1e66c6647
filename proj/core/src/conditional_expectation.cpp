#include "horizon/conditional_expectation.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <unordered_map>

namespace horizon {

RegressionCE::RegressionCE(std::size_t n_paths, Features features, int degree)
    : n_paths_(n_paths), features_(std::move(features)), degree_(degree) {
    if (degree_ < 0 || degree_ > 3) throw std::invalid_argument("RegressionCE: degree in [0,3]");
}

std::vector<double> RegressionCE::basis(std::span<const double> f) const {
    std::vector<double> b;
    b.push_back(1.0);
    if (degree_ >= 1)
        for (double x : f) b.push_back(x);
    if (degree_ >= 2)
        for (std::size_t i = 0; i < f.size(); ++i)
            for (std::size_t j = i; j < f.size(); ++j) b.push_back(f[i] * f[j]);
    if (degree_ >= 3)
        for (std::size_t i = 0; i < f.size(); ++i) b.push_back(f[i] * f[i] * f[i]);
    return b;
}

RegressionCE::Fit RegressionCE::fit_coefficients(std::size_t node, std::span<const double> values,
                                                 std::span<const unsigned char> mask) const {
    Fit f;
    std::vector<std::size_t> idx;
    idx.reserve(n_paths_);
    for (std::size_t p = 0; p < n_paths_; ++p)
        if (mask.empty() || mask[p]) idx.push_back(p);
    if (idx.empty()) return f;
    const std::size_t nb = basis(features_(idx[0], node)).size();
    if (idx.size() <= nb) {
        double m = 0.0;
        for (std::size_t p : idx) m += values[p];
        f.mean_only = true;
        f.mean = m / static_cast<double>(idx.size());
        return f;
    }
    Eigen::MatrixXd X(idx.size(), nb);
    Eigen::VectorXd y(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto b = basis(features_(idx[r], node));
        for (std::size_t c = 0; c < nb; ++c) X(r, c) = b[c];
        y(r) = values[idx[r]];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() == 0) throw std::runtime_error("RegressionCE: degenerate design matrix");
    Eigen::VectorXd beta = qr.solve(y);
    f.coeffs.assign(beta.data(), beta.data() + beta.size());
    return f;
}

double RegressionCE::evaluate_fit(const Fit& f, std::size_t path, std::size_t node) const {
    if (f.mean_only) return f.mean;
    if (f.coeffs.empty()) return 0.0;
    const auto b = basis(features_(path, node));
    double v = 0.0;
    for (std::size_t c = 0; c < b.size() && c < f.coeffs.size(); ++c) v += f.coeffs[c] * b[c];
    return v;
}

std::vector<double> RegressionCE::condexp(std::size_t node, std::span<const double> values,
                                          std::span<const unsigned char> alive) const {
    if (values.size() != n_paths_) throw std::invalid_argument("RegressionCE: value size mismatch");
    std::vector<double> out(n_paths_, 0.0);
    Fit f = fit_coefficients(node, values, alive);
    for (std::size_t p = 0; p < n_paths_; ++p) {
        if (!alive.empty() && !alive[p]) continue;
        out[p] = evaluate_fit(f, p, node);
    }
    return out;
}

std::vector<double> CEEstimator::condexp_ratio(std::size_t node, std::span<const double> num,
                                               std::span<const double> den,
                                               std::span<const unsigned char> alive) const {
    const auto top = condexp(node, num, alive);
    const auto bot = condexp(node, den, alive);
    std::vector<double> out(top.size(), 0.0);
    for (std::size_t p = 0; p < out.size(); ++p)
        out[p] = std::abs(bot[p]) > 1e-300 ? top[p] / bot[p] : 0.0;
    return out;
}

std::vector<double> RegressionCE::condexp_ratio(std::size_t node, std::span<const double> num,
                                                std::span<const double> den,
                                                std::span<const unsigned char> alive) const {
    std::vector<double> out(n_paths_, 0.0);
    // average denominator over the alive set; clamps the fold fits
    double den_mean = 0.0;
    std::size_t n_alive = 0;
    for (std::size_t p = 0; p < n_paths_; ++p) {
        if (!alive.empty() && !alive[p]) continue;
        den_mean += den[p];
        ++n_alive;
    }
    if (n_alive == 0) return out;
    den_mean /= static_cast<double>(n_alive);
    if (std::abs(den_mean) < 1e-300) return out;
    for (int fold = 0; fold < 2; ++fold) {
        // fit on the opposite fold, evaluate on this one
        std::vector<unsigned char> fit_mask(n_paths_, 0);
        for (std::size_t p = 0; p < n_paths_; ++p)
            fit_mask[p] = (alive.empty() || alive[p]) && (p % 2 != static_cast<std::size_t>(fold));
        Fit top = fit_coefficients(node, num, fit_mask);
        Fit bot = fit_coefficients(node, den, fit_mask);
        for (std::size_t p = fold; p < n_paths_; p += 2) {
            if (!alive.empty() && !alive[p]) continue;
            const double t = evaluate_fit(top, p, node);
            double b = evaluate_fit(bot, p, node);
            const double floor_val = 0.2 * den_mean;
            if (b < floor_val) b = floor_val;
            out[p] = t / b;
        }
    }
    return out;
}

ExactCE::ExactCE(std::vector<std::vector<std::size_t>> cells, std::vector<double> weights)
    : cells_(std::move(cells)), weights_(std::move(weights)) {
    for (const auto& c : cells_)
        if (c.size() != weights_.size())
            throw std::invalid_argument("ExactCE: cell table does not match weights");
}

std::vector<double> ExactCE::condexp(std::size_t node, std::span<const double> values,
                                     std::span<const unsigned char> alive) const {
    if (node >= cells_.size()) throw std::invalid_argument("ExactCE: node out of range");
    const auto& cell = cells_[node];
    if (values.size() != weights_.size()) throw std::invalid_argument("ExactCE: value size mismatch");
    std::unordered_map<std::size_t, double> num, den;
    for (std::size_t p = 0; p < values.size(); ++p) {
        if (!alive.empty() && !alive[p]) continue;
        num[cell[p]] += weights_[p] * values[p];
        den[cell[p]] += weights_[p];
    }
    std::vector<double> out(values.size(), 0.0);
    for (std::size_t p = 0; p < values.size(); ++p) {
        if (!alive.empty() && !alive[p]) continue;
        const double d = den[cell[p]];
        out[p] = d > 0.0 ? num[cell[p]] / d : 0.0;
    }
    return out;
}

}  // namespace horizon
