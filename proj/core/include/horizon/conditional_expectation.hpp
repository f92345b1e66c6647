#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace horizon {

/// Estimator of E[V | F_{t_u}] across an ensemble.
///
/// `condexp` receives one value per path and returns one estimate per path.
/// `alive` (optional) restricts both fit and evaluation to a subset of
/// paths; estimates for dead paths are returned as 0.
class CEEstimator {
public:
    virtual ~CEEstimator() = default;

    virtual std::vector<double> condexp(std::size_t node, std::span<const double> values,
                                        std::span<const unsigned char> alive = {}) const = 0;

    /// Ratio estimator E[num|F]/E[den|F] used for the z integrands. The
    /// default divides two condexp calls with a sign guard. Monte Carlo
    /// estimators cross-fit the two regressions on complementary folds so
    /// that the fitted integrand is independent of each path's own noise
    /// (an in-sample fit correlates with the increments it multiplies and
    /// accumulates a spurious drift of order basis/paths per step).
    virtual std::vector<double> condexp_ratio(std::size_t node, std::span<const double> num,
                                              std::span<const double> den,
                                              std::span<const unsigned char> alive = {}) const;

    /// Number of paths the estimator expects.
    virtual std::size_t n_paths() const = 0;
};

using CEEstimatorPtr = std::shared_ptr<const CEEstimator>;

/// Least-squares Monte Carlo estimator: projects values on polynomials of
/// the supplied state features (default degree 2, with cross terms).
///
/// The feature callback returns the F_{t_u}-measurable state of one path.
class RegressionCE : public CEEstimator {
public:
    using Features = std::function<std::vector<double>(std::size_t path, std::size_t node)>;

    RegressionCE(std::size_t n_paths, Features features, int degree = 2);

    std::vector<double> condexp(std::size_t node, std::span<const double> values,
                                std::span<const unsigned char> alive = {}) const override;
    std::vector<double> condexp_ratio(std::size_t node, std::span<const double> num,
                                      std::span<const double> den,
                                      std::span<const unsigned char> alive = {}) const override;
    std::size_t n_paths() const override { return n_paths_; }

private:
    std::size_t n_paths_;
    Features features_;
    int degree_;
    struct Fit {
        std::vector<double> coeffs;
        bool mean_only = false;
        double mean = 0.0;
    };
    std::vector<double> basis(std::span<const double> f) const;
    Fit fit_coefficients(std::size_t node, std::span<const double> values,
                         std::span<const unsigned char> mask) const;
    double evaluate_fit(const Fit& f, std::size_t path, std::size_t node) const;
};

/// Exact estimator for finite filtrations: paths are scenarios carrying
/// weights, and E[V|F_u] is a weighted average over the partition cell.
class ExactCE : public CEEstimator {
public:
    /// cells[node][path] = partition cell id of the path at that node.
    ExactCE(std::vector<std::vector<std::size_t>> cells, std::vector<double> weights);

    std::vector<double> condexp(std::size_t node, std::span<const double> values,
                                std::span<const unsigned char> alive = {}) const override;
    std::size_t n_paths() const override { return weights_.size(); }

    const std::vector<std::size_t>& cells_at(std::size_t node) const { return cells_[node]; }

private:
    std::vector<std::vector<std::size_t>> cells_;
    std::vector<double> weights_;
};

}  // namespace horizon
