#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "horizon/conditional_expectation.hpp"
#include "horizon/laglad.hpp"

namespace horizon {

/// An explicit finite probability space with a refining partition sequence:
/// the desk-scale stand-in where every projection, compensator and BSDE
/// recursion is an exact finite sum.
///
/// Scenarios are F-paths; `cells[k][w]` is the partition cell of scenario w
/// at step k. Adapted processes are tables `[node][scenario]`, constant on
/// cells. The law of the random time is given per scenario as a row over
/// {t_0, ..., t_K, beyond-horizon}.
class FiniteFiltration {
public:
    std::vector<double> times;                        ///< K+1 nodes, times[0] = 0
    std::vector<double> scenario_probs;               ///< per scenario, sums to 1
    std::vector<std::vector<std::size_t>> cells;      ///< [node][scenario] -> cell id
    std::map<std::string, std::vector<std::vector<double>>> processes;  ///< adapted tables
    std::vector<std::string> martingale_components;   ///< process names driving the BSDE
    std::vector<std::vector<double>> theta_law;       ///< [scenario][0..K+1], last = beyond

    std::size_t n_steps() const { return times.size() - 1; }
    std::size_t n_scenarios() const { return scenario_probs.size(); }
    std::size_t beyond_index() const { return times.size(); }

    /// Full validation: refinement, probabilities, adaptedness, law rows.
    void validate() const;

    /// True when every one-step transition is complete for the martingale
    /// components (each cell has exactly dim+1 children); needed by the
    /// exact enlarged-filtration solver.
    bool one_step_complete() const;

    /// True when the named process is a martingale w.r.t. the partitions.
    bool is_martingale(const std::string& name, double tol = 1e-12) const;

    TimeGridPtr grid() const;
    /// One path per scenario, weighted by scenario probabilities.
    PathEnsemble ensemble(const std::string& process) const;
    PathEnsemble constant_ensemble(double value) const;
    CEEstimatorPtr exact_ce() const;

    /// E[values | F_node] per scenario (exact cell averages).
    std::vector<double> condexp(std::size_t node, const std::vector<double>& values) const;

    static FiniteFiltration load_json(const std::string& path);
    static FiniteFiltration parse_json(const std::string& text);
    std::string to_json() const;

    /// Symmetric +-1 random walk tree on K steps (2^K scenarios), horizon T.
    /// The walk is exposed as process "M".
    static FiniteFiltration binomial_walk(std::size_t steps, double horizon);
};

/// The progressive enlargement of a FiniteFiltration by its random time,
/// realized as a weighted ensemble of atoms (scenario, theta-outcome).
class EnlargedSpace {
public:
    explicit EnlargedSpace(const FiniteFiltration& finite);

    const FiniteFiltration& base() const { return *finite_; }
    std::size_t n_atoms() const { return atom_scenario_.size(); }
    std::size_t scenario(std::size_t atom) const { return atom_scenario_[atom]; }
    /// Node index of theta for the atom, or kNever when beyond horizon.
    std::size_t theta_node(std::size_t atom) const { return atom_theta_[atom]; }
    double weight(std::size_t atom) const { return weights_[atom]; }
    const std::vector<double>& weights() const { return weights_; }

    /// G-filtration cell ids per node per atom.
    const std::vector<std::vector<std::size_t>>& g_cells() const { return g_cells_; }
    /// F-filtration cell ids lifted to atoms (conditioning that ignores theta).
    const std::vector<std::vector<std::size_t>>& f_cells() const { return f_cells_; }

    CEEstimatorPtr g_ce() const;
    CEEstimatorPtr f_ce() const;

    /// Lifts a per-scenario adapted table to a per-atom ensemble.
    PathEnsemble lift_process(const std::vector<std::vector<double>>& table) const;
    PathEnsemble lift_ensemble(const PathEnsemble& per_scenario) const;
    PathEnsemble lift_path_per_scenario(const std::vector<LagladPath>& paths) const;

    /// theta nodes per atom (kNever marks beyond-horizon atoms).
    std::vector<std::size_t> theta_nodes() const { return atom_theta_; }

private:
    const FiniteFiltration* finite_;
    std::vector<std::size_t> atom_scenario_;
    std::vector<std::size_t> atom_theta_;
    std::vector<double> weights_;
    std::vector<std::vector<std::size_t>> g_cells_;
    std::vector<std::vector<std::size_t>> f_cells_;
};

}  // namespace horizon
