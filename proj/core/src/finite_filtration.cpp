#include "horizon/finite_filtration.hpp"

#include "horizon/bsde_types.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace horizon {

using nlohmann::json;

void FiniteFiltration::validate() const {
    const std::size_t K = n_steps();
    const std::size_t N = n_scenarios();
    if (times.size() < 2) throw std::invalid_argument("FiniteFiltration: need >= 2 time nodes");
    if (times[0] != 0.0) throw std::invalid_argument("FiniteFiltration: times must start at 0");
    for (std::size_t k = 1; k < times.size(); ++k)
        if (!(times[k] > times[k - 1]))
            throw std::invalid_argument("FiniteFiltration: times must increase");
    if (cells.size() != K + 1)
        throw std::invalid_argument("FiniteFiltration: cells must have one row per node");
    double mass = 0.0;
    for (double p : scenario_probs) {
        if (!(p > 0.0)) throw std::invalid_argument("FiniteFiltration: scenario probs must be > 0");
        mass += p;
    }
    if (std::abs(mass - 1.0) > 1e-12)
        throw std::invalid_argument("FiniteFiltration: scenario probs must sum to 1");

    // Partition refinement: cells at k+1 must subdivide cells at k.
    for (std::size_t k = 0; k + 1 <= K; ++k) {
        if (cells[k].size() != N || cells[k + 1].size() != N)
            throw std::invalid_argument("FiniteFiltration: cell row size mismatch");
        std::map<std::size_t, std::size_t> parent_of;
        for (std::size_t w = 0; w < N; ++w) {
            auto it = parent_of.find(cells[k + 1][w]);
            if (it == parent_of.end())
                parent_of[cells[k + 1][w]] = cells[k][w];
            else if (it->second != cells[k][w])
                throw std::invalid_argument("FiniteFiltration: partitions do not refine");
        }
    }
    for (std::size_t w = 0; w < N; ++w)
        if (cells[0][w] != cells[0][0])
            throw std::invalid_argument("FiniteFiltration: F_0 must be trivial");

    for (const auto& [name, table] : processes) {
        if (table.size() != K + 1)
            throw std::invalid_argument("FiniteFiltration: process '" + name + "' row count");
        for (std::size_t k = 0; k <= K; ++k) {
            if (table[k].size() != N)
                throw std::invalid_argument("FiniteFiltration: process '" + name + "' column count");
            std::map<std::size_t, double> rep;
            for (std::size_t w = 0; w < N; ++w) {
                auto [it, fresh] = rep.emplace(cells[k][w], table[k][w]);
                if (!fresh && std::abs(it->second - table[k][w]) > 1e-12)
                    throw std::invalid_argument("FiniteFiltration: process '" + name +
                                                "' is not adapted at step " + std::to_string(k));
            }
        }
    }
    for (const auto& name : martingale_components)
        if (!processes.count(name))
            throw std::invalid_argument("FiniteFiltration: unknown martingale component " + name);

    if (theta_law.size() != N)
        throw std::invalid_argument("FiniteFiltration: theta law needs one row per scenario");
    for (std::size_t w = 0; w < N; ++w) {
        if (theta_law[w].size() != K + 2)
            throw std::invalid_argument("FiniteFiltration: theta law row length must be K+2");
        double s = 0.0;
        for (double q : theta_law[w]) {
            if (q < -1e-15) throw std::invalid_argument("FiniteFiltration: negative theta mass");
            s += q;
        }
        if (std::abs(s - 1.0) > 1e-12)
            throw std::invalid_argument("FiniteFiltration: theta law row must sum to 1");
        if (theta_law[w][0] != 0.0)
            throw std::invalid_argument("FiniteFiltration: theta must be strictly positive");
    }
}

bool FiniteFiltration::one_step_complete() const {
    const std::size_t K = n_steps();
    const std::size_t want = martingale_components.size() + 1;
    for (std::size_t k = 0; k < K; ++k) {
        std::map<std::size_t, std::set<std::size_t>> children;
        for (std::size_t w = 0; w < n_scenarios(); ++w)
            children[cells[k][w]].insert(cells[k + 1][w]);
        for (const auto& [c, ch] : children)
            if (ch.size() != want) return false;
    }
    return true;
}

bool FiniteFiltration::is_martingale(const std::string& name, double tol) const {
    const auto& table = processes.at(name);
    for (std::size_t k = 0; k + 1 < times.size(); ++k) {
        std::map<std::size_t, double> num, den;
        for (std::size_t w = 0; w < n_scenarios(); ++w) {
            num[cells[k][w]] += scenario_probs[w] * (table[k + 1][w] - table[k][w]);
            den[cells[k][w]] += scenario_probs[w];
        }
        for (const auto& [c, v] : num)
            if (std::abs(v / den[c]) > tol) return false;
    }
    return true;
}

TimeGridPtr FiniteFiltration::grid() const {
    std::vector<std::size_t> marked;
    for (std::size_t k = 0; k < times.size(); ++k) marked.push_back(k);
    return std::make_shared<const TimeGrid>(times, marked);
}

PathEnsemble FiniteFiltration::ensemble(const std::string& process) const {
    auto it = processes.find(process);
    if (it == processes.end())
        throw std::invalid_argument("FiniteFiltration: unknown process " + process);
    auto g = grid();
    PathEnsemble ens(g, 0);
    for (std::size_t w = 0; w < n_scenarios(); ++w) {
        std::vector<double> at(times.size());
        for (std::size_t k = 0; k < times.size(); ++k) at[k] = it->second[k][w];
        LagladPath p(g, at);
        // Tree processes move by jumps at nodes.
        for (std::size_t k = 1; k < times.size(); ++k) p.pre(k) = p.at(k - 1);
        ens.push_back(std::move(p));
    }
    ens.set_weights(scenario_probs);
    return ens;
}

PathEnsemble FiniteFiltration::constant_ensemble(double value) const {
    PathEnsemble ens(grid(), n_scenarios(), value);
    ens.set_weights(scenario_probs);
    return ens;
}

CEEstimatorPtr FiniteFiltration::exact_ce() const {
    return std::make_shared<ExactCE>(cells, scenario_probs);
}

std::vector<double> FiniteFiltration::condexp(std::size_t node,
                                              const std::vector<double>& values) const {
    ExactCE ce(cells, scenario_probs);
    return ce.condexp(node, values);
}

FiniteFiltration FiniteFiltration::parse_json(const std::string& text) {
    json j = json::parse(text);
    FiniteFiltration f;
    f.times = j.at("times").get<std::vector<double>>();
    f.scenario_probs = j.at("scenario_probs").get<std::vector<double>>();
    const std::size_t N = f.scenario_probs.size();
    // Partitions arrive as nested scenario-index lists per node.
    for (const auto& row : j.at("partitions")) {
        std::vector<std::size_t> cell_of(N, SIZE_MAX);
        std::size_t cid = 0;
        for (const auto& cell : row) {
            for (const auto& w : cell) cell_of.at(w.get<std::size_t>()) = cid;
            ++cid;
        }
        for (std::size_t w = 0; w < N; ++w)
            if (cell_of[w] == SIZE_MAX)
                throw std::invalid_argument("FiniteFiltration: scenario missing from a partition");
        f.cells.push_back(std::move(cell_of));
    }
    if (j.contains("processes"))
        for (const auto& [name, table] : j.at("processes").items())
            f.processes[name] = table.get<std::vector<std::vector<double>>>();
    if (j.contains("martingale_components"))
        f.martingale_components = j.at("martingale_components").get<std::vector<std::string>>();
    f.theta_law = j.at("theta_law").get<std::vector<std::vector<double>>>();
    f.validate();
    return f;
}

FiniteFiltration FiniteFiltration::load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("FiniteFiltration: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_json(ss.str());
}

std::string FiniteFiltration::to_json() const {
    json j;
    j["times"] = times;
    j["scenario_probs"] = scenario_probs;
    json parts = json::array();
    for (const auto& row : cells) {
        std::map<std::size_t, std::vector<std::size_t>> by_cell;
        for (std::size_t w = 0; w < row.size(); ++w) by_cell[row[w]].push_back(w);
        json r = json::array();
        for (const auto& [c, ws] : by_cell) r.push_back(ws);
        parts.push_back(r);
    }
    j["partitions"] = parts;
    json procs;
    for (const auto& [name, table] : processes) procs[name] = table;
    j["processes"] = procs;
    j["martingale_components"] = martingale_components;
    j["theta_law"] = theta_law;
    return j.dump(2);
}

FiniteFiltration FiniteFiltration::binomial_walk(std::size_t steps, double horizon) {
    FiniteFiltration f;
    const std::size_t N = std::size_t(1) << steps;
    f.times.resize(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k)
        f.times[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
    f.scenario_probs.assign(N, 1.0 / static_cast<double>(N));
    f.cells.assign(steps + 1, std::vector<std::size_t>(N, 0));
    for (std::size_t k = 0; k <= steps; ++k)
        for (std::size_t w = 0; w < N; ++w) f.cells[k][w] = k == 0 ? 0 : (w >> (steps - k));
    std::vector<std::vector<double>> M(steps + 1, std::vector<double>(N, 0.0));
    for (std::size_t k = 1; k <= steps; ++k)
        for (std::size_t w = 0; w < N; ++w) {
            const bool up = ((w >> (steps - k)) & 1u) == 0u;
            M[k][w] = M[k - 1][w] + (up ? 1.0 : -1.0);
        }
    f.processes["M"] = std::move(M);
    f.martingale_components = {"M"};
    // Default law: theta beyond the horizon; callers overwrite.
    f.theta_law.assign(N, std::vector<double>(steps + 2, 0.0));
    for (auto& row : f.theta_law) row.back() = 1.0;
    return f;
}

EnlargedSpace::EnlargedSpace(const FiniteFiltration& finite) : finite_(&finite) {
    const std::size_t K = finite.n_steps();
    for (std::size_t w = 0; w < finite.n_scenarios(); ++w) {
        for (std::size_t jx = 0; jx < finite.theta_law[w].size(); ++jx) {
            const double q = finite.theta_law[w][jx];
            if (q <= 0.0) continue;
            atom_scenario_.push_back(w);
            atom_theta_.push_back(jx <= K ? jx : kNever);
            weights_.push_back(finite.scenario_probs[w] * q);
        }
    }
    const std::size_t A = n_atoms();
    g_cells_.assign(K + 1, std::vector<std::size_t>(A, 0));
    f_cells_.assign(K + 1, std::vector<std::size_t>(A, 0));
    for (std::size_t k = 0; k <= K; ++k) {
        std::map<std::pair<std::size_t, std::size_t>, std::size_t> ids;
        for (std::size_t a = 0; a < A; ++a) {
            const std::size_t fcell = finite.cells[k][atom_scenario_[a]];
            f_cells_[k][a] = fcell;
            // Alive atoms (theta > t_k) share one G-cell per F-cell; defaulted
            // atoms are split further by their default time.
            const std::size_t th = atom_theta_[a];
            const std::size_t tag = (th == kNever || th > k) ? kNever : th;
            auto [it, fresh] = ids.emplace(std::make_pair(fcell, tag), ids.size());
            g_cells_[k][a] = it->second;
        }
    }
}

CEEstimatorPtr EnlargedSpace::g_ce() const {
    return std::make_shared<ExactCE>(g_cells_, weights_);
}

CEEstimatorPtr EnlargedSpace::f_ce() const {
    return std::make_shared<ExactCE>(f_cells_, weights_);
}

PathEnsemble EnlargedSpace::lift_process(const std::vector<std::vector<double>>& table) const {
    auto g = finite_->grid();
    PathEnsemble ens(g, 0);
    for (std::size_t a = 0; a < n_atoms(); ++a) {
        std::vector<double> at(g->size());
        for (std::size_t k = 0; k < g->size(); ++k) at[k] = table[k][atom_scenario_[a]];
        LagladPath p(g, at);
        for (std::size_t k = 1; k < g->size(); ++k) p.pre(k) = p.at(k - 1);
        ens.push_back(std::move(p));
    }
    ens.set_weights(weights_);
    return ens;
}

PathEnsemble EnlargedSpace::lift_ensemble(const PathEnsemble& per_scenario) const {
    PathEnsemble ens(per_scenario.grid_ptr(), 0);
    for (std::size_t a = 0; a < n_atoms(); ++a)
        ens.push_back(per_scenario.path(atom_scenario_[a]));
    ens.set_weights(weights_);
    return ens;
}

PathEnsemble EnlargedSpace::lift_path_per_scenario(const std::vector<LagladPath>& paths) const {
    PathEnsemble ens(paths.at(0).grid_ptr(), 0);
    for (std::size_t a = 0; a < n_atoms(); ++a) ens.push_back(paths[atom_scenario_[a]]);
    ens.set_weights(weights_);
    return ens;
}

}  // namespace horizon
