#include "horizon/experiment.hpp"

#include "horizon/bsde_engine.hpp"
#include "horizon/g_tree.hpp"
#include "horizon/rng.hpp"
#include "horizon/tree_solver.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace horizon {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& where, const std::string& what) {
    throw std::runtime_error("config error at " + where + ": " + what);
}

RecipeConfig parse_recipe(const json& j, const std::string& where) {
    RecipeConfig r;
    if (j.is_number()) {
        r.type = "const";
        r.value = j.get<double>();
        return r;
    }
    if (!j.is_object()) config_error(where, "expected an object or a number");
    r.type = j.value("type", "const");
    r.value = j.value("value", 0.0);
    r.a = j.value("a", 0.0);
    r.b = j.value("b", 0.0);
    if (r.type != "const" && r.type != "linear" && r.type != "tanh" && r.type != "zero")
        config_error(where + ".type", "unknown recipe '" + r.type + "'");
    return r;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        config_error("$", e.what());
    }
    ExperimentConfig c;
    if (!j.contains("seed")) config_error("$.seed", "seed is mandatory");
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("grid")) {
        const auto& g = j["grid"];
        c.horizon = g.value("T", 1.0);
        c.steps = g.value("steps", std::size_t(100));
        c.refinements = g.value("refinements", std::size_t(1));
        if (c.horizon <= 0.0) config_error("$.grid.T", "must be positive");
        if (c.steps < 2) config_error("$.grid.steps", "need at least two steps");
    }
    c.paths = j.value("paths", std::size_t(1000));
    c.threads = j.value("threads", 1);
    if (j.contains("backend")) {
        const auto& b = j["backend"];
        c.backend = b.value("type", "cox");
        if (c.backend == "cox") {
            c.cox_rate = b.value("rate", 0.5);
            c.cox_jump_time = b.value("jump_time", -1.0);
            c.cox_jump_size = b.value("jump_size", 0.0);
            if (c.cox_jump_size < 0.0 || c.cox_jump_size > 1.0)
                config_error("$.backend.jump_size", "hazard jumps live in [0,1]");
        } else if (c.backend == "poisson-shock") {
            c.shock.lambda = b.value("lambda", 0.5);
            c.shock.b = b.value("b", 0.3);
            c.shock.sigma = b.value("sigma", 1.0);
            c.shock.p = b.value("p", 0.5);
            c.shock.poisson_intensity = b.value("poisson_intensity", 1.0);
            if (c.shock.p <= 0.0 || c.shock.p >= 1.0)
                config_error("$.backend.p", "p must lie in (0,1)");
        } else if (c.backend == "finite-oracle") {
            if (!b.contains("file")) config_error("$.backend.file", "tree file required");
            c.tree_file = b["file"].get<std::string>();
        } else {
            config_error("$.backend.type", "unknown backend '" + c.backend + "'");
        }
    }
    if (j.contains("generator")) {
        const auto& g = j["generator"];
        if (g.contains("fr")) c.fr = parse_recipe(g["fr"], "$.generator.fr");
        if (g.contains("fg")) c.fg = parse_recipe(g["fg"], "$.generator.fg");
    }
    if (j.contains("reward")) {
        const auto& r = j["reward"];
        if (r.contains("X")) c.reward_x = parse_recipe(r["X"], "$.reward.X");
        if (r.contains("R")) c.reward_r = parse_recipe(r["R"], "$.reward.R");
    }
    if (j.contains("barrier")) c.barrier = parse_recipe(j["barrier"], "$.barrier");
    if (j.contains("solver")) {
        const auto& s = j["solver"];
        c.basis_degree = s.value("basis_degree", 2);
        c.fp_tol = s.value("fixed_point_tol", 1e-10);
        c.fp_max_iter = s.value("max_iterations", 50);
        if (c.fp_tol <= 0.0) config_error("$.solver.fixed_point_tol", "must be positive");
    }
    if (j.contains("verify")) {
        const auto& v = j["verify"];
        if (v.contains("checks")) c.checks = v["checks"].get<std::vector<std::string>>();
        c.mc_paths = v.value("paths_mc", std::size_t(100000));
        c.tolerance_scale = v.value("tolerance_scale", 1.0);
        if (c.tolerance_scale <= 0.0) config_error("$.verify.tolerance_scale", "must be positive");
        if (c.backend != "finite-oracle")
            for (const auto& check : c.checks)
                if ((check.rfind("martingale", 0) == 0 || check == "residual-g" ||
                     check == "zero-gen-smoke") &&
                    c.paths < 1000)
                    config_error("$.paths", "monte carlo checks need at least 1000 paths");
    }
    c.raw_json = j.dump(2);
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    auto c = parse(ss.str());
    if (!c.tree_file.empty() && !fs::path(c.tree_file).is_absolute()) {
        const fs::path base = fs::path(path).parent_path();
        c.tree_file = (base / c.tree_file).string();
    }
    return c;
}

std::uint64_t ExperimentConfig::config_hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (char ch : raw_json) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ULL;
    }
    return h;
}

StageSelection StageSelection::all_bsde() {
    StageSelection s;
    s.simulate = s.solve_bsde = s.reduce_lift = s.verify = true;
    return s;
}

StageSelection StageSelection::all_rbsde() {
    StageSelection s;
    s.simulate = s.solve_rbsde = s.reduce_lift = s.verify = true;
    return s;
}

// ---- artifact I/O --------------------------------------------------------

namespace {

void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<char*>(&v), 8); }
std::uint64_t get_u64(std::istream& is) {
    std::uint64_t v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
double get_f64(std::istream& is) {
    double v;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

}  // namespace

void write_artifact(const std::string& path, const ArtifactMap& data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_artifact: cannot open " + path);
    os.write("HZB1", 4);
    put_u64(os, data.ensembles.size());
    for (const auto& [name, ens] : data.ensembles) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, ens.n_paths());
        put_u64(os, ens.n_paths() ? ens.path(0).size() : 0);
        put_f64(os, ens.n_paths() ? ens.grid().horizon() : 0.0);
        for (std::size_t p = 0; p < ens.n_paths(); ++p)
            for (std::size_t u = 0; u < ens.path(p).size(); ++u) {
                put_f64(os, ens.path(p).pre(u));
                put_f64(os, ens.path(p).at(u));
                put_f64(os, ens.path(p).post(u));
            }
        put_u64(os, ens.has_weights() ? 1 : 0);
        if (ens.has_weights())
            for (std::size_t p = 0; p < ens.n_paths(); ++p) put_f64(os, ens.weight(p));
    }
    put_u64(os, data.indices.size());
    for (const auto& [name, vec] : data.indices) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, vec.size());
        for (std::size_t v : vec) put_u64(os, v);
    }
    put_u64(os, data.scalars.size());
    for (const auto& [name, vec] : data.scalars) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(os, vec.size());
        for (double v : vec) put_f64(os, v);
    }
}

ArtifactMap read_artifact(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_artifact: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (std::memcmp(magic, "HZB1", 4) != 0)
        throw std::runtime_error("read_artifact: bad magic in " + path);
    ArtifactMap out;
    const std::uint64_t ne = get_u64(is);
    for (std::uint64_t i = 0; i < ne; ++i) {
        std::string name(get_u64(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        const std::uint64_t paths = get_u64(is);
        const std::uint64_t nodes = get_u64(is);
        const double horizon = get_f64(is);
        auto grid = nodes > 1 ? make_uniform_grid(horizon, nodes - 1) : nullptr;
        PathEnsemble ens(grid, paths);
        for (std::uint64_t p = 0; p < paths; ++p)
            for (std::uint64_t u = 0; u < nodes; ++u) {
                const double pre = get_f64(is), at = get_f64(is), post = get_f64(is);
                ens.path(p).set(u, pre, at, post);
            }
        if (get_u64(is)) {
            std::vector<double> w(paths);
            for (auto& x : w) x = get_f64(is);
            ens.set_weights(std::move(w));
        }
        out.ensembles.emplace(std::move(name), std::move(ens));
    }
    const std::uint64_t ni = get_u64(is);
    for (std::uint64_t i = 0; i < ni; ++i) {
        std::string name(get_u64(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        std::vector<std::size_t> vec(get_u64(is));
        for (auto& v : vec) v = get_u64(is);
        out.indices.emplace(std::move(name), std::move(vec));
    }
    const std::uint64_t ns = get_u64(is);
    for (std::uint64_t i = 0; i < ns; ++i) {
        std::string name(get_u64(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        std::vector<double> vec(get_u64(is));
        for (auto& v : vec) v = get_f64(is);
        out.scalars.emplace(std::move(name), std::move(vec));
    }
    return out;
}

// ---- pipeline ------------------------------------------------------------

namespace {

FGenerator make_fr(const RecipeConfig& r) {
    if (r.type == "zero")
        return [](const StepContext&, double, std::span<const double>, double) { return 0.0; };
    if (r.type == "linear") {
        const double a = r.a, b = r.b;
        return [a, b](const StepContext&, double y, std::span<const double>, double) {
            return a * y + b;
        };
    }
    if (r.type == "tanh") {
        const double a = r.a, s = r.value != 0.0 ? r.value : 1.0;
        return [a, s](const StepContext&, double y, std::span<const double>, double) {
            return a * std::tanh(s * y);
        };
    }
    const double v = r.value;
    return [v](const StepContext&, double, std::span<const double>, double) { return v; };
}

FgGenerator make_fg(const RecipeConfig& r) {
    if (r.type == "zero") return [](const StepContext&, double) { return 0.0; };
    if (r.type == "linear") {
        const double a = r.a, b = r.b;
        return [a, b](const StepContext&, double y) { return a * y + b; };
    }
    if (r.type == "tanh") {
        const double a = r.a, s = r.value != 0.0 ? r.value : 1.0;
        return [a, s](const StepContext&, double y) { return a * std::tanh(s * y); };
    }
    const double v = r.value;
    return [v](const StepContext&, double) { return v; };
}

double recipe_lip(const RecipeConfig& r) {
    if (r.type == "linear") return std::abs(r.a);
    if (r.type == "tanh") return std::abs(r.a) * (r.value != 0.0 ? std::abs(r.value) : 1.0);
    return 0.0;
}

PathEnsemble recipe_path(const RecipeConfig& r, TimeGridPtr grid, std::size_t paths) {
    PathEnsemble out(grid, paths);
    for (std::size_t p = 0; p < paths; ++p)
        for (std::size_t u = 0; u < grid->size(); ++u) {
            const double t = grid->time(u);
            double v = r.value;
            if (r.type == "linear") v = r.a * t + r.b;
            if (r.type == "zero") v = 0.0;
            out.path(p).set_flat(u, v);
        }
    return out;
}

struct Pipeline {
    ExperimentConfig config;
    TimeGridPtr grid;
    RandomTimeModel model;
    GBsdeSpec spec;
    std::shared_ptr<FiniteFiltration> finite;

    /// Stage isolation: reconstruct the model from a persisted artifact so
    /// `verify` can run without re-simulating. Closures (features, brackets,
    /// samplers) are rebuilt from the loaded ensembles.
    bool load_model(const std::string& artifact_path) {
        if (!fs::exists(artifact_path)) return false;
        if (config.backend == "finite-oracle") return false;  // cheap to rebuild exactly
        auto art = read_artifact(artifact_path);
        model = RandomTimeModel{};
        model.backend = config.backend == "cox" ? RandomTimeBackend::cox
                                                : RandomTimeBackend::poisson_shock;
        model.G = art.ensembles.at("G");
        grid = model.G.grid_ptr();
        model.grid = grid;
        model.Gtilde = art.ensembles.at("Gtilde");
        model.m = art.ensembles.at("m");
        model.n = art.ensembles.at("n");
        model.Ao = art.ensembles.at("Ao");
        model.Ap = art.ensembles.at("Ap");
        model.Gamma = art.ensembles.at("Gamma");
        for (std::size_t k = 0;; ++k) {
            auto it = art.ensembles.find("nu" + std::to_string(k));
            if (it == art.ensembles.end()) break;
            model.nu.push_back(it->second);
        }
        for (std::size_t k = 0;; ++k) {
            auto it = art.ensembles.find("M" + std::to_string(k));
            if (it == art.ensembles.end()) break;
            model.martingale.push_back(it->second);
        }
        model.jump_node = art.indices.at("jump_node");
        if (config.backend == "cox") {
            model.bracket_increment = [](std::size_t, std::size_t, std::size_t) { return 0.0; };
            model.features = [](std::size_t, std::size_t) { return std::vector<double>{}; };
            const PathEnsemble G_copy = model.G;
            model.theta_sampler = [G_copy](std::uint64_t seed) {
                std::vector<std::size_t> theta(G_copy.n_paths(), kNever);
                for (std::size_t p = 0; p < G_copy.n_paths(); ++p) {
                    auto rng = path_rng(seed, 13, p);
                    std::uniform_real_distribution<double> unif(0.0, 1.0);
                    double surv = 1.0;
                    for (std::size_t u = 1; u < G_copy.path(p).size(); ++u) {
                        const double q = surv > 0.0 ? G_copy.path(p).at(u) / surv : 0.0;
                        if (unif(rng) > q) {
                            theta[p] = u;
                            break;
                        }
                        surv = G_copy.path(p).at(u);
                    }
                }
                return theta;
            };
        } else {
            const double mu = config.shock.poisson_intensity;
            auto g = grid;
            model.bracket_increment = [g, mu](std::size_t k, std::size_t, std::size_t v) {
                return k == 0 ? g->dt(v) : mu * g->dt(v);
            };
            // J recovered from Gtilde and the first-jump node
            const double p_surv = config.shock.p;
            auto Gt = std::make_shared<PathEnsemble>(model.Gtilde);
            auto W = std::make_shared<PathEnsemble>(model.martingale.at(0));
            auto t1 = model.jump_node;
            model.features = [Gt, W, t1, p_surv](std::size_t path, std::size_t node) {
                const bool after = t1[path] != kNever && node > t1[path];
                const double j = Gt->path(path).at(node) / (after ? p_surv : 1.0);
                return std::vector<double>{
                    j, W->path(path).at(node),
                    t1[path] != kNever && node >= t1[path] ? 1.0 : 0.0};
            };
        }
        return true;
    }

    void build_model() {
        grid = make_uniform_grid(config.horizon, config.steps);
        if (config.backend == "cox") {
            PathEnsemble hazard(grid, config.paths);
            const std::size_t jnode =
                config.cox_jump_time >= 0.0 ? grid->snap_right(config.cox_jump_time) : kNever;
            for (std::size_t p = 0; p < config.paths; ++p)
                for (std::size_t u = 0; u < grid->size(); ++u) {
                    const double cont = config.cox_rate * grid->time(u);
                    const double at =
                        cont + (jnode != kNever && u >= jnode ? config.cox_jump_size : 0.0);
                    const double pre =
                        cont + (jnode != kNever && u > jnode ? config.cox_jump_size : 0.0);
                    hazard.path(p).set(u, pre, at, at);
                }
            model = build_cox_model(hazard, {},
                                    [](std::size_t, std::size_t) { return std::vector<double>{}; });
            if (jnode != kNever) model.jump_node.assign(config.paths, jnode);
        } else if (config.backend == "poisson-shock") {
            PoissonShockParams prm = config.shock;
            prm.paths = config.paths;
            prm.seed = config.seed;
            prm.threads = config.threads;
            model = build_poisson_shock_model(prm, grid);
        } else {
            finite = std::make_shared<FiniteFiltration>(FiniteFiltration::load_json(config.tree_file));
            model = build_finite_model(finite);
            grid = model.grid;
        }
    }

    void build_spec() {
        const std::size_t P = model.n_paths();
        spec = GBsdeSpec{};
        spec.reward.tau_node.assign(P, grid->size() - 1);
        spec.reward.X = recipe_path(config.reward_x, grid, P);
        spec.reward.R = recipe_path(config.reward_r, grid, P);
        if (config.barrier) spec.barrier = recipe_path(*config.barrier, grid, P);

        if (config.backend == "poisson-shock") {
            // the walkthrough driver: D^r = Gamma / (1-p), D^g = 1_{(T1, inf)}
            const double scale = 1.0 / (1.0 - config.shock.p);
            PathEnsemble Dr(grid, P), Dg(grid, P);
            for (std::size_t p = 0; p < P; ++p) {
                const LagladPath& g = model.Gamma.path(p);
                for (std::size_t u = 0; u < grid->size(); ++u)
                    Dr.path(p).set(u, g.pre(u) * scale, g.at(u) * scale, g.post(u) * scale);
                const std::size_t t1 = model.jump_node[p];
                double acc = 0.0;
                for (std::size_t u = 0; u < grid->size(); ++u) {
                    const double rj = (t1 != kNever && u == t1) ? 1.0 : 0.0;
                    Dg.path(p).set(u, acc, acc, acc + rj);
                    acc += rj;
                }
            }
            spec.Dr = {std::move(Dr)};
            spec.Dg = {std::move(Dg)};
            spec.Fg = {make_fg(config.fg)};
            spec.lip_fg = recipe_lip(config.fg);
        } else {
            PathEnsemble clock(grid, P);
            for (std::size_t p = 0; p < P; ++p)
                for (std::size_t u = 0; u < grid->size(); ++u)
                    clock.path(p).set_flat(u, grid->time(u));
            if (config.backend == "finite-oracle")
                for (std::size_t p = 0; p < P; ++p)
                    for (std::size_t u = 1; u < grid->size(); ++u)
                        clock.path(p).pre(u) = grid->time(u - 1);
            spec.Dr = {std::move(clock)};
        }
        spec.Fr = {make_fr(config.fr)};
        spec.lip_fr = {recipe_lip(config.fr)};
        spec.fr_bound = std::abs(config.fr.a) + std::abs(config.fr.b) + std::abs(config.fr.value);
        if (config.backend == "finite-oracle") {
            // reward recipes keyed on the tree's driving martingale
            auto M = finite->ensemble("M");
            for (std::size_t w = 0; w < P; ++w)
                for (std::size_t u = 0; u < grid->size(); ++u) {
                    spec.reward.X.path(w).at(u) += 0.2 * std::tanh(M.path(w).at(u));
                    spec.reward.X.path(w).pre(u) += 0.2 * std::tanh(M.path(w).pre(u));
                    spec.reward.X.path(w).post(u) += 0.2 * std::tanh(M.path(w).post(u));
                }
        }
    }

    CEEstimatorPtr estimator() const {
        if (config.backend == "finite-oracle") return finite->exact_ce();
        const std::size_t P = model.n_paths();
        if (config.backend == "cox")
            return std::make_shared<RegressionCE>(
                P, [](std::size_t, std::size_t) { return std::vector<double>{}; }, 0);
        return std::make_shared<RegressionCE>(P, model.features, config.basis_degree);
    }
};

std::vector<std::vector<double>> timeseries_rows(const SolutionBundle& sol) {
    std::vector<std::vector<double>> rows;
    const TimeGrid& grid = sol.y.grid();
    const bool reflected = !sol.l.empty();
    for (std::size_t u = 0; u < grid.size(); ++u) {
        std::vector<double> row{grid.time(u), sol.y.mean_at(u), sol.y.se_at(u)};
        double mn = sol.y.path(0).at(u), mx = mn;
        for (std::size_t p = 0; p < sol.y.n_paths(); ++p) {
            mn = std::min(mn, sol.y.path(p).at(u));
            mx = std::max(mx, sol.y.path(p).at(u));
        }
        row.push_back(mn);
        row.push_back(mx);
        for (const auto& z : sol.z) row.push_back(z.mean_at(u));
        if (reflected) {
            double lr = 0.0, lg = 0.0;
            for (std::size_t p = 0; p < sol.y.n_paths(); ++p) {
                lr += sol.y.weight(p) * (sol.l.l_r_interior.path(p).at(u) +
                                         sol.l.l_r_jump.path(p).at(u));
                lg += sol.y.weight(p) * sol.l.l_g.path(p).post(u);
            }
            row.push_back(lr);
            row.push_back(lg);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

RunResult run_stages(const ExperimentConfig& config, const std::string& out_dir,
                     const StageSelection& stages) {
    RunResult result;
    result.out_dir = out_dir;
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    Pipeline pl;
    pl.config = config;
    if (stages.simulate || !pl.load_model((dir / "model.bin").string())) pl.build_model();
    pl.build_spec();

    // manifest: config hash and seeds, no wall-clock content
    {
        json m;
        m["schema"] = "horizon-manifest-v1";
        m["config_hash"] = config.config_hash();
        m["seed"] = config.seed;
        m["steps"] = config.steps;
        m["paths"] = config.paths;
        m["backend"] = config.backend;
        std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
        std::ofstream(dir / "config.json") << config.raw_json << "\n";
    }

    if (stages.simulate) {
        ArtifactMap art;
        art.ensembles["G"] = pl.model.G;
        art.ensembles["Gtilde"] = pl.model.Gtilde;
        art.ensembles["m"] = pl.model.m;
        art.ensembles["n"] = pl.model.n;
        art.ensembles["Ao"] = pl.model.Ao;
        art.ensembles["Ap"] = pl.model.Ap;
        art.ensembles["Gamma"] = pl.model.Gamma;
        for (std::size_t k = 0; k < pl.model.nu.size(); ++k)
            art.ensembles["nu" + std::to_string(k)] = pl.model.nu[k];
        for (std::size_t k = 0; k < pl.model.martingale.size(); ++k)
            art.ensembles["M" + std::to_string(k)] = pl.model.martingale[k];
        art.indices["jump_node"] = pl.model.jump_node;
        write_artifact((dir / "model.bin").string(), art);
    }

    SolutionBundle solution;
    bool have_solution = false;
    const bool reflected = config.barrier.has_value();

    auto solve_now = [&]() {
        SolverOptions opts;
        opts.fp_tol = config.fp_tol;
        opts.fp_max_iter = config.fp_max_iter;
        opts.threads = config.threads;
        auto system = build_reduced_system(pl.spec, pl.model);
        solution = solve_reduced_F_bsde(system, pl.estimator(), opts);
        have_solution = true;
    };

    if (stages.solve_bsde || stages.solve_rbsde) {
        if (stages.solve_rbsde && !reflected)
            throw std::runtime_error("solve-rbsde requires a barrier in the config");
        if (stages.solve_bsde && reflected) pl.spec.barrier.reset();
        solve_now();
        ArtifactMap art;
        art.ensembles["Y"] = solution.y;
        for (std::size_t k = 0; k < solution.z.size(); ++k)
            art.ensembles["Z" + std::to_string(k)] = solution.z[k];
        art.ensembles["U"] = solution.u;
        if (!solution.l.empty()) {
            art.ensembles["Lri"] = solution.l.l_r_interior;
            art.ensembles["Lrj"] = solution.l.l_r_jump;
            art.ensembles["Lg"] = solution.l.l_g;
            art.ensembles["Barrier"] = solution.l.barrier;
        }
        art.indices["tau"] = pl.spec.reward.tau_node;
        write_artifact((dir / "solution.bin").string(), art);
        write_csv((dir / "timeseries.csv").string(),
                  [&] {
                      std::vector<std::string> h{"t", "mean_y", "se_y", "min_y", "max_y"};
                      for (std::size_t k = 0; k < solution.z.size(); ++k)
                          h.push_back("mean_z" + std::to_string(k));
                      if (!solution.l.empty()) {
                          h.push_back("mean_lr");
                          h.push_back("mean_lg");
                      }
                      return h;
                  }(),
                  timeseries_rows(solution));
        {
            json diag;
            diag["max_fp_iterations"] = solution.diagnostics.max_fp_iterations;
            diag["max_step_residual"] = solution.diagnostics.max_step_residual;
            diag["max_link_residual"] = solution.diagnostics.max_link_residual;
            diag["steps"] = solution.diagnostics.steps;
            std::ofstream(dir / "solver-diagnostics.json") << diag.dump(2) << "\n";
        }
    }

    std::optional<LiftedSolution> lifted;
    std::vector<std::size_t> theta;
    if (stages.reduce_lift && config.backend != "finite-oracle") {
        if (!have_solution) {
            // stage isolation: reload the persisted solution
            auto art = read_artifact((dir / "solution.bin").string());
            solution.y = art.ensembles.at("Y");
            solution.z.clear();
            for (std::size_t k = 0;; ++k) {
                auto it = art.ensembles.find("Z" + std::to_string(k));
                if (it == art.ensembles.end()) break;
                solution.z.push_back(it->second);
            }
            solution.u = art.ensembles.at("U");
            if (art.ensembles.count("Lri")) {
                solution.l.l_r_interior = art.ensembles.at("Lri");
                solution.l.l_r_jump = art.ensembles.at("Lrj");
                solution.l.l_g = art.ensembles.at("Lg");
                solution.l.barrier = art.ensembles.at("Barrier");
            }
            have_solution = true;
        }
        theta = config.backend == "cox" ? pl.model.theta_sampler(config.seed ^ 0xD1CEULL)
                                        : sample_theta_by_hazard(pl.model, config.seed ^ 0xD1CEULL);
        lifted = lift_solution(solution, pl.model, theta, pl.spec.reward);
        ArtifactMap art;
        art.ensembles["Yhat"] = lifted->y_hat;
        for (std::size_t k = 0; k < lifted->z_hat.size(); ++k)
            art.ensembles["Zhat" + std::to_string(k)] = lifted->z_hat[k];
        art.ensembles["Uhat"] = lifted->u_hat;
        art.indices["theta"] = theta;
        art.indices["horizon"] = lifted->horizon_node;
        write_artifact((dir / "lifted.bin").string(), art);
    }

    if (stages.verify) {
        const double dt = pl.grid->dt(1);
        const double tol_scale = config.tolerance_scale;
        for (const std::string& check : config.checks) {
            if (check == "azema-identities") {
                const double tol = config.backend == "poisson-shock" ? 5.0 * dt * tol_scale
                                                                  : 1e-12 * tol_scale;
                result.reports.push_back(azema_identity_suite(pl.model, tol));
            } else if (check == "appendix") {
                auto rep =
                    appendix_identity_checks(pl.model, config.backend == "finite-oracle"
                                                           ? 1e-12
                                                           : 10.0 * dt * tol_scale);
                result.reports.push_back(rep.inverse_azema);
                result.reports.push_back(rep.synthetic_y);
                result.reports.push_back(rep.integration_parts);
            } else if (check == "martingale-nog" || check == "martingale-npg" ||
                       check == "martingale-mtilde") {
                if (config.backend == "finite-oracle") {
                    EnlargedSpace enl(*pl.finite);
                    RandomTimeModel lifted_model = pl.model;
                    lifted_model.G = enl.lift_ensemble(pl.model.G);
                    lifted_model.Gtilde = enl.lift_ensemble(pl.model.Gtilde);
                    lifted_model.Gamma = enl.lift_ensemble(pl.model.Gamma);
                    lifted_model.Ao = enl.lift_ensemble(pl.model.Ao);
                    lifted_model.Ap = enl.lift_ensemble(pl.model.Ap);
                    lifted_model.m = enl.lift_ensemble(pl.model.m);
                    auto defs = build_default_martingales(lifted_model, enl.theta_nodes());
                    MartingaleTestInputs in;
                    PathEnsemble values;
                    if (check == "martingale-mtilde") {
                        auto Mt = deflate_martingale(pl.model.martingale.at(0), 0, pl.model,
                                                     BracketMode::pathwise);
                        values = stop_ensemble(enl.lift_ensemble(Mt), enl.theta_nodes());
                    } else {
                        values = check == "martingale-nog" ? defs.N_oG : defs.N_pG;
                    }
                    in.values = &values;
                    in.exact_ce = enl.g_ce();
                    in.name = check;
                    result.reports.push_back(martingale_test(in));
                } else {
                    std::vector<std::size_t> th =
                        theta.empty() ? (config.backend == "cox"
                                             ? pl.model.theta_sampler(config.seed ^ 0xD1CEULL)
                                             : sample_theta_by_hazard(pl.model,
                                                                      config.seed ^ 0xD1CEULL))
                                      : theta;
                    auto defs = build_default_martingales(pl.model, th);
                    MartingaleTestInputs in;
                    PathEnsemble values;
                    if (check == "martingale-mtilde") {
                        if (pl.model.martingale.empty()) continue;
                        auto Mt = deflate_martingale(pl.model.martingale.at(0), 0, pl.model,
                                                     BracketMode::predictable);
                        values = stop_ensemble(Mt, th);
                    } else {
                        values = check == "martingale-nog" ? defs.N_oG : defs.N_pG;
                    }
                    in.values = &values;
                    in.features = pl.model.features;
                    in.name = check;
                    result.reports.push_back(martingale_test(in));
                }
            } else if (check == "residual-g") {
                if (config.backend == "finite-oracle") {
                    EnlargedSpace enl(*pl.finite);
                    auto gsol = solve_g_tree_exact(pl.spec, pl.model, enl);
                    std::vector<std::size_t> scen(enl.n_atoms());
                    for (std::size_t a = 0; a < enl.n_atoms(); ++a) scen[a] = enl.scenario(a);
                    GResidualInputs gin;
                    gin.spec = &pl.spec;
                    gin.model = &pl.model;
                    gin.y_hat = &gsol.y_hat;
                    gin.z_hat = &gsol.z_hat;
                    gin.u_hat = &gsol.u_hat;
                    gin.theta = &gsol.theta_node;
                    gin.scenario = &scen;
                    gin.exact = true;
                    gin.tolerance = 1e-10;
                    gin.name = "residual-g";
                    result.reports.push_back(
                        pl.spec.barrier
                            ? [&] {
                                  gin.l_hat = &gsol.l_hat;
                                  return residual_g_rbsde(gin, SkorokhodTolerances::oracle());
                              }()
                            : residual_g_bsde(gin));
                    FResidualInputs fin;
                    fin.spec = &pl.spec;
                    fin.model = &pl.model;
                    fin.solution = &gsol.f_reduced;
                    fin.exact = true;
                    fin.tolerance = 1e-10;
                    fin.name = "residual-f-reduced";
                    result.reports.push_back(
                        pl.spec.barrier ? residual_f_rbsde(fin, SkorokhodTolerances::oracle())
                                        : residual_f_bsde(fin));
                } else {
                    if (!lifted) throw std::runtime_error("residual-g needs the reduce-lift stage");
                    double scale = 1.0;
                    for (std::size_t u = 0; u < pl.grid->size(); ++u)
                        scale = std::max(scale, std::abs(lifted->y_hat.mean_at(u)));
                    GResidualInputs gin;
                    gin.spec = &pl.spec;
                    gin.model = &pl.model;
                    gin.y_hat = &lifted->y_hat;
                    gin.z_hat = &lifted->z_hat;
                    gin.u_hat = &lifted->u_hat;
                    gin.theta = &theta;
                    gin.bracket = BracketMode::predictable;
                    gin.exact = false;
                    gin.tolerance = 10.0 * dt * scale * tol_scale;
                    gin.name = "residual-g";
                    if (lifted->reflected) {
                        gin.l_hat = &lifted->l_hat;
                        result.reports.push_back(residual_g_rbsde(
                            gin, SkorokhodTolerances::monte_carlo(dt, scale * tol_scale)));
                    } else {
                        result.reports.push_back(residual_g_bsde(gin));
                    }
                }
            } else if (check == "oracle-equivalence") {
                if (config.backend != "finite-oracle")
                    throw std::runtime_error("oracle-equivalence requires the finite backend");
                auto system = build_reduced_system(pl.spec, pl.model);
                SolverOptions opts;
                opts.fp_tol = config.fp_tol;
                opts.fp_max_iter = config.fp_max_iter;
                auto engine = pl.spec.barrier
                                  ? solve_jump_bsde(system.gen, system.driver, system.mart,
                                                    system.terminal, pl.estimator(), opts,
                                                    &*system.barrier)
                                  : solve_jump_bsde(system.gen, system.driver, system.mart,
                                                    system.terminal, pl.estimator(), opts);
                auto oracle = solve_tree_exact(*pl.finite, system.gen, system.driver, system.mart,
                                               system.terminal,
                                               system.barrier ? &*system.barrier : nullptr);
                ResidualReport rep;
                rep.name = "oracle-equivalence";
                rep.tolerance = 1e-10;
                for (std::size_t w = 0; w < engine.y.n_paths(); ++w)
                    for (std::size_t u = 0; u < pl.grid->size(); ++u)
                        rep.max_abs = std::max(
                            rep.max_abs, std::abs(engine.y.path(w).at(u) - oracle.y.path(w).at(u)));
                rep.metric = rep.max_abs;
                rep.pass = rep.metric <= rep.tolerance;
                result.reports.push_back(rep);
            } else if (check == "zero-gen-smoke") {
                if (!lifted) throw std::runtime_error("zero-gen-smoke needs the reduce-lift stage");
                double term_mean = 0.0, term_sq = 0.0;
                const std::size_t P = lifted->y_hat.n_paths();
                for (std::size_t p = 0; p < P; ++p) {
                    const double v = lifted->y_hat.path(p).at(lifted->horizon_node[p]);
                    term_mean += v;
                    term_sq += v * v;
                }
                term_mean /= static_cast<double>(P);
                const double se = std::sqrt(
                    std::max(0.0, term_sq / P - term_mean * term_mean) / static_cast<double>(P));
                ResidualReport rep;
                rep.name = "zero-gen-smoke";
                rep.metric = std::abs(solution.y.mean_at(0) - term_mean);
                rep.tolerance = 3.0 * se + 1e-12;
                rep.pass = rep.metric <= rep.tolerance;
                rep.details = "y0 vs terminal mean";
                result.reports.push_back(rep);
            } else if (check == "closed-form-hazard") {
                // deterministic cox: Y_0 = X e^{-lambda T} with zero generator
                const double expect = config.reward_x.value * std::exp(-config.cox_rate *
                                                                       config.horizon);
                ResidualReport rep;
                rep.name = "closed-form-hazard";
                rep.metric = std::abs(solution.y.mean_at(0) - expect) / std::abs(expect);
                rep.tolerance = 0.01 * tol_scale;
                rep.pass = rep.metric <= rep.tolerance;
                result.reports.push_back(rep);
            } else if (check == "skorokhod") {
                if (!have_solution || solution.l.empty())
                    throw std::runtime_error("skorokhod check needs a reflected solution");
                auto audit = skorokhod_audit(
                    solution.y, solution.l,
                    config.backend == "finite-oracle"
                        ? SkorokhodTolerances::oracle(tol_scale)
                        : SkorokhodTolerances::monte_carlo(dt, tol_scale));
                ResidualReport rep;
                rep.name = "skorokhod";
                rep.metric = std::max(audit.complementarity_r, audit.complementarity_g);
                rep.tolerance = audit.tol_complementarity;
                rep.pass = audit.pass;
                rep.details = audit.note;
                result.reports.push_back(rep);
            } else {
                throw std::runtime_error("unknown check '" + check + "' in verify plan");
            }
        }
        std::ofstream(dir / "report.json") << report_to_json(result.reports, config) << "\n";
        std::cout << report_table(result.reports);
    }

    for (const auto& r : result.reports)
        if (!r.pass) result.exit_code = 1;
    return result;
}

RunResult run_experiment(const ExperimentConfig& config, const std::string& out_dir) {
    RunResult combined;
    combined.out_dir = out_dir;
    std::vector<std::string> level_dirs;
    std::vector<double> dts;
    std::map<std::string, std::vector<double>> metrics;

    for (std::size_t level = 0; level < std::max<std::size_t>(1, config.refinements); ++level) {
        ExperimentConfig c = config;
        const std::size_t div = std::size_t(1) << (config.refinements - 1 - level);
        c.steps = std::max<std::size_t>(2, config.steps / div);
        const std::string dir = out_dir + "/level-" + std::to_string(level);
        StageSelection stages =
            config.barrier ? StageSelection::all_rbsde() : StageSelection::all_bsde();
        if (config.backend == "finite-oracle") {
            stages.solve_bsde = stages.solve_rbsde = false;
            stages.reduce_lift = false;
        }
        auto res = run_stages(c, dir, stages);
        combined.exit_code = std::max(combined.exit_code, res.exit_code);
        level_dirs.push_back(dir);
        dts.push_back(c.horizon / static_cast<double>(c.steps));
        for (const auto& r : res.reports) metrics[r.name].push_back(r.metric);
        if (level + 1 == std::max<std::size_t>(1, config.refinements))
            combined.reports = res.reports;
        if (config.backend == "finite-oracle") break;  // grid fixed by the tree
    }

    if (dts.size() >= 2) {
        json slopes;
        for (auto& [name, ms] : metrics) {
            if (ms.size() != dts.size()) continue;
            const double s = fit_loglog_slope(dts, ms);
            slopes[name] = {{"dt", dts}, {"metric", ms}, {"slope", s}};
            for (auto& r : combined.reports)
                if (r.name == name) {
                    r.slope = s;
                    r.refinement_dt = dts;
                    r.refinement_metric = ms;
                }
        }
        std::ofstream(fs::path(out_dir) / "slopes.json") << slopes.dump(2) << "\n";
        std::ofstream(fs::path(out_dir) / "report.json")
            << report_to_json(combined.reports, config) << "\n";
    }
    return combined;
}

int collate_report(const std::vector<std::string>& run_dirs, const std::string& out_path) {
    fs::create_directories(out_path);
    std::vector<std::string> header{"run", "check", "dt", "metric", "tolerance", "pass", "slope"};
    std::ofstream out(fs::path(out_path) / "comparison.csv", std::ios::binary);
    for (std::size_t i = 0; i < header.size(); ++i)
        out << header[i] << (i + 1 < header.size() ? "," : "\r\n");

    std::map<std::string, std::vector<std::pair<double, double>>> series;
    for (std::size_t run = 0; run < run_dirs.size(); ++run) {
        const fs::path dir(run_dirs[run]);
        std::ifstream in(dir / "report.json");
        if (!in) throw std::runtime_error("collate_report: missing report.json in " + run_dirs[run]);
        std::stringstream ss;
        ss << in.rdbuf();
        json j = json::parse(ss.str());
        const double dt =
            j.contains("steps") ? 1.0 / std::max(1.0, j["steps"].get<double>()) : 0.0;
        for (const auto& c : j.at("checks")) {
            char line[256];
            std::snprintf(line, sizeof(line), "%zu,%s,%.17g,%.17g,%.17g,%d,%.17g\r\n", run,
                          c.value("name", "").c_str(), dt, c.value("metric", 0.0),
                          c.value("tolerance", 0.0), c.value("pass", false) ? 1 : 0,
                          c.value("slope", std::numeric_limits<double>::quiet_NaN()));
            out << line;
            series[c.value("name", "")].push_back({dt, c.value("metric", 0.0)});
        }
    }
    // plot data: one row per (run, node) with the solution mean and band
    {
        std::ofstream plot(fs::path(out_path) / "plotdata.csv", std::ios::binary);
        plot << "run,t,mean_y,se_y\r\n";
        for (std::size_t run = 0; run < run_dirs.size(); ++run) {
            std::ifstream ts(fs::path(run_dirs[run]) / "timeseries.csv");
            if (!ts) continue;
            std::string line;
            std::getline(ts, line);  // header
            while (std::getline(ts, line)) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                std::stringstream row(line);
                std::string t, mean, se;
                std::getline(row, t, ',');
                std::getline(row, mean, ',');
                std::getline(row, se, ',');
                plot << run << ',' << t << ',' << mean << ',' << se << "\r\n";
            }
        }
    }

    // slope column per check collated across runs
    std::ofstream slopes(fs::path(out_path) / "slopes.csv", std::ios::binary);
    slopes << "check,slope\r\n";
    for (auto& [name, pts] : series) {
        std::vector<double> dts, ms;
        for (auto& [d, m] : pts)
            if (d > 0.0) {
                dts.push_back(d);
                ms.push_back(m);
            }
        const double s = fit_loglog_slope(dts, ms);
        char line[128];
        std::snprintf(line, sizeof(line), "%s,%.17g\r\n", name.c_str(), s);
        slopes << line;
    }
    return 0;
}

}  // namespace horizon
