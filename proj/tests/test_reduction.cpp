#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "horizon/g_tree.hpp"
#include "horizon/reduction.hpp"
#include "horizon/verify.hpp"

using namespace horizon;

namespace {

std::shared_ptr<FiniteFiltration> non_immersion_tree(std::size_t steps = 3) {
    auto f = std::make_shared<FiniteFiltration>(FiniteFiltration::binomial_walk(steps, 1.0));
    for (std::size_t w = 0; w < f->n_scenarios(); ++w) {
        const bool up1 = ((w >> (steps - 1)) & 1u) == 0u;
        const bool up_last = (w & 1u) == 0u;
        std::vector<double> row(steps + 2, 0.0);
        row[1] = up_last ? 0.22 : 0.06;
        row[2] = up1 ? 0.08 : 0.28;
        if (steps >= 3) row[3] = 0.12;
        double s = 0.0;
        for (std::size_t l = 0; l <= steps; ++l) s += row[l];
        row[steps + 1] = 1.0 - s;
        f->theta_law[w] = row;
    }
    f->validate();
    return f;
}

/// Bounded nonlinear spec with a jumpy user driver, a right-jump driver and
/// nontrivial recovery, on a finite-oracle model.
GBsdeSpec tree_spec(const RandomTimeModel& model, bool with_barrier = false) {
    const FiniteFiltration& f = *model.finite;
    auto grid = model.grid;
    const std::size_t N = f.n_scenarios();
    const std::size_t K = f.n_steps();
    auto M = f.ensemble("M");

    GBsdeSpec spec;
    // D1: time; D2: adapted cadlag driver jumping with the walk at node 1.
    PathEnsemble D1(grid, N), D2(grid, N);
    for (std::size_t w = 0; w < N; ++w) {
        // on a tree every increment is a jump, the clock included
        for (std::size_t u = 0; u <= K; ++u) D1.path(w).set_flat(u, grid->time(u));
        for (std::size_t u = 1; u <= K; ++u) D1.path(w).pre(u) = grid->time(u - 1);
        double acc = 0.0;
        for (std::size_t u = 0; u <= K; ++u) {
            const double pre = acc;
            if (u == 1) acc += 0.5 + 0.2 * (M.path(w).at(1) > 0 ? 1.0 : 0.0);
            D2.path(w).set(u, pre, acc, acc);
        }
    }
    spec.Dr = {D1, D2};
    PathEnsemble Dg(grid, N);
    for (std::size_t w = 0; w < N; ++w) {
        double g = 0.0;
        for (std::size_t u = 0; u <= K; ++u) {
            const double rj = u == 1 ? 0.6 : 0.0;
            Dg.path(w).set(u, g, g, g + rj);
            g += rj;
        }
    }
    spec.Dg = {Dg};
    spec.Fr = {
        [](const StepContext&, double y, std::span<const double> z, double) {
            return 0.4 * std::tanh(y) + 0.15 * (z.empty() ? 0.0 : std::tanh(z[0]));
        },
        [](const StepContext&, double y, std::span<const double>, double u) {
            return -0.3 * std::tanh(y) + 0.1 * std::tanh(u);
        }};
    spec.lip_fr = {0.4, 0.3};
    spec.lip_fr_u = 0.1;
    spec.fr_bound = 0.55;
    spec.Fg = {[](const StepContext&, double y) { return 0.35 * std::cos(y); }};
    spec.lip_fg = 0.35;

    spec.reward.tau_node.assign(N, K);
    spec.reward.X = PathEnsemble(grid, N);
    spec.reward.R = PathEnsemble(grid, N);
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= K; ++u) {
            spec.reward.X.path(w).set_flat(u, 0.8 + 0.3 * std::tanh(M.path(w).at(u)));
            spec.reward.R.path(w).set_flat(u, 0.4 + 0.2 * std::sin(M.path(w).at(u)));
            if (u > 0) {
                spec.reward.X.path(w).pre(u) = 0.8 + 0.3 * std::tanh(M.path(w).at(u - 1));
                spec.reward.R.path(w).pre(u) = 0.4 + 0.2 * std::sin(M.path(w).at(u - 1));
            }
        }
    spec.reward.bound = 1.2;

    if (with_barrier) {
        PathEnsemble bar(grid, N);
        for (std::size_t w = 0; w < N; ++w)
            for (std::size_t u = 0; u <= K; ++u)
                bar.path(w).set_flat(u, 0.55 - 0.05 * grid->time(u));
        for (std::size_t w = 0; w < N; ++w) {
            // keep the terminal admissible
            const double t = spec.reward.X.path(w).at(K);
            spec.reward.X.path(w).set_flat(K, std::max(t, bar.path(w).at(K) + 0.01));
        }
        spec.barrier = bar;
    }
    return spec;
}

PathEnsemble lift_to_atoms(const EnlargedSpace& enl, const PathEnsemble& per_scenario) {
    return enl.lift_ensemble(per_scenario);
}

}  // namespace

TEST_CASE("reduce_reward: the three displayed branches") {
    auto fp = non_immersion_tree();
    auto model = build_finite_model(fp);
    const std::size_t N = fp->n_scenarios();
    auto M = fp->ensemble("M");

    RewardSpec reward;
    reward.tau_node.assign(N, 2);
    reward.X = PathEnsemble(model.grid, N);
    reward.R = PathEnsemble(model.grid, N);
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= 3; ++u) {
            reward.X.path(w).set_flat(u, 1.0 + 0.5 * M.path(w).at(u));
            reward.R.path(w).set_flat(u, 0.3 + 0.1 * M.path(w).at(u));
        }

    auto xtau = reduce_reward(reward);
    // R == X collapses to the stopped recovery
    RewardSpec same = reward;
    same.X = reward.R;
    auto xtau_same = reduce_reward(same);
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= 3; ++u)
            CHECK(xtau_same.path(w).at(u) ==
                  doctest::Approx(reward.R.path(w).at(std::min<std::size_t>(u, 2)))
                      .epsilon(1e-14));
    // theta after tau picks the pre-default payoff at tau
    for (std::size_t w = 0; w < N; ++w)
        CHECK(xtau.path(w).at(3) == doctest::Approx(reward.X.path(w).at(2)).epsilon(1e-14));
    // enumeration: X-hat at tau equals X(tau) evaluated at every theta
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t th = 1; th <= 3; ++th) {
            const double xhat = th <= 2 ? reward.R.path(w).at(th) : reward.X.path(w).at(2);
            CHECK(xtau.path(w).at(th) == doctest::Approx(xhat).epsilon(1e-14));
        }
}

TEST_CASE("effective generator: correction weight and cancellations") {
    auto grid = make_uniform_grid(1.0, 100);
    PoissonShockParams prm;
    prm.lambda = 0.4;
    prm.b = 0.3;
    prm.sigma = 1.0;
    prm.p = 0.4;
    prm.paths = 60;
    prm.seed = 9;
    prm.poisson_intensity = 3.0;
    auto model = build_poisson_shock_model(prm, grid);
    PathEnsemble R(grid, prm.paths, 0.25);
    std::vector<FGenerator> Fr = {
        [](const StepContext&, double y, std::span<const double>, double) {
            return std::tanh(y);
        }};
    auto eff = effective_generator(Fr, model, R);
    std::vector<double> z0;
    bool saw_jump = false;
    for (std::size_t p = 0; p < prm.paths; ++p) {
        const std::size_t t1 = model.jump_node[p];
        for (std::size_t u = 0; u < grid->size(); ++u) {
            const StepContext ctx{p, u, grid->time(u)};
            const double base = std::tanh(0.7);
            const double got = eff[0](ctx, 0.7, z0, 0.0);
            if (t1 == kNever || u != t1) {
                CHECK(got == doctest::Approx(base).epsilon(1e-14));  // dA^o = 0
            } else {
                saw_jump = true;
                const double weight = (1.0 - prm.p) / prm.p;  // dA^o / G at T1
                CHECK(got ==
                      doctest::Approx(base + (std::tanh(0.25) - base) * weight).epsilon(1e-10));
                // y = R makes the correction vanish
                CHECK(eff[0](ctx, 0.25, z0, 0.0) ==
                      doctest::Approx(std::tanh(0.25)).epsilon(1e-14));
            }
        }
    }
    CHECK(saw_jump);
}

TEST_CASE("bar transformation: round trip, boundedness, dropped drift") {
    auto fp = non_immersion_tree();
    auto model = build_finite_model(fp);
    auto spec = tree_spec(model);
    const std::size_t N = fp->n_scenarios();

    // round trip on arbitrary ensembles wherever G >= 1e-6
    PathEnsemble y(model.grid, N);
    std::vector<PathEnsemble> z{PathEnsemble(model.grid, N)};
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= 3; ++u) {
            y.path(w).set_flat(u, std::sin(1.0 + w + u));
            z[0].path(w).set_flat(u, std::cos(0.5 * w + u));
        }
    auto y0 = y;
    auto z0 = z;
    transform_forward(model, y, z);
    transform_inverse(model, y, z);
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= 3; ++u) {
            if (model.G.path(w).at(u) < 1e-6) continue;
            CHECK(std::abs(y.path(w).at(u) - y0.path(w).at(u)) < 1e-12);
            CHECK(std::abs(z[0].path(w).at(u) - z0[0].path(w).at(u)) < 1e-12);
        }

    // transformed system: no drift components, |Fbar| <= declared bound
    auto plain = build_reduced_system(spec, model);
    auto bar = build_transformed_system(spec, model);
    CHECK(plain.driver.d_r.size() == spec.Dr.size() + 1 + 1);  // Gamma + one drift (nu != 0)
    CHECK(bar.driver.d_r.size() == spec.Dr.size() + 1);        // Gamma only
    std::vector<double> zrow{0.3};
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= 3; ++u) {
            const StepContext ctx{w, u, model.grid->time(u)};
            const double v = bar.gen.f_r[0](ctx, 0.0, 0.4, zrow, 0.1);
            CHECK(std::abs(v) <= spec.fr_bound + 1e-12);  // Gtilde <= 1 transfers the bound
        }
}

TEST_CASE("compute_U: cancellations and the two algebraic routes") {
    auto fp = non_immersion_tree();
    auto model = build_finite_model(fp);
    auto spec = tree_spec(model);
    const std::size_t N = fp->n_scenarios();

    // Y == R makes U vanish
    std::vector<PathEnsemble> z{PathEnsemble(model.grid, N), PathEnsemble(model.grid, N)};
    auto U0 = compute_U(spec.reward.R, z, spec, model);
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= 3; ++u) CHECK(std::abs(U0.path(w).at(u)) < 1e-12);

    // continuous driver: U = R - Y
    GBsdeSpec cont = spec;
    for (auto& D : cont.Dr)
        for (std::size_t w = 0; w < N; ++w)
            for (std::size_t u = 0; u <= 3; ++u) {
                const double v = D.path(w).at(u);
                D.path(w).set(u, v, v, v);  // kill the jumps
            }
    auto U1 = compute_U(spec.reward.X, z, cont, model);
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= 3; ++u)
            CHECK(U1.path(w).at(u) == doctest::Approx(spec.reward.R.path(w).at(u) -
                                                      spec.reward.X.path(w).at(u))
                                          .epsilon(1e-13));

    // two routes: the bar-space display against the direct formula; the
    // first generator depends on z only, so only the Gamma jump contributes
    GBsdeSpec brown;
    brown.Dr = {spec.Dr[0], model.Gamma};
    brown.Fr = {[](const StepContext&, double, std::span<const double> z, double) {
                    return 0.2 * (z.empty() ? 0.0 : z[0]);
                },
                [](const StepContext&, double y, std::span<const double>, double) {
                    return -0.25 * std::tanh(y);
                }};
    brown.lip_fr = {0.0, 0.25};
    brown.reward = spec.reward;
    PathEnsemble Y(model.grid, N);
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= 3; ++u)
            Y.path(w).set_flat(u, 0.3 + 0.1 * std::cos(double(w + u)));
    auto U_direct = compute_U(Y, z, brown, model);
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 0; u <= 3; ++u) {
            const double g = model.G.path(w).at(u);
            const double gt = model.Gtilde.path(w).at(u);
            const double dGam = model.Gamma.path(w).left_jump(u);
            const double r = spec.reward.R.path(w).at(u);
            const double ybar = g * Y.path(w).at(u);
            auto F2bar = [&](double v) { return gt * (-0.25 * std::tanh(v / g)); };
            const double route_b =
                (r - ybar / g) - (F2bar(g * r) - F2bar(ybar)) / gt * dGam;
            CHECK(U_direct.path(w).at(u) == doctest::Approx(route_b).epsilon(1e-12));
        }
}

TEST_CASE("exact round trip on the finite oracle: lift direction") {
    auto fp = non_immersion_tree();
    auto model = build_finite_model(fp);
    auto spec = tree_spec(model);
    EnlargedSpace enl(*fp);

    auto fsol = solve_f_tree_pathwise(spec, model);

    // the F-equation holds pathwise and exactly
    FResidualInputs fin;
    fin.spec = &spec;
    fin.model = &model;
    fin.solution = &fsol;
    fin.exact = true;
    fin.tolerance = 1e-10;
    auto frep = residual_f_bsde(fin);
    CAPTURE(frep.max_abs);
    CHECK(frep.pass);
    CHECK(frep.max_abs < 1e-12);

    // lift to the enlarged space and check the G-equation atom by atom
    SolutionBundle atom_sol;
    atom_sol.y = lift_to_atoms(enl, fsol.y);
    for (const auto& zk : fsol.z) atom_sol.z.push_back(lift_to_atoms(enl, zk));
    atom_sol.u = lift_to_atoms(enl, fsol.u);
    RewardSpec atom_reward;
    atom_reward.X = lift_to_atoms(enl, spec.reward.X);
    atom_reward.R = lift_to_atoms(enl, spec.reward.R);
    atom_reward.tau_node.resize(enl.n_atoms());
    for (std::size_t a = 0; a < enl.n_atoms(); ++a)
        atom_reward.tau_node[a] = spec.reward.tau_node[enl.scenario(a)];
    auto theta = enl.theta_nodes();
    auto lifted = lift_solution(atom_sol, model, theta, atom_reward);

    // pre-default identification is exact
    for (std::size_t a = 0; a < enl.n_atoms(); ++a) {
        const std::size_t w = enl.scenario(a);
        for (std::size_t u = 0; u < std::min(theta[a], std::size_t(4)); ++u)
            CHECK(lifted.y_hat.path(a).at(u) == doctest::Approx(fsol.y.path(w).at(u)));
        if (theta[a] != kNever && theta[a] <= 3)
            CHECK(lifted.y_hat.path(a).at(theta[a]) ==
                  doctest::Approx(spec.reward.R.path(w).at(theta[a])));
    }

    std::vector<std::size_t> scen(enl.n_atoms());
    for (std::size_t a = 0; a < enl.n_atoms(); ++a) scen[a] = enl.scenario(a);
    GResidualInputs gin;
    gin.spec = &spec;
    gin.model = &model;
    gin.y_hat = &lifted.y_hat;
    gin.z_hat = &lifted.z_hat;
    gin.u_hat = &lifted.u_hat;
    gin.theta = &theta;
    gin.scenario = &scen;
    gin.exact = true;
    gin.tolerance = 1e-10;
    auto grep = residual_g_bsde(gin);
    CAPTURE(grep.max_abs);
    CAPTURE(grep.worst_path);
    CAPTURE(grep.worst_node);
    CHECK(grep.pass);
    CHECK(grep.max_abs < 1e-12);
}

TEST_CASE("exact round trip on the finite oracle: reduction direction") {
    auto fp = non_immersion_tree();
    auto model = build_finite_model(fp);
    auto spec = tree_spec(model);
    EnlargedSpace enl(*fp);

    auto gsol = solve_g_tree_exact(spec, model, enl);

    // the direct G-solution satisfies the G-equation atom by atom
    std::vector<std::size_t> scen(enl.n_atoms());
    for (std::size_t a = 0; a < enl.n_atoms(); ++a) scen[a] = enl.scenario(a);
    GResidualInputs gin;
    gin.spec = &spec;
    gin.model = &model;
    gin.y_hat = &gsol.y_hat;
    gin.z_hat = &gsol.z_hat;
    gin.u_hat = &gsol.u_hat;
    gin.theta = &gsol.theta_node;
    gin.scenario = &scen;
    gin.exact = true;
    gin.tolerance = 1e-10;
    auto grep = residual_g_bsde(gin);
    CAPTURE(grep.max_abs);
    CAPTURE(grep.worst_node);
    CHECK(grep.pass);

    // its reduction satisfies the F-equation exactly
    FResidualInputs fin;
    fin.spec = &spec;
    fin.model = &model;
    fin.solution = &gsol.f_reduced;
    fin.exact = true;
    fin.tolerance = 1e-10;
    auto frep = residual_f_bsde(fin);
    CAPTURE(frep.max_abs);
    CAPTURE(frep.worst_node);
    CHECK(frep.pass);

    // and coincides with the pathwise F-solution (uniqueness)
    auto fsol = solve_f_tree_pathwise(spec, model);
    for (std::size_t w = 0; w < fp->n_scenarios(); ++w)
        for (std::size_t u = 0; u <= 3; ++u)
            CHECK(std::abs(gsol.f_reduced.y.path(w).at(u) - fsol.y.path(w).at(u)) < 1e-10);
}

TEST_CASE("exact reflected round trip preserves the Skorokhod conditions") {
    auto fp = non_immersion_tree();
    auto model = build_finite_model(fp);
    auto spec = tree_spec(model, /*with_barrier=*/true);
    EnlargedSpace enl(*fp);

    auto fsol = solve_f_tree_pathwise(spec, model);
    FResidualInputs fin;
    fin.spec = &spec;
    fin.model = &model;
    fin.solution = &fsol;
    fin.exact = true;
    fin.tolerance = 1e-10;
    auto frep = residual_f_rbsde(fin, SkorokhodTolerances::oracle());
    CAPTURE(frep.max_abs);
    CAPTURE(frep.details);
    CHECK(frep.pass);

    // obstacle must actually bind somewhere
    double total_l = 0.0;
    for (std::size_t w = 0; w < fp->n_scenarios(); ++w)
        total_l += fsol.l.l_r_interior.path(w).at(3) + fsol.l.l_g.path(w).post(3);
    CHECK(total_l > 1e-8);

    SolutionBundle atom_sol;
    atom_sol.y = lift_to_atoms(enl, fsol.y);
    for (const auto& zk : fsol.z) atom_sol.z.push_back(lift_to_atoms(enl, zk));
    atom_sol.u = lift_to_atoms(enl, fsol.u);
    atom_sol.l.l_r_interior = lift_to_atoms(enl, fsol.l.l_r_interior);
    atom_sol.l.l_r_jump = lift_to_atoms(enl, fsol.l.l_r_jump);
    atom_sol.l.l_g = lift_to_atoms(enl, fsol.l.l_g);
    atom_sol.l.barrier = lift_to_atoms(enl, fsol.l.barrier);
    RewardSpec atom_reward;
    atom_reward.X = lift_to_atoms(enl, spec.reward.X);
    atom_reward.R = lift_to_atoms(enl, spec.reward.R);
    atom_reward.tau_node.assign(enl.n_atoms(), 3);
    auto theta = enl.theta_nodes();
    auto lifted = lift_solution(atom_sol, model, theta, atom_reward);

    GBsdeSpec atom_spec_barrier = spec;  // barrier needed atom-indexed for the audit
    std::vector<std::size_t> scen(enl.n_atoms());
    for (std::size_t a = 0; a < enl.n_atoms(); ++a) scen[a] = enl.scenario(a);
    GResidualInputs gin;
    gin.spec = &spec;
    gin.model = &model;
    gin.y_hat = &lifted.y_hat;
    gin.z_hat = &lifted.z_hat;
    gin.u_hat = &lifted.u_hat;
    gin.l_hat = &lifted.l_hat;
    gin.theta = &theta;
    gin.scenario = &scen;
    gin.exact = true;
    gin.tolerance = 1e-10;
    auto grep = residual_g_rbsde(gin, SkorokhodTolerances::oracle());
    CAPTURE(grep.max_abs);
    CAPTURE(grep.details);
    CAPTURE(grep.worst_node);
    CHECK(grep.pass);

    // reduction direction, reflected
    auto gsol = solve_g_tree_exact(spec, model, enl);
    FResidualInputs fin2;
    fin2.spec = &spec;
    fin2.model = &model;
    fin2.solution = &gsol.f_reduced;
    fin2.exact = true;
    fin2.tolerance = 1e-10;
    auto frep2 = residual_f_rbsde(fin2, SkorokhodTolerances::oracle());
    CAPTURE(frep2.max_abs);
    CAPTURE(frep2.details);
    CHECK(frep2.pass);
}

TEST_CASE("reduced solve on cox: deterministic-hazard closed forms") {
    const double lambda = 0.5, c = 1.4;
    auto grid = make_uniform_grid(1.0, 200);
    const std::size_t P = 64;
    PathEnsemble hazard(grid, P);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t u = 0; u < grid->size(); ++u)
            hazard.path(p).set_flat(u, lambda * grid->time(u));
    auto model =
        build_cox_model(hazard, {}, [](std::size_t, std::size_t) { return std::vector<double>{}; });

    GBsdeSpec spec;
    spec.reward.tau_node.assign(P, grid->size() - 1);
    spec.reward.X = PathEnsemble(grid, P, c);
    spec.reward.R = PathEnsemble(grid, P, 0.0);
    auto sys = build_reduced_system(spec, model);
    auto ce = std::make_shared<RegressionCE>(
        P, [](std::size_t, std::size_t) { return std::vector<double>{}; }, 0);
    auto sol = solve_reduced_F_bsde(sys, ce);
    CHECK(sol.y.path(0).at(0) == doctest::Approx(c * std::exp(-lambda)).epsilon(0.01));

    // full recovery R = X = c freezes the solution at c
    GBsdeSpec full = spec;
    full.reward.R = PathEnsemble(grid, P, c);
    auto sol2 = solve_reduced_F_bsde(build_reduced_system(full, model), ce);
    for (std::size_t u = 0; u < grid->size(); u += 37)
        CHECK(sol2.y.path(0).at(u) == doctest::Approx(c).epsilon(1e-9));

    // transformed route agrees on the deterministic model
    auto bar = build_transformed_system(spec, model);
    auto sol3 = solve_reduced_F_bsde(bar, ce);
    CHECK(sol3.y.path(0).at(0) == doctest::Approx(c * std::exp(-lambda)).epsilon(1e-9));
}

TEST_CASE("lift bookkeeping on explicit branches") {
    auto fp = non_immersion_tree();
    auto model = build_finite_model(fp);
    auto spec = tree_spec(model);
    auto fsol = solve_f_tree_pathwise(spec, model);
    const std::size_t N = fp->n_scenarios();

    // theta beyond the horizon: Y-hat is the F-solution with terminal X_tau
    std::vector<std::size_t> theta_inf(N, kNever);
    auto lift1 = lift_solution(fsol, model, theta_inf, spec.reward);
    for (std::size_t w = 0; w < N; ++w) {
        CHECK(lift1.y_hat.path(w).at(3) ==
              doctest::Approx(spec.reward.X.path(w).at(3)).epsilon(1e-12));
        for (std::size_t u = 0; u <= 3; ++u)
            CHECK(lift1.y_hat.path(w).at(u) == doctest::Approx(fsol.y.path(w).at(u)));
    }

    // theta at node 2: exact recovery patch and frozen tail
    std::vector<std::size_t> theta2(N, 2);
    auto lift2 = lift_solution(fsol, model, theta2, spec.reward);
    for (std::size_t w = 0; w < N; ++w) {
        CHECK(lift2.y_hat.path(w).at(2) ==
              doctest::Approx(spec.reward.R.path(w).at(2)).epsilon(1e-14));
        CHECK(lift2.y_hat.path(w).at(3) ==
              doctest::Approx(spec.reward.R.path(w).at(2)).epsilon(1e-14));
        CHECK(lift2.y_hat.path(w).at(1) == doctest::Approx(fsol.y.path(w).at(1)));
        CHECK(lift2.z_hat[0].path(w).at(3) == 0.0);
    }
}

TEST_CASE("compute_U refuses a non-contractive u dependence") {
    auto fp = non_immersion_tree();
    auto model = build_finite_model(fp);
    auto spec = tree_spec(model);
    spec.Fr = {[](const StepContext&, double y, std::span<const double>, double u) {
        return 0.4 * y + 2.0 * u;  // u coupling far above the contraction bound
    }};
    spec.lip_fr = {0.4};
    spec.lip_fr_u = 2.0;
    std::vector<PathEnsemble> z{PathEnsemble(model.grid, fp->n_scenarios())};
    CHECK_THROWS_AS(compute_U(spec.reward.X, z, spec, model), std::runtime_error);
}

TEST_CASE("transformed assembly refuses a vanished survival probability") {
    // G hits zero at eta when all mass sits strictly before the last step
    auto f2 = std::make_shared<FiniteFiltration>(FiniteFiltration::binomial_walk(2, 1.0));
    for (std::size_t w = 0; w < f2->n_scenarios(); ++w)
        f2->theta_law[w] = {0.0, 0.6, 0.4, 0.0};
    f2->validate();
    auto model = build_finite_model(f2);
    GBsdeSpec spec;
    const std::size_t N = f2->n_scenarios();
    spec.reward.tau_node.assign(N, 2);
    spec.reward.X = PathEnsemble(model.grid, N, 1.0);
    spec.reward.R = PathEnsemble(model.grid, N, 0.2);
    CHECK_THROWS_AS(build_transformed_system(spec, model), std::runtime_error);
}

TEST_CASE("randomized theta laws keep both round-trip directions exact") {
    std::mt19937_64 rng(81520);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> ksteps(2, 4);
    for (int rep = 0; rep < 12; ++rep) {
        const std::size_t K = static_cast<std::size_t>(ksteps(rng));
        auto f = FiniteFiltration::binomial_walk(K, 1.0);
        for (std::size_t w = 0; w < f.n_scenarios(); ++w) {
            // random masses keyed on arbitrary coordinates, bounded away from
            // exhausting the tail so G stays positive
            std::vector<double> row(K + 2, 0.0);
            double total = 0.0;
            for (std::size_t l = 1; l <= K; ++l) {
                row[l] = 0.3 * unif(rng) * ((w >> (l % K)) & 1u ? 1.0 : 0.6);
                total += row[l];
            }
            const double cap = 0.8;
            if (total > cap)
                for (std::size_t l = 1; l <= K; ++l) row[l] *= cap / total;
            total = 0.0;
            for (std::size_t l = 1; l <= K; ++l) total += row[l];
            row[K + 1] = 1.0 - total;
            f.theta_law[w] = row;
        }
        f.validate();
        auto fp = std::make_shared<FiniteFiltration>(f);
        auto model = build_finite_model(fp);
        EnlargedSpace enl(*fp);
        auto spec = tree_spec(model, rep % 3 == 0);
        CAPTURE(rep);

        auto gsol = solve_g_tree_exact(spec, model, enl);
        std::vector<std::size_t> scen(enl.n_atoms());
        for (std::size_t a = 0; a < enl.n_atoms(); ++a) scen[a] = enl.scenario(a);
        GResidualInputs gin;
        gin.spec = &spec;
        gin.model = &model;
        gin.y_hat = &gsol.y_hat;
        gin.z_hat = &gsol.z_hat;
        gin.u_hat = &gsol.u_hat;
        gin.theta = &gsol.theta_node;
        gin.scenario = &scen;
        gin.exact = true;
        gin.tolerance = 1e-10;
        ResidualReport grep;
        if (spec.barrier) {
            gin.l_hat = &gsol.l_hat;
            grep = residual_g_rbsde(gin, SkorokhodTolerances::oracle());
        } else {
            grep = residual_g_bsde(gin);
        }
        CAPTURE(grep.max_abs);
        CHECK(grep.pass);

        FResidualInputs fin;
        fin.spec = &spec;
        fin.model = &model;
        fin.solution = &gsol.f_reduced;
        fin.exact = true;
        fin.tolerance = 1e-10;
        auto frep = spec.barrier ? residual_f_rbsde(fin, SkorokhodTolerances::oracle())
                                 : residual_f_bsde(fin);
        CAPTURE(frep.max_abs);
        CHECK(frep.pass);
    }
}
