#include "horizon/g_tree.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <stdexcept>

namespace horizon {

namespace {

std::map<std::size_t, std::vector<std::size_t>> group_by_cell(
    const std::vector<std::size_t>& cell_row, const std::vector<std::size_t>& members) {
    std::map<std::size_t, std::vector<std::size_t>> out;
    for (std::size_t w : members) out[cell_row[w]].push_back(w);
    return out;
}

double u_from_identity(const GBsdeSpec& spec, const StepContext& ctx, double y,
                       std::span<const double> z, double r) {
    std::vector<double> jumps(spec.Dr.size());
    for (std::size_t j = 0; j < spec.Dr.size(); ++j)
        jumps[j] = spec.Dr[j].path(ctx.path).left_jump(ctx.node);
    double total = 0.0;
    for (double dj : jumps) total += std::abs(dj);
    auto eval = [&](double u) {
        double corr = 0.0;
        for (std::size_t j = 0; j < spec.Fr.size(); ++j)
            if (jumps[j] != 0.0)
                corr += (spec.Fr[j](ctx, r, z, u) - spec.Fr[j](ctx, y, z, u)) * jumps[j];
        return r - y - corr;
    };
    if (spec.lip_fr_u <= 0.0 || total == 0.0) return eval(0.0);
    double u = r - y;
    for (int it = 0; it < 100; ++it) {
        const double next = eval(u);
        if (std::abs(next - u) < 1e-13) return next;
        u = next;
    }
    throw std::runtime_error("u_from_identity: fixed point failed");
}

}  // namespace

SolutionBundle solve_f_tree_pathwise(const GBsdeSpec& spec, const RandomTimeModel& model) {
    const FiniteFiltration& f = *model.finite;
    const std::size_t K = f.n_steps();
    const std::size_t N = f.n_scenarios();
    auto grid = model.grid;
    const std::size_t d = model.martingale.size();

    std::vector<PathEnsemble> Mtilde;
    for (std::size_t k = 0; k < d; ++k)
        Mtilde.push_back(deflate_martingale(model.martingale[k], k, model, BracketMode::pathwise));

    SolutionBundle sol;
    sol.y = PathEnsemble(grid, N);
    sol.z.assign(d, PathEnsemble(grid, N));
    const bool reflected = spec.barrier.has_value();
    if (reflected) {
        sol.l.l_r_interior = PathEnsemble(grid, N);
        sol.l.l_r_jump = PathEnsemble(grid, N);
        sol.l.l_g = PathEnsemble(grid, N);
        sol.l.barrier = *spec.barrier;
    }
    std::vector<std::vector<double>> lr_inc(N, std::vector<double>(K + 1, 0.0));
    std::vector<std::vector<double>> lg_inc(N, std::vector<double>(K + 1, 0.0));

    std::size_t top = 0;
    for (std::size_t w = 0; w < N; ++w) top = std::max(top, spec.reward.tau_node[w]);

    for (std::size_t v = top; v + 1 > 0; --v) {
        // terminal and frozen
        for (std::size_t w = 0; w < N; ++w)
            if (spec.reward.tau_node[w] <= v)
                sol.y.path(w).set_flat(v, spec.reward.X.path(w).at(spec.reward.tau_node[w]));

        if (v < top) {
            std::vector<std::size_t> alive;
            for (std::size_t w = 0; w < N; ++w)
                if (spec.reward.tau_node[w] > v) alive.push_back(w);
            auto cells_v = group_by_cell(f.cells[v], alive);
            for (const auto& [cid, members] : cells_v) {
                auto children = group_by_cell(f.cells[v + 1], members);
                const std::size_t E = children.size();
                if (E != d + 1)
                    throw std::runtime_error(
                        "solve_f_tree_pathwise: tree is not one-step complete");
                // unknowns: [y_post, z_1..z_d]
                Eigen::MatrixXd A(E, d + 1);
                Eigen::VectorXd b(E);
                std::vector<double> zc(d, 0.0);
                Eigen::VectorXd x(d + 1);
                x.setZero();
                for (int pass = 0; pass < 120; ++pass) {
                    std::size_t row = 0;
                    for (const auto& [ce, mem] : children) {
                        const std::size_t e = mem.front();
                        const StepContext ctx{e, v + 1, grid->time(v + 1)};
                        const double y_child = sol.y.path(e).at(v + 1);
                        const double r_child = spec.reward.R.path(e).at(v + 1);
                        const double u_child = u_from_identity(spec, ctx, y_child, zc, r_child);
                        double T = y_child;
                        double corr = 0.0;
                        for (std::size_t j = 0; j < spec.Fr.size(); ++j) {
                            const double dD = spec.Dr[j].path(e).at_increment(v + 1);
                            if (dD != 0.0) {
                                T -= spec.Fr[j](ctx, y_child, zc, u_child) * dD;
                                corr += (spec.Fr[j](ctx, r_child, zc, u_child) -
                                         spec.Fr[j](ctx, y_child, zc, u_child)) *
                                        spec.Dr[j].path(e).left_jump(v + 1);
                            }
                        }
                        const double dGam = model.Gamma.path(e).at_increment(v + 1);
                        if (dGam != 0.0) T += (r_child - y_child - corr) * dGam;
                        A(row, 0) = 1.0;
                        for (std::size_t k = 0; k < d; ++k)
                            A(row, 1 + k) = Mtilde[k].path(e).at_increment(v + 1);
                        b(row) = T;
                        ++row;
                    }
                    Eigen::VectorXd next = A.fullPivLu().solve(b);
                    const double delta = (next - x).cwiseAbs().maxCoeff();
                    x = next;
                    for (std::size_t k = 0; k < d; ++k) zc[k] = x(1 + k);
                    if (delta < 1e-13) break;
                }
                double cand = x(0);
                double lift = 0.0;
                if (reflected) {
                    const double bar = spec.barrier->path(members.front()).post(v);
                    if (bar > cand) {
                        lift = bar - cand;
                        cand = bar;
                    }
                }
                for (std::size_t w : members) {
                    sol.y.path(w).set_flat(v, cand);
                    for (std::size_t k = 0; k < d; ++k) sol.z[k].path(w).set_flat(v + 1, x(1 + k));
                    if (lift > 0.0) lr_inc[w][v + 1] = lift;
                }
            }
        }

        // right-jump link at v
        for (std::size_t w = 0; w < N; ++w) {
            if (spec.reward.tau_node[w] <= v) continue;
            bool has = false;
            for (const auto& Dg : spec.Dg)
                if (Dg.path(w).right_jump(v) != 0.0) has = true;
            if (!has) continue;
            const StepContext ctx{w, v, grid->time(v)};
            const double post = sol.y.path(w).post(v);
            auto unref = [&](double at) {
                double xx = post;
                for (std::size_t l = 0; l < spec.Dg.size(); ++l) {
                    const double dj = spec.Dg[l].path(w).right_jump(v);
                    if (dj != 0.0) xx -= spec.Fg[l](ctx, at) * dj;
                }
                return xx;
            };
            double at = unref(post);
            for (int it = 0; it < 200; ++it) {
                double next = unref(at);
                if (reflected) next = std::max(spec.barrier->path(w).at(v), next);
                if (std::abs(next - at) < 1e-13) { at = next; break; }
                at = next;
            }
            if (reflected) {
                const double lift = at - unref(at);
                if (lift > 0.0) lg_inc[w][v] = lift;
            }
            sol.y.path(w).at(v) = at;
        }
        if (v == 0) break;
    }

    // tree left limits
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t u = 1; u < grid->size(); ++u) sol.y.path(w).pre(u) = sol.y.path(w).at(u - 1);

    if (reflected) {
        for (std::size_t w = 0; w < N; ++w) {
            double aI = 0.0, aG = 0.0;
            for (std::size_t u = 0; u <= K; ++u) {
                aI += lr_inc[w][u];
                sol.l.l_r_interior.path(w).set(u, aI - lr_inc[w][u], aI, aI);
                sol.l.l_r_jump.path(w).set_flat(u, 0.0);
                sol.l.l_g.path(w).set(u, aG, aG, aG + lg_inc[w][u]);
                aG += lg_inc[w][u];
            }
        }
    }

    sol.u = compute_U(sol.y, sol.z, spec, model);
    sol.y.set_weights(f.scenario_probs);
    return sol;
}

GTreeSolution solve_g_tree_exact(const GBsdeSpec& spec, const RandomTimeModel& model,
                                 const EnlargedSpace& enl) {
    const FiniteFiltration& f = *model.finite;
    const std::size_t K = f.n_steps();
    const std::size_t N = f.n_scenarios();
    const std::size_t A_n = enl.n_atoms();
    auto grid = model.grid;
    const std::size_t d = model.martingale.size();
    const bool reflected = spec.barrier.has_value();

    std::vector<PathEnsemble> Mtilde;
    for (std::size_t k = 0; k < d; ++k)
        Mtilde.push_back(deflate_martingale(model.martingale[k], k, model, BracketMode::pathwise));

    GTreeSolution out;
    out.theta_node = enl.theta_nodes();
    out.horizon_node.resize(A_n);
    for (std::size_t a = 0; a < A_n; ++a)
        out.horizon_node[a] =
            std::min(spec.reward.tau_node[enl.scenario(a)], out.theta_node[a]);

    // per-atom value tables
    std::vector<std::vector<double>> yat(K + 1, std::vector<double>(A_n, 0.0));
    std::vector<std::vector<double>> ypost(K + 1, std::vector<double>(A_n, 0.0));
    // per-scenario F-side tables
    std::vector<std::vector<double>> zf(K + 1, std::vector<double>(N * d, 0.0));
    std::vector<std::vector<double>> uf(K + 1, std::vector<double>(N, 0.0));
    std::vector<std::vector<unsigned char>> uf_solved(K + 1, std::vector<unsigned char>(N, 0));
    std::vector<std::vector<double>> yf(K + 1, std::vector<double>(N, 0.0));
    std::vector<std::vector<double>> lr_inc(N, std::vector<double>(K + 1, 0.0));
    std::vector<std::vector<double>> lg_inc(N, std::vector<double>(K + 1, 0.0));

    // atoms grouped by (node, alive F-cell)
    std::size_t top = 0;
    for (std::size_t w = 0; w < N; ++w) top = std::max(top, spec.reward.tau_node[w]);

    for (std::size_t v = top; v + 1 > 0; --v) {
        // terminal / default values
        for (std::size_t a = 0; a < A_n; ++a) {
            const std::size_t w = enl.scenario(a);
            const std::size_t tau = spec.reward.tau_node[w];
            const std::size_t th = out.theta_node[a];
            const std::size_t stop = out.horizon_node[a];
            if (v >= stop) {
                const double terminal = (th != kNever && th <= tau)
                                            ? spec.reward.R.path(w).at(th)
                                            : spec.reward.X.path(w).at(tau);
                yat[v][a] = terminal;
                ypost[v][a] = terminal;
            }
        }
        for (std::size_t w = 0; w < N; ++w)
            if (spec.reward.tau_node[w] <= v)
                yf[v][w] = spec.reward.X.path(w).at(spec.reward.tau_node[w]);

        if (v < top) {
            // group alive atoms by the F-cell at v
            std::map<std::size_t, std::vector<std::size_t>> alive_cells;  // cell -> scenarios
            for (std::size_t w = 0; w < N; ++w)
                if (spec.reward.tau_node[w] > v) alive_cells[f.cells[v][w]].push_back(w);

            for (const auto& [cid, members] : alive_cells) {
                auto children = group_by_cell(f.cells[v + 1], members);
                const std::size_t E = children.size();
                if (E != d + 1)
                    throw std::runtime_error("solve_g_tree_exact: tree is not one-step complete");

                struct Child {
                    std::size_t rep;
                    double g, dAo, dGamma;
                    double y_alive;
                    double r_val;
                    bool has_default;
                    std::size_t u_col;  // column of its U unknown, or SIZE_MAX
                };
                std::vector<Child> ch;
                std::size_t ucols = 0;
                for (const auto& [ce, mem] : children) {
                    Child c;
                    c.rep = mem.front();
                    c.g = model.G.path(c.rep).at(v + 1);
                    c.dAo = model.Ao.path(c.rep).left_jump(v + 1);
                    c.dGamma = model.Gamma.path(c.rep).left_jump(v + 1);
                    c.r_val = spec.reward.R.path(c.rep).at(v + 1);
                    c.has_default = c.dAo > 1e-15;
                    c.u_col = c.has_default ? 1 + d + (ucols++) : SIZE_MAX;
                    if (c.g <= 0.0)
                        throw std::runtime_error(
                            "solve_g_tree_exact: G vanished before the horizon; truncate first");
                    // alive child value at v+1: any alive atom of that cell
                    c.y_alive = 0.0;
                    bool found = false;
                    for (std::size_t a = 0; a < A_n && !found; ++a)
                        if (enl.scenario(a) == c.rep && out.theta_node[a] > v + 1) {
                            c.y_alive = yat[v + 1][a];
                            found = true;
                        }
                    if (!found) {
                        // every scenario needs an alive continuation; G>0 guarantees one
                        for (std::size_t a = 0; a < A_n && !found; ++a)
                            if (f.cells[v + 1][enl.scenario(a)] == ce &&
                                out.theta_node[a] > v + 1) {
                                c.y_alive = yat[v + 1][a];
                                found = true;
                            }
                    }
                    if (!found)
                        throw std::runtime_error("solve_g_tree_exact: no alive atom in a child");
                    ch.push_back(c);
                }
                const std::size_t unknowns = 1 + d + ucols;
                std::size_t rows = 0;
                for (const auto& c : ch) rows += 1 + (c.has_default ? 1 : 0);
                if (rows != unknowns)
                    throw std::runtime_error("solve_g_tree_exact: transition system not square");

                Eigen::MatrixXd Amat(rows, unknowns);
                Eigen::VectorXd bvec(rows);
                Eigen::VectorXd x(unknowns);
                x.setZero();
                std::vector<double> zc(d, 0.0);

                for (int pass = 0; pass < 120; ++pass) {
                    Amat.setZero();
                    std::size_t row = 0;
                    for (const auto& c : ch) {
                        const StepContext ctx{c.rep, v + 1, grid->time(v + 1)};
                        const double u_c =
                            c.u_col != SIZE_MAX ? x(c.u_col)
                                                : u_from_identity(spec, ctx, c.y_alive, zc, c.r_val);
                        // alive row
                        double Ta = c.y_alive;
                        for (std::size_t j = 0; j < spec.Fr.size(); ++j) {
                            const double dD = spec.Dr[j].path(c.rep).at_increment(v + 1);
                            if (dD != 0.0) Ta -= spec.Fr[j](ctx, c.y_alive, zc, u_c) * dD;
                        }
                        Amat(row, 0) = 1.0;
                        for (std::size_t k = 0; k < d; ++k)
                            Amat(row, 1 + k) = Mtilde[k].path(c.rep).at_increment(v + 1);
                        if (c.u_col != SIZE_MAX) Amat(row, c.u_col) = -c.dGamma;
                        bvec(row) = Ta;
                        ++row;
                        if (c.has_default) {
                            double Td = c.r_val;
                            for (std::size_t j = 0; j < spec.Fr.size(); ++j) {
                                const double dD = spec.Dr[j].path(c.rep).at_increment(v + 1);
                                if (dD != 0.0) Td -= spec.Fr[j](ctx, c.r_val, zc, u_c) * dD;
                            }
                            Amat(row, 0) = 1.0;
                            for (std::size_t k = 0; k < d; ++k)
                                Amat(row, 1 + k) = Mtilde[k].path(c.rep).at_increment(v + 1);
                            Amat(row, c.u_col) = 1.0 - c.dGamma;
                            bvec(row) = Td;
                            ++row;
                        }
                    }
                    Eigen::VectorXd next = Amat.fullPivLu().solve(bvec);
                    const double delta = (next - x).cwiseAbs().maxCoeff();
                    x = next;
                    for (std::size_t k = 0; k < d; ++k) zc[k] = x(1 + k);
                    if (delta < 1e-13) break;
                }

                double cand = x(0);
                double lift = 0.0;
                if (reflected) {
                    const double bar = spec.barrier->path(members.front()).post(v);
                    if (bar > cand) {
                        lift = bar - cand;
                        cand = bar;
                    }
                }
                // store per atom (alive at v) and per scenario
                for (std::size_t a = 0; a < A_n; ++a) {
                    const std::size_t w = enl.scenario(a);
                    if (f.cells[v][w] != cid) continue;
                    if (out.theta_node[a] <= v || spec.reward.tau_node[w] <= v) continue;
                    ypost[v][a] = cand;
                    yat[v][a] = cand;  // g-link may adjust below
                }
                for (std::size_t w : members) {
                    yf[v][w] = cand;
                    for (std::size_t k = 0; k < d; ++k) zf[v + 1][w * d + k] = x(1 + k);
                    if (lift > 0.0) lr_inc[w][v + 1] = lift;
                }
                // record solved U per child cell
                for (const auto& c : ch) {
                    if (!c.has_default) continue;
                    for (const auto& [ce, mem] : children)
                        if (mem.front() == c.rep)
                            for (std::size_t w : mem) {
                                uf[v + 1][w] = x(c.u_col);
                                uf_solved[v + 1][w] = 1;
                            }
                }
            }
        }

        // right-jump link on alive atoms at v
        if (!spec.Dg.empty()) {
            for (std::size_t a = 0; a < A_n; ++a) {
                const std::size_t w = enl.scenario(a);
                if (out.theta_node[a] <= v || spec.reward.tau_node[w] <= v) continue;
                bool has = false;
                for (const auto& Dg : spec.Dg)
                    if (Dg.path(w).right_jump(v) != 0.0) has = true;
                if (!has) continue;
                const StepContext ctx{w, v, grid->time(v)};
                const double post = ypost[v][a];
                auto unref = [&](double at) {
                    double xx = post;
                    for (std::size_t l = 0; l < spec.Dg.size(); ++l) {
                        const double dj = spec.Dg[l].path(w).right_jump(v);
                        if (dj != 0.0) xx -= spec.Fg[l](ctx, at) * dj;
                    }
                    return xx;
                };
                double at = unref(post);
                for (int it = 0; it < 200; ++it) {
                    double next = unref(at);
                    if (reflected) next = std::max(spec.barrier->path(w).at(v), next);
                    if (std::abs(next - at) < 1e-13) { at = next; break; }
                    at = next;
                }
                if (reflected) {
                    const double lift = at - unref(at);
                    if (lift > 0.0) lg_inc[w][v] = lift;
                }
                yat[v][a] = at;
                yf[v][w] = at;
            }
        }
        if (v == 0) break;
    }

    // fill unsolved U nodes by the pointwise identity
    for (std::size_t v = 0; v <= K; ++v)
        for (std::size_t w = 0; w < N; ++w) {
            if (uf_solved[v][w]) continue;
            std::vector<double> zc(d, 0.0);
            for (std::size_t k = 0; k < d; ++k) zc[k] = zf[v][w * d + k];
            const StepContext ctx{w, v, grid->time(v)};
            uf[v][w] = u_from_identity(spec, ctx, yf[v][w], zc, spec.reward.R.path(w).at(v));
        }

    // package per-atom ensembles
    out.y_hat = PathEnsemble(grid, A_n);
    out.z_hat.assign(d, PathEnsemble(grid, A_n));
    out.u_hat = PathEnsemble(grid, A_n);
    for (std::size_t a = 0; a < A_n; ++a) {
        const std::size_t w = enl.scenario(a);
        LagladPath& y = out.y_hat.path(a);
        for (std::size_t v = 0; v <= K; ++v) {
            y.set(v, v == 0 ? yat[0][a] : yat[v - 1][a], yat[v][a],
                  v < out.horizon_node[a] ? ypost[v][a] : yat[v][a]);
            out.u_hat.path(a).set_flat(v, uf[v][w]);
            for (std::size_t k = 0; k < d; ++k)
                out.z_hat[k].path(a).set_flat(
                    v, v <= out.horizon_node[a] ? zf[v][w * d + k] : 0.0);
        }
        // post at the pre-link stepping slot holds between at(v) and at(v+1):
        // by construction ypost[v] was the pre-g-link value, so swap roles.
        for (std::size_t v = 0; v <= K; ++v) {
            const double post_slot = v < out.horizon_node[a] && yat[v][a] != ypost[v][a]
                                         ? ypost[v][a]
                                         : yat[v][a];
            y.post(v) = post_slot;
        }
    }
    std::vector<double> aw(A_n);
    for (std::size_t a = 0; a < A_n; ++a) aw[a] = enl.weight(a);
    out.y_hat.set_weights(aw);

    // reduced F-side bundle
    out.f_reduced.y = PathEnsemble(grid, N);
    out.f_reduced.z.assign(d, PathEnsemble(grid, N));
    out.f_reduced.u = PathEnsemble(grid, N);
    for (std::size_t w = 0; w < N; ++w) {
        for (std::size_t v = 0; v <= K; ++v) {
            out.f_reduced.y.path(w).set_flat(v, yf[v][w]);
            out.f_reduced.u.path(w).set_flat(v, uf[v][w]);
            for (std::size_t k = 0; k < d; ++k)
                out.f_reduced.z[k].path(w).set_flat(v, zf[v][w * d + k]);
        }
        for (std::size_t v = 1; v <= K; ++v)
            out.f_reduced.y.path(w).pre(v) = out.f_reduced.y.path(w).at(v - 1);
    }
    // F-side post slots at right-jump nodes: the pre-link stepping value.
    for (std::size_t w = 0; w < N; ++w)
        for (std::size_t v = 0; v <= K; ++v) {
            bool has = false;
            for (const auto& Dg : spec.Dg)
                if (!spec.Dg.empty() && Dg.path(w).right_jump(v) != 0.0) has = true;
            if (has) {
                // recover the pre-link value from any alive atom's post
                for (std::size_t a = 0; a < A_n; ++a)
                    if (enl.scenario(a) == w && out.theta_node[a] > v) {
                        out.f_reduced.y.path(w).post(v) = out.y_hat.path(a).post(v);
                        break;
                    }
            }
        }
    out.f_reduced.y.set_weights(f.scenario_probs);

    if (reflected) {
        out.l_hat.l_r_interior = PathEnsemble(grid, A_n);
        out.l_hat.l_r_jump = PathEnsemble(grid, A_n);
        out.l_hat.l_g = PathEnsemble(grid, A_n);
        // the obstacle up to the horizon is the reward process: the barrier
        // before theta, the recovery from theta on
        out.l_hat.barrier = PathEnsemble(grid, A_n);
        for (std::size_t a = 0; a < A_n; ++a) {
            const std::size_t w = enl.scenario(a);
            const std::size_t th = out.theta_node[a];
            const LagladPath& X = spec.barrier->path(w);
            LagladPath& b = out.l_hat.barrier.path(a);
            const double rec = th == kNever ? 0.0 : spec.reward.R.path(w).at(th);
            for (std::size_t u = 0; u <= K; ++u) {
                if (th == kNever || u < th)
                    b.set(u, X.pre(u), X.at(u), X.post(u));
                else if (u == th)
                    b.set(u, X.pre(u), rec, rec);
                else
                    b.set_flat(u, rec);
            }
        }
        out.f_reduced.l.l_r_interior = PathEnsemble(grid, N);
        out.f_reduced.l.l_r_jump = PathEnsemble(grid, N);
        out.f_reduced.l.l_g = PathEnsemble(grid, N);
        out.f_reduced.l.barrier = *spec.barrier;
        for (std::size_t w = 0; w < N; ++w) {
            double aI = 0.0, aG = 0.0;
            for (std::size_t u = 0; u <= K; ++u) {
                aI += lr_inc[w][u];
                out.f_reduced.l.l_r_interior.path(w).set(u, aI - lr_inc[w][u], aI, aI);
                out.f_reduced.l.l_g.path(w).set(u, aG, aG, aG + lg_inc[w][u]);
                aG += lg_inc[w][u];
            }
        }
        for (std::size_t a = 0; a < A_n; ++a) {
            const std::size_t w = enl.scenario(a);
            const std::size_t stop = out.horizon_node[a];
            double aI = 0.0, aG = 0.0;
            for (std::size_t u = 0; u <= K; ++u) {
                if (u <= stop) aI += lr_inc[w][u];
                out.l_hat.l_r_interior.path(a).set(u, aI - (u <= stop ? lr_inc[w][u] : 0.0), aI,
                                                   aI);
                const double rj = u < stop ? lg_inc[w][u] : 0.0;
                out.l_hat.l_g.path(a).set(u, aG, aG, aG + rj);
                aG += rj;
            }
        }
    }
    return out;
}

}  // namespace horizon
