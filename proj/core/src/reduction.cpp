#include "horizon/reduction.hpp"

#include <cmath>
#include <stdexcept>

namespace horizon {

namespace {


/// Pointwise u from U = R - y - sum_j (Fr_j(R,z,u) - Fr_j(y,z,u)) dD_j,
/// with a fixed point when Fr depends on u.
double pointwise_u(const GBsdeSpec& spec, const StepContext& ctx, double y,
                   std::span<const double> z, double r_value,
                   std::span<const double> dr_jumps) {
    double total_jump = 0.0;
    for (double dj : dr_jumps) total_jump += std::abs(dj);
    auto eval = [&](double u) {
        double corr = 0.0;
        for (std::size_t j = 0; j < spec.Fr.size(); ++j)
            if (dr_jumps[j] != 0.0)
                corr += (spec.Fr[j](ctx, r_value, z, u) - spec.Fr[j](ctx, y, z, u)) * dr_jumps[j];
        return r_value - y - corr;
    };
    if (spec.lip_fr_u <= 0.0 || total_jump == 0.0) return eval(0.0);
    if (2.0 * spec.lip_fr_u * total_jump >= 1.0)
        throw std::runtime_error("compute_U: u fixed point cannot contract (path " +
                                 std::to_string(ctx.path) + ", node " + std::to_string(ctx.node) +
                                 ")");
    double u = r_value - y;
    for (int it = 0; it < 100; ++it) {
        const double next = eval(u);
        if (std::abs(next - u) < 1e-13) return next;
        u = next;
    }
    throw std::runtime_error("compute_U: u fixed point failed to converge");
}

std::vector<std::vector<std::uint32_t>> scan_left_jump_nodes(
    const std::vector<const PathEnsemble*>& comps, std::size_t n_paths,
    const std::vector<std::vector<std::uint32_t>>& declared) {
    std::vector<std::vector<std::uint32_t>> out(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        std::vector<std::uint32_t> nodes = declared.empty() ? std::vector<std::uint32_t>{}
                                                            : declared[p];
        for (const PathEnsemble* e : comps) {
            const LagladPath& path = e->path(p);
            for (std::size_t u = 1; u < path.size(); ++u)
                if (path.left_jump(u) != 0.0) nodes.push_back(static_cast<std::uint32_t>(u));
        }
        std::sort(nodes.begin(), nodes.end());
        nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
        out[p] = std::move(nodes);
    }
    return out;
}

std::vector<std::vector<std::uint32_t>> scan_right_jump_nodes(
    const std::vector<const PathEnsemble*>& comps, std::size_t n_paths,
    const std::vector<std::vector<std::uint32_t>>& declared) {
    std::vector<std::vector<std::uint32_t>> out(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        std::vector<std::uint32_t> nodes = declared.empty() ? std::vector<std::uint32_t>{}
                                                            : declared[p];
        for (const PathEnsemble* e : comps) {
            const LagladPath& path = e->path(p);
            for (std::size_t u = 0; u < path.size(); ++u)
                if (path.right_jump(u) != 0.0) nodes.push_back(static_cast<std::uint32_t>(u));
        }
        std::sort(nodes.begin(), nodes.end());
        nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
        out[p] = std::move(nodes);
    }
    return out;
}

}  // namespace

PathEnsemble reduce_reward(const RewardSpec& reward) {
    const std::size_t P = reward.R.n_paths();
    PathEnsemble out(reward.R.grid_ptr(), P);
    for (std::size_t p = 0; p < P; ++p) {
        const std::size_t tau = reward.tau_node[p];
        const LagladPath& R = reward.R.path(p);
        const LagladPath& X = reward.X.path(p);
        LagladPath& o = out.path(p);
        for (std::size_t u = 0; u < o.size(); ++u) {
            if (u < tau) {
                o.set(u, R.pre(u), R.at(u), R.post(u));
            } else if (u == tau) {
                o.set(u, R.pre(u), R.at(u), X.at(tau));
            } else {
                o.set_flat(u, X.at(tau));
            }
        }
    }
    return out;
}

std::vector<FGenerator> effective_generator(const std::vector<FGenerator>& Fr,
                                            const RandomTimeModel& model, const PathEnsemble& R) {
    std::vector<FGenerator> out;
    const PathEnsemble* G = &model.G;
    const PathEnsemble* Ao = &model.Ao;
    const PathEnsemble* Rp = &R;
    for (const auto& F : Fr) {
        out.push_back([F, G, Ao, Rp](const StepContext& ctx, double y, std::span<const double> z,
                                     double u) {
            const double dAo = Ao->path(ctx.path).left_jump(ctx.node);
            const double base = F(ctx, y, z, u);
            if (dAo == 0.0) return base;
            const double g = G->path(ctx.path).at(ctx.node);
            if (g <= 0.0)
                throw std::runtime_error("effective_generator: G vanished at a correction node");
            const double r = Rp->path(ctx.path).at(ctx.node);
            return base + (F(ctx, r, z, u) - base) * dAo / g;
        });
    }
    return out;
}

namespace {

ReducedSystem assemble(const GBsdeSpec& spec, const RandomTimeModel& model, bool transformed) {
    const std::size_t P = model.n_paths();
    const std::size_t d = model.martingale.size();
    auto grid = model.grid;

    ReducedSystem sys;
    sys.model = &model;
    sys.spec = spec;
    sys.transformed = transformed;

    std::vector<const PathEnsemble*> dr_ptrs;
    for (const auto& e : spec.Dr) dr_ptrs.push_back(&e);
    dr_ptrs.push_back(&model.Gamma);
    auto h_nodes = scan_left_jump_nodes(dr_ptrs, P, spec.dr_jump_nodes);
    std::vector<const PathEnsemble*> dg_ptrs;
    for (const auto& e : spec.Dg) dg_ptrs.push_back(&e);
    auto g_nodes = scan_right_jump_nodes(dg_ptrs, P, spec.dg_jump_nodes);

    // Ratio bound for the transformed Lipschitz declaration.
    double ratio = 1.0;
    if (transformed) {
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t u = 0; u < grid->size(); ++u) {
                const double g = model.G.path(p).at(u);
                const double gt = model.Gtilde.path(p).at(u);
                if (g <= 0.0)
                    throw std::runtime_error("build_transformed_system: G vanished; truncate first");
                ratio = std::max(ratio, gt / g);
            }
    }

    // ---- engine cadlag components -------------------------------------
    sys.driver.d_r = spec.Dr;
    sys.driver.d_r.push_back(model.Gamma);
    std::vector<std::size_t> drift_mart;  // martingale index per appended drift component
    if (!transformed) {
        for (std::size_t k = 0; k < model.nu.size(); ++k) {
            bool nonzero = false;
            for (std::size_t p = 0; p < P && !nonzero; ++p)
                for (std::size_t u = 0; u < grid->size() && !nonzero; ++u)
                    if (model.nu[k].path(p).at(u) != 0.0) nonzero = true;
            if (!nonzero) continue;
            PathEnsemble drift(grid, P);
            for (std::size_t p = 0; p < P; ++p) {
                double acc = 0.0;
                for (std::size_t v = 1; v < grid->size(); ++v) {
                    const double gt = model.Gtilde.path(p).at(v - 1);
                    acc += model.nu[k].path(p).at(v - 1) * model.bracket_increment(k, p, v) /
                           (gt > 0.0 ? gt : 1.0);
                    drift.path(p).set_flat(v, acc);
                }
            }
            drift_mart.push_back(k);
            sys.driver.d_r.push_back(std::move(drift));
        }
    }
    sys.driver.h_nodes = std::move(h_nodes);
    sys.driver.d_g = spec.Dg;
    sys.driver.g_nodes = std::move(g_nodes);

    // ---- generators -----------------------------------------------------
    const RandomTimeModel* m = &model;
    const GBsdeSpec* sp = &sys.spec;

    auto u_feed = [sp, m](const StepContext& ctx, double y, std::span<const double> z) {
        std::vector<double> jumps(sp->Dr.size());
        for (std::size_t j = 0; j < sp->Dr.size(); ++j)
            jumps[j] = sp->Dr[j].path(ctx.path).left_jump(ctx.node);
        return pointwise_u(*sp, ctx, y, z, sp->reward.R.path(ctx.path).at(ctx.node), jumps);
    };

    if (!transformed) {
        for (std::size_t j = 0; j < spec.Fr.size(); ++j) {
            const FGenerator F = spec.Fr[j];
            sys.gen.f_r.push_back([F](const StepContext& ctx, double, double y,
                                      std::span<const double> z, double u) {
                return -F(ctx, y, z, u);
            });
        }
        sys.gen.f_r.push_back([sp](const StepContext& ctx, double, double y,
                                   std::span<const double>, double) {
            return sp->reward.R.path(ctx.path).at(ctx.node) - y;
        });
        for (std::size_t k : drift_mart)
            sys.gen.f_r.push_back([k](const StepContext&, double, double,
                                      std::span<const double> z, double) {
                return k < z.size() ? z[k] : 0.0;
            });
        sys.gen.lip_fr = spec.lip_fr;
        sys.gen.lip_fr.push_back(1.0);
        for (std::size_t s = 0; s < drift_mart.size(); ++s) sys.gen.lip_fr.push_back(0.0);

        sys.gen.h = [sp, m](const StepContext& ctx, double, double y) {
            std::vector<double> z0;  // jump terms are z-free in the supported scope
            std::vector<double> jumps(sp->Dr.size());
            for (std::size_t j = 0; j < sp->Dr.size(); ++j)
                jumps[j] = sp->Dr[j].path(ctx.path).left_jump(ctx.node);
            const double r = sp->reward.R.path(ctx.path).at(ctx.node);
            const double u = pointwise_u(*sp, ctx, y, z0, r, jumps);
            double h = 0.0;
            double corr = 0.0;
            for (std::size_t j = 0; j < sp->Fr.size(); ++j) {
                if (jumps[j] != 0.0) {
                    h += sp->Fr[j](ctx, y, z0, u) * jumps[j];
                    corr += (sp->Fr[j](ctx, r, z0, u) - sp->Fr[j](ctx, y, z0, u)) * jumps[j];
                }
            }
            const double dGamma = m->Gamma.path(ctx.path).left_jump(ctx.node);
            if (dGamma != 0.0) h -= (r - y - corr) * dGamma;
            return h;
        };
        sys.gen.u_map = u_feed;

        sys.terminal.node = spec.reward.tau_node;
        sys.terminal.value.resize(P);
        for (std::size_t p = 0; p < P; ++p)
            sys.terminal.value[p] = spec.reward.X.path(p).at(spec.reward.tau_node[p]);
        sys.barrier = spec.barrier;
    } else {
        // bar coordinates: Ybar = G Y, generators weighted by Gtilde / G.
        auto bar_z = [m](const StepContext& ctx, std::span<const double> zbar, double ybar,
                         std::vector<double>& out) {
            const double g = m->G.path(ctx.path).at(ctx.node);
            const double gpre = m->G.path(ctx.path).pre(ctx.node);
            out.resize(zbar.size());
            for (std::size_t k = 0; k < zbar.size(); ++k) {
                const double nu = m->nu.empty() ? 0.0 : m->nu[k].path(ctx.path).at(ctx.node);
                out[k] = (zbar[k] - ybar * nu / g) / (gpre > 0.0 ? gpre : g);
            }
        };
        for (std::size_t j = 0; j < spec.Fr.size(); ++j) {
            const FGenerator F = spec.Fr[j];
            sys.gen.f_r.push_back([F, m, bar_z](const StepContext& ctx, double, double ybar,
                                                std::span<const double> zbar, double u) {
                const double g = m->G.path(ctx.path).at(ctx.node);
                const double gt = m->Gtilde.path(ctx.path).at(ctx.node);
                thread_local std::vector<double> zplain;
                bar_z(ctx, zbar, ybar, zplain);
                return -gt * F(ctx, ybar / g, zplain, u);
            });
        }
        sys.gen.f_r.push_back([sp, m](const StepContext& ctx, double, double,
                                      std::span<const double>, double) {
            return m->Gtilde.path(ctx.path).at(ctx.node) *
                   sp->reward.R.path(ctx.path).at(ctx.node);
        });
        sys.gen.lip_fr.clear();
        for (double l : spec.lip_fr) sys.gen.lip_fr.push_back(l * ratio);
        sys.gen.lip_fr.push_back(0.0);

        sys.gen.h = [sp, m, bar_z](const StepContext& ctx, double, double ybar) {
            std::vector<double> z0;
            std::vector<double> jumps(sp->Dr.size());
            for (std::size_t j = 0; j < sp->Dr.size(); ++j)
                jumps[j] = sp->Dr[j].path(ctx.path).left_jump(ctx.node);
            const double g = m->G.path(ctx.path).at(ctx.node);
            const double gt = m->Gtilde.path(ctx.path).at(ctx.node);
            const double r = sp->reward.R.path(ctx.path).at(ctx.node);
            const double y = ybar / g;
            const double u = pointwise_u(*sp, ctx, y, z0, r, jumps);
            double h = 0.0, corr = 0.0;
            for (std::size_t j = 0; j < sp->Fr.size(); ++j) {
                if (jumps[j] != 0.0) {
                    h += gt * sp->Fr[j](ctx, y, z0, u) * jumps[j];
                    corr += gt * (sp->Fr[j](ctx, r, z0, u) - sp->Fr[j](ctx, y, z0, u)) * jumps[j];
                }
            }
            const double dGamma = m->Gamma.path(ctx.path).left_jump(ctx.node);
            if (dGamma != 0.0) h -= (gt * r - corr) * dGamma;
            return h;
        };

        sys.terminal.node = spec.reward.tau_node;
        sys.terminal.value.resize(P);
        for (std::size_t p = 0; p < P; ++p)
            sys.terminal.value[p] = model.G.path(p).at(spec.reward.tau_node[p]) *
                                    spec.reward.X.path(p).at(spec.reward.tau_node[p]);
        if (spec.barrier) {
            PathEnsemble bar(grid, P);
            for (std::size_t p = 0; p < P; ++p)
                for (std::size_t u = 0; u < grid->size(); ++u)
                    bar.path(p).set(u,
                                    model.G.path(p).pre(u) * spec.barrier->path(p).pre(u),
                                    model.G.path(p).at(u) * spec.barrier->path(p).at(u),
                                    model.G.path(p).post(u) * spec.barrier->path(p).post(u));
            sys.barrier = std::move(bar);
        }
    }

    // right-jump generators are shared between the two coordinate systems up
    // to the G weight.
    for (std::size_t l = 0; l < spec.Fg.size(); ++l) {
        const FgGenerator F = spec.Fg[l];
        if (!transformed) {
            sys.gen.f_g.push_back(
                [F](const StepContext& ctx, double y, double) { return F(ctx, y); });
        } else {
            sys.gen.f_g.push_back([F, m](const StepContext& ctx, double ybar, double) {
                const double g = m->G.path(ctx.path).at(ctx.node);
                return g * F(ctx, ybar / g);
            });
        }
    }
    sys.gen.lip_fg = transformed ? spec.lip_fg * ratio : spec.lip_fg;

    sys.mart.components = model.martingale;
    return sys;
}

}  // namespace

ReducedSystem build_reduced_system(const GBsdeSpec& spec, const RandomTimeModel& model) {
    return assemble(spec, model, false);
}

ReducedSystem build_transformed_system(const GBsdeSpec& spec, const RandomTimeModel& model) {
    return assemble(spec, model, true);
}

void transform_forward(const RandomTimeModel& model, PathEnsemble& y,
                       std::vector<PathEnsemble>& z) {
    const std::size_t P = y.n_paths();
    for (std::size_t p = 0; p < P; ++p) {
        const LagladPath& G = model.G.path(p);
        LagladPath& yp = y.path(p);
        for (std::size_t k = 0; k < z.size(); ++k) {
            LagladPath& zp = z[k].path(p);
            for (std::size_t u = 1; u < yp.size(); ++u) {
                const double nu = model.nu.empty() ? 0.0 : model.nu[k].path(p).at(u);
                const double ybar = G.at(u) * yp.at(u);
                zp.set_flat(u, G.pre(u) * zp.at(u) + ybar * nu / G.at(u));
            }
        }
        for (std::size_t u = 0; u < yp.size(); ++u)
            yp.set(u, G.pre(u) * yp.pre(u), G.at(u) * yp.at(u), G.post(u) * yp.post(u));
    }
}

void transform_inverse(const RandomTimeModel& model, PathEnsemble& y,
                       std::vector<PathEnsemble>& z) {
    const std::size_t P = y.n_paths();
    for (std::size_t p = 0; p < P; ++p) {
        const LagladPath& G = model.G.path(p);
        LagladPath& yp = y.path(p);
        for (std::size_t k = 0; k < z.size(); ++k) {
            LagladPath& zp = z[k].path(p);
            for (std::size_t u = 1; u < yp.size(); ++u) {
                const double nu = model.nu.empty() ? 0.0 : model.nu[k].path(p).at(u);
                const double zplain =
                    (zp.at(u) - yp.at(u) * nu / G.at(u)) / (G.pre(u) > 0.0 ? G.pre(u) : G.at(u));
                zp.set_flat(u, zplain);
            }
        }
        for (std::size_t u = 0; u < yp.size(); ++u)
            yp.set(u, yp.pre(u) / (G.pre(u) > 0.0 ? G.pre(u) : G.at(u)), yp.at(u) / G.at(u),
                   yp.post(u) / G.post(u));
    }
}

PathEnsemble compute_U(const PathEnsemble& Y, const std::vector<PathEnsemble>& Z,
                       const GBsdeSpec& spec, const RandomTimeModel& model) {
    const std::size_t P = Y.n_paths();
    PathEnsemble out(Y.grid_ptr(), P);
    std::vector<double> zrow(Z.size(), 0.0);
    std::vector<double> jumps(spec.Dr.size(), 0.0);
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t u = 0; u < Y.path(p).size(); ++u) {
            for (std::size_t k = 0; k < Z.size(); ++k)
                zrow[k] = u + 1 < Y.path(p).size() ? Z[k].path(p).at(u + 1) : 0.0;
            for (std::size_t j = 0; j < spec.Dr.size(); ++j)
                jumps[j] = spec.Dr[j].path(p).left_jump(u);
            const StepContext ctx{p, u, model.grid->time(u)};
            out.path(p).set_flat(
                u, pointwise_u(spec, ctx, Y.path(p).at(u), zrow,
                               spec.reward.R.path(p).at(u), jumps));
        }
    }
    return out;
}

SolutionBundle solve_reduced_F_bsde(const ReducedSystem& system, const CEEstimatorPtr& ce,
                                    const SolverOptions& opts) {
    SolutionBundle sol =
        system.barrier
            ? solve_jump_bsde(system.gen, system.driver, system.mart, system.terminal, ce, opts,
                              &*system.barrier)
            : solve_jump_bsde(system.gen, system.driver, system.mart, system.terminal, ce, opts);
    if (system.transformed) {
        transform_inverse(*system.model, sol.y, sol.z);
        if (system.barrier) {
            // L^r = Gtilde^{-1} . Lbar^r, L^g = G^{-1} * Lbar^g
            const RandomTimeModel& m = *system.model;
            for (std::size_t p = 0; p < sol.y.n_paths(); ++p) {
                auto rescale_cadlag = [&](LagladPath& l) {
                    double acc = 0.0;
                    LagladPath plain = l;
                    for (std::size_t u = 0; u < l.size(); ++u) {
                        const double inc = u == 0 ? l.at(0) : l.at_increment(u);
                        const double gt = m.Gtilde.path(p).at(u);
                        acc += inc / (gt > 0.0 ? gt : 1.0);
                        plain.set(u, u == 0 ? acc : plain.at(u - 1), acc, acc);
                    }
                    for (std::size_t u = 1; u < l.size(); ++u) plain.pre(u) = plain.at(u - 1);
                    l = plain;
                };
                rescale_cadlag(sol.l.l_r_interior.path(p));
                rescale_cadlag(sol.l.l_r_jump.path(p));
                LagladPath& lg = sol.l.l_g.path(p);
                double acc = 0.0;
                for (std::size_t u = 0; u < lg.size(); ++u) {
                    const double g = m.G.path(p).at(u);
                    const double inc = lg.right_jump(u) / (g > 0.0 ? g : 1.0);
                    lg.set(u, acc, acc, acc + inc);
                    acc += inc;
                }
            }
            sol.l.barrier = *system.spec.barrier;
        }
    }
    sol.u = compute_U(sol.y, sol.z, system.spec, *system.model);
    return sol;
}

LiftedSolution lift_solution(const SolutionBundle& f_solution, const RandomTimeModel& model,
                             const std::vector<std::size_t>& theta_node, const RewardSpec& reward) {
    const std::size_t P = f_solution.y.n_paths();
    if (theta_node.size() != P)
        throw std::invalid_argument("lift_solution: theta size mismatch");
    LiftedSolution out;
    out.theta_node = theta_node;
    out.horizon_node.resize(P);
    out.y_hat = PathEnsemble(model.grid, P);
    out.z_hat.assign(f_solution.z.size(), PathEnsemble(model.grid, P));
    out.u_hat = f_solution.u;
    out.reflected = !f_solution.l.empty();
    if (out.reflected) {
        out.l_hat.l_r_interior = PathEnsemble(model.grid, P);
        out.l_hat.l_r_jump = PathEnsemble(model.grid, P);
        out.l_hat.l_g = PathEnsemble(model.grid, P);
        // The lifted obstacle is the reward process: X before theta, the
        // recovery from theta on.
        out.l_hat.barrier = PathEnsemble(model.grid, P);
        for (std::size_t p = 0; p < P; ++p) {
            const std::size_t theta = theta_node[p];
            const LagladPath& X = f_solution.l.barrier.path(p);
            LagladPath& b = out.l_hat.barrier.path(p);
            const double rec = theta == kNever ? 0.0 : reward.R.path(p).at(theta);
            for (std::size_t u = 0; u < b.size(); ++u) {
                if (theta == kNever || u < theta)
                    b.set(u, X.pre(u), X.at(u), X.post(u));
                else if (u == theta)
                    b.set(u, X.pre(u), rec, rec);
                else
                    b.set_flat(u, rec);
            }
        }
    }

    for (std::size_t p = 0; p < P; ++p) {
        const std::size_t tau = reward.tau_node[p];
        const std::size_t theta = theta_node[p];
        const std::size_t stop = std::min(tau, theta);  // kNever > tau
        out.horizon_node[p] = stop;
        const LagladPath& Y = f_solution.y.path(p);
        LagladPath& yh = out.y_hat.path(p);
        const bool defaulted = theta != kNever && theta <= tau;
        const double terminal_value =
            defaulted ? reward.R.path(p).at(theta) : Y.at(tau);
        for (std::size_t u = 0; u < yh.size(); ++u) {
            if (u < stop) {
                yh.set(u, Y.pre(u), Y.at(u), Y.post(u));
            } else if (u == stop && defaulted) {
                yh.set(u, Y.pre(u), terminal_value, terminal_value);
            } else if (u == stop) {
                yh.set(u, Y.pre(u), Y.at(u), Y.at(u));
            } else {
                yh.set_flat(u, terminal_value);
            }
        }
        for (std::size_t k = 0; k < out.z_hat.size(); ++k) {
            LagladPath& zh = out.z_hat[k].path(p);
            const LagladPath& Z = f_solution.z[k].path(p);
            for (std::size_t u = 0; u <= stop; ++u) zh.set_flat(u, Z.at(u));
        }
        if (out.reflected) {
            auto clip_cadlag = [&](const LagladPath& src, LagladPath& dst) {
                for (std::size_t u = 0; u < src.size(); ++u) {
                    if (u <= stop)
                        dst.set(u, src.pre(u), src.at(u), src.post(u));
                    else
                        dst.set_flat(u, src.at(stop));
                }
            };
            clip_cadlag(f_solution.l.l_r_interior.path(p), out.l_hat.l_r_interior.path(p));
            clip_cadlag(f_solution.l.l_r_jump.path(p), out.l_hat.l_r_jump.path(p));
            const LagladPath& lg = f_solution.l.l_g.path(p);
            LagladPath& lgh = out.l_hat.l_g.path(p);
            for (std::size_t u = 0; u < lg.size(); ++u) {
                if (u < stop)
                    lgh.set(u, lg.pre(u), lg.at(u), lg.post(u));
                else
                    lgh.set_flat(u, lg.at(stop));
            }
        }
    }
    if (f_solution.y.has_weights()) {
        std::vector<double> w(P);
        for (std::size_t p = 0; p < P; ++p) w[p] = f_solution.y.weight(p);
        out.y_hat.set_weights(w);
    }
    return out;
}

}  // namespace horizon
