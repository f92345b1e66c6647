#include "horizon/bsde_engine.hpp"

#include "horizon/parallel.hpp"

#include <atomic>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace horizon {

namespace {

std::string at_location(std::size_t path, std::size_t node) {
    return " (path " + std::to_string(path) + ", node " + std::to_string(node) + ")";
}

/// Cadlag component mass consumed by the Euler step into node v-1 from v.
/// At h-flagged nodes the left jump belongs to the jump map, so only the
/// inter-node mass pre(v) - at(v-1) is stepped.
double step_mass(const LagladPath& d, std::size_t v, bool h_flagged) {
    if (h_flagged) return d.pre(v) - d.at(v - 1);
    return d.at_increment(v);
}

struct Workspace {
    std::size_t n_paths = 0;
    std::size_t n_nodes = 0;
    std::vector<std::size_t> terminal_node;
    std::vector<double> xi;                  // continuation target at the current node
    std::vector<unsigned char> alive_step;   // paths with terminal_node > v
    std::vector<unsigned char> alive_link;   // paths with terminal_node >= v
};

}  // namespace

bool DriverSpec::path_has_h(std::size_t p, std::size_t node) const {
    if (h_nodes.empty()) return false;
    const auto& v = h_nodes[p];
    return std::binary_search(v.begin(), v.end(), static_cast<std::uint32_t>(node));
}

bool DriverSpec::path_has_g(std::size_t p, std::size_t node) const {
    if (g_nodes.empty()) return false;
    const auto& v = g_nodes[p];
    return std::binary_search(v.begin(), v.end(), static_cast<std::uint32_t>(node));
}

TerminalSpec TerminalSpec::common(std::size_t node, std::vector<double> values) {
    TerminalSpec t;
    t.node.assign(values.size(), node);
    t.value = std::move(values);
    return t;
}

LagladPath ReflectionBundle::l_r(std::size_t path) const {
    LagladPath out = l_r_interior.path(path);
    const LagladPath& j = l_r_jump.path(path);
    for (std::size_t u = 0; u < out.size(); ++u) {
        out.pre(u) += j.pre(u);
        out.at(u) += j.at(u);
        out.post(u) += j.post(u);
    }
    return out;
}

SolutionBundle solve_jump_bsde(const GeneratorSpec& gen, const DriverSpec& driver,
                               const MartingaleSpec& mart, const TerminalSpec& terminal,
                               const CEEstimatorPtr& ce, const SolverOptions& opts,
                               const PathEnsemble* barrier) {
    if (gen.f_r.size() != driver.d_r.size())
        throw std::invalid_argument("solve_jump_bsde: f_r / d_r component mismatch");
    if (gen.f_g.size() != driver.d_g.size())
        throw std::invalid_argument("solve_jump_bsde: f_g / d_g component mismatch");
    if (!gen.lip_fr.empty() && gen.lip_fr.size() != gen.f_r.size())
        throw std::invalid_argument("solve_jump_bsde: lip_fr size mismatch");

    TimeGridPtr grid;
    if (!driver.d_r.empty()) grid = driver.d_r[0].grid_ptr();
    else if (!mart.components.empty()) grid = mart.components[0].grid_ptr();
    else if (!driver.d_g.empty()) grid = driver.d_g[0].grid_ptr();
    if (!grid) throw std::invalid_argument("solve_jump_bsde: no driver or martingale data");

    Workspace ws;
    ws.n_nodes = grid->size();
    ws.n_paths = terminal.value.size();
    if (terminal.node.size() != ws.n_paths)
        throw std::invalid_argument("solve_jump_bsde: terminal node/value size mismatch");
    if (ce->n_paths() != ws.n_paths)
        throw std::invalid_argument("solve_jump_bsde: estimator path count mismatch");
    ws.terminal_node = terminal.node;
    for (std::size_t p = 0; p < ws.n_paths; ++p)
        if (ws.terminal_node[p] == 0 || ws.terminal_node[p] >= ws.n_nodes)
            throw std::invalid_argument("solve_jump_bsde: terminal node out of range");

    const std::size_t d = mart.dim();
    const bool reflected = barrier != nullptr;
    const bool h_dep_yminus = gen.lip_h_yminus > 0.0;
    if (gen.has_h() && h_dep_yminus && !driver.h_nodes_predictable)
        throw std::runtime_error(
            "solve_jump_bsde: h depends on y_minus but jump times are not flagged predictable");
    if (h_dep_yminus && gen.lip_h_yminus >= 1.0)
        throw std::runtime_error("solve_jump_bsde: h link cannot contract (lip_h_yminus >= 1)");

    SolutionBundle sol;
    sol.y = PathEnsemble(grid, ws.n_paths);
    sol.z.assign(d, PathEnsemble(grid, ws.n_paths));
    if (reflected) {
        sol.l.l_r_interior = PathEnsemble(grid, ws.n_paths);
        sol.l.l_r_jump = PathEnsemble(grid, ws.n_paths);
        sol.l.l_g = PathEnsemble(grid, ws.n_paths);
        sol.l.barrier = *barrier;
    }

    // Raw reflection increments; turned into cumulative paths at the end.
    std::vector<std::vector<double>> lr_int, lr_jmp, lg_inc;
    if (reflected) {
        lr_int.assign(ws.n_paths, std::vector<double>(ws.n_nodes, 0.0));
        lr_jmp.assign(ws.n_paths, std::vector<double>(ws.n_nodes, 0.0));
        lg_inc.assign(ws.n_paths, std::vector<double>(ws.n_nodes, 0.0));
    }

    ws.xi.assign(ws.n_paths, 0.0);

    std::size_t top = 0;
    for (std::size_t p = 0; p < ws.n_paths; ++p) top = std::max(top, ws.terminal_node[p]);

    auto& diag = sol.diagnostics;
    std::atomic<int> fp_iters{0};
    std::atomic<double> step_res{0.0};
    auto atomic_max = [](std::atomic<double>& slot, double v) {
        double cur = slot.load(std::memory_order_relaxed);
        while (v > cur && !slot.compare_exchange_weak(cur, v, std::memory_order_relaxed)) {
        }
    };

    // Evaluates one implicit Euler candidate: x solving
    // x = base + sum_j f_j(ctx, x, x, z, u) * mass_j.
    auto implicit_step = [&](const StepContext& ctx, double base,
                             std::span<const double> masses, std::span<const double> z) {
        double lipsum = 0.0;
        bool any = false;
        for (std::size_t j = 0; j < gen.f_r.size(); ++j) {
            if (masses[j] != 0.0) any = true;
            if (!gen.lip_fr.empty()) lipsum += gen.lip_fr[j] * std::abs(masses[j]);
        }
        if (!any) return base;
        if (!gen.lip_fr.empty() && lipsum >= 1.0)
            throw std::runtime_error("solve_jump_bsde: implicit step cannot contract" +
                                     at_location(ctx.path, ctx.node));
        double x = base;
        double res = 0.0;
        int used = 0;
        for (int it = 0; it < opts.fp_max_iter; ++it) {
            const double u_arg = gen.u_map ? gen.u_map(ctx, x, z) : 0.0;
            double next = base;
            for (std::size_t j = 0; j < gen.f_r.size(); ++j)
                if (masses[j] != 0.0) next += gen.f_r[j](ctx, x, x, z, u_arg) * masses[j];
            res = std::abs(next - x);
            x = next;
            used = it + 1;
            if (res < opts.fp_tol) break;
        }
        if (res >= opts.fp_tol)
            throw std::runtime_error("solve_jump_bsde: implicit step fixed point failed" +
                                     at_location(ctx.path, ctx.node));
        int cur = fp_iters.load(std::memory_order_relaxed);
        while (used > cur && !fp_iters.compare_exchange_weak(cur, used, std::memory_order_relaxed)) {
        }
        atomic_max(step_res, res);
        return x;
    };

    // Right-jump link at node v: solve at = (barrier v) (post - sum f_g d+D).
    auto g_link = [&](const StepContext& ctx, double post, double barrier_at, bool use_barrier,
                      double* lift) {
        double jump_sz = 0.0;
        for (std::size_t l = 0; l < driver.d_g.size(); ++l)
            jump_sz += std::abs(driver.d_g[l].path(ctx.path).right_jump(ctx.node));
        if (gen.lip_fg > 0.0 && gen.lip_fg * jump_sz >= 1.0)
            throw std::runtime_error("solve_jump_bsde: right-jump link cannot contract" +
                                     at_location(ctx.path, ctx.node));
        auto unreflected = [&](double at) {
            double x = post;
            for (std::size_t l = 0; l < driver.d_g.size(); ++l) {
                const double dj = driver.d_g[l].path(ctx.path).right_jump(ctx.node);
                if (dj != 0.0) x -= gen.f_g[l](ctx, at, post) * dj;
            }
            return x;
        };
        double at = unreflected(post);
        if (use_barrier) at = std::max(barrier_at, at);
        if (gen.lip_fg > 0.0) {
            double res = 0.0;
            for (int it = 0; it < opts.fp_max_iter; ++it) {
                double next = unreflected(at);
                if (use_barrier) next = std::max(barrier_at, next);
                res = std::abs(next - at);
                at = next;
                if (res < opts.fp_tol) break;
            }
            if (res >= opts.fp_tol)
                throw std::runtime_error("solve_jump_bsde: right-jump link fixed point failed" +
                                         at_location(ctx.path, ctx.node));
            diag.max_link_residual = std::max(diag.max_link_residual, res);
        }
        if (lift) *lift = at - unreflected(at);
        return at;
    };

    // Backward sweep.
    for (std::size_t v = top; v + 1 > 0; --v) {
        const double tv = grid->time(v);

        ws.alive_step.assign(ws.n_paths, 0);
        ws.alive_link.assign(ws.n_paths, 0);
        for (std::size_t p = 0; p < ws.n_paths; ++p) {
            ws.alive_step[p] = ws.terminal_node[p] > v;
            ws.alive_link[p] = ws.terminal_node[p] >= v;
        }

        // --- value arriving at node v ------------------------------------
        for (std::size_t p = 0; p < ws.n_paths; ++p) {
            if (ws.terminal_node[p] == v) {
                sol.y.path(p).set_flat(v, terminal.value[p]);
            } else if (ws.terminal_node[p] < v) {
                sol.y.path(p).set_flat(v, terminal.value[p]);  // frozen after terminal
            }
        }

        if (v < top) {
            // Step from v+1 into v for paths alive on (v, v+1].
            const std::size_t w = v + 1;
            std::vector<unsigned char> alive(ws.n_paths, 0);
            for (std::size_t p = 0; p < ws.n_paths; ++p) alive[p] = ws.terminal_node[p] > v;

            // Conditional expectations at node v: the value target through
            // condexp, the z integrands through the ratio estimator.
            const std::vector<double> cond_xi = ce->condexp(v, ws.xi, alive);
            std::vector<std::vector<double>> zfit(d);
            for (std::size_t k = 0; k < d; ++k) {
                std::vector<double> num(ws.n_paths, 0.0), den(ws.n_paths, 0.0);
                for (std::size_t p = 0; p < ws.n_paths; ++p) {
                    if (!alive[p]) continue;
                    const double dm = mart.components[k].path(p).at_increment(w);
                    num[p] = ws.xi[p] * dm;
                    den[p] = dm * dm;
                }
                zfit[k] = ce->condexp_ratio(v, num, den, alive);
            }

            parallel_for(ws.n_paths, opts.threads, [&](std::size_t p) {
                if (!alive[p]) return;
                std::vector<double> zloc(d, 0.0);
                std::vector<double> masses(gen.f_r.size(), 0.0);
                for (std::size_t k = 0; k < d; ++k) {
                    zloc[k] = zfit[k][p];
                    sol.z[k].path(p).set_flat(w, zloc[k]);
                }
                const bool wh = gen.has_h() && driver.path_has_h(p, w);
                for (std::size_t j = 0; j < gen.f_r.size(); ++j)
                    masses[j] = step_mass(driver.d_r[j].path(p), w, wh);
                const StepContext ctx{p, v, tv};
                double cand = implicit_step(ctx, cond_xi[p], masses, zloc);
                if (reflected) {
                    const double b = barrier->path(p).post(v);
                    if (b > cand) {
                        lr_int[p][w] += b - cand;
                        cand = b;
                    }
                }
                sol.y.path(p).set_flat(v, cand);
            });
        }

        // --- links at node v ---------------------------------------------
        // Right-jump link (not at a path's terminal node: the star window
        // [t, tau) excludes tau).
        for (std::size_t p = 0; p < ws.n_paths; ++p) {
            if (!ws.alive_step[p]) continue;
            if (!driver.path_has_g(p, v)) continue;
            const StepContext ctx{p, v, tv};
            const double post = sol.y.path(p).post(v);
            double lift = 0.0;
            const double bar = reflected ? barrier->path(p).at(v) : 0.0;
            const double at = g_link(ctx, post, bar, reflected, reflected ? &lift : nullptr);
            sol.y.path(p).at(v) = at;
            sol.y.path(p).pre(v) = at;
            if (reflected && lift > 0.0) lg_inc[p][v] = lift;
        }

        // Left-jump link; produces the continuation target xi at v.
        bool any_h = false;
        if (gen.has_h() && v > 0)
            for (std::size_t p = 0; p < ws.n_paths; ++p)
                if (ws.alive_link[p] && driver.path_has_h(p, v)) { any_h = true; break; }

        std::vector<double> xi_next(ws.n_paths, 0.0);
        for (std::size_t p = 0; p < ws.n_paths; ++p)
            xi_next[p] = ws.alive_link[p] ? sol.y.path(p).at(v) : terminal.value[p];

        if (any_h) {
            // xi = at - h(t, L, at), L = (barrier_pre v) CE[xi | F_{v-1}].
            auto link_pass = [&](const std::vector<double>& cond) {
                std::vector<double> out = xi_next;
                for (std::size_t p = 0; p < ws.n_paths; ++p) {
                    if (!ws.alive_link[p] || !driver.path_has_h(p, v)) continue;
                    const StepContext ctx{p, v, tv};
                    double L = cond[p];
                    if (reflected) {
                        const double bpre = barrier->path(p).pre(v);
                        if (bpre > L) L = bpre;
                    }
                    out[p] = sol.y.path(p).at(v) - gen.h(ctx, L, sol.y.path(p).at(v));
                }
                return out;
            };
            std::vector<double> cur = xi_next;
            // Seed with h evaluated at the at value, then iterate through CE
            // when h depends on its y_minus argument.
            for (std::size_t p = 0; p < ws.n_paths; ++p)
                if (ws.alive_link[p] && driver.path_has_h(p, v)) {
                    const StepContext ctx{p, v, tv};
                    cur[p] = sol.y.path(p).at(v) -
                             gen.h(ctx, sol.y.path(p).at(v), sol.y.path(p).at(v));
                }
            std::vector<double> cond = ce->condexp(v - 1, cur, ws.alive_link);
            std::vector<double> next = link_pass(cond);
            if (h_dep_yminus) {
                double res = 1.0;
                for (int it = 0; it < opts.fp_max_iter && res >= opts.fp_tol; ++it) {
                    cur = next;
                    cond = ce->condexp(v - 1, cur, ws.alive_link);
                    next = link_pass(cond);
                    res = 0.0;
                    for (std::size_t p = 0; p < ws.n_paths; ++p)
                        res = std::max(res, std::abs(next[p] - cur[p]));
                    diag.max_link_residual = std::max(diag.max_link_residual, res);
                }
                if (res >= opts.fp_tol)
                    throw std::runtime_error("solve_jump_bsde: h link fixed point failed at node " +
                                             std::to_string(v));
            }
            xi_next = next;
            // Reported left limit and the predictable reflection lift.
            cond = ce->condexp(v - 1, xi_next, ws.alive_link);
            for (std::size_t p = 0; p < ws.n_paths; ++p) {
                if (!ws.alive_link[p] || !driver.path_has_h(p, v)) continue;
                double L = cond[p];
                if (reflected) {
                    const double bpre = barrier->path(p).pre(v);
                    if (bpre > L) {
                        lr_jmp[p][v] = bpre - L;
                        L = bpre;
                    }
                }
                sol.y.path(p).pre(v) = L;
            }
        }

        ws.xi = std::move(xi_next);
        diag.steps += 1;
        if (v == 0) break;
    }
    diag.max_fp_iterations = fp_iters.load();
    diag.max_step_residual = std::max(diag.max_step_residual, step_res.load());

    if (reflected) {
        for (std::size_t p = 0; p < ws.n_paths; ++p) {
            double accI = 0.0, accJ = 0.0, accG = 0.0;
            for (std::size_t u = 0; u < ws.n_nodes; ++u) {
                accI += lr_int[p][u];
                sol.l.l_r_interior.path(p).set(u, accI - lr_int[p][u], accI, accI);
                accJ += lr_jmp[p][u];
                sol.l.l_r_jump.path(p).set(u, accJ - lr_jmp[p][u], accJ, accJ);
                sol.l.l_g.path(p).set(u, accG, accG, accG + lg_inc[p][u]);
                accG += lg_inc[p][u];
            }
        }
    }

    return sol;
}

namespace {

void require_no_flags(const DriverSpec& driver, const char* who) {
    for (const auto& v : driver.h_nodes)
        if (!v.empty()) throw std::invalid_argument(std::string(who) + ": unexpected h-flagged nodes");
    for (const auto& v : driver.g_nodes)
        if (!v.empty()) throw std::invalid_argument(std::string(who) + ": unexpected right-jump nodes");
}

}  // namespace

SolutionBundle solve_continuous_driver(const GeneratorSpec& gen, const DriverSpec& driver,
                                       const MartingaleSpec& mart, const TerminalSpec& terminal,
                                       const CEEstimatorPtr& ce, const SolverOptions& opts) {
    if (gen.has_h()) throw std::invalid_argument("solve_continuous_driver: h must be absent");
    require_no_flags(driver, "solve_continuous_driver");
    return solve_jump_bsde(gen, driver, mart, terminal, ce, opts);
}

SolutionBundle step2_cadlag_solve(const GeneratorSpec& gen, const DriverSpec& driver,
                                  const MartingaleSpec& mart, const TerminalSpec& terminal,
                                  const CEEstimatorPtr& ce, const SolverOptions& opts) {
    for (const auto& v : driver.g_nodes)
        if (!v.empty()) throw std::invalid_argument("step2_cadlag_solve: right jumps not allowed");
    return solve_jump_bsde(gen, driver, mart, terminal, ce, opts);
}

SolutionBundle step1_laglad_solve(const GeneratorSpec& gen, const DriverSpec& driver,
                                  const MartingaleSpec& mart, const TerminalSpec& terminal,
                                  const CEEstimatorPtr& ce, const SolverOptions& opts) {
    return solve_jump_bsde(gen, driver, mart, terminal, ce, opts);
}

SolutionBundle solve_reflected_continuous(const GeneratorSpec& gen, const DriverSpec& driver,
                                          const MartingaleSpec& mart, const TerminalSpec& terminal,
                                          const PathEnsemble& barrier, const CEEstimatorPtr& ce,
                                          const SolverOptions& opts) {
    if (gen.has_h()) throw std::invalid_argument("solve_reflected_continuous: h must be absent");
    require_no_flags(driver, "solve_reflected_continuous");
    return solve_jump_bsde(gen, driver, mart, terminal, ce, opts, &barrier);
}

SolutionBundle rstep2_cadlag_solve(const GeneratorSpec& gen, const DriverSpec& driver,
                                   const MartingaleSpec& mart, const TerminalSpec& terminal,
                                   const PathEnsemble& barrier, const CEEstimatorPtr& ce,
                                   const SolverOptions& opts) {
    for (const auto& v : driver.g_nodes)
        if (!v.empty()) throw std::invalid_argument("rstep2_cadlag_solve: right jumps not allowed");
    return solve_jump_bsde(gen, driver, mart, terminal, ce, opts, &barrier);
}

SolutionBundle rstep1_laglad_solve(const GeneratorSpec& gen, const DriverSpec& driver,
                                   const MartingaleSpec& mart, const TerminalSpec& terminal,
                                   const PathEnsemble& barrier, const CEEstimatorPtr& ce,
                                   const SolverOptions& opts) {
    return solve_jump_bsde(gen, driver, mart, terminal, ce, opts, &barrier);
}

PathEnsemble solve_linear_closed_form(double a, double b_const, const TerminalSpec& terminal,
                                      const PathEnsemble& model_paths, const CEEstimatorPtr& ce) {
    const TimeGridPtr grid = model_paths.grid_ptr();
    const std::size_t n_paths = terminal.value.size();
    PathEnsemble out(grid, n_paths);
    std::vector<unsigned char> alive(n_paths, 1);
    for (std::size_t u = 0; u < grid->size(); ++u) {
        for (std::size_t p = 0; p < n_paths; ++p) alive[p] = terminal.node[p] >= u;
        const auto cond = ce->condexp(u, terminal.value, alive);
        for (std::size_t p = 0; p < n_paths; ++p) {
            const double T_p = grid->time(terminal.node[p]);
            const double rem = std::max(0.0, T_p - grid->time(u));
            const double growth = std::exp(a * rem);
            const double source = a != 0.0 ? (b_const / a) * (growth - 1.0) : b_const * rem;
            const double ceval = terminal.node[p] >= u ? cond[p] : terminal.value[p];
            out.path(p).set_flat(u, growth * ceval + source);
        }
    }
    return out;
}

}  // namespace horizon
