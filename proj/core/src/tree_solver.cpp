#include "horizon/tree_solver.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace horizon {

namespace {

/// Bisection for strictly increasing phi with an expanding initial bracket.
double bisect_root(const std::function<double(double)>& phi, double seed, double tol) {
    double lo = seed - 1.0, hi = seed + 1.0;
    double flo = phi(lo), fhi = phi(hi);
    int guard = 0;
    while (flo > 0.0 && guard++ < 120) {
        hi = lo;
        lo -= std::max(1.0, std::abs(lo));
        flo = phi(lo);
    }
    while (fhi < 0.0 && guard++ < 240) {
        lo = hi;
        hi += std::max(1.0, std::abs(hi));
        fhi = phi(hi);
    }
    if (flo > 0.0 || fhi < 0.0)
        throw std::runtime_error("solve_tree_exact: bisection bracket failed");
    for (int it = 0; it < 200 && hi - lo > tol; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (phi(mid) < 0.0) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

struct CellIndex {
    // scenarios grouped by cell at each node
    std::vector<std::map<std::size_t, std::vector<std::size_t>>> groups;
};

}  // namespace

SolutionBundle solve_tree_exact(const FiniteFiltration& finite, const GeneratorSpec& gen,
                                const DriverSpec& driver, const MartingaleSpec& mart,
                                const TerminalSpec& terminal, const PathEnsemble* barrier,
                                double tol) {
    finite.validate();
    const std::size_t K = finite.n_steps();
    const std::size_t N = finite.n_scenarios();
    auto grid = finite.grid();
    const std::size_t d = mart.dim();
    const bool reflected = barrier != nullptr;

    if (terminal.value.size() != N)
        throw std::invalid_argument("solve_tree_exact: terminal size must match scenarios");

    CellIndex idx;
    idx.groups.resize(K + 1);
    for (std::size_t k = 0; k <= K; ++k)
        for (std::size_t w = 0; w < N; ++w) idx.groups[k][finite.cells[k][w]].push_back(w);

    SolutionBundle sol;
    sol.y = PathEnsemble(grid, N);
    sol.z.assign(d, PathEnsemble(grid, N));
    if (reflected) {
        sol.l.l_r_interior = PathEnsemble(grid, N);
        sol.l.l_r_jump = PathEnsemble(grid, N);
        sol.l.l_g = PathEnsemble(grid, N);
        sol.l.barrier = *barrier;
    }
    std::vector<std::vector<double>> lr_int(N, std::vector<double>(K + 1, 0.0));
    std::vector<std::vector<double>> lr_jmp(N, std::vector<double>(K + 1, 0.0));
    std::vector<std::vector<double>> lg_inc(N, std::vector<double>(K + 1, 0.0));

    std::vector<double> xi(N, 0.0);

    std::size_t top = 0;
    for (std::size_t w = 0; w < N; ++w) top = std::max(top, terminal.node[w]);

    for (std::size_t v = top; v + 1 > 0; --v) {
        const double tv = grid->time(v);
        // terminal / frozen values
        for (std::size_t w = 0; w < N; ++w)
            if (terminal.node[w] <= v) sol.y.path(w).set_flat(v, terminal.value[w]);

        if (v < top) {
            const std::size_t s = v + 1;
            for (const auto& [cell, members] : idx.groups[v]) {
                std::vector<std::size_t> alive;
                for (std::size_t w : members)
                    if (terminal.node[w] > v) alive.push_back(w);
                if (alive.empty()) continue;
                double wsum = 0.0, base = 0.0;
                for (std::size_t w : alive) {
                    wsum += finite.scenario_probs[w];
                    base += finite.scenario_probs[w] * xi[w];
                }
                base /= wsum;
                std::vector<double> zc(d, 0.0);
                for (std::size_t k = 0; k < d; ++k) {
                    double num = 0.0, den = 0.0;
                    for (std::size_t w : alive) {
                        const double dm = mart.components[k].path(w).at_increment(s);
                        num += finite.scenario_probs[w] * xi[w] * dm;
                        den += finite.scenario_probs[w] * dm * dm;
                    }
                    zc[k] = std::abs(den) > 1e-300 ? num / den : 0.0;
                }
                for (std::size_t w : alive) {
                    for (std::size_t k = 0; k < d; ++k) sol.z[k].path(w).set_flat(s, zc[k]);
                    const bool sh = gen.has_h() && driver.path_has_h(w, s);
                    std::vector<double> mass(gen.f_r.size());
                    for (std::size_t j = 0; j < gen.f_r.size(); ++j) {
                        const LagladPath& dj = driver.d_r[j].path(w);
                        mass[j] = sh ? dj.pre(s) - dj.at(s - 1) : dj.at_increment(s);
                    }
                    const StepContext ctx{w, v, tv};
                    auto phi = [&](double x) {
                        const double u_arg = gen.u_map ? gen.u_map(ctx, x, zc) : 0.0;
                        double rhs = base;
                        for (std::size_t j = 0; j < gen.f_r.size(); ++j)
                            if (mass[j] != 0.0) rhs += gen.f_r[j](ctx, x, x, zc, u_arg) * mass[j];
                        return x - rhs;
                    };
                    double cand = bisect_root(phi, base, tol);
                    if (reflected) {
                        const double b = barrier->path(w).post(v);
                        if (b > cand) {
                            lr_int[w][s] = b - cand;
                            cand = b;
                        }
                    }
                    sol.y.path(w).set_flat(v, cand);
                }
            }
        }

        // right-jump links
        for (std::size_t w = 0; w < N; ++w) {
            if (terminal.node[w] <= v) continue;
            if (!driver.path_has_g(w, v)) continue;
            const StepContext ctx{w, v, tv};
            const double post = sol.y.path(w).post(v);
            auto unreflected = [&](double at) {
                double x = post;
                for (std::size_t l = 0; l < driver.d_g.size(); ++l) {
                    const double dj = driver.d_g[l].path(w).right_jump(v);
                    if (dj != 0.0) x -= gen.f_g[l](ctx, at, post) * dj;
                }
                return x;
            };
            auto phi = [&](double at) {
                double cand = unreflected(at);
                if (reflected) cand = std::max(barrier->path(w).at(v), cand);
                return at - cand;
            };
            const double at = bisect_root(phi, post, tol);
            if (reflected) {
                const double lift = at - unreflected(at);
                if (lift > 0.0) lg_inc[w][v] = lift;
            }
            sol.y.path(w).at(v) = at;
            sol.y.path(w).pre(v) = at;
        }

        // left-jump links -> continuation targets
        std::vector<double> xi_next(N);
        for (std::size_t w = 0; w < N; ++w)
            xi_next[w] = terminal.node[w] >= v ? sol.y.path(w).at(v) : terminal.value[w];

        bool any_h = false;
        if (gen.has_h() && v > 0)
            for (std::size_t w = 0; w < N; ++w)
                if (terminal.node[w] >= v && driver.path_has_h(w, v)) { any_h = true; break; }

        if (any_h) {
            // Fixed point through the exact conditional expectation at v-1.
            std::vector<double> cur = xi_next;
            for (std::size_t w = 0; w < N; ++w)
                if (terminal.node[w] >= v && driver.path_has_h(w, v)) {
                    const StepContext ctx{w, v, tv};
                    const double at = sol.y.path(w).at(v);
                    cur[w] = at - gen.h(ctx, at, at);
                }
            const int iters = gen.lip_h_yminus > 0.0 ? 400 : 1;
            std::vector<double> cond;
            for (int it = 0; it < iters; ++it) {
                cond = finite.condexp(v - 1, cur);
                double delta = 0.0;
                for (std::size_t w = 0; w < N; ++w) {
                    if (terminal.node[w] < v || !driver.path_has_h(w, v)) continue;
                    const StepContext ctx{w, v, tv};
                    double L = cond[w];
                    if (reflected) L = std::max(barrier->path(w).pre(v), L);
                    const double at = sol.y.path(w).at(v);
                    const double next = at - gen.h(ctx, L, at);
                    delta = std::max(delta, std::abs(next - cur[w]));
                    cur[w] = next;
                }
                if (delta < tol) break;
            }
            cond = finite.condexp(v - 1, cur);
            for (std::size_t w = 0; w < N; ++w) {
                if (terminal.node[w] < v || !driver.path_has_h(w, v)) continue;
                double L = cond[w];
                if (reflected) {
                    const double bpre = barrier->path(w).pre(v);
                    if (bpre > L) {
                        lr_jmp[w][v] = bpre - L;
                        L = bpre;
                    }
                }
                sol.y.path(w).pre(v) = L;
                xi_next[w] = cur[w];
            }
        }

        xi = std::move(xi_next);
        if (v == 0) break;
    }

    if (reflected) {
        for (std::size_t w = 0; w < N; ++w) {
            double aI = 0.0, aJ = 0.0, aG = 0.0;
            for (std::size_t u = 0; u <= K; ++u) {
                aI += lr_int[w][u];
                sol.l.l_r_interior.path(w).set(u, aI - lr_int[w][u], aI, aI);
                aJ += lr_jmp[w][u];
                sol.l.l_r_jump.path(w).set(u, aJ - lr_jmp[w][u], aJ, aJ);
                sol.l.l_g.path(w).set(u, aG, aG, aG + lg_inc[w][u]);
                aG += lg_inc[w][u];
            }
        }
    }

    for (PathEnsemble* e : {&sol.y}) e->set_weights(finite.scenario_probs);
    return sol;
}

}  // namespace horizon
