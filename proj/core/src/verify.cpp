#include "horizon/verify.hpp"

#include "horizon/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace horizon {

namespace {

double safe_log(double x) { return std::log(std::max(x, 1e-300)); }

struct Accumulator {
    std::vector<double> sum, sumsq, maxabs;
    std::vector<double> wsum;
    void init(std::size_t n) {
        sum.assign(n, 0.0);
        sumsq.assign(n, 0.0);
        maxabs.assign(n, 0.0);
        wsum.assign(n, 0.0);
    }
    void add(std::size_t u, double r, double w) {
        sum[u] += w * r;
        sumsq[u] += w * r * r;
        maxabs[u] = std::max(maxabs[u], std::abs(r));
        wsum[u] += w;
    }
};

void finalize(ResidualReport& rep, const Accumulator& acc, const TimeGrid& grid,
              std::size_t n_paths, bool exact) {
    for (std::size_t u = 0; u < acc.sum.size(); ++u) {
        if (acc.wsum[u] <= 0.0) continue;
        CheckpointStat st;
        st.node = u;
        st.time = grid.time(u);
        st.mean = acc.sum[u] / acc.wsum[u];
        const double var = std::max(0.0, acc.sumsq[u] / acc.wsum[u] - st.mean * st.mean);
        st.se = n_paths > 1 ? std::sqrt(var / static_cast<double>(n_paths)) : 0.0;
        st.max_abs = acc.maxabs[u];
        rep.checkpoints.push_back(st);
        rep.max_abs = std::max(rep.max_abs, st.max_abs);
        if (std::abs(st.mean) > rep.max_mean_abs) {
            rep.max_mean_abs = std::abs(st.mean);
            rep.worst_node = u;
        }
    }
    rep.metric = exact ? rep.max_abs : rep.max_mean_abs;
    rep.pass = rep.metric <= rep.tolerance;
}

}  // namespace

double fit_loglog_slope(const std::vector<double>& dt, const std::vector<double>& metric) {
    if (dt.size() != metric.size() || dt.size() < 2)
        return std::numeric_limits<double>::quiet_NaN();
    const std::size_t n = dt.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = safe_log(dt[i]), y = safe_log(metric[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double denom = n * sxx - sx * sx;
    return denom != 0.0 ? (n * sxy - sx * sy) / denom : std::numeric_limits<double>::quiet_NaN();
}

namespace {

/// Shared core of the G-side residual: evaluates the defining equation on
/// [0, tau ^ theta] per path and accumulates the gap at every checkpoint.
ResidualReport g_residual_core(const GResidualInputs& in, bool reflected) {
    const GBsdeSpec& spec = *in.spec;
    const RandomTimeModel& model = *in.model;
    const PathEnsemble& Y = *in.y_hat;
    const std::size_t P = Y.n_paths();
    const TimeGrid& grid = Y.grid();
    const std::size_t d = in.z_hat->size();

    std::vector<PathEnsemble> Mtilde;
    for (std::size_t k = 0; k < d; ++k)
        Mtilde.push_back(deflate_martingale(model.martingale[k], k, model, in.bracket));

    ResidualReport rep;
    rep.name = in.name;
    rep.tolerance = in.tolerance;
    Accumulator acc;
    acc.init(grid.size());

    double worst = -1.0;
    for (std::size_t a = 0; a < P; ++a) {
        const std::size_t w = in.scenario ? (*in.scenario)[a] : a;
        const std::size_t tau = spec.reward.tau_node[w];
        const std::size_t theta = (*in.theta)[a];
        const std::size_t H = std::min(tau, theta);
        const bool defaulted = theta != kNever && theta <= tau;
        const double weight = Y.weight(a);

        const double terminal = defaulted ? spec.reward.R.path(w).at(theta)
                                          : spec.reward.X.path(w).at(tau);

        // backward accumulation of the right-hand side
        double rhs = terminal;
        std::vector<double> zrow(d, 0.0);
        // checkpoint H first
        {
            double lhs = Y.path(a).at(H);
            const double r = lhs - rhs;
            acc.add(H, r, weight);
            if (std::abs(r) > worst) {
                worst = std::abs(r);
                rep.worst_path = a;
            }
        }
        for (std::size_t v = H; v-- > 0;) {
            const std::size_t s = v + 1;  // mass of the step (v, v+1]
            const StepContext ctx{w, s, grid.time(s)};
            for (std::size_t k = 0; k < d; ++k) zrow[k] = (*in.z_hat)[k].path(a).at(s);
            const double u_val = in.u_hat->path(a).at(s);
            const double y_s = Y.path(a).at(s);
            // F^r against the user driver
            for (std::size_t j = 0; j < spec.Fr.size(); ++j) {
                const double dD = spec.Dr[j].path(w).at_increment(s);
                if (dD != 0.0) rhs -= spec.Fr[j](ctx, y_s, zrow, u_val) * dD;
            }
            // martingale terms
            for (std::size_t k = 0; k < d; ++k)
                rhs -= zrow[k] * Mtilde[k].path(w).at_increment(s);
            // U against N^{o,G}
            const double dN = (defaulted && s == theta ? 1.0 : 0.0) -
                              model.Gamma.path(w).at_increment(s);
            rhs -= u_val * dN;
            // reflection value increments on (v, v+1]
            if (reflected) {
                rhs += in.l_hat->l_r_interior.path(a).at_increment(s) +
                       in.l_hat->l_r_jump.path(a).at_increment(s);
                rhs += in.l_hat->l_g.path(a).right_jump(v);
            }
            // right jumps of the driver at v (the star window [v, H))
            const StepContext ctxv{w, v, grid.time(v)};
            for (std::size_t l = 0; l < spec.Fg.size(); ++l) {
                const double dj = spec.Dg[l].path(w).right_jump(v);
                if (dj != 0.0) rhs -= spec.Fg[l](ctxv, Y.path(a).at(v)) * dj;
            }
            const double lhs = Y.path(a).at(v);
            const double r = lhs - rhs;
            acc.add(v, r, weight);
            if (std::abs(r) > worst) {
                worst = std::abs(r);
                rep.worst_path = a;
            }
        }
    }
    finalize(rep, acc, grid, P, in.exact);
    return rep;
}

}  // namespace

ResidualReport residual_g_bsde(const GResidualInputs& in) {
    if (!in.spec || !in.model || !in.y_hat || !in.z_hat || !in.u_hat || !in.theta)
        throw std::invalid_argument("residual_g_bsde: missing inputs");
    return g_residual_core(in, false);
}

ResidualReport residual_g_rbsde(const GResidualInputs& in, const SkorokhodTolerances& sk_tol) {
    if (!in.l_hat) throw std::invalid_argument("residual_g_rbsde: reflection bundle required");
    ResidualReport rep = g_residual_core(in, true);
    std::vector<std::size_t> horizon(in.y_hat->n_paths());
    for (std::size_t a = 0; a < horizon.size(); ++a) {
        const std::size_t w = in.scenario ? (*in.scenario)[a] : a;
        horizon[a] = std::min(in.spec->reward.tau_node[w], (*in.theta)[a]);
    }
    auto audit = skorokhod_audit(*in.y_hat, *in.l_hat, sk_tol, horizon);
    rep.details = audit.pass ? "skorokhod: PASS" : "skorokhod: FAIL (" + audit.note + ")";
    rep.pass = rep.pass && audit.pass;
    return rep;
}

namespace {

ResidualReport f_residual_core(const FResidualInputs& in, bool reflected) {
    const GBsdeSpec& spec = *in.spec;
    const RandomTimeModel& model = *in.model;
    const SolutionBundle& sol = *in.solution;
    const PathEnsemble& Y = sol.y;
    const std::size_t P = Y.n_paths();
    const TimeGrid& grid = Y.grid();
    const std::size_t d = sol.z.size();

    std::vector<PathEnsemble> Mtilde;
    for (std::size_t k = 0; k < d; ++k)
        Mtilde.push_back(deflate_martingale(model.martingale[k], k, model, in.bracket));

    ResidualReport rep;
    rep.name = in.name;
    rep.tolerance = in.tolerance;
    Accumulator acc;
    acc.init(grid.size());
    double worst = -1.0;

    std::vector<double> zrow(d, 0.0);
    for (std::size_t p = 0; p < P; ++p) {
        const std::size_t tau = spec.reward.tau_node[p];
        const double weight = Y.weight(p);
        double rhs = spec.reward.X.path(p).at(tau);
        {
            const double r = Y.path(p).at(tau) - rhs;
            acc.add(tau, r, weight);
        }
        for (std::size_t v = tau; v-- > 0;) {
            const std::size_t s = v + 1;
            const StepContext ctx{p, s, grid.time(s)};
            for (std::size_t k = 0; k < d; ++k) zrow[k] = sol.z[k].path(p).at(s);
            const double u_val = sol.u.n_paths() ? sol.u.path(p).at(s) : 0.0;
            const double y_s = Y.path(p).at(s);
            const double r_s = spec.reward.R.path(p).at(s);
            double jump_corr = 0.0;
            for (std::size_t j = 0; j < spec.Fr.size(); ++j) {
                const double dD = spec.Dr[j].path(p).at_increment(s);
                if (dD != 0.0) rhs -= spec.Fr[j](ctx, y_s, zrow, u_val) * dD;
                const double lj = spec.Dr[j].path(p).left_jump(s);
                if (lj != 0.0)
                    jump_corr += (spec.Fr[j](ctx, r_s, zrow, u_val) -
                                  spec.Fr[j](ctx, y_s, zrow, u_val)) *
                                 lj;
            }
            for (std::size_t k = 0; k < d; ++k)
                rhs -= zrow[k] * Mtilde[k].path(p).at_increment(s);
            rhs += (r_s - y_s - jump_corr) * model.Gamma.path(p).at_increment(s);
            if (reflected) {
                rhs += sol.l.l_r_interior.path(p).at_increment(s) +
                       sol.l.l_r_jump.path(p).at_increment(s);
                rhs += sol.l.l_g.path(p).right_jump(v);
            }
            const StepContext ctxv{p, v, grid.time(v)};
            for (std::size_t l = 0; l < spec.Fg.size(); ++l) {
                const double dj = spec.Dg[l].path(p).right_jump(v);
                if (dj != 0.0) rhs -= spec.Fg[l](ctxv, Y.path(p).at(v)) * dj;
            }
            const double r = Y.path(p).at(v) - rhs;
            acc.add(v, r, weight);
            if (std::abs(r) > worst) {
                worst = std::abs(r);
                rep.worst_path = p;
            }
        }
    }
    finalize(rep, acc, grid, P, in.exact);
    return rep;
}

}  // namespace

ResidualReport residual_f_bsde(const FResidualInputs& in) {
    if (!in.spec || !in.model || !in.solution)
        throw std::invalid_argument("residual_f_bsde: missing inputs");
    return f_residual_core(in, false);
}

ResidualReport residual_f_rbsde(const FResidualInputs& in, const SkorokhodTolerances& sk_tol) {
    ResidualReport rep = f_residual_core(in, true);
    auto audit = skorokhod_audit(in.solution->y, in.solution->l, sk_tol,
                                 in.spec->reward.tau_node);
    rep.details = audit.pass ? "skorokhod: PASS" : "skorokhod: FAIL (" + audit.note + ")";
    rep.pass = rep.pass && audit.pass;
    return rep;
}

ResidualReport azema_identity_suite(const RandomTimeModel& model, double tolerance) {
    ResidualReport rep;
    rep.name = "azema-identities";
    rep.tolerance = tolerance;
    const std::size_t P = model.n_paths();
    const TimeGrid& grid = *model.grid;
    Accumulator acc;
    acc.init(grid.size());
    const bool has_n = model.n.n_paths() == P;
    double worst = -1.0;
    for (std::size_t p = 0; p < P; ++p) {
        const double w = model.G.weight(p);
        for (std::size_t u = 0; u < grid.size(); ++u) {
            const double G = model.G.path(p).at(u);
            const double Gt = model.Gtilde.path(p).at(u);
            double r = 0.0;
            r = std::max(r, std::max(0.0, G - Gt));                                   // Gt >= G
            r = std::max(r, std::abs(Gt - G - model.Ao.path(p).left_jump(u)));        // dA^o
            r = std::max(r, std::abs(Gt - model.G.path(p).pre(u) -
                                     model.m.path(p).left_jump(u)));                  // dm
            r = std::max(r, std::abs(G - model.m.path(p).at(u) + model.Ao.path(p).at(u)));
            if (has_n)
                r = std::max(r, std::abs(G - model.n.path(p).at(u) + model.Ap.path(p).at(u)));
            r = std::max(r, std::abs(model.Gtilde.path(p).post(u) - G));              // Gt_+ = G
            const double dGam = model.Gamma.path(p).left_jump(u);
            r = std::max(r, std::max(0.0, -dGam));
            r = std::max(r, std::max(0.0, dGam - 1.0));
            if (u > 0) {
                r = std::max(r, std::max(0.0, -model.Ao.path(p).at_increment(u)));
                r = std::max(r, std::max(0.0, -model.Ap.path(p).at_increment(u)));
                r = std::max(r, std::max(0.0, -model.Gamma.path(p).at_increment(u)));
            }
            acc.add(u, r, w);
            if (r > worst) {
                worst = r;
                rep.worst_path = p;
                rep.worst_node = u;
            }
        }
    }
    finalize(rep, acc, grid, P, /*exact=*/true);
    return rep;
}

AppendixReport appendix_identity_checks(const RandomTimeModel& model, double tolerance,
                                        const PathEnsemble* K_mart, const PathEnsemble* C_laglad,
                                        const PathEnsemble* R_proc, std::uint64_t synth_seed) {
    AppendixReport out;
    const std::size_t P = model.n_paths();
    const TimeGrid& grid = *model.grid;

    // ---- (i) the G^{-1} identity --------------------------------------
    {
        ResidualReport rep;
        rep.name = "appendix-inverse-azema";
        rep.tolerance = tolerance;
        Accumulator acc;
        acc.init(grid.size());
        for (std::size_t p = 0; p < P; ++p) {
            const LagladPath& G = model.G.path(p);
            const LagladPath& Gt = model.Gtilde.path(p);
            const LagladPath& m = model.m.path(p);
            const LagladPath& Gam = model.Gamma.path(p);
            double sum_m = 0.0, sum_g = 0.0;
            acc.add(0, 0.0, model.G.weight(p));
            for (std::size_t u = 1; u < grid.size(); ++u) {
                const double dm = m.at_increment(u);
                const double dmt = dm - dm * dm / Gt.at(u);
                sum_m += dmt / (G.pre(u) * G.pre(u));
                sum_g += Gam.at_increment(u) / G.at(u);
                const double r = 1.0 / G.at(u) - (1.0 / G.at(0) - sum_m + sum_g);
                acc.add(u, r, model.G.weight(p));
            }
        }
        finalize(rep, acc, grid, P, true);
        rep.pass = rep.metric <= tolerance;
        out.inverse_azema = rep;
    }

    // ---- (ii) dynamics of Y = G^{-1}(K - R.A^o + C) --------------------
    {
        ResidualReport rep;
        rep.name = "appendix-synthetic-y";
        rep.tolerance = tolerance;
        Accumulator acc;
        acc.init(grid.size());

        PathEnsemble K_local, C_local, R_local;
        if (!K_mart) {
            // default: a scaled copy of the first driving martingale, or
            // a deterministic constant when none is present
            K_local = PathEnsemble(model.G.grid_ptr(), P, 0.0);
            for (std::size_t p = 0; p < P; ++p)
                for (std::size_t u = 0; u < grid.size(); ++u) {
                    const double v = model.martingale.empty()
                                         ? 0.0
                                         : 0.5 * model.martingale[0].path(p).at(u);
                    K_local.path(p).set(u,
                                        model.martingale.empty()
                                            ? 0.0
                                            : 0.5 * model.martingale[0].path(p).pre(u),
                                        v, v);
                }
            K_mart = &K_local;
        }
        if (!C_laglad) {
            C_local = PathEnsemble(model.G.grid_ptr(), P, 0.0);
            std::mt19937_64 rng(synth_seed);
            std::uniform_real_distribution<double> unif(-0.2, 0.3);
            for (std::size_t p = 0; p < P; ++p) {
                double acc_c = 0.1;
                for (std::size_t u = 0; u < grid.size(); ++u) {
                    const double pre = acc_c;
                    const double lj = (u == grid.size() / 3) ? unif(rng) : 0.0;
                    const double rj = (u == grid.size() / 2) ? unif(rng) : 0.0;
                    C_local.path(p).set(u, pre, pre + lj, pre + lj + rj);
                    acc_c = pre + lj + rj;
                }
            }
            C_laglad = &C_local;
        }
        if (!R_proc) {
            R_local = PathEnsemble(model.G.grid_ptr(), P, 0.4);
            R_proc = &R_local;
        }

        for (std::size_t p = 0; p < P; ++p) {
            const LagladPath& G = model.G.path(p);
            const LagladPath& Gt = model.Gtilde.path(p);
            const LagladPath& m = model.m.path(p);
            const LagladPath& Gam = model.Gamma.path(p);
            const LagladPath& Ao = model.Ao.path(p);
            const LagladPath& K = K_mart->path(p);
            const LagladPath& C = C_laglad->path(p);
            const LagladPath& R = R_proc->path(p);
            // Y = G^{-1}(K - R.A^o + C); the R-integral carries the optional
            // convention and its left limit excludes only the node's jump.
            std::vector<double> RAo_at(grid.size(), 0.0), RAo_pre(grid.size(), 0.0);
            for (std::size_t u = 1; u < grid.size(); ++u) {
                RAo_at[u] = RAo_at[u - 1] + R.at(u) * Ao.at_increment(u);
                RAo_pre[u] = RAo_at[u] - R.at(u) * Ao.left_jump(u);
            }
            auto Yat = [&](std::size_t u) { return (K.at(u) - RAo_at[u] + C.at(u)) / G.at(u); };
            auto Ypre = [&](std::size_t u) {
                return (K.pre(u) - RAo_pre[u] + C.pre(u)) / G.pre(u);
            };
            double rhs = Yat(0);
            acc.add(0, 0.0, model.G.weight(p));
            for (std::size_t u = 1; u < grid.size(); ++u) {
                const double dm = m.at_increment(u);
                const double dK = K.at_increment(u);
                const double dmt = dm - dm * dm / Gt.at(u);
                const double dKt = dK - dK * dm / Gt.at(u);
                const double dCr = (C.pre(u) - C.post(u - 1)) + C.left_jump(u);
                rhs += -(R.at(u) - Yat(u)) * Gam.at_increment(u) -
                       Ypre(u) / G.pre(u) * dmt + dKt / G.pre(u) + dCr / Gt.at(u) +
                       C.right_jump(u - 1) / G.at(u - 1);
                const double r = Yat(u) - rhs;
                acc.add(u, r, model.G.weight(p));
            }
        }
        finalize(rep, acc, grid, P, true);
        out.synthetic_y = rep;
    }

    // ---- (iii) optional integration by parts on pure-jump FV pairs ----
    {
        ResidualReport rep;
        rep.name = "appendix-integration-by-parts";
        rep.tolerance = 1e-12;
        Accumulator acc;
        acc.init(grid.size());
        std::mt19937_64 rng(synth_seed ^ 0x9E3779B97F4A7C15ULL);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        std::bernoulli_distribution coin(0.4);
        const std::size_t reps = 24;
        for (std::size_t rep_i = 0; rep_i < reps; ++rep_i) {
            LagladPath X(model.G.grid_ptr()), Y(model.G.grid_ptr());
            for (LagladPath* path : {&X, &Y}) {
                double post_prev = unif(rng);
                for (std::size_t u = 0; u < grid.size(); ++u) {
                    const double pre = post_prev;  // pure jump: no continuous part
                    const double lj = coin(rng) ? unif(rng) : 0.0;
                    const double rj = coin(rng) ? unif(rng) : 0.0;
                    path->set(u, pre, pre + lj, pre + lj + rj);
                    post_prev = pre + lj + rj;
                }
            }
            double circ = X.at(0) * Y.at(0);
            acc.add(0, 0.0, 1.0);
            for (std::size_t u = 1; u < grid.size(); ++u) {
                // X o Y + Y o X + [X,Y] accumulated over (u-1, u] and the right
                // jumps at u-1
                const double dyr = Y.at(u) - Y.post(u - 1);
                const double dxr = X.at(u) - X.post(u - 1);
                circ += X.pre(u) * dyr + Y.pre(u) * dxr + X.left_jump(u) * Y.left_jump(u);
                circ += X.at(u - 1) * Y.right_jump(u - 1) + Y.at(u - 1) * X.right_jump(u - 1) +
                        X.right_jump(u - 1) * Y.right_jump(u - 1);
                const double r = X.at(u) * Y.at(u) - circ;
                acc.add(u, r, 1.0);
            }
        }
        finalize(rep, acc, grid, reps, true);
        out.integration_parts = rep;
    }
    return out;
}

PathEnsemble stop_ensemble(const PathEnsemble& values, const std::vector<std::size_t>& stop_node) {
    PathEnsemble out = values;
    for (std::size_t p = 0; p < values.n_paths(); ++p) {
        const std::size_t stop = stop_node[p];
        if (stop == kNever) continue;
        const double v = values.path(p).at(std::min(stop, values.path(p).size() - 1));
        for (std::size_t u = stop + 1; u < values.path(p).size(); ++u)
            out.path(p).set_flat(u, v);
    }
    return out;
}

ResidualReport martingale_test(const MartingaleTestInputs& in) {
    const PathEnsemble& V = *in.values;
    const TimeGrid& grid = V.grid();
    const std::size_t P = V.n_paths();
    ResidualReport rep;
    rep.name = in.name;

    std::vector<std::size_t> cps = in.checkpoints;
    if (cps.empty()) {
        const std::size_t n = grid.size() - 1;
        cps = {0, n / 4, n / 2, 3 * n / 4, n};
        cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
    }

    if (in.exact_ce) {
        rep.tolerance = in.exact_tolerance;
        Accumulator acc;
        acc.init(grid.size());
        for (std::size_t u = 0; u + 1 < grid.size(); ++u) {
            std::vector<double> inc(P);
            for (std::size_t p = 0; p < P; ++p) inc[p] = V.path(p).at_increment(u + 1);
            auto cond = in.exact_ce->condexp(u, inc);
            for (std::size_t p = 0; p < P; ++p) acc.add(u, cond[p], V.weight(p));
        }
        finalize(rep, acc, grid, P, /*exact=*/true);
        return rep;
    }

    if (P < 1000) throw std::invalid_argument("martingale_test: need >= 1000 paths in mc mode");
    rep.tolerance = in.threshold;
    double maxz = 0.0;
    for (std::size_t i = 0; i + 1 < cps.size(); ++i) {
        const std::size_t a = cps[i], b = cps[i + 1];
        // orthogonality z-scores against the basis at the window start
        const std::size_t nf = in.features ? in.features(0, a).size() : 0;
        for (std::size_t fidx = 0; fidx <= nf; ++fidx) {
            double s = 0.0, s2 = 0.0;
            for (std::size_t p = 0; p < P; ++p) {
                const double phi = fidx == 0 ? 1.0 : in.features(p, a)[fidx - 1];
                const double x = phi * (V.path(p).at(b) - V.path(p).at(a));
                s += x;
                s2 += x * x;
            }
            const double mean = s / P;
            const double var = std::max(1e-300, s2 / P - mean * mean);
            const double z = mean / std::sqrt(var / P);
            maxz = std::max(maxz, std::abs(z));
        }
        CheckpointStat st;
        st.node = b;
        st.time = grid.time(b);
        st.mean = maxz;
        rep.checkpoints.push_back(st);
    }
    rep.metric = maxz;
    rep.max_mean_abs = maxz;
    rep.pass = maxz <= in.threshold;
    return rep;
}

}  // namespace horizon
