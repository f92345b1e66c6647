#include "horizon/random_time.hpp"

#include "horizon/parallel.hpp"
#include "horizon/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace horizon {

namespace {

constexpr std::uint64_t kStreamBrownian = 11;
constexpr std::uint64_t kStreamPoisson = 12;
constexpr std::uint64_t kStreamTheta = 13;

}  // namespace

RandomTimeModel build_cox_model(const PathEnsemble& hazard, std::vector<PathEnsemble> driving,
                                RegressionCE::Features features) {
    const TimeGridPtr grid = hazard.grid_ptr();
    const std::size_t n = grid->size();
    const std::size_t P = hazard.n_paths();

    RandomTimeModel model;
    model.backend = RandomTimeBackend::cox;
    model.grid = grid;
    model.G = PathEnsemble(grid, P);
    model.Gtilde = PathEnsemble(grid, P);
    model.m = PathEnsemble(grid, P, 1.0);
    model.Ao = PathEnsemble(grid, P);
    model.Ap = PathEnsemble(grid, P);
    model.n = PathEnsemble(grid, P, 1.0);
    model.Gamma = PathEnsemble(grid, P);
    model.martingale = std::move(driving);
    model.features = std::move(features);
    model.jump_node.assign(P, kNever);

    for (std::size_t p = 0; p < P; ++p) {
        const LagladPath& lam = hazard.path(p);
        if (lam.at(0) != 0.0) throw std::invalid_argument("build_cox_model: hazard must start at 0");
        LagladPath& G = model.G.path(p);
        LagladPath& Gt = model.Gtilde.path(p);
        LagladPath& Ao = model.Ao.path(p);
        LagladPath& Gam = model.Gamma.path(p);
        double surv = 1.0;
        for (std::size_t u = 0; u < n; ++u) {
            const double cont = u == 0 ? lam.pre(0) : lam.pre(u) - lam.at(u - 1);
            const double jump = lam.left_jump(u);
            if (cont < -1e-14 || jump < -1e-14)
                throw std::invalid_argument("build_cox_model: hazard must be increasing");
            if (jump > 1.0)
                throw std::invalid_argument("build_cox_model: hazard jump exceeds 1");
            const double pre = surv * std::exp(-cont);  // survival just before the node
            const double at = pre * (1.0 - jump);
            G.set(u, pre, at, at);
            Gt.set(u, pre, pre, at);
            Ao.set(u, 1.0 - pre, 1.0 - at, 1.0 - at);
            Gam.set(u, lam.pre(u), lam.at(u), lam.at(u));
            surv = at;
        }
        // Hazard increments are read predictably, so A^p = A^o here.
        model.Ap.path(p) = Ao;
    }

    model.bracket_increment = [](std::size_t, std::size_t, std::size_t) { return 0.0; };

    const PathEnsemble G_copy = model.G;
    model.theta_sampler = [G_copy](std::uint64_t seed) {
        const std::size_t P2 = G_copy.n_paths();
        std::vector<std::size_t> theta(P2, kNever);
        for (std::size_t p = 0; p < P2; ++p) {
            auto rng = path_rng(seed, kStreamTheta, p);
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            const LagladPath& G = G_copy.path(p);
            double surv = 1.0;
            for (std::size_t u = 1; u < G.size(); ++u) {
                const double q = surv > 0.0 ? G.at(u) / surv : 0.0;
                if (unif(rng) > q) {
                    theta[p] = u;
                    break;
                }
                surv = G.at(u);
            }
        }
        return theta;
    };
    return model;
}

RandomTimeModel build_poisson_shock_model(const PoissonShockParams& prm, TimeGridPtr grid) {
    // per-path construction is embarrassingly parallel and seeded per path

    if (!(prm.p > 0.0 && prm.p < 1.0))
        throw std::invalid_argument("build_poisson_shock_model: p must lie in (0,1)");
    const std::size_t n = grid->size();
    const std::size_t P = prm.paths;
    const double ratio = prm.b / prm.sigma;

    RandomTimeModel model;
    model.backend = RandomTimeBackend::poisson_shock;
    model.grid = grid;
    model.G = PathEnsemble(grid, P);
    model.Gtilde = PathEnsemble(grid, P);
    model.m = PathEnsemble(grid, P, 1.0);
    model.Ao = PathEnsemble(grid, P);
    model.Ap = PathEnsemble(grid, P);
    model.n = PathEnsemble(grid, P);
    model.Gamma = PathEnsemble(grid, P);
    model.nu.assign(2, PathEnsemble(grid, P));
    model.jump_node.assign(P, kNever);

    PathEnsemble W(grid, P), Ntilde(grid, P), J_ens(grid, P, 1.0);

    parallel_for(P, prm.threads, [&](std::size_t p) {
        auto rngW = path_rng(prm.seed, kStreamBrownian, p);
        auto rngN = path_rng(prm.seed, kStreamPoisson, p);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::exponential_distribution<double> expo(prm.poisson_intensity);

        // Poisson jump times snapped to the containing node's right end.
        std::vector<std::size_t> jumps;
        for (double t = expo(rngN); t <= grid->horizon(); t += expo(rngN))
            jumps.push_back(grid->snap_right(t));
        const std::size_t t1 = jumps.empty() ? kNever : jumps.front();
        model.jump_node[p] = t1;

        LagladPath& Wp = W.path(p);
        LagladPath& Np = Ntilde.path(p);
        LagladPath& Jp = J_ens.path(p);
        LagladPath& Gp = model.G.path(p);
        LagladPath& Gtp = model.Gtilde.path(p);
        LagladPath& mp = model.m.path(p);
        LagladPath& np = model.n.path(p);
        LagladPath& Aop = model.Ao.path(p);
        LagladPath& App = model.Ap.path(p);
        LagladPath& Gam = model.Gamma.path(p);
        LagladPath& nuW = model.nu[0].path(p);

        double q_mult = 1.0, w = 0.0, m_acc = 1.0, ao_cont = 0.0, ap_acc = 0.0;
        double j_prev = 1.0;
        for (std::size_t u = 0; u < n; ++u) {
            const double tu = grid->time(u);
            if (u > 0) {
                const double dt = grid->dt(u);
                const double dw = gauss(rngW) * std::sqrt(dt);
                const double gt_prev = j_prev * (t1 != kNever && u - 1 > t1 ? prm.p : 1.0);
                const double g_prev = j_prev * (t1 != kNever && u - 1 >= t1 ? prm.p : 1.0);
                const double vol = ratio * (1.0 - j_prev);
                q_mult *= std::exp(vol * dw - 0.5 * vol * vol * dt);
                w += dw;
                m_acc += ratio * gt_prev * (1.0 - j_prev) * dw;
                ao_cont += prm.lambda * g_prev * dt;
                ap_acc += prm.lambda * g_prev * dt;
                if (t1 == kNever || u <= t1)
                    ap_acc += (1.0 - prm.p) * j_prev * prm.poisson_intensity * dt;
            }
            const double j = q_mult * std::exp(-prm.lambda * tu);

            const bool strictly_after = t1 != kNever && u > t1;
            const bool from = t1 != kNever && u >= t1;
            const double g = j * (from ? prm.p : 1.0);
            const double g_pre = j * (strictly_after ? prm.p : 1.0);
            const double gt = g_pre;
            Wp.set_flat(u, w);
            Jp.set_flat(u, j);
            Gp.set(u, g_pre, g, g);
            Gtp.set(u, g_pre, gt, g);
            mp.set_flat(u, m_acc);

            const double ao_jump = from ? (1.0 - prm.p) * Jp.at(t1) : 0.0;
            const double ao_at = ao_cont + ao_jump;
            const double ao_pre = ao_cont + (strictly_after ? ao_jump : 0.0);
            Aop.set(u, ao_pre, ao_at, ao_at);
            App.set_flat(u, ap_acc);
            np.set_flat(u, g + ap_acc);

            const double gam_at = prm.lambda * tu + (from ? 1.0 - prm.p : 0.0);
            const double gam_pre = prm.lambda * tu + (strictly_after ? 1.0 - prm.p : 0.0);
            Gam.set(u, gam_pre, gam_at, gam_at);
            nuW.set_flat(u, ratio * gt * (1.0 - j));

            const double cnt =
                static_cast<double>(std::count_if(jumps.begin(), jumps.end(),
                                                  [u](std::size_t v) { return v <= u; }));
            const double cnt_pre =
                static_cast<double>(std::count_if(jumps.begin(), jumps.end(),
                                                  [u](std::size_t v) { return v < u; }));
            Np.set(u, cnt_pre - prm.poisson_intensity * tu, cnt - prm.poisson_intensity * tu,
                   cnt - prm.poisson_intensity * tu);
            j_prev = j;
        }
    });

    model.martingale = {std::move(W), std::move(Ntilde)};

    const double mu = prm.poisson_intensity;
    model.bracket_increment = [grid, mu](std::size_t k, std::size_t, std::size_t v) {
        const double dt = grid->dt(v);
        return k == 0 ? dt : mu * dt;  // <W> and <compensated N>
    };

    const PathEnsemble& Wm = model.martingale[0];
    std::vector<float> jvals(P * n);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t u = 0; u < n; ++u)
            jvals[p * n + u] = static_cast<float>(J_ens.path(p).at(u));
    std::vector<float> wvals(P * n);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t u = 0; u < n; ++u)
            wvals[p * n + u] = static_cast<float>(Wm.path(p).at(u));
    auto t1s = model.jump_node;
    model.features = [jvals, wvals, t1s, n](std::size_t path, std::size_t node) {
        return std::vector<double>{jvals[path * n + node], wvals[path * n + node],
                                   t1s[path] != kNever && node >= t1s[path] ? 1.0 : 0.0};
    };
    return model;
}

RandomTimeModel build_finite_model(std::shared_ptr<const FiniteFiltration> finite) {
    finite->validate();
    const FiniteFiltration& f = *finite;
    const std::size_t K = f.n_steps();
    const std::size_t N = f.n_scenarios();
    auto grid = f.grid();

    // Conditional default masses dAo_l = E[law_l | F_l], dAp_l = E[law_l | F_{l-1}];
    // l = K+1 is the post-horizon residual that keeps theta finite.
    std::vector<std::vector<double>> dAo(K + 2), dAp(K + 2);
    for (std::size_t l = 0; l <= K + 1; ++l) {
        std::vector<double> mass(N);
        for (std::size_t w = 0; w < N; ++w) mass[w] = f.theta_law[w][l];
        dAo[l] = f.condexp(std::min(l, K), mass);
        dAp[l] = f.condexp(l == 0 ? 0 : std::min(l - 1, K), mass);
    }

    RandomTimeModel model;
    model.backend = RandomTimeBackend::finite_oracle;
    model.grid = grid;
    model.finite = finite;
    model.G = PathEnsemble(grid, 0);
    model.Gtilde = PathEnsemble(grid, 0);
    model.m = PathEnsemble(grid, 0);
    model.n = PathEnsemble(grid, 0);
    model.Ao = PathEnsemble(grid, 0);
    model.Ap = PathEnsemble(grid, 0);
    model.Gamma = PathEnsemble(grid, 0);
    model.jump_node.assign(N, kNever);

    std::vector<std::vector<double>> G(K + 1), Gt(K + 1);
    for (std::size_t k = 0; k <= K; ++k) {
        std::vector<double> tail(N, 0.0), tail_ge(N, 0.0);
        for (std::size_t w = 0; w < N; ++w) {
            double s = 0.0;
            for (std::size_t l = k + 1; l <= K + 1; ++l) s += f.theta_law[w][l];
            tail[w] = s;
            tail_ge[w] = s + f.theta_law[w][k];
        }
        G[k] = f.condexp(k, tail);
        Gt[k] = f.condexp(k, tail_ge);
    }

    for (std::size_t w = 0; w < N; ++w) {
        LagladPath Gp(grid), Gtp(grid), mp(grid), np(grid), Aop(grid), App(grid), Gam(grid);
        std::vector<double> ao_at(K + 1), ap_at(K + 1);
        double ao = 0.0, ap = 0.0, gam = 0.0;
        for (std::size_t k = 0; k <= K; ++k) {
            ao += dAo[k][w];
            ap += dAp[k][w];
            ao_at[k] = ao;
            ap_at[k] = ap;
        }
        for (std::size_t k = 0; k <= K; ++k) {
            const double g = G[k][w];
            const double gt = Gt[k][w];
            const double g_pre = k == 0 ? 1.0 : G[k - 1][w];
            Gp.set(k, g_pre, g, g);
            Gtp.set(k, g_pre, gt, g);
            Aop.set(k, k == 0 ? 0.0 : ao_at[k - 1], ao_at[k], ao_at[k]);
            App.set(k, k == 0 ? 0.0 : ap_at[k - 1], ap_at[k], ap_at[k]);
            // m = Ao + G and n = Ap + G hold exactly in this construction.
            mp.set(k, k == 0 ? 1.0 : ao_at[k - 1] + G[k - 1][w], ao_at[k] + g, ao_at[k] + g);
            np.set(k, k == 0 ? 1.0 : ap_at[k - 1] + G[k - 1][w], ap_at[k] + g, ap_at[k] + g);
            const double dgam = gt > 0.0 ? dAo[k][w] / gt : 0.0;
            Gam.set(k, gam, gam + dgam, gam + dgam);
            gam += dgam;
        }
        model.G.push_back(std::move(Gp));
        model.Gtilde.push_back(std::move(Gtp));
        model.m.push_back(std::move(mp));
        model.n.push_back(std::move(np));
        model.Ao.push_back(std::move(Aop));
        model.Ap.push_back(std::move(App));
        model.Gamma.push_back(std::move(Gam));
    }
    for (PathEnsemble* e : {&model.G, &model.Gtilde, &model.m, &model.n, &model.Ao, &model.Ap,
                            &model.Gamma})
        e->set_weights(f.scenario_probs);

    for (const auto& name : f.martingale_components) model.martingale.push_back(f.ensemble(name));

    // Exact one-step projection integrands nu_k for dm against each component.
    model.nu.assign(model.martingale.size(), PathEnsemble(grid, N));
    for (std::size_t k = 0; k < model.nu.size(); ++k) {
        model.nu[k].set_weights(f.scenario_probs);
        for (std::size_t v = 1; v <= K; ++v) {
            std::vector<double> num(N), den(N);
            for (std::size_t w = 0; w < N; ++w) {
                const double dm = model.m.path(w).at(v) - model.m.path(w).at(v - 1);
                const double dM = model.martingale[k].path(w).at_increment(v);
                num[w] = dm * dM;
                den[w] = dM * dM;
            }
            const auto cnum = f.condexp(v - 1, num);
            const auto cden = f.condexp(v - 1, den);
            for (std::size_t w = 0; w < N; ++w)
                model.nu[k].path(w).set_flat(v, std::abs(cden[w]) > 1e-300 ? cnum[w] / cden[w] : 0.0);
        }
    }

    // Predictable brackets per (component, scenario, step).
    std::vector<std::vector<double>> bracket(model.martingale.size());
    const std::size_t stride = K + 1;
    for (std::size_t k = 0; k < model.martingale.size(); ++k) {
        bracket[k].assign(N * stride, 0.0);
        for (std::size_t v = 1; v <= K; ++v) {
            std::vector<double> den(N);
            for (std::size_t w = 0; w < N; ++w) {
                const double dM = model.martingale[k].path(w).at_increment(v);
                den[w] = dM * dM;
            }
            const auto cden = f.condexp(v - 1, den);
            for (std::size_t w = 0; w < N; ++w) bracket[k][w * stride + v] = cden[w];
        }
    }
    model.bracket_increment = [bracket, stride](std::size_t k, std::size_t path, std::size_t v) {
        return bracket[k][path * stride + v];
    };

    model.features = [](std::size_t, std::size_t) { return std::vector<double>{}; };

    auto fref = finite;
    model.theta_sampler = [fref](std::uint64_t seed) {
        const auto& law = fref->theta_law;
        const std::size_t K2 = fref->n_steps();
        std::vector<std::size_t> theta(law.size(), kNever);
        for (std::size_t w = 0; w < law.size(); ++w) {
            auto rng = path_rng(seed, kStreamTheta, w);
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            double u = unif(rng), acc = 0.0;
            for (std::size_t l = 0; l < law[w].size(); ++l) {
                acc += law[w][l];
                if (u <= acc) {
                    theta[w] = l <= K2 ? l : kNever;
                    break;
                }
            }
        }
        return theta;
    };
    return model;
}

PathEnsemble deflate_martingale(const PathEnsemble& M, std::size_t component,
                                const RandomTimeModel& model, BracketMode mode) {
    const std::size_t P = M.n_paths();
    PathEnsemble out(M.grid_ptr(), P);
    for (std::size_t p = 0; p < P; ++p) {
        const LagladPath& Mp = M.path(p);
        const LagladPath& Gt = model.Gtilde.path(p);
        LagladPath& o = out.path(p);
        double acc = Mp.at(0);
        o.set_flat(0, acc);
        for (std::size_t v = 1; v < Mp.size(); ++v) {
            if (Gt.at(v) <= 0.0)
                throw std::runtime_error("deflate_martingale: Gtilde hit 0; truncate first");
            double drift;
            if (mode == BracketMode::pathwise) {
                const double dm = model.m.path(p).at_increment(v);
                drift = Mp.at_increment(v) * dm / Gt.at(v);
            } else {
                const double nu = model.nu.empty() ? 0.0 : model.nu[component].path(p).at(v - 1);
                drift = nu * model.bracket_increment(component, p, v) / Gt.at(v - 1);
            }
            acc += Mp.at_increment(v) - drift;
            o.set(v, acc - Mp.left_jump(v), acc, acc);
        }
    }
    if (M.has_weights()) {
        std::vector<double> w(P);
        for (std::size_t p = 0; p < P; ++p) w[p] = M.weight(p);
        out.set_weights(std::move(w));
    }
    return out;
}

EtaReport detect_eta_and_truncate(const RandomTimeModel& model, std::size_t tau_node) {
    EtaReport r;
    const std::size_t P = model.n_paths();
    r.eta_node.assign(P, kNever);
    r.tau_prime_node.assign(P, tau_node);
    for (std::size_t p = 0; p < P; ++p) {
        const LagladPath& G = model.G.path(p);
        for (std::size_t u = 0; u < G.size(); ++u) {
            if (G.at(u) <= 0.0) {
                r.eta_node[p] = u;
                r.tau_prime_node[p] = std::min(tau_node, u);
                if (model.Gtilde.path(p).at(u) <= 0.0) r.class_K = false;
                break;
            }
        }
    }
    return r;
}

DefaultMartingales build_default_martingales(const RandomTimeModel& model,
                                             const std::vector<std::size_t>& theta_node) {
    const std::size_t P = model.n_paths();
    if (theta_node.size() != P)
        throw std::invalid_argument("build_default_martingales: theta size mismatch");
    DefaultMartingales out;
    out.N_oG = PathEnsemble(model.grid, P);
    out.N_pG = PathEnsemble(model.grid, P);
    for (std::size_t p = 0; p < P; ++p) {
        const std::size_t th = theta_node[p];
        const LagladPath& Gam = model.Gamma.path(p);
        const LagladPath& Ap = model.Ap.path(p);
        const LagladPath& G = model.G.path(p);
        LagladPath& no = out.N_oG.path(p);
        LagladPath& np = out.N_pG.path(p);
        double accO = 0.0, accP = 0.0;
        no.set_flat(0, 0.0);
        np.set_flat(0, 0.0);
        for (std::size_t u = 1; u < Gam.size(); ++u) {
            const double before_o = accO, before_p = accP;
            if (u <= th) {
                accO -= Gam.at_increment(u);
                accP -= G.pre(u) > 0.0 ? Ap.at_increment(u) / G.pre(u) : 0.0;
            }
            if (th != kNever && u == th) {
                accO += 1.0;
                accP += 1.0;
            }
            no.set(u, before_o, accO, accO);
            np.set(u, before_p, accP, accP);
        }
    }
    if (model.G.has_weights()) {
        std::vector<double> w(P);
        for (std::size_t p = 0; p < P; ++p) w[p] = model.G.weight(p);
        out.N_oG.set_weights(w);
        out.N_pG.set_weights(std::move(w));
    }
    return out;
}

std::vector<std::size_t> sample_theta_by_hazard(const RandomTimeModel& model, std::uint64_t seed) {
    const std::size_t P = model.n_paths();
    std::vector<std::size_t> theta(P, kNever);
    for (std::size_t p = 0; p < P; ++p) {
        auto rng = path_rng(seed, kStreamTheta, p);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        const LagladPath& Gam = model.Gamma.path(p);
        for (std::size_t u = 1; u < Gam.size(); ++u) {
            const double q = std::min(1.0, Gam.at_increment(u));
            if (unif(rng) <= q) {
                theta[p] = u;
                break;
            }
        }
    }
    return theta;
}

}  // namespace horizon
