#include "horizon/skorokhod.hpp"

#include <algorithm>
#include <cmath>

namespace horizon {

SkorokhodReport skorokhod_audit(const PathEnsemble& y, const ReflectionBundle& refl,
                                const SkorokhodTolerances& tol) {
    return skorokhod_audit(y, refl, tol, {});
}

SkorokhodReport skorokhod_audit(const PathEnsemble& y, const ReflectionBundle& refl,
                                const SkorokhodTolerances& tol,
                                const std::vector<std::size_t>& terminal_node) {
    SkorokhodReport rep;
    rep.tol_complementarity = tol.complementarity;
    rep.tol_barrier = tol.barrier;
    const std::size_t P = y.n_paths();
    for (std::size_t p = 0; p < P; ++p) {
        const LagladPath& yp = y.path(p);
        const LagladPath& X = refl.barrier.path(p);
        const LagladPath& li = refl.l_r_interior.path(p);
        const LagladPath& lj = refl.l_r_jump.path(p);
        const LagladPath& lg = refl.l_g.path(p);
        const std::size_t last =
            terminal_node.empty() ? yp.size() - 1 : std::min(terminal_node[p], yp.size() - 1);
        double sum_r = 0.0, sum_g = 0.0;
        double prev_l = 0.0;
        for (std::size_t u = 0; u <= last; ++u) {
            if (u > 0) {
                sum_r += (yp.at(u - 1) - X.at(u - 1)) * li.at_increment(u);
                sum_r += (yp.pre(u) - X.pre(u)) * lj.at_increment(u);
            }
            if (u < last) sum_g += (yp.at(u) - X.at(u)) * lg.right_jump(u);

            const double l_here = li.at(u) + lj.at(u) + lg.at(u);
            if (l_here < prev_l - 0.0)
                rep.max_monotonicity_violation =
                    std::max(rep.max_monotonicity_violation, prev_l - l_here);
            if (lg.right_jump(u) < 0.0)
                rep.max_monotonicity_violation =
                    std::max(rep.max_monotonicity_violation, -lg.right_jump(u));
            prev_l = l_here;

            for (double gap : {X.pre(u) - yp.pre(u), X.at(u) - yp.at(u), X.post(u) - yp.post(u)}) {
                if (gap > rep.max_barrier_violation) {
                    rep.max_barrier_violation = gap;
                    rep.worst_path = p;
                    rep.worst_node = u;
                }
            }
        }
        if (std::abs(sum_r) > rep.complementarity_r) {
            rep.complementarity_r = std::abs(sum_r);
            rep.worst_path = p;
        }
        rep.complementarity_g = std::max(rep.complementarity_g, std::abs(sum_g));
    }
    rep.pass = rep.complementarity_r <= tol.complementarity &&
               rep.complementarity_g <= tol.complementarity &&
               rep.max_barrier_violation <= tol.barrier && rep.max_monotonicity_violation <= 0.0;
    if (!rep.pass)
        rep.note = "skorokhod audit failed at path " + std::to_string(rep.worst_path) + ", node " +
                   std::to_string(rep.worst_node);
    return rep;
}

}  // namespace horizon
