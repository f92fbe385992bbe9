#pragma once

#include "snell/error.hpp"
#include "snell/lattice.hpp"
#include "snell/model.hpp"
#include "snell/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <vector>

namespace snell {

/// Terminal value, barrier, driver f(t, path, y, z, v) and jump constraint
/// chi(t, path, y, z, e) of a reflected BSDE with constrained jumps.
struct BsdeSpec {
    std::function<double(const PathView&)> terminal;
    std::function<double(double, const PathView&)> barrier;
    std::function<double(double, const PathView&, double, std::span<const double>, std::span<const double>)> driver;
    std::function<double(double, const PathView&, double, std::span<const double>, std::size_t)> constraint;
    double driver_lipschitz = 0.0;
    double constraint_lipschitz = 0.0;
    /// |Y| above this aborts the solve with a divergence error.
    double divergence_bound = 1e8;
    /// One extra driver evaluation with y replaced by the first-pass value.
    bool picard = false;
};

/// The linear case: S = Psi(., X), xi = Psi(T, X), driver f(., X),
/// constraint chi(., X, e).
inline BsdeSpec linear_bsde(const ProblemSpec& spec) {
    BsdeSpec b;
    const double T = spec.horizon;
    b.terminal = [spec, T](const PathView& v) { return spec.psi(T, v); };
    b.barrier = [spec](double t, const PathView& v) { return spec.psi(t, v); };
    b.driver = [spec](double t, const PathView& v, double, std::span<const double>, std::span<const double>) {
        return spec.f(t, v);
    };
    b.constraint = [spec](double t, const PathView& v, double, std::span<const double>, std::size_t e) {
        return spec.chi(t, v, e);
    };
    return b;
}

/// Density nu >= 0 per (level, node, mark) on a scenario lattice, with the
/// bound it was declared under.
struct TreeDensity {
    double bound = 0.0;
    std::vector<std::vector<double>> values;  // level -> node * marks + e

    double at(std::size_t level, std::size_t node, std::size_t marks, std::size_t e) const {
        return values[level][node * marks + e];
    }

    static TreeDensity constant(const ScenarioLattice& lat, double nu) {
        TreeDensity d;
        d.bound = nu;
        for (std::size_t i = 0; i < lat.steps(); ++i) d.values.emplace_back(lat.nodes(i) * lat.mark_count(), nu);
        return d;
    }

    void validate(const ScenarioLattice& lat) const {
        require(values.size() >= lat.steps(), ErrorKind::spec, "density does not cover the lattice");
        for (std::size_t i = 0; i < lat.steps(); ++i) {
            require(values[i].size() == lat.nodes(i) * lat.mark_count(), ErrorKind::spec,
                    "density has the wrong number of entries");
            for (double v : values[i])
                require(std::isfinite(v) && v >= 0.0 && v <= bound, ErrorKind::spec,
                        "density must lie in [0, bound]");
        }
    }
};

/// Per-node stop flags; the rule stops at the first flagged level along a
/// path and always at T.
struct StoppingRule {
    std::vector<std::vector<std::uint8_t>> flags;

    bool stops(std::size_t level, std::size_t node) const {
        return level + 1 >= flags.size() || flags[level][node] != 0;
    }

    /// Stopping level of the path ending at (level, node).
    std::size_t stopping_level(const ScenarioLattice& lat, std::size_t level, std::size_t node) const {
        std::vector<std::size_t> chain(level + 1);
        for (std::size_t i = level + 1; i-- > 0;) {
            chain[i] = node;
            node = lat.parent(node);
        }
        for (std::size_t i = 0; i <= level; ++i)
            if (stops(i, chain[i])) return i;
        return level;
    }

    static StoppingRule at_horizon(const ScenarioLattice& lat) {
        StoppingRule r;
        for (std::size_t i = 0; i <= lat.steps(); ++i) r.flags.emplace_back(lat.nodes(i), i == lat.steps() ? 1 : 0);
        return r;
    }
};

struct PenalizedLevel {
    std::vector<double> y;
    std::vector<double> barrier;
    std::vector<double> z;        // node * dim + c
    std::vector<double> v;        // node * marks + e, jump branch mean minus the step value
    std::vector<double> dk_plus;
    std::vector<double> dk_minus;
    std::vector<double> k_plus;   // cumulative through this level along the path
    std::vector<double> k_minus;
    std::vector<std::uint8_t> binding;  // node * marks + e
};

/// Discrete (Y, Z, V, K+, K-) field over a scenario lattice.
class PenalizedSolution {
public:
    std::shared_ptr<const ScenarioLattice> lattice;
    double penalty = 0.0;
    std::vector<PenalizedLevel> levels;

    double y0() const { return levels[0].y[0]; }

    /// E[sum of increments] under the base measure.
    double expected_total(bool plus) const {
        double s = 0.0;
        for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
            const auto& d = plus ? levels[i].dk_plus : levels[i].dk_minus;
            for (std::size_t k = 0; k < d.size(); ++k) s += lattice->probability(i, k) * d[k];
        }
        return s;
    }

    /// Largest barrier shortfall or complementarity residual at any node.
    double max_violation() const {
        double worst = 0.0;
        for (const auto& l : levels)
            for (std::size_t k = 0; k < l.y.size(); ++k) {
                worst = std::max(worst, l.barrier[k] - l.y[k]);
                if (!l.dk_plus.empty()) worst = std::max(worst, std::abs(l.dk_plus[k] * (l.y[k] - l.barrier[k])));
            }
        return worst;
    }
};

namespace detail {

/// min over nu in [0, n]^E of (p0 y0 + sum p_e nu_e a_e) / (p0 + sum p_e nu_e):
/// marks enter in increasing order of a_e while a_e is below the running
/// ratio. Marks that enter get nu = n (flag set).
inline double penalized_mean(double p0, double y0, std::span<const double> pe, std::span<const double> a, double n,
                             std::uint8_t* binding) {
    const std::size_t E = pe.size();
    for (std::size_t e = 0; e < E; ++e) binding[e] = 0;
    if (n <= 0.0) return y0;
    std::vector<std::size_t> order(E);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x] < a[y]; });
    double num = p0 * y0;
    double den = p0;
    double ratio = y0;
    for (std::size_t e : order) {
        if (!(a[e] < ratio)) break;
        num += pe[e] * n * a[e];
        den += pe[e] * n;
        ratio = num / den;
        binding[e] = 1;
    }
    return ratio;
}

/// (p0 y0 + sum p_e nu_e a_e) / (p0 + sum p_e nu_e) for a fixed density.
inline double weighted_mean(double p0, double y0, std::span<const double> pe, std::span<const double> a,
                            std::span<const double> nu) {
    double num = p0 * y0;
    double den = p0;
    for (std::size_t e = 0; e < pe.size(); ++e) {
        num += pe[e] * nu[e] * a[e];
        den += pe[e] * nu[e];
    }
    return num / den;
}

enum class TreeMode { penalized, reflected_density, stopped_density };

inline PenalizedSolution solve_tree(const BsdeSpec& spec, std::shared_ptr<const ScenarioLattice> lat, double n,
                                    TreeMode mode, const TreeDensity* density, const StoppingRule* rule) {
    require(spec.terminal && spec.barrier && spec.driver && spec.constraint, ErrorKind::spec,
            "BSDE specification is incomplete");
    require(n >= 0.0 && std::isfinite(n), ErrorKind::spec, "penalty level must be finite and non-negative");
    if (density) density->validate(*lat);
    const std::size_t m = lat->steps();
    const std::size_t d = lat->spec().dim;
    const std::size_t E = lat->mark_count();
    const std::size_t W = lat->w_branches();
    const double dt = lat->dt();
    const double p0 = lat->jump_probability(0);
    std::vector<double> pe(E);
    for (std::size_t e = 0; e < E; ++e) pe[e] = lat->jump_probability(e + 1);
    std::vector<Vector> incs;
    for (std::size_t w = 0; w < W; ++w) incs.push_back(lat->increment(w));

    PenalizedSolution sol;
    sol.lattice = lat;
    sol.penalty = n;
    sol.levels.resize(m + 1);

    {
        PenalizedLevel& L = sol.levels[m];
        const std::size_t N = lat->nodes(m);
        L.y.resize(N);
        L.barrier.resize(N);
        L.dk_plus.assign(N, 0.0);
        L.dk_minus.assign(N, 0.0);
        parallel_for(N, [&](std::size_t k) {
            const CadlagPath p = lat->path(m, k);
            L.y[k] = spec.terminal(p.view());
            L.barrier[k] = spec.barrier(lat->time(m), p.view());
            require(L.barrier[k] <= L.y[k], ErrorKind::precondition, "barrier exceeds the terminal value");
        });
    }

    for (std::size_t i = m; i-- > 0;) {
        PenalizedLevel& L = sol.levels[i];
        const PenalizedLevel& next = sol.levels[i + 1];
        const std::size_t N = lat->nodes(i);
        const double t = lat->time(i);
        L.y.resize(N);
        L.barrier.resize(N);
        L.z.assign(N * d, 0.0);
        L.v.assign(N * E, 0.0);
        L.dk_plus.assign(N, 0.0);
        L.dk_minus.assign(N, 0.0);
        L.binding.assign(N * E, 0);
        parallel_for(N, [&](std::size_t k) {
            const CadlagPath p = lat->path(i, k);
            const PathView view = p.view();
            std::vector<double> ybar(1 + E, 0.0);
            for (std::size_t j = 0; j <= E; ++j) {
                double s = 0.0;
                for (std::size_t w = 0; w < W; ++w) s += next.y[lat->child(k, lat->branch(w, j))];
                ybar[j] = s / static_cast<double>(W);
            }
            double expectation = p0 * ybar[0];
            for (std::size_t e = 0; e < E; ++e) expectation += pe[e] * ybar[e + 1];
            std::span<double> z(L.z.data() + k * d, d);
            for (std::size_t w = 0; w < W; ++w)
                for (std::size_t j = 0; j <= E; ++j) {
                    const double y = next.y[lat->child(k, lat->branch(w, j))];
                    const double prob = lat->branch_probability(lat->branch(w, j));
                    for (std::size_t c = 0; c < d; ++c) z[c] += prob * y * incs[w][c] / dt;
                }
            std::vector<double> jump_gain(E);
            std::vector<double> a(E);
            for (std::size_t e = 0; e < E; ++e) {
                jump_gain[e] = ybar[e + 1] - ybar[0];
                a[e] = ybar[e + 1] + spec.constraint(t, view, expectation, z, e);
            }
            double c = 0.0;
            if (mode == TreeMode::penalized) {
                c = penalized_mean(p0, ybar[0], pe, a, n, L.binding.data() + k * E);
            } else {
                std::vector<double> nu(E);
                for (std::size_t e = 0; e < E; ++e) nu[e] = density->at(i, k, E, e);
                c = weighted_mean(p0, ybar[0], pe, a, nu);
            }
            for (std::size_t e = 0; e < E; ++e) L.v[k * E + e] = ybar[e + 1] - c;
            double yhat = c + spec.driver(t, view, expectation, z, jump_gain) * dt;
            if (spec.picard) yhat = c + spec.driver(t, view, yhat, z, jump_gain) * dt;
            const double s = spec.barrier(t, view);
            L.barrier[k] = s;
            L.dk_minus[k] = mode == TreeMode::penalized ? ybar[0] - c : 0.0;
            if (mode == TreeMode::stopped_density && rule->stops(i, k)) {
                L.y[k] = s;
            } else if (mode == TreeMode::stopped_density) {
                L.y[k] = yhat;
            } else {
                L.y[k] = std::max(s, yhat);
                L.dk_plus[k] = L.y[k] - yhat;
            }
            require(std::abs(L.y[k]) <= spec.divergence_bound, ErrorKind::divergence,
                    "backward recursion left the configured bound");
        }, 16);
    }

    for (std::size_t i = 0; i <= m; ++i) {
        PenalizedLevel& L = sol.levels[i];
        const std::size_t N = lat->nodes(i);
        L.k_plus.resize(N);
        L.k_minus.resize(N);
        for (std::size_t k = 0; k < N; ++k) {
            const double prev_p = i == 0 ? 0.0 : sol.levels[i - 1].k_plus[lat->parent(k)];
            const double prev_m = i == 0 ? 0.0 : sol.levels[i - 1].k_minus[lat->parent(k)];
            L.k_plus[k] = prev_p + L.dk_plus[k];
            L.k_minus[k] = prev_m + L.dk_minus[k];
        }
    }
    return sol;
}

}  // namespace detail

/// Penalized reflected solve at level n on the scenario tree. Per step the
/// jump density ranges over [0, n] per mark and enters through the
/// normalized change of measure of the step's jump law; the minimizing
/// density is n on marks whose constrained increment V + chi is negative.
inline PenalizedSolution solve_penalized(const BsdeSpec& spec, std::shared_ptr<const ScenarioLattice> lat, double n) {
    return detail::solve_tree(spec, std::move(lat), n, detail::TreeMode::penalized, nullptr, nullptr);
}

inline PenalizedSolution solve_penalized(const ProblemSpec& spec, double dt, double n) {
    return solve_penalized(linear_bsde(spec), std::make_shared<const ScenarioLattice>(spec, dt), n);
}

/// Reflected solve with the penalty replaced by a fixed density nu.
inline PenalizedSolution solve_reflected_density(const BsdeSpec& spec, std::shared_ptr<const ScenarioLattice> lat,
                                                 const TreeDensity& nu) {
    return detail::solve_tree(spec, std::move(lat), 0.0, detail::TreeMode::reflected_density, &nu, nullptr);
}

/// Unreflected solve stopped by `rule` (value S at the stopping node), with
/// jump density nu; returns Y_0.
inline double stopped_bsde_solve(const BsdeSpec& spec, std::shared_ptr<const ScenarioLattice> lat,
                                 const StoppingRule& rule, const TreeDensity& nu) {
    require(rule.flags.size() == lat->steps() + 1, ErrorKind::spec, "stopping rule does not match the lattice");
    return detail::solve_tree(spec, std::move(lat), 0.0, detail::TreeMode::stopped_density, &nu, &rule).y0();
}

/// First hitting of {Y = S} from level `from` on (and T).
inline StoppingRule optimal_stopping_time(const PenalizedSolution& sol, std::size_t from = 0) {
    StoppingRule r;
    for (std::size_t i = 0; i < sol.levels.size(); ++i) {
        const auto& L = sol.levels[i];
        std::vector<std::uint8_t> f(L.y.size(), 0);
        if (i >= from)
            for (std::size_t k = 0; k < f.size(); ++k) f[k] = L.y[k] == L.barrier[k];
        r.flags.push_back(std::move(f));
    }
    return r;
}

struct SnellLimitRow {
    double n = 0.0;
    double y0 = 0.0;
    double decrement = 0.0;
};

struct SnellLimit {
    double value = 0.0;
    std::vector<SnellLimitRow> table;
    bool converged = false;
    bool monotone = true;
    double extrapolated = 0.0;
};

/// Geometric schedule 1, 2, 4, ..., 2^max_exp.
inline std::vector<double> geometric_schedule(int max_exp = 10) {
    std::vector<double> s;
    for (int j = 0; j <= max_exp; ++j) s.push_back(std::ldexp(1.0, j));
    return s;
}

/// Y^n_0 along the schedule; convergence when a decrement drops below tol.
/// The extrapolation 2 Y^{n_max} - Y^{n_max / 2} is a diagnostic only.
inline SnellLimit snell_limit(const BsdeSpec& spec, std::shared_ptr<const ScenarioLattice> lat,
                              const std::vector<double>& schedule, double tol = 1e-4, double backend_tol = 0.0) {
    require(!schedule.empty(), ErrorKind::precondition, "penalty schedule is empty");
    SnellLimit out;
    for (std::size_t j = 0; j < schedule.size(); ++j) {
        const double y = solve_penalized(spec, lat, schedule[j]).y0();
        const double dec = j == 0 ? 0.0 : out.table.back().y0 - y;
        out.table.push_back({schedule[j], y, dec});
        if (j > 0 && dec < -backend_tol) out.monotone = false;
        if (j > 0 && !out.converged && std::abs(dec) < tol) out.converged = true;
    }
    if (schedule.size() == 1) out.converged = true;
    out.value = out.table.back().y0;
    out.extrapolated = out.table.size() >= 2 ? 2.0 * out.value - out.table[out.table.size() - 2].y0 : out.value;
    return out;
}

}  // namespace snell
