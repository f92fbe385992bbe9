#pragma once

#include "snell/bsde.hpp"
#include "snell/error.hpp"
#include "snell/lattice.hpp"
#include "snell/model.hpp"
#include "snell/parallel.hpp"
#include "snell/rng.hpp"
#include "snell/simulation.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

namespace snell {

/// Parametric jump density for Monte Carlo: nu(t, view, e), where the view
/// holds only information strictly before t (the pre-jump path at an atom).
struct Density {
    std::function<double(double, const PathView&, std::size_t)> nu;
    double bound = 1.0;
    double floor = 0.0;

    static Density constant(double v, double floor = 0.0) {
        return {[v](double, const PathView&, std::size_t) { return v; }, v, floor};
    }

    double operator()(double t, const PathView& v, std::size_t e) const {
        const double x = nu(t, v, e);
        require(std::isfinite(x) && x >= 0.0, ErrorKind::spec, "density must be finite and non-negative");
        require(x <= bound, ErrorKind::spec, "density exceeds its declared bound");
        return std::max(x, floor);
    }
};

/// Density clamped to at most 1 once k atoms have arrived after time t.
inline Density truncate_density(const Density& d, std::size_t k, double t) {
    Density out = d;
    out.nu = [d, k, t](double s, const PathView& v, std::size_t e) {
        std::size_t count = 0;
        for (const auto& j : v.jumps)
            if (j.impulse < 0 && j.time > t + time_tolerance && j.time < s - time_tolerance) ++count;
        const double x = d.nu(s, v, e);
        return count >= k ? std::min(x, 1.0) : x;
    };
    return out;
}

/// Tree analogue: at the step leaving level i, nu <= 1 once k jumps have
/// landed on levels after `from` and up to i.
inline TreeDensity truncate_density(const TreeDensity& d, const ScenarioLattice& lat, std::size_t k, std::size_t from) {
    TreeDensity out = d;
    const std::size_t E = lat.mark_count();
    for (std::size_t i = 0; i < lat.steps(); ++i)
        for (std::size_t node = 0; node < lat.nodes(i); ++node) {
            std::size_t count = 0;
            std::size_t walk = node;
            for (std::size_t l = i; l > from; --l) {
                if (lat.jump_of(walk % lat.branches()) > 0) ++count;
                walk = lat.parent(walk);
            }
            if (count < k) continue;
            for (std::size_t e = 0; e < E; ++e) {
                double& x = out.values[i][node * E + e];
                x = std::min(x, 1.0);
            }
        }
    return out;
}

/// kappa_T = exp(sum_e lambda_e int (1 - nu) dt) * prod over atoms of nu,
/// accumulated in log space. The integral uses left grid points of step dt
/// and the path known at each of them; atoms use the pre-jump view.
inline double girsanov_weight(const Density& nu, const CadlagPath& path, const std::vector<double>& lambda,
                              double horizon, double dt) {
    double log_k = 0.0;
    for (std::size_t j = 0; j < path.jumps().size(); ++j) {
        const auto& rec = path.jumps()[j];
        if (rec.impulse >= 0) continue;
        require(rec.time <= horizon + time_tolerance && rec.time >= 0.0, ErrorKind::range, "atom outside [0, T]");
        const double v = nu(rec.time, path.view_before_jump(j), rec.mark);
        if (v == 0.0) return 0.0;
        log_k += std::log(v);
    }
    const std::size_t m = step_count(horizon, dt);
    for (std::size_t i = 0; i < m; ++i) {
        const double t = dt * static_cast<double>(i);
        const PathView v = path.view_until(t);
        for (std::size_t e = 0; e < lambda.size(); ++e) log_k += lambda[e] * (1.0 - nu(t, v, e)) * dt;
    }
    return std::exp(log_k);
}

/// Same weight for a bare point measure; the density sees a constant path.
inline double girsanov_weight(const Density& nu, const MarkedPointMeasure& mu, const std::vector<double>& lambda,
                              double horizon, double dt) {
    CadlagPath p(1, 0.0, Vector{0.0});
    const Vector zero{0.0};
    for (const auto& a : mu.atoms()) {
        p.push(a.time, zero);
        p.apply_jump(a.time, zero, a.mark, -1);
    }
    return girsanov_weight(nu, p, lambda, horizon, dt);
}

/// J^R on the tree: forward enumeration with branch probabilities
/// reweighted per step by nu and renormalized; the cost of a jump is
/// charged at the node it leaves.
inline double randomized_value(const ProblemSpec& spec, const ScenarioLattice& lat, const TreeDensity& nu,
                               const StoppingRule& tau) {
    nu.validate(lat);
    require(tau.flags.size() == lat.steps() + 1, ErrorKind::spec, "stopping rule does not match the lattice");
    const std::size_t E = lat.mark_count();
    const std::size_t W = lat.w_branches();
    const double dt = lat.dt();
    std::vector<double> weight{1.0};
    std::vector<double> carried{0.0};
    double total = 0.0;
    for (std::size_t i = 0; i <= lat.steps(); ++i) {
        const double t = lat.time(i);
        const std::size_t N = lat.nodes(i);
        std::vector<double> stopped(N, 0.0);
        std::vector<double> next_w(i < lat.steps() ? N * lat.branches() : 0, 0.0);
        std::vector<double> next_c(next_w.size(), 0.0);
        parallel_for(N, [&](std::size_t k) {
            if (weight[k] == 0.0) return;
            const CadlagPath p = lat.path(i, k);
            const PathView v = p.view();
            if (tau.stops(i, k)) {
                stopped[k] = weight[k] * (carried[k] + spec.psi(t, v));
                return;
            }
            const double run = carried[k] + spec.f(t, v) * dt;
            double z = lat.jump_probability(0);
            for (std::size_t e = 0; e < E; ++e) z += lat.jump_probability(e + 1) * nu.at(i, k, E, e);
            for (std::size_t j = 0; j <= E; ++j) {
                const double q = j == 0 ? lat.jump_probability(0) / z
                                        : lat.jump_probability(j) * nu.at(i, k, E, j - 1) / z;
                const double cost = j == 0 ? run : run + spec.chi(t, v, j - 1);
                for (std::size_t w = 0; w < W; ++w) {
                    const std::size_t c = lat.child(k, lat.branch(w, j));
                    next_w[c] = weight[k] * q / static_cast<double>(W);
                    next_c[c] = cost;
                }
            }
        }, 16);
        for (double s : stopped) total += s;
        weight.swap(next_w);
        carried.swap(next_c);
    }
    return total;
}

struct RandomizedEstimate {
    double mean = 0.0;
    double se = 0.0;
    double ess = 0.0;
    std::size_t samples = 0;
    bool ess_warning = false;
};

/// Importance-sampled J^R: base paths carry atoms at the reference
/// intensity and each payoff is weighted by kappa_T. The rule stops at the
/// first grid time where `stop` holds, else at T. Warns when the effective
/// sample size drops below 5% of N.
inline RandomizedEstimate randomized_value(const ProblemSpec& spec, const Density& nu,
                                           const std::function<bool(double, const PathView&)>& stop,
                                           std::size_t samples, std::uint64_t seed, double dt) {
    require(samples > 0, ErrorKind::precondition, "sample count must be positive");
    const std::size_t m = step_count(spec.horizon, dt);
    const std::vector<double> lambda = mark_weights(spec);
    std::vector<double> values(samples), kappa(samples);
    parallel_for(samples, [&](std::size_t s) {
        const DriverNoise noise = make_noise(spec, dt, NoiseKind::gaussian, seed, s, true);
        const CadlagPath x = simulate_sde(spec, ImpulseControl{}, spec.horizon, noise);
        double tau = spec.horizon;
        for (std::size_t i = 0; i < m; ++i) {
            const double t = dt * static_cast<double>(i);
            if (stop && stop(t, x.view_until(t))) {
                tau = t;
                break;
            }
        }
        double payoff = cost_functional(spec, x, ImpulseControl{}, tau);
        for (std::size_t j = 0; j < x.jumps().size(); ++j) {
            const auto& rec = x.jumps()[j];
            if (rec.time <= tau + time_tolerance) payoff += spec.chi(rec.time, x.view_before_jump(j), rec.mark);
        }
        kappa[s] = girsanov_weight(nu, x, lambda, spec.horizon, dt);
        values[s] = kappa[s] * payoff;
    });
    const MeanEstimate est = summarize(values);
    double sk = 0.0, sk2 = 0.0;
    for (double k : kappa) {
        sk += k;
        sk2 += k * k;
    }
    RandomizedEstimate out;
    out.mean = est.mean;
    out.se = est.se;
    out.samples = samples;
    out.ess = sk2 > 0.0 ? sk * sk / sk2 : 0.0;
    out.ess_warning = out.ess < 0.05 * static_cast<double>(samples);
    return out;
}

/// nu* = n on (node, mark) pairs where the constraint binds, else 0 (or
/// the floor).
inline TreeDensity saddle_density(const PenalizedSolution& sol, double floor = 0.0) {
    TreeDensity d;
    d.bound = std::max(sol.penalty, floor);
    for (std::size_t i = 0; i + 1 < sol.levels.size(); ++i) {
        std::vector<double> v(sol.levels[i].binding.size());
        for (std::size_t k = 0; k < v.size(); ++k) v[k] = sol.levels[i].binding[k] ? sol.penalty : floor;
        d.values.push_back(std::move(v));
    }
    return d;
}

struct SaddleProbe {
    std::size_t id = 0;
    double star_tau = 0.0;   // J(nu*, tau)
    double star_taun = 0.0;  // J(nu*, tau_n)
    double nu_taun = 0.0;    // J(nu, tau_n)
    double violation = 0.0;
};

struct SaddleReport {
    double y0 = 0.0;
    double identity_error = 0.0;
    std::vector<SaddleProbe> probes;
    double worst = 0.0;
    std::size_t violations = 0;
};

/// One probe of the saddle chain J(nu*, tau) <= J(nu*, tau_n) <= J(nu, tau_n).
inline SaddleProbe probe_saddle(const ProblemSpec& spec, const PenalizedSolution& sol, const TreeDensity& nu,
                                const StoppingRule& tau) {
    require(nu.bound <= sol.penalty, ErrorKind::precondition, "probe density is not bounded by the penalty level");
    for (const auto& lvl : nu.values)
        for (double x : lvl)
            require(x <= sol.penalty, ErrorKind::precondition, "probe density exceeds the penalty level");
    const ScenarioLattice& lat = *sol.lattice;
    const TreeDensity star = saddle_density(sol);
    const StoppingRule tau_n = optimal_stopping_time(sol);
    SaddleProbe p;
    p.star_tau = randomized_value(spec, lat, star, tau);
    p.star_taun = randomized_value(spec, lat, star, tau_n);
    p.nu_taun = randomized_value(spec, lat, nu, tau_n);
    p.violation = std::max(0.0, p.star_tau - p.star_taun) + std::max(0.0, p.star_taun - p.nu_taun);
    return p;
}

/// Random densities in [0, n] and random stop sets against nu* and tau_n.
inline SaddleReport verify_saddle(const ProblemSpec& spec, const PenalizedSolution& sol, std::size_t probes,
                                  std::uint64_t seed, double tol = 1e-10) {
    const ScenarioLattice& lat = *sol.lattice;
    const double n = sol.penalty;
    SaddleReport r;
    r.y0 = sol.y0();
    r.identity_error =
        std::abs(randomized_value(spec, lat, saddle_density(sol), optimal_stopping_time(sol)) - r.y0);
    for (std::size_t id = 0; id < probes; ++id) {
        CounterRng rng(split_seed(seed, purpose::probes), id);
        TreeDensity nu = TreeDensity::constant(lat, n);
        for (auto& lvl : nu.values)
            for (double& x : lvl) x = n * rng.uniform();
        const double rho = 0.5 * rng.uniform();
        StoppingRule tau = StoppingRule::at_horizon(lat);
        for (std::size_t i = 0; i < lat.steps(); ++i)
            for (auto& f : tau.flags[i]) f = rng.uniform() < rho;
        SaddleProbe p = probe_saddle(spec, sol, nu, tau);
        p.id = id;
        r.worst = std::max(r.worst, p.violation);
        if (p.violation > tol) ++r.violations;
        r.probes.push_back(p);
    }
    return r;
}

}  // namespace snell
