#pragma once

#include "snell/error.hpp"
#include "snell/grid.hpp"
#include "snell/model.hpp"
#include "snell/parallel.hpp"
#include "snell/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace snell {

enum class NoiseKind { gaussian, rademacher };

/// Seed-splitting purposes. Every random quantity in the library is drawn
/// from split_seed(seed, purpose) with the path (or probe) index as stream.
namespace purpose {
inline constexpr std::uint64_t brownian = 1;
inline constexpr std::uint64_t atoms = 2;
inline constexpr std::uint64_t controls = 3;
inline constexpr std::uint64_t regression_bundle = 4;
inline constexpr std::uint64_t evaluation_bundle = 5;
inline constexpr std::uint64_t probes = 6;
inline constexpr std::uint64_t dispersion = 7;
}  // namespace purpose

/// Brownian increments (steps x dim, row-major) and the Poisson atoms
/// driving one path.
struct DriverNoise {
    std::size_t steps = 0;
    std::size_t dim = 1;
    double dt = 0.0;
    Vector brownian;
    MarkedPointMeasure atoms;

    std::span<const double> increment(std::size_t i) const {
        return std::span<const double>(brownian).subspan(i * dim, dim);
    }
};

inline double total_weight(const std::vector<double>& weights) {
    double s = 0.0;
    for (double w : weights) {
        require(w >= 0.0 && std::isfinite(w), ErrorKind::spec, "mark weights must be non-negative");
        s += w;
    }
    return s;
}

inline std::vector<double> mark_weights(const ProblemSpec& spec) {
    std::vector<double> w;
    for (const auto& m : spec.marks) w.push_back(m.weight);
    return w;
}

/// Poisson random measure on [0, T] x marks with intensity dt x weights.
/// Atom times come from exponential gaps at rate sum(weights); each mark
/// is drawn proportionally to its weight.
inline MarkedPointMeasure simulate_measure(const std::vector<double>& weights, double horizon, std::uint64_t seed,
                                           std::uint64_t stream = 0) {
    const double rate = total_weight(weights);
    require(horizon >= 0.0, ErrorKind::range, "horizon must be non-negative");
    std::vector<Atom> atoms;
    if (rate <= 0.0) return MarkedPointMeasure{};
    CounterRng rng(split_seed(seed, purpose::atoms), stream);
    double t = 0.0;
    while (true) {
        t += rng.exponential(rate);
        if (t > horizon) break;
        atoms.push_back({t, rng.categorical(weights)});
    }
    return MarkedPointMeasure(std::move(atoms));
}

/// Noise for path `path_index` of a bundle. Atoms are drawn only when
/// `with_atoms` is set.
inline DriverNoise make_noise(const ProblemSpec& spec, double dt, NoiseKind kind, std::uint64_t seed,
                              std::uint64_t path_index, bool with_atoms = true) {
    DriverNoise n;
    n.steps = step_count(spec.horizon, dt);
    n.dim = spec.dim;
    n.dt = dt;
    n.brownian.resize(n.steps * n.dim);
    CounterRng rng(split_seed(seed, purpose::brownian), path_index);
    const double sq = std::sqrt(dt);
    for (double& w : n.brownian) w = sq * (kind == NoiseKind::gaussian ? rng.normal() : rng.rademacher());
    if (with_atoms) n.atoms = simulate_measure(mark_weights(spec), spec.horizon, seed, path_index);
    return n;
}

namespace detail {

struct Event {
    double time;
    std::size_t mark;
    int impulse;  // -1 for atoms
};

/// Euler scheme with atoms (time <= cut) and the first `n_imp`
/// interventions of u. Impulse j uses sizes[j] when provided, otherwise
/// its size is read off the path just before it is applied.
inline CadlagPath integrate(const ProblemSpec& spec, const DriverNoise& noise, double cut, const ImpulseControl& u,
                            std::size_t n_imp, const std::vector<Vector>& sizes) {
    std::vector<Event> events;
    for (const auto& a : noise.atoms.atoms())
        if (a.time <= cut + time_tolerance) events.push_back({a.time, a.mark, -1});
    for (std::size_t j = 0; j < n_imp; ++j) events.push_back({u[j].time, u[j].mark, static_cast<int>(j)});
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (std::abs(a.time - b.time) > time_tolerance) return a.time < b.time;
        return (a.impulse < 0 ? -1 : a.impulse) < (b.impulse < 0 ? -1 : b.impulse);
    });

    CadlagPath path(spec.dim, 0.0, spec.x0);
    std::size_t next = 0;
    auto apply = [&](const Event& e) {
        Vector delta;
        if (e.impulse >= 0 && static_cast<std::size_t>(e.impulse) < sizes.size())
            delta = sizes[static_cast<std::size_t>(e.impulse)];
        else
            delta = spec.jump_at(e.time, path.view(), e.mark);
        path.apply_jump(e.time, delta, e.mark, e.impulse);
    };
    while (next < events.size() && events[next].time <= time_tolerance) apply(events[next++]);

    Vector x_next;
    for (std::size_t i = 0; i < noise.steps; ++i) {
        const double t0 = noise.dt * static_cast<double>(i);
        const double t1 = (i + 1 == noise.steps) ? spec.horizon : noise.dt * static_cast<double>(i + 1);
        const PathView v = path.view();
        const Vector a = spec.drift_at(t0, v);
        const Vector s = spec.vol_at(t0, v);
        while (next < events.size() && events[next].time < t1 - time_tolerance) apply(events[next++]);
        const auto x = path.back();
        const auto dw = noise.increment(i);
        x_next.assign(x.begin(), x.end());
        for (std::size_t r = 0; r < spec.dim; ++r) {
            x_next[r] += a[r] * noise.dt;
            for (std::size_t c = 0; c < spec.dim; ++c) x_next[r] += s[r * spec.dim + c] * dw[c];
        }
        path.push(t1, x_next);
        while (next < events.size() && events[next].time <= t1 + time_tolerance) apply(events[next++]);
    }
    return path;
}

}  // namespace detail

/// Forward path with atoms of the noise on [0, cut] and impulses u (all at
/// or after the cut). Impulse j is sized on the path driven by the first
/// j - 1 impulses, re-integrated on the same noise.
inline CadlagPath simulate_sde(const ProblemSpec& spec, const ImpulseControl& u, double cut, const DriverNoise& noise) {
    spec.validate();
    require(noise.steps == step_count(spec.horizon, noise.dt), ErrorKind::grid,
            "noise does not cover the horizon with its step");
    require(noise.dim == spec.dim, ErrorKind::dimension, "noise dimension differs from the state dimension");
    for (const auto& iv : u.interventions()) {
        require(iv.time >= cut - time_tolerance, ErrorKind::precondition, "intervention before the cut");
        require(iv.time <= spec.horizon + time_tolerance, ErrorKind::range, "intervention after the horizon");
        require(iv.mark < spec.mark_count(), ErrorKind::range, "intervention mark out of range");
    }
    std::vector<Vector> sizes;
    for (std::size_t j = 0; j < u.count(); ++j) {
        const CadlagPath prev = detail::integrate(spec, noise, cut, u, j, sizes);
        sizes.push_back(spec.jump_at(u[j].time, prev.view_until(u[j].time), u[j].mark));
    }
    return detail::integrate(spec, noise, cut, u, u.count(), sizes);
}

/// Same path in one pass: each impulse is sized on the path as it stands.
inline CadlagPath simulate_sde_single_pass(const ProblemSpec& spec, const ImpulseControl& u, double cut,
                                           const DriverNoise& noise) {
    spec.validate();
    require(noise.steps == step_count(spec.horizon, noise.dt), ErrorKind::grid,
            "noise does not cover the horizon with its step");
    for (const auto& iv : u.interventions())
        require(iv.time >= cut - time_tolerance, ErrorKind::precondition, "intervention before the cut");
    return detail::integrate(spec, noise, cut, u, u.count(), {});
}

struct MeanEstimate {
    double mean = 0.0;
    double se = 0.0;
    std::size_t samples = 0;
};

inline MeanEstimate summarize(const std::vector<double>& xs) {
    MeanEstimate m;
    m.samples = xs.size();
    if (xs.empty()) return m;
    double s = 0.0;
    for (double x : xs) s += x;
    m.mean = s / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double q = 0.0;
        for (double x : xs) q += (x - m.mean) * (x - m.mean);
        m.se = std::sqrt(q / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
    }
    return m;
}

/// Uniformly random control with exactly k interventions on [0, T].
inline ImpulseControl random_control(std::size_t k, double horizon, std::size_t mark_count, std::uint64_t seed,
                                     std::uint64_t stream) {
    CounterRng rng(split_seed(seed, purpose::controls), stream);
    std::vector<Intervention> items;
    for (std::size_t j = 0; j < k; ++j)
        items.push_back({rng.uniform() * horizon, static_cast<std::size_t>(rng.next_u32() % mark_count)});
    std::sort(items.begin(), items.end(), [](const Intervention& a, const Intervention& b) { return a.time < b.time; });
    return ImpulseControl(std::move(items));
}

struct FlowModulusRow {
    double eps = 0.0;
    double mean_sq_distance = 0.0;
    double se = 0.0;
};

/// Monte Carlo estimate of E[d((T, X^{Xi(u)}), (T, X^u))^2] per eps, with
/// u random (k interventions), common noise across eps, and atoms off
/// (the controlled path from time 0 has no Poisson jumps).
inline std::vector<FlowModulusRow> estimate_flow_modulus(const ProblemSpec& spec, std::size_t k,
                                                         const std::vector<double>& eps_list, std::size_t samples,
                                                         std::uint64_t seed, double dt) {
    std::vector<std::vector<double>> sq(eps_list.size(), std::vector<double>(samples, 0.0));
    parallel_for(samples, [&](std::size_t s) {
        const DriverNoise noise = make_noise(spec, dt, NoiseKind::gaussian, seed, s, false);
        const ImpulseControl u = random_control(k, spec.horizon, spec.mark_count(), seed, s);
        const CadlagPath xu = simulate_sde(spec, u, 0.0, noise);
        for (std::size_t e = 0; e < eps_list.size(); ++e) {
            ImpulseControl ud = u;
            if (eps_list[e] > 0.0) ud = discretize_control(u, GameGrid(spec.horizon, eps_list[e], spec.mark_count()));
            const CadlagPath xd = simulate_sde(spec, ud, 0.0, noise);
            const double d = path_distance(spec.horizon, xd, spec.horizon, xu);
            sq[e][s] = d * d;
        }
    }, 16);
    std::vector<FlowModulusRow> out;
    for (std::size_t e = 0; e < eps_list.size(); ++e) {
        const MeanEstimate m = summarize(sq[e]);
        out.push_back({eps_list[e], m.mean, m.se});
    }
    return out;
}

/// Monte Carlo estimate of E[ ||X^u||_T^p ] for p in {2, 4}.
inline MeanEstimate moment_diagnostic(const ProblemSpec& spec, const ImpulseControl& u, int p, std::size_t samples,
                                      std::uint64_t seed, double dt, NoiseKind kind = NoiseKind::gaussian,
                                      double cut = 0.0) {
    require(p == 2 || p == 4, ErrorKind::precondition, "moment order must be 2 or 4");
    std::vector<double> vals(samples, 0.0);
    parallel_for(samples, [&](std::size_t s) {
        const DriverNoise noise = make_noise(spec, dt, kind, seed, s, cut > 0.0);
        const CadlagPath x = simulate_sde(spec, u, cut, noise);
        vals[s] = std::pow(x.sup_norm(spec.horizon), p);
    });
    return summarize(vals);
}

/// Bundle of independent paths under one control; used by the CLI dump.
inline std::vector<CadlagPath> simulate_bundle(const ProblemSpec& spec, const ImpulseControl& u, double cut,
                                               double dt, std::size_t samples, std::uint64_t seed,
                                               NoiseKind kind = NoiseKind::gaussian) {
    std::vector<CadlagPath> out(samples, CadlagPath(spec.dim));
    parallel_for(samples, [&](std::size_t s) {
        out[s] = simulate_sde(spec, u, cut, make_noise(spec, dt, kind, seed, s, cut > 0.0));
    });
    return out;
}

}  // namespace snell
