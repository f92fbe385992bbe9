#pragma once

#include "snell/bsde.hpp"
#include "snell/grid.hpp"
#include "snell/regression.hpp"
#include "snell/rng.hpp"
#include "snell/simulation.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace snell {

/// Path bundle with the lattice's step law: Gaussian increments and at
/// most one jump per step (none with probability 1 - lambda dt), landing at
/// the end of the step.
struct JumpBundle {
    double dt = 0.0;
    std::size_t steps = 0;
    std::size_t dim = 1;
    std::vector<double> jump_prob;         // [no jump, mark 0, ...]
    std::vector<CadlagPath> paths;
    std::vector<double> dw;                // (path * steps + i) * dim + c
    std::vector<std::uint8_t> choice;      // path * steps + i, 0 = no jump

    std::size_t size() const { return paths.size(); }
    std::size_t mark_count() const { return jump_prob.size() - 1; }
};

inline JumpBundle simulate_jump_bundle(const ProblemSpec& spec, double dt, std::size_t samples, std::uint64_t seed) {
    spec.validate();
    JumpBundle b;
    b.dt = dt;
    b.steps = step_count(spec.horizon, dt);
    b.dim = spec.dim;
    const double lam = spec.total_intensity();
    require(lam * dt < 1.0, ErrorKind::spec, "total jump intensity times dt must be below 1");
    require(spec.mark_count() < 255, ErrorKind::capacity, "too many marks for the bundle");
    b.jump_prob.push_back(1.0 - lam * dt);
    for (const auto& m : spec.marks) b.jump_prob.push_back(m.weight * dt);
    b.paths.assign(samples, CadlagPath(spec.dim));
    b.dw.assign(samples * b.steps * b.dim, 0.0);
    b.choice.assign(samples * b.steps, 0);
    const double sq = std::sqrt(dt);
    parallel_for(samples, [&](std::size_t p) {
        CounterRng rng(split_seed(seed, purpose::regression_bundle), p);
        CadlagPath path(spec.dim, 0.0, spec.x0);
        for (std::size_t i = 0; i < b.steps; ++i) {
            const double t0 = dt * static_cast<double>(i);
            const double t1 = i + 1 == b.steps ? spec.horizon : dt * static_cast<double>(i + 1);
            const PathView v = path.view();
            const Vector a = spec.drift_at(t0, v);
            const Vector s = spec.vol_at(t0, v);
            double* dw = b.dw.data() + (p * b.steps + i) * b.dim;
            for (std::size_t c = 0; c < b.dim; ++c) dw[c] = sq * rng.normal();
            const std::size_t j = rng.categorical(b.jump_prob);
            b.choice[p * b.steps + i] = static_cast<std::uint8_t>(j);
            const auto x = path.back();
            Vector y(x.begin(), x.end());
            for (std::size_t r = 0; r < b.dim; ++r) {
                y[r] += a[r] * dt;
                for (std::size_t c = 0; c < b.dim; ++c) y[r] += s[r * b.dim + c] * dw[c];
            }
            path.push(t1, y);
            if (j > 0) path.apply_jump(t1, spec.jump_at(t1, path.view(), j - 1), j - 1, -1);
        }
        b.paths[p] = std::move(path);
    });
    return b;
}

struct LsmcBsdeResult {
    double n = 0.0;
    double y0 = 0.0;
    double se = 0.0;
    double k_plus_total = 0.0;
    double k_minus_total = 0.0;
    double max_violation = 0.0;
    std::vector<std::vector<double>> y;  // level -> path
};

/// Penalized reflected solve with regression conditional expectations.
/// Branch means come from regressing Y on a polynomial basis of the current
/// state within each jump class, Z from regressing Y dW / dt; the step
/// kernel is the tree's.
inline LsmcBsdeResult solve_penalized_lsmc(const BsdeSpec& spec, const JumpBundle& b, double n, int degree = 3) {
    require(n >= 0.0 && std::isfinite(n), ErrorKind::spec, "penalty level must be finite and non-negative");
    require(b.size() >= 2, ErrorKind::precondition, "bundle needs at least two paths");
    const std::size_t N = b.size();
    const std::size_t m = b.steps;
    const std::size_t d = b.dim;
    const std::size_t E = b.mark_count();
    const double dt = b.dt;
    const double horizon = b.paths[0].end_time();
    const double p0 = b.jump_prob[0];
    const std::vector<double> pe(b.jump_prob.begin() + 1, b.jump_prob.end());

    LsmcBsdeResult out;
    out.n = n;
    out.y.assign(m + 1, std::vector<double>(N));
    for (std::size_t p = 0; p < N; ++p) {
        const PathView v = b.paths[p].view();
        out.y[m][p] = spec.terminal(v);
        const double s = spec.barrier(horizon, v);
        require(s <= out.y[m][p], ErrorKind::precondition, "barrier exceeds the terminal value");
    }

    std::vector<double> contrib(N);
    for (std::size_t i = m; i-- > 0;) {
        const double t = dt * static_cast<double>(i);
        Eigen::MatrixXd x(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
        Eigen::MatrixXd zt(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
        Eigen::MatrixXd all(static_cast<Eigen::Index>(N), 1);
        std::vector<std::vector<std::size_t>> members(1 + E);
        for (std::size_t p = 0; p < N; ++p) {
            const auto r = static_cast<Eigen::Index>(p);
            const auto xi = b.paths[p].at(t);
            for (std::size_t c = 0; c < d; ++c) x(r, static_cast<Eigen::Index>(c)) = xi[c];
            const double y = out.y[i + 1][p];
            all(r, 0) = y;
            members[b.choice[p * m + i]].push_back(p);
            for (std::size_t c = 0; c < d; ++c)
                zt(r, static_cast<Eigen::Index>(c)) = y * b.dw[(p * m + i) * d + c] / dt;
        }
        const Regression zreg(PolynomialBasis(d, degree), x, zt);
        // Branch means: the jump choice is independent of the state, so
        // each branch is regressed on the paths that took it. Thin classes
        // fall back to their sample mean, empty ones to the pooled fit.
        const PolynomialBasis basis(d, degree);
        std::vector<std::optional<Regression>> branch(1 + E);
        std::vector<double> branch_mean(1 + E, 0.0);
        std::optional<Regression> pooled;
        for (std::size_t j = 0; j <= E; ++j) {
            const auto& idx = members[j];
            if (idx.size() >= 2 * basis.size()) {
                Eigen::MatrixXd xs(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(d));
                Eigen::MatrixXd ys(static_cast<Eigen::Index>(idx.size()), 1);
                for (std::size_t q = 0; q < idx.size(); ++q) {
                    xs.row(static_cast<Eigen::Index>(q)) = x.row(static_cast<Eigen::Index>(idx[q]));
                    ys(static_cast<Eigen::Index>(q), 0) = all(static_cast<Eigen::Index>(idx[q]), 0);
                }
                branch[j].emplace(basis, xs, ys);
            } else if (!idx.empty()) {
                for (std::size_t q : idx) branch_mean[j] += all(static_cast<Eigen::Index>(q), 0);
                branch_mean[j] /= static_cast<double>(idx.size());
            } else if (!pooled) {
                pooled.emplace(basis, x, all);
            }
        }
        auto branch_value = [&](std::size_t j, std::span<const double> at) {
            if (branch[j]) return branch[j]->predict(at, 0);
            if (!members[j].empty()) return branch_mean[j];
            return pooled->predict(at, 0);
        };
        std::vector<double> dkp(N, 0.0), dkm(N, 0.0), viol(N, 0.0);
        parallel_for(N, [&](std::size_t p) {
            const PathView view = b.paths[p].view_until(t);
            const auto at = view.current();
            const std::vector<double> zfit = zreg.predict_all(at);
            std::span<const double> z(zfit);
            std::vector<double> fit(1 + E);
            for (std::size_t j = 0; j <= E; ++j) fit[j] = branch_value(j, at);
            const double ybar0 = fit[0];
            double expectation = p0 * ybar0;
            for (std::size_t e = 0; e < E; ++e) expectation += pe[e] * fit[1 + e];
            std::vector<double> a(E), gain(E);
            for (std::size_t e = 0; e < E; ++e) {
                gain[e] = fit[1 + e] - ybar0;
                a[e] = fit[1 + e] + spec.constraint(t, view, expectation, z, e);
            }
            std::vector<std::uint8_t> binding(E);
            const double c = detail::penalized_mean(p0, ybar0, pe, a, n, binding.data());
            double yhat = c + spec.driver(t, view, expectation, z, gain) * dt;
            if (spec.picard) yhat = c + spec.driver(t, view, yhat, z, gain) * dt;
            const double s = spec.barrier(t, view);
            const double y = std::max(s, yhat);
            require(std::abs(y) <= spec.divergence_bound, ErrorKind::divergence,
                    "backward recursion left the configured bound");
            out.y[i][p] = y;
            dkp[p] = y - yhat;
            dkm[p] = ybar0 - c;
            viol[p] = std::max(0.0, s - y) + std::abs(dkp[p] * (y - s));
            if (i == 0) {
                // Pathwise summand whose mean is the step value for the
                // binding set found above.
                double den = p0;
                for (std::size_t e = 0; e < E; ++e) den += binding[e] ? n * pe[e] : 0.0;
                const std::size_t j = b.choice[p * m];
                const double next = out.y[1][p];
                double g = j == 0 ? next : (binding[j - 1] ? n * (next + spec.constraint(t, view, expectation, z, j - 1)) : 0.0);
                contrib[p] = g / den;
            }
        });
        for (std::size_t p = 0; p < N; ++p) {
            out.k_plus_total += dkp[p] / static_cast<double>(N);
            out.k_minus_total += dkm[p] / static_cast<double>(N);
            out.max_violation = std::max(out.max_violation, viol[p]);
        }
    }
    out.y0 = out.y[0][0];
    out.se = summarize(contrib).se;
    if (out.y0 == spec.barrier(0.0, b.paths[0].view_until(0.0))) out.se = 0.0;
    return out;
}

}  // namespace snell
