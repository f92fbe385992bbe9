#pragma once

#include "snell/game.hpp"
#include "snell/regression.hpp"
#include "snell/rng.hpp"
#include "snell/simulation.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace snell {

struct LsmcGameOptions {
    std::size_t paths = 10000;
    std::size_t eval_paths = 10000;
    int degree = 3;
    std::uint64_t seed = 1;
    /// Standard deviation of the initial spread of the regression bundle,
    /// so that post-batch states are covered by the fit.
    double dispersion = 0.25;
    std::optional<std::size_t> max_batch;
    double stop_tolerance = 1e-9;
};

struct LsmcDecision {
    double value = 0.0;
    double psi = 0.0;
    std::size_t batch = 0;
    bool stop = false;
};

/// Markovian lower value by regression: for every (time index, remaining
/// budget) the continuation f dt + R_{i+1} is fitted on a polynomial basis
/// of the current state; R itself is evaluated off the fit at any state.
class LsmcValueField {
public:
    LsmcValueField(const ProblemSpec& spec, const GameGrid& grid, long k, const LsmcGameOptions& opts = {})
        : spec_(spec), grid_(grid), opts_(opts) {
        spec_.validate();
        require(k >= 0, ErrorKind::spec, "intervention budget must be non-negative");
        require(spec_.markovian, ErrorKind::spec, "the regression backend needs a Markovian fixture");
        require(opts.paths >= 2, ErrorKind::precondition, "regression bundle needs at least two paths");
        budget_ = static_cast<std::size_t>(k);
        batches_ = enumerate_batches(grid_.discrete_marks(), std::min(budget_, opts.max_batch.value_or(budget_)));
        const std::size_t m = grid_.steps();
        const std::size_t d = spec_.dim;
        const std::size_t N = opts.paths;
        const double dt = grid_.dt();

        // states[i] is N x d.
        std::vector<Eigen::MatrixXd> states(m + 1, Eigen::MatrixXd(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d)));
        parallel_for(N, [&](std::size_t p) {
            CounterRng rng(split_seed(opts.seed, purpose::dispersion), p);
            Vector x = spec_.x0;
            for (double& v : x) v += opts.dispersion * rng.normal();
            CounterRng noise(split_seed(opts.seed, purpose::regression_bundle), p);
            for (std::size_t i = 0; i <= m; ++i) {
                for (std::size_t c = 0; c < d; ++c)
                    states[i](static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = x[c];
                if (i < m) x = euler_step(grid_.time(i), x, noise);
            }
        });

        fits_.assign(m, std::vector<std::optional<Regression>>(budget_ + 1));
        for (std::size_t i = m; i-- > 0;) {
            const double t = grid_.time(i);
            for (std::size_t r = 0; r <= budget_; ++r) {
                Eigen::MatrixXd target(static_cast<Eigen::Index>(N), 1);
                parallel_for(N, [&](std::size_t p) {
                    const auto row = static_cast<Eigen::Index>(p);
                    Vector x(d), y(d);
                    for (std::size_t c = 0; c < d; ++c) {
                        x[c] = states[i](row, static_cast<Eigen::Index>(c));
                        y[c] = states[i + 1](row, static_cast<Eigen::Index>(c));
                    }
                    const CadlagPath here(d, t, x);
                    target(row, 0) = spec_.f(t, here.view()) * dt + decide(i + 1, y, r).value;
                });
                fits_[i][r].emplace(PolynomialBasis(d, opts.degree), states[i], target);
            }
        }
    }

    const ProblemSpec& spec() const { return spec_; }
    const GameGrid& grid() const { return grid_; }
    std::size_t budget() const { return budget_; }
    std::size_t steps() const { return grid_.steps(); }
    const std::vector<std::vector<std::size_t>>& batches() const { return batches_; }
    const LsmcGameOptions& options() const { return opts_; }

    /// Fitted continuation, made non-increasing in the budget: a larger
    /// budget may always play as a smaller one.
    double continuation(std::size_t i, std::span<const double> x, std::size_t remaining) const {
        double c = fits_[i][0]->predict(x, 0);
        for (std::size_t r = 1; r <= remaining; ++r) c = std::min(c, fits_[i][r]->predict(x, 0));
        return c;
    }

    /// Stopper first, then the best batch (empty first, strict improvement
    /// only) against the fitted continuation.
    LsmcDecision decide(std::size_t i, std::span<const double> x, std::size_t remaining) const {
        const double t = grid_.time(i);
        const CadlagPath here(spec_.dim, t, x);
        LsmcDecision d;
        d.psi = spec_.psi(t, here.view());
        if (i == steps()) {
            d.value = d.psi;
            d.stop = true;
            return d;
        }
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < batches_.size(); ++b) {
            if (batches_[b].size() > remaining) continue;
            Vector y(x.begin(), x.end());
            const double cost = apply_batch(t, y, batches_[b]);
            const double v = cost + continuation(i, y, remaining - batches_[b].size());
            if (v < best) {
                best = v;
                d.batch = b;
            }
        }
        // Within the tolerance the stopper stops and the value snaps to Psi.
        d.stop = best <= d.psi + opts_.stop_tolerance;
        d.value = d.stop ? d.psi : best;
        return d;
    }

    double value() const { return decide(0, spec_.x0, budget_).value; }

    /// Applies a batch in order; each cost and jump is read off the state
    /// left by the previous impulse. Returns the summed cost.
    double apply_batch(double t, Vector& y, const std::vector<std::size_t>& batch) const {
        double cost = 0.0;
        for (std::size_t mark : batch) {
            const CadlagPath pre(spec_.dim, t, y);
            cost += spec_.chi(t, pre.view(), mark);
            const Vector g = spec_.jump_at(t, pre.view(), mark);
            for (std::size_t c = 0; c < spec_.dim; ++c) y[c] += g[c];
        }
        return cost;
    }

    Vector euler_step(double t, const Vector& x, CounterRng& rng) const {
        const std::size_t d = spec_.dim;
        const CadlagPath here(d, t, x);
        const Vector a = spec_.drift_at(t, here.view());
        const Vector s = spec_.vol_at(t, here.view());
        const double dt = grid_.dt();
        const double sq = std::sqrt(dt);
        Vector dw(d);
        for (double& w : dw) w = sq * rng.normal();
        Vector y = x;
        for (std::size_t r = 0; r < d; ++r) {
            y[r] += a[r] * dt;
            for (std::size_t c = 0; c < d; ++c) y[r] += s[r * d + c] * dw[c];
        }
        return y;
    }

private:
    ProblemSpec spec_;
    GameGrid grid_;
    LsmcGameOptions opts_;
    std::size_t budget_ = 0;
    std::vector<std::vector<std::size_t>> batches_;
    std::vector<std::vector<std::optional<Regression>>> fits_;
};

/// Minimizer policy for the upper-value search: batch index to play at
/// (time index, state, remaining budget, field decision).
using MinimizerPolicy = std::function<std::size_t(std::size_t, std::span<const double>, std::size_t, const LsmcDecision&)>;

struct PolicyResult {
    std::string name;
    MeanEstimate estimate;
};

struct LsmcUpperValue {
    double value = 0.0;
    double se = 0.0;
    std::string policy;
    std::vector<PolicyResult> candidates;
};

/// J_0(u, tau^S(u)) on a fresh bundle started at x0 for one policy, where
/// tau^S stops at the first grid time the field says R = Psi.
inline MeanEstimate evaluate_policy(const LsmcValueField& f, const MinimizerPolicy& policy) {
    const ProblemSpec& spec = f.spec();
    const std::size_t m = f.steps();
    const std::size_t N = f.options().eval_paths;
    const double dt = f.grid().dt();
    std::vector<double> payoff(N);
    parallel_for(N, [&](std::size_t p) {
        CounterRng rng(split_seed(f.options().seed, purpose::evaluation_bundle), p);
        Vector x = spec.x0;
        std::size_t r = f.budget();
        double total = 0.0;
        for (std::size_t i = 0; i <= m; ++i) {
            const double t = f.grid().time(i);
            const LsmcDecision d = f.decide(i, x, r);
            if (d.stop) {
                total += d.psi;
                break;
            }
            const std::size_t b = policy(i, x, r, d);
            const auto& batch = f.batches().at(b);
            require(batch.size() <= r, ErrorKind::precondition, "policy exceeded the remaining budget");
            total += f.apply_batch(t, x, batch);
            r -= batch.size();
            const CadlagPath here(spec.dim, t, x);
            total += spec.f(t, here.view()) * dt;
            x = f.euler_step(t, x, rng);
        }
        payoff[p] = total;
    });
    return summarize(payoff);
}

/// Upper value by policy search over: the field's own batch choice, never
/// intervening, and single impulses of each mark above a threshold on the
/// first state component.
inline LsmcUpperValue upper_value_lsmc(const LsmcValueField& f, const std::vector<double>& thresholds = {-0.5, 0.0, 0.5, 1.0}) {
    std::vector<std::pair<std::string, MinimizerPolicy>> policies;
    policies.emplace_back("field", [](std::size_t, std::span<const double>, std::size_t, const LsmcDecision& d) { return d.batch; });
    policies.emplace_back("never", [](std::size_t, std::span<const double>, std::size_t, const LsmcDecision&) { return std::size_t{0}; });
    for (std::size_t b = 1; b < f.batches().size(); ++b) {
        if (f.batches()[b].size() != 1) continue;
        for (double th : thresholds)
            policies.emplace_back("mark" + std::to_string(f.batches()[b][0]) + ">" + std::to_string(th),
                                  [b, th](std::size_t, std::span<const double> x, std::size_t r, const LsmcDecision&) {
                                      return r > 0 && x[0] > th ? b : std::size_t{0};
                                  });
    }
    LsmcUpperValue out;
    out.value = std::numeric_limits<double>::infinity();
    for (const auto& [name, pol] : policies) {
        const MeanEstimate e = evaluate_policy(f, pol);
        out.candidates.push_back({name, e});
        if (e.mean < out.value) {
            out.value = e.mean;
            out.se = e.se;
            out.policy = name;
        }
    }
    return out;
}

}  // namespace snell
