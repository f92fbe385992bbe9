#pragma once

#include "snell/error.hpp"
#include "snell/grid.hpp"
#include "snell/model.hpp"
#include "snell/simulation.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace snell {

inline constexpr std::size_t default_lattice_capacity = std::size_t{1} << 22;

/// Exact non-recombining scenario tree. Each step branches into the 2^d
/// sign patterns of a +-sqrt(dt) Rademacher increment times the
/// alternatives {no jump, jump with mark e}; a jump lands at the end of
/// the step, after the diffusion move. Node k at level i has children
/// B*k + b at level i+1, so the branch history is the base-B expansion
/// of the node index.
class ScenarioLattice {
public:
    ScenarioLattice(const ProblemSpec& spec, double dt, bool with_jumps = true,
                    std::size_t capacity = default_lattice_capacity)
        : spec_(spec), dt_(dt), steps_(step_count(spec.horizon, dt)), with_jumps_(with_jumps) {
        spec_.validate();
        require(spec_.dim <= 8, ErrorKind::capacity, "lattice supports at most 8 state dimensions");
        w_branches_ = std::size_t{1} << spec_.dim;
        jump_choices_ = with_jumps_ ? 1 + spec_.mark_count() : 1;
        branches_ = w_branches_ * jump_choices_;
        jump_prob_.assign(jump_choices_, 1.0);
        if (with_jumps_) {
            const double lam = spec_.total_intensity();
            require(lam * dt_ < 1.0, ErrorKind::spec,
                    "total jump intensity times dt must be below 1 for the lattice");
            jump_prob_[0] = 1.0 - lam * dt_;
            for (std::size_t e = 0; e < spec_.mark_count(); ++e) jump_prob_[e + 1] = spec_.marks[e].weight * dt_;
        }
        double leaves = 1.0;
        for (std::size_t i = 0; i < steps_; ++i) leaves *= static_cast<double>(branches_);
        if (leaves > static_cast<double>(capacity)) {
            std::size_t m = 0;
            double n = 1.0;
            while (n * static_cast<double>(branches_) <= static_cast<double>(capacity)) {
                n *= static_cast<double>(branches_);
                ++m;
            }
            fail(ErrorKind::capacity,
                 "scenario tree with " + std::to_string(steps_) + " steps and " + std::to_string(branches_) +
                     " branches per node needs " + std::to_string(leaves) + " leaves (capacity " +
                     std::to_string(capacity) + "); largest feasible depth is " + std::to_string(m) +
                     " steps, i.e. dt >= " + std::to_string(spec_.horizon / static_cast<double>(std::max<std::size_t>(m, 1))));
        }
        build();
    }

    const ProblemSpec& spec() const { return spec_; }
    std::size_t steps() const { return steps_; }
    double dt() const { return dt_; }
    double time(std::size_t i) const { return i == steps_ ? spec_.horizon : dt_ * static_cast<double>(i); }
    bool with_jumps() const { return with_jumps_; }
    std::size_t branches() const { return branches_; }
    std::size_t w_branches() const { return w_branches_; }
    std::size_t jump_choices() const { return jump_choices_; }
    std::size_t mark_count() const { return with_jumps_ ? spec_.mark_count() : 0; }
    std::size_t nodes(std::size_t level) const { return level_sizes_[level]; }
    std::size_t total_nodes() const {
        std::size_t s = 0;
        for (auto n : level_sizes_) s += n;
        return s;
    }

    /// Probability of no jump (j = 0) or a jump with mark j - 1 in one step.
    double jump_probability(std::size_t j) const { return jump_prob_[j]; }
    double branch_probability(std::size_t b) const {
        return jump_prob_[jump_of(b)] / static_cast<double>(w_branches_);
    }
    std::size_t w_of(std::size_t b) const { return b % w_branches_; }
    std::size_t jump_of(std::size_t b) const { return b / w_branches_; }
    std::size_t branch(std::size_t w, std::size_t j) const { return j * w_branches_ + w; }
    std::size_t child(std::size_t node, std::size_t b) const { return node * branches_ + b; }
    std::size_t parent(std::size_t node) const { return node / branches_; }

    /// Rademacher increment (+-sqrt(dt) per component) of W-pattern w.
    Vector increment(std::size_t w) const {
        Vector dw(spec_.dim);
        const double s = std::sqrt(dt_);
        for (std::size_t c = 0; c < spec_.dim; ++c) dw[c] = ((w >> c) & 1u) ? -s : s;
        return dw;
    }

    std::span<const double> state(std::size_t level, std::size_t node) const {
        return std::span<const double>(states_[level]).subspan(node * spec_.dim, spec_.dim);
    }

    /// Reach probability of the node under the base measure.
    double probability(std::size_t level, std::size_t node) const {
        double p = 1.0;
        for (std::size_t i = level; i > 0; --i) {
            p *= branch_probability(node % branches_);
            node /= branches_;
        }
        return p;
    }

    /// Full path from time 0 to the node's time.
    CadlagPath path(std::size_t level, std::size_t node) const {
        std::vector<std::size_t> chain(level + 1);
        for (std::size_t i = level + 1; i-- > 0;) {
            chain[i] = node;
            node = parent(node);
        }
        CadlagPath p(spec_.dim, 0.0, state(0, 0));
        for (std::size_t i = 1; i <= level; ++i) {
            const std::size_t b = chain[i] % branches_;
            const std::size_t j = jump_of(b);
            if (j == 0) {
                p.push(time(i), state(i, chain[i]));
            } else {
                p.push(time(i), pre_jump(i, chain[i]));
                p.apply_jump(time(i), jump_size(i, chain[i]), j - 1, -1);
            }
        }
        return p;
    }

    /// Driver noise that reproduces the path to `leaf` (at the last level)
    /// through simulate_sde with cut = T.
    DriverNoise noise_for(std::size_t level, std::size_t node) const {
        DriverNoise n;
        n.steps = steps_;
        n.dim = spec_.dim;
        n.dt = dt_;
        n.brownian.assign(steps_ * spec_.dim, 0.0);
        std::vector<Atom> atoms;
        std::vector<std::size_t> chain(level + 1);
        for (std::size_t i = level + 1; i-- > 0;) {
            chain[i] = node;
            node = parent(node);
        }
        for (std::size_t i = 1; i <= level; ++i) {
            const std::size_t b = chain[i] % branches_;
            const Vector dw = increment(w_of(b));
            for (std::size_t c = 0; c < spec_.dim; ++c) n.brownian[(i - 1) * spec_.dim + c] = dw[c];
            if (jump_of(b) > 0) atoms.push_back({time(i), jump_of(b) - 1});
        }
        n.atoms = MarkedPointMeasure(std::move(atoms));
        return n;
    }

private:
    std::span<const double> pre_jump(std::size_t level, std::size_t node) const {
        return std::span<const double>(pre_jump_[level]).subspan(node * spec_.dim, spec_.dim);
    }
    std::span<const double> jump_size(std::size_t level, std::size_t node) const {
        return std::span<const double>(jump_size_[level]).subspan(node * spec_.dim, spec_.dim);
    }

    void build() {
        const std::size_t d = spec_.dim;
        level_sizes_.assign(steps_ + 1, 1);
        states_.assign(steps_ + 1, {});
        pre_jump_.assign(steps_ + 1, {});
        jump_size_.assign(steps_ + 1, {});
        states_[0] = spec_.x0;
        pre_jump_[0] = spec_.x0;
        std::vector<Vector> incs;
        for (std::size_t w = 0; w < w_branches_; ++w) incs.push_back(increment(w));
        for (std::size_t i = 0; i < steps_; ++i) {
            const std::size_t n = level_sizes_[i];
            level_sizes_[i + 1] = n * branches_;
            states_[i + 1].assign(level_sizes_[i + 1] * d, 0.0);
            pre_jump_[i + 1].assign(level_sizes_[i + 1] * d, 0.0);
            jump_size_[i + 1].assign(level_sizes_[i + 1] * d, 0.0);
            const double t0 = time(i);
            const double t1 = time(i + 1);
            parallel_for(n, [&](std::size_t k) {
                CadlagPath p = path(i, k);
                const PathView v = p.view();
                const Vector a = spec_.drift_at(t0, v);
                const Vector s = spec_.vol_at(t0, v);
                const auto x = v.current();
                for (std::size_t w = 0; w < w_branches_; ++w) {
                    Vector y(x.begin(), x.end());
                    for (std::size_t r = 0; r < d; ++r) {
                        y[r] += a[r] * dt_;
                        for (std::size_t c = 0; c < d; ++c) y[r] += s[r * d + c] * incs[w][c];
                    }
                    CadlagPath q = p;
                    q.push(t1, y);
                    for (std::size_t j = 0; j < jump_choices_; ++j) {
                        const std::size_t node = child(k, branch(w, j));
                        Vector post = y;
                        if (j > 0) {
                            const Vector g = spec_.jump_at(t1, q.view(), j - 1);
                            for (std::size_t r = 0; r < d; ++r) post[r] += g[r];
                            std::copy(g.begin(), g.end(), jump_size_[i + 1].begin() + static_cast<std::ptrdiff_t>(node * d));
                        }
                        std::copy(y.begin(), y.end(), pre_jump_[i + 1].begin() + static_cast<std::ptrdiff_t>(node * d));
                        std::copy(post.begin(), post.end(), states_[i + 1].begin() + static_cast<std::ptrdiff_t>(node * d));
                    }
                }
            });
        }
    }

    ProblemSpec spec_;
    double dt_;
    std::size_t steps_;
    bool with_jumps_;
    std::size_t w_branches_ = 2;
    std::size_t jump_choices_ = 1;
    std::size_t branches_ = 2;
    std::vector<double> jump_prob_;
    std::vector<std::size_t> level_sizes_;
    std::vector<Vector> states_;
    std::vector<Vector> pre_jump_;
    std::vector<Vector> jump_size_;
};

/// Classical backward induction max(Psi, f dt + E[next]) on the jump-free
/// scenario tree; the reference value for stopping problems.
inline double snell_stopping_value(const ProblemSpec& spec, double dt) {
    const ScenarioLattice lat(spec, dt, false);
    const std::size_t m = lat.steps();
    std::vector<double> next(lat.nodes(m));
    for (std::size_t k = 0; k < lat.nodes(m); ++k) next[k] = spec.psi(lat.time(m), lat.path(m, k).view());
    for (std::size_t i = m; i-- > 0;) {
        std::vector<double> cur(lat.nodes(i));
        for (std::size_t k = 0; k < lat.nodes(i); ++k) {
            const CadlagPath p = lat.path(i, k);
            double mean = 0.0;
            for (std::size_t b = 0; b < lat.branches(); ++b) mean += next[lat.child(k, b)];
            mean /= static_cast<double>(lat.branches());
            cur[k] = std::max(spec.psi(lat.time(i), p.view()), spec.f(lat.time(i), p.view()) * dt + mean);
        }
        next.swap(cur);
    }
    return next[0];
}

}  // namespace snell
