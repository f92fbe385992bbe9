#pragma once

#include "snell/error.hpp"
#include "snell/grid.hpp"
#include "snell/model.hpp"
#include "snell/parallel.hpp"
#include "snell/simulation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace snell {

enum class Backend { tree, lsmc };

inline const char* to_string(Backend b) { return b == Backend::tree ? "tree" : "lsmc"; }

inline Backend parse_backend(const std::string& s) {
    if (s == "tree") return Backend::tree;
    if (s == "lsmc") return Backend::lsmc;
    fail(ErrorKind::config, "unknown backend '" + s + "' (expected tree or lsmc)");
}

struct GameOptions {
    /// Largest batch at one grid time; unset means the budget k.
    std::optional<std::size_t> max_batch;
    /// Collapse histories to (current state, remaining budget).
    bool markov = false;
    /// Cap on the number of (node, history) states per level.
    std::size_t capacity = std::size_t{1} << 22;
};

/// All batches (ordered mark sequences) of length <= max_len, in
/// depth-first order: the empty batch first, each prefix before its
/// extensions, siblings by increasing mark.
inline std::vector<std::vector<std::size_t>> enumerate_batches(const std::vector<std::size_t>& marks,
                                                               std::size_t max_len) {
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> prefix;
    auto rec = [&](auto&& self) -> void {
        out.push_back(prefix);
        if (prefix.size() == max_len) return;
        for (std::size_t m : marks) {
            prefix.push_back(m);
            self(self);
            prefix.pop_back();
        }
    };
    rec(rec);
    return out;
}

/// Rademacher increment of sign pattern w: bit c set means -sqrt(dt) in
/// component c.
inline Vector sign_increment(std::size_t dim, double dt, std::size_t w) {
    Vector dw(dim);
    const double s = std::sqrt(dt);
    for (std::size_t c = 0; c < dim; ++c) dw[c] = ((w >> c) & 1u) ? -s : s;
    return dw;
}

/// Noise reproducing a sequence of sign patterns (no atoms).
inline DriverNoise sign_noise(const ProblemSpec& spec, double dt, const std::vector<std::size_t>& patterns) {
    DriverNoise n;
    n.steps = step_count(spec.horizon, dt);
    n.dim = spec.dim;
    n.dt = dt;
    n.brownian.assign(n.steps * n.dim, 0.0);
    for (std::size_t i = 0; i < patterns.size() && i < n.steps; ++i) {
        const Vector dw = sign_increment(spec.dim, dt, patterns[i]);
        std::copy(dw.begin(), dw.end(), n.brownian.begin() + static_cast<std::ptrdiff_t>(i * n.dim));
    }
    return n;
}

/// One (history, node) state of the game at a grid time, before the
/// batch at that time.
struct GameState {
    CadlagPath path;
    ImpulseControl history;
    std::size_t remaining = 0;
};

/// A candidate batch at a state: its cost, the running cost over the next
/// step on the post-batch path, and the children (one per sign pattern).
struct BatchSlot {
    std::size_t batch = 0;
    double cost = 0.0;
    double running = 0.0;
    std::size_t first_child = 0;
};

struct GameLevel {
    double time = 0.0;
    std::vector<GameState> states;
    std::vector<double> psi;
    std::vector<double> value;
    std::vector<std::uint8_t> stop;
    std::vector<std::size_t> best_slot;
    std::vector<std::size_t> slot_begin;  // per state, into slots; size states + 1
    std::vector<BatchSlot> slots;
    std::vector<std::size_t> children;    // w_branches per slot
    std::vector<double> continuation;     // per slot
};

/// Lower value field of the discretized, truncated game on the sign tree.
class ValueField {
public:
    const ProblemSpec& spec() const { return spec_; }
    const GameGrid& grid() const { return grid_; }
    std::size_t budget() const { return budget_; }
    std::size_t steps() const { return levels_.size() - 1; }
    double dt() const { return grid_.dt(); }
    bool markov() const { return markov_; }
    std::size_t w_branches() const { return w_branches_; }
    const std::vector<std::vector<std::size_t>>& batches() const { return batches_; }
    const GameLevel& level(std::size_t i) const { return levels_[i]; }
    double value() const { return levels_[0].value[0]; }
    std::size_t state_count() const {
        std::size_t n = 0;
        for (const auto& l : levels_) n += l.states.size();
        return n;
    }

    /// Batch slot value against a given next-level value vector. Both the
    /// lower-value recursion and the best response to a fixed stopping
    /// strategy go through this single routine.
    double slot_value(std::size_t i, std::size_t slot, const std::vector<double>& next) const {
        const GameLevel& l = levels_[i];
        const BatchSlot& s = l.slots[slot];
        double mean = 0.0;
        for (std::size_t w = 0; w < w_branches_; ++w) mean += next[l.children[s.first_child + w]];
        mean /= static_cast<double>(w_branches_);
        return s.cost + s.running + mean;
    }

    /// Finds the state reached by control u (interventions on the grid)
    /// and sign patterns w_0..w_{i-1}; only interventions before t_i are read.
    std::optional<std::size_t> locate(std::size_t i, const ImpulseControl& u,
                                      const std::vector<std::size_t>& patterns) const {
        std::size_t s = 0;
        for (std::size_t j = 0; j < i; ++j) {
            const double t = levels_[j].time;
            std::vector<std::size_t> batch;
            for (const auto& iv : u.interventions())
                if (std::abs(iv.time - t) <= 1e-9 * grid_.horizon()) batch.push_back(iv.mark);
            const GameLevel& l = levels_[j];
            std::optional<std::size_t> slot;
            for (std::size_t k = l.slot_begin[s]; k < l.slot_begin[s + 1]; ++k)
                if (batches_[l.slots[k].batch] == batch) slot = k;
            if (!slot) return std::nullopt;
            s = l.children[l.slots[*slot].first_child + patterns.at(j)];
        }
        return s;
    }

private:
    friend ValueField dpp_backward(const ProblemSpec&, const GameGrid&, long, const GameOptions&);

    ProblemSpec spec_;
    GameGrid grid_{1.0, 1.0, 1};
    std::size_t budget_ = 0;
    bool markov_ = false;
    std::size_t w_branches_ = 2;
    std::vector<std::vector<std::size_t>> batches_;
    std::vector<GameLevel> levels_;
};

namespace detail {

inline std::vector<std::uint64_t> markov_key(std::span<const double> x, std::size_t remaining) {
    std::vector<std::uint64_t> key;
    for (double v : x) key.push_back(std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v));
    key.push_back(remaining);
    return key;
}

}  // namespace detail

/// Backward induction for the lower value on the sign tree: at each grid
/// time the stopper compares Psi (before any batch at that time) with the
/// cheapest batch followed by one step of running cost and the mean of
/// the next-level values. No batch is placed at T.
inline ValueField dpp_backward(const ProblemSpec& spec, const GameGrid& grid, long k,
                               const GameOptions& opts = {}) {
    spec.validate();
    require(k >= 0, ErrorKind::spec, "intervention budget must be non-negative");
    require(std::abs(grid.horizon() - spec.horizon) <= time_tolerance, ErrorKind::grid,
            "grid horizon differs from the problem horizon");
    require(grid.mark_count() == spec.mark_count(), ErrorKind::partition,
            "grid partition does not match the mark set");
    require(!opts.markov || spec.markovian, ErrorKind::spec, "markov mode needs a Markovian fixture");
    require(spec.dim <= 8, ErrorKind::capacity, "sign tree supports at most 8 state dimensions");

    ValueField f;
    f.spec_ = spec;
    f.grid_ = grid;
    f.budget_ = static_cast<std::size_t>(k);
    f.markov_ = opts.markov;
    f.w_branches_ = std::size_t{1} << spec.dim;
    const std::size_t max_len = std::min<std::size_t>(opts.max_batch.value_or(f.budget_), f.budget_);
    f.batches_ = enumerate_batches(grid.discrete_marks(), max_len);

    const std::size_t m = grid.steps();
    const double dt = grid.dt();
    const std::size_t W = f.w_branches_;
    std::vector<Vector> incs;
    for (std::size_t w = 0; w < W; ++w) incs.push_back(sign_increment(spec.dim, dt, w));

    f.levels_.resize(m + 1);
    for (std::size_t i = 0; i <= m; ++i) f.levels_[i].time = (i == m) ? spec.horizon : grid.time(i);
    f.levels_[0].states.push_back({CadlagPath(spec.dim, 0.0, spec.x0), ImpulseControl{}, f.budget_});

    struct SlotProto {
        std::size_t batch;
        double cost;
        double running;
        GameState post;
        std::vector<CadlagPath> next_paths;
    };

    for (std::size_t i = 0; i < m; ++i) {
        GameLevel& cur = f.levels_[i];
        GameLevel& nxt = f.levels_[i + 1];
        const double t = cur.time;
        const double t1 = nxt.time;
        std::vector<std::vector<SlotProto>> protos(cur.states.size());
        parallel_for(cur.states.size(), [&](std::size_t s) {
            const GameState& st = cur.states[s];
            for (std::size_t b = 0; b < f.batches_.size(); ++b) {
                const auto& batch = f.batches_[b];
                if (batch.size() > st.remaining) continue;
                SlotProto p{b, 0.0, 0.0, st, {}};
                std::vector<Intervention> hist = st.history.interventions();
                for (std::size_t j = 0; j < batch.size(); ++j) {
                    const PathView v = p.post.path.view();
                    p.cost += spec.chi(t, v, batch[j]);
                    const Vector g = spec.jump_at(t, v, batch[j]);
                    p.post.path.apply_jump(t, g, batch[j], static_cast<int>(hist.size()));
                    hist.push_back({t, batch[j]});
                }
                p.post.remaining = st.remaining - batch.size();
                if (!opts.markov) p.post.history = ImpulseControl(std::move(hist));
                const PathView v = p.post.path.view();
                p.running = spec.f(t, v) * dt;
                const Vector a = spec.drift_at(t, v);
                const Vector sig = spec.vol_at(t, v);
                const auto x = v.current();
                for (std::size_t w = 0; w < W; ++w) {
                    Vector y(x.begin(), x.end());
                    for (std::size_t r = 0; r < spec.dim; ++r) {
                        y[r] += a[r] * dt;
                        for (std::size_t c = 0; c < spec.dim; ++c) y[r] += sig[r * spec.dim + c] * incs[w][c];
                    }
                    if (opts.markov) {
                        p.next_paths.emplace_back(spec.dim, t1, y);
                    } else {
                        CadlagPath q = p.post.path;
                        q.push(t1, y);
                        p.next_paths.push_back(std::move(q));
                    }
                }
                protos[s].push_back(std::move(p));
            }
        }, 1);

        std::map<std::vector<std::uint64_t>, std::size_t> index;
        cur.slot_begin.assign(1, 0);
        for (std::size_t s = 0; s < cur.states.size(); ++s) {
            for (auto& p : protos[s]) {
                BatchSlot slot{p.batch, p.cost, p.running, cur.children.size()};
                for (std::size_t w = 0; w < W; ++w) {
                    std::size_t id;
                    if (opts.markov) {
                        const auto key = detail::markov_key(p.next_paths[w].back(), p.post.remaining);
                        const auto it = index.find(key);
                        if (it != index.end()) {
                            id = it->second;
                        } else {
                            id = nxt.states.size();
                            index.emplace(key, id);
                            nxt.states.push_back({std::move(p.next_paths[w]), ImpulseControl{}, p.post.remaining});
                        }
                    } else {
                        id = nxt.states.size();
                        nxt.states.push_back({std::move(p.next_paths[w]), p.post.history, p.post.remaining});
                    }
                    cur.children.push_back(id);
                }
                cur.slots.push_back(slot);
            }
            cur.slot_begin.push_back(cur.slots.size());
            protos[s].clear();
        }
        if (nxt.states.size() > opts.capacity)
            fail(ErrorKind::capacity,
                 "game state space reaches " + std::to_string(nxt.states.size()) + " states at step " +
                     std::to_string(i + 1) + " (capacity " + std::to_string(opts.capacity) +
                     "); use a coarser eps, a smaller k or max_batch, or markov mode; the largest feasible depth at "
                     "this budget is " + std::to_string(i) + " steps");
    }

    for (std::size_t i = m + 1; i-- > 0;) {
        GameLevel& l = f.levels_[i];
        const std::size_t n = l.states.size();
        l.psi.assign(n, 0.0);
        l.value.assign(n, 0.0);
        l.stop.assign(n, 1);
        l.best_slot.assign(n, 0);
        l.continuation.assign(l.slots.size(), 0.0);
        if (i == m) {
            for (std::size_t s = 0; s < n; ++s) {
                l.psi[s] = spec.psi(l.time, l.states[s].path.view());
                l.value[s] = l.psi[s];
            }
            continue;
        }
        const std::vector<double>& next = f.levels_[i + 1].value;
        parallel_for(n, [&](std::size_t s) {
            l.psi[s] = spec.psi(l.time, l.states[s].path.view());
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_slot = l.slot_begin[s];
            for (std::size_t k2 = l.slot_begin[s]; k2 < l.slot_begin[s + 1]; ++k2) {
                const double v = f.slot_value(i, k2, next);
                l.continuation[k2] = v;
                if (v < best) {
                    best = v;
                    best_slot = k2;
                }
            }
            l.best_slot[s] = best_slot;
            l.value[s] = std::max(l.psi[s], best);
            l.stop[s] = l.psi[s] >= best ? 1 : 0;
        }, 16);
    }
    return f;
}

/// Stop at the first grid time where the field equals the barrier.
struct StoppingStrategy {
    std::size_t steps = 0;
    double dt = 0.0;
    std::vector<std::vector<std::uint8_t>> stop;

    bool stops(std::size_t level, std::size_t state) const { return stop.at(level).at(state) != 0; }
};

inline StoppingStrategy extract_stopping_strategy(const ValueField& f) {
    StoppingStrategy s;
    s.steps = f.steps();
    s.dt = f.dt();
    for (std::size_t i = 0; i <= f.steps(); ++i) {
        std::vector<std::uint8_t> flags(f.level(i).states.size());
        for (std::size_t k = 0; k < flags.size(); ++k) flags[k] = f.level(i).value[k] == f.level(i).psi[k];
        s.stop.push_back(std::move(flags));
    }
    return s;
}

/// First stopping index of the strategy along (u, sign patterns); u is
/// read only strictly before each decision time.
inline std::size_t strategy_stopping_index(const ValueField& f, const StoppingStrategy& s, const ImpulseControl& u,
                                           const std::vector<std::size_t>& patterns) {
    for (std::size_t i = 0; i <= f.steps(); ++i) {
        const auto state = f.locate(i, u, patterns);
        require(state.has_value(), ErrorKind::precondition, "control is not in the discretized class of the field");
        if (s.stops(i, *state)) return i;
    }
    return f.steps();
}

struct UpperValue {
    double value = 0.0;
    double se = 0.0;
};

/// Minimizer's best response to the stopping strategy over every
/// discretized control with at most k interventions (exact on the tree).
inline UpperValue upper_value(const ValueField& f, const StoppingStrategy& s) {
    require(s.steps == f.steps() && s.stop.size() == f.steps() + 1 && std::abs(s.dt - f.dt()) <= 1e-15,
            ErrorKind::spec, "stopping strategy was built on a different grid");
    for (std::size_t i = 0; i <= f.steps(); ++i)
        require(s.stop[i].size() == f.level(i).states.size(), ErrorKind::spec,
                "stopping strategy does not match the field's state space");
    std::vector<double> next = f.level(f.steps()).psi;
    for (std::size_t i = f.steps(); i-- > 0;) {
        const GameLevel& l = f.level(i);
        std::vector<double> cur(l.states.size());
        parallel_for(l.states.size(), [&](std::size_t st) {
            if (s.stops(i, st)) {
                cur[st] = l.psi[st];
                return;
            }
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = l.slot_begin[st]; k < l.slot_begin[st + 1]; ++k) best = std::min(best, f.slot_value(i, k, next));
            cur[st] = best;
        }, 16);
        next.swap(cur);
    }
    return {next[0], 0.0};
}

inline double lower_value(const ValueField& f) { return f.value(); }

/// Plays the extracted strategy against the field's optimal batch policy
/// along every sign path, re-simulates each path from scratch and averages
/// the pathwise cost functional.
inline double roll_forward(const ValueField& f, const StoppingStrategy& s) {
    const ProblemSpec& spec = f.spec();
    const std::size_t m = f.steps();
    const std::size_t W = f.w_branches();
    std::size_t leaves = 1;
    for (std::size_t i = 0; i < m; ++i) leaves *= W;
    std::vector<double> payoff(leaves, 0.0);
    parallel_for(leaves, [&](std::size_t leaf) {
        std::vector<std::size_t> patterns(m);
        std::size_t code = leaf;
        for (std::size_t i = 0; i < m; ++i) {
            patterns[i] = code % W;
            code /= W;
        }
        std::vector<Intervention> u;
        std::size_t state = 0;
        std::size_t tau = m;
        for (std::size_t i = 0; i <= m; ++i) {
            if (s.stops(i, state) || i == m) {
                tau = i;
                break;
            }
            const GameLevel& l = f.level(i);
            const BatchSlot& slot = l.slots[l.best_slot[state]];
            for (std::size_t b : f.batches()[slot.batch]) u.push_back({l.time, b});
            state = l.children[slot.first_child + patterns[i]];
        }
        const ImpulseControl control(u);
        const double tau_time = f.level(tau).time;
        const CadlagPath x = simulate_sde(spec, control, 0.0, sign_noise(spec, f.dt(), patterns));
        payoff[leaf] = cost_functional(spec, x, control, tau_time, 0.0);
    }, 16);
    double total = 0.0;
    for (double p : payoff) total += p;
    return total / static_cast<double>(leaves);
}

/// Lower values for each budget in ks on the same grid.
inline std::vector<double> truncation_sweep(const ProblemSpec& spec, const GameGrid& grid,
                                            const std::vector<long>& ks, const GameOptions& opts = {}) {
    std::vector<double> out;
    for (long k : ks) out.push_back(dpp_backward(spec, grid, k, opts).value());
    return out;
}

/// Least-squares fit of gap_k = |Y^k - Y^{k_max}| <= C / sqrt(k) over
/// k >= 1; returns the smallest C covering every gap.
inline double fit_truncation_constant(const std::vector<long>& ks, const std::vector<double>& values) {
    double c = 0.0;
    const double limit = values.back();
    for (std::size_t j = 0; j + 1 < ks.size(); ++j)
        if (ks[j] >= 1) c = std::max(c, std::abs(values[j] - limit) * std::sqrt(static_cast<double>(ks[j])));
    return c;
}

}  // namespace snell
