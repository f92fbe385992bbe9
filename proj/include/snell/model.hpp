#pragma once

#include "snell/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace snell {

using Vector = std::vector<double>;

/// Two times closer than this (relative to the horizon) are the same instant.
inline constexpr double time_tolerance = 1e-12;

inline double euclidean_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// One discontinuity of a path. Impulses carry the index of the intervention
/// that caused them; Poisson atoms carry impulse == -1.
struct JumpRecord {
    double time = 0.0;
    Vector pre;
    Vector post;
    std::size_t mark = 0;
    int impulse = -1;
};

/// Read-only prefix of a path as seen by the coefficients at some time.
/// When `last` is non-empty it replaces the value at the final breakpoint;
/// this is how pre-jump (left-limit) views are expressed.
struct PathView {
    std::span<const double> times;
    std::span<const double> values;
    std::span<const JumpRecord> jumps;
    std::size_t dim = 1;
    std::span<const double> last{};

    std::size_t size() const { return times.size(); }
    double now() const { return times.back(); }
    std::span<const double> state(std::size_t k) const {
        if (k + 1 == size() && !last.empty()) return last;
        return values.subspan(k * dim, dim);
    }
    std::span<const double> current() const { return state(size() - 1); }
    /// First component of the current state; convenient for scalar fixtures.
    double x() const { return current()[0]; }
};

/// Right-continuous step path with a finite, explicitly recorded jump list.
///
/// Between breakpoints the path is constant. At a jump time the stored
/// value is the post-jump value; several jumps may share one instant (a
/// batch of impulses), each recorded once, in application order.
class CadlagPath {
public:
    explicit CadlagPath(std::size_t dim = 1) : dim_(dim) {
        require(dim >= 1, ErrorKind::dimension, "path dimension must be positive");
    }

    CadlagPath(std::size_t dim, double t0, std::span<const double> x0) : CadlagPath(dim) {
        push(t0, x0);
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return times_.size(); }
    bool empty() const { return times_.empty(); }
    double time(std::size_t k) const { return times_[k]; }
    double end_time() const { return times_.back(); }
    std::span<const double> value(std::size_t k) const {
        return std::span<const double>(values_).subspan(k * dim_, dim_);
    }
    std::span<const double> back() const { return value(size() - 1); }
    const std::vector<double>& times() const { return times_; }
    const std::vector<JumpRecord>& jumps() const { return jumps_; }

    /// Appends a breakpoint; `t` must not precede the last breakpoint.
    void push(double t, std::span<const double> x) {
        require(x.size() == dim_, ErrorKind::dimension, "state size does not match path dimension");
        if (!times_.empty()) {
            require(t >= times_.back() - time_tolerance, ErrorKind::precondition,
                    "breakpoints must be non-decreasing");
            if (std::abs(t - times_.back()) <= time_tolerance) {
                std::copy(x.begin(), x.end(), values_.end() - static_cast<std::ptrdiff_t>(dim_));
                return;
            }
        }
        times_.push_back(t);
        values_.insert(values_.end(), x.begin(), x.end());
    }

    /// Applies a jump of size `delta` at time `t` (>= last breakpoint).
    void apply_jump(double t, std::span<const double> delta, std::size_t mark, int impulse) {
        require(!times_.empty(), ErrorKind::precondition, "cannot jump before the path starts");
        require(delta.size() == dim_, ErrorKind::dimension, "jump size does not match path dimension");
        JumpRecord rec;
        rec.time = t;
        rec.pre.assign(back().begin(), back().end());
        rec.post = rec.pre;
        for (std::size_t c = 0; c < dim_; ++c) rec.post[c] += delta[c];
        rec.mark = mark;
        rec.impulse = impulse;
        push(t, rec.post);
        rec.time = times_.back();
        jumps_.push_back(std::move(rec));
    }

    /// Number of breakpoints with time <= t.
    std::size_t count_until(double t) const {
        const auto it = std::upper_bound(times_.begin(), times_.end(), t + time_tolerance);
        return static_cast<std::size_t>(it - times_.begin());
    }

    std::size_t jumps_until(double t) const {
        std::size_t n = 0;
        while (n < jumps_.size() && jumps_[n].time <= t + time_tolerance) ++n;
        return n;
    }

    PathView view() const { return view_until(end_time()); }

    /// Prefix containing every breakpoint and jump at or before t.
    PathView view_until(double t) const {
        const std::size_t n = count_until(t);
        require(n > 0, ErrorKind::range, "view requested before the path starts");
        PathView v;
        v.times = std::span<const double>(times_).first(n);
        v.values = std::span<const double>(values_).first(n * dim_);
        v.jumps = std::span<const JumpRecord>(jumps_).first(jumps_until(t));
        v.dim = dim_;
        return v;
    }

    /// Prefix as it stood immediately before jump `j` was applied.
    PathView view_before_jump(std::size_t j) const {
        const JumpRecord& rec = jumps_.at(j);
        PathView v = view_until(rec.time);
        v.jumps = std::span<const JumpRecord>(jumps_).first(j);
        v.last = rec.pre;
        return v;
    }

    /// Value at time t (right-continuous).
    std::span<const double> at(double t) const {
        const std::size_t n = count_until(t);
        require(n > 0, ErrorKind::range, "path evaluated before its start");
        return value(n - 1);
    }

    /// Sup of |x_s| over s in [0, t]; non-decreasing in t.
    double sup_norm(double t) const {
        double m = 0.0;
        const std::size_t n = count_until(t);
        for (std::size_t k = 0; k < n; ++k) m = std::max(m, euclidean_norm(value(k)));
        return m;
    }

    /// Continuous part of the path stopped at `stop`, evaluated at s.
    Vector continuous_part(double s, double stop) const {
        const double u = std::min(s, stop);
        const auto xs = at(u);
        Vector c(xs.begin(), xs.end());
        for (const auto& j : jumps_) {
            if (j.time > u + time_tolerance) break;
            for (std::size_t k = 0; k < dim_; ++k) c[k] -= j.post[k] - j.pre[k];
        }
        return c;
    }

private:
    std::size_t dim_;
    std::vector<double> times_;
    std::vector<double> values_;
    std::vector<JumpRecord> jumps_;
};

/// Semi-metric between two stopped paths: time gap, sup-distance of the
/// continuous parts, plus index-paired differences of jump times and jump
/// sizes, each jump counted only if it occurred before the respective stop.
inline double path_distance(double t, const CadlagPath& x, double t_other, const CadlagPath& y) {
    require(x.dim() == y.dim(), ErrorKind::dimension, "path_distance: state dimensions differ");
    double d = std::abs(t - t_other);

    std::vector<double> grid;
    grid.insert(grid.end(), x.times().begin(), x.times().end());
    grid.insert(grid.end(), y.times().begin(), y.times().end());
    grid.push_back(t);
    grid.push_back(t_other);
    std::sort(grid.begin(), grid.end());
    const double start = std::max(x.time(0), y.time(0));
    double sup = 0.0;
    for (double s : grid) {
        if (s < start) continue;
        sup = std::max(sup, euclidean_distance(x.continuous_part(s, t), y.continuous_part(s, t_other)));
    }
    d += sup;

    const auto& jx = x.jumps();
    const auto& jy = y.jumps();
    const std::size_t pairs = std::max(jx.size(), jy.size());
    const Vector zero(x.dim(), 0.0);
    for (std::size_t i = 0; i < pairs; ++i) {
        const bool in_x = i < jx.size() && jx[i].time <= t + time_tolerance;
        const bool in_y = i < jy.size() && jy[i].time <= t_other + time_tolerance;
        const double tx = in_x ? jx[i].time : 0.0;
        const double ty = in_y ? jy[i].time : 0.0;
        Vector dx = zero, dy = zero;
        for (std::size_t k = 0; k < x.dim(); ++k) {
            if (in_x) dx[k] = jx[i].post[k] - jx[i].pre[k];
            if (in_y) dy[k] = jy[i].post[k] - jy[i].pre[k];
        }
        d += std::abs(tx - ty) + euclidean_distance(dx, dy);
    }
    return d;
}

struct Intervention {
    double time = 0.0;
    std::size_t mark = 0;
    bool operator==(const Intervention&) const = default;
};

/// Ordered sequence of interventions (eta_j, beta_j), eta non-decreasing.
/// Equal times form a batch applied in list order.
class ImpulseControl {
public:
    ImpulseControl() = default;
    ImpulseControl(std::vector<Intervention> items) : items_(std::move(items)) {
        for (std::size_t j = 1; j < items_.size(); ++j)
            require(items_[j].time >= items_[j - 1].time, ErrorKind::precondition,
                    "intervention times must be non-decreasing");
    }
    ImpulseControl(std::initializer_list<Intervention> items)
        : ImpulseControl(std::vector<Intervention>(items)) {}

    std::size_t count() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    const std::vector<Intervention>& interventions() const { return items_; }
    const Intervention& operator[](std::size_t j) const { return items_[j]; }
    bool operator==(const ImpulseControl&) const = default;

    /// Number of interventions with eta < tau.
    std::size_t count_before(double tau) const {
        std::size_t n = 0;
        while (n < items_.size() && items_[n].time < tau - time_tolerance) ++n;
        return n;
    }
    /// Number of interventions with eta <= tau.
    std::size_t count_at_or_before(double tau) const {
        std::size_t n = 0;
        while (n < items_.size() && items_[n].time <= tau + time_tolerance) ++n;
        return n;
    }
    /// [u]_k: the first k interventions.
    ImpulseControl prefix(std::size_t k) const {
        k = std::min(k, items_.size());
        return ImpulseControl(std::vector<Intervention>(items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(k)));
    }
    /// u_{tau-}: interventions strictly before tau.
    ImpulseControl restrict_before(double tau) const { return prefix(count_before(tau)); }
    /// u_tau: interventions at or before tau.
    ImpulseControl restrict_at_or_before(double tau) const { return prefix(count_at_or_before(tau)); }
    /// Interventions at or after t.
    ImpulseControl tail_from(double t) const {
        const std::size_t n = count_before(t);
        return ImpulseControl(std::vector<Intervention>(items_.begin() + static_cast<std::ptrdiff_t>(n), items_.end()));
    }

private:
    std::vector<Intervention> items_;
};

/// Concatenation at t: the interventions of u up to and including t,
/// followed by all of v (which must start at or after t).
inline ImpulseControl concat(const ImpulseControl& u, double t, const ImpulseControl& v) {
    for (const auto& iv : v.interventions())
        require(iv.time >= t - time_tolerance, ErrorKind::precondition,
                "concat: tail control has an intervention before the cut");
    std::vector<Intervention> out = u.restrict_at_or_before(t).interventions();
    out.insert(out.end(), v.interventions().begin(), v.interventions().end());
    std::stable_sort(out.begin(), out.end(), [](const Intervention& a, const Intervention& b) { return a.time < b.time; });
    return ImpulseControl(std::move(out));
}

struct Atom {
    double time = 0.0;
    std::size_t mark = 0;
    bool operator==(const Atom&) const = default;
};

/// Finite Dirac sum of (time, mark) atoms with strictly increasing times.
class MarkedPointMeasure {
public:
    MarkedPointMeasure() = default;
    explicit MarkedPointMeasure(std::vector<Atom> atoms) : atoms_(std::move(atoms)) {
        for (std::size_t j = 1; j < atoms_.size(); ++j)
            require(atoms_[j].time > atoms_[j - 1].time, ErrorKind::precondition,
                    "atom times must be strictly increasing");
    }

    std::size_t size() const { return atoms_.size(); }
    bool empty() const { return atoms_.empty(); }
    const std::vector<Atom>& atoms() const { return atoms_; }
    const Atom& operator[](std::size_t j) const { return atoms_[j]; }

    /// Number of atoms with time in (s, t].
    std::size_t count(double s, double t) const {
        std::size_t n = 0;
        for (const auto& a : atoms_)
            if (a.time > s && a.time <= t) ++n;
        return n;
    }

    /// Atoms recast as an impulse control (used to check that the forward
    /// SDE with all jumps treated as impulses reproduces the plain SDE).
    ImpulseControl as_control() const {
        std::vector<Intervention> out;
        for (const auto& a : atoms_) out.push_back({a.time, a.mark});
        return ImpulseControl(std::move(out));
    }

private:
    std::vector<Atom> atoms_;
};

struct Mark {
    Vector point;
    double weight = 1.0;
};

using DriftFn = std::function<Vector(double, const PathView&)>;
using VolFn = std::function<Vector(double, const PathView&)>;  // dim x dim, row-major
using JumpFn = std::function<Vector(double, const PathView&, std::size_t)>;
using ScalarFn = std::function<double(double, const PathView&)>;
using MarkScalarFn = std::function<double(double, const PathView&, std::size_t)>;

/// Coefficients, costs and mark space of one game/BSDE instance.
struct ProblemSpec {
    std::string name = "unnamed";
    std::size_t dim = 1;
    double horizon = 1.0;
    Vector x0{0.0};
    DriftFn drift;
    VolFn vol;
    JumpFn jump;
    ScalarFn running_cost;
    ScalarFn barrier;
    MarkScalarFn intervention_cost;
    std::vector<Mark> marks;
    /// Coefficients depend on the path only through its current value.
    bool markovian = true;

    void validate() const {
        require(dim >= 1, ErrorKind::spec, "dimension must be positive");
        require(horizon > 0.0, ErrorKind::spec, "horizon must be positive");
        require(x0.size() == dim, ErrorKind::dimension, "x0 has the wrong size");
        require(drift && vol && jump && running_cost && barrier && intervention_cost, ErrorKind::spec,
                "all coefficient functions must be set");
        require(!marks.empty(), ErrorKind::spec, "mark space must not be empty");
        for (const auto& m : marks)
            require(m.weight > 0.0 && std::isfinite(m.weight), ErrorKind::spec,
                    "mark weights must be strictly positive");
    }

    std::size_t mark_count() const { return marks.size(); }

    double total_intensity() const {
        double s = 0.0;
        for (const auto& m : marks) s += m.weight;
        return s;
    }

    Vector drift_at(double t, const PathView& p) const {
        Vector v = drift(t, p);
        require(v.size() == dim, ErrorKind::dimension, "drift returned the wrong size");
        return v;
    }
    Vector vol_at(double t, const PathView& p) const {
        Vector v = vol(t, p);
        require(v.size() == dim * dim, ErrorKind::dimension, "volatility returned the wrong size");
        return v;
    }
    Vector jump_at(double t, const PathView& p, std::size_t mark) const {
        Vector v = jump(t, p, mark);
        require(v.size() == dim, ErrorKind::dimension, "jump returned the wrong size");
        return v;
    }
    double psi(double t, const PathView& p) const { return barrier(t, p); }
    double f(double t, const PathView& p) const { return running_cost(t, p); }
    double chi(double t, const PathView& p, std::size_t mark) const {
        const double c = intervention_cost(t, p, mark);
        require(c >= 0.0 && std::isfinite(c), ErrorKind::spec, "intervention cost must be non-negative");
        return c;
    }
};

/// Pathwise cost/reward of stopping at tau under control u, started at t:
/// barrier at tau, plus the running cost (left-endpoint rule over the path's
/// breakpoints), plus the cost of every intervention with eta_j <= tau
/// evaluated on the path as it stood before that intervention.
inline double cost_functional(const ProblemSpec& spec, const CadlagPath& path, const ImpulseControl& u,
                              double tau, double t = 0.0) {
    require(tau >= t - time_tolerance && tau <= spec.horizon + time_tolerance, ErrorKind::range,
            "cost_functional: tau outside [t, T]");
    require(tau <= path.end_time() + time_tolerance, ErrorKind::range,
            "cost_functional: path does not reach tau");
    double total = spec.psi(tau, path.view_until(tau));

    std::vector<double> points{t};
    for (double s : path.times())
        if (s > t + time_tolerance && s < tau - time_tolerance) points.push_back(s);
    points.push_back(tau);
    for (std::size_t k = 0; k + 1 < points.size(); ++k) {
        const double a = points[k];
        const double b = points[k + 1];
        if (b - a <= 0.0) continue;
        total += spec.f(a, path.view_until(a)) * (b - a);
    }

    std::vector<int> seen(u.count(), 0);
    for (std::size_t j = 0; j < path.jumps().size(); ++j) {
        const auto& rec = path.jumps()[j];
        if (rec.impulse < 0) continue;
        const auto idx = static_cast<std::size_t>(rec.impulse);
        require(idx < u.count(), ErrorKind::precondition, "path carries an impulse unknown to the control");
        seen[idx] = 1;
        if (u[idx].time <= tau + time_tolerance && u[idx].time >= t - time_tolerance)
            total += spec.chi(u[idx].time, path.view_before_jump(j), u[idx].mark);
    }
    for (std::size_t j = 0; j < u.count(); ++j)
        if (u[j].time <= std::min(tau, path.end_time()) + time_tolerance && u[j].time >= t - time_tolerance)
            require(seen[j] == 1, ErrorKind::precondition, "path is not consistent with the control");
    return total;
}

/// Result of sampling the "intervening right before stopping never pays"
/// inequality Psi(t, x) <= Psi(t, x + gamma(t, x, b)) + chi(t, x, b).
struct TerminalInterventionReport {
    bool holds = true;
    double worst_violation = 0.0;
    double worst_time = 0.0;
    Vector worst_state;
    std::size_t worst_mark = 0;
    std::size_t samples = 0;
};

/// Checks the inequality on a regular grid of (t, x) in [0, T] x box
/// around x0 (Markovian evaluation: single-point paths).
inline TerminalInterventionReport check_no_terminal_intervention(const ProblemSpec& spec, double half_width = 3.0,
                                                                 std::size_t points_per_axis = 25,
                                                                 std::size_t time_points = 9) {
    spec.validate();
    TerminalInterventionReport rep;
    std::vector<std::size_t> idx(spec.dim, 0);
    const auto total = static_cast<std::size_t>(std::pow(static_cast<double>(points_per_axis), static_cast<double>(spec.dim)));
    for (std::size_t ti = 0; ti < time_points; ++ti) {
        const double t = spec.horizon * static_cast<double>(ti) / static_cast<double>(time_points - 1);
        for (std::size_t flat = 0; flat < total; ++flat) {
            std::size_t rem = flat;
            Vector x(spec.dim);
            for (std::size_t c = 0; c < spec.dim; ++c) {
                const std::size_t k = rem % points_per_axis;
                rem /= points_per_axis;
                x[c] = spec.x0[c] - half_width + 2.0 * half_width * static_cast<double>(k) / static_cast<double>(points_per_axis - 1);
            }
            CadlagPath p(spec.dim, t, x);
            for (std::size_t b = 0; b < spec.mark_count(); ++b) {
                const Vector g = spec.jump_at(t, p.view(), b);
                Vector y = x;
                for (std::size_t c = 0; c < spec.dim; ++c) y[c] += g[c];
                CadlagPath q(spec.dim, t, y);
                const double lhs = spec.psi(t, p.view());
                const double rhs = spec.psi(t, q.view()) + spec.chi(t, p.view(), b);
                ++rep.samples;
                if (lhs - rhs > rep.worst_violation + 1e-14) {
                    rep.holds = false;
                    rep.worst_violation = lhs - rhs;
                    rep.worst_time = t;
                    rep.worst_state = x;
                    rep.worst_mark = b;
                }
            }
        }
    }
    return rep;
}

}  // namespace snell
