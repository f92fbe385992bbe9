#pragma once

#include "snell/bsde.hpp"
#include "snell/bsde_lsmc.hpp"
#include "snell/config.hpp"
#include "snell/fixtures.hpp"
#include "snell/game.hpp"
#include "snell/game_lsmc.hpp"
#include "snell/parallel.hpp"
#include "snell/randomized.hpp"
#include "snell/simulation.hpp"

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace snell {

/// Shortest round-trip decimal form; independent of the global locale.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    template <class... Cells>
    void add(const Cells&... cells) {
        rows.push_back({cell(cells)...});
        require(rows.back().size() == header.size(), ErrorKind::dimension, "row width differs from the header");
    }

    std::string csv() const {
        std::string s;
        auto line = [&s](const std::vector<std::string>& cells) {
            for (std::size_t c = 0; c < cells.size(); ++c) {
                if (c) s += ',';
                s += cells[c];
            }
            s += '\n';
        };
        line(header);
        for (const auto& r : rows) line(r);
        return s;
    }

private:
    static std::string cell(const std::string& v) { return v; }
    static std::string cell(const char* v) { return v; }
    static std::string cell(double v) { return format_number(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(long v) { return std::to_string(v); }
    static std::string cell(int v) { return std::to_string(v); }
};

/// One tolerance test: passes when value <= tolerance.
struct Check {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

struct RunReport {
    std::string command;
    Table table;
    std::vector<Check> checks;
    nlohmann::json metrics = nlohmann::json::object();
    double runtime_ms = 0.0;

    void check(std::string name, double value, double tolerance) {
        checks.push_back({std::move(name), value, tolerance, value <= tolerance});
    }

    bool pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

inline nlohmann::json environment_stamp() {
    nlohmann::json e;
#if defined(__VERSION__)
    e["compiler"] = __VERSION__;
#endif
    e["cplusplus"] = static_cast<long>(__cplusplus);
#ifdef NDEBUG
    e["assertions"] = false;
#else
    e["assertions"] = true;
#endif
    e["threads"] = thread_count();
    return e;
}

/// Machine-readable verdict for one run; content_hash identifies the
/// input file bytes, config_hash the parsed configuration.
inline nlohmann::json verdict_json(const RunReport& r, const ExperimentConfig& cfg, const std::string& content_hash) {
    nlohmann::json j;
    j["command"] = r.command;
    j["pass"] = r.pass();
    j["config_hash"] = hex64(config_hash(cfg));
    j["content_hash"] = content_hash;
    j["environment"] = environment_stamp();
    j["runtime_ms"] = r.runtime_ms;
    j["metrics"] = r.metrics;
    j["seed"] = cfg.seed;
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : r.checks)
        checks.push_back({{"name", c.name}, {"value", c.value}, {"tolerance", c.tolerance}, {"pass", c.pass}});
    j["checks"] = checks;
    return j;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::config, "cannot write '" + path + "'");
    out << text;
    require(static_cast<bool>(out), ErrorKind::config, "write to '" + path + "' failed");
}

inline std::string verdict_path(const std::string& out) { return out + ".verdict.json"; }

inline void write_outputs(const RunReport& r, const ExperimentConfig& cfg, const std::string& out,
                          const std::string& content_hash) {
    write_text(out, r.table.csv());
    write_text(verdict_path(out), verdict_json(r, cfg, content_hash).dump(2) + "\n");
}

namespace detail {

class Stopwatch {
public:
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline GameOptions game_options(const ExperimentConfig& cfg) {
    GameOptions o;
    o.max_batch = cfg.max_batch;
    o.markov = cfg.markov;
    return o;
}

inline LsmcGameOptions lsmc_options(const ExperimentConfig& cfg, std::uint64_t seed) {
    LsmcGameOptions o;
    o.paths = cfg.paths;
    o.eval_paths = cfg.eval_paths;
    o.degree = cfg.degree;
    o.seed = seed;
    o.dispersion = cfg.dispersion;
    o.max_batch = cfg.max_batch;
    return o;
}

struct GamePair {
    double lower = 0.0;
    double upper = 0.0;
    double se = 0.0;
};

inline GamePair solve_game_pair(const ExperimentConfig& cfg, const ProblemSpec& spec, double eps, long k,
                                Backend backend, std::uint64_t seed) {
    const GameGrid grid(spec.horizon, eps, spec.mark_count());
    if (backend == Backend::tree) {
        const ValueField f = dpp_backward(spec, grid, k, game_options(cfg));
        return {f.value(), upper_value(f, extract_stopping_strategy(f)).value, 0.0};
    }
    const LsmcValueField f(spec, grid, k, lsmc_options(cfg, seed));
    const LsmcUpperValue up = upper_value_lsmc(f);
    return {f.value(), up.value, up.se};
}

inline std::shared_ptr<const ScenarioLattice> bsde_lattice(const ProblemSpec& spec, double eps) {
    const GameGrid grid(spec.horizon, eps, spec.mark_count());
    return std::make_shared<const ScenarioLattice>(spec, grid.dt());
}

inline double max_increase(const PenalizedSolution& prev, const PenalizedSolution& cur) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cur.levels.size(); ++i)
        for (std::size_t k = 0; k < cur.levels[i].y.size(); ++k)
            worst = std::max(worst, cur.levels[i].y[k] - prev.levels[i].y[k]);
    return worst;
}

}  // namespace detail

/// Lower and upper game values for each budget.
inline RunReport run_solve_game(const ExperimentConfig& cfg, double eps, const std::vector<long>& ks, Backend backend) {
    const ProblemSpec spec = make_fixture(cfg.fixture, cfg.params);
    const GameGrid grid(spec.horizon, eps, spec.mark_count());
    RunReport r;
    r.command = "solve-game";
    r.table.header = {"eps", "k", "n_steps", "lower_value", "upper_value", "gap", "runtime_ms", "seed"};
    const detail::Stopwatch total;
    for (long k : ks) {
        const detail::Stopwatch sw;
        const detail::GamePair g = detail::solve_game_pair(cfg, spec, eps, k, backend, cfg.seed);
        const double ms = sw.ms();
        r.table.add(eps, k, grid.steps(), g.lower, g.upper, g.upper - g.lower, ms, std::to_string(cfg.seed));
        const std::string tag = "k=" + std::to_string(k);
        if (backend == Backend::tree)
            r.check("lower_le_upper " + tag, g.lower - g.upper, cfg.tolerances.exact);
        else
            r.check("lower_le_upper " + tag, g.lower - g.upper, 2.0 * g.se + cfg.tolerances.lsmc_bias);
        r.metrics["lower_value"][tag] = g.lower;
        r.metrics["upper_value"][tag] = g.upper;
    }
    r.runtime_ms = total.ms();
    return r;
}

/// Penalized solves along a list of penalty levels.
inline RunReport run_solve_bsde(const ExperimentConfig& cfg, const std::vector<double>& ns, Backend backend) {
    const ProblemSpec spec = make_fixture(cfg.fixture, cfg.params);
    const BsdeSpec b = linear_bsde(spec);
    RunReport r;
    r.command = "solve-bsde";
    r.table.header = {"n", "Y0", "K_minus_total", "K_plus_total", "max_violation", "runtime_ms"};
    const detail::Stopwatch total;
    double worst_violation = 0.0;
    // Largest rise of Y between consecutive levels: entry-wise on the tree,
    // at time 0 beyond the MC band on lsmc.
    double worst_rise = -std::numeric_limits<double>::infinity();
    if (backend == Backend::tree) {
        const auto lat = detail::bsde_lattice(spec, cfg.eps);
        std::optional<PenalizedSolution> prev;
        for (double n : ns) {
            const detail::Stopwatch sw;
            PenalizedSolution sol = solve_penalized(b, lat, n);
            const double ms = sw.ms();
            r.table.add(n, sol.y0(), sol.expected_total(false), sol.expected_total(true), sol.max_violation(), ms);
            worst_violation = std::max(worst_violation, sol.max_violation());
            if (prev) worst_rise = std::max(worst_rise, detail::max_increase(*prev, sol));
            prev = std::move(sol);
        }
    } else {
        const GameGrid grid(spec.horizon, cfg.eps, spec.mark_count());
        const JumpBundle bundle = simulate_jump_bundle(spec, grid.dt(), cfg.paths, cfg.seed);
        std::optional<LsmcBsdeResult> prev;
        for (double n : ns) {
            const detail::Stopwatch sw;
            LsmcBsdeResult res = solve_penalized_lsmc(b, bundle, n, cfg.degree);
            const double ms = sw.ms();
            r.table.add(n, res.y0, res.k_minus_total, res.k_plus_total, res.max_violation, ms);
            worst_violation = std::max(worst_violation, res.max_violation);
            if (prev)
                worst_rise = std::max(worst_rise, res.y0 - prev->y0 - cfg.tolerances.mc_sigmas * std::max(res.se, prev->se));
            prev = std::move(res);
        }
    }
    if (ns.size() >= 2) r.check("penalty_monotone", worst_rise, 0.0);
    r.check("barrier_and_slackness", worst_violation, cfg.tolerances.exact);
    r.metrics["max_violation"] = worst_violation;
    r.runtime_ms = total.ms();
    return r;
}

/// Random saddle probes on the tree at penalty level n.
inline RunReport run_verify_saddle(const ExperimentConfig& cfg, double n, std::size_t probes) {
    const ProblemSpec spec = make_fixture(cfg.fixture, cfg.params);
    const detail::Stopwatch sw;
    const PenalizedSolution sol = solve_penalized(linear_bsde(spec), detail::bsde_lattice(spec, cfg.eps), n);
    const SaddleReport rep = verify_saddle(spec, sol, probes, cfg.seed, cfg.tolerances.saddle);
    RunReport r;
    r.command = "verify-saddle";
    r.table.header = {"probe_id", "J_nu_star_tau", "J_nu_star_taun", "J_nu_taun", "violation"};
    for (const auto& p : rep.probes) r.table.add(p.id, p.star_tau, p.star_taun, p.nu_taun, p.violation);
    r.check("saddle_violations", static_cast<double>(rep.violations), 0.0);
    r.check("identity", rep.identity_error, cfg.tolerances.identity);
    r.metrics["y0"] = rep.y0;
    r.metrics["worst_violation"] = rep.worst;
    r.metrics["identity_error"] = rep.identity_error;
    r.runtime_ms = sw.ms();
    return r;
}

/// Lower/upper game values, the penalized limit and the saddle checks on
/// the tree, one row per (k, n). The table carries no timings so that it
/// is reproducible bit for bit.
inline RunReport run_compare(const ExperimentConfig& cfg) {
    const ProblemSpec spec = make_fixture(cfg.fixture, cfg.params);
    require(spec.markovian, ErrorKind::spec, "compare needs a Markovian fixture");
    const detail::Stopwatch sw;
    const GameGrid grid(spec.horizon, cfg.eps, spec.mark_count());
    const auto lat = detail::bsde_lattice(spec, cfg.eps);
    const BsdeSpec b = linear_bsde(spec);

    std::vector<PenalizedSolution> sols;
    std::vector<SaddleReport> saddles;
    for (double n : cfg.n) {
        sols.push_back(solve_penalized(b, lat, n));
        saddles.push_back(verify_saddle(spec, sols.back(), cfg.probes, cfg.seed, cfg.tolerances.saddle));
    }

    RunReport r;
    r.command = "compare";
    r.table.header = {"k",           "n",        "n_steps",           "lower_value",     "upper_value",
                      "snell_value", "gap_upper_lower", "gap_lower_snell", "saddle_violations", "identity_error"};
    double worst_increase = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < sols.size(); ++j)
        worst_increase = std::max(worst_increase, detail::max_increase(sols[j - 1], sols[j]));
    std::size_t violations = 0;
    double identity = 0.0;
    for (const auto& s : saddles) {
        violations += s.violations;
        identity = std::max(identity, s.identity_error);
    }
    for (long k : cfg.k) {
        const ValueField f = dpp_backward(spec, grid, k, detail::game_options(cfg));
        const double lower = f.value();
        const double upper = upper_value(f, extract_stopping_strategy(f)).value;
        double prev_gap = std::numeric_limits<double>::infinity();
        double gap_growth = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cfg.n.size(); ++j) {
            const double gap = std::abs(lower - sols[j].y0());
            gap_growth = std::max(gap_growth, gap - prev_gap);
            prev_gap = gap;
            r.table.add(k, cfg.n[j], grid.steps(), lower, upper, sols[j].y0(), upper - lower, gap,
                        saddles[j].violations, saddles[j].identity_error);
        }
        const std::string tag = "k=" + std::to_string(k);
        r.check("lower_le_upper " + tag, lower - upper, cfg.tolerances.exact);
        r.check("value_gap " + tag, prev_gap, cfg.tolerances.value_gap);
        if (cfg.n.size() >= 2) r.check("gap_shrinking " + tag, gap_growth, cfg.tolerances.exact);
        r.metrics["lower_value"][tag] = lower;
        r.metrics["upper_value"][tag] = upper;
    }
    if (sols.size() >= 2) r.check("penalty_monotone", worst_increase, 0.0);
    r.check("saddle_violations", static_cast<double>(violations), 0.0);
    r.check("identity", identity, cfg.tolerances.identity);
    r.metrics["snell_value"] = sols.back().y0();
    r.runtime_ms = sw.ms();
    return r;
}

/// Long-format sweeps over eps, k, n and seeds, in that order.
inline RunReport run_sweep(const ExperimentConfig& cfg) {
    const ProblemSpec spec = make_fixture(cfg.fixture, cfg.params);
    const Backend backend = parse_backend(cfg.backend);
    const detail::Stopwatch sw;
    const long k_top = cfg.k.back();
    RunReport r;
    r.command = "sweep";
    r.table.header = {"kind", "param_name", "param_value", "metric", "value"};

    // Refinement in eps: successive lower-value differences.
    std::vector<double> diffs;
    double prev_lower = 0.0;
    for (std::size_t j = 0; j < cfg.sweep.eps.size(); ++j) {
        const double eps = cfg.sweep.eps[j];
        const detail::GamePair g = detail::solve_game_pair(cfg, spec, eps, k_top, backend, cfg.seed);
        r.table.add("eps", "eps", eps, "lower_value", g.lower);
        r.table.add("eps", "eps", eps, "upper_value", g.upper);
        if (j > 0) {
            diffs.push_back(std::abs(g.lower - prev_lower));
            r.table.add("eps", "eps", eps, "lower_diff", diffs.back());
        }
        prev_lower = g.lower;
    }
    if (diffs.size() >= 2) r.check("eps_refinement", diffs.back() - diffs.front(), cfg.tolerances.exact);

    // Truncation in k: values, gaps to the largest budget and the C/sqrt(k) envelope.
    if (!cfg.sweep.k.empty()) {
        std::vector<double> values;
        for (long k : cfg.sweep.k)
            values.push_back(detail::solve_game_pair(cfg, spec, cfg.eps, k, backend, cfg.seed).lower);
        const double c = fit_truncation_constant(cfg.sweep.k, values);
        double growth = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const long k = cfg.sweep.k[j];
            const double gap = std::abs(values[j] - values.back());
            r.table.add("k", "k", k, "lower_value", values[j]);
            r.table.add("k", "k", k, "gap", gap);
            if (k >= 1) r.table.add("k", "k", k, "envelope", c / std::sqrt(static_cast<double>(k)));
            if (j > 0) growth = std::max(growth, values[j] - values[j - 1]);
        }
        r.table.add("k_fit", "k_max", cfg.sweep.k.back(), "envelope_constant", c);
        if (values.size() >= 2)
            r.check("budget_monotone", growth, backend == Backend::tree ? cfg.tolerances.exact : cfg.tolerances.lsmc_bias);
        r.metrics["envelope_constant"] = c;
    }

    // Penalty levels: Y^n_0 and decrements.
    if (!cfg.sweep.n.empty()) {
        const RunReport bs = run_solve_bsde(cfg, cfg.sweep.n, backend);
        for (std::size_t j = 0; j < bs.table.rows.size(); ++j) {
            const auto& row = bs.table.rows[j];
            const double n = cfg.sweep.n[j];
            r.table.add("n", "n", n, "Y0", row[1]);
            r.table.add("n", "n", n, "K_minus_total", row[2]);
            r.table.add("n", "n", n, "max_violation", row[4]);
        }
        for (const auto& c : bs.checks) r.checks.push_back(c);
    }

    // Seeds: the randomized parts of each backend.
    for (std::uint64_t seed : cfg.sweep.seeds) {
        const double s = static_cast<double>(seed);
        if (backend == Backend::lsmc) {
            const detail::GamePair g = detail::solve_game_pair(cfg, spec, cfg.eps, k_top, backend, seed);
            r.table.add("seed", "seed", s, "lower_value", g.lower);
            r.table.add("seed", "seed", s, "upper_value", g.upper);
        } else {
            const PenalizedSolution sol =
                solve_penalized(linear_bsde(spec), detail::bsde_lattice(spec, cfg.eps), cfg.n.back());
            const SaddleReport rep = verify_saddle(spec, sol, cfg.probes, seed, cfg.tolerances.saddle);
            r.table.add("seed", "seed", s, "saddle_worst", rep.worst);
            r.check("saddle_violations seed=" + std::to_string(seed), static_cast<double>(rep.violations), 0.0);
        }
    }
    r.runtime_ms = sw.ms();
    return r;
}

/// Uncontrolled paths with Poisson atoms. With dump set every breakpoint
/// of every path is a row; otherwise a summary of X_T.
inline RunReport run_simulate(const ExperimentConfig& cfg, bool dump, std::size_t samples) {
    const ProblemSpec spec = make_fixture(cfg.fixture, cfg.params);
    const GameGrid grid(spec.horizon, cfg.eps, spec.mark_count());
    const detail::Stopwatch sw;
    const auto paths = simulate_bundle(spec, ImpulseControl{}, spec.horizon, grid.dt(), samples, cfg.seed);
    RunReport r;
    r.command = "simulate";
    std::vector<double> terminal, jumps;
    for (const auto& p : paths) {
        terminal.push_back(p.back()[0]);
        jumps.push_back(static_cast<double>(p.jumps().size()));
    }
    if (dump) {
        r.table.header = {"path", "time"};
        for (std::size_t c = 0; c < spec.dim; ++c) r.table.header.push_back("x" + std::to_string(c));
        r.table.header.push_back("jump");
        r.table.header.push_back("mark");
        for (std::size_t p = 0; p < paths.size(); ++p) {
            const CadlagPath& x = paths[p];
            for (std::size_t k = 0; k < x.size(); ++k) {
                std::vector<std::string> row{std::to_string(p), format_number(x.time(k))};
                for (double v : x.value(k)) row.push_back(format_number(v));
                std::string flag = "0", mark = "-1";
                for (const auto& j : x.jumps())
                    if (j.time == x.time(k)) {
                        flag = "1";
                        mark = std::to_string(j.mark);
                    }
                row.push_back(flag);
                row.push_back(mark);
                r.table.rows.push_back(std::move(row));
            }
        }
    } else {
        const MeanEstimate xt = summarize(terminal);
        const MeanEstimate nj = summarize(jumps);
        r.table.header = {"metric", "value"};
        r.table.add("samples", static_cast<double>(samples));
        r.table.add("mean_terminal", xt.mean);
        r.table.add("se_terminal", xt.se);
        r.table.add("mean_jumps", nj.mean);
        r.table.add("se_jumps", nj.se);
        // E[number of atoms] = total intensity * T.
        const double expected = spec.total_intensity() * spec.horizon;
        r.check("jump_count_mean", std::abs(nj.mean - expected), cfg.tolerances.mc_sigmas * std::max(nj.se, 1e-300));
        r.metrics["mean_terminal"] = xt.mean;
        r.metrics["mean_jumps"] = nj.mean;
    }
    bool finite = true;
    for (double v : terminal) finite = finite && std::isfinite(v);
    r.check("finite_paths", finite ? 0.0 : 1.0, 0.0);
    r.runtime_ms = sw.ms();
    return r;
}

}  // namespace snell
