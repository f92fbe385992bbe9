#include "snell/content_hash.hpp"
#include "snell/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", c.out, "output CSV; the verdict goes to <out>.verdict.json");
    cmd->add_option("--seed", c.seed, "override the config seed");
}

struct Loaded {
    snell::ExperimentConfig cfg;
    std::string content_hash;
    std::string out;
};

Loaded load(const Common& c) {
    Loaded l;
    const std::string bytes = snell::read_file(c.config);
    l.cfg = snell::parse_config(bytes);
    l.content_hash = snell::git_blob_hash(bytes);
    if (c.seed) l.cfg.seed = *c.seed;
    l.out = c.out.empty() ? l.cfg.out : c.out;
    snell::require(!l.out.empty(), snell::ErrorKind::config, "no output path: pass --out or set \"out\" in the config");
    return l;
}

int finish(const snell::RunReport& r, const Loaded& l) {
    snell::write_outputs(r, l.cfg, l.out, l.content_hash);
    for (const auto& c : r.checks)
        std::printf("%s %s value=%.6g tol=%.3g\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.value, c.tolerance);
    std::printf("%s: %s (%zu rows, %.0f ms) -> %s\n", r.command.c_str(), r.pass() ? "pass" : "fail",
                r.table.rows.size(), r.runtime_ms, l.out.c_str());
    return r.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"snell: impulse control versus stopping games and penalized BSDEs"};
    app.require_subcommand(1);

    Common sim_c, game_c, bsde_c, saddle_c, cmp_c, sweep_c;

    auto* sim = app.add_subcommand("simulate", "simulate uncontrolled paths");
    add_common(sim, sim_c);
    bool dump = false;
    std::optional<std::size_t> sim_paths;
    sim->add_flag("--dump-paths", dump, "one row per path breakpoint instead of a summary");
    sim->add_option("--paths", sim_paths, "number of paths (default: config paths, or 10 when dumping)");

    auto* game = app.add_subcommand("solve-game", "lower and upper value of the truncated game");
    add_common(game, game_c);
    std::optional<double> game_eps;
    std::optional<long> game_k;
    std::optional<std::string> game_backend;
    game->add_option("--eps", game_eps, "time mesh bound");
    game->add_option("--k", game_k, "intervention budget (default: every k in the config)");
    game->add_option("--backend", game_backend, "tree or lsmc")->check(CLI::IsMember({"tree", "lsmc"}));

    auto* bsde = app.add_subcommand("solve-bsde", "penalized reflected BSDE");
    add_common(bsde, bsde_c);
    std::string bsde_n = "sweep";
    std::optional<std::string> bsde_backend;
    bsde->add_option("--n", bsde_n, "penalty level, or 'sweep' for the config schedule");
    bsde->add_option("--backend", bsde_backend, "tree or lsmc")->check(CLI::IsMember({"tree", "lsmc"}));

    auto* saddle = app.add_subcommand("verify-saddle", "random probes of the saddle chain on the tree");
    add_common(saddle, saddle_c);
    std::optional<double> saddle_n;
    std::optional<std::size_t> saddle_probes;
    saddle->add_option("--n", saddle_n, "penalty level (default: last of the schedule)");
    saddle->add_option("--probes", saddle_probes, "number of probes");

    auto* cmp = app.add_subcommand("compare", "game values, penalized limit and saddle checks in one table");
    add_common(cmp, cmp_c);

    auto* sw = app.add_subcommand("sweep", "long-format sweeps over eps, k, n and seeds");
    add_common(sw, sweep_c);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) {
            Loaded l = load(sim_c);
            const std::size_t n = sim_paths.value_or(dump ? 10 : l.cfg.paths);
            return finish(snell::run_simulate(l.cfg, dump, n), l);
        }
        if (*game) {
            Loaded l = load(game_c);
            if (game_eps) l.cfg.eps = *game_eps;
            if (game_k) l.cfg.k = {*game_k};
            if (game_backend) l.cfg.backend = *game_backend;
            snell::validate(l.cfg);
            return finish(snell::run_solve_game(l.cfg, l.cfg.eps, l.cfg.k, snell::parse_backend(l.cfg.backend)), l);
        }
        if (*bsde) {
            Loaded l = load(bsde_c);
            if (bsde_backend) l.cfg.backend = *bsde_backend;
            if (bsde_n != "sweep") {
                std::size_t used = 0;
                long n = -1;
                try {
                    n = std::stol(bsde_n, &used);
                } catch (const std::exception&) {
                }
                snell::require(used == bsde_n.size() && n >= 0, snell::ErrorKind::config,
                               "--n must be a non-negative integer or 'sweep'");
                l.cfg.n = {static_cast<double>(n)};
            }
            snell::validate(l.cfg);
            return finish(snell::run_solve_bsde(l.cfg, l.cfg.n, snell::parse_backend(l.cfg.backend)), l);
        }
        if (*saddle) {
            Loaded l = load(saddle_c);
            if (saddle_probes) l.cfg.probes = *saddle_probes;
            return finish(snell::run_verify_saddle(l.cfg, saddle_n.value_or(l.cfg.n.back()), l.cfg.probes), l);
        }
        if (*cmp) {
            Loaded l = load(cmp_c);
            return finish(snell::run_compare(l.cfg), l);
        }
        if (*sw) {
            Loaded l = load(sweep_c);
            return finish(snell::run_sweep(l.cfg), l);
        }
    } catch (const snell::Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
