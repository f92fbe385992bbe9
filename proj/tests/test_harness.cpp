#include "snell/harness.hpp"

#include <gtest/gtest.h>

#include <locale>
#include <cstdlib>
#include <filesystem>
#include <sstream>

using namespace snell;

namespace {

ExperimentConfig tree_config(const std::string& fixture, FixtureParams params = {}) {
    ExperimentConfig c;
    c.fixture = fixture;
    c.params = std::move(params);
    c.k = {0, 2};
    c.n = {1, 4, 16};
    c.probes = 10;
    return c;
}

std::vector<double> column(const Table& t, const std::string& name) {
    std::size_t c = 0;
    while (t.header.at(c) != name) ++c;
    std::vector<double> out;
    for (const auto& r : t.rows) out.push_back(std::stod(r[c]));
    return out;
}

const Check& find_check(const RunReport& r, const std::string& name) {
    for (const auto& c : r.checks)
        if (c.name == name) return c;
    throw std::runtime_error("no check " + name);
}

}  // namespace

TEST(Format, ShortestRoundTrip) {
    EXPECT_EQ(format_number(0.1), "0.1");
    EXPECT_EQ(format_number(0.0), "0");
    EXPECT_EQ(format_number(-2.5), "-2.5");
    EXPECT_EQ(format_number(1e-300), "1e-300");
    CounterRng rng(5, 0);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.normal() * std::pow(10.0, 20.0 * rng.uniform() - 10.0);
        EXPECT_EQ(std::stod(format_number(v)), v);
    }
}

namespace {

struct CommaDecimal : std::numpunct<char> {
    char do_decimal_point() const override { return ','; }
};

}  // namespace

TEST(Format, IgnoresGlobalLocale) {
    const std::locale saved = std::locale::global(std::locale(std::locale::classic(), new CommaDecimal));
    std::ostringstream probe;
    probe << 1.5;
    EXPECT_EQ(probe.str(), "1,5");  // the facet is active for streams
    EXPECT_EQ(format_number(1.5), "1.5");
    Table t;
    t.header = {"v"};
    t.add(0.25);
    EXPECT_EQ(t.csv(), "v\n0.25\n");
    std::locale::global(saved);
}

TEST(TableCsv, HeaderAndRows) {
    Table t;
    t.header = {"a", "b", "c"};
    t.add(1.25, std::size_t{3}, "x");
    t.add(-0.5, 2L, std::string("y"));
    EXPECT_EQ(t.csv(), "a,b,c\n1.25,3,x\n-0.5,2,y\n");
    try {
        t.add(1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::dimension);
    }
}

TEST(Compare, ConstantBarrierAllValuesEqual) {
    const RunReport r = run_compare(tree_config("const", {{"M", 1.5}}));
    EXPECT_TRUE(r.pass());
    for (const char* col : {"lower_value", "upper_value", "snell_value"})
        for (double v : column(r.table, col)) EXPECT_EQ(v, 1.5) << col;
    for (const char* col : {"gap_upper_lower", "gap_lower_snell"})
        for (double v : column(r.table, col)) EXPECT_EQ(v, 0.0) << col;
}

TEST(Compare, PricedOutCollapsesToStoppingOracle) {
    for (const char* name : {"F3", "F4"}) {
        const ExperimentConfig c = tree_config(name, {{"chi_scale", 1000.0}});
        const RunReport r = run_compare(c);
        const double oracle = snell_stopping_value(make_fixture(name, c.params), 0.25);
        for (const char* col : {"lower_value", "upper_value", "snell_value"})
            for (double v : column(r.table, col)) EXPECT_NEAR(v, oracle, 1e-10) << name << " " << col;
    }
}

TEST(Compare, TableShapeAndChecks) {
    const ExperimentConfig c = tree_config("F3");
    const RunReport r = run_compare(c);
    EXPECT_EQ(r.table.rows.size(), c.k.size() * c.n.size());
    EXPECT_EQ(find_check(r, "saddle_violations").value, 0.0);
    EXPECT_TRUE(find_check(r, "lower_le_upper k=2").pass);
    EXPECT_TRUE(find_check(r, "penalty_monotone").pass);
    // No timing column: the table must be reproducible.
    for (const auto& h : r.table.header) EXPECT_EQ(h.find("ms"), std::string::npos);
}

TEST(Compare, FailingToleranceFailsVerdict) {
    ExperimentConfig c = tree_config("F3");
    c.k = {3};
    c.tolerances.value_gap = 1e-6;
    const RunReport r = run_compare(c);
    EXPECT_FALSE(find_check(r, "value_gap k=3").pass);
    EXPECT_FALSE(r.pass());
}

TEST(Compare, ReproducibleAcrossRunsAndThreads) {
    const ExperimentConfig c = tree_config("F4");
    setenv("SNELL_THREADS", "1", 1);
    const RunReport a = run_compare(c);
    setenv("SNELL_THREADS", "4", 1);
    const RunReport b = run_compare(c);
    unsetenv("SNELL_THREADS");
    const RunReport again = run_compare(c);
    EXPECT_EQ(a.table.csv(), b.table.csv());
    EXPECT_EQ(a.table.csv(), again.table.csv());
    EXPECT_EQ(a.metrics, b.metrics);
}

TEST(Compare, NonMarkovianFixtureRejected) {
    try {
        run_compare(tree_config("lookback"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::spec);
    }
}

TEST(Compare, CapacityErrorNamesFeasibleGrid) {
    ExperimentConfig c = tree_config("F4");
    c.eps = 1.0 / 64.0;
    try {
        run_compare(c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::capacity);
        EXPECT_NE(std::string(e.what()).find("largest feasible"), std::string::npos);
    }
}

TEST(Sweep, LongFormatOrderedAndMonotone) {
    ExperimentConfig c = tree_config("F3");
    c.sweep.eps = {0.5, 0.25};
    c.sweep.k = {0, 1, 2};
    c.sweep.n = {0, 1, 2, 3, 4};
    c.sweep.seeds = {1, 2};
    const RunReport r = run_sweep(c);
    EXPECT_EQ(r.table.header, (std::vector<std::string>{"kind", "param_name", "param_value", "metric", "value"}));
    // Kinds appear in blocks: eps, k, k_fit, n, seed.
    std::vector<std::string> kinds;
    for (const auto& row : r.table.rows)
        if (kinds.empty() || kinds.back() != row[0]) kinds.push_back(row[0]);
    EXPECT_EQ(kinds, (std::vector<std::string>{"eps", "k", "k_fit", "n", "seed"}));
    std::vector<double> y;
    for (const auto& row : r.table.rows)
        if (row[0] == "n" && row[3] == "Y0") y.push_back(std::stod(row[4]));
    ASSERT_EQ(y.size(), 5u);
    for (std::size_t j = 1; j < y.size(); ++j) EXPECT_LE(y[j], y[j - 1]);
    EXPECT_TRUE(r.pass());
    EXPECT_EQ(run_sweep(c).table.csv(), r.table.csv());
}

TEST(Sweep, EnvelopeCoversGaps) {
    ExperimentConfig c = tree_config("F4");
    c.sweep.k = {0, 1, 2, 3};
    const RunReport r = run_sweep(c);
    const double C = r.metrics.at("envelope_constant").get<double>();
    std::map<double, double> lower;
    for (const auto& row : r.table.rows)
        if (row[0] == "k" && row[3] == "lower_value") lower[std::stod(row[2])] = std::stod(row[4]);
    for (const auto& [k, v] : lower) {
        if (k >= 1) {
            EXPECT_LE(std::abs(v - lower.rbegin()->second), C / std::sqrt(k) + 1e-15);
        }
    }
}

TEST(SolveGame, TreeRowsAndLsmcTolerance) {
    ExperimentConfig c = tree_config("F3");
    const RunReport t = run_solve_game(c, 0.25, {0, 1}, Backend::tree);
    EXPECT_EQ(t.table.rows.size(), 2u);
    EXPECT_EQ(t.table.header.size(), 8u);
    EXPECT_TRUE(t.pass());
    c.paths = 2000;
    c.eval_paths = 2000;
    const RunReport l = run_solve_game(c, 0.25, {1}, Backend::lsmc);
    const Check& ch = find_check(l, "lower_le_upper k=1");
    EXPECT_GT(ch.tolerance, c.tolerances.lsmc_bias);
}

TEST(SolveBsde, TreeAndLsmcColumns) {
    ExperimentConfig c = tree_config("F4");
    const RunReport t = run_solve_bsde(c, {0, 1, 2, 4}, Backend::tree);
    const auto y = column(t.table, "Y0");
    for (std::size_t j = 1; j < y.size(); ++j) EXPECT_LE(y[j], y[j - 1]);
    EXPECT_EQ(column(t.table, "K_minus_total")[0], 0.0);
    EXPECT_TRUE(t.pass());
    c.paths = 3000;
    const RunReport l = run_solve_bsde(c, {1, 4}, Backend::lsmc);
    EXPECT_EQ(l.table.rows.size(), 2u);
    EXPECT_TRUE(find_check(l, "barrier_and_slackness").pass);
}

TEST(VerifySaddle, RowsPerProbe) {
    const RunReport r = run_verify_saddle(tree_config("F3"), 8.0, 12);
    EXPECT_EQ(r.table.rows.size(), 12u);
    EXPECT_TRUE(r.pass());
    const auto taun = column(r.table, "J_nu_star_taun");
    for (double v : taun) EXPECT_NEAR(v, r.metrics.at("y0").get<double>(), 1e-10);
}

TEST(Simulate, DumpHasOneRowPerBreakpoint) {
    const ExperimentConfig c = tree_config("F4");
    const RunReport r = run_simulate(c, true, 6);
    EXPECT_EQ(r.table.header, (std::vector<std::string>{"path", "time", "x0", "jump", "mark"}));
    const auto paths = simulate_bundle(make_fixture("F4"), ImpulseControl{}, 1.0, 0.25, 6, c.seed);
    std::size_t rows = 0, jumps = 0;
    for (const auto& p : paths) {
        rows += p.size();
        jumps += p.jumps().size();
    }
    EXPECT_EQ(r.table.rows.size(), rows);
    std::size_t flagged = 0;
    for (const auto& row : r.table.rows) flagged += row[3] == "1";
    EXPECT_EQ(flagged, jumps);
}

TEST(Outputs, CsvAndVerdictWritten) {
    const auto dir = std::filesystem::temp_directory_path() / "snell_harness_test";
    std::filesystem::create_directories(dir);
    const std::string out = (dir / "run.csv").string();
    const ExperimentConfig c = tree_config("const");
    const RunReport r = run_compare(c);
    write_outputs(r, c, out, "abc");
    std::stringstream csv;
    csv << std::ifstream(out).rdbuf();
    EXPECT_EQ(csv.str(), r.table.csv());
    const auto v = nlohmann::json::parse(std::ifstream(verdict_path(out)));
    EXPECT_EQ(v.at("pass").get<bool>(), true);
    EXPECT_EQ(v.at("content_hash").get<std::string>(), "abc");
    EXPECT_EQ(v.at("config_hash").get<std::string>(), hex64(config_hash(c)));
    EXPECT_EQ(v.at("checks").size(), r.checks.size());
    EXPECT_TRUE(v.at("environment").contains("threads"));
    std::filesystem::remove_all(dir);
}
