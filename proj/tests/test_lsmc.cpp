#include "snell/bsde_lsmc.hpp"
#include "snell/fixtures.hpp"
#include "snell/game_lsmc.hpp"

#include <gtest/gtest.h>

#include <cstdlib>

using namespace snell;

TEST(Basis, MonomialCount) {
    EXPECT_EQ(PolynomialBasis(1, 3).size(), 4u);
    EXPECT_EQ(PolynomialBasis(2, 3).size(), 10u);
    EXPECT_EQ(PolynomialBasis(3, 2).size(), 10u);
    EXPECT_EQ(PolynomialBasis(2, 0).size(), 1u);
}

TEST(Regression, RecoversPolynomialExactly) {
    CounterRng rng(3, 0);
    Eigen::MatrixXd x(200, 2), y(200, 2);
    auto poly = [](double a, double b) { return 1.0 - 2.0 * a + 0.5 * a * b - b * b * b + 3.0 * a * a * b; };
    for (int r = 0; r < 200; ++r) {
        x(r, 0) = 3.0 * rng.normal() + 1.0;
        x(r, 1) = rng.uniform();
        y(r, 0) = poly(x(r, 0), x(r, 1));
        y(r, 1) = 2.0;
    }
    const Regression reg(PolynomialBasis(2, 3), x, y);
    for (double a : {-2.0, 0.0, 4.5})
        for (double b : {-1.0, 0.3, 2.0}) {
            const std::vector<double> pt{a, b};
            EXPECT_NEAR(reg.predict(pt, 0), poly(a, b), 1e-8);
            EXPECT_NEAR(reg.predict_all(pt)[1], 2.0, 1e-10);
        }
}

TEST(Regression, ConstantSampleGivesMean) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(50, 1, 0.7);
    Eigen::MatrixXd y(50, 1);
    for (int r = 0; r < 50; ++r) y(r, 0) = r;
    const Regression reg(PolynomialBasis(1, 3), x, y);
    EXPECT_NEAR(reg.predict(std::vector<double>{0.7}, 0), 24.5, 1e-10);
}

TEST(JumpBundle, StepLaw) {
    const ProblemSpec s = make_fixture("F4");
    const JumpBundle b = simulate_jump_bundle(s, 0.25, 20000, 5);
    std::vector<double> freq(3, 0.0);
    for (auto c : b.choice) freq[c] += 1.0 / static_cast<double>(b.choice.size());
    const double n = static_cast<double>(b.choice.size());
    for (std::size_t j = 0; j < 3; ++j) {
        const double p = b.jump_prob[j];
        EXPECT_LE(std::abs(freq[j] - p), 4.0 * std::sqrt(p * (1 - p) / n)) << j;
    }
    // Each path's jumps match its recorded choices.
    for (std::size_t p = 0; p < 100; ++p) {
        std::size_t jumps = 0;
        for (std::size_t i = 0; i < b.steps; ++i) jumps += b.choice[p * b.steps + i] > 0;
        EXPECT_EQ(b.paths[p].jumps().size(), jumps);
    }
}

TEST(BsdeLsmc, ConstantBarrier) {
    const ProblemSpec s = make_fixture("const", {{"M", 1.5}});
    const JumpBundle b = simulate_jump_bundle(s, 0.25, 2000, 1);
    for (double n : {0.0, 8.0}) {
        const LsmcBsdeResult r = solve_penalized_lsmc(linear_bsde(s), b, n);
        EXPECT_EQ(r.y0, 1.5);
        EXPECT_EQ(r.max_violation, 0.0);
    }
}

TEST(BsdeLsmc, MonotoneInPenaltyWithinNoise) {
    for (const char* name : {"F1", "F3", "F4"}) {
        const ProblemSpec s = make_fixture(name);
        const JumpBundle b = simulate_jump_bundle(s, 0.25, 10000, 11);
        LsmcBsdeResult prev = solve_penalized_lsmc(linear_bsde(s), b, 1.0);
        for (double n = 2.0; n <= 32.0; n *= 2.0) {
            const LsmcBsdeResult cur = solve_penalized_lsmc(linear_bsde(s), b, n);
            EXPECT_LE(cur.y0 - prev.y0, 3.0 * std::max(cur.se, prev.se)) << name << " n=" << n;
            EXPECT_EQ(cur.max_violation, 0.0);
            prev = cur;
        }
    }
}

TEST(BsdeLsmc, CloseToTree) {
    // Gaussian versus +-sqrt(dt) increments and regression error: the two
    // backends agree to the discretization scale, not to MC error alone.
    for (const char* name : {"F3", "F4", "F5"}) {
        const ProblemSpec s = make_fixture(name);
        const JumpBundle b = simulate_jump_bundle(s, 0.25, 10000, 7);
        for (double n : {0.0, 4.0}) {
            const LsmcBsdeResult r = solve_penalized_lsmc(linear_bsde(s), b, n);
            EXPECT_NEAR(r.y0, solve_penalized(s, 0.25, n).y0(), 0.03 + 3.0 * r.se) << name << " n=" << n;
        }
    }
}

TEST(BsdeLsmc, SlackConstraintLeavesNoPenalty) {
    const ProblemSpec s = make_fixture("F3", {{"chi_scale", 1000.0}});
    const JumpBundle b = simulate_jump_bundle(s, 0.25, 4000, 2);
    const LsmcBsdeResult r0 = solve_penalized_lsmc(linear_bsde(s), b, 0.0);
    const LsmcBsdeResult r = solve_penalized_lsmc(linear_bsde(s), b, 16.0);
    EXPECT_EQ(r.k_minus_total, 0.0);
    EXPECT_EQ(r.y0, r0.y0);
}

TEST(BsdeLsmc, ThreadCountDoesNotChangeResult) {
    const ProblemSpec s = make_fixture("F4");
    setenv("SNELL_THREADS", "1", 1);
    const double one = solve_penalized_lsmc(linear_bsde(s), simulate_jump_bundle(s, 0.25, 3000, 4), 4.0).y0;
    setenv("SNELL_THREADS", "3", 1);
    const double three = solve_penalized_lsmc(linear_bsde(s), simulate_jump_bundle(s, 0.25, 3000, 4), 4.0).y0;
    unsetenv("SNELL_THREADS");
    EXPECT_EQ(one, three);
}

TEST(GameLsmc, ConstantBarrier) {
    const ProblemSpec s = make_fixture("const", {{"M", 2.0}});
    LsmcGameOptions o;
    o.paths = 2000;
    o.eval_paths = 500;
    const LsmcValueField f(s, GameGrid(1.0, 0.25, 1), 2, o);
    EXPECT_EQ(f.value(), 2.0);
    const LsmcUpperValue up = upper_value_lsmc(f);
    EXPECT_EQ(up.value, 2.0);
    EXPECT_NEAR(up.se, 0.0, 1e-12);
}

TEST(GameLsmc, CloseToTreeAndOrdered) {
    for (const char* name : {"F3", "F4", "F5"})
        for (long k : {0L, 1L, 3L}) {
            const ProblemSpec s = make_fixture(name);
            const GameGrid g(1.0, 0.25, s.mark_count());
            const LsmcValueField f(s, g, k);
            GameOptions markov;
            markov.markov = true;
            const double tree = dpp_backward(s, g, k, markov).value();
            EXPECT_NEAR(f.value(), tree, 0.03) << name << " k=" << k;
            const LsmcUpperValue up = upper_value_lsmc(f);
            EXPECT_LE(std::abs(f.value() - up.value), 2.0 * up.se + 0.02) << name << " k=" << k;
        }
}

TEST(GameLsmc, BudgetMonotone) {
    const ProblemSpec s = make_fixture("F4");
    const GameGrid g(1.0, 0.25, 2);
    double prev = LsmcValueField(s, g, 0).value();
    for (long k = 1; k <= 3; ++k) {
        const double v = LsmcValueField(s, g, k).value();
        EXPECT_LE(v, prev + 1e-12);
        prev = v;
    }
}

TEST(GameLsmc, PricedOutMatchesStopping) {
    const ProblemSpec s = make_fixture("F3", {{"chi_scale", 1000.0}});
    const GameGrid g(1.0, 0.25, 1);
    EXPECT_EQ(LsmcValueField(s, g, 2).value(), LsmcValueField(s, g, 0).value());
}

TEST(GameLsmc, Errors) {
    try {
        LsmcValueField(make_fixture("lookback"), GameGrid(1.0, 0.25, 1), 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::spec);
    }
    try {
        LsmcValueField(make_fixture("F3"), GameGrid(1.0, 0.25, 1), -1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::spec);
    }
}
