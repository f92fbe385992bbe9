#include "snell/fixtures.hpp"
#include "snell/lattice.hpp"
#include "snell/simulation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

using namespace snell;

namespace {

ProblemSpec frozen_spec(double drift, double sigma, std::function<double(double)> gamma) {
    return scalar_fixture("frozen", {{"drift", drift}, {"sigma", sigma}}, [](double x) { return x; },
                          [](double) { return 0.0; }, {{gamma, 0.0, 1.0}});
}

/// Impulse sizes equal to the mark point: gamma(t, x, b) = b.
ProblemSpec mark_size_spec() {
    ProblemSpec s = frozen_spec(0.0, 0.0, [](double) { return 0.0; });
    s.marks = {{Vector{0.0}, 1.0}, {Vector{1.0}, 1.0}};
    s.jump = [](double, const PathView&, std::size_t e) { return Vector{static_cast<double>(e)}; };
    return s;
}

/// Independent Euler recursion for the uncontrolled scalar SDE with
/// atoms; jump sizes on the pre-jump state.
double euler_oracle(double x0, double a, double sigma, const std::function<double(double)>& gamma,
                    const DriverNoise& n) {
    double x = x0;
    std::size_t next = 0;
    const auto& atoms = n.atoms.atoms();
    for (std::size_t i = 0; i < n.steps; ++i) {
        const double t1 = n.dt * static_cast<double>(i + 1);
        const double drift = a * n.dt;
        const double diff = sigma * n.brownian[i];
        while (next < atoms.size() && atoms[next].time < t1 - 1e-12) x += gamma(x), ++next;
        x += drift + diff;
        while (next < atoms.size() && atoms[next].time <= t1 + 1e-12) x += gamma(x), ++next;
    }
    return x;
}

}  // namespace

TEST(SimulateMeasure, EmptyForZeroIntensity) {
    EXPECT_TRUE(simulate_measure({0.0}, 1.0, 5).empty());
    EXPECT_THROW(simulate_measure({-1.0}, 1.0, 5), Error);
}

TEST(SimulateMeasure, PoissonMean) {
    const std::size_t n = 100000;
    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) total += static_cast<double>(simulate_measure({2.0}, 1.0, 11, s).size());
    EXPECT_NEAR(total / static_cast<double>(n), 2.0, 3.0 * std::sqrt(2.0 / static_cast<double>(n)));
}

TEST(SimulateMeasure, MarkRatio) {
    std::size_t ones = 0, all = 0;
    for (std::size_t s = 0; s < 20000; ++s) {
        const MarkedPointMeasure mu = simulate_measure({1.0, 3.0}, 1.0, 12, s);
        for (const auto& a : mu.atoms()) {
            ones += a.mark == 1;
            ++all;
        }
    }
    const double p = static_cast<double>(ones) / static_cast<double>(all);
    EXPECT_NEAR(p, 0.75, 3.0 * std::sqrt(0.75 * 0.25 / static_cast<double>(all)));
}

TEST(SimulateSde, ZeroCoefficientsStayAtStart) {
    ProblemSpec s = frozen_spec(0.0, 0.0, [](double) { return 0.0; });
    s.x0 = {1.25};
    const DriverNoise n = make_noise(s, 0.125, NoiseKind::gaussian, 3, 0);
    const CadlagPath x = simulate_sde(s, ImpulseControl{{0.3, 0}}, 0.0, n);
    for (std::size_t k = 0; k < x.size(); ++k) EXPECT_EQ(x.value(k)[0], 1.25);
}

TEST(SimulateSde, ConstantDriftExact) {
    ProblemSpec s = frozen_spec(0.75, 0.0, [](double) { return 0.0; });
    const DriverNoise n = make_noise(s, 0.25, NoiseKind::gaussian, 3, 0, false);
    EXPECT_DOUBLE_EQ(simulate_sde(s, {}, 0.0, n).back()[0], 0.75);
}

TEST(SimulateSde, SingleImpulseOfMarkSize) {
    const ProblemSpec s = mark_size_spec();
    const DriverNoise n = make_noise(s, 0.25, NoiseKind::gaussian, 3, 0, false);
    const CadlagPath x = simulate_sde(s, ImpulseControl{{0.5, 1}}, 0.0, n);
    ASSERT_EQ(x.jumps().size(), 1u);
    EXPECT_DOUBLE_EQ(x.jumps()[0].time, 0.5);
    EXPECT_DOUBLE_EQ(x.jumps()[0].post[0] - x.jumps()[0].pre[0], 1.0);
}

TEST(SimulateSde, Errors) {
    const ProblemSpec s = make_fixture("F1");
    const DriverNoise n = make_noise(s, 0.25, NoiseKind::gaussian, 3, 0);
    try {
        simulate_sde(s, ImpulseControl{{0.2, 0}}, 0.5, n);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::precondition);
    }
    try {
        make_noise(s, 0.3, NoiseKind::gaussian, 3, 0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::grid);
    }
}

TEST(SimulateSde, NestedMatchesSinglePass) {
    const ProblemSpec s = make_fixture("growth");
    for (std::uint64_t path = 0; path < 50; ++path) {
        const DriverNoise n = make_noise(s, 0.0625, NoiseKind::gaussian, 21, path);
        const ImpulseControl u = random_control(4, 1.0, 1, 21, path);
        const double cut = u[0].time * 0.5;
        const CadlagPath a = simulate_sde(s, u, cut, n);
        const CadlagPath b = simulate_sde_single_pass(s, u, cut, n);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a.value(k)[0], b.value(k)[0]);
    }
}

TEST(SimulateSde, JumpBookkeeping) {
    const ProblemSpec s = make_fixture("F4");
    for (std::uint64_t path = 0; path < 100; ++path) {
        const DriverNoise n = make_noise(s, 0.125, NoiseKind::gaussian, 22, path);
        const ImpulseControl u = random_control(3, 1.0, 2, 22, path).tail_from(0.4);
        const CadlagPath x = simulate_sde(s, u, 0.4, n);
        EXPECT_EQ(x.jumps().size(), n.atoms.count(-1.0, 0.4) + u.count());
    }
}

TEST(SimulateSde, UncontrolledMatchesEulerOracle) {
    const auto gamma = [](double x) { return -0.3 * x + 0.1; };
    const ProblemSpec s = frozen_spec(0.2, 0.7, gamma);
    for (std::uint64_t path = 0; path < 50; ++path) {
        const DriverNoise n = make_noise(s, 0.125, NoiseKind::gaussian, 23, path);
        const CadlagPath x = simulate_sde(s, {}, 1.0, n);
        EXPECT_NEAR(x.back()[0], euler_oracle(0.0, 0.2, 0.7, gamma, n), 1e-13);
    }
}

TEST(SimulateSde, AtomsAsImpulsesReproducePath) {
    const ProblemSpec s = make_fixture("growth");
    for (std::uint64_t path = 0; path < 50; ++path) {
        DriverNoise n = make_noise(s, 0.125, NoiseKind::gaussian, 24, path);
        const CadlagPath with_atoms = simulate_sde(s, {}, 1.0, n);
        const ImpulseControl u = n.atoms.as_control();
        n.atoms = MarkedPointMeasure{};
        const CadlagPath with_impulses = simulate_sde(s, u, 0.0, n);
        ASSERT_EQ(with_atoms.size(), with_impulses.size());
        for (std::size_t k = 0; k < with_atoms.size(); ++k)
            EXPECT_EQ(with_atoms.value(k)[0], with_impulses.value(k)[0]);
    }
}

TEST(SimulateSde, DeterministicAcrossThreadCounts) {
    const ProblemSpec s = make_fixture("F3");
    setenv("SNELL_THREADS", "1", 1);
    const auto a = simulate_bundle(s, {}, 1.0, 0.125, 300, 9);
    setenv("SNELL_THREADS", "4", 1);
    const auto b = simulate_bundle(s, {}, 1.0, 0.125, 300, 9);
    unsetenv("SNELL_THREADS");
    for (std::size_t p = 0; p < a.size(); ++p) {
        ASSERT_EQ(a[p].size(), b[p].size());
        for (std::size_t k = 0; k < a[p].size(); ++k) EXPECT_EQ(a[p].value(k)[0], b[p].value(k)[0]);
    }
}

TEST(Lattice, ProbabilitiesSumToOne) {
    const ScenarioLattice lat(make_fixture("F4"), 0.25);
    for (std::size_t i = 0; i <= lat.steps(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < lat.nodes(i); ++k) s += lat.probability(i, k);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_EQ(lat.nodes(3), 216u);
}

TEST(Lattice, PathsMatchForwardSimulation) {
    const ProblemSpec s = make_fixture("growth");
    const ScenarioLattice lat(s, 0.25);
    const std::size_t m = lat.steps();
    for (std::size_t k = 0; k < lat.nodes(m); ++k) {
        const CadlagPath a = lat.path(m, k);
        const CadlagPath b = simulate_sde(s, {}, 1.0, lat.noise_for(m, k));
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(a.value(j)[0], b.value(j)[0]);
        EXPECT_EQ(a.jumps().size(), b.jumps().size());
    }
}

TEST(Lattice, CapacityErrorReportsFeasibleDepth) {
    try {
        ScenarioLattice lat(make_fixture("F4"), 1.0 / 64.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::capacity);
        EXPECT_NE(std::string(e.what()).find("largest feasible depth is 8"), std::string::npos);
    }
}

TEST(MomentDiagnostic, ZeroCoefficients) {
    ProblemSpec s = frozen_spec(0.0, 0.0, [](double) { return 0.0; });
    s.x0 = {-1.5};
    EXPECT_DOUBLE_EQ(moment_diagnostic(s, {}, 2, 100, 1, 0.25).mean, 2.25);
    EXPECT_DOUBLE_EQ(moment_diagnostic(s, {}, 4, 100, 1, 0.25).mean, std::pow(1.5, 4));
}

TEST(MomentDiagnostic, MatchesWalkEnumeration) {
    // Exhaustive oracle: E[max_k |S_k|^2] over the 16 paths of a +-0.5 walk.
    double oracle = 0.0;
    for (int w = 0; w < 16; ++w) {
        double x = 0.0, m = 0.0;
        for (int i = 0; i < 4; ++i) {
            x += ((w >> i) & 1) ? 0.5 : -0.5;
            m = std::max(m, std::abs(x));
        }
        oracle += m * m / 16.0;
    }
    const MeanEstimate est = moment_diagnostic(make_fixture("F1"), {}, 2, 100000, 5, 0.25, NoiseKind::rademacher);
    EXPECT_NEAR(est.mean, oracle, 3.0 * est.se);
}

TEST(MomentDiagnostic, StableUnderMoreSamples) {
    const ProblemSpec s = make_fixture("F3");
    const MeanEstimate a = moment_diagnostic(s, {}, 4, 5000, 6, 0.125);
    const MeanEstimate b = moment_diagnostic(s, {}, 4, 10000, 6, 0.125);
    EXPECT_LE(std::abs(a.mean - b.mean), 3.0 * (a.se + b.se));
}

TEST(MomentDiagnostic, GrowthFixtureBoundedUnderRefinement) {
    const ProblemSpec s = make_fixture("growth");
    auto max_norm = [&](double dt) {
        double m = 0.0;
        for (const auto& x : simulate_bundle(s, {}, 1.0, dt, 10000, 7)) m = std::max(m, x.sup_norm(1.0));
        return m;
    };
    const double coarse = max_norm(0.125);
    const double fine = max_norm(0.0625);
    EXPECT_TRUE(std::isfinite(coarse) && std::isfinite(fine));
    EXPECT_LT(fine, 2.0 * coarse);
    EXPECT_LT(coarse, 2.0 * fine);
}

TEST(FlowModulus, ZeroForIdenticalControls) {
    const auto rows = estimate_flow_modulus(make_fixture("F1"), 2, {0.0}, 200, 3, 1.0 / 64.0);
    EXPECT_EQ(rows[0].mean_sq_distance, 0.0);
}

TEST(FlowModulus, InertImpulsesOnlyShiftTimes) {
    const ProblemSpec s = frozen_spec(0.0, 1.0, [](double) { return 0.0; });
    const std::size_t k = 3;
    for (double eps : {0.25, 0.125}) {
        const auto rows = estimate_flow_modulus(s, k, {eps}, 500, 4, 1.0 / 64.0);
        const double dt_eps = GameGrid(1.0, eps, 1).dt();
        EXPECT_LE(rows[0].mean_sq_distance, std::pow(static_cast<double>(k) * dt_eps, 2));
    }
}

TEST(FlowModulus, DecreasesWithEps) {
    const auto rows = estimate_flow_modulus(make_fixture("F1"), 3, {0.1, 0.05, 0.025}, 2000, 5, 1.0 / 128.0);
    EXPECT_GT(rows[0].mean_sq_distance, rows[1].mean_sq_distance);
    EXPECT_GT(rows[1].mean_sq_distance, rows[2].mean_sq_distance);
}
