#pragma once

#include "snell/error.hpp"
#include "snell/model.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace snell {

using FixtureParams = std::map<std::string, double>;

inline double param(const FixtureParams& p, const std::string& key, double fallback) {
    const auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

/// One mark of a scalar fixture: jump size and cost as functions of x.
struct ScalarMark {
    std::function<double(double)> gamma;
    double chi = 0.0;
    double weight = 1.0;
};

/// Scalar Markovian fixture with constant drift/volatility.
inline ProblemSpec scalar_fixture(std::string name, const FixtureParams& p, std::function<double(double)> psi,
                                  std::function<double(double)> f, std::vector<ScalarMark> marks) {
    ProblemSpec s;
    s.name = std::move(name);
    s.dim = 1;
    s.horizon = param(p, "T", 1.0);
    s.x0 = {param(p, "x0", 0.0)};
    const double a = param(p, "drift", 0.0);
    const double sigma = param(p, "sigma", 1.0);
    const double chi_scale = param(p, "chi_scale", 1.0);
    const double lambda_scale = param(p, "lambda_scale", 1.0);
    if (p.count("chi"))
        for (auto& m : marks) m.chi = p.at("chi");
    for (auto& m : marks) {
        m.chi *= chi_scale;
        m.weight *= lambda_scale;
    }
    s.drift = [a](double, const PathView&) { return Vector{a}; };
    s.vol = [sigma](double, const PathView&) { return Vector{sigma}; };
    s.barrier = [psi](double, const PathView& v) { return psi(v.x()); };
    s.running_cost = [f](double, const PathView& v) { return f(v.x()); };
    s.jump = [marks](double, const PathView& v, std::size_t e) { return Vector{marks.at(e).gamma(v.x())}; };
    s.intervention_cost = [marks](double, const PathView&, std::size_t e) { return marks.at(e).chi; };
    for (std::size_t e = 0; e < marks.size(); ++e) s.marks.push_back({Vector{static_cast<double>(e)}, marks[e].weight});
    s.markovian = true;
    return s;
}

inline std::function<double(double)> constant_shift(double g) {
    return [g](double) { return g; };
}

/// Registered fixtures. Parameters common to all: T, x0, drift, sigma,
/// chi (overrides every mark cost), chi_scale, lambda_scale.
///   F1     Psi = x, f = 0, one mark: gamma = -0.5, chi = 0.3, lambda = 1
///   F2     F1 with chi = 0
///   F3     Psi = 0.5 max(x, 0), f = x, one mark as in F1
///   F4     as F3 with two marks: gamma in {-0.5, -1}, chi in {0.3, 0.55}, lambda = 0.5 each
///   F5     f = clamp(x, -0.5, 0.5), Psi = 0.5 clamp(x, 0, 1), one mark as in F1
///   const  Psi = M (default 1), f = 0, one mark as in F1
///   onestep  Psi = x, gamma = -1, chi = 0.1, lambda = 0.5
///   growth   Psi = x, gamma = -b x (b default 0.5), chi = 0.3
///   lookback Psi = 0.5 * running max of x (path-dependent), f = 0, one mark as in F1
inline ProblemSpec make_fixture(const std::string& name, const FixtureParams& p = {}) {
    const double g = param(p, "gamma", -0.5);
    const double chi = param(p, "chi_base", 0.3);
    if (name == "F1")
        return scalar_fixture(name, p, [](double x) { return x; }, [](double) { return 0.0; },
                              {{constant_shift(g), chi, param(p, "lambda", 1.0)}});
    if (name == "F2") {
        FixtureParams q = p;
        q["chi"] = 0.0;
        return scalar_fixture(name, q, [](double x) { return x; }, [](double) { return 0.0; },
                              {{constant_shift(g), 0.0, param(p, "lambda", 1.0)}});
    }
    if (name == "F3")
        return scalar_fixture(name, p, [](double x) { return 0.5 * std::max(x, 0.0); }, [](double x) { return x; },
                              {{constant_shift(g), chi, param(p, "lambda", 1.0)}});
    if (name == "F4")
        return scalar_fixture(name, p, [](double x) { return 0.5 * std::max(x, 0.0); }, [](double x) { return x; },
                              {{constant_shift(-0.5), 0.3, 0.5}, {constant_shift(-1.0), 0.55, 0.5}});
    if (name == "F5")
        return scalar_fixture(name, p, [](double x) { return 0.5 * std::clamp(x, 0.0, 1.0); },
                              [](double x) { return std::clamp(x, -0.5, 0.5); },
                              {{constant_shift(g), chi, param(p, "lambda", 1.0)}});
    if (name == "const") {
        const double m = param(p, "M", 1.0);
        return scalar_fixture(name, p, [m](double) { return m; }, [](double) { return 0.0; },
                              {{constant_shift(g), chi, param(p, "lambda", 1.0)}});
    }
    if (name == "onestep")
        return scalar_fixture(name, p, [](double x) { return x; }, [](double) { return 0.0; },
                              {{constant_shift(param(p, "gamma", -1.0)), param(p, "chi_base", 0.1), 0.5}});
    if (name == "growth") {
        const double b = param(p, "b", 0.5);
        return scalar_fixture(name, p, [](double x) { return x; }, [](double) { return 0.0; },
                              {{[b](double x) { return -b * x; }, chi, param(p, "lambda", 1.0)}});
    }
    if (name == "lookback") {
        ProblemSpec s = scalar_fixture(name, p, [](double x) { return x; }, [](double) { return 0.0; },
                                       {{constant_shift(g), chi, param(p, "lambda", 1.0)}});
        s.barrier = [](double, const PathView& v) {
            double m = v.state(0)[0];
            for (std::size_t k = 0; k < v.size(); ++k) m = std::max(m, v.state(k)[0]);
            return 0.5 * m;
        };
        s.markovian = false;
        return s;
    }
    fail(ErrorKind::config, "unknown fixture '" + name + "'");
}

inline std::vector<std::string> fixture_names() {
    return {"F1", "F2", "F3", "F4", "F5", "const", "onestep", "growth", "lookback"};
}

}  // namespace snell
