#pragma once

#include "snell/error.hpp"
#include "snell/fixtures.hpp"
#include "snell/game.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace snell {

struct Tolerances {
    double value_gap = 0.05;      // |lower - Y^n_max|
    double saddle = 1e-10;        // per-probe chain violation
    double identity = 1e-10;      // |J(nu*, tau_n) - Y^n_0|
    double exact = 1e-12;         // tree identities
    double snell = 1e-4;          // decrement that declares convergence
    double mc_sigmas = 3.0;       // MC comparisons, in standard errors
    double lsmc_bias = 0.02;      // regression bias allowance
    bool operator==(const Tolerances&) const = default;
};

struct SweepLists {
    std::vector<double> eps;
    std::vector<long> k;
    std::vector<double> n;
    std::vector<std::uint64_t> seeds;
    bool operator==(const SweepLists&) const = default;
};

struct ExperimentConfig {
    std::string fixture = "F1";
    FixtureParams params;
    double eps = 0.25;
    std::vector<long> k{3};
    std::vector<double> n{1, 2, 4, 8, 16, 32};
    std::string backend = "tree";
    std::uint64_t seed = 1;
    std::size_t paths = 10000;
    std::size_t eval_paths = 10000;
    int degree = 3;
    double dispersion = 0.25;
    std::size_t probes = 50;
    std::optional<std::size_t> max_batch;
    bool markov = false;
    Tolerances tolerances;
    SweepLists sweep;
    std::string out;
    bool operator==(const ExperimentConfig&) const = default;
};

inline const std::set<std::string>& fixture_param_keys() {
    static const std::set<std::string> keys{"T",     "x0",    "drift",    "sigma",    "chi", "chi_scale",
                                            "lambda_scale", "lambda", "gamma", "chi_base", "M",   "b"};
    return keys;
}

inline void to_json(nlohmann::json& j, const Tolerances& t) {
    j = {{"value_gap", t.value_gap}, {"saddle", t.saddle},       {"identity", t.identity},
         {"exact", t.exact},         {"snell", t.snell},         {"mc_sigmas", t.mc_sigmas},
         {"lsmc_bias", t.lsmc_bias}};
}

inline void to_json(nlohmann::json& j, const SweepLists& s) {
    j = {{"eps", s.eps}, {"k", s.k}, {"n", s.n}, {"seeds", s.seeds}};
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"fixture", c.fixture},   {"params", c.params},         {"eps", c.eps},
                       {"k", c.k},               {"n", c.n},                   {"backend", c.backend},
                       {"seed", c.seed},         {"paths", c.paths},           {"eval_paths", c.eval_paths},
                       {"degree", c.degree},     {"dispersion", c.dispersion}, {"probes", c.probes},
                       {"markov", c.markov},     {"tolerances", c.tolerances}, {"sweep", c.sweep},
                       {"out", c.out}};
    j["max_batch"] = c.max_batch ? nlohmann::json(*c.max_batch) : nlohmann::json(nullptr);
}

namespace detail {

template <class T>
void read(const nlohmann::json& j, const char* key, T& into) {
    if (!j.contains(key)) return;
    try {
        into = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::config, std::string("config field '") + key + "': " + e.what());
    }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, _] : j.items())
        require(allowed.count(key) > 0, ErrorKind::config, "unknown key '" + key + "' in " + where);
}

}  // namespace detail

inline void from_json(const nlohmann::json& j, Tolerances& t) {
    detail::reject_unknown(j, {"value_gap", "saddle", "identity", "exact", "snell", "mc_sigmas", "lsmc_bias"},
                           "tolerances");
    detail::read(j, "value_gap", t.value_gap);
    detail::read(j, "saddle", t.saddle);
    detail::read(j, "identity", t.identity);
    detail::read(j, "exact", t.exact);
    detail::read(j, "snell", t.snell);
    detail::read(j, "mc_sigmas", t.mc_sigmas);
    detail::read(j, "lsmc_bias", t.lsmc_bias);
}

inline void from_json(const nlohmann::json& j, SweepLists& s) {
    detail::reject_unknown(j, {"eps", "k", "n", "seeds"}, "sweep");
    detail::read(j, "eps", s.eps);
    detail::read(j, "k", s.k);
    detail::read(j, "n", s.n);
    detail::read(j, "seeds", s.seeds);
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    require(j.is_object(), ErrorKind::config, "config must be a JSON object");
    detail::reject_unknown(j,
                           {"fixture", "params", "eps", "k", "n", "backend", "seed", "paths", "eval_paths", "degree",
                            "dispersion", "probes", "max_batch", "markov", "tolerances", "sweep", "out"},
                           "config");
    detail::read(j, "fixture", c.fixture);
    detail::read(j, "params", c.params);
    detail::read(j, "eps", c.eps);
    detail::read(j, "k", c.k);
    detail::read(j, "n", c.n);
    detail::read(j, "backend", c.backend);
    detail::read(j, "seed", c.seed);
    detail::read(j, "paths", c.paths);
    detail::read(j, "eval_paths", c.eval_paths);
    detail::read(j, "degree", c.degree);
    detail::read(j, "dispersion", c.dispersion);
    detail::read(j, "probes", c.probes);
    detail::read(j, "markov", c.markov);
    detail::read(j, "out", c.out);
    if (j.contains("max_batch") && !j.at("max_batch").is_null()) {
        std::size_t mb = 0;
        detail::read(j, "max_batch", mb);
        c.max_batch = mb;
    }
    if (j.contains("tolerances")) c.tolerances = j.at("tolerances").get<Tolerances>();
    if (j.contains("sweep")) c.sweep = j.at("sweep").get<SweepLists>();
}

template <class T>
bool strictly_increasing(const std::vector<T>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i - 1] < v[i])) return false;
    return true;
}

inline void validate(const ExperimentConfig& c) {
    const auto names = fixture_names();
    require(std::find(names.begin(), names.end(), c.fixture) != names.end(), ErrorKind::config,
            "unknown fixture '" + c.fixture + "'");
    for (const auto& [key, v] : c.params) {
        require(fixture_param_keys().count(key) > 0, ErrorKind::config, "unknown fixture parameter '" + key + "'");
        require(std::isfinite(v), ErrorKind::config, "fixture parameter '" + key + "' must be finite");
        if (key == "T" || key == "lambda" || key == "lambda_scale")
            require(v > 0.0, ErrorKind::config, "fixture parameter '" + key + "' must be positive");
        if (key == "chi" || key == "chi_scale" || key == "chi_base")
            require(v >= 0.0, ErrorKind::config, "fixture parameter '" + key + "' must be non-negative");
    }
    const ProblemSpec spec = make_fixture(c.fixture, c.params);
    spec.validate();
    require(c.eps > 0.0 && c.eps <= spec.horizon, ErrorKind::config, "eps must lie in (0, T]");
    require(!c.k.empty(), ErrorKind::config, "k list must not be empty");
    for (long k : c.k) require(k >= 0 && k <= 16, ErrorKind::config, "k must lie in [0, 16]");
    require(!c.n.empty(), ErrorKind::config, "penalty schedule must not be empty");
    for (double n : c.n) require(n >= 0.0 && std::isfinite(n), ErrorKind::config, "penalty levels must be finite and >= 0");
    require(strictly_increasing(c.n), ErrorKind::config, "penalty schedule must be increasing");
    parse_backend(c.backend);
    require(c.paths >= 2 && c.eval_paths >= 2, ErrorKind::config, "sample counts must be at least 2");
    require(c.degree >= 0 && c.degree <= 8, ErrorKind::config, "basis degree must lie in [0, 8]");
    require(c.dispersion >= 0.0 && std::isfinite(c.dispersion), ErrorKind::config, "dispersion must be >= 0");
    const Tolerances& t = c.tolerances;
    for (double v : {t.value_gap, t.saddle, t.identity, t.exact, t.snell, t.mc_sigmas, t.lsmc_bias})
        require(v >= 0.0 && std::isfinite(v), ErrorKind::config, "tolerances must be finite and >= 0");
    require(strictly_increasing(c.sweep.k), ErrorKind::config, "sweep k list must be increasing");
    require(strictly_increasing(c.sweep.n), ErrorKind::config, "sweep n list must be increasing");
    for (std::size_t i = 1; i < c.sweep.eps.size(); ++i)
        require(c.sweep.eps[i] < c.sweep.eps[i - 1], ErrorKind::config, "sweep eps list must be decreasing");
    for (double e : c.sweep.eps) require(e > 0.0 && e <= spec.horizon, ErrorKind::config, "sweep eps must lie in (0, T]");
    for (long k : c.sweep.k) require(k >= 0 && k <= 16, ErrorKind::config, "sweep k must lie in [0, 16]");
    for (double n : c.sweep.n) require(n >= 0.0 && std::isfinite(n), ErrorKind::config, "sweep n must be >= 0");
}

inline ExperimentConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::config, std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c = j.get<ExperimentConfig>();
    validate(c);
    return c;
}

inline std::string serialize(const ExperimentConfig& c) { return nlohmann::json(c).dump(2); }

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::config, "cannot open '" + path + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

/// FNV-1a of the canonical serialization: sorted keys, no whitespace,
/// shortest round-trip numbers.
inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(nlohmann::json(c).dump()); }

inline std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex;
    s.width(16);
    s.fill('0');
    s << v;
    return s.str();
}

}  // namespace snell
