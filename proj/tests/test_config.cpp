#include "snell/config.hpp"
#include "snell/content_hash.hpp"
#include "snell/rng.hpp"

#include <gtest/gtest.h>

using namespace snell;

namespace {

ErrorKind kind_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::range;  // sentinel: no error raised
}

ExperimentConfig populated() {
    ExperimentConfig c;
    c.fixture = "F4";
    c.params = {{"sigma", 0.7}, {"x0", 0.1}, {"chi_scale", 2.5}};
    c.eps = 0.125;
    c.k = {0, 2, 5};
    c.n = {0.5, 3, 1e3};
    c.backend = "lsmc";
    c.seed = 18446744073709551557ull;
    c.paths = 1234;
    c.eval_paths = 99;
    c.degree = 2;
    c.dispersion = 0.1;
    c.probes = 7;
    c.max_batch = 2;
    c.markov = true;
    c.tolerances.value_gap = 0.01;
    c.tolerances.lsmc_bias = 1.0 / 3.0;
    c.sweep.eps = {0.5, 0.25};
    c.sweep.k = {1, 4};
    c.sweep.n = {1, 2};
    c.sweep.seeds = {1, 2, 3};
    c.out = "results/run.csv";
    return c;
}

}  // namespace

TEST(Config, DefaultsFromEmptyObject) {
    const ExperimentConfig c = parse_config("{}");
    EXPECT_EQ(c, ExperimentConfig{});
    EXPECT_EQ(c.fixture, "F1");
    EXPECT_EQ(c.eps, 0.25);
    EXPECT_EQ(c.n, (std::vector<double>{1, 2, 4, 8, 16, 32}));
    EXPECT_FALSE(c.max_batch.has_value());
}

TEST(Config, RoundTripPopulated) {
    const ExperimentConfig c = populated();
    const ExperimentConfig back = parse_config(serialize(c));
    EXPECT_EQ(back, c);
    EXPECT_EQ(serialize(back), serialize(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, RoundTripRandomDoublesBitExact) {
    // Awkward doubles must survive text serialization unchanged.
    CounterRng rng(77, 0);
    for (int trial = 0; trial < 200; ++trial) {
        ExperimentConfig c;
        c.fixture = "F3";
        c.eps = 0.01 + 0.99 * rng.uniform();
        c.params["drift"] = rng.normal() * 1e-7;
        c.params["sigma"] = 0.1 + rng.uniform() * 3.0;
        c.dispersion = rng.uniform() / 3.0;
        c.n.clear();
        double v = 0.0;
        for (int j = 0; j < 4; ++j) c.n.push_back(v += 1e-3 + rng.uniform() * 10.0);
        c.tolerances.saddle = std::ldexp(rng.uniform(), -40);
        const ExperimentConfig back = parse_config(serialize(c));
        ASSERT_EQ(back, c) << serialize(c);
    }
}

TEST(Config, HashIgnoresKeyOrderAndWhitespace) {
    const ExperimentConfig a = parse_config(R"({"fixture": "F3", "eps": 0.5, "k": [1, 2]})");
    const ExperimentConfig b = parse_config("{\"k\":[1,2],\n  \"eps\":0.5,\"fixture\":\"F3\"}");
    EXPECT_EQ(config_hash(a), config_hash(b));
}

TEST(Config, HashSeesEveryField) {
    const ExperimentConfig base = populated();
    const std::uint64_t h = config_hash(base);
    std::vector<ExperimentConfig> variants(8, base);
    variants[0].fixture = "F3";
    variants[1].eps = 0.25;
    variants[2].k.push_back(6);
    variants[3].seed += 1;
    variants[4].max_batch.reset();
    variants[5].tolerances.identity = 2e-10;
    variants[6].sweep.seeds.clear();
    variants[7].params["sigma"] = 0.7000000000000001;
    for (const auto& v : variants) EXPECT_NE(config_hash(v), h);
}

TEST(Fnv1a, PublishedVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ull);
    EXPECT_EQ(hex64(0xaf63dc4c8601ec8cull), "af63dc4c8601ec8c");
    EXPECT_EQ(hex64(15), "000000000000000f");
}

TEST(ContentHash, MatchesGitBlobIds) {
    EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    EXPECT_EQ(git_blob_hash("hello world\n"), "3b18e512dba79e4c8300dd08aeb37f8e728b8dad");
}

TEST(Config, ValidationErrors) {
    EXPECT_EQ(kind_of("not json"), ErrorKind::config);
    EXPECT_EQ(kind_of("[1, 2]"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"fixture": "F9"})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"fixtures": "F1"})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"params": {"vol": 1}})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"eps": 0})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"eps": 2})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"eps": "0.25"})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"k": []})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"k": [-1]})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"n": [4, 2]})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"n": [-1]})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"backend": "gpu"})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"paths": 1})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"degree": 9})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"tolerances": {"value_gap": -1}})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"tolerances": {"gap": 1}})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"sweep": {"eps": [0.25, 0.5]}})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"sweep": {"k": [2, 1]}})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"params": {"T": 2}, "eps": 2})"), ErrorKind::range);
}

TEST(Config, FixtureParameterRanges) {
    EXPECT_EQ(kind_of(R"({"params": {"chi": -0.1}})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"params": {"lambda": 0}})"), ErrorKind::config);
    EXPECT_EQ(kind_of(R"({"params": {"T": -1}})"), ErrorKind::config);
    // Only the law of sigma W matters, so the sign of sigma is free.
    EXPECT_EQ(kind_of(R"({"params": {"sigma": -1, "chi": 0}})"), ErrorKind::range);
}

TEST(Config, MaxBatchNullMeansUnset) {
    EXPECT_FALSE(parse_config(R"({"max_batch": null})").max_batch.has_value());
    EXPECT_EQ(parse_config(R"({"max_batch": 2})").max_batch, std::optional<std::size_t>(2));
}

TEST(Config, LoadMissingFileIsConfigError) {
    try {
        load_config("/nonexistent/config.json");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
}
