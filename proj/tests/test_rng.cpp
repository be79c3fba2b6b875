#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "hycas/rng.hpp"
#include "oracle_helpers.hpp"

using hycas::Rng;

TEST_CASE("rng streams are deterministic per seed") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 1000; ++i) {
        auto va = a.next_u64(), vb = b.next_u64(), vc = c.next_u64();
        all_equal = all_equal && (va == vb);
        any_diff = any_diff || (va != vc);
    }
    CHECK(all_equal);
    CHECK(any_diff);

    Rng n1(7), n2(7);
    for (int i = 0; i < 1000; ++i) CHECK(n1.normal() == n2.normal());
}

TEST_CASE("derive_seed separates counter streams") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 20000; ++i) seen.insert(hycas::derive_seed(123456789u, i));
    CHECK(seen.size() == 20000);
    CHECK(hycas::derive_seed(1, 0) != hycas::derive_seed(2, 0));
}

TEST_CASE("normal sampler moments and tails") {
    Rng rng(2024);
    const int n = 2'000'000;
    double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        s1 += x;
        s2 += x * x;
        s3 += x * x * x;
        s4 += x * x * x * x;
    }
    double mean = s1 / n, var = s2 / n - mean * mean;
    CHECK(std::fabs(mean) < 0.005);
    CHECK(std::fabs(var - 1.0) < 0.01);
    CHECK(std::fabs(s3 / n) < 0.02);
    CHECK(std::fabs(s4 / n - 3.0) < 0.05);
}

TEST_CASE("normal sampler matches the Gaussian CDF") {
    Rng rng(99);
    const int n = 1'000'000;
    const std::vector<double> qs{-3.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0};
    std::vector<int> counts(qs.size(), 0);
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        for (std::size_t j = 0; j < qs.size(); ++j)
            if (x <= qs[j]) ++counts[j];
    }
    for (std::size_t j = 0; j < qs.size(); ++j) {
        double expected = oracle::gauss_cdf_quadrature(qs[j]);
        double se = std::sqrt(expected * (1.0 - expected) / n);
        CHECK(std::fabs(counts[j] / static_cast<double>(n) - expected) < 6.0 * se + 1e-6);
    }
}

TEST_CASE("uniform_below stays in range and covers values") {
    Rng rng(5);
    std::vector<int> hits(10, 0);
    for (int i = 0; i < 10000; ++i) ++hits[rng.uniform_below(10)];
    for (int h : hits) CHECK(h > 800);
}
