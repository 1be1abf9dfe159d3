#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "rankcp/neghyper.hpp"
#include "rankcp/verify.hpp"

using namespace rankcp;

TEST_CASE("pmf trivial values") {
    CHECK(NegHypergeom(2, 1, 1).pmf(0) == Catch::Approx(0.5).margin(1e-15));
    CHECK(NegHypergeom(5, 0, 3).pmf(0) == 1.0);  // no test items
    // N=5, m=3, r=1: frozen from the 10-partition enumeration
    const NegHypergeom d(5, 3, 1);
    CHECK(d.pmf(0) == Catch::Approx(0.4).margin(1e-14));
    CHECK(d.cdf(1) == Catch::Approx(0.7).margin(1e-14));
    CHECK_THROWS_AS(d.pmf(4), std::invalid_argument);
    CHECK_THROWS_AS(d.pmf(-1), std::invalid_argument);
    CHECK_THROWS_AS(NegHypergeom(5, 3, 3), std::invalid_argument);  // r > n
}

TEST_CASE("cdf clamps outside the support") {
    const NegHypergeom d(7, 4, 2);
    CHECK(d.cdf(-1) == 0.0);
    CHECK(d.cdf(4) == 1.0);
    CHECK(d.cdf(100) == 1.0);
    double prev = 0.0;
    for (int k = 0; k <= 4; ++k) {
        CHECK(d.cdf(k) >= prev);
        prev = d.cdf(k);
    }
}

TEST_CASE("pmf normalizes across sizes including the log-gamma path") {
    const std::vector<std::tuple<int, int, int>> grid = {
        {2, 1, 1},    {7, 3, 2},     {64, 32, 17},  {65, 32, 17},
        {100, 60, 3}, {1000, 500, 499}, {10000, 5000, 2500},
    };
    for (const auto& [N, m, r] : grid) {
        const auto masses = nh_masses(N, m, r);
        long double sum = 0.0L;
        for (double v : masses) sum += v;
        CHECK(std::abs(static_cast<double>(sum) - 1.0) < 1e-12);
    }
}

TEST_CASE("pmf matches the exact fraction across the integer/log-gamma boundary") {
    // Values just below the exact-integer cutoff, computed both ways.
    const int N = 64, m = 30, r = 10;
    const auto masses = nh_masses(N, m, r);
    LogFactorial lf(N);
    const double log_den = lf.log_binom(N, m);
    for (int k = 0; k <= m; ++k) {
        const double via_log = std::exp(lf.log_binom(r + k - 1, k) + lf.log_binom(N - r - k, m - k) - log_den);
        CHECK(masses[k] == Catch::Approx(via_log).epsilon(1e-10));
    }
}

TEST_CASE("reflection symmetry (r,k) <-> (n+1-r, m-k)") {
    const int N = 12, m = 5, n = N - m;
    for (int r = 1; r <= n; ++r) {
        const auto a = nh_masses(N, m, r);
        const auto b = nh_masses(N, m, n + 1 - r);
        for (int k = 0; k <= m; ++k) CHECK(a[k] == Catch::Approx(b[m - k]).margin(1e-14));
    }
}

TEST_CASE("mean equals r m / (n+1)") {
    for (const auto& [N, m, r] : std::vector<std::tuple<int, int, int>>{
             {12, 6, 3}, {30, 10, 7}, {200, 150, 20}}) {
        const auto masses = nh_masses(N, m, r);
        long double mean = 0.0L;
        for (int k = 0; k <= m; ++k) mean += static_cast<long double>(k) * masses[k];
        const int n = N - m;
        CHECK(std::abs(static_cast<double>(mean) - static_cast<double>(r) * m / (n + 1)) < 1e-9);
    }
}

TEST_CASE("exact fraction equals the enumeration oracle") {
    for (int N = 2; N <= 10; ++N) {
        for (int n = 1; n < N; ++n) {
            const int m = N - n;
            for (int r = 1; r <= n; ++r) {
                const ExactPmf oracle = enumerate_rank_pmf(N, n, r);
                for (int k = 0; k <= m; ++k) {
                    const auto [num, den] = nh_pmf_fraction(N, m, r, k);
                    CHECK(Rational(num, den) == oracle.probs[k]);
                }
            }
        }
    }
}

TEST_CASE("table sampler matches the pmf") {
    SECTION("degenerate m=0") {
        const NegHypergeom d(4, 0, 2);
        std::mt19937_64 rng(1);
        for (int i = 0; i < 10; ++i) CHECK(d.sample(rng) == 0);
    }
    SECTION("N=2 symmetry case") {
        const NegHypergeom d(2, 1, 1);
        std::mt19937_64 rng(2);
        int zeros = 0;
        const int reps = 100000;
        for (int i = 0; i < reps; ++i) zeros += d.sample(rng) == 0;
        CHECK(std::abs(static_cast<double>(zeros) / reps - 0.5) < 3.0 * std::sqrt(0.25 / reps));
    }
    SECTION("N=12 goodness of fit, 3 sigma per bin") {
        const NegHypergeom d(12, 6, 3);
        std::mt19937_64 rng(3);
        const int reps = 1000000;
        std::vector<int> counts(7, 0);
        for (int i = 0; i < reps; ++i) counts[d.sample(rng)] += 1;
        for (int k = 0; k <= 6; ++k) {
            const double p = d.pmf(k);
            const double sigma = std::sqrt(p * (1 - p) / reps);
            CHECK(std::abs(static_cast<double>(counts[k]) / reps - p) < 3.5 * sigma);
        }
    }
}

TEST_CASE("fast sampler matches the pmf") {
    // The beta-binomial representation must reproduce the table distribution.
    const NegHypergeom d(12, 6, 3);
    std::mt19937_64 rng(4);
    const int reps = 1000000;
    std::vector<int> counts(7, 0);
    for (int i = 0; i < reps; ++i) counts[nh_sample_fast(12, 6, 3, rng)] += 1;
    for (int k = 0; k <= 6; ++k) {
        const double p = d.pmf(k);
        const double sigma = std::sqrt(p * (1 - p) / reps);
        CHECK(std::abs(static_cast<double>(counts[k]) / reps - p) < 3.5 * sigma);
    }
    CHECK(nh_sample_fast(5, 0, 2, rng) == 0);
}

TEST_CASE("absolute rank distribution is the shifted pmf") {
    SECTION("point mass when m=0") {
        const auto shifted = NegHypergeom(3, 0, 1).absolute_rank_dist();
        CHECK(shifted.min_rank == 1);
        REQUIRE(shifted.masses.size() == 1);
        CHECK(shifted.masses[0] == 1.0);
    }
    SECTION("top item reaches N") {
        const auto shifted = NegHypergeom(6, 2, 4).absolute_rank_dist();
        CHECK(shifted.min_rank + static_cast<int>(shifted.masses.size()) - 1 == 6);
    }
    SECTION("N=5, m=3, r=2 masses frozen from enumeration") {
        const auto shifted = NegHypergeom(5, 3, 2).absolute_rank_dist();
        CHECK(shifted.min_rank == 2);
        const std::vector<double> expected = {0.1, 0.2, 0.3, 0.4};
        REQUIRE(shifted.masses.size() == expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i)
            CHECK(shifted.masses[i] == Catch::Approx(expected[i]).margin(1e-14));
    }
}
