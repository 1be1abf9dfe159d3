#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "rankcp/neghyper.hpp"
#include "rankcp/tcpr.hpp"

using namespace rankcp;

namespace {

// Reference simulator that literally ranks n + m uniform draws; the library
// sampler must be distributionally identical.
std::vector<int> simulate_by_uniforms(int n, int m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> u(n + m);
    for (double& v : u) v = unif(rng);
    std::vector<int> ranks(n);
    for (int i = 0; i < n; ++i) {
        int rank = 0;
        for (double v : u)
            if (u[i] >= v) ++rank;
        ranks[i] = rank;
    }
    std::sort(ranks.begin(), ranks.end());
    return ranks;
}

double chi2_vs_uniform_pairs(const std::map<std::pair<int, int>, int>& counts, int reps, int cells) {
    const double expected = static_cast<double>(reps) / cells;
    double chi2 = 0.0;
    for (const auto& [key, count] : counts) chi2 += (count - expected) * (count - expected) / expected;
    return chi2;
}

}  // namespace

TEST_CASE("simulate_sorted_ranks draws a uniform subset") {
    SECTION("n=1, m=1: fair coin over {1},{2}") {
        std::mt19937_64 rng(1);
        int ones = 0;
        const int reps = 100000;
        for (int i = 0; i < reps; ++i) ones += simulate_sorted_ranks(1, 1, rng)[0] == 1;
        CHECK(std::abs(static_cast<double>(ones) / reps - 0.5) < 3.0 * std::sqrt(0.25 / reps));
    }
    SECTION("n=2, m=2: all 6 sorted pairs uniform, and the reference sampler agrees") {
        const int reps = 60000;
        std::map<std::pair<int, int>, int> ours, reference;
        std::mt19937_64 rng(2);
        for (int i = 0; i < reps; ++i) {
            const auto a = simulate_sorted_ranks(2, 2, rng);
            ours[{a[0], a[1]}] += 1;
            const auto b = simulate_by_uniforms(2, 2, rng);
            reference[{b[0], b[1]}] += 1;
        }
        REQUIRE(ours.size() == 6);
        REQUIRE(reference.size() == 6);
        // 0.999 quantile of chi-square with 5 dof
        CHECK(chi2_vs_uniform_pairs(ours, reps, 6) < 20.52);
        CHECK(chi2_vs_uniform_pairs(reference, reps, 6) < 20.52);
    }
    SECTION("marginal of the first sorted entry matches 1 + NH(5,3,1)") {
        std::mt19937_64 rng(3);
        const int reps = 100000;
        std::vector<int> counts(4, 0);
        for (int i = 0; i < reps; ++i) counts[simulate_sorted_ranks(2, 3, rng)[0] - 1] += 1;
        const NegHypergeom d(5, 3, 1);
        for (int k = 0; k <= 3; ++k) {
            const double p = d.pmf(k);
            const double sigma = std::sqrt(p * (1 - p) / reps);
            CHECK(std::abs(static_cast<double>(counts[k]) / reps - p) < 3.5 * sigma);
        }
    }
    SECTION("outputs are sorted, distinct, in range") {
        std::mt19937_64 rng(4);
        for (int rep = 0; rep < 50; ++rep) {
            const auto ranks = simulate_sorted_ranks(10, 7, rng);
            REQUIRE(ranks.size() == 10);
            for (std::size_t i = 0; i < ranks.size(); ++i) {
                CHECK(ranks[i] >= 1);
                CHECK(ranks[i] <= 17);
                if (i > 0) CHECK(ranks[i] > ranks[i - 1]);
            }
        }
    }
}

TEST_CASE("theoretical envelope") {
    SECTION("width is constant in r and matches the frozen value") {
        const Envelope env = theoretical_envelope(100, 100, 0.05);
        const double width = env.upper[0] - env.lower[0];
        // 2 * 101 * sqrt(log(4 sqrt(2) pi sqrt(50 / 0.05)) / 50), independently computed
        CHECK(width == Catch::Approx(71.881781468312610).epsilon(1e-12));
        for (int r = 1; r < 100; ++r)
            CHECK(env.upper[r] - env.lower[r] == Catch::Approx(width).margin(1e-9));
    }
    SECTION("bounds are monotone in r") {
        const Envelope env = theoretical_envelope(40, 80, 0.1);
        for (int r = 1; r < 40; ++r) {
            CHECK(env.lower[r] >= env.lower[r - 1]);
            CHECK(env.upper[r] >= env.upper[r - 1]);
        }
    }
    SECTION("invalid delta rejected") {
        CHECK_THROWS_AS(theoretical_envelope(10, 10, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(theoretical_envelope(10, 10, 1.0), std::invalid_argument);
    }
}

TEST_CASE("linear envelope calibrates the smallest covering width") {
    SECTION("K=1 covers its single simulation") {
        std::mt19937_64 rng(5);
        const TcprConfig cfg{0.2, 1};
        const Envelope env = linear_envelope(20, 30, cfg, rng);
        std::mt19937_64 replay(5);
        const auto sim = simulate_sorted_ranks(20, 30, replay);
        for (int r = 0; r < 20; ++r) {
            CHECK(sim[r] >= env.lower[r] - 1e-9);
            CHECK(sim[r] <= env.upper[r] + 1e-9);
        }
    }
    SECTION("chosen width is the exact order statistic of per-sim covering widths") {
        const int n = 12, m = 18, K = 64;
        const TcprConfig cfg{0.25, K};
        std::mt19937_64 rng(6);
        const Envelope env = linear_envelope(n, m, cfg, rng);
        std::mt19937_64 replay(6);
        std::vector<double> min_cover(K);
        for (int s = 0; s < K; ++s) {
            const auto sim = simulate_sorted_ranks(n, m, replay);
            double c = 0.0;
            for (int r = 1; r <= n; ++r) {
                const double center = r + (m + 1) * (static_cast<double>(r) / n);
                c = std::max(c, std::abs(sim[r - 1] - center) / (m + 1));
            }
            min_cover[s] = c;
        }
        std::sort(min_cover.begin(), min_cover.end());
        const int idx = static_cast<int>(std::ceil(K * (1.0 - cfg.delta))) - 1;
        const double expected_width = 2.0 * (m + 1) * min_cover[idx];
        CHECK(env.upper[0] - env.lower[0] == Catch::Approx(expected_width).epsilon(1e-12));
    }
    SECTION("in-sample violation rate respects delta") {
        const int n = 15, m = 25, K = 400;
        const TcprConfig cfg{0.1, K};
        std::mt19937_64 rng(7);
        const Envelope env = linear_envelope(n, m, cfg, rng);
        std::mt19937_64 replay(7);
        int violations = 0;
        for (int s = 0; s < K; ++s) {
            const auto sim = simulate_sorted_ranks(n, m, replay);
            for (int r = 0; r < n; ++r) {
                if (sim[r] < env.lower[r] - 1e-9 || sim[r] > env.upper[r] + 1e-9) {
                    ++violations;
                    break;
                }
            }
        }
        CHECK(violations <= static_cast<int>(K * cfg.delta));
    }
}

TEST_CASE("quantile envelope") {
    SECTION("in-sample joint violations stay within K delta and gamma is maximal") {
        const int n = 10, m = 15, K = 500;
        const TcprConfig cfg{0.1, K};
        std::mt19937_64 rng(8);
        const Envelope env = quantile_envelope(n, m, cfg, rng);
        std::mt19937_64 replay(8);
        std::vector<std::vector<int>> sims(K);
        for (int s = 0; s < K; ++s) sims[s] = simulate_sorted_ranks(n, m, replay);
        int violations = 0;
        for (const auto& sim : sims) {
            for (int r = 0; r < n; ++r) {
                if (sim[r] < env.lower[r] || sim[r] > env.upper[r]) {
                    ++violations;
                    break;
                }
            }
        }
        CHECK(violations <= static_cast<int>(K * cfg.delta));
        CHECK(env.gamma >= 0.0);
        CHECK(env.gamma < 0.5);
    }
    SECTION("bounds are monotone in r") {
        std::mt19937_64 rng(9);
        const Envelope env = quantile_envelope(25, 40, TcprConfig{0.05, 2000}, rng);
        for (int r = 1; r < 25; ++r) {
            CHECK(env.lower[r] >= env.lower[r - 1]);
            CHECK(env.upper[r] >= env.upper[r - 1]);
        }
    }
    SECTION("per-rank band covers at least 1 - 2 gamma of the exact law") {
        const int n = 4, m = 6, K = 20000;
        std::mt19937_64 rng(10);
        const Envelope env = quantile_envelope(n, m, TcprConfig{0.1, K}, rng);
        for (int r = 1; r <= n; ++r) {
            const NegHypergeom d(n + m, m, r);
            // absolute rank r + k within [lower, upper]
            const int k_lo = static_cast<int>(std::ceil(env.lower[r - 1])) - r;
            const int k_hi = static_cast<int>(std::floor(env.upper[r - 1])) - r;
            const double mass = d.cdf(k_hi) - d.cdf(k_lo - 1);
            CHECK(mass >= 1.0 - 2.0 * env.gamma - 0.02);
        }
    }
    SECTION("quantile envelope is pointwise no wider than the theoretical one") {
        const int n = 100, m = 500;
        const double delta = 0.05;
        std::mt19937_64 rng(11);
        const Envelope q = quantile_envelope(n, m, TcprConfig{delta, 10000}, rng);
        const Envelope t = theoretical_envelope(n, m, delta);
        for (int r = 0; r < n; ++r)
            CHECK(q.upper[r] - q.lower[r] <= t.upper[r] - t.lower[r] + 1e-9);
    }
}

TEST_CASE("envelopes hold jointly on fresh simulations") {
    const int n = 50, m = 120, K = 2000;
    const double delta = 0.1;
    const double slack = 3.0 * std::sqrt(delta * (1 - delta) / 2000);
    for (auto kind : {EnvelopeKind::Linear, EnvelopeKind::Quantile}) {
        std::mt19937_64 fit_rng(12);
        const Envelope env = fit_envelope(kind, n, m, TcprConfig{delta, K}, fit_rng);
        std::mt19937_64 eval_rng(13);
        const double rate = envelope_violation_rate(env, n, m, 2000, eval_rng);
        CHECK(rate <= delta + slack);
    }
}

TEST_CASE("proxy scores take the worst interval endpoint") {
    SECTION("RA with an interval around the prediction") {
        std::vector<int> ranks(10, 1);
        ranks[0] = 3;
        const Predictions preds = Predictions::from_ranks(ranks);
        Envelope env;
        env.lower = {2.0};
        env.upper = {8.0};
        const std::vector<int> items = {0};
        const std::vector<int> rel_ranks = {1};
        const auto proxies = proxy_scores(env, preds, items, rel_ranks, 10);
        CHECK(proxies[0] == 5.0);  // max(|2-3|, |8-3|)
    }
    SECTION("degenerate interval is the single candidate score") {
        const Predictions preds = Predictions::from_ranks({4, 1, 2, 3, 5});
        Envelope env;
        env.lower = {2.0};
        env.upper = {2.0};
        const auto proxies = proxy_scores(env, preds, std::vector<int>{0}, std::vector<int>{1}, 5);
        CHECK(proxies[0] == 2.0);  // |2 - 4|
    }
    SECTION("VA interval spanning the item's own rank") {
        std::mt19937_64 rng(14);
        const Predictions preds = Predictions::from_values({0.1, 0.4, 0.9, 1.5}, rng);
        Envelope env;
        env.lower = {1.0};
        env.upper = {4.0};
        const auto proxies = proxy_scores(env, preds, std::vector<int>{1}, std::vector<int>{1}, 4);
        CHECK(proxies[0] == Catch::Approx(1.1).margin(1e-12));  // max(|0.4-0.1|, |0.4-1.5|)
    }
    SECTION("empty intersection falls back to the full range") {
        const Predictions preds = Predictions::from_ranks({5, 1, 2, 3, 4});
        Envelope env;
        env.lower = {7.2};
        env.upper = {7.8};  // rounds to an empty integer interval within [1,5]
        const auto proxies = proxy_scores(env, preds, std::vector<int>{0}, std::vector<int>{1}, 5);
        CHECK(proxies[0] == 4.0);  // max over r in [1,5] of |r - 5|
    }
}

TEST_CASE("tcpr threshold") {
    CHECK(tcpr_threshold({1, 2, 3, 4}, 0.5, 0.1).value == 3.0);  // k = ceil(5 * 0.6) = 3
    CHECK(tcpr_threshold({1, 2}, 0.2, 0.1).is_infinite());       // k = ceil(3 * 0.9) = 3 > 2
    CHECK(tcpr_threshold({2.5, 2.5, 2.5, 2.5, 2.5}, 0.4, 0.05).value == 2.5);
    CHECK_THROWS_AS(tcpr_threshold({1, 2, 3}, 0.1, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(tcpr_threshold({1, 2, 3}, 0.1, 0.2), std::invalid_argument);
}

TEST_CASE("oracle threshold") {
    std::vector<double> scores(10);
    for (int i = 0; i < 10; ++i) scores[i] = i;
    CHECK(oracle_threshold(scores, 0.1).value == 9.0);  // k = ceil(11 * 0.9) = 10
    CHECK(oracle_threshold({5.0}, 0.5).value == 5.0);   // k = ceil(2 * 0.5) = 1
}

TEST_CASE("perfect ranker makes oracle sets singletons under RA") {
    // All true scores zero -> threshold 0 -> RA sets are single ranks.
    const int total = 20;
    std::vector<int> ranks(total);
    for (int i = 0; i < total; ++i) ranks[i] = i + 1;
    const Predictions preds = Predictions::from_ranks(ranks);
    std::vector<double> true_scores(8, 0.0);
    const Threshold t = oracle_threshold(true_scores, 0.25);
    CHECK(t.value == 0.0);
    const RankInterval set = prediction_set(preds, 4, t, total);
    CHECK(set.width() == 1);
    CHECK(set.lo == 5);
}

TEST_CASE("dcr threshold never exceeds the tcpr threshold on a sampled trial") {
    std::mt19937_64 rng(15);
    std::normal_distribution<double> gauss;
    const int n = 30, m = 60, total = n + m;
    std::vector<double> values(total);
    for (double& v : values) v = gauss(rng);
    std::vector<double> noisy(total);
    for (int i = 0; i < total; ++i) noisy[i] = values[i] + 0.3 * gauss(rng);
    const Predictions preds = Predictions::from_values(noisy, rng);

    std::vector<int> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    std::vector<int> items, rel_ranks;
    for (int i = 0; i < total && static_cast<int>(items.size()) < n; i += 3) items.push_back(order[i]);
    // relative ranks of the chosen calibration items
    for (int item : items) {
        int rank = 0;
        for (int other : items)
            if (values[other] <= values[item]) ++rank;
        rel_ranks.push_back(rank);
    }
    const double alpha = 0.2, delta = 0.02;
    const Threshold dcr = dcr_threshold(preds, items, rel_ranks, n, m, alpha);
    std::mt19937_64 env_rng(16);
    const Envelope env = quantile_envelope(n, m, TcprConfig{delta, 4000}, env_rng);
    const Threshold tcpr = tcpr_threshold(proxy_scores(env, preds, items, rel_ranks, total), alpha, delta);
    if (!tcpr.is_infinite()) CHECK(dcr.value <= tcpr.value);
}
