#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace rankcp {

// Shared log-factorial table; one instance per population size serves every
// per-item distribution in a trial.
class LogFactorial {
public:
    explicit LogFactorial(int max_n) : table_(static_cast<std::size_t>(max_n) + 1, 0.0) {
        for (int i = 2; i <= max_n; ++i) table_[i] = table_[i - 1] + std::log(static_cast<double>(i));
    }

    double operator()(int k) const { return table_[k]; }

    double log_binom(int a, int b) const {
        if (b < 0 || b > a) return -std::numeric_limits<double>::infinity();
        return table_[a] - table_[b] - table_[a - b];
    }

private:
    std::vector<double> table_;
};

namespace detail {

// Exact binomial coefficient; callers keep arguments small enough for the
// multiplicative form to stay within 128 bits (a <= 64 in this codebase).
inline unsigned __int128 binom_u128(int a, int b) {
    if (b < 0 || b > a) return 0;
    if (b > a - b) b = a - b;
    unsigned __int128 r = 1;
    for (int i = 1; i <= b; ++i) {
        r = r * static_cast<unsigned>(a - b + i) / static_cast<unsigned>(i);
    }
    return r;
}

constexpr int kExactBinomialLimit = 64;

}  // namespace detail

// Mass vector over k = 0..m of the count of test items ranked below a
// calibration item with the given relative rank: C(r+k-1,k) C(N-r-k,m-k) / C(N,m).
// Exact integer binomials up to total = 64, log-gamma beyond; normalized so the
// masses sum to exactly 1.
inline std::vector<double> nh_masses(int total, int test_count, int rel_rank,
                                     const LogFactorial* lf = nullptr) {
    const int n = total - test_count;
    if (test_count < 0 || n < 1) throw std::invalid_argument("invalid population sizes");
    if (rel_rank < 1 || rel_rank > n) throw std::invalid_argument("relative rank out of range");

    const int m = test_count;
    const int r = rel_rank;
    std::vector<double> masses(static_cast<std::size_t>(m) + 1, 0.0);
    if (m == 0) {
        masses[0] = 1.0;
        return masses;
    }

    if (total <= detail::kExactBinomialLimit) {
        const long double den = static_cast<long double>(detail::binom_u128(total, m));
        for (int k = 0; k <= m; ++k) {
            const unsigned __int128 a = detail::binom_u128(r + k - 1, k);
            const unsigned __int128 b = detail::binom_u128(total - r - k, m - k);
            masses[k] = static_cast<double>(static_cast<long double>(a * b) / den);
        }
    } else {
        const LogFactorial fallback = lf ? LogFactorial(0) : LogFactorial(total);
        const LogFactorial& table = lf ? *lf : fallback;
        const double log_den = table.log_binom(total, m);
        for (int k = 0; k <= m; ++k) {
            const double log_num = table.log_binom(r + k - 1, k) + table.log_binom(total - r - k, m - k);
            masses[k] = std::isinf(log_num) ? 0.0 : std::exp(log_num - log_den);
        }
    }

    long double sum = 0.0L;
    for (double v : masses) sum += v;
    for (double& v : masses) v = static_cast<double>(v / sum);
    return masses;
}

// Exact pmf as a reduced fraction (requires total <= 64).
inline std::pair<long long, long long> nh_pmf_fraction(int total, int test_count, int rel_rank, int k) {
    if (total > detail::kExactBinomialLimit)
        throw std::invalid_argument("exact fraction limited to total <= 64");
    if (k < 0 || k > test_count) throw std::invalid_argument("k outside support");
    unsigned __int128 num = detail::binom_u128(rel_rank + k - 1, k) *
                            detail::binom_u128(total - rel_rank - k, test_count - k);
    unsigned __int128 den = detail::binom_u128(total, test_count);
    unsigned __int128 a = num, b = den;
    while (b != 0) {
        unsigned __int128 t = a % b;
        a = b;
        b = t;
    }
    if (a > 1) {
        num /= a;
        den /= a;
    }
    return {static_cast<long long>(num), static_cast<long long>(den)};
}

// Exact distribution of the unobserved test-rank component k = R^t of a
// calibration item, conditional on its relative rank r: support {0, ..., m}.
// Immutable after construction; sampling uses an external stream.
class NegHypergeom {
public:
    NegHypergeom(int total, int test_count, int rel_rank, const LogFactorial* lf = nullptr)
        : total_(total), test_count_(test_count), rel_rank_(rel_rank),
          pmf_(nh_masses(total, test_count, rel_rank, lf)) {
        cdf_.resize(pmf_.size());
        long double acc = 0.0L;
        for (std::size_t i = 0; i < pmf_.size(); ++i) {
            acc += pmf_[i];
            cdf_[i] = static_cast<double>(acc);
        }
        cdf_.back() = 1.0;
    }

    int total() const { return total_; }
    int test_count() const { return test_count_; }
    int rel_rank() const { return rel_rank_; }

    double pmf(int k) const {
        if (k < 0 || k > test_count_) throw std::invalid_argument("k outside support");
        return pmf_[k];
    }

    double cdf(int k) const {
        if (k < 0) return 0.0;
        if (k >= test_count_) return 1.0;
        return cdf_[k];
    }

    // Inverse-CDF lookup over the precomputed table.
    int sample(std::mt19937_64& rng) const {
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        return static_cast<int>(it == cdf_.end() ? test_count_ : it - cdf_.begin());
    }

    // Distribution of the absolute rank r + k, supported on {r, ..., r + m}.
    struct Shifted {
        int min_rank;
        std::vector<double> masses;
    };
    Shifted absolute_rank_dist() const { return {rel_rank_, pmf_}; }

    const std::vector<double>& masses() const { return pmf_; }

private:
    int total_;
    int test_count_;
    int rel_rank_;
    std::vector<double> pmf_;
    std::vector<double> cdf_;
};

// O(1)-expected sampler through the beta-binomial representation:
// k | p ~ Binomial(m, p) with p ~ Beta(r, n+1-r) has exactly the mass
// function above. Used where building the full table per draw would dominate.
inline int nh_sample_fast(int total, int test_count, int rel_rank, std::mt19937_64& rng) {
    const int n = total - test_count;
    if (test_count < 0 || n < 1) throw std::invalid_argument("invalid population sizes");
    if (rel_rank < 1 || rel_rank > n) throw std::invalid_argument("relative rank out of range");
    if (test_count == 0) return 0;
    std::gamma_distribution<double> ga(static_cast<double>(rel_rank), 1.0);
    std::gamma_distribution<double> gb(static_cast<double>(n + 1 - rel_rank), 1.0);
    const double a = ga(rng);
    const double b = gb(rng);
    const double p = a / (a + b);
    return std::binomial_distribution<int>(test_count, p)(rng);
}

}  // namespace rankcp
