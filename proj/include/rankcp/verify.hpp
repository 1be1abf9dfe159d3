#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rankcp/core.hpp"
#include "rankcp/neghyper.hpp"
#include "rankcp/rational.hpp"
#include "rankcp/scores.hpp"

namespace rankcp {

// Exhaustive small-instance oracles. Everything here runs in exact rational
// arithmetic and stays independent of the floating-point threshold machinery
// it is used to check.

struct ExactPmf {
    std::vector<Rational> probs;  // probs[k] for k = 0..m
};

namespace detail {

// Visits every size-n index subset of {0, ..., total-1} in lexicographic order.
template <typename Fn>
void for_each_subset(int total, int n, Fn&& fn) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    while (true) {
        fn(std::span<const int>(idx));
        int i = n - 1;
        while (i >= 0 && idx[i] == total - n + i) --i;
        if (i < 0) break;
        ++idx[i];
        for (int j = i + 1; j < n; ++j) idx[j] = idx[j - 1] + 1;
    }
}

}  // namespace detail

// Exact rank pmf by brute-force counting: all C(N, n) calibration-position
// subsets are equally likely; tally the position of the r-th calibration item.
inline ExactPmf enumerate_rank_pmf(int N, int n, int r) {
    if (N > 14) throw std::invalid_argument("enumeration too large");
    if (n < 1 || n >= N) throw std::invalid_argument("calibration count out of range");
    if (r < 1 || r > n) throw std::invalid_argument("relative rank out of range");
    const int m = N - n;
    std::vector<long long> counts(m + 1, 0);
    long long total = 0;
    detail::for_each_subset(N, n, [&](std::span<const int> positions) {
        // positions are 0-based and sorted; the r-th calibration item sits at
        // absolute rank positions[r-1] + 1, so k = that rank minus r.
        counts[positions[r - 1] + 1 - r] += 1;
        ++total;
    });
    ExactPmf pmf;
    pmf.probs.reserve(m + 1);
    for (int k = 0; k <= m; ++k) pmf.probs.emplace_back(counts[k], total);
    return pmf;
}

// Formula pmf as an exact rational (cross-checked against the enumeration).
inline Rational nh_pmf_exact(int N, int m, int r, int k) {
    const auto [num, den] = nh_pmf_fraction(N, m, r, k);
    return Rational(num, den);
}

enum class ExactMethod { DCR, Oracle };

namespace detail {

// ceil((n+1) * (1 - alpha)) computed exactly from the rational alpha.
inline long long exact_conformal_index(int n, const Rational& alpha) {
    const long long num = static_cast<long long>(n + 1) * (alpha.den() - alpha.num());
    const long long den = alpha.den();
    return (num + den - 1) / den;
}

// Rational-arithmetic mirror of the distribution-informed threshold for one
// fixed partition: pooled (score, mass) atoms with exact masses, exact
// cumulative comparison against k/(n+1).
inline double exact_dcr_threshold_impl(const Predictions& preds, std::span<const int> calib_items,
                                       std::span<const int> rel_ranks, int n, int m,
                                       const Rational& alpha) {
    std::vector<std::pair<double, Rational>> atoms;
    atoms.reserve(static_cast<std::size_t>(n) * (m + 1));
    for (int i = 0; i < n; ++i) {
        const int r = rel_ranks[i];
        for (int k = 0; k <= m; ++k)
            atoms.emplace_back(preds.score(calib_items[i], r + k), nh_pmf_exact(n + m, m, r, k));
    }
    std::sort(atoms.begin(), atoms.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    const long long k_idx = exact_conformal_index(n, alpha);
    // cum sums per-item masses, so compare against level * n = k_idx * n / (n+1).
    const Rational target = Rational(k_idx, n + 1) * Rational(n);
    Rational cum(0);
    double threshold = atoms.back().first;
    for (std::size_t i = 0; i < atoms.size();) {
        std::size_t j = i;
        while (j < atoms.size() && atoms[j].first == atoms[i].first) {
            cum += atoms[j].second;
            ++j;
        }
        if (cum >= target) {
            threshold = atoms[i].first;
            break;
        }
        i = j;
    }
    return threshold;
}

inline double exact_oracle_threshold_impl(std::vector<double> true_scores, int n,
                                          const Rational& alpha) {
    const long long k_idx = exact_conformal_index(n, alpha);
    if (k_idx > n) return std::numeric_limits<double>::infinity();
    std::nth_element(true_scores.begin(), true_scores.begin() + (k_idx - 1), true_scores.end());
    return true_scores[k_idx - 1];
}

}  // namespace detail

inline double exact_dcr_threshold(const Predictions& preds, std::span<const int> calib_items,
                                  std::span<const int> rel_ranks, int n, int m,
                                  const Rational& alpha) {
    return detail::exact_dcr_threshold_impl(preds, calib_items, rel_ranks, n, m, alpha);
}

// Exact marginal coverage under the uniform-partition model: enumerate all
// C(N, n) calibration/test splits of the fixed values, run the method end to
// end on each, and average the covered fraction of test items.
inline Rational exact_marginal_coverage(const std::vector<double>& values, const Predictions& preds,
                                        int n, ExactMethod method, const Rational& alpha) {
    const int N = static_cast<int>(values.size());
    if (N > 12) throw std::invalid_argument("enumeration too large");
    if (n < 1 || n >= N) throw std::invalid_argument("calibration count out of range");
    if (preds.size() != N) throw std::invalid_argument("prediction/value size mismatch");
    if (has_ties(values)) throw std::invalid_argument("values have ties; call jitter_ties first");
    const int m = N - n;

    std::vector<int> abs_rank(N);
    for (int i = 0; i < N; ++i) abs_rank[i] = compute_rank(values[i], values);

    long long covered_total = 0;
    long long partitions = 0;
    detail::for_each_subset(N, n, [&](std::span<const int> calib) {
        std::vector<int> rel_ranks(n);
        for (int i = 0; i < n; ++i) {
            int rank = 0;
            for (int j = 0; j < n; ++j)
                if (values[calib[j]] <= values[calib[i]]) ++rank;
            rel_ranks[i] = rank;
        }

        double threshold;
        if (method == ExactMethod::DCR) {
            threshold = detail::exact_dcr_threshold_impl(preds, calib, rel_ranks, n, m, alpha);
        } else {
            std::vector<double> true_scores(n);
            for (int i = 0; i < n; ++i)
                true_scores[i] = preds.score(calib[i], abs_rank[calib[i]]);
            threshold = detail::exact_oracle_threshold_impl(std::move(true_scores), n, alpha);
        }

        std::vector<bool> is_calib(N, false);
        for (int i : calib) is_calib[i] = true;
        for (int j = 0; j < N; ++j) {
            if (is_calib[j]) continue;
            if (std::isinf(threshold) || preds.score(j, abs_rank[j]) <= threshold) ++covered_total;
        }
        ++partitions;
    });
    return Rational(covered_total, partitions * m);
}

}  // namespace rankcp
