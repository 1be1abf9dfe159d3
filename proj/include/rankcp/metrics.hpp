#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include "rankcp/core.hpp"
#include "rankcp/dcr.hpp"

namespace rankcp {

struct TrialResult {
    Method method = Method::DCR;
    std::uint64_t seed = 0;
    double coverage = 0.0;
    double fcp = 0.0;
    double mean_set_size = 0.0;
    double relative_length = 0.0;
    double threshold = 0.0;
};

// Scores one trial: FCP is the fraction of test items whose true absolute
// rank falls outside its interval; relative length is the mean set size
// normalized by N.
inline TrialResult score_trial(Method method, std::uint64_t seed,
                               const std::vector<RankInterval>& sets, const Population& pop,
                               const RankView& view, double threshold) {
    const auto test = pop.test_indices();
    if (sets.size() != test.size()) throw std::invalid_argument("one interval per test item required");
    const int m = static_cast<int>(test.size());
    int missed = 0;
    long long width_sum = 0;
    for (int j = 0; j < m; ++j) {
        if (!sets[j].contains(view.true_abs_ranks[test[j]])) ++missed;
        width_sum += sets[j].width();
    }
    TrialResult result;
    result.method = method;
    result.seed = seed;
    result.fcp = static_cast<double>(missed) / m;
    result.coverage = 1.0 - result.fcp;
    result.mean_set_size = static_cast<double>(width_sum) / m;
    result.relative_length = result.mean_set_size / pop.size();
    result.threshold = threshold;
    return result;
}

struct MethodStats {
    Method method = Method::DCR;
    int trials = 0;
    bool single_trial = false;
    double coverage_mean = 0.0, coverage_std = 0.0;
    double fcp_mean = 0.0, fcp_std = 0.0;
    double rel_length_mean = 0.0, rel_length_std = 0.0;
    double set_size_mean = 0.0, set_size_std = 0.0;
    double threshold_mean = 0.0, threshold_std = 0.0;  // over finite thresholds only
    int inf_threshold_count = 0;
};

struct AggregateReport {
    int trials = 0;
    std::vector<MethodStats> methods;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    const int count = static_cast<int>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= count;
    if (count < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (count - 1))};
}

}  // namespace detail

// Per-method sample mean and unbiased sample std. Trials are normalized to
// seed order first, so the result is independent of input permutation.
inline AggregateReport aggregate(std::vector<TrialResult> trials) {
    if (trials.empty()) throw std::invalid_argument("aggregate over empty trial set");
    std::vector<Method> order;
    for (const auto& t : trials) {
        if (std::find(order.begin(), order.end(), t.method) == order.end()) order.push_back(t.method);
    }
    std::stable_sort(trials.begin(), trials.end(),
                     [](const TrialResult& a, const TrialResult& b) { return a.seed < b.seed; });

    AggregateReport report;
    for (Method method : order) {
        std::vector<double> cov, fcp, rel, size, thr;
        int inf_count = 0;
        for (const auto& t : trials) {
            if (t.method != method) continue;
            cov.push_back(t.coverage);
            fcp.push_back(t.fcp);
            rel.push_back(t.relative_length);
            size.push_back(t.mean_set_size);
            if (std::isinf(t.threshold)) ++inf_count;
            else thr.push_back(t.threshold);
        }
        MethodStats stats;
        stats.method = method;
        stats.trials = static_cast<int>(cov.size());
        stats.single_trial = stats.trials == 1;
        std::tie(stats.coverage_mean, stats.coverage_std) = detail::mean_std(cov);
        std::tie(stats.fcp_mean, stats.fcp_std) = detail::mean_std(fcp);
        std::tie(stats.rel_length_mean, stats.rel_length_std) = detail::mean_std(rel);
        std::tie(stats.set_size_mean, stats.set_size_std) = detail::mean_std(size);
        stats.inf_threshold_count = inf_count;
        if (!thr.empty()) std::tie(stats.threshold_mean, stats.threshold_std) = detail::mean_std(thr);
        report.methods.push_back(stats);
        report.trials = std::max(report.trials, stats.trials);
    }
    return report;
}

}  // namespace rankcp
