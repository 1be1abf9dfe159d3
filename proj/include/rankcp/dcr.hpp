#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "rankcp/neghyper.hpp"
#include "rankcp/scores.hpp"

namespace rankcp {

enum class Method { DCR, MDCR, TCPR, Oracle };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::DCR: return "DCR";
        case Method::MDCR: return "MDCR";
        case Method::TCPR: return "TCPR";
        case Method::Oracle: return "Oracle";
    }
    return "?";
}

struct Threshold {
    double value = 0.0;
    double level = 0.0;
    Method method = Method::DCR;

    bool is_infinite() const { return std::isinf(value); }
};

// Discrete distribution of a calibration item's latent non-conformity score:
// support[k] = s(X_i, r + k) weighted by the rank distribution mass at k.
struct CalibScoreDistribution {
    std::vector<double> support;
    std::vector<double> masses;
};

inline CalibScoreDistribution calib_score_dist(const Predictions& preds, int item, int rel_rank,
                                               int n, int m, const LogFactorial* lf = nullptr) {
    if (rel_rank < 1 || rel_rank > n) throw std::invalid_argument("relative rank out of range");
    CalibScoreDistribution dist;
    dist.masses = nh_masses(n + m, m, rel_rank, lf);
    dist.support.resize(dist.masses.size());
    for (int k = 0; k <= m; ++k) dist.support[k] = preds.score(item, rel_rank + k);
    return dist;
}

inline std::vector<CalibScoreDistribution> calib_score_dists(const Predictions& preds,
                                                             std::span<const int> calib_items,
                                                             std::span<const int> rel_ranks,
                                                             int n, int m) {
    if (calib_items.size() != rel_ranks.size() || static_cast<int>(calib_items.size()) != n)
        throw std::invalid_argument("calibration item/rank size mismatch");
    const LogFactorial lf(n + m);
    std::vector<CalibScoreDistribution> dists;
    dists.reserve(n);
    for (int i = 0; i < n; ++i)
        dists.push_back(calib_score_dist(preds, calib_items[i], rel_ranks[i], n, m, &lf));
    return dists;
}

// Average of the n per-item score CDFs, stored as a merged step function:
// sorted distinct atoms with cumulative weights ending exactly at 1.
class MixtureCdf {
public:
    explicit MixtureCdf(const std::vector<CalibScoreDistribution>& dists) {
        if (dists.empty()) throw std::invalid_argument("mixture over empty distribution set");
        std::vector<std::pair<double, double>> pooled;
        std::size_t count = 0;
        for (const auto& d : dists) count += d.support.size();
        pooled.reserve(count);
        const double inv_n = 1.0 / static_cast<double>(dists.size());
        for (const auto& d : dists)
            for (std::size_t k = 0; k < d.support.size(); ++k)
                pooled.emplace_back(d.support[k], d.masses[k] * inv_n);
        std::sort(pooled.begin(), pooled.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        atoms_.reserve(pooled.size());
        cum_.reserve(pooled.size());
        long double acc = 0.0L;
        for (std::size_t i = 0; i < pooled.size(); ++i) {
            acc += pooled[i].second;
            if (!atoms_.empty() && pooled[i].first == atoms_.back()) {
                cum_.back() = static_cast<double>(acc);
            } else {
                atoms_.push_back(pooled[i].first);
                cum_.push_back(static_cast<double>(acc));
            }
        }
        const double total = cum_.back();
        for (double& c : cum_) c /= total;
        cum_.back() = 1.0;
    }

    // F_mix(t): cumulative weight at the largest atom <= t; 0 below all atoms.
    double eval(double t) const {
        const auto it = std::upper_bound(atoms_.begin(), atoms_.end(), t);
        if (it == atoms_.begin()) return 0.0;
        return cum_[static_cast<std::size_t>(it - atoms_.begin()) - 1];
    }

    // Smallest atom whose cumulative weight reaches `level` (tolerance keeps
    // exact rational levels such as 2/3 from being missed by rounding).
    double quantile(double level) const {
        const double target = level - 1e-12;
        const auto it = std::lower_bound(cum_.begin(), cum_.end(), target);
        const std::size_t idx = it == cum_.end() ? cum_.size() - 1
                                                 : static_cast<std::size_t>(it - cum_.begin());
        return atoms_[idx];
    }

    const std::vector<double>& atoms() const { return atoms_; }
    const std::vector<double>& cum() const { return cum_; }

private:
    std::vector<double> atoms_;
    std::vector<double> cum_;
};

inline MixtureCdf mixture_cdf(const std::vector<CalibScoreDistribution>& dists) {
    return MixtureCdf(dists);
}

// Smallest score with mixture mass at least ceil((n+1)(1-alpha))/(n+1).
// F_mix attains 1, so the threshold is always finite.
inline Threshold dcr_threshold(const MixtureCdf& fmix, int n, double alpha) {
    const int k = conformal_index(n, alpha);
    const double level = static_cast<double>(k) / static_cast<double>(n + 1);
    return Threshold{fmix.quantile(level), level, Method::DCR};
}

inline Threshold dcr_threshold(const Predictions& preds, std::span<const int> calib_items,
                               std::span<const int> rel_ranks, int n, int m, double alpha) {
    return dcr_threshold(MixtureCdf(calib_score_dists(preds, calib_items, rel_ranks, n, m)), n, alpha);
}

// k-th smallest of `scores`; +infinity when the index exceeds the sample
// (the conformal score set is implicitly augmented with {infinity}).
inline Threshold order_stat_threshold(std::vector<double> scores, int k, double level, Method method) {
    const int n = static_cast<int>(scores.size());
    if (k > n) return Threshold{std::numeric_limits<double>::infinity(), level, method};
    std::nth_element(scores.begin(), scores.begin() + (k - 1), scores.end());
    return Threshold{scores[k - 1], level, method};
}

// Monte-Carlo variant: one sampled rank realization per calibration item,
// then a plain conformal quantile of the sampled scores.
inline Threshold mdcr_threshold(const Predictions& preds, std::span<const int> calib_items,
                                std::span<const int> rel_ranks, int n, int m, double alpha,
                                std::mt19937_64& rng) {
    if (calib_items.size() != rel_ranks.size() || static_cast<int>(calib_items.size()) != n)
        throw std::invalid_argument("calibration item/rank size mismatch");
    std::vector<double> sampled(n);
    for (int i = 0; i < n; ++i) {
        const int draw = nh_sample_fast(n + m, m, rel_ranks[i], rng);
        sampled[i] = preds.score(calib_items[i], rel_ranks[i] + draw);
    }
    const int k = conformal_index(n, alpha);
    const double level = static_cast<double>(k) / static_cast<double>(n + 1);
    return order_stat_threshold(std::move(sampled), k, level, Method::MDCR);
}

struct RankInterval {
    int lo = 1;
    int hi = 0;

    bool empty() const { return hi < lo; }
    int width() const { return empty() ? 0 : hi - lo + 1; }
    bool contains(int r) const { return r >= lo && r <= hi; }
};

// {r in [1, N] : s(item, r) <= s*} as a contiguous interval; valid because the
// score profile is unimodal with its minimum at the predicted rank.
inline RankInterval prediction_set(const Predictions& preds, int item, const Threshold& threshold,
                                   int total) {
    if (threshold.is_infinite()) return RankInterval{1, total};
    const double cap = threshold.value;
    const int center = std::clamp(preds.predicted_abs_rank(item), 1, total);
    if (preds.score(item, center) > cap) return RankInterval{1, 0};

    int lo = center;
    {
        int a = 1, b = center;
        while (a < b) {
            const int mid = (a + b) / 2;
            if (preds.score(item, mid) <= cap) b = mid;
            else a = mid + 1;
        }
        lo = a;
    }
    int hi = center;
    {
        int a = center, b = total;
        while (a < b) {
            const int mid = (a + b + 1) / 2;
            if (preds.score(item, mid) <= cap) a = mid;
            else b = mid - 1;
        }
        hi = a;
    }

#ifndef NDEBUG
    for (int r = 1; r <= total; ++r) {
        const bool in = preds.score(item, r) <= cap;
        assert(in == (r >= lo && r <= hi) && "prediction set not contiguous");
    }
#endif
    return RankInterval{lo, hi};
}

}  // namespace rankcp
