#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "rankcp/core.hpp"

namespace rankcp {

// RA: the model emits absolute ranks directly, scores are rank residuals.
// VA: the model emits real values, scores are value-space residuals against
// the candidate rank's sorted entry.
enum class PredKind { RA, VA };

inline const char* pred_kind_name(PredKind k) { return k == PredKind::RA ? "RA" : "VA"; }

class Predictions {
public:
    // Rank-output model. Out-of-range ranks are clamped into [1, N] at
    // ingestion and counted for the trial log.
    static Predictions from_ranks(std::vector<int> ranks) {
        Predictions p;
        p.kind_ = PredKind::RA;
        const int total = static_cast<int>(ranks.size());
        if (total == 0) throw std::invalid_argument("empty predictions");
        p.clamped_ = 0;
        for (int& r : ranks) {
            const int c = std::clamp(r, 1, total);
            if (c != r) ++p.clamped_;
            r = c;
        }
        p.pred_ranks_ = std::move(ranks);
        return p;
    }

    // Value-output model. Tied values are jittered tie-free first (R^{-1}
    // needs a tie-free multiset).
    static Predictions from_values(std::vector<double> values, std::mt19937_64& rng,
                                   double jitter_epsilon = 1e-9) {
        if (values.empty()) throw std::invalid_argument("empty predictions");
        Predictions p;
        p.kind_ = PredKind::VA;
        if (has_ties(values)) values = jitter_ties(values, jitter_epsilon, rng);
        p.va_values_ = std::move(values);
        const int total = static_cast<int>(p.va_values_.size());
        p.va_sorted_ = p.va_values_;
        std::sort(p.va_sorted_.begin(), p.va_sorted_.end());
        std::vector<int> order(total);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return p.va_values_[a] < p.va_values_[b]; });
        p.pred_ranks_.assign(total, 0);
        for (int pos = 0; pos < total; ++pos) p.pred_ranks_[order[pos]] = pos + 1;
        return p;
    }

    PredKind kind() const { return kind_; }
    int size() const { return static_cast<int>(pred_ranks_.size()); }
    int clamped_count() const { return clamped_; }

    int predicted_abs_rank(int item) const { return pred_ranks_[item]; }

    double value(int item) const { return va_values_[item]; }
    const std::vector<double>& sorted_values() const { return va_sorted_; }

    // Non-conformity of placing `item` at candidate rank r, r in [1, N].
    double score(int item, int r) const {
        if (r < 1 || r > size()) throw std::invalid_argument("rank out of range");
        if (kind_ == PredKind::RA) return std::abs(r - pred_ranks_[item]);
        return std::abs(va_values_[item] - va_sorted_[r - 1]);
    }

    // All candidate-rank scores for one item; unimodal in r for both kinds.
    std::vector<double> score_profile(int item) const {
        std::vector<double> profile(size());
        for (int r = 1; r <= size(); ++r) profile[r - 1] = score(item, r);
        return profile;
    }

private:
    Predictions() = default;

    PredKind kind_ = PredKind::RA;
    std::vector<int> pred_ranks_;
    std::vector<double> va_values_;
    std::vector<double> va_sorted_;
    int clamped_ = 0;
};

}  // namespace rankcp
