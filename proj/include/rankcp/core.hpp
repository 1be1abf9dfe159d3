#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace rankcp {

// ---------------------------------------------------------------------------
// Seeding
//
// Every random stream is keyed by (base_seed, trial, purpose) through a
// splitmix64 chain, so streams stay independent and reproducible no matter
// how trials are scheduled across workers.
// ---------------------------------------------------------------------------

enum class SeedPurpose : std::uint64_t {
    Population = 1,
    SplitAssign = 2,
    Ranker = 3,
    Jitter = 4,
    MdcrSampling = 5,
    EnvelopeFit = 6,
    EnvelopeEval = 7,
};

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t trial, SeedPurpose purpose) {
    std::uint64_t h = mix64(base);
    h = mix64(h ^ trial);
    h = mix64(h ^ static_cast<std::uint64_t>(purpose));
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t base, std::uint64_t trial, SeedPurpose purpose) {
    return std::mt19937_64(derive_seed(base, trial, purpose));
}

// k-th order-statistic index for a conformal quantile at the given level:
// k = ceil((n+1) * level). The epsilon guard keeps exact integer boundaries
// (e.g. level = 0.9, n = 9) from rounding up one slot.
inline int quantile_index(int n, double level) {
    long double x = static_cast<long double>(n + 1) * static_cast<long double>(level);
    int k = static_cast<int>(std::ceil(x - 1e-9L));
    return std::max(k, 1);
}

inline int conformal_index(int n, double alpha) { return quantile_index(n, 1.0 - alpha); }

// ---------------------------------------------------------------------------
// Population model
// ---------------------------------------------------------------------------

enum class Split : std::uint8_t { Calibration, Test };

inline bool has_ties(std::span<const double> values) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

// The n+m ground-truth item values with their calibration/test assignment.
// Values must be tie-free (jitter first) and both sides non-empty.
class Population {
public:
    Population(std::vector<double> values, std::vector<Split> assignment)
        : values_(std::move(values)), assignment_(std::move(assignment)) {
        if (values_.size() != assignment_.size())
            throw std::invalid_argument("population values/assignment size mismatch");
        n_ = static_cast<int>(std::count(assignment_.begin(), assignment_.end(), Split::Calibration));
        m_ = static_cast<int>(values_.size()) - n_;
        if (n_ < 1 || m_ < 1)
            throw std::invalid_argument("population needs at least one calibration and one test item");
        if (has_ties(values_))
            throw std::invalid_argument("population has tied values; call jitter_ties first");
    }

    const std::vector<double>& values() const { return values_; }
    const std::vector<Split>& assignment() const { return assignment_; }
    int n() const { return n_; }
    int m() const { return m_; }
    int size() const { return static_cast<int>(values_.size()); }

    std::vector<int> calib_indices() const { return indices_of(Split::Calibration); }
    std::vector<int> test_indices() const { return indices_of(Split::Test); }

private:
    std::vector<int> indices_of(Split s) const {
        std::vector<int> out;
        for (int i = 0; i < size(); ++i)
            if (assignment_[i] == s) out.push_back(i);
        return out;
    }

    std::vector<double> values_;
    std::vector<Split> assignment_;
    int n_ = 0;
    int m_ = 0;
};

// Observed relative ranks plus the harness-only ground truth. true_abs_ranks
// (and all test values) must never reach a method under evaluation; only the
// scoring side of the harness reads them.
struct RankView {
    std::vector<int> rel_calib_ranks;  // calibration items in population order, values in [1, n]
    std::vector<int> true_abs_ranks;   // per item, values in [1, N]; harness-only
};

// ---------------------------------------------------------------------------
// Rank operators
// ---------------------------------------------------------------------------

// Number of elements z with y >= z. Range [0, |values|].
inline int compute_rank(double y, std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("empty rank domain");
    int count = 0;
    for (double z : values)
        if (y >= z) ++count;
    return count;
}

// The r-th smallest element of a tie-free multiset, r in [1, |values|].
inline double inverse_rank(int r, std::span<const double> values) {
    if (r < 1 || r > static_cast<int>(values.size()))
        throw std::invalid_argument("rank out of range");
    std::vector<double> sorted(values.begin(), values.end());
    std::nth_element(sorted.begin(), sorted.begin() + (r - 1), sorted.end());
    return sorted[r - 1];
}

enum class JitterForm { OneSided, Symmetric };

// Breaks ties by adding noise on (0, epsilon) or (-epsilon, epsilon). Order of
// values separated by more than the perturbation range is preserved.
inline std::vector<double> jitter_ties(const std::vector<double>& values, double epsilon,
                                       std::mt19937_64& rng, JitterForm form = JitterForm::Symmetric) {
    if (epsilon <= 0) throw std::invalid_argument("jitter epsilon must be positive");
    std::uniform_real_distribution<double> noise =
        form == JitterForm::OneSided ? std::uniform_real_distribution<double>(0.0, epsilon)
                                     : std::uniform_real_distribution<double>(-epsilon, epsilon);
    std::vector<double> out(values.size());
    for (int attempt = 0; attempt < 64; ++attempt) {
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] + noise(rng);
        if (!has_ties(out)) return out;
    }
    throw std::runtime_error("jitter failed to break ties");
}

// Uniformly random size-n calibration subset; realizes exchangeability of the
// calibration/test partition.
inline Population split_population(std::vector<double> values, int n, std::mt19937_64& rng) {
    const int total = static_cast<int>(values.size());
    if (n < 1 || n >= total) throw std::invalid_argument("calibration count out of range");
    std::vector<int> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<int> chosen;
    chosen.reserve(n);
    std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), n, rng);
    std::vector<Split> assignment(total, Split::Test);
    for (int i : chosen) assignment[i] = Split::Calibration;
    return Population(std::move(values), std::move(assignment));
}

inline RankView rank_view(const Population& pop) {
    const auto& values = pop.values();
    const int total = pop.size();

    std::vector<int> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });

    RankView view;
    view.true_abs_ranks.assign(total, 0);
    for (int pos = 0; pos < total; ++pos) view.true_abs_ranks[order[pos]] = pos + 1;

    const auto calib = pop.calib_indices();
    std::vector<int> calib_order(calib.size());
    std::iota(calib_order.begin(), calib_order.end(), 0);
    std::sort(calib_order.begin(), calib_order.end(),
              [&](int a, int b) { return values[calib[a]] < values[calib[b]]; });
    view.rel_calib_ranks.assign(calib.size(), 0);
    for (int pos = 0; pos < static_cast<int>(calib.size()); ++pos)
        view.rel_calib_ranks[calib_order[pos]] = pos + 1;

    for (std::size_t i = 0; i < calib.size(); ++i) {
        const int rc = view.rel_calib_ranks[i];
        const int ra = view.true_abs_ranks[calib[i]];
        if (ra < rc || ra > rc + pop.m())
            throw std::logic_error("rank view invariant violated");
    }
    return view;
}

}  // namespace rankcp
