#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "rankcp/dcr.hpp"

namespace rankcp {

enum class EnvelopeKind { Theoretical, Linear, Quantile };

inline const char* envelope_name(EnvelopeKind k) {
    switch (k) {
        case EnvelopeKind::Theoretical: return "theoretical";
        case EnvelopeKind::Linear: return "linear";
        case EnvelopeKind::Quantile: return "quantile";
    }
    return "?";
}

// Per-relative-rank bounds [lower[r-1], upper[r-1]] on the absolute rank,
// jointly valid over all calibration items with probability >= 1 - delta.
struct Envelope {
    std::vector<double> lower;
    std::vector<double> upper;
    EnvelopeKind kind = EnvelopeKind::Quantile;
    double delta = 0.0;
    double gamma = 0.0;  // quantile envelope only: the per-rank trim level used
};

struct TcprConfig {
    double delta = 0.05;
    int sim_count = 100000;
};

// One draw of the sorted absolute ranks of the n calibration items among
// n + m. Samples a uniform n-subset of [N] directly (Floyd), so the cost is
// independent of m; distributionally identical to ranking n + m uniforms.
inline std::vector<int> simulate_sorted_ranks(int n, int m, std::mt19937_64& rng) {
    if (n < 1 || m < 1) throw std::invalid_argument("need n >= 1 and m >= 1");
    const int total = n + m;
    std::unordered_set<int> chosen;
    chosen.reserve(static_cast<std::size_t>(n) * 2);
    for (int j = total - n + 1; j <= total; ++j) {
        const int t = std::uniform_int_distribution<int>(1, j)(rng);
        if (!chosen.insert(t).second) chosen.insert(j);
    }
    std::vector<int> out(chosen.begin(), chosen.end());
    std::sort(out.begin(), out.end());
    return out;
}

// Closed-form bound: R_r^± = r + (m+1)(r/n ± sqrt(log(4 sqrt(2) pi sqrt(tau/delta)) / tau)),
// tau = nm/(n+m). Bounds are kept real-valued; rounding to rank space happens
// in proxy_scores.
inline Envelope theoretical_envelope(int n, int m, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must be in (0, 1)");
    const double tau = static_cast<double>(n) * m / (n + m);
    const double inner = 4.0 * std::sqrt(2.0) * std::numbers::pi * std::sqrt(tau / delta);
    const double arg = std::log(inner) / tau;
    if (!(arg > 0.0)) throw std::invalid_argument("delta too large for (n,m)");
    const double half = std::sqrt(arg);
    Envelope env;
    env.kind = EnvelopeKind::Theoretical;
    env.delta = delta;
    env.lower.resize(n);
    env.upper.resize(n);
    for (int r = 1; r <= n; ++r) {
        const double center = r + (m + 1) * (static_cast<double>(r) / n);
        env.lower[r - 1] = center - (m + 1) * half;
        env.upper[r - 1] = center + (m + 1) * half;
    }
    return env;
}

// Simulation-calibrated width of the same linear form. The smallest feasible
// c is exact: per simulation, the minimal covering c is computed directly and
// c~ is the ceil(K(1-delta))-th order statistic, so no grid is involved.
inline Envelope linear_envelope(int n, int m, const TcprConfig& cfg, std::mt19937_64& rng) {
    if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) throw std::invalid_argument("delta must be in (0, 1)");
    if (cfg.sim_count < 1) throw std::invalid_argument("sim count must be positive");
    const int K = cfg.sim_count;
    const double scale = m + 1;
    std::vector<double> min_cover(K);
    for (int s = 0; s < K; ++s) {
        const std::vector<int> ranks = simulate_sorted_ranks(n, m, rng);
        double c = 0.0;
        for (int r = 1; r <= n; ++r) {
            const double center = r + scale * (static_cast<double>(r) / n);
            c = std::max(c, std::abs(ranks[r - 1] - center) / scale);
        }
        min_cover[s] = c;
    }
    const int idx = std::max(1, quantile_index(K - 1, 1.0 - cfg.delta));
    std::nth_element(min_cover.begin(), min_cover.begin() + (idx - 1), min_cover.end());
    const double c = min_cover[idx - 1];
    Envelope env;
    env.kind = EnvelopeKind::Linear;
    env.delta = cfg.delta;
    env.lower.resize(n);
    env.upper.resize(n);
    for (int r = 1; r <= n; ++r) {
        const double center = r + scale * (static_cast<double>(r) / n);
        env.lower[r - 1] = center - scale * c;
        env.upper[r - 1] = center + scale * c;
    }
    return env;
}

// Rank-wise empirical quantile bounds at trim level gamma = j/K, with the
// largest j whose joint violation count over the K simulations stays within
// K * delta. Achievable gammas are searched exactly through per-simulation
// feasibility caps, no grid.
inline Envelope quantile_envelope(int n, int m, const TcprConfig& cfg, std::mt19937_64& rng) {
    if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) throw std::invalid_argument("delta must be in (0, 1)");
    if (cfg.sim_count < 1) throw std::invalid_argument("sim count must be positive");
    const int K = cfg.sim_count;

    std::vector<std::int32_t> sims(static_cast<std::size_t>(K) * n);
    for (int s = 0; s < K; ++s) {
        const std::vector<int> ranks = simulate_sorted_ranks(n, m, rng);
        for (int r = 0; r < n; ++r) sims[static_cast<std::size_t>(s) * n + r] = ranks[r];
    }

    std::vector<std::vector<std::int32_t>> cols(n, std::vector<std::int32_t>(K));
    for (int s = 0; s < K; ++s)
        for (int r = 0; r < n; ++r) cols[r][s] = sims[static_cast<std::size_t>(s) * n + r];
    for (auto& col : cols) std::sort(col.begin(), col.end());

    // Largest trim j a simulation tolerates before falling outside its own
    // column quantiles: j <= count(col <= v) on the lower side and
    // j <= count(col >= v) - 1 on the upper side.
    const int j_max = (K - 1) / 2;
    std::vector<int> caps(K, j_max);
    for (int s = 0; s < K; ++s) {
        int cap = j_max;
        for (int r = 0; r < n; ++r) {
            const std::int32_t v = sims[static_cast<std::size_t>(s) * n + r];
            const auto& col = cols[r];
            const int cnt_le = static_cast<int>(std::upper_bound(col.begin(), col.end(), v) - col.begin());
            const int cnt_ge = K - static_cast<int>(std::lower_bound(col.begin(), col.end(), v) - col.begin());
            cap = std::min(cap, std::min(cnt_le, cnt_ge - 1));
            if (cap == 0) break;
        }
        caps[s] = cap;
    }

    const int allowed = static_cast<int>(std::floor(static_cast<double>(K) * cfg.delta + 1e-12));
    std::nth_element(caps.begin(), caps.begin() + allowed, caps.end());
    const int trim = std::clamp(caps[allowed], 0, j_max);

    Envelope env;
    env.kind = EnvelopeKind::Quantile;
    env.delta = cfg.delta;
    env.gamma = static_cast<double>(trim) / K;
    env.lower.resize(n);
    env.upper.resize(n);
    const int lo_idx = std::max(0, trim - 1);
    const int hi_idx = K - trim - 1;
    for (int r = 0; r < n; ++r) {
        env.lower[r] = cols[r][lo_idx];
        env.upper[r] = cols[r][hi_idx];
    }
    return env;
}

inline Envelope fit_envelope(EnvelopeKind kind, int n, int m, const TcprConfig& cfg,
                             std::mt19937_64& rng) {
    switch (kind) {
        case EnvelopeKind::Theoretical: return theoretical_envelope(n, m, cfg.delta);
        case EnvelopeKind::Linear: return linear_envelope(n, m, cfg, rng);
        case EnvelopeKind::Quantile: return quantile_envelope(n, m, cfg, rng);
    }
    throw std::invalid_argument("unknown envelope kind");
}

// Fraction of fresh simulated rank vectors with any entry outside the
// envelope; out-of-sample check of the joint 1 - delta guarantee.
inline double envelope_violation_rate(const Envelope& env, int n, int m, int sims,
                                      std::mt19937_64& rng) {
    if (static_cast<int>(env.lower.size()) != n) throw std::invalid_argument("envelope size mismatch");
    int violations = 0;
    for (int s = 0; s < sims; ++s) {
        const std::vector<int> ranks = simulate_sorted_ranks(n, m, rng);
        for (int r = 0; r < n; ++r) {
            if (ranks[r] < env.lower[r] || ranks[r] > env.upper[r]) {
                ++violations;
                break;
            }
        }
    }
    return static_cast<double>(violations) / sims;
}

// Worst-case score over the envelope's rank interval. Unimodality makes the
// maximum sit at an interval endpoint; an empty intersection with [1, N]
// falls back to the worst case over the full rank range.
inline std::vector<double> proxy_scores(const Envelope& env, const Predictions& preds,
                                        std::span<const int> calib_items,
                                        std::span<const int> rel_ranks, int total) {
    if (calib_items.size() != rel_ranks.size())
        throw std::invalid_argument("calibration item/rank size mismatch");
    std::vector<double> proxies(calib_items.size());
    for (std::size_t i = 0; i < calib_items.size(); ++i) {
        const int r = rel_ranks[i];
        if (r < 1 || r > static_cast<int>(env.lower.size()))
            throw std::invalid_argument("relative rank out of range");
        int lo = static_cast<int>(std::ceil(env.lower[r - 1]));
        int hi = static_cast<int>(std::floor(env.upper[r - 1]));
        lo = std::max(lo, 1);
        hi = std::min(hi, total);
        if (lo > hi) {
            lo = 1;
            hi = total;
        }
        proxies[i] = std::max(preds.score(calib_items[i], lo), preds.score(calib_items[i], hi));
    }
    return proxies;
}

// Conformal quantile of the proxy scores at the inflated level 1 - alpha + delta.
inline Threshold tcpr_threshold(std::vector<double> proxies, double alpha, double delta) {
    if (!(delta > 0.0 && delta < alpha)) throw std::invalid_argument("delta must satisfy 0 < delta < alpha");
    const int n = static_cast<int>(proxies.size());
    const int k = quantile_index(n, 1.0 - alpha + delta);
    const double level = static_cast<double>(k) / static_cast<double>(n + 1);
    Threshold t = order_stat_threshold(std::move(proxies), k, level, Method::TCPR);
    return t;
}

// Infeasible baseline: plain conformal quantile of the true-rank scores.
inline Threshold oracle_threshold(std::vector<double> true_scores, double alpha) {
    const int n = static_cast<int>(true_scores.size());
    const int k = conformal_index(n, alpha);
    const double level = static_cast<double>(k) / static_cast<double>(n + 1);
    return order_stat_threshold(std::move(true_scores), k, level, Method::Oracle);
}

}  // namespace rankcp
