#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "rankcp/scores.hpp"

namespace rankcp {

enum class LinkKind { Linear, Logistic };

// Synthetic latent model. `weights` empty means: Linear draws a fresh unit
// vector from the stream, Logistic uses the all-ones vector. noise_sigma is a
// standard deviation.
struct SyntheticConfig {
    int dim = 20;
    double noise_sigma = 0.2;
    LinkKind link = LinkKind::Linear;
    std::vector<double> weights;
};

struct Dataset {
    int dim = 0;
    std::vector<double> x;  // row-major, count() * dim
    std::vector<double> y;

    int count() const { return static_cast<int>(y.size()); }
    std::span<const double> row(int i) const {
        return {x.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }
};

namespace detail {

inline std::vector<double> resolve_weights(const SyntheticConfig& cfg, std::mt19937_64& rng) {
    if (!cfg.weights.empty()) {
        if (static_cast<int>(cfg.weights.size()) != cfg.dim)
            throw std::invalid_argument("weight vector dimension mismatch");
        if (cfg.link == LinkKind::Linear) {
            double norm2 = 0.0;
            for (double w : cfg.weights) norm2 += w * w;
            if (std::abs(std::sqrt(norm2) - 1.0) > 1e-9)
                throw std::invalid_argument("linear weights must be a unit vector");
        }
        return cfg.weights;
    }
    if (cfg.link == LinkKind::Logistic) return std::vector<double>(cfg.dim, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> w(cfg.dim);
    double norm2 = 0.0;
    for (double& wi : w) {
        wi = gauss(rng);
        norm2 += wi * wi;
    }
    const double norm = std::sqrt(norm2);
    for (double& wi : w) wi /= norm;
    return w;
}

}  // namespace detail

// y_i = x_i' w + eps, x ~ N(0, I_d), eps ~ N(0, sigma^2), unit-norm w.
inline Dataset gen_linear(const SyntheticConfig& cfg, int count, std::mt19937_64& rng) {
    if (cfg.link != LinkKind::Linear) throw std::invalid_argument("config link is not linear");
    if (cfg.dim < 1 || count < 1) throw std::invalid_argument("invalid generator sizes");
    const std::vector<double> w = detail::resolve_weights(cfg, rng);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Dataset ds;
    ds.dim = cfg.dim;
    ds.x.resize(static_cast<std::size_t>(count) * cfg.dim);
    ds.y.resize(count);
    for (int i = 0; i < count; ++i) {
        double dot = 0.0;
        for (int j = 0; j < cfg.dim; ++j) {
            const double xij = gauss(rng);
            ds.x[static_cast<std::size_t>(i) * cfg.dim + j] = xij;
            dot += xij * w[j];
        }
        ds.y[i] = dot + (cfg.noise_sigma > 0.0 ? cfg.noise_sigma * gauss(rng) : 0.0);
    }
    return ds;
}

// y_i = sigmoid(w' x_i) + eps, x ~ N(0, I_d), eps ~ N(0, sigma^2).
inline Dataset gen_logistic(const SyntheticConfig& cfg, int count, std::mt19937_64& rng) {
    if (cfg.link != LinkKind::Logistic) throw std::invalid_argument("config link is not logistic");
    if (cfg.dim < 1 || count < 1) throw std::invalid_argument("invalid generator sizes");
    const std::vector<double> w = detail::resolve_weights(cfg, rng);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Dataset ds;
    ds.dim = cfg.dim;
    ds.x.resize(static_cast<std::size_t>(count) * cfg.dim);
    ds.y.resize(count);
    for (int i = 0; i < count; ++i) {
        double dot = 0.0;
        for (int j = 0; j < cfg.dim; ++j) {
            const double xij = gauss(rng);
            ds.x[static_cast<std::size_t>(i) * cfg.dim + j] = xij;
            dot += xij * w[j];
        }
        const double link = 1.0 / (1.0 + std::exp(-dot));
        ds.y[i] = link + (cfg.noise_sigma > 0.0 ? cfg.noise_sigma * gauss(rng) : 0.0);
    }
    return ds;
}

inline Dataset generate(const SyntheticConfig& cfg, int count, std::mt19937_64& rng) {
    return cfg.link == LinkKind::Linear ? gen_linear(cfg, count, rng) : gen_logistic(cfg, count, rng);
}

// Black-box ranker stand-in: perturbs the true values with Gaussian noise of
// the given precision, then emits VA predictions (or the RA ranks derived
// from them).
inline Predictions noisy_value_ranker(const std::vector<double>& y, double model_sigma,
                                      std::mt19937_64& rng, PredKind kind = PredKind::VA) {
    if (model_sigma < 0.0) throw std::invalid_argument("model sigma must be nonnegative");
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> predicted(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        predicted[i] = y[i] + (model_sigma > 0.0 ? model_sigma * gauss(rng) : 0.0);
    Predictions va = Predictions::from_values(std::move(predicted), rng);
    if (kind == PredKind::VA) return va;
    std::vector<int> ranks(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) ranks[i] = va.predicted_abs_rank(static_cast<int>(i));
    return Predictions::from_ranks(std::move(ranks));
}

struct LinearRanker {
    std::vector<double> weights;
    double ridge_used = 0.0;

    double predict(std::span<const double> x) const {
        double dot = 0.0;
        for (std::size_t j = 0; j < weights.size(); ++j) dot += weights[j] * x[j];
        return dot;
    }
};

// Ridge-regularized least squares via normal equations; the regularizer is
// trace-scaled so a tiny `ridge` reproduces the unregularized solution on
// well-conditioned data while guaranteeing solvability.
inline LinearRanker train_linear_ranker(const Dataset& train, double ridge = 1e-8) {
    const int d = train.dim;
    const int rows = train.count();
    if (rows < 1) throw std::invalid_argument("empty training set");
    if (rows < d) throw std::invalid_argument("training set smaller than feature dimension");

    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < rows; ++i) {
        Eigen::Map<const Eigen::VectorXd> xi(train.x.data() + static_cast<std::size_t>(i) * d, d);
        xtx.noalias() += xi * xi.transpose();
        xty.noalias() += xi * train.y[i];
    }
    const double lambda = ridge * xtx.trace() / d;
    xtx.diagonal().array() += lambda;

    Eigen::LDLT<Eigen::MatrixXd> solver(xtx);
    if (solver.info() != Eigen::Success) throw std::runtime_error("normal equations not solvable");
    Eigen::VectorXd w = solver.solve(xty);
    if (!w.allFinite()) throw std::runtime_error("normal equations not solvable");

    LinearRanker ranker;
    ranker.ridge_used = lambda;
    ranker.weights.assign(w.data(), w.data() + d);
    return ranker;
}

inline std::vector<double> predict_values(const LinearRanker& ranker, const Dataset& ds, int begin,
                                          int end) {
    std::vector<double> out;
    out.reserve(end - begin);
    for (int i = begin; i < end; ++i) out.push_back(ranker.predict(ds.row(i)));
    return out;
}

}  // namespace rankcp
