#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <vector>

#include "idsbal/common.hpp"

// Per-column Gaussian mixture fitting and the mode-specific normalization used
// to put continuous columns into GAN space. Mode count selection runs scalar EM
// for each candidate count (k-means++ style seeding) and keeps the best BIC fit,
// then prunes negligible weights.
namespace idsbal::gmm {

constexpr double kStdFloor = 1e-4;
constexpr double kPruneWeight = 0.005;
constexpr int kMaxEmIters = 300;
constexpr double kLogLikTol = 1e-6;

struct Mode {
    double weight = 1.0;
    double mean = 0.0;
    double std = 1.0;
};

struct ColumnGMM {
    std::vector<Mode> modes;
    int max_modes = 10;
    int column_id = -1;
    std::vector<double> log_likelihood_history;  // of the selected fit
};

struct ModeNormalizedValue {
    double alpha = 0.0;  // clipped to [-1, 1]
    int mode = 0;
};

namespace detail {

inline double log_gauss(double x, double mu, double sd) {
    double z = (x - mu) / sd;
    return -0.5 * z * z - std::log(sd) - 0.918938533204672742;  // log sqrt(2 pi)
}

inline double log_sum_exp(const std::vector<double>& xs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : xs) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}

// k-means++ style seeding: first center uniform, then proportional to squared
// distance from the nearest chosen center.
inline std::vector<double> seed_means(const std::vector<double>& values, int k, Rng& rng) {
    std::vector<double> means;
    std::uniform_int_distribution<size_t> pick(0, values.size() - 1);
    means.push_back(values[pick(rng)]);
    std::vector<double> d2(values.size());
    while (static_cast<int>(means.size()) < k) {
        double total = 0;
        for (size_t i = 0; i < values.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (double m : means) best = std::min(best, (values[i] - m) * (values[i] - m));
            d2[i] = best;
            total += best;
        }
        if (total <= 0) break;  // fewer distinct values than requested centers
        std::uniform_real_distribution<double> u(0.0, total);
        double r = u(rng), acc = 0;
        size_t chosen = values.size() - 1;
        for (size_t i = 0; i < values.size(); ++i) {
            acc += d2[i];
            if (acc >= r) {
                chosen = i;
                break;
            }
        }
        means.push_back(values[chosen]);
    }
    return means;
}

struct EmFit {
    std::vector<Mode> modes;
    std::vector<double> ll_history;
    double final_ll = -std::numeric_limits<double>::infinity();
};

inline EmFit run_em(const std::vector<double>& values, int k, Rng& rng) {
    const size_t n = values.size();
    EmFit fit;
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    double sd = std::max(std::sqrt(var), kStdFloor);

    if (k == 1) {
        fit.modes = {{1.0, mean, sd}};
        double ll = 0;
        for (double v : values) ll += log_gauss(v, mean, sd);
        fit.ll_history = {ll};
        fit.final_ll = ll;
        return fit;
    }

    auto means = seed_means(values, k, rng);
    k = static_cast<int>(means.size());
    fit.modes.resize(k);
    for (int j = 0; j < k; ++j) fit.modes[j] = {1.0 / k, means[j], sd};

    std::vector<double> resp(n * k), lp(k);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < kMaxEmIters; ++iter) {
        double ll = 0;
        for (size_t i = 0; i < n; ++i) {
            for (int j = 0; j < k; ++j)
                lp[j] = std::log(std::max(fit.modes[j].weight, 1e-300)) +
                        log_gauss(values[i], fit.modes[j].mean, fit.modes[j].std);
            double lse = log_sum_exp(lp);
            ll += lse;
            for (int j = 0; j < k; ++j) resp[i * k + j] = std::exp(lp[j] - lse);
        }
        fit.ll_history.push_back(ll);
        fit.final_ll = ll;
        if (std::isfinite(prev_ll) && ll - prev_ll < kLogLikTol) break;
        prev_ll = ll;
        for (int j = 0; j < k; ++j) {
            double nk = 0, mu = 0;
            for (size_t i = 0; i < n; ++i) {
                nk += resp[i * k + j];
                mu += resp[i * k + j] * values[i];
            }
            if (nk < 1e-12) {
                fit.modes[j].weight = 0;
                continue;
            }
            mu /= nk;
            double v2 = 0;
            for (size_t i = 0; i < n; ++i)
                v2 += resp[i * k + j] * (values[i] - mu) * (values[i] - mu);
            v2 /= nk;
            fit.modes[j].weight = nk / static_cast<double>(n);
            fit.modes[j].mean = mu;
            fit.modes[j].std = std::max(std::sqrt(v2), kStdFloor);
        }
    }
    return fit;
}

}  // namespace detail

inline ColumnGMM fit_column_gmm(const std::vector<double>& values, int max_modes,
                                std::uint64_t seed) {
    if (values.empty()) throw DataError("cannot fit GMM on an empty column");
    if (max_modes < 1) throw ConfigError("max_modes must be >= 1");
    for (double v : values)
        if (!std::isfinite(v)) throw DataError("non-finite value in GMM column");

    std::set<double> distinct(values.begin(), values.end());
    int kmax = std::min<int>(max_modes, static_cast<int>(distinct.size()));

    ColumnGMM g;
    g.max_modes = max_modes;
    double best_bic = std::numeric_limits<double>::infinity();
    const double logn = std::log(static_cast<double>(values.size()));
    for (int k = 1; k <= kmax; ++k) {
        Rng rng(seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(k)));
        auto fit = detail::run_em(values, k, rng);
        double params = 3.0 * static_cast<double>(fit.modes.size()) - 1.0;
        double bic = -2.0 * fit.final_ll + params * logn;
        if (bic < best_bic) {
            best_bic = bic;
            g.modes = fit.modes;
            g.log_likelihood_history = fit.ll_history;
        }
    }

    // Prune negligible components and renormalize.
    std::vector<Mode> kept;
    for (const auto& m : g.modes)
        if (m.weight >= kPruneWeight) kept.push_back(m);
    if (kept.empty())
        kept.push_back(*std::max_element(
            g.modes.begin(), g.modes.end(),
            [](const Mode& a, const Mode& b) { return a.weight < b.weight; }));
    double wsum = 0;
    for (const auto& m : kept) wsum += m.weight;
    for (auto& m : kept) m.weight /= wsum;
    g.modes = std::move(kept);
    return g;
}

// Responsibilities proportional to weight x Gaussian density; computed in the
// log domain so far-tail values stay well defined.
inline std::vector<double> mode_probabilities(const ColumnGMM& g, double value) {
    std::vector<double> lp(g.modes.size());
    for (size_t j = 0; j < g.modes.size(); ++j)
        lp[j] = std::log(std::max(g.modes[j].weight, 1e-300)) +
                detail::log_gauss(value, g.modes[j].mean, g.modes[j].std);
    double lse = detail::log_sum_exp(lp);
    std::vector<double> p(g.modes.size());
    for (size_t j = 0; j < g.modes.size(); ++j) p[j] = std::exp(lp[j] - lse);
    return p;
}

inline ModeNormalizedValue normalize_value(const ColumnGMM& g, double value, Rng& rng) {
    auto p = mode_probabilities(g, value);
    std::discrete_distribution<int> pick(p.begin(), p.end());
    int k = pick(rng);
    double alpha = (value - g.modes[k].mean) / (4.0 * g.modes[k].std);
    return {std::clamp(alpha, -1.0, 1.0), k};
}

inline double denormalize_value(const ColumnGMM& g, const ModeNormalizedValue& mv) {
    if (mv.mode < 0 || mv.mode >= static_cast<int>(g.modes.size()))
        throw DataError("mode index out of range");
    return mv.alpha * 4.0 * g.modes[mv.mode].std + g.modes[mv.mode].mean;
}

}  // namespace idsbal::gmm
