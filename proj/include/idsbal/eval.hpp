#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "idsbal/common.hpp"

namespace idsbal::eval {

// Rows are true classes, columns predicted.
struct ConfusionMatrix {
    int n_classes = 0;
    std::vector<std::int64_t> cells;  // n x n

    std::int64_t& at(int t, int p) { return cells[static_cast<size_t>(t * n_classes + p)]; }
    std::int64_t at(int t, int p) const { return cells[static_cast<size_t>(t * n_classes + p)]; }
    std::int64_t total() const {
        std::int64_t s = 0;
        for (auto c : cells) s += c;
        return s;
    }
};

inline ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted,
                                 int n_classes) {
    if (truth.size() != predicted.size())
        throw DataError("label lists have different lengths");
    ConfusionMatrix m;
    m.n_classes = n_classes;
    m.cells.assign(static_cast<size_t>(n_classes) * n_classes, 0);
    for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes)
            throw DataError("label out of range in confusion()");
        ++m.at(truth[i], predicted[i]);
    }
    return m;
}

struct ClassMetrics {
    double precision = 0, recall = 0, f1 = 0;
    std::int64_t support = 0;
    bool degenerate = false;  // a zero-denominator metric was defined as 0
};

struct MetricReport {
    double accuracy = 0;  // trace / total
    double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
    std::vector<ClassMetrics> per_class;
};

// Per-class one-vs-rest metrics with support-weighted averages. Zero-denominator
// per-class values are defined as 0 and flagged.
inline MetricReport weighted_metrics(const ConfusionMatrix& m) {
    std::int64_t total = m.total();
    if (m.n_classes == 0 || total == 0) throw DataError("empty confusion matrix");
    MetricReport r;
    r.per_class.resize(static_cast<size_t>(m.n_classes));
    std::int64_t trace = 0;
    for (int c = 0; c < m.n_classes; ++c) {
        std::int64_t tp = m.at(c, c);
        trace += tp;
        std::int64_t fp = 0, fn = 0;
        for (int o = 0; o < m.n_classes; ++o) {
            if (o == c) continue;
            fp += m.at(o, c);
            fn += m.at(c, o);
        }
        auto& cm = r.per_class[static_cast<size_t>(c)];
        cm.support = tp + fn;
        if (tp + fp > 0)
            cm.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        else
            cm.degenerate = true;
        if (tp + fn > 0)
            cm.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        else
            cm.degenerate = true;
        if (cm.precision + cm.recall > 0)
            cm.f1 = 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall);
        else
            cm.degenerate = true;
        double w = static_cast<double>(cm.support) / static_cast<double>(total);
        r.weighted_precision += w * cm.precision;
        r.weighted_recall += w * cm.recall;
        r.weighted_f1 += w * cm.f1;
    }
    r.accuracy = static_cast<double>(trace) / static_cast<double>(total);
    return r;
}

namespace detail {

// Regularized incomplete beta via the Lentz continued fraction.
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16, kFpMin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

inline double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double lnbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - lnbeta);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

struct TTestResult {
    double t = 0;
    double df = 0;
    double p = 1;  // two-sided
};

// Welch's unequal-variance t-test; p from the Student-t distribution with
// Welch-Satterthwaite degrees of freedom via the regularized incomplete beta.
inline TTestResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw DataError("welch_ttest needs >= 2 samples per side");
    auto stats = [](const std::vector<double>& xs) {
        double m = 0;
        for (double x : xs) {
            if (!std::isfinite(x)) throw DataError("non-finite sample in welch_ttest");
            m += x;
        }
        m /= static_cast<double>(xs.size());
        double v = 0;
        for (double x : xs) v += (x - m) * (x - m);
        v /= static_cast<double>(xs.size() - 1);
        return std::pair<double, double>{m, v};
    };
    auto [ma, va] = stats(a);
    auto [mb, vb] = stats(b);
    double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double sa = va / na, sb = vb / nb;
    TTestResult r;
    if (sa + sb == 0.0) {
        r.t = ma == mb ? 0.0 : (ma > mb ? 1e308 : -1e308);
        r.df = na + nb - 2;
        r.p = ma == mb ? 1.0 : 0.0;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(sa + sb);
    r.df = (sa + sb) * (sa + sb) /
           (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    double x = r.df / (r.df + r.t * r.t);
    r.p = detail::reg_inc_beta(r.df / 2.0, 0.5, x);
    if (r.p > 1.0) r.p = 1.0;
    return r;
}

// Welch test over two per-sample 0/1 correctness vectors evaluated on the same
// test set.
inline double compare_experiments(const std::vector<double>& correct_a,
                                  const std::vector<double>& correct_b) {
    if (correct_a.size() != correct_b.size())
        throw DataError("correctness vectors have different lengths");
    for (double v : correct_a)
        if (v != 0.0 && v != 1.0) throw DataError("correctness entries must be 0 or 1");
    for (double v : correct_b)
        if (v != 0.0 && v != 1.0) throw DataError("correctness entries must be 0 or 1");
    return welch_ttest(correct_a, correct_b).p;
}

inline void write_confusion_csv(const ConfusionMatrix& m, const std::vector<std::string>& classes,
                                std::ostream& out) {
    out << "true\\pred";
    for (const auto& c : classes) out << ',' << c;
    out << '\n';
    for (int t = 0; t < m.n_classes; ++t) {
        out << classes[static_cast<size_t>(t)];
        for (int p = 0; p < m.n_classes; ++p) out << ',' << m.at(t, p);
        out << '\n';
    }
}

}  // namespace idsbal::eval
