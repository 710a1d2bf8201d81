#pragma once

#include <algorithm>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "idsbal/common.hpp"
#include "idsbal/ctgan.hpp"
#include "idsbal/dataset.hpp"

// Class rebalancing: plain duplication oversampling and label-conditioned
// generation from a trained GAN.
namespace idsbal::balance {

// Per-class target row counts. A target below the current count keeps the
// class as is; rows are never dropped.
struct BalancePlan {
    std::vector<std::int64_t> targets;

    nlohmann::json to_json() const { return {{"targets", targets}}; }
};

// "equalize" lifts every class to the majority count; "paper" pins the four
// attack classes to fixed counts and leaves Normal untouched.
inline BalancePlan make_plan(const FeatureTable& t, const std::string& preset) {
    auto dist = class_distribution(t);
    BalancePlan p;
    p.targets = dist.counts;
    if (preset == "equalize") {
        std::int64_t top = *std::max_element(dist.counts.begin(), dist.counts.end());
        for (auto& c : p.targets) c = top;
    } else if (preset == "paper") {
        if (t.classes.size() != kNumClasses)
            throw ConfigError("the paper preset needs the five standard classes");
        p.targets[static_cast<size_t>(ClassLabel::DoS)] = 102589;
        p.targets[static_cast<size_t>(ClassLabel::Probe)] = 41149;
        p.targets[static_cast<size_t>(ClassLabel::U2R)] = 39483;
        p.targets[static_cast<size_t>(ClassLabel::R2L)] = 55350;
    } else {
        throw ConfigError("unknown balance preset: " + preset);
    }
    return p;
}

namespace detail {

inline void check_plan(const FeatureTable& t, const BalancePlan& plan) {
    if (plan.targets.size() != t.classes.size())
        throw ConfigError("balance plan has " + std::to_string(plan.targets.size()) +
                          " targets for " + std::to_string(t.classes.size()) + " classes");
    for (auto v : plan.targets)
        if (v < 0) throw ConfigError("negative balance target");
}

inline void append_row(FeatureTable& t, const double* row, int label) {
    t.data.insert(t.data.end(), row, row + t.n_cols());
    t.labels.push_back(label);
}

}  // namespace detail

// Duplicate minority rows chosen uniformly at random until each class reaches
// its target. Original rows are kept in order; synthesized duplicates append.
inline FeatureTable random_oversample(const FeatureTable& t, const BalancePlan& plan, Rng& rng) {
    detail::check_plan(t, plan);
    auto dist = class_distribution(t);
    std::vector<std::vector<size_t>> by_class(t.classes.size());
    for (size_t r = 0; r < t.n_rows(); ++r)
        by_class[static_cast<size_t>(t.labels[r])].push_back(r);

    FeatureTable out = t;
    for (size_t c = 0; c < t.classes.size(); ++c) {
        std::int64_t need = plan.targets[c] - dist.counts[c];
        if (need <= 0) continue;
        if (by_class[c].empty())
            throw DataError("cannot oversample class " + t.classes[c] + " with zero rows");
        std::uniform_int_distribution<size_t> pick(0, by_class[c].size() - 1);
        for (std::int64_t i = 0; i < need; ++i) {
            size_t r = by_class[c][pick(rng)];
            detail::append_row(out, t.row(r), t.labels[r]);
        }
    }
    return out;
}

// Fill each deficit with label-conditioned GAN samples. Original rows are kept;
// classes at or above target (Normal included) are untouched.
inline FeatureTable ctgan_balance(const FeatureTable& t, const BalancePlan& plan,
                                  ctgan::GanModel& model, const TableCodecs& codecs, Rng& rng) {
    detail::check_plan(t, plan);
    if (model.codec_hash != codecs.hash())
        throw StateError("GAN checkpoint was trained against different codecs");
    auto dist = class_distribution(t);
    FeatureTable out = t;
    for (size_t c = 0; c < t.classes.size(); ++c) {
        std::int64_t need = plan.targets[c] - dist.counts[c];
        if (need <= 0) continue;
        FeatureTable synth =
            ctgan::generate(model, codecs, need, static_cast<int>(c), rng, t.classes);
        for (size_t r = 0; r < synth.n_rows(); ++r)
            detail::append_row(out, synth.row(r), static_cast<int>(c));
    }
    return out;
}

// Sidecar describing what a balancing step did, written next to the dataset.
inline nlohmann::json balance_manifest(const FeatureTable& before, const FeatureTable& after,
                                       const BalancePlan& plan, const std::string& method) {
    auto db = class_distribution(before);
    auto da = class_distribution(after);
    nlohmann::json j;
    j["method"] = method;
    j["targets"] = plan.targets;
    j["before"] = db.counts;
    j["after"] = da.counts;
    j["rows_added"] = da.total - db.total;
    return j;
}

}  // namespace idsbal::balance
