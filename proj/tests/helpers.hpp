#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "idsbal/common.hpp"
#include "idsbal/dataset.hpp"

// Shared fixtures: synthetic NSL-KDD-format text and small feature tables.
namespace testhelp {

// One raw record line: 41 features + attack name + difficulty. The three
// symbolic columns (protocol, service, flag) are drawn from small pools; the
// numeric columns get class-dependent values so classifiers have signal.
inline std::string make_raw_line(int cls, idsbal::Rng& rng) {
    static const std::array<const char*, 3> protocols = {"icmp", "tcp", "udp"};
    static const std::array<const char*, 4> services = {"ftp", "http", "smtp", "telnet"};
    static const std::array<const char*, 3> flags = {"REJ", "S0", "SF"};
    static const std::array<const char*, 5> attacks = {"normal", "neptune", "satan",
                                                       "rootkit", "guess_passwd"};
    std::uniform_int_distribution<int> d3(0, 2), d4(0, 3), d100(0, 100);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::ostringstream out;
    out << d100(rng);                                    // duration
    out << ',' << protocols[static_cast<size_t>(cls % 3 == 0 ? d3(rng) : cls % 3)];
    out << ',' << services[static_cast<size_t>(d4(rng))];
    out << ',' << flags[static_cast<size_t>(d3(rng))];
    for (int f = 4; f < 41; ++f) {
        double v = std::abs(noise(rng) + 2.0 * cls + 0.1 * f);
        out << ',' << v;
    }
    out << ',' << attacks[static_cast<size_t>(cls)] << ',' << d100(rng) % 22;
    return out.str();
}

inline std::string make_raw_file(const std::vector<std::int64_t>& class_counts,
                                 std::uint64_t seed) {
    idsbal::Rng rng(seed);
    std::ostringstream out;
    // interleave classes so stratified operations see mixed order
    std::vector<std::int64_t> left = class_counts;
    bool any = true;
    while (any) {
        any = false;
        for (size_t c = 0; c < left.size(); ++c) {
            if (left[c] <= 0) continue;
            out << make_raw_line(static_cast<int>(c), rng) << '\n';
            --left[c];
            any = true;
        }
    }
    return out.str();
}

// Small numeric-only table: `dims` continuous features per class-dependent
// Gaussian cluster.
inline idsbal::FeatureTable make_cluster_table(const std::vector<std::int64_t>& class_counts,
                                               const std::vector<std::vector<double>>& centers,
                                               double sigma, std::uint64_t seed) {
    idsbal::FeatureTable t;
    size_t dims = centers.at(0).size();
    for (size_t d = 0; d < dims; ++d)
        t.columns.push_back({"f" + std::to_string(d), idsbal::ColumnKind::Continuous, {}, {}});
    t.classes.clear();
    for (size_t c = 0; c < class_counts.size(); ++c) t.classes.push_back("c" + std::to_string(c));
    idsbal::Rng rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<std::int64_t> left = class_counts;
    bool any = true;
    while (any) {
        any = false;
        for (size_t c = 0; c < left.size(); ++c) {
            if (left[c] <= 0) continue;
            for (size_t d = 0; d < dims; ++d) t.data.push_back(centers[c][d] + noise(rng));
            t.labels.push_back(static_cast<int>(c));
            --left[c];
            any = true;
        }
    }
    return t;
}

}  // namespace testhelp
