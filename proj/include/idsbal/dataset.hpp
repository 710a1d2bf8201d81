#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "idsbal/common.hpp"

namespace idsbal {

enum class ClassLabel : int { Normal = 0, DoS = 1, Probe = 2, U2R = 3, R2L = 4 };

constexpr int kNumClasses = 5;
constexpr int kNumFeatures = 41;

inline const std::array<std::string, kNumClasses>& class_names() {
    static const std::array<std::string, kNumClasses> names = {"Normal", "DoS", "Probe",
                                                               "U2R", "R2L"};
    return names;
}

inline ClassLabel class_from_name(const std::string& name) {
    const auto& names = class_names();
    for (int i = 0; i < kNumClasses; ++i)
        if (names[i] == name) return static_cast<ClassLabel>(i);
    throw DataError("unknown class name: " + name);
}

struct RawRecord {
    std::array<std::string, kNumFeatures> features;
    std::string attack_name;
    int difficulty = 0;  // parsed and discarded downstream
};

// NSL-KDD lines carry 41 features + attack name + difficulty.
inline std::vector<RawRecord> parse_records(std::istream& in) {
    std::vector<RawRecord> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != kNumFeatures + 2)
            throw ParseError("line " + std::to_string(line_no) + ": expected 43 fields, got " +
                             std::to_string(fields.size()));
        RawRecord rec;
        for (int i = 0; i < kNumFeatures; ++i) rec.features[i] = std::move(fields[i]);
        rec.attack_name = trim(fields[kNumFeatures]);
        if (rec.attack_name.empty())
            throw ParseError("line " + std::to_string(line_no) + ": empty attack name");
        try {
            rec.difficulty = std::stoi(fields[kNumFeatures + 1]);
        } catch (const std::exception&) {
            throw ParseError("line " + std::to_string(line_no) + ": bad difficulty field");
        }
        out.push_back(std::move(rec));
    }
    if (out.empty()) throw DataError("empty dataset");
    return out;
}

// Attack-name -> category table is shipped data, one "name,Category" pair per line.
struct AttackMap {
    std::unordered_map<std::string, ClassLabel> table;

    static AttackMap parse(std::istream& in) {
        AttackMap m;
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            auto t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            auto parts = split(t, ',');
            if (parts.size() != 2)
                throw ParseError("attack map line " + std::to_string(line_no) +
                                 ": expected name,category");
            auto name = trim(parts[0]);
            auto cat = class_from_name(trim(parts[1]));
            if (m.table.count(name))
                throw ParseError("attack map line " + std::to_string(line_no) +
                                 ": duplicate entry " + name);
            m.table.emplace(name, cat);
        }
        if (!m.table.count("normal") || m.table.at("normal") != ClassLabel::Normal)
            throw DataError("attack map must map \"normal\" to Normal");
        return m;
    }
};

inline ClassLabel map_attack_label(const AttackMap& m, const std::string& attack_name) {
    auto it = m.table.find(attack_name);
    if (it == m.table.end()) throw DataError("unknown attack name: " + attack_name);
    return it->second;
}

enum class ColumnKind { Discrete, Continuous };

struct ColumnMeta {
    std::string name;
    ColumnKind kind = ColumnKind::Continuous;
    std::map<std::string, int> encoding_map;  // discrete columns only, codes 1..K
    std::optional<double> l2_norm;            // continuous columns, training-split norm
};

// Row-major numeric table plus per-column metadata and a label column.
struct FeatureTable {
    std::vector<ColumnMeta> columns;
    std::vector<double> data;  // n_rows x columns.size()
    std::vector<int> labels;   // class indices
    std::vector<std::string> classes = {class_names().begin(), class_names().end()};

    size_t n_rows() const { return columns.empty() ? 0 : data.size() / columns.size(); }
    size_t n_cols() const { return columns.size(); }
    double& at(size_t r, size_t c) { return data[r * columns.size() + c]; }
    double at(size_t r, size_t c) const { return data[r * columns.size() + c]; }
    const double* row(size_t r) const { return data.data() + r * columns.size(); }
};

// Feature schema of the NSL-KDD format: 3 string-valued columns, 38 numeric.
inline std::vector<ColumnMeta> nslkdd_schema() {
    static const std::array<const char*, kNumFeatures> names = {
        "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
        "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in", "num_compromised",
        "root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells",
        "num_access_files", "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
        "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
        "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
        "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
        "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
        "dst_host_srv_serror_rate", "dst_host_rerror_rate", "dst_host_srv_rerror_rate"};
    std::vector<ColumnMeta> cols(kNumFeatures);
    for (int i = 0; i < kNumFeatures; ++i) {
        cols[i].name = names[i];
        cols[i].kind = (i == 1 || i == 2 || i == 3) ? ColumnKind::Discrete
                                                    : ColumnKind::Continuous;
    }
    return cols;
}

inline std::map<std::string, int> fit_label_encoding(const std::vector<std::string>& values) {
    if (values.empty()) throw DataError("cannot fit label encoding on empty column");
    std::set<std::string> distinct(values.begin(), values.end());
    std::map<std::string, int> m;
    int code = 1;
    for (const auto& v : distinct) m.emplace(v, code++);
    return m;
}

// Unseen categories encode to the reserved code 0.
inline int apply_label_encoding(const std::map<std::string, int>& m, const std::string& value) {
    auto it = m.find(value);
    return it == m.end() ? 0 : it->second;
}

// Fit encodings for the discrete feature columns on training records, then build a
// numeric table. Encodings fitted on train are reused verbatim for test splits.
inline std::vector<ColumnMeta> fit_schema(const std::vector<RawRecord>& train_records) {
    auto cols = nslkdd_schema();
    for (size_t c = 0; c < cols.size(); ++c) {
        if (cols[c].kind != ColumnKind::Discrete) continue;
        std::vector<std::string> vals;
        vals.reserve(train_records.size());
        for (const auto& r : train_records) vals.push_back(r.features[c]);
        cols[c].encoding_map = fit_label_encoding(vals);
    }
    return cols;
}

inline FeatureTable build_table(const std::vector<RawRecord>& records,
                                const std::vector<ColumnMeta>& schema, const AttackMap& attacks) {
    FeatureTable t;
    t.columns = schema;
    t.data.reserve(records.size() * schema.size());
    t.labels.reserve(records.size());
    for (const auto& rec : records) {
        for (size_t c = 0; c < schema.size(); ++c) {
            if (schema[c].kind == ColumnKind::Discrete) {
                t.data.push_back(apply_label_encoding(schema[c].encoding_map, rec.features[c]));
            } else {
                try {
                    t.data.push_back(std::stod(rec.features[c]));
                } catch (const std::exception&) {
                    throw ParseError("non-numeric value \"" + rec.features[c] + "\" in column " +
                                     schema[c].name);
                }
            }
        }
        t.labels.push_back(static_cast<int>(map_attack_label(attacks, rec.attack_name)));
    }
    return t;
}

// Per-column L2 norms over the continuous columns; zero-norm columns record the
// sentinel 1 so apply leaves them unchanged.
inline std::vector<double> fit_l2_norms(const FeatureTable& t) {
    std::vector<double> norms(t.n_cols(), 1.0);
    for (size_t c = 0; c < t.n_cols(); ++c) {
        if (t.columns[c].kind != ColumnKind::Continuous) continue;
        double sq = 0;
        for (size_t r = 0; r < t.n_rows(); ++r) {
            double v = t.at(r, c);
            if (!std::isfinite(v))
                throw DataError("non-finite value at row " + std::to_string(r) + ", column " +
                                t.columns[c].name);
            sq += v * v;
        }
        double n = std::sqrt(sq);
        norms[c] = n > 0 ? n : 1.0;
    }
    return norms;
}

inline void apply_l2_norms(const std::vector<double>& norms, FeatureTable& t) {
    if (norms.size() != t.n_cols()) throw ShapeError("norm vector size does not match table");
    for (size_t c = 0; c < t.n_cols(); ++c) {
        if (t.columns[c].kind != ColumnKind::Continuous) continue;
        t.columns[c].l2_norm = norms[c];
        if (norms[c] == 1.0) continue;
        for (size_t r = 0; r < t.n_rows(); ++r) t.at(r, c) /= norms[c];
    }
}

struct ClassDistribution {
    std::vector<std::int64_t> counts;
    std::vector<double> percentages;
    std::int64_t total = 0;
};

inline ClassDistribution class_distribution(const FeatureTable& t) {
    ClassDistribution d;
    d.counts.assign(t.classes.size(), 0);
    d.percentages.assign(t.classes.size(), 0.0);
    for (int y : t.labels) ++d.counts[y];
    d.total = static_cast<std::int64_t>(t.labels.size());
    if (d.total > 0)
        for (size_t i = 0; i < d.counts.size(); ++i)
            d.percentages[i] = 100.0 * static_cast<double>(d.counts[i]) /
                               static_cast<double>(d.total);
    return d;
}

// Canonical dataset format: header of name:kind pairs with the label column last,
// then numeric rows. UTF-8, LF line endings.
inline void write_canonical(const FeatureTable& t, std::ostream& out) {
    for (size_t c = 0; c < t.n_cols(); ++c) {
        out << t.columns[c].name << ':'
            << (t.columns[c].kind == ColumnKind::Discrete ? "discrete" : "continuous") << ',';
    }
    out << "label:discrete\n";
    out.precision(17);
    for (size_t r = 0; r < t.n_rows(); ++r) {
        for (size_t c = 0; c < t.n_cols(); ++c) out << t.at(r, c) << ',';
        out << t.labels[r] << '\n';
    }
}

inline FeatureTable read_canonical(std::istream& in,
                                   std::vector<std::string> classes = {class_names().begin(),
                                                                       class_names().end()}) {
    std::string header;
    if (!std::getline(in, header)) throw DataError("empty dataset");
    auto cells = split(trim(header), ',');
    if (cells.size() < 2 || cells.back() != "label:discrete")
        throw ParseError("canonical header must end with label:discrete");
    FeatureTable t;
    t.classes = std::move(classes);
    for (size_t i = 0; i + 1 < cells.size(); ++i) {
        auto parts = split(cells[i], ':');
        if (parts.size() != 2) throw ParseError("bad header cell: " + cells[i]);
        ColumnMeta m;
        m.name = parts[0];
        if (parts[1] == "discrete")
            m.kind = ColumnKind::Discrete;
        else if (parts[1] == "continuous")
            m.kind = ColumnKind::Continuous;
        else
            throw ParseError("unknown column kind: " + parts[1]);
        t.columns.push_back(std::move(m));
    }
    std::string line;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != t.columns.size() + 1)
            throw ParseError("line " + std::to_string(line_no) + ": wrong cell count");
        for (size_t c = 0; c < t.columns.size(); ++c) {
            try {
                t.data.push_back(std::stod(fields[c]));
            } catch (const std::exception&) {
                throw ParseError("line " + std::to_string(line_no) + ": non-numeric cell");
            }
        }
        int y = std::stoi(fields.back());
        if (y < 0 || y >= static_cast<int>(t.classes.size()))
            throw ParseError("line " + std::to_string(line_no) + ": label out of range");
        t.labels.push_back(y);
    }
    return t;
}

}  // namespace idsbal
