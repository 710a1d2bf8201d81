#pragma once

#include <json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "idsbal/common.hpp"
#include "idsbal/dataset.hpp"
#include "idsbal/gmm.hpp"

namespace idsbal {

// Fitted per-column transformation state for a dataset: label-encoding maps and
// L2 norms (carried on ColumnMeta), observed category codes for discrete
// columns, and a Gaussian mixture per continuous column. Immutable after fit.
struct TableCodecs {
    std::vector<ColumnMeta> columns;
    std::vector<std::optional<gmm::ColumnGMM>> gmms;      // per feature column
    std::vector<std::vector<int>> categories;             // per feature column (discrete)
    std::vector<int> label_categories;                    // class ids, ascending
    size_t n_classes = 0;
    int max_modes = 10;

    static TableCodecs fit(const FeatureTable& t, int max_modes, std::uint64_t seed) {
        if (t.n_rows() == 0) throw DataError("cannot fit codecs on an empty table");
        TableCodecs c;
        c.columns = t.columns;
        c.max_modes = max_modes;
        c.n_classes = t.classes.size();
        c.gmms.resize(t.n_cols());
        c.categories.resize(t.n_cols());
        for (size_t col = 0; col < t.n_cols(); ++col) {
            if (t.columns[col].kind == ColumnKind::Discrete) {
                std::set<int> codes;
                for (size_t r = 0; r < t.n_rows(); ++r)
                    codes.insert(static_cast<int>(t.at(r, col)));
                c.categories[col].assign(codes.begin(), codes.end());
            } else {
                std::vector<double> vals(t.n_rows());
                for (size_t r = 0; r < t.n_rows(); ++r) vals[r] = t.at(r, col);
                auto g = gmm::fit_column_gmm(vals, max_modes,
                                             derive_seed(seed, "gmm:" + t.columns[col].name));
                g.column_id = static_cast<int>(col);
                c.gmms[col] = std::move(g);
            }
        }
        std::set<int> lab(t.labels.begin(), t.labels.end());
        c.label_categories.assign(lab.begin(), lab.end());
        return c;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["max_modes"] = max_modes;
        j["n_classes"] = n_classes;
        j["label_categories"] = label_categories;
        j["columns"] = nlohmann::json::array();
        for (size_t i = 0; i < columns.size(); ++i) {
            nlohmann::json jc;
            jc["name"] = columns[i].name;
            jc["kind"] = columns[i].kind == ColumnKind::Discrete ? "discrete" : "continuous";
            if (!columns[i].encoding_map.empty()) jc["encoding_map"] = columns[i].encoding_map;
            if (columns[i].l2_norm) jc["l2_norm"] = *columns[i].l2_norm;
            if (columns[i].kind == ColumnKind::Discrete) {
                jc["categories"] = categories[i];
            } else if (gmms[i]) {
                nlohmann::json jm = nlohmann::json::array();
                for (const auto& m : gmms[i]->modes)
                    jm.push_back({{"weight", m.weight}, {"mean", m.mean}, {"std", m.std}});
                jc["modes"] = jm;
            }
            j["columns"].push_back(std::move(jc));
        }
        return j;
    }

    static TableCodecs from_json(const nlohmann::json& j) {
        TableCodecs c;
        c.max_modes = j.at("max_modes").get<int>();
        c.n_classes = j.at("n_classes").get<size_t>();
        c.label_categories = j.at("label_categories").get<std::vector<int>>();
        for (const auto& jc : j.at("columns")) {
            ColumnMeta m;
            m.name = jc.at("name").get<std::string>();
            m.kind = jc.at("kind") == "discrete" ? ColumnKind::Discrete : ColumnKind::Continuous;
            if (jc.contains("encoding_map"))
                m.encoding_map = jc.at("encoding_map").get<std::map<std::string, int>>();
            if (jc.contains("l2_norm")) m.l2_norm = jc.at("l2_norm").get<double>();
            c.columns.push_back(std::move(m));
            c.categories.emplace_back();
            c.gmms.emplace_back();
            if (jc.contains("categories"))
                c.categories.back() = jc.at("categories").get<std::vector<int>>();
            if (jc.contains("modes")) {
                gmm::ColumnGMM g;
                g.max_modes = c.max_modes;
                g.column_id = static_cast<int>(c.columns.size()) - 1;
                for (const auto& jm : jc.at("modes"))
                    g.modes.push_back({jm.at("weight").get<double>(), jm.at("mean").get<double>(),
                                       jm.at("std").get<double>()});
                c.gmms.back() = std::move(g);
            }
        }
        return c;
    }

    std::uint64_t hash() const { return fnv1a64(to_json().dump()); }
};

}  // namespace idsbal
