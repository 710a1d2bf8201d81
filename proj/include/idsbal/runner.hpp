#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "idsbal/balance.hpp"
#include "idsbal/classifiers.hpp"
#include "idsbal/common.hpp"
#include "idsbal/ctgan.hpp"
#include "idsbal/dataset.hpp"
#include "idsbal/eval.hpp"

// Experiment orchestration: the three-arm grid (org / rndosamp / ctgansamp),
// per-cell training and evaluation with resume, pairwise significance tests,
// and table rendering.
namespace idsbal::runner {

namespace fs = std::filesystem;

struct TestSetRef {
    std::string name;
    std::string path;
};

struct ExperimentConfig {
    // [data]
    std::string train_path;
    std::vector<TestSetRef> test_sets;
    std::string attack_map_path;
    // [experiment]
    std::vector<std::string> arms = {"org", "rndosamp", "ctgansamp"};
    std::vector<std::string> classifiers = {"dt", "rf", "nb", "svm", "fnn", "lstm", "cnn"};
    std::string balance_preset = "equalize";
    int repeats = 1;
    // [ctgan]
    ctgan::GanConfig gan;
    int max_modes = 10;
    // [classifier]
    clf::ClassifierSpec clf_defaults;
    // [run]
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir = "out";
    std::string profile = "full";  // desk | full
    int workers = 1;

    // Hash over everything that shapes the results. Output directory and worker
    // count are execution details and stay out, so moving or parallelizing a run
    // does not invalidate its artifacts.
    nlohmann::json identity_json() const {
        nlohmann::json j;
        j["train"] = train_path;
        nlohmann::json jt = nlohmann::json::array();
        for (const auto& t : test_sets) jt.push_back({{"name", t.name}, {"path", t.path}});
        j["tests"] = jt;
        j["attack_map"] = attack_map_path;
        j["arms"] = arms;
        j["classifiers"] = classifiers;
        j["balance_preset"] = balance_preset;
        j["repeats"] = repeats;
        j["ctgan"] = gan.to_json();
        j["max_modes"] = max_modes;
        j["clf"] = {{"epochs", clf_defaults.epochs},
                    {"batch", clf_defaults.batch},
                    {"patience", clf_defaults.patience},
                    {"trees", clf_defaults.trees},
                    {"svm_epochs", clf_defaults.svm_epochs}};
        j["seed"] = seed;
        j["profile"] = profile;
        return j;
    }
    std::uint64_t hash() const { return fnv1a64(identity_json().dump()); }
};

namespace detail {

inline bool known_arm(const std::string& a) {
    return a == "org" || a == "rndosamp" || a == "ctgansamp";
}

inline std::vector<std::string> csv_list(const std::string& v) {
    std::vector<std::string> out;
    for (auto& s : split(v, ',')) {
        auto t = trim(s);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

inline std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

}  // namespace detail

// Flat INI-style file with [section] headers and key = value lines. Unknown
// sections or keys are errors.
inline ExperimentConfig parse_config(std::istream& in) {
    ExperimentConfig c;
    std::string line, section;
    size_t line_no = 0;
    bool arms_given = false, clfs_given = false;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[' && s.back() == ']') {
            section = s.substr(1, s.size() - 2);
            if (section != "data" && section != "experiment" && section != "ctgan" &&
                section != "classifier" && section != "run")
                throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        auto bad_key = [&]() -> ConfigError {
            return ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key +
                               "' in section [" + section + "]");
        };
        try {
            if (section == "data") {
                if (key == "train")
                    c.train_path = val;
                else if (key == "attack_map")
                    c.attack_map_path = val;
                else if (key.rfind("test.", 0) == 0)
                    c.test_sets.push_back({key.substr(5), val});
                else
                    throw bad_key();
            } else if (section == "experiment") {
                if (key == "arms") {
                    c.arms = detail::csv_list(val);
                    arms_given = true;
                    for (const auto& a : c.arms)
                        if (!detail::known_arm(a)) throw ConfigError("unknown arm: " + a);
                } else if (key == "classifiers") {
                    c.classifiers = detail::csv_list(val);
                    clfs_given = true;
                } else if (key == "balance_preset") {
                    c.balance_preset = val;
                } else if (key == "repeats") {
                    c.repeats = std::stoi(val);
                } else
                    throw bad_key();
            } else if (section == "ctgan") {
                if (key == "epochs")
                    c.gan.epochs = std::stoi(val);
                else if (key == "batch")
                    c.gan.batch = std::stol(val);
                else if (key == "noise_dim")
                    c.gan.noise_dim = std::stol(val);
                else if (key == "hidden")
                    c.gan.hidden = std::stol(val);
                else if (key == "max_modes")
                    c.max_modes = std::stoi(val);
                else
                    throw bad_key();
            } else if (section == "classifier") {
                if (key == "epochs")
                    c.clf_defaults.epochs = std::stoi(val);
                else if (key == "batch")
                    c.clf_defaults.batch = std::stol(val);
                else if (key == "patience")
                    c.clf_defaults.patience = std::stoi(val);
                else if (key == "trees")
                    c.clf_defaults.trees = std::stoi(val);
                else if (key == "svm_epochs")
                    c.clf_defaults.svm_epochs = std::stoi(val);
                else
                    throw bad_key();
            } else if (section == "run") {
                if (key == "seed") {
                    c.seed = std::stoull(val);
                    c.seed_set = true;
                } else if (key == "out_dir") {
                    c.out_dir = val;
                } else if (key == "profile") {
                    if (val != "desk" && val != "full")
                        throw ConfigError("profile must be desk or full");
                    c.profile = val;
                } else if (key == "workers") {
                    c.workers = std::stoi(val);
                } else
                    throw bad_key();
            } else {
                throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
            }
        } catch (const std::invalid_argument&) {
            throw ConfigError("line " + std::to_string(line_no) + ": bad numeric value '" + val +
                              "'");
        }
    }
    (void)arms_given;
    (void)clfs_given;
    if (c.repeats < 1) throw ConfigError("repeats must be >= 1");
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    for (const auto& k : c.classifiers) {
        clf::ClassifierSpec probe = c.clf_defaults;
        probe.kind = k;
        clf::make_classifier(probe);  // validates the kind
    }
    return c;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse_config(in);
}

inline void validate_paths(const ExperimentConfig& c) {
    if (!c.seed_set) throw ConfigError("no seed configured; set [run] seed or pass --seed");
    auto need = [](const std::string& p, const std::string& what) {
        if (p.empty()) throw ConfigError("missing " + what + " path");
        if (!fs::exists(p)) throw DataError(what + " path does not exist: " + p);
    };
    need(c.train_path, "training set");
    need(c.attack_map_path, "attack map");
    if (c.test_sets.empty()) throw ConfigError("no test sets configured");
    for (const auto& t : c.test_sets) need(t.path, "test set " + t.name);
}

// ---- ingestion ----

struct IngestedData {
    FeatureTable train;
    std::vector<std::pair<std::string, FeatureTable>> tests;
    std::vector<ColumnMeta> schema;   // label-encoded schema fitted on train
    std::vector<double> l2_norms;     // fitted on train
};

inline FeatureTable ingest_file(const std::string& path, const std::vector<ColumnMeta>& schema,
                                const AttackMap& attacks) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);
    return build_table(parse_records(in), schema, attacks);
}

inline IngestedData ingest_all(const ExperimentConfig& c) {
    std::ifstream am(c.attack_map_path);
    if (!am) throw IoError("cannot open attack map: " + c.attack_map_path);
    AttackMap attacks = AttackMap::parse(am);

    std::ifstream tr(c.train_path);
    if (!tr) throw IoError("cannot open dataset file: " + c.train_path);
    auto train_records = parse_records(tr);

    IngestedData d;
    d.schema = fit_schema(train_records);
    d.train = build_table(train_records, d.schema, attacks);
    d.l2_norms = fit_l2_norms(d.train);
    apply_l2_norms(d.l2_norms, d.train);
    for (const auto& t : c.test_sets) {
        FeatureTable tt = ingest_file(t.path, d.schema, attacks);
        apply_l2_norms(d.l2_norms, tt);
        d.tests.emplace_back(t.name, std::move(tt));
    }
    return d;
}

// Per-class 10% subsample (rounded up, so tiny classes survive) for desk runs.
inline FeatureTable stratified_subsample(const FeatureTable& t, double fraction, Rng& rng) {
    std::vector<std::vector<size_t>> by_class(t.classes.size());
    for (size_t r = 0; r < t.n_rows(); ++r)
        by_class[static_cast<size_t>(t.labels[r])].push_back(r);
    std::vector<size_t> keep;
    for (auto& rows : by_class) {
        if (rows.empty()) continue;
        std::shuffle(rows.begin(), rows.end(), rng);
        size_t k = static_cast<size_t>(
            std::ceil(fraction * static_cast<double>(rows.size())));
        keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<long>(k));
    }
    std::sort(keep.begin(), keep.end());
    FeatureTable out;
    out.columns = t.columns;
    out.classes = t.classes;
    for (size_t r : keep) {
        const double* row = t.row(r);
        out.data.insert(out.data.end(), row, row + t.n_cols());
        out.labels.push_back(t.labels[r]);
    }
    return out;
}

// ---- report structures ----

struct EvalResult {
    eval::ConfusionMatrix confusion;
    eval::MetricReport metrics;
    std::vector<double> correctness;  // per test sample, 0/1
};

struct CellResult {
    std::string arm, classifier;
    bool failed = false;
    std::string error;
    std::map<std::string, EvalResult> by_test;  // test-set name -> result
};

struct ExperimentReport {
    std::uint64_t config_hash = 0;
    nlohmann::json config;
    std::map<std::string, std::uint64_t> dataset_hashes;
    std::vector<CellResult> cells;
    // test set -> classifier -> "armA vs armB" -> p
    std::map<std::string, std::map<std::string, std::map<std::string, double>>> p_values;
};

namespace detail {

inline nlohmann::json eval_to_json(const EvalResult& e) {
    nlohmann::json j;
    j["confusion"] = e.confusion.cells;
    j["accuracy"] = e.metrics.accuracy;
    j["weighted_precision"] = e.metrics.weighted_precision;
    j["weighted_recall"] = e.metrics.weighted_recall;
    j["weighted_f1"] = e.metrics.weighted_f1;
    nlohmann::json pc = nlohmann::json::array();
    for (const auto& m : e.metrics.per_class)
        pc.push_back({{"precision", m.precision},
                      {"recall", m.recall},
                      {"f1", m.f1},
                      {"support", m.support},
                      {"degenerate", m.degenerate}});
    j["per_class"] = pc;
    return j;
}

inline EvalResult eval_from_json(const nlohmann::json& j, int n_classes) {
    EvalResult e;
    e.confusion.n_classes = n_classes;
    e.confusion.cells = j.at("confusion").get<std::vector<std::int64_t>>();
    e.metrics.accuracy = j.at("accuracy").get<double>();
    e.metrics.weighted_precision = j.at("weighted_precision").get<double>();
    e.metrics.weighted_recall = j.at("weighted_recall").get<double>();
    e.metrics.weighted_f1 = j.at("weighted_f1").get<double>();
    for (const auto& jm : j.at("per_class")) {
        eval::ClassMetrics m;
        m.precision = jm.at("precision").get<double>();
        m.recall = jm.at("recall").get<double>();
        m.f1 = jm.at("f1").get<double>();
        m.support = jm.at("support").get<std::int64_t>();
        m.degenerate = jm.at("degenerate").get<bool>();
        e.metrics.per_class.push_back(m);
    }
    return e;
}

inline std::string correctness_to_string(const std::vector<double>& v) {
    std::string s(v.size(), '0');
    for (size_t i = 0; i < v.size(); ++i)
        if (v[i] == 1.0) s[i] = '1';
    return s;
}

inline std::vector<double> correctness_from_string(const std::string& s) {
    std::vector<double> v(s.size());
    for (size_t i = 0; i < s.size(); ++i) v[i] = s[i] == '1' ? 1.0 : 0.0;
    return v;
}

inline void write_text_atomic(const fs::path& path, const std::string& body) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!out) throw IoError("cannot write " + path.string());
    }
    fs::rename(tmp, path);
}

inline std::uint64_t file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return fnv1a64(buf.str());
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace detail

// ---- the grid run ----

inline EvalResult evaluate_model(const clf::Classifier& model, const FeatureTable& test) {
    EvalResult e;
    auto pred = model.predict(test);
    e.confusion = eval::confusion(test.labels, pred, static_cast<int>(test.classes.size()));
    e.metrics = eval::weighted_metrics(e.confusion);
    e.correctness.resize(pred.size());
    for (size_t i = 0; i < pred.size(); ++i)
        e.correctness[i] = pred[i] == test.labels[i] ? 1.0 : 0.0;
    return e;
}

inline void export_predictions(const clf::Classifier& model, const FeatureTable& test,
                               std::ostream& out) {
    out << "true,predicted";
    for (const auto& c : test.classes) out << ',' << c;
    out << '\n';
    auto scores = model.predict_scores(test);
    out.precision(17);
    for (size_t r = 0; r < scores.size(); ++r) {
        const auto& row = scores[r];
        int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        out << test.classes[static_cast<size_t>(test.labels[r])] << ','
            << test.classes[static_cast<size_t>(pred)];
        for (double s : row) out << ',' << s;
        out << '\n';
    }
    if (!out) throw IoError("prediction export write failure");
}

// Builds (or resumes) the training table for one arm. CTGAN fitting is the
// shared predecessor for the ctgansamp arm and runs at most once per config.
struct ArmData {
    std::map<std::string, FeatureTable> train_by_arm;
};

inline FeatureTable build_arm_table(const std::string& arm, const FeatureTable& base,
                                    const ExperimentConfig& cfg, const fs::path& out_dir) {
    if (arm == "org") return base;
    balance::BalancePlan plan = balance::make_plan(base, cfg.balance_preset);
    if (arm == "rndosamp") {
        Rng rng(derive_seed(cfg.seed, "oversample"));
        return balance::random_oversample(base, plan, rng);
    }
    // ctgansamp: codecs -> transform -> train (resumable) -> conditioned generation
    TableCodecs codecs = TableCodecs::fit(base, cfg.max_modes, derive_seed(cfg.seed, "codecs"));
    ctgan::RowLayout layout = ctgan::build_layout(codecs);
    ctgan::GanConfig gc = cfg.gan;
    gc.seed = derive_seed(cfg.seed, "ctgan");
    if (cfg.profile == "desk") gc.epochs = std::min(gc.epochs, 30);

    fs::path gan_path = out_dir / "gan.bin";
    fs::path gan_hash = out_dir / "gan.bin.hash";
    ctgan::GanModel model;
    std::string want = std::to_string(cfg.hash());
    bool reuse = false;
    if (fs::exists(gan_path) && fs::exists(gan_hash)) {
        std::ifstream h(gan_hash);
        std::string got;
        h >> got;
        if (got == want) {
            std::ifstream in(gan_path, std::ios::binary);
            model = ctgan::load_gan(in);
            reuse = model.codec_hash == codecs.hash();
        }
    }
    if (!reuse) {
        Rng trng(derive_seed(gc.seed, "transform"));
        auto transformed = ctgan::transform_table(codecs, layout, base, trng);
        model = ctgan::train_gan(transformed, layout, gc);
        model.codec_hash = codecs.hash();
        {
            std::ofstream out(gan_path, std::ios::binary);
            ctgan::save_gan(model, out);
        }
        detail::write_text_atomic(gan_hash, want);
    }
    Rng grng(derive_seed(cfg.seed, "ctgan-generate"));
    return balance::ctgan_balance(base, plan, model, codecs, grng);
}

inline CellResult run_cell(const std::string& arm, const std::string& kind,
                           const FeatureTable& train,
                           const std::vector<std::pair<std::string, FeatureTable>>& tests,
                           const ExperimentConfig& cfg, const fs::path& out_dir) {
    CellResult cell;
    cell.arm = arm;
    cell.classifier = kind;
    try {
        std::map<std::string, std::vector<EvalResult>> runs;  // test -> per-repeat
        std::unique_ptr<clf::Classifier> last_model;
        for (int rep = 0; rep < cfg.repeats; ++rep) {
            clf::ClassifierSpec spec = cfg.clf_defaults;
            spec.kind = kind;
            spec.seed = derive_seed(cfg.seed, "clf:" + arm + ":" + kind + ":rep" +
                                                  std::to_string(rep));
            auto model = clf::make_classifier(spec);
            model->fit(train);
            for (const auto& [name, test] : tests)
                runs[name].push_back(evaluate_model(*model, test));
            last_model = std::move(model);
        }
        for (auto& [name, results] : runs) {
            if (results.size() == 1) {
                cell.by_test[name] = std::move(results[0]);
                continue;
            }
            // median aggregation over repeats: scalar metrics element-wise, the
            // confusion and correctness from the median-accuracy repeat
            std::vector<double> accs;
            for (const auto& r : results) accs.push_back(r.metrics.accuracy);
            std::vector<size_t> order(results.size());
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(),
                      [&](size_t a, size_t b) { return accs[a] < accs[b]; });
            EvalResult agg = results[order[order.size() / 2]];
            auto med = [&](auto pick) {
                std::vector<double> v;
                for (const auto& r : results) v.push_back(pick(r));
                return detail::median(v);
            };
            agg.metrics.accuracy = med([](const EvalResult& r) { return r.metrics.accuracy; });
            agg.metrics.weighted_precision =
                med([](const EvalResult& r) { return r.metrics.weighted_precision; });
            agg.metrics.weighted_recall =
                med([](const EvalResult& r) { return r.metrics.weighted_recall; });
            agg.metrics.weighted_f1 =
                med([](const EvalResult& r) { return r.metrics.weighted_f1; });
            cell.by_test[name] = std::move(agg);
        }
        if (last_model) {
            fs::path model_path = out_dir / ("model_" + arm + "_" + kind + ".bin");
            std::ofstream out(model_path, std::ios::binary);
            clf::save_model(*last_model, out);
        }
    } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
        cell.by_test.clear();
    }
    return cell;
}

inline nlohmann::json cell_to_json(const CellResult& c, std::uint64_t config_hash) {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["arm"] = c.arm;
    j["classifier"] = c.classifier;
    j["failed"] = c.failed;
    if (c.failed) j["error"] = c.error;
    nlohmann::json jt;
    for (const auto& [name, e] : c.by_test) {
        nlohmann::json je = detail::eval_to_json(e);
        je["correctness"] = detail::correctness_to_string(e.correctness);
        jt[name] = std::move(je);
    }
    j["tests"] = std::move(jt);
    return j;
}

inline CellResult cell_from_json(const nlohmann::json& j, int n_classes) {
    CellResult c;
    c.arm = j.at("arm").get<std::string>();
    c.classifier = j.at("classifier").get<std::string>();
    c.failed = j.at("failed").get<bool>();
    if (c.failed) c.error = j.value("error", "");
    for (auto it = j.at("tests").begin(); it != j.at("tests").end(); ++it) {
        EvalResult e = detail::eval_from_json(it.value(), n_classes);
        e.correctness = detail::correctness_from_string(it.value().at("correctness"));
        c.by_test[it.key()] = std::move(e);
    }
    return c;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    validate_paths(cfg);
    fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir);
    std::uint64_t chash = cfg.hash();

    IngestedData data = ingest_all(cfg);
    if (cfg.profile == "desk") {
        Rng rng(derive_seed(cfg.seed, "desk-subsample"));
        data.train = stratified_subsample(data.train, 0.10, rng);
    }

    ExperimentReport report;
    report.config_hash = chash;
    report.config = cfg.identity_json();
    report.dataset_hashes["train"] = detail::file_hash(cfg.train_path);
    for (const auto& t : cfg.test_sets)
        report.dataset_hashes["test:" + t.name] = detail::file_hash(t.path);

    // arm training tables (CTGAN is the shared predecessor, built once)
    std::map<std::string, FeatureTable> arm_tables;
    for (const auto& arm : cfg.arms) {
        arm_tables[arm] = build_arm_table(arm, data.train, cfg, out_dir);
        if (arm != "org") {
            fs::path p = out_dir / ("balanced_" + arm + ".csv");
            std::ostringstream body;
            write_canonical(arm_tables[arm], body);
            detail::write_text_atomic(p, body.str());
        }
    }

    // grid cells, resumable, up to cfg.workers in flight
    struct Job {
        std::string arm, kind;
        fs::path path;
    };
    std::vector<Job> jobs;
    report.cells.resize(cfg.arms.size() * cfg.classifiers.size());
    std::vector<bool> done(report.cells.size(), false);
    size_t slot = 0;
    for (const auto& arm : cfg.arms) {
        for (const auto& kind : cfg.classifiers) {
            fs::path cell_path = out_dir / ("cell_" + arm + "_" + kind + ".json");
            bool resumed = false;
            if (fs::exists(cell_path)) {
                try {
                    std::ifstream in(cell_path);
                    auto j = nlohmann::json::parse(in);
                    if (j.at("config_hash").get<std::uint64_t>() == chash) {
                        report.cells[slot] =
                            cell_from_json(j, static_cast<int>(data.train.classes.size()));
                        done[slot] = true;
                        resumed = true;
                    }
                } catch (const std::exception&) {
                    resumed = false;  // corrupt cell file: recompute
                }
            }
            if (!resumed) jobs.push_back({arm, kind, cell_path});
            ++slot;
        }
    }

    std::map<std::string, size_t> slot_of;
    slot = 0;
    for (const auto& arm : cfg.arms)
        for (const auto& kind : cfg.classifiers) slot_of[arm + "/" + kind] = slot++;

    std::atomic<size_t> next{0};
    std::mutex mu;
    auto worker = [&]() {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= jobs.size()) break;
            const Job& job = jobs[i];
            CellResult cell =
                run_cell(job.arm, job.kind, arm_tables[job.arm], data.tests, cfg, out_dir);
            std::string body = cell_to_json(cell, chash).dump(2) + "\n";
            std::lock_guard<std::mutex> lock(mu);
            detail::write_text_atomic(job.path, body);
            size_t s = slot_of[job.arm + "/" + job.kind];
            report.cells[s] = std::move(cell);
            done[s] = true;
        }
    };
    size_t n_workers = std::min<size_t>(static_cast<size_t>(cfg.workers),
                                        std::max<size_t>(1, jobs.size()));
    std::vector<std::thread> pool;
    for (size_t i = 0; i + 1 < n_workers; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    // pairwise significance per test set and classifier
    auto find_cell = [&](const std::string& arm, const std::string& kind) -> const CellResult* {
        const CellResult& c = report.cells[slot_of[arm + "/" + kind]];
        return c.failed ? nullptr : &c;
    };
    for (const auto& [tname, ttable] : data.tests) {
        (void)ttable;
        for (const auto& kind : cfg.classifiers) {
            for (size_t a = 0; a < cfg.arms.size(); ++a) {
                for (size_t b = a + 1; b < cfg.arms.size(); ++b) {
                    const CellResult* ca = find_cell(cfg.arms[a], kind);
                    const CellResult* cb = find_cell(cfg.arms[b], kind);
                    if (!ca || !cb) continue;
                    auto ia = ca->by_test.find(tname);
                    auto ib = cb->by_test.find(tname);
                    if (ia == ca->by_test.end() || ib == cb->by_test.end()) continue;
                    double p;
                    try {
                        p = eval::compare_experiments(ia->second.correctness,
                                                      ib->second.correctness);
                    } catch (const std::exception&) {
                        continue;
                    }
                    report.p_values[tname][kind][cfg.arms[a] + " vs " + cfg.arms[b]] = p;
                }
            }
        }
    }
    return report;
}

// ---- persistence and rendering ----

inline nlohmann::json report_to_json(const ExperimentReport& r) {
    nlohmann::json j;
    j["config_hash"] = r.config_hash;
    j["config"] = r.config;
    j["dataset_hashes"] = r.dataset_hashes;
    nlohmann::json jc = nlohmann::json::array();
    for (const auto& c : r.cells) {
        nlohmann::json cell;
        cell["arm"] = c.arm;
        cell["classifier"] = c.classifier;
        cell["failed"] = c.failed;
        if (c.failed) cell["error"] = c.error;
        nlohmann::json jt;
        for (const auto& [name, e] : c.by_test) jt[name] = detail::eval_to_json(e);
        cell["tests"] = std::move(jt);
        jc.push_back(std::move(cell));
    }
    j["cells"] = std::move(jc);
    j["p_values"] = r.p_values;
    j["timings"] = "timings.json";  // wall-clock details live in the sidecar
    return j;
}

inline ExperimentReport report_from_json(const nlohmann::json& j, int n_classes) {
    ExperimentReport r;
    r.config_hash = j.at("config_hash").get<std::uint64_t>();
    r.config = j.at("config");
    r.dataset_hashes = j.at("dataset_hashes").get<std::map<std::string, std::uint64_t>>();
    for (const auto& jc : j.at("cells")) {
        CellResult c;
        c.arm = jc.at("arm").get<std::string>();
        c.classifier = jc.at("classifier").get<std::string>();
        c.failed = jc.at("failed").get<bool>();
        if (c.failed) c.error = jc.value("error", "");
        for (auto it = jc.at("tests").begin(); it != jc.at("tests").end(); ++it)
            c.by_test[it.key()] = detail::eval_from_json(it.value(), n_classes);
        r.cells.push_back(std::move(c));
    }
    r.p_values =
        j.at("p_values")
            .get<std::map<std::string, std::map<std::string, std::map<std::string, double>>>>();
    return r;
}

// Fixed-width metric tables per test set plus the pairwise p-value grid.
inline std::string render_tables(const ExperimentReport& r) {
    std::ostringstream out;
    std::vector<std::string> arms, kinds, tests;
    for (const auto& c : r.cells) {
        if (std::find(arms.begin(), arms.end(), c.arm) == arms.end()) arms.push_back(c.arm);
        if (std::find(kinds.begin(), kinds.end(), c.classifier) == kinds.end())
            kinds.push_back(c.classifier);
        for (const auto& [name, e] : c.by_test) {
            (void)e;
            if (std::find(tests.begin(), tests.end(), name) == tests.end()) tests.push_back(name);
        }
    }
    auto cell_of = [&](const std::string& arm, const std::string& kind) -> const CellResult* {
        for (const auto& c : r.cells)
            if (c.arm == arm && c.classifier == kind) return &c;
        return nullptr;
    };
    char buf[64];
    auto fixed4 = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%8.4f", v);
        return std::string(buf);
    };
    const std::string dash = "       \xE2\x80\x94";  // right-aligned em dash
    for (const auto& tname : tests) {
        out << "== " << tname << " ==\n";
        out << "model ";
        for (const auto& arm : arms)
            out << "| " << arm << ": acc     prec     rec      f1       ";
        out << "\n";
        for (const auto& kind : kinds) {
            std::snprintf(buf, sizeof(buf), "%-6s", kind.c_str());
            out << buf;
            for (const auto& arm : arms) {
                const CellResult* c = cell_of(arm, kind);
                const EvalResult* e = nullptr;
                if (c && !c->failed) {
                    auto it = c->by_test.find(tname);
                    if (it != c->by_test.end()) e = &it->second;
                }
                if (!e) {
                    out << "| " << dash << ' ' << dash << ' ' << dash << ' ' << dash << ' ';
                } else {
                    out << "| " << fixed4(e->metrics.accuracy) << ' '
                        << fixed4(e->metrics.weighted_precision) << ' '
                        << fixed4(e->metrics.weighted_recall) << ' '
                        << fixed4(e->metrics.weighted_f1) << ' ';
                }
            }
            out << "\n";
        }
        out << "\n";
    }
    if (!r.p_values.empty()) {
        out << "== pairwise t-tests (p-values) ==\n";
        for (const auto& [tname, by_kind] : r.p_values) {
            out << tname << ":\n";
            for (const auto& kind : kinds) {
                auto it = by_kind.find(kind);
                if (it == by_kind.end()) continue;
                std::snprintf(buf, sizeof(buf), "  %-6s", kind.c_str());
                out << buf;
                for (const auto& [pair, p] : it->second) {
                    std::snprintf(buf, sizeof(buf), "%s = %.2e  ", pair.c_str(), p);
                    out << buf;
                }
                out << "\n";
            }
        }
    }
    return out.str();
}

inline void write_report_files(const ExperimentReport& r, const fs::path& out_dir,
                               const std::vector<std::string>& class_names,
                               const nlohmann::json& timings) {
    detail::write_text_atomic(out_dir / "report.json", report_to_json(r).dump(2) + "\n");
    detail::write_text_atomic(out_dir / "timings.json", timings.dump(2) + "\n");
    detail::write_text_atomic(out_dir / "tables.txt", render_tables(r));

    std::ostringstream metrics;
    metrics << "arm,classifier,test_set,accuracy,precision,recall,f1\n";
    metrics.precision(17);
    for (const auto& c : r.cells) {
        if (c.failed) continue;
        for (const auto& [name, e] : c.by_test) {
            metrics << c.arm << ',' << c.classifier << ',' << name << ',' << e.metrics.accuracy
                    << ',' << e.metrics.weighted_precision << ',' << e.metrics.weighted_recall
                    << ',' << e.metrics.weighted_f1 << '\n';
            std::ostringstream cm;
            eval::write_confusion_csv(e.confusion, class_names, cm);
            detail::write_text_atomic(out_dir / ("confusion_" + c.arm + "_" + c.classifier + "_" +
                                                 detail::sanitize(name) + ".csv"),
                                      cm.str());
        }
    }
    detail::write_text_atomic(out_dir / "metrics.csv", metrics.str());
}

}  // namespace idsbal::runner
