#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "idsbal/balance.hpp"
#include "idsbal/classifiers.hpp"
#include "idsbal/ctgan.hpp"
#include "idsbal/runner.hpp"

namespace fs = std::filesystem;
using namespace idsbal;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> profile;
    std::optional<int> workers;
    std::optional<int> repeats;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "experiment config file")->required();
    cmd->add_option("--seed", o.seed, "master seed (overrides the config)");
    cmd->add_option("--out", o.out, "output directory (overrides the config)");
    cmd->add_option("--profile", o.profile, "desk | full (overrides the config)")
        ->check(CLI::IsMember({"desk", "full"}));
    cmd->add_option("--workers", o.workers, "max concurrent grid cells");
    cmd->add_option("--repeats", o.repeats, "training repetitions per cell, median-aggregated");
}

runner::ExperimentConfig load_config(const CommonOpts& o) {
    auto cfg = runner::parse_config_file(o.config_path);
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.seed_set = true;
    }
    if (o.out) cfg.out_dir = *o.out;
    if (o.profile) cfg.profile = *o.profile;
    if (o.workers) cfg.workers = *o.workers;
    if (o.repeats) cfg.repeats = *o.repeats;
    if (cfg.workers < 1 || cfg.repeats < 1)
        throw ConfigError("workers and repeats must be >= 1");
    return cfg;
}

runner::IngestedData prepared_data(const runner::ExperimentConfig& cfg) {
    runner::validate_paths(cfg);
    auto data = runner::ingest_all(cfg);
    if (cfg.profile == "desk") {
        Rng rng(derive_seed(cfg.seed, "desk-subsample"));
        data.train = runner::stratified_subsample(data.train, 0.10, rng);
    }
    return data;
}

void write_file(const fs::path& p, const std::string& body) {
    runner::detail::write_text_atomic(p, body);
}

TableCodecs fit_and_save_codecs(const runner::ExperimentConfig& cfg, const FeatureTable& train,
                                const fs::path& out_dir) {
    auto codecs = TableCodecs::fit(train, cfg.max_modes, derive_seed(cfg.seed, "codecs"));
    write_file(out_dir / "codecs.json", codecs.to_json().dump(2) + "\n");
    return codecs;
}

TableCodecs load_codecs(const fs::path& out_dir) {
    std::ifstream in(out_dir / "codecs.json");
    if (!in) throw IoError("missing codecs.json; run fit-codecs first");
    return TableCodecs::from_json(nlohmann::json::parse(in));
}

ctgan::GanModel load_gan_file(const fs::path& out_dir) {
    std::ifstream in(out_dir / "gan.bin", std::ios::binary);
    if (!in) throw IoError("missing gan.bin; run train-ctgan first");
    return ctgan::load_gan(in);
}

int class_index(const std::vector<std::string>& classes, const std::string& name) {
    for (size_t i = 0; i < classes.size(); ++i)
        if (classes[i] == name) return static_cast<int>(i);
    throw ConfigError("unknown class name: " + name);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Data-balancing and intrusion-detection benchmarking toolkit"};
    app.require_subcommand(1);

    CommonOpts o;
    std::string arm = "ctgansamp", kind = "dt", test_name, model_path, output_path, class_name;
    long n_generate = 100;

    auto* c_ingest = app.add_subcommand("ingest", "parse raw files into canonical datasets");
    add_common(c_ingest, o);
    auto* c_codecs = app.add_subcommand("fit-codecs", "fit per-column transforms");
    add_common(c_codecs, o);
    auto* c_gan = app.add_subcommand("train-ctgan", "train the conditional GAN");
    add_common(c_gan, o);
    auto* c_gen = app.add_subcommand("generate", "sample rows from a trained GAN");
    add_common(c_gen, o);
    c_gen->add_option("--n", n_generate, "rows to generate");
    c_gen->add_option("--class", class_name, "condition every row on this class");
    auto* c_bal = app.add_subcommand("balance", "produce a balanced training set");
    add_common(c_bal, o);
    c_bal->add_option("--arm", arm, "rndosamp | ctgansamp")
        ->check(CLI::IsMember({"rndosamp", "ctgansamp"}));
    auto* c_train = app.add_subcommand("train", "train one classifier on one arm");
    add_common(c_train, o);
    c_train->add_option("--arm", arm, "org | rndosamp | ctgansamp")
        ->check(CLI::IsMember({"org", "rndosamp", "ctgansamp"}));
    c_train->add_option("--classifier", kind, "dt|rf|nb|svm|fnn|lstm|cnn")->required();
    auto* c_eval = app.add_subcommand("evaluate", "evaluate a saved model on a test set");
    add_common(c_eval, o);
    c_eval->add_option("--model", model_path, "saved model file")->required();
    c_eval->add_option("--test", test_name, "configured test-set name")->required();
    auto* c_exp = app.add_subcommand("experiment", "run the full arm x classifier grid");
    add_common(c_exp, o);
    auto* c_rep = app.add_subcommand("report", "render tables from an existing report");
    add_common(c_rep, o);
    auto* c_export = app.add_subcommand("export-predictions", "per-sample prediction CSV");
    add_common(c_export, o);
    c_export->add_option("--model", model_path, "saved model file")->required();
    c_export->add_option("--test", test_name, "configured test-set name")->required();
    c_export->add_option("--output", output_path, "destination CSV")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = load_config(o);
        fs::path out_dir(cfg.out_dir);
        fs::create_directories(out_dir);

        if (c_ingest->parsed()) {
            auto data = prepared_data(cfg);
            std::ostringstream body;
            write_canonical(data.train, body);
            write_file(out_dir / "train.csv", body.str());
            for (const auto& [name, table] : data.tests) {
                std::ostringstream tb;
                write_canonical(table, tb);
                write_file(out_dir / ("test_" + runner::detail::sanitize(name) + ".csv"),
                           tb.str());
            }
            std::cout << "ingested " << data.train.n_rows() << " training rows and "
                      << data.tests.size() << " test sets\n";
        } else if (c_codecs->parsed()) {
            auto data = prepared_data(cfg);
            auto codecs = fit_and_save_codecs(cfg, data.train, out_dir);
            std::cout << "codecs written (hash " << codecs.hash() << ")\n";
        } else if (c_gan->parsed()) {
            auto data = prepared_data(cfg);
            auto codecs = fit_and_save_codecs(cfg, data.train, out_dir);
            auto layout = ctgan::build_layout(codecs);
            ctgan::GanConfig gc = cfg.gan;
            gc.seed = derive_seed(cfg.seed, "ctgan");
            if (cfg.profile == "desk") gc.epochs = std::min(gc.epochs, 30);
            Rng trng(derive_seed(gc.seed, "transform"));
            auto transformed = ctgan::transform_table(codecs, layout, data.train, trng);
            auto model = ctgan::train_gan(transformed, layout, gc);
            model.codec_hash = codecs.hash();
            std::ofstream gout(out_dir / "gan.bin", std::ios::binary);
            ctgan::save_gan(model, gout);
            write_file(out_dir / "gan.bin.hash", std::to_string(cfg.hash()));
            std::cout << "GAN trained for " << gc.epochs << " epochs\n";
        } else if (c_gen->parsed()) {
            auto codecs = load_codecs(out_dir);
            auto model = load_gan_file(out_dir);
            if (model.codec_hash != codecs.hash())
                throw StateError("gan.bin does not match codecs.json");
            std::optional<int> cond;
            FeatureTable probe;  // class list only
            if (!class_name.empty()) cond = class_index(probe.classes, class_name);
            Rng rng(derive_seed(cfg.seed, "cli-generate"));
            auto synth = ctgan::generate(model, codecs, n_generate, cond, rng);
            std::ostringstream body;
            write_canonical(synth, body);
            write_file(out_dir / "generated.csv", body.str());
            std::cout << "generated " << synth.n_rows() << " rows\n";
        } else if (c_bal->parsed()) {
            auto data = prepared_data(cfg);
            auto table = runner::build_arm_table(arm, data.train, cfg, out_dir);
            std::ostringstream body;
            write_canonical(table, body);
            write_file(out_dir / ("balanced_" + arm + ".csv"), body.str());
            auto plan = balance::make_plan(data.train, cfg.balance_preset);
            write_file(out_dir / ("balanced_" + arm + ".manifest.json"),
                       balance::balance_manifest(data.train, table, plan, arm).dump(2) + "\n");
            std::cout << "balanced " << arm << ": " << table.n_rows() << " rows\n";
        } else if (c_train->parsed()) {
            auto data = prepared_data(cfg);
            auto table = runner::build_arm_table(arm, data.train, cfg, out_dir);
            clf::ClassifierSpec spec = cfg.clf_defaults;
            spec.kind = kind;
            spec.seed = derive_seed(cfg.seed, "clf:" + arm + ":" + kind + ":rep0");
            auto model = clf::make_classifier(spec);
            model->fit(table);
            std::ofstream mout(out_dir / ("model_" + arm + "_" + kind + ".bin"),
                               std::ios::binary);
            clf::save_model(*model, mout);
            std::cout << "trained " << kind << " on " << arm << "\n";
        } else if (c_eval->parsed() || c_export->parsed()) {
            auto data = prepared_data(cfg);
            const FeatureTable* test = nullptr;
            for (const auto& [name, table] : data.tests)
                if (name == test_name) test = &table;
            if (!test) throw ConfigError("test set not in config: " + test_name);
            std::ifstream min(model_path, std::ios::binary);
            if (!min) throw IoError("cannot open model file: " + model_path);
            auto model = clf::load_model(min, cfg.clf_defaults);
            if (c_eval->parsed()) {
                auto result = runner::evaluate_model(*model, *test);
                std::cout << runner::detail::eval_to_json(result).dump(2) << "\n";
            } else {
                std::ostringstream body;
                runner::export_predictions(*model, *test, body);
                write_file(output_path, body.str());
                std::cout << "wrote " << test->n_rows() << " predictions\n";
            }
        } else if (c_exp->parsed()) {
            auto t0 = std::chrono::steady_clock::now();
            auto report = runner::run_experiment(cfg);
            auto t1 = std::chrono::steady_clock::now();
            nlohmann::json timings = {
                {"total_ms",
                 std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()}};
            std::vector<std::string> classes = {class_names().begin(), class_names().end()};
            runner::write_report_files(report, out_dir, classes, timings);
            std::cout << runner::render_tables(report);
            for (const auto& cell : report.cells)
                if (cell.failed) {
                    std::cerr << "cell " << cell.arm << "/" << cell.classifier
                              << " failed: " << cell.error << "\n";
                    return 3;
                }
        } else if (c_rep->parsed()) {
            std::ifstream rin(out_dir / "report.json");
            if (!rin) throw IoError("missing report.json; run experiment first");
            auto report = runner::report_from_json(nlohmann::json::parse(rin),
                                                   static_cast<int>(kNumClasses));
            std::cout << runner::render_tables(report);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
