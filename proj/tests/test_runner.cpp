#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "idsbal/runner.hpp"

using namespace idsbal;
namespace fs = std::filesystem;

namespace {

struct Workspace {
    fs::path dir;
    explicit Workspace(const std::string& name) {
        dir = fs::temp_directory_path() / ("idsbal_runner_" + name);
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }

    std::string write(const std::string& name, const std::string& body) {
        fs::path p = dir / name;
        std::ofstream out(p, std::ios::binary);
        out << body;
        return p.string();
    }
};

std::string attack_map_path() { return std::string(IDSBAL_DATA_DIR) + "/attack_map.csv"; }

runner::ExperimentConfig small_config(Workspace& ws) {
    runner::ExperimentConfig cfg;
    cfg.train_path = ws.write("train.txt", testhelp::make_raw_file({200, 150, 120, 60, 70}, 1));
    cfg.test_sets = {{"TestA", ws.write("test.txt", testhelp::make_raw_file({60, 50, 40, 20, 30}, 2))}};
    cfg.attack_map_path = attack_map_path();
    cfg.arms = {"org", "rndosamp"};
    cfg.classifiers = {"dt", "nb"};
    cfg.seed = 5;
    cfg.seed_set = true;
    cfg.profile = "full";
    return cfg;
}

}  // namespace

TEST_CASE("config parsing accepts the documented keys") {
    std::istringstream in(
        "# comment\n"
        "[data]\n"
        "train = train.txt\n"
        "attack_map = map.csv\n"
        "test.KDDTest_plus = test.txt\n"
        "\n"
        "[experiment]\n"
        "arms = org, ctgansamp\n"
        "classifiers = dt,svm\n"
        "balance_preset = paper\n"
        "repeats = 3\n"
        "[ctgan]\n"
        "epochs = 12\n"
        "batch = 64\n"
        "noise_dim = 16\n"
        "hidden = 32\n"
        "max_modes = 4\n"
        "[classifier]\n"
        "epochs = 7\n"
        "trees = 9\n"
        "[run]\n"
        "seed = 99\n"
        "out_dir = results\n"
        "profile = desk\n"
        "workers = 2\n");
    auto c = runner::parse_config(in);
    CHECK(c.train_path == "train.txt");
    CHECK(c.test_sets.size() == 1);
    CHECK(c.test_sets[0].name == "KDDTest_plus");
    CHECK(c.arms == std::vector<std::string>{"org", "ctgansamp"});
    CHECK(c.classifiers == std::vector<std::string>{"dt", "svm"});
    CHECK(c.balance_preset == "paper");
    CHECK(c.repeats == 3);
    CHECK(c.gan.epochs == 12);
    CHECK(c.gan.batch == 64);
    CHECK(c.max_modes == 4);
    CHECK(c.clf_defaults.epochs == 7);
    CHECK(c.clf_defaults.trees == 9);
    CHECK(c.seed == 99);
    CHECK(c.seed_set);
    CHECK(c.out_dir == "results");
    CHECK(c.profile == "desk");
    CHECK(c.workers == 2);
}

TEST_CASE("config parsing rejects unknown input with line numbers") {
    auto expect_error = [](const std::string& body, const std::string& fragment) {
        std::istringstream in(body);
        try {
            runner::parse_config(in);
            FAIL("expected ConfigError for: " << body);
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find(fragment) != std::string::npos);
        }
    };
    expect_error("[data]\nbogus = 1\n", "line 2");
    expect_error("[data]\nbogus = 1\n", "bogus");
    expect_error("[nosuch]\n", "unknown section");
    expect_error("[run]\nprofile = fast\n", "desk or full");
    expect_error("[run]\nworkers = 0\n", "workers");
    expect_error("[experiment]\nrepeats = 0\n", "repeats");
    expect_error("[experiment]\narms = org, bogus\n", "unknown arm");
    expect_error("[experiment]\nclassifiers = dt, nope\n", "unknown classifier");
    expect_error("[run]\nseed = banana\n", "bad numeric");
    expect_error("key = 1\n", "outside any section");
    expect_error("[data]\nnot-a-pair\n", "key = value");

    runner::ExperimentConfig no_seed;
    no_seed.train_path = "x";
    CHECK_THROWS_AS(runner::validate_paths(no_seed), ConfigError);
}

TEST_CASE("ingest and stratified subsampling") {
    Workspace ws("ingest");
    auto cfg = small_config(ws);
    auto data = runner::ingest_all(cfg);
    CHECK(data.train.n_rows() == 600);
    CHECK(data.train.n_cols() == kNumFeatures);
    CHECK(data.tests.size() == 1);
    CHECK(data.tests[0].first == "TestA");
    CHECK(data.tests[0].second.n_rows() == 200);

    Rng rng(3);
    auto sub = runner::stratified_subsample(data.train, 0.10, rng);
    auto dist = class_distribution(sub);
    CHECK(dist.counts == std::vector<std::int64_t>{20, 15, 12, 6, 7});

    // ceil keeps one row of a near-extinct class
    Rng rng2(4);
    auto tiny = runner::stratified_subsample(data.train, 0.001, rng2);
    auto tdist = class_distribution(tiny);
    for (auto c : tdist.counts) CHECK(c == 1);
}

TEST_CASE("prediction export is stable and named by class") {
    Workspace ws("export");
    auto cfg = small_config(ws);
    auto data = runner::ingest_all(cfg);
    clf::ClassifierSpec spec;
    spec.kind = "dt";
    clf::DecisionTree dt(spec);
    dt.fit(data.train);

    std::ostringstream a, b;
    runner::export_predictions(dt, data.tests[0].second, a);
    runner::export_predictions(dt, data.tests[0].second, b);
    CHECK(a.str() == b.str());

    std::istringstream lines(a.str());
    std::string header;
    std::getline(lines, header);
    CHECK(header == "true,predicted,Normal,DoS,Probe,U2R,R2L");
    size_t rows = 0;
    std::string line;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 200);
    CHECK(a.str().find("Normal") != std::string::npos);
}

TEST_CASE("table rendering") {
    runner::ExperimentReport r;
    runner::CellResult ok;
    ok.arm = "org";
    ok.classifier = "dt";
    runner::EvalResult e;
    e.confusion.n_classes = 2;
    e.confusion.cells = {3, 1, 0, 2};
    e.metrics = eval::weighted_metrics(e.confusion);
    e.metrics.accuracy = 0.7315;
    ok.by_test["TestA"] = e;
    runner::CellResult bad;
    bad.arm = "rndosamp";
    bad.classifier = "dt";
    bad.failed = true;
    bad.error = "boom";
    r.cells = {ok, bad};
    r.p_values["TestA"]["dt"]["org vs rndosamp"] = 0.00123;

    std::string text = runner::render_tables(r);
    CHECK(text.find("== TestA ==") != std::string::npos);
    CHECK(text.find("0.7315") != std::string::npos);
    CHECK(text.find("\xE2\x80\x94") != std::string::npos);  // failed cells render as a dash
    CHECK(text.find("org vs rndosamp = 1.23e-03") != std::string::npos);
}

TEST_CASE("cell json round trip keeps correctness strings") {
    runner::CellResult c;
    c.arm = "org";
    c.classifier = "nb";
    runner::EvalResult e;
    e.confusion.n_classes = 2;
    e.confusion.cells = {2, 0, 1, 1};
    e.metrics = eval::weighted_metrics(e.confusion);
    e.correctness = {1, 0, 1, 1};
    c.by_test["T"] = e;
    auto j = runner::cell_to_json(c, 42);
    CHECK(j["config_hash"] == 42);
    CHECK(j["tests"]["T"]["correctness"] == "1011");
    auto back = runner::cell_from_json(j, 2);
    CHECK(back.by_test["T"].correctness == e.correctness);
    CHECK(back.by_test["T"].confusion.cells == e.confusion.cells);
}

TEST_CASE("experiment runs are deterministic and resumable") {
    Workspace ws("exp");
    auto cfg = small_config(ws);

    cfg.out_dir = (ws.dir / "out_a").string();
    auto ra = runner::run_experiment(cfg);
    REQUIRE(ra.cells.size() == 4);
    for (const auto& c : ra.cells) {
        CHECK(!c.failed);
        CHECK(c.by_test.count("TestA") == 1);
        CHECK(c.by_test.at("TestA").metrics.accuracy > 0.25);
    }
    CHECK(ra.p_values.at("TestA").at("dt").count("org vs rndosamp") == 1);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "cell_org_dt.json"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "model_rndosamp_nb.bin"));
    CHECK(fs::exists(fs::path(cfg.out_dir) / "balanced_rndosamp.csv"));

    // resume: a second run over the same directory reuses every cell
    auto cell_path = fs::path(cfg.out_dir) / "cell_org_dt.json";
    auto stamp = fs::last_write_time(cell_path);
    auto rb = runner::run_experiment(cfg);
    CHECK(fs::last_write_time(cell_path) == stamp);
    CHECK(runner::report_to_json(rb).dump() == runner::report_to_json(ra).dump());

    // determinism: a fresh directory yields a byte-identical report
    cfg.out_dir = (ws.dir / "out_b").string();
    auto rc = runner::run_experiment(cfg);
    CHECK(runner::report_to_json(rc).dump() == runner::report_to_json(ra).dump());

    // a stale cell written under a different config hash is recomputed
    cfg.out_dir = (ws.dir / "out_c").string();
    fs::create_directories(cfg.out_dir);
    auto stale = runner::cell_to_json(ra.cells[0], cfg.hash() ^ 7);
    std::ofstream(fs::path(cfg.out_dir) / "cell_org_dt.json") << stale.dump();
    auto rd = runner::run_experiment(cfg);
    CHECK(runner::report_to_json(rd).dump() == runner::report_to_json(ra).dump());

    // workers > 1 change nothing about the results
    cfg.out_dir = (ws.dir / "out_d").string();
    cfg.workers = 3;
    auto re = runner::run_experiment(cfg);
    runner::ExperimentReport re_copy = re;
    CHECK(runner::report_to_json(re).dump() == runner::report_to_json(ra).dump());

    // write_report_files emits the documented artifact set
    runner::write_report_files(re_copy, cfg.out_dir, {"Normal", "DoS", "Probe", "U2R", "R2L"},
                               nlohmann::json::object());
    for (const char* name : {"report.json", "timings.json", "tables.txt", "metrics.csv",
                             "confusion_org_dt_TestA.csv"})
        CHECK(fs::exists(fs::path(cfg.out_dir) / name));
    std::ifstream rep(fs::path(cfg.out_dir) / "report.json");
    auto j = nlohmann::json::parse(rep);
    CHECK(j["timings"] == "timings.json");
    auto parsed = runner::report_from_json(j, 5);
    CHECK(parsed.config_hash == re_copy.config_hash);
    CHECK(parsed.cells.size() == re_copy.cells.size());
}
