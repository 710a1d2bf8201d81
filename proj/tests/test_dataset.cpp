#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "idsbal/dataset.hpp"

using namespace idsbal;

namespace {

AttackMap shipped_attack_map() {
    std::ifstream in(std::string(IDSBAL_DATA_DIR) + "/attack_map.csv");
    REQUIRE(in.good());
    return AttackMap::parse(in);
}

}  // namespace

TEST_CASE("parse_records handles well-formed and malformed input") {
    Rng rng(1);
    std::string body = testhelp::make_raw_line(0, rng) + "\n" + testhelp::make_raw_line(1, rng) +
                       "\n\n" + testhelp::make_raw_line(2, rng) + "\n";
    std::istringstream in(body);
    auto recs = parse_records(in);
    CHECK(recs.size() == 3);
    CHECK(recs[0].features.size() == 41);
    CHECK(recs[0].attack_name == "normal");

    std::istringstream bad("a,b,c\n");
    CHECK_THROWS_AS(parse_records(bad), ParseError);
    try {
        std::istringstream bad2("x\ny,z\n");
        parse_records(bad2);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }

    std::istringstream empty("");
    CHECK_THROWS_AS(parse_records(empty), DataError);
}

TEST_CASE("attack map covers the standard names") {
    auto m = shipped_attack_map();
    CHECK(map_attack_label(m, "normal") == ClassLabel::Normal);
    CHECK(map_attack_label(m, "neptune") == ClassLabel::DoS);
    CHECK(map_attack_label(m, "buffer_overflow") == ClassLabel::U2R);
    CHECK(map_attack_label(m, "satan") == ClassLabel::Probe);
    CHECK(map_attack_label(m, "guess_passwd") == ClassLabel::R2L);
    CHECK_THROWS_AS(map_attack_label(m, "no_such_attack"), DataError);
}

TEST_CASE("label encoding is alphabetical and 1-based") {
    auto m = fit_label_encoding({"tcp", "smtp", "ftp", "http"});
    CHECK(m.at("ftp") == 1);
    CHECK(m.at("http") == 2);
    CHECK(m.at("smtp") == 3);
    CHECK(m.at("tcp") == 4);
    CHECK(apply_label_encoding(m, "http") == 2);
    CHECK(apply_label_encoding(m, "icmp") == 0);  // unseen categories

    auto dup = fit_label_encoding({"b", "a", "b"});
    CHECK(dup.at("a") == 1);
    CHECK(dup.at("b") == 2);
    CHECK(fit_label_encoding({"a"}).at("a") == 1);
}

TEST_CASE("L2 norms: fit, sentinel, apply") {
    FeatureTable t;
    t.columns = {{"a", ColumnKind::Continuous, {}, {}},
                 {"z", ColumnKind::Continuous, {}, {}},
                 {"d", ColumnKind::Discrete, {}, {}}};
    t.data = {3, 0, 1, 4, 0, 2};
    t.labels = {0, 0};
    auto norms = fit_l2_norms(t);
    CHECK(norms[0] == doctest::Approx(5.0));
    CHECK(norms[1] == 1.0);  // zero-norm sentinel
    CHECK(norms[2] == 1.0);  // discrete columns untouched
    apply_l2_norms(norms, t);
    CHECK(t.at(0, 0) == doctest::Approx(0.6));
    CHECK(t.at(1, 0) == doctest::Approx(0.8));
    CHECK(t.at(0, 1) == 0.0);
    CHECK(t.at(1, 2) == 2.0);

    // fitted split renormalizes to unit columns
    double s = t.at(0, 0) * t.at(0, 0) + t.at(1, 0) * t.at(1, 0);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-9));

    // training norms reused on a test split
    FeatureTable test = t;
    test.data = {10, 1, 1, 10, 1, 1};
    apply_l2_norms(norms, test);
    CHECK(test.at(0, 0) == doctest::Approx(2.0));

    std::vector<double> wrong = {1.0};
    CHECK_THROWS_AS(apply_l2_norms(wrong, t), ShapeError);

    FeatureTable nan_table;
    nan_table.columns = {{"a", ColumnKind::Continuous, {}, {}}};
    nan_table.data = {std::nan("")};
    nan_table.labels = {0};
    CHECK_THROWS_AS(fit_l2_norms(nan_table), DataError);
}

TEST_CASE("ingest end to end: schema, encoding, distribution") {
    auto attacks = shipped_attack_map();
    std::istringstream raw(testhelp::make_raw_file({50, 30, 10, 2, 8}, 7));
    auto recs = parse_records(raw);
    auto schema = fit_schema(recs);
    auto table = build_table(recs, schema, attacks);

    CHECK(table.n_rows() == 100);
    CHECK(table.n_cols() == kNumFeatures);
    CHECK(table.columns[1].kind == ColumnKind::Discrete);
    CHECK(table.columns[0].kind == ColumnKind::Continuous);

    auto dist = class_distribution(table);
    CHECK(dist.counts == std::vector<std::int64_t>{50, 30, 10, 2, 8});
    CHECK(dist.percentages[0] == doctest::Approx(50.0));
    CHECK(dist.total == 100);

    double psum = 0;
    for (double p : dist.percentages) psum += p;
    CHECK(psum == doctest::Approx(100.0));

    FeatureTable empty;
    empty.columns = table.columns;
    auto edist = class_distribution(empty);
    for (auto c : edist.counts) CHECK(c == 0);
}

TEST_CASE("canonical format round-trips bit-exactly") {
    auto attacks = shipped_attack_map();
    std::istringstream raw(testhelp::make_raw_file({5, 5, 5, 2, 3}, 11));
    auto recs = parse_records(raw);
    auto schema = fit_schema(recs);
    auto table = build_table(recs, schema, attacks);
    apply_l2_norms(fit_l2_norms(table), table);

    std::ostringstream out;
    write_canonical(table, out);
    std::istringstream back(out.str());
    auto again = read_canonical(back);

    REQUIRE(again.n_rows() == table.n_rows());
    REQUIRE(again.n_cols() == table.n_cols());
    CHECK(again.labels == table.labels);
    for (size_t r = 0; r < table.n_rows(); ++r)
        for (size_t c = 0; c < table.n_cols(); ++c) CHECK(again.at(r, c) == table.at(r, c));

    std::ostringstream out2;
    write_canonical(again, out2);
    CHECK(out.str() == out2.str());

    std::istringstream bad("a:continuous,b:continuous\n1,2\n");
    CHECK_THROWS_AS(read_canonical(bad), ParseError);
}
