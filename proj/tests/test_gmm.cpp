#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "idsbal/gmm.hpp"

using namespace idsbal;

namespace {

std::vector<double> gaussian_sample(size_t n, double mu, double sd, Rng& rng) {
    std::normal_distribution<double> d(mu, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_CASE("single unit Gaussian collapses to one mode") {
    Rng rng(42);
    auto values = gaussian_sample(5000, 0.0, 1.0, rng);
    auto g = gmm::fit_column_gmm(values, 10, 1);
    REQUIRE(g.modes.size() == 1);
    CHECK(std::fabs(g.modes[0].mean) < 0.1);
    CHECK(g.modes[0].weight == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("separated two-Gaussian mixture is recovered") {
    Rng rng(43);
    auto values = gaussian_sample(2500, -5.0, 1.0, rng);
    auto more = gaussian_sample(2500, 5.0, 1.0, rng);
    values.insert(values.end(), more.begin(), more.end());
    auto g = gmm::fit_column_gmm(values, 10, 2);
    REQUIRE(g.modes.size() == 2);
    double lo = std::min(g.modes[0].mean, g.modes[1].mean);
    double hi = std::max(g.modes[0].mean, g.modes[1].mean);
    CHECK(std::fabs(lo + 5.0) < 0.3);
    CHECK(std::fabs(hi - 5.0) < 0.3);
    CHECK(g.modes[0].weight + g.modes[1].weight == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("constant column degenerates to a floored single mode") {
    auto g = gmm::fit_column_gmm({3.5, 3.5, 3.5}, 10, 5);
    REQUIRE(g.modes.size() == 1);
    CHECK(g.modes[0].mean == doctest::Approx(3.5));
    CHECK(g.modes[0].std >= gmm::kStdFloor);
}

TEST_CASE("fit rejects degenerate input and is deterministic") {
    CHECK_THROWS_AS(gmm::fit_column_gmm({}, 10, 1), DataError);
    CHECK_THROWS_AS(gmm::fit_column_gmm({1.0, std::nan("")}, 10, 1), DataError);
    CHECK_THROWS_AS(gmm::fit_column_gmm({1.0}, 0, 1), ConfigError);

    Rng rng(7);
    auto values = gaussian_sample(500, 2.0, 3.0, rng);
    auto a = gmm::fit_column_gmm(values, 5, 99);
    auto b = gmm::fit_column_gmm(values, 5, 99);
    REQUIRE(a.modes.size() == b.modes.size());
    for (size_t i = 0; i < a.modes.size(); ++i) {
        CHECK(a.modes[i].weight == b.modes[i].weight);
        CHECK(a.modes[i].mean == b.modes[i].mean);
        CHECK(a.modes[i].std == b.modes[i].std);
    }
}

TEST_CASE("EM log-likelihood is monotone on randomized columns") {
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        Rng rng(seed);
        std::uniform_int_distribution<int> nmodes(1, 3);
        std::uniform_real_distribution<double> mu(-10, 10), sd(0.2, 3.0);
        std::vector<double> values;
        int k = nmodes(rng);
        for (int m = 0; m < k; ++m) {
            auto part = gaussian_sample(200, mu(rng), sd(rng), rng);
            values.insert(values.end(), part.begin(), part.end());
        }
        auto g = gmm::fit_column_gmm(values, 5, seed);
        const auto& ll = g.log_likelihood_history;
        REQUIRE(!ll.empty());
        for (size_t i = 1; i < ll.size(); ++i) CHECK(ll[i] >= ll[i - 1] - 1e-9);
        double wsum = 0;
        for (const auto& m : g.modes) {
            CHECK(m.std >= gmm::kStdFloor);
            CHECK(m.weight > 0);
            wsum += m.weight;
        }
        CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("mode probabilities") {
    gmm::ColumnGMM single;
    single.modes = {{1.0, 0.0, 1.0}};
    auto p = gmm::mode_probabilities(single, 123.0);
    REQUIRE(p.size() == 1);
    CHECK(p[0] == doctest::Approx(1.0));

    gmm::ColumnGMM sym;
    sym.modes = {{0.5, -2.0, 1.0}, {0.5, 2.0, 1.0}};
    auto mid = gmm::mode_probabilities(sym, 0.0);
    CHECK(mid[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(mid[1] == doctest::Approx(0.5).epsilon(1e-12));

    gmm::ColumnGMM far;
    far.modes = {{0.5, -50.0, 1.0}, {0.5, 50.0, 1.0}};
    auto at = gmm::mode_probabilities(far, -50.0);
    CHECK(at[0] > 0.99);
}

TEST_CASE("normalize and denormalize") {
    gmm::ColumnGMM single;
    single.modes = {{1.0, 0.0, 1.0}};
    Rng rng(1);
    auto nv = gmm::normalize_value(single, 0.0, rng);
    CHECK(nv.alpha == 0.0);
    CHECK(nv.mode == 0);
    CHECK(gmm::normalize_value(single, 8.0, rng).alpha == 1.0);  // clipped
    CHECK(gmm::normalize_value(single, -9.0, rng).alpha == -1.0);

    // sampling statistics at the midpoint of a symmetric mixture
    gmm::ColumnGMM sym;
    sym.modes = {{0.5, -2.0, 1.0}, {0.5, 2.0, 1.0}};
    int first = 0;
    for (int i = 0; i < 10000; ++i)
        if (gmm::normalize_value(sym, 0.0, rng).mode == 0) ++first;
    CHECK(std::fabs(first / 10000.0 - 0.5) < 0.02);

    CHECK(gmm::denormalize_value(single, {0.0, 0}) == 0.0);
    gmm::ColumnGMM m;
    m.modes = {{1.0, 2.0, 0.5}};
    CHECK(gmm::denormalize_value(m, {1.0, 0}) == doctest::Approx(4.0));
    CHECK_THROWS_AS(gmm::denormalize_value(m, {0.0, 3}), DataError);

    // forced-mode round trip on unclipped values
    Rng vr(77);
    std::uniform_real_distribution<double> d(-3.5, 3.5);
    for (int i = 0; i < 1000; ++i) {
        double v = d(vr);
        auto probs = gmm::mode_probabilities(single, v);
        (void)probs;
        gmm::ModeNormalizedValue forced{(v - single.modes[0].mean) / (4.0 * single.modes[0].std),
                                        0};
        CHECK(std::fabs(gmm::denormalize_value(single, forced) - v) < 1e-9);
    }
}
