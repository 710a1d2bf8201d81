#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <random>
#include <sstream>

#include "idsbal/codecs.hpp"
#include "idsbal/ctgan.hpp"

using namespace idsbal;
using nd::Tensor;

namespace {

// One discrete(2) column plus one continuous column whose mean depends on the
// category; labels mirror the category so the table has a usable label column.
FeatureTable toy_table(size_t n, double mean_a, double mean_b, double sigma, std::uint64_t seed) {
    FeatureTable t;
    t.columns = {{"d", ColumnKind::Discrete, {}, {}}, {"c", ColumnKind::Continuous, {}, {}}};
    t.classes = {"neg", "pos"};
    Rng rng(seed);
    std::normal_distribution<double> na(mean_a, sigma), nb(mean_b, sigma);
    for (size_t i = 0; i < n; ++i) {
        int cat = i % 2 == 0 ? 1 : 2;
        t.data.push_back(cat);
        t.data.push_back(cat == 1 ? na(rng) : nb(rng));
        t.labels.push_back(cat - 1);
    }
    return t;
}

ctgan::GanConfig small_config(std::uint64_t seed, int epochs) {
    ctgan::GanConfig cfg;
    cfg.epochs = epochs;
    cfg.batch = 100;
    cfg.noise_dim = 16;
    cfg.hidden = 64;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("layout span arithmetic") {
    FeatureTable t = toy_table(50, 0.0, 0.0, 1.0, 1);
    auto codecs = TableCodecs::fit(t, 3, 1);
    auto layout = ctgan::build_layout(codecs);
    long modes = static_cast<long>(codecs.gmms[1]->modes.size());
    // d one-hot (2) + c (1 alpha + modes) + label one-hot (2)
    CHECK(layout.width == 2 + 1 + modes + 2);
    CHECK(layout.cond_width == 2 + 2);
    CHECK(layout.label_column == 2);
    CHECK(layout.discrete_columns == std::vector<int>{0, 2});

    // all-discrete table: no alpha slots anywhere
    FeatureTable disc;
    disc.columns = {{"a", ColumnKind::Discrete, {}, {}}, {"b", ColumnKind::Discrete, {}, {}}};
    disc.classes = {"x", "y"};
    disc.data = {1, 1, 2, 2, 3, 1};
    disc.labels = {0, 1, 0};
    auto dc = TableCodecs::fit(disc, 3, 1);
    auto dl = ctgan::build_layout(dc);
    CHECK(dl.width == 3 + 2 + 2);
    CHECK(dl.cond_width == 3 + 2 + 2);
}

TEST_CASE("transform and inverse transform round-trip") {
    FeatureTable t = toy_table(1000, -1.0, 1.0, 0.5, 3);
    auto codecs = TableCodecs::fit(t, 3, 3);
    auto layout = ctgan::build_layout(codecs);
    Rng rng(9);
    std::vector<double> vec(static_cast<size_t>(layout.width));
    size_t compared = 0;
    for (size_t r = 0; r < t.n_rows(); ++r) {
        ctgan::transform_row(codecs, layout, t.row(r), t.labels[r], rng, vec.data());
        // exactly one hot slot per discrete span, one mode per continuous span
        for (const auto& s : layout.columns) {
            double hot = 0;
            if (s.discrete)
                for (long j = 0; j < s.n_categories; ++j) hot += vec[size_t(s.onehot_offset + j)];
            else
                for (long j = 0; j < s.n_modes; ++j) hot += vec[size_t(s.mode_offset + j)];
            CHECK(hot == 1.0);
        }
        auto [row, label] = ctgan::inverse_transform_row(codecs, layout, vec.data());
        CHECK(row[0] == t.at(r, 0));  // discrete cells exact
        CHECK(label == t.labels[r]);
        if (std::fabs(vec[size_t(layout.columns[1].alpha_offset)]) < 1.0 - 1e-12) {
            CHECK(std::fabs(row[1] - t.at(r, 1)) < 1e-6);
            ++compared;
        }
    }
    CHECK(compared > 900);  // clipping is the rare case

    // argmax tie rule: all-zero one-hot span decodes to the first category
    std::fill(vec.begin(), vec.end(), 0.0);
    auto [row, label] = ctgan::inverse_transform_row(codecs, layout, vec.data());
    CHECK(row[0] == codecs.categories[0][0]);
    CHECK(label == codecs.label_categories[0]);

    vec[0] = std::nan("");
    CHECK_THROWS_AS(ctgan::inverse_transform_row(codecs, layout, vec.data()), DataError);
}

TEST_CASE("training-by-sampling follows the log-frequency law") {
    ctgan::FreqTables f = ctgan::FreqTables::from_counts({{99.0, 1.0}}, {0});
    Rng rng(13);
    int hits_b = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i)
        if (ctgan::sample_condition(f, rng).slot == 1) ++hits_b;
    double want = std::log(2.0) / (std::log(100.0) + std::log(2.0));
    CHECK(std::fabs(double(hits_b) / draws - want) < 0.02);

    ctgan::FreqTables eq =
        ctgan::FreqTables::from_counts({{std::exp(1.0) - 1.0, std::exp(1.0) - 1.0}}, {0});
    int hits_a = 0;
    for (int i = 0; i < draws; ++i)
        if (ctgan::sample_condition(eq, rng).slot == 0) ++hits_a;
    CHECK(std::fabs(double(hits_a) / draws - 0.5) < 0.02);

    ctgan::FreqTables single = ctgan::FreqTables::from_counts({{5.0}}, {0});
    for (int i = 0; i < 100; ++i) {
        auto cv = ctgan::sample_condition(single, rng);
        CHECK(cv.column == 0);
        CHECK(cv.slot == 0);
    }

    ctgan::FreqTables none;
    CHECK_THROWS_AS(ctgan::sample_condition(none, rng), ConfigError);
}

TEST_CASE("conditioned row sampling is uniform over matches") {
    FeatureTable t = toy_table(100, 0.0, 0.0, 1.0, 5);
    auto codecs = TableCodecs::fit(t, 3, 5);
    auto layout = ctgan::build_layout(codecs);
    Rng rng(7);
    auto table = ctgan::transform_table(codecs, layout, t, rng);

    ctgan::CondVector cv{0, 0};  // category code 1 of column d
    const auto& matches = table.index[0][0];
    REQUIRE(matches.size() == 50);
    for (int i = 0; i < 200; ++i) {
        size_t r = ctgan::sample_conditioned_row(table, cv, rng);
        CHECK(t.at(r, 0) == 1.0);
    }

    // uniformity over a 2-row match set
    FeatureTable two = toy_table(4, 0.0, 0.0, 1.0, 6);
    auto c2 = TableCodecs::fit(two, 3, 6);
    auto l2 = ctgan::build_layout(c2);
    auto tt2 = ctgan::transform_table(c2, l2, two, rng);
    REQUIRE(tt2.index[0][0].size() == 2);
    int first = 0;
    for (int i = 0; i < 10000; ++i)
        if (ctgan::sample_conditioned_row(tt2, {0, 0}, rng) == tt2.index[0][0][0]) ++first;
    CHECK(std::fabs(first / 10000.0 - 0.5) < 0.02);

    ctgan::TransformedTable empty_match = tt2;
    empty_match.index[0][0].clear();
    CHECK_THROWS_AS(ctgan::sample_conditioned_row(empty_match, {0, 0}, rng), DataError);
}

TEST_CASE("gradient penalty matches finite differences") {
    Rng rng(21);
    long in = 6, h = 5, B = 3;
    auto rt = [&](std::vector<long> s) {
        std::uniform_real_distribution<double> d(-1, 1);
        Tensor t(std::move(s));
        for (auto& x : t.v) x = d(rng);
        return t;
    };
    ctgan::Critic critic;
    critic.w1 = nd::param(rt({in, h}));
    critic.b1 = nd::param(rt({h}));
    critic.w2 = nd::param(rt({h, h}));
    critic.b2 = nd::param(rt({h}));
    critic.w3 = nd::param(rt({h, 1}));
    critic.b3 = nd::param(rt({1}));
    Tensor xhat = rt({B, in});
    const double lambda = 10.0;

    nd::zero_grad(critic.params());
    double penalty = ctgan::detail::add_gradient_penalty(critic, xhat, lambda);
    CHECK(penalty >= 0.0);
    std::vector<Tensor> analytic;
    for (nd::NodePtr w : {critic.w1, critic.w2, critic.w3}) analytic.push_back(w->grad);

    const double step = 1e-6;
    std::array<nd::NodePtr, 3> weights = {critic.w1, critic.w2, critic.w3};
    for (size_t wi = 0; wi < weights.size(); ++wi) {
        nd::NodePtr w = weights[wi];
        for (long i = 0; i < w->value.size(); ++i) {
            double saved = w->value.at(i);
            w->value.at(i) = saved + step;
            nd::zero_grad(critic.params());
            double up = ctgan::detail::add_gradient_penalty(critic, xhat, lambda);
            w->value.at(i) = saved - step;
            nd::zero_grad(critic.params());
            double down = ctgan::detail::add_gradient_penalty(critic, xhat, lambda);
            w->value.at(i) = saved;
            double fd = lambda * (up - down) / (2 * step);
            double got = analytic[wi].at(i);
            CHECK(std::fabs(got - fd) <= 1e-4 * std::max({1.0, std::fabs(got), std::fabs(fd)}));
        }
    }

    // bias gradients of the penalty are identically zero
    nd::zero_grad(critic.params());
    ctgan::detail::add_gradient_penalty(critic, xhat, lambda);
    for (nd::NodePtr b : {critic.b1, critic.b2, critic.b3})
        for (long i = 0; i < b->grad.size(); ++i) CHECK(b->grad.at(i) == 0.0);
}

TEST_CASE("condition cross entropy gradient") {
    Rng rng(31);
    FeatureTable t = toy_table(40, 0.0, 0.0, 1.0, 8);
    auto codecs = TableCodecs::fit(t, 2, 8);
    auto layout = ctgan::build_layout(codecs);
    std::uniform_real_distribution<double> d(-1, 1);
    auto logits = nd::param(Tensor({4, layout.width}));
    for (auto& x : logits->value.v) x = d(rng);
    std::vector<ctgan::CondVector> conds = {{0, 0}, {0, 1}, {2, 0}, {2, 1}};

    auto build = [&]() {
        auto probs = nd::softmax(logits);
        return ctgan::detail::condition_cross_entropy(probs, layout, conds);
    };
    auto loss = build();
    nd::backward(loss);
    Tensor analytic = logits->grad;
    const double h = 1e-6;
    for (long i = 0; i < logits->value.size(); ++i) {
        double saved = logits->value.at(i);
        logits->value.at(i) = saved + h;
        double up = build()->value.at(0);
        logits->value.at(i) = saved - h;
        double down = build()->value.at(0);
        logits->value.at(i) = saved;
        double fd = (up - down) / (2 * h);
        CHECK(std::fabs(analytic.at(i) - fd) <=
              1e-4 * std::max({1.0, std::fabs(fd), std::fabs(analytic.at(i))}));
    }
}

TEST_CASE("zero-epoch training and untrained generation") {
    FeatureTable t = toy_table(100, -1.0, 1.0, 0.5, 10);
    auto codecs = TableCodecs::fit(t, 2, 10);
    auto layout = ctgan::build_layout(codecs);
    Rng rng(10);
    auto table = ctgan::transform_table(codecs, layout, t, rng);
    auto model = ctgan::train_gan(table, layout, small_config(10, 0));
    CHECK(model.loss_history.empty());
    CHECK_THROWS_AS(ctgan::generate_transformed(model, 10, {}, rng), StateError);
    CHECK(ctgan::generate_transformed(model, 0, {}, rng).empty());
}

TEST_CASE("training learns the toy conditional structure") {
    FeatureTable t = toy_table(500, 1.0, 3.0, 1.0, 12);
    auto codecs = TableCodecs::fit(t, 2, 12);
    auto layout = ctgan::build_layout(codecs);
    Rng rng(12);
    auto table = ctgan::transform_table(codecs, layout, t, rng);
    auto model = ctgan::train_gan(table, layout, small_config(12, 300));
    model.codec_hash = codecs.hash();
    REQUIRE(model.loss_history.size() == 300);

    // determinism: identical loss histories on rerun
    Rng rng2(12);
    auto table2 = ctgan::transform_table(codecs, layout, t, rng2);
    auto model2 = ctgan::train_gan(table2, layout, small_config(12, 300));
    for (size_t i = 0; i < model.loss_history.size(); ++i) {
        CHECK(model.loss_history[i].critic == model2.loss_history[i].critic);
        CHECK(model.loss_history[i].generator == model2.loss_history[i].generator);
    }

    // hard conditioning: every generated row matches its condition
    double real_mean[2] = {0, 0};
    long real_n[2] = {0, 0};
    for (size_t r = 0; r < t.n_rows(); ++r) {
        int c = int(t.at(r, 0)) - 1;
        real_mean[c] += t.at(r, 1);
        ++real_n[c];
    }
    real_mean[0] /= double(real_n[0]);
    real_mean[1] /= double(real_n[1]);

    Rng grng(99);
    for (int slot = 0; slot < 2; ++slot) {
        auto rows = ctgan::generate_transformed(model, 800, ctgan::CondVector{0, slot}, grng);
        REQUIRE(rows.size() == 800);
        double mean = 0;
        for (const auto& vec : rows) {
            auto [row, label] = ctgan::inverse_transform_row(codecs, layout, vec.data());
            (void)label;
            CHECK(row[0] == codecs.categories[0][size_t(slot)]);  // 100% condition match
            mean += row[1];
        }
        mean /= double(rows.size());
        CHECK(std::fabs(mean - real_mean[slot]) < 0.5);
    }

    // class-conditioned table-space generation
    auto synth = ctgan::generate(model, codecs, 50, 1, grng, t.classes);
    REQUIRE(synth.n_rows() == 50);
    for (int y : synth.labels) CHECK(y == 1);
    for (size_t r = 0; r < synth.n_rows(); ++r) {
        const auto& g = *codecs.gmms[1];
        bool in_range = false;
        for (const auto& m : g.modes)
            if (synth.at(r, 1) >= m.mean - 4 * m.std - 1e-9 &&
                synth.at(r, 1) <= m.mean + 4 * m.std + 1e-9)
                in_range = true;
        CHECK(in_range);
    }

    // checkpoint round-trip preserves behavior
    std::ostringstream out(std::ios::binary);
    ctgan::save_gan(model, out);
    std::istringstream in(out.str());
    auto loaded = ctgan::load_gan(in);
    CHECK(loaded.codec_hash == model.codec_hash);
    Rng ga(4), gb(4);
    auto ra = ctgan::generate_transformed(model, 20, ctgan::CondVector{0, 0}, ga);
    auto rb = ctgan::generate_transformed(loaded, 20, ctgan::CondVector{0, 0}, gb);
    REQUIRE(ra.size() == rb.size());
    for (size_t i = 0; i < ra.size(); ++i) CHECK(ra[i] == rb[i]);
}
