#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "idsbal/codecs.hpp"
#include "idsbal/common.hpp"
#include "idsbal/dataset.hpp"
#include "idsbal/gmm.hpp"
#include "idsbal/ndiff.hpp"

// Conditional tabular GAN: mode-specific row transform, conditional vectors,
// training-by-sampling, WGAN-GP training of a 2-hidden-layer generator/critic
// pair, and class-conditioned synthesis. The class label is modeled as an
// ordinary discrete column (the last one in the layout).
namespace idsbal::ctgan {

using nd::NodePtr;
using nd::Tensor;

struct ColumnSpan {
    bool discrete = false;
    long alpha_offset = -1;   // continuous
    long mode_offset = -1;    // continuous
    long n_modes = 0;         // continuous
    long onehot_offset = -1;  // discrete
    long n_categories = 0;    // discrete
    long cond_offset = -1;    // discrete: offset into the condition vector
};

struct RowLayout {
    std::vector<ColumnSpan> columns;  // feature columns then the label column
    long width = 0;
    long cond_width = 0;
    std::vector<int> discrete_columns;  // indices into `columns`
    int label_column = -1;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["width"] = width;
        j["cond_width"] = cond_width;
        j["label_column"] = label_column;
        j["columns"] = nlohmann::json::array();
        for (const auto& c : columns)
            j["columns"].push_back({{"discrete", c.discrete},
                                    {"alpha_offset", c.alpha_offset},
                                    {"mode_offset", c.mode_offset},
                                    {"n_modes", c.n_modes},
                                    {"onehot_offset", c.onehot_offset},
                                    {"n_categories", c.n_categories},
                                    {"cond_offset", c.cond_offset}});
        return j;
    }

    static RowLayout from_json(const nlohmann::json& j) {
        RowLayout l;
        l.width = j.at("width").get<long>();
        l.cond_width = j.at("cond_width").get<long>();
        l.label_column = j.at("label_column").get<int>();
        for (const auto& jc : j.at("columns")) {
            ColumnSpan c;
            c.discrete = jc.at("discrete").get<bool>();
            c.alpha_offset = jc.at("alpha_offset").get<long>();
            c.mode_offset = jc.at("mode_offset").get<long>();
            c.n_modes = jc.at("n_modes").get<long>();
            c.onehot_offset = jc.at("onehot_offset").get<long>();
            c.n_categories = jc.at("n_categories").get<long>();
            c.cond_offset = jc.at("cond_offset").get<long>();
            if (c.discrete) l.discrete_columns.push_back(static_cast<int>(l.columns.size()));
            l.columns.push_back(c);
        }
        return l;
    }
};

inline RowLayout build_layout(const TableCodecs& codecs) {
    RowLayout l;
    long off = 0, cond_off = 0;
    for (size_t i = 0; i < codecs.columns.size(); ++i) {
        ColumnSpan s;
        if (codecs.columns[i].kind == ColumnKind::Discrete) {
            if (codecs.categories[i].empty())
                throw StateError("discrete column " + codecs.columns[i].name + " not fitted");
            s.discrete = true;
            s.onehot_offset = off;
            s.n_categories = static_cast<long>(codecs.categories[i].size());
            s.cond_offset = cond_off;
            off += s.n_categories;
            cond_off += s.n_categories;
            l.discrete_columns.push_back(static_cast<int>(l.columns.size()));
        } else {
            if (!codecs.gmms[i])
                throw StateError("continuous column " + codecs.columns[i].name + " not fitted");
            s.alpha_offset = off;
            s.mode_offset = off + 1;
            s.n_modes = static_cast<long>(codecs.gmms[i]->modes.size());
            off += 1 + s.n_modes;
        }
        l.columns.push_back(s);
    }
    // label pseudo-column, discrete over the observed class ids
    ColumnSpan lab;
    lab.discrete = true;
    lab.onehot_offset = off;
    lab.n_categories = static_cast<long>(codecs.label_categories.size());
    lab.cond_offset = cond_off;
    if (lab.n_categories == 0) throw StateError("label column not fitted");
    l.label_column = static_cast<int>(l.columns.size());
    l.discrete_columns.push_back(l.label_column);
    l.columns.push_back(lab);
    l.width = off + lab.n_categories;
    l.cond_width = cond_off + lab.n_categories;
    return l;
}

namespace detail {
inline int category_slot(const std::vector<int>& categories, int code) {
    auto it = std::lower_bound(categories.begin(), categories.end(), code);
    if (it == categories.end() || *it != code)
        throw DataError("category code " + std::to_string(code) + " outside fitted map");
    return static_cast<int>(it - categories.begin());
}
}  // namespace detail

// GAN-space encoding of one row: per continuous column a scalar alpha plus mode
// one-hot, per discrete column (and the label) a one-hot.
inline void transform_row(const TableCodecs& codecs, const RowLayout& layout, const double* row,
                          int label, Rng& rng, double* out) {
    std::fill(out, out + layout.width, 0.0);
    for (size_t i = 0; i < codecs.columns.size(); ++i) {
        const auto& s = layout.columns[i];
        if (s.discrete) {
            int slot = detail::category_slot(codecs.categories[i], static_cast<int>(row[i]));
            out[s.onehot_offset + slot] = 1.0;
        } else {
            auto mv = gmm::normalize_value(*codecs.gmms[i], row[i], rng);
            out[s.alpha_offset] = mv.alpha;
            out[s.mode_offset + mv.mode] = 1.0;
        }
    }
    const auto& s = layout.columns[static_cast<size_t>(layout.label_column)];
    int slot = detail::category_slot(codecs.label_categories, label);
    out[s.onehot_offset + slot] = 1.0;
}

// One-hot spans are hardened by argmax (ties take the first slot).
inline std::pair<std::vector<double>, int> inverse_transform_row(const TableCodecs& codecs,
                                                                 const RowLayout& layout,
                                                                 const double* vec) {
    for (long i = 0; i < layout.width; ++i)
        if (!std::isfinite(vec[i])) throw DataError("non-finite entry in transformed vector");
    std::vector<double> row(codecs.columns.size());
    for (size_t i = 0; i < codecs.columns.size(); ++i) {
        const auto& s = layout.columns[i];
        if (s.discrete) {
            long best = 0;
            for (long j = 1; j < s.n_categories; ++j)
                if (vec[s.onehot_offset + j] > vec[s.onehot_offset + best]) best = j;
            row[i] = codecs.categories[i][static_cast<size_t>(best)];
        } else {
            long best = 0;
            for (long j = 1; j < s.n_modes; ++j)
                if (vec[s.mode_offset + j] > vec[s.mode_offset + best]) best = j;
            gmm::ModeNormalizedValue mv{std::clamp(vec[s.alpha_offset], -1.0, 1.0),
                                        static_cast<int>(best)};
            row[i] = gmm::denormalize_value(*codecs.gmms[i], mv);
        }
    }
    const auto& s = layout.columns[static_cast<size_t>(layout.label_column)];
    long best = 0;
    for (long j = 1; j < s.n_categories; ++j)
        if (vec[s.onehot_offset + j] > vec[s.onehot_offset + best]) best = j;
    return {std::move(row), codecs.label_categories[static_cast<size_t>(best)]};
}

// Training-by-sampling state: per discrete column, log(1 + count) weights.
struct FreqTables {
    std::vector<std::vector<double>> log_weights;  // indexed like layout.columns
    std::vector<int> discrete_columns;

    static FreqTables from_counts(const std::vector<std::vector<double>>& counts,
                                  const std::vector<int>& discrete_cols) {
        FreqTables f;
        f.log_weights.resize(counts.size());
        f.discrete_columns = discrete_cols;
        for (size_t i = 0; i < counts.size(); ++i) {
            f.log_weights[i].resize(counts[i].size());
            for (size_t j = 0; j < counts[i].size(); ++j)
                f.log_weights[i][j] = std::log1p(counts[i][j]);
        }
        return f;
    }
};

struct CondVector {
    int column = -1;  // index into layout.columns
    int slot = -1;    // category slot within that column
};

// Discrete column uniform, category by log-frequency within the column.
inline CondVector sample_condition(const FreqTables& freq, Rng& rng) {
    if (freq.discrete_columns.empty())
        throw ConfigError("training-by-sampling needs at least one discrete column");
    std::uniform_int_distribution<size_t> pick_col(0, freq.discrete_columns.size() - 1);
    int col = freq.discrete_columns[pick_col(rng)];
    const auto& w = freq.log_weights[static_cast<size_t>(col)];
    std::discrete_distribution<int> pick_cat(w.begin(), w.end());
    return {col, pick_cat(rng)};
}

// Transformed training table plus the (column, category) -> rows index used for
// conditioned batch assembly.
struct TransformedTable {
    long width = 0;
    size_t n_rows = 0;
    std::vector<double> data;  // n_rows x width
    std::vector<std::vector<std::vector<size_t>>> index;  // [column][slot] -> row ids
    FreqTables freq;

    const double* row(size_t r) const { return data.data() + static_cast<long>(r) * width; }
};

inline TransformedTable transform_table(const TableCodecs& codecs, const RowLayout& layout,
                                        const FeatureTable& t, Rng& rng) {
    TransformedTable out;
    out.width = layout.width;
    out.n_rows = t.n_rows();
    out.data.assign(out.n_rows * static_cast<size_t>(layout.width), 0.0);
    out.index.resize(layout.columns.size());
    std::vector<std::vector<double>> counts(layout.columns.size());
    for (int c : layout.discrete_columns) {
        out.index[static_cast<size_t>(c)].resize(
            static_cast<size_t>(layout.columns[static_cast<size_t>(c)].n_categories));
        counts[static_cast<size_t>(c)].assign(
            static_cast<size_t>(layout.columns[static_cast<size_t>(c)].n_categories), 0.0);
    }
    for (size_t r = 0; r < t.n_rows(); ++r) {
        double* vec = out.data.data() + static_cast<long>(r) * layout.width;
        transform_row(codecs, layout, t.row(r), t.labels[r], rng, vec);
        for (int c : layout.discrete_columns) {
            const auto& s = layout.columns[static_cast<size_t>(c)];
            for (long j = 0; j < s.n_categories; ++j)
                if (vec[s.onehot_offset + j] == 1.0) {
                    out.index[static_cast<size_t>(c)][static_cast<size_t>(j)].push_back(r);
                    counts[static_cast<size_t>(c)][static_cast<size_t>(j)] += 1.0;
                }
        }
    }
    out.freq = FreqTables::from_counts(counts, layout.discrete_columns);
    return out;
}

// Uniform draw among rows carrying the conditioned category.
inline size_t sample_conditioned_row(const TransformedTable& table, const CondVector& cond,
                                     Rng& rng) {
    const auto& rows = table.index[static_cast<size_t>(cond.column)][static_cast<size_t>(cond.slot)];
    if (rows.empty()) throw DataError("condition matches no training rows");
    std::uniform_int_distribution<size_t> pick(0, rows.size() - 1);
    return rows[pick(rng)];
}

struct GanConfig {
    int epochs = 300;
    long batch = 500;
    long noise_dim = 128;
    long hidden = 256;
    int critic_steps = 1;
    double gp_weight = 10.0;
    double temperature = 0.2;
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"epochs", epochs},       {"batch", batch},
                {"noise_dim", noise_dim}, {"hidden", hidden},
                {"critic_steps", critic_steps}, {"gp_weight", gp_weight},
                {"temperature", temperature},   {"lr", lr},
                {"beta1", beta1},         {"beta2", beta2},
                {"seed", seed}};
    }
    static GanConfig from_json(const nlohmann::json& j) {
        GanConfig c;
        c.epochs = j.at("epochs").get<int>();
        c.batch = j.at("batch").get<long>();
        c.noise_dim = j.at("noise_dim").get<long>();
        c.hidden = j.at("hidden").get<long>();
        c.critic_steps = j.at("critic_steps").get<int>();
        c.gp_weight = j.at("gp_weight").get<double>();
        c.temperature = j.at("temperature").get<double>();
        c.lr = j.at("lr").get<double>();
        c.beta1 = j.at("beta1").get<double>();
        c.beta2 = j.at("beta2").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        return c;
    }
};

// Generator: (noise ++ cond) -> dense/BN/relu x2 -> per-span heads (tanh for
// alpha slots, temperature-softened softmax for one-hot spans).
struct Generator {
    NodePtr w1, b1, g1, s1, w2, b2, g2, s2, w3, b3;
    nd::BatchNormState bn1, bn2;

    std::vector<NodePtr> params() const { return {w1, b1, g1, s1, w2, b2, g2, s2, w3, b3}; }

    NodePtr forward(NodePtr in, const RowLayout& layout, double temperature, bool training) {
        NodePtr h = nd::relu(nd::batch_norm_forward(nd::dense_forward(in, w1, b1), g1, s1, &bn1,
                                                    training));
        h = nd::relu(
            nd::batch_norm_forward(nd::dense_forward(h, w2, b2), g2, s2, &bn2, training));
        NodePtr raw = nd::dense_forward(h, w3, b3);
        std::vector<NodePtr> parts;
        for (const auto& s : layout.columns) {
            if (s.discrete) {
                parts.push_back(nd::softmax(
                    nd::scale(nd::slice_cols(raw, s.onehot_offset, s.n_categories),
                              1.0 / temperature)));
            } else {
                parts.push_back(nd::tanh_(nd::slice_cols(raw, s.alpha_offset, 1)));
                parts.push_back(nd::softmax(
                    nd::scale(nd::slice_cols(raw, s.mode_offset, s.n_modes), 1.0 / temperature)));
            }
        }
        return nd::concat_cols(parts);
    }
};

// Critic: (row ++ cond) -> dense/relu x2 -> scalar score.
struct Critic {
    NodePtr w1, b1, w2, b2, w3, b3;

    std::vector<NodePtr> params() const { return {w1, b1, w2, b2, w3, b3}; }

    NodePtr forward(NodePtr in) {
        NodePtr h = nd::relu(nd::dense_forward(in, w1, b1));
        h = nd::relu(nd::dense_forward(h, w2, b2));
        return nd::dense_forward(h, w3, b3);
    }
};

struct LossRecord {
    double critic = 0;
    double generator = 0;
};

struct GanModel {
    RowLayout layout;
    GanConfig config;
    Generator gen;
    Critic critic;
    FreqTables freq;  // for unconditioned generation
    std::vector<LossRecord> loss_history;  // one record per epoch
    std::uint64_t codec_hash = 0;
};

inline GanModel init_gan(const RowLayout& layout, const GanConfig& cfg) {
    GanModel m;
    m.layout = layout;
    m.config = cfg;
    Rng rng(derive_seed(cfg.seed, "gan-init"));
    long gin = cfg.noise_dim + layout.cond_width;
    long h = cfg.hidden;
    m.gen.w1 = nd::param(nd::glorot_uniform({gin, h}, rng));
    m.gen.b1 = nd::param(Tensor::zeros({h}));
    m.gen.g1 = nd::param(Tensor::full({h}, 1.0));
    m.gen.s1 = nd::param(Tensor::zeros({h}));
    m.gen.w2 = nd::param(nd::glorot_uniform({h, h}, rng));
    m.gen.b2 = nd::param(Tensor::zeros({h}));
    m.gen.g2 = nd::param(Tensor::full({h}, 1.0));
    m.gen.s2 = nd::param(Tensor::zeros({h}));
    m.gen.w3 = nd::param(nd::glorot_uniform({h, layout.width}, rng));
    m.gen.b3 = nd::param(Tensor::zeros({layout.width}));
    long cin = layout.width + layout.cond_width;
    m.critic.w1 = nd::param(nd::glorot_uniform({cin, h}, rng));
    m.critic.b1 = nd::param(Tensor::zeros({h}));
    m.critic.w2 = nd::param(nd::glorot_uniform({h, h}, rng));
    m.critic.b2 = nd::param(Tensor::zeros({h}));
    m.critic.w3 = nd::param(nd::glorot_uniform({h, 1}, rng));
    m.critic.b3 = nd::param(Tensor::zeros({1}));
    // keep the checkpoint container well formed even before the first update
    m.gen.bn1.running_mean = Tensor::zeros({h});
    m.gen.bn1.running_var = Tensor::full({h}, 1.0);
    m.gen.bn2.running_mean = Tensor::zeros({h});
    m.gen.bn2.running_var = Tensor::full({h}, 1.0);
    return m;
}

namespace detail {

// Analytic gradient of the WGAN gradient penalty for the relu-MLP critic.
// Masks are treated as locally constant (their derivative vanishes almost
// everywhere), which matches what reverse-over-reverse autodiff yields for
// relu networks. Bias gradients are identically zero. Returns the mean
// penalty value and accumulates lambda * d(penalty)/d(params) into grads.
inline double add_gradient_penalty(Critic& critic, const Tensor& xhat, double lambda) {
    const long B = xhat.shape[0], in = xhat.shape[1];
    const Tensor& W1 = critic.w1->value;  // [in,h1]
    const Tensor& W2 = critic.w2->value;  // [h1,h2]
    const Tensor& W3 = critic.w3->value;  // [h2,1]
    const long h1 = W1.shape[1], h2 = W2.shape[1];
    Tensor& gW1 = critic.w1->ensure_grad();
    Tensor& gW2 = critic.w2->ensure_grad();
    Tensor& gW3 = critic.w3->ensure_grad();
    double penalty_sum = 0;
    std::vector<double> z1(h1), m1(h1), z2(h2), m2(h2), t2(h2), t1(h1), g(in), c(in), u1(h1),
        mu1(h1), u2(h2);
    for (long b = 0; b < B; ++b) {
        const double* x = xhat.v.data() + b * in;
        for (long j = 0; j < h1; ++j) {
            double a = critic.b1->value.at(j);
            for (long i = 0; i < in; ++i) a += x[i] * W1.at(i, j);
            z1[j] = a;
            m1[j] = a > 0 ? 1.0 : 0.0;
        }
        for (long k = 0; k < h2; ++k) {
            double a = critic.b2->value.at(k);
            for (long j = 0; j < h1; ++j) a += (m1[j] * z1[j]) * W2.at(j, k);
            z2[k] = a;
            m2[k] = a > 0 ? 1.0 : 0.0;
        }
        for (long k = 0; k < h2; ++k) t2[k] = m2[k] * W3.at(k, 0);
        for (long j = 0; j < h1; ++j) {
            double a = 0;
            for (long k = 0; k < h2; ++k) a += W2.at(j, k) * t2[k];
            t1[j] = m1[j] * a;
        }
        double norm2 = 0;
        for (long i = 0; i < in; ++i) {
            double a = 0;
            for (long j = 0; j < h1; ++j) a += W1.at(i, j) * t1[j];
            g[i] = a;
            norm2 += a * a;
        }
        double norm = std::sqrt(norm2);
        penalty_sum += (norm - 1.0) * (norm - 1.0);
        if (norm < 1e-12) continue;
        double coef = lambda * 2.0 * (norm - 1.0) / norm / static_cast<double>(B);
        for (long i = 0; i < in; ++i) c[i] = coef * g[i];
        // dP/dW1 += c t1^T plus the path through t1 itself
        for (long j = 0; j < h1; ++j) {
            double a = 0;
            for (long i = 0; i < in; ++i) a += W1.at(i, j) * c[i];
            u1[j] = a;
            mu1[j] = m1[j] * a;
        }
        for (long i = 0; i < in; ++i)
            for (long j = 0; j < h1; ++j) gW1.at(i, j) += c[i] * t1[j];
        for (long j = 0; j < h1; ++j)
            for (long k = 0; k < h2; ++k) gW2.at(j, k) += mu1[j] * t2[k];
        for (long k = 0; k < h2; ++k) {
            double a = 0;
            for (long j = 0; j < h1; ++j) a += W2.at(j, k) * mu1[j];
            u2[k] = a;
            gW3.at(k, 0) += m2[k] * a;
        }
    }
    return penalty_sum / static_cast<double>(B);
}

inline Tensor sample_noise(long batch, long dim, Rng& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Tensor z({batch, dim});
    for (auto& x : z.v) x = d(rng);
    return z;
}

// Mean over the batch of -log(generated probability of the conditioned slot).
inline NodePtr condition_cross_entropy(NodePtr output, const RowLayout& layout,
                                       const std::vector<CondVector>& conds) {
    long B = output->value.shape[0];
    auto offsets = std::make_shared<std::vector<long>>(static_cast<size_t>(B));
    for (long b = 0; b < B; ++b) {
        const auto& s = layout.columns[static_cast<size_t>(conds[static_cast<size_t>(b)].column)];
        (*offsets)[static_cast<size_t>(b)] = s.onehot_offset + conds[static_cast<size_t>(b)].slot;
    }
    double loss = 0;
    for (long b = 0; b < B; ++b)
        loss -= std::log(std::max(output->value.at(b, (*offsets)[static_cast<size_t>(b)]), 1e-300));
    loss /= static_cast<double>(B);
    return nd::make_node(Tensor::scalar(loss), {output}, [output, offsets](nd::Node& self) {
        if (!output->requires_grad) return;
        auto& g = output->ensure_grad();
        long B2 = output->value.shape[0];
        for (long b = 0; b < B2; ++b) {
            long off = (*offsets)[static_cast<size_t>(b)];
            double p = std::max(output->value.at(b, off), 1e-300);
            g.at(b, off) += -self.grad.at(0) / (p * static_cast<double>(B2));
        }
    });
}

}  // namespace detail

inline GanModel train_gan(const TransformedTable& table, const RowLayout& layout,
                          const GanConfig& cfg) {
    if (table.n_rows == 0) throw DataError("cannot train on an empty table");
    if (cfg.batch < 2) throw ConfigError("batch size must be >= 2");
    GanModel m = init_gan(layout, cfg);
    m.freq = table.freq;
    Rng rng(derive_seed(cfg.seed, "gan-train"));
    nd::Adam adam_c({cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
    nd::Adam adam_g({cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
    const long B = std::min<long>(cfg.batch, static_cast<long>(table.n_rows));
    const long steps = std::max<long>(1, static_cast<long>(table.n_rows) / B);

    auto make_batch = [&](Tensor& real, Tensor& cond, std::vector<CondVector>& conds) {
        for (long b = 0; b < B; ++b) {
            CondVector cv = sample_condition(table.freq, rng);
            conds[static_cast<size_t>(b)] = cv;
            size_t r = sample_conditioned_row(table, cv, rng);
            std::copy(table.row(r), table.row(r) + layout.width,
                      real.v.data() + b * layout.width);
            const auto& s = layout.columns[static_cast<size_t>(cv.column)];
            for (long j = 0; j < layout.cond_width; ++j) cond.at(b, j) = 0.0;
            cond.at(b, s.cond_offset + cv.slot) = 1.0;
        }
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_c = 0, epoch_g = 0;
        for (long step = 0; step < steps; ++step) {
            double critic_loss_val = 0;
            for (int cs = 0; cs < cfg.critic_steps; ++cs) {
                Tensor real({B, layout.width}), cond({B, layout.cond_width});
                std::vector<CondVector> conds(static_cast<size_t>(B));
                make_batch(real, cond, conds);
                Tensor z = detail::sample_noise(B, cfg.noise_dim, rng);
                NodePtr gin = nd::constant(Tensor(
                    {B, cfg.noise_dim + layout.cond_width}, [&] {
                        std::vector<double> v(static_cast<size_t>(B * (cfg.noise_dim + layout.cond_width)));
                        for (long b = 0; b < B; ++b) {
                            std::copy(z.v.begin() + b * cfg.noise_dim,
                                      z.v.begin() + (b + 1) * cfg.noise_dim,
                                      v.begin() + b * (cfg.noise_dim + layout.cond_width));
                            std::copy(cond.v.begin() + b * layout.cond_width,
                                      cond.v.begin() + (b + 1) * layout.cond_width,
                                      v.begin() + b * (cfg.noise_dim + layout.cond_width) +
                                          cfg.noise_dim);
                        }
                        return v;
                    }()));
                Tensor fake = m.gen.forward(gin, layout, cfg.temperature, true)->value;  // detached
                auto concat_rows = [&](const Tensor& rows) {
                    Tensor out({B, layout.width + layout.cond_width});
                    for (long b = 0; b < B; ++b) {
                        std::copy(rows.v.begin() + b * layout.width,
                                  rows.v.begin() + (b + 1) * layout.width,
                                  out.v.begin() + b * (layout.width + layout.cond_width));
                        std::copy(cond.v.begin() + b * layout.cond_width,
                                  cond.v.begin() + (b + 1) * layout.cond_width,
                                  out.v.begin() + b * (layout.width + layout.cond_width) +
                                      layout.width);
                    }
                    return out;
                };
                NodePtr d_real = m.critic.forward(nd::constant(concat_rows(real)));
                NodePtr d_fake = m.critic.forward(nd::constant(concat_rows(fake)));
                NodePtr loss_c = nd::sub(nd::mean(d_fake), nd::mean(d_real));
                nd::backward(loss_c);
                // interpolated inputs for the penalty
                Tensor xhat({B, layout.width + layout.cond_width});
                std::uniform_real_distribution<double> u01(0.0, 1.0);
                for (long b = 0; b < B; ++b) {
                    double eps = u01(rng);
                    for (long j = 0; j < layout.width; ++j)
                        xhat.at(b, j) = eps * real.at(b, j) + (1 - eps) * fake.at(b, j);
                    for (long j = 0; j < layout.cond_width; ++j)
                        xhat.at(b, layout.width + j) = cond.at(b, j);
                }
                double gp = detail::add_gradient_penalty(m.critic, xhat, cfg.gp_weight);
                critic_loss_val = loss_c->value.at(0) + cfg.gp_weight * gp;
                if (!std::isfinite(critic_loss_val))
                    throw DivergenceError("critic loss diverged at epoch " +
                                          std::to_string(epoch) + ", batch " +
                                          std::to_string(step));
                adam_c.step(m.critic.params());
            }

            // generator update
            Tensor real({B, layout.width}), cond({B, layout.cond_width});
            std::vector<CondVector> conds(static_cast<size_t>(B));
            make_batch(real, cond, conds);
            Tensor z = detail::sample_noise(B, cfg.noise_dim, rng);
            Tensor ginv({B, cfg.noise_dim + layout.cond_width});
            for (long b = 0; b < B; ++b) {
                std::copy(z.v.begin() + b * cfg.noise_dim, z.v.begin() + (b + 1) * cfg.noise_dim,
                          ginv.v.begin() + b * (cfg.noise_dim + layout.cond_width));
                std::copy(cond.v.begin() + b * layout.cond_width,
                          cond.v.begin() + (b + 1) * layout.cond_width,
                          ginv.v.begin() + b * (cfg.noise_dim + layout.cond_width) + cfg.noise_dim);
            }
            NodePtr fake = m.gen.forward(nd::constant(ginv), layout, cfg.temperature, true);
            NodePtr cond_node = nd::constant(cond);
            NodePtr d_fake = m.critic.forward(nd::concat_cols({fake, cond_node}));
            NodePtr loss_g = nd::add(nd::scale(nd::mean(d_fake), -1.0),
                                     detail::condition_cross_entropy(fake, layout, conds));
            if (!std::isfinite(loss_g->value.at(0)))
                throw DivergenceError("generator loss diverged at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(step));
            nd::backward(loss_g);
            adam_g.step(m.gen.params());

            epoch_c += critic_loss_val;
            epoch_g += loss_g->value.at(0);
        }
        m.loss_history.push_back(
            {epoch_c / static_cast<double>(steps), epoch_g / static_cast<double>(steps)});
    }
    return m;
}

// Generate transformed vectors; if `condition` is set, every row is hard
// conditioned on it (the conditioned span is overwritten with the exact
// one-hot before inverse transform).
inline std::vector<std::vector<double>> generate_transformed(GanModel& m, long n,
                                                             std::optional<CondVector> condition,
                                                             Rng& rng) {
    std::vector<std::vector<double>> out;
    if (n == 0) return out;
    if (!m.gen.bn1.initialized) {
        // never trained: fall back to batch statistics over the generated batch
        throw StateError("generate requires a trained model (no batch-norm statistics)");
    }
    const long chunk = 500;
    for (long done = 0; done < n; done += chunk) {
        long B = std::min(chunk, n - done);
        Tensor cond({B, m.layout.cond_width});
        std::vector<CondVector> conds(static_cast<size_t>(B));
        for (long b = 0; b < B; ++b) {
            CondVector cv = condition ? *condition : sample_condition(m.freq, rng);
            conds[static_cast<size_t>(b)] = cv;
            const auto& s = m.layout.columns[static_cast<size_t>(cv.column)];
            cond.at(b, s.cond_offset + cv.slot) = 1.0;
        }
        Tensor z = detail::sample_noise(B, m.config.noise_dim, rng);
        Tensor gin({B, m.config.noise_dim + m.layout.cond_width});
        for (long b = 0; b < B; ++b) {
            std::copy(z.v.begin() + b * m.config.noise_dim,
                      z.v.begin() + (b + 1) * m.config.noise_dim,
                      gin.v.begin() + b * (m.config.noise_dim + m.layout.cond_width));
            std::copy(cond.v.begin() + b * m.layout.cond_width,
                      cond.v.begin() + (b + 1) * m.layout.cond_width,
                      gin.v.begin() + b * (m.config.noise_dim + m.layout.cond_width) +
                          m.config.noise_dim);
        }
        Tensor raw = m.gen.forward(nd::constant(gin), m.layout, m.config.temperature, false)->value;
        for (long b = 0; b < B; ++b) {
            std::vector<double> vec(static_cast<size_t>(m.layout.width));
            std::copy(raw.v.begin() + b * m.layout.width, raw.v.begin() + (b + 1) * m.layout.width,
                      vec.begin());
            // harden one-hot spans
            for (const auto& s : m.layout.columns) {
                if (s.discrete) {
                    long best = 0;
                    for (long j = 1; j < s.n_categories; ++j)
                        if (vec[static_cast<size_t>(s.onehot_offset + j)] >
                            vec[static_cast<size_t>(s.onehot_offset + best)])
                            best = j;
                    for (long j = 0; j < s.n_categories; ++j)
                        vec[static_cast<size_t>(s.onehot_offset + j)] = j == best ? 1.0 : 0.0;
                } else {
                    long best = 0;
                    for (long j = 1; j < s.n_modes; ++j)
                        if (vec[static_cast<size_t>(s.mode_offset + j)] >
                            vec[static_cast<size_t>(s.mode_offset + best)])
                            best = j;
                    for (long j = 0; j < s.n_modes; ++j)
                        vec[static_cast<size_t>(s.mode_offset + j)] = j == best ? 1.0 : 0.0;
                }
            }
            // hard conditioning
            const CondVector& cv = conds[static_cast<size_t>(b)];
            const auto& s = m.layout.columns[static_cast<size_t>(cv.column)];
            for (long j = 0; j < s.n_categories; ++j)
                vec[static_cast<size_t>(s.onehot_offset + j)] = j == cv.slot ? 1.0 : 0.0;
            out.push_back(std::move(vec));
        }
    }
    return out;
}

inline CondVector label_condition(const TableCodecs& codecs, const RowLayout& layout,
                                  int class_id) {
    return {layout.label_column, detail::category_slot(codecs.label_categories, class_id)};
}

// Class-conditioned synthesis back into table space. `class_condition`, when
// set, is a class id; every generated row decodes to that label.
inline FeatureTable generate(GanModel& m, const TableCodecs& codecs, long n,
                             std::optional<int> class_condition, Rng& rng,
                             std::vector<std::string> classes = {class_names().begin(),
                                                                 class_names().end()}) {
    std::optional<CondVector> cv;
    if (class_condition) cv = label_condition(codecs, m.layout, *class_condition);
    FeatureTable t;
    t.columns = codecs.columns;
    if (codecs.n_classes == classes.size()) {
        t.classes = std::move(classes);
    } else {
        t.classes.clear();
        for (size_t i = 0; i < codecs.n_classes; ++i)
            t.classes.push_back("class" + std::to_string(i));
    }
    auto vecs = generate_transformed(m, n, cv, rng);
    for (const auto& v : vecs) {
        auto [row, label] = inverse_transform_row(codecs, m.layout, v.data());
        t.data.insert(t.data.end(), row.begin(), row.end());
        t.labels.push_back(label);
    }
    return t;
}

// ---- checkpoint: layout + config + frequency tables + parameters ----

inline void save_gan(const GanModel& m, std::ostream& out) {
    nlohmann::json j;
    j["layout"] = m.layout.to_json();
    j["config"] = m.config.to_json();
    j["codec_hash"] = m.codec_hash;
    j["freq"] = {{"log_weights", m.freq.log_weights},
                 {"discrete_columns", m.freq.discrete_columns}};
    std::string header = j.dump();
    out.write("GAN1", 4);
    std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<std::pair<std::string, const Tensor*>> tensors = {
        {"gen.w1", &m.gen.w1->value}, {"gen.b1", &m.gen.b1->value},
        {"gen.g1", &m.gen.g1->value}, {"gen.s1", &m.gen.s1->value},
        {"gen.w2", &m.gen.w2->value}, {"gen.b2", &m.gen.b2->value},
        {"gen.g2", &m.gen.g2->value}, {"gen.s2", &m.gen.s2->value},
        {"gen.w3", &m.gen.w3->value}, {"gen.b3", &m.gen.b3->value},
        {"gen.bn1.mean", &m.gen.bn1.running_mean}, {"gen.bn1.var", &m.gen.bn1.running_var},
        {"gen.bn2.mean", &m.gen.bn2.running_mean}, {"gen.bn2.var", &m.gen.bn2.running_var},
        {"critic.w1", &m.critic.w1->value}, {"critic.b1", &m.critic.b1->value},
        {"critic.w2", &m.critic.w2->value}, {"critic.b2", &m.critic.b2->value},
        {"critic.w3", &m.critic.w3->value}, {"critic.b3", &m.critic.b3->value}};
    nd::save_tensors(out, tensors);
}

inline GanModel load_gan(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "GAN1", 4) != 0) throw IoError("bad GAN checkpoint magic");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError("truncated GAN checkpoint");
    auto j = nlohmann::json::parse(header);
    GanModel m = init_gan(RowLayout::from_json(j.at("layout")), GanConfig::from_json(j.at("config")));
    m.codec_hash = j.at("codec_hash").get<std::uint64_t>();
    m.freq.log_weights = j.at("freq").at("log_weights").get<std::vector<std::vector<double>>>();
    m.freq.discrete_columns = j.at("freq").at("discrete_columns").get<std::vector<int>>();
    auto tensors = nd::load_tensors(in);
    auto take = [&](const char* name) -> Tensor& {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError(std::string("missing tensor ") + name);
        return it->second;
    };
    m.gen.w1->value = take("gen.w1");
    m.gen.b1->value = take("gen.b1");
    m.gen.g1->value = take("gen.g1");
    m.gen.s1->value = take("gen.s1");
    m.gen.w2->value = take("gen.w2");
    m.gen.b2->value = take("gen.b2");
    m.gen.g2->value = take("gen.g2");
    m.gen.s2->value = take("gen.s2");
    m.gen.w3->value = take("gen.w3");
    m.gen.b3->value = take("gen.b3");
    m.gen.bn1.running_mean = take("gen.bn1.mean");
    m.gen.bn1.running_var = take("gen.bn1.var");
    m.gen.bn1.initialized = true;
    m.gen.bn2.running_mean = take("gen.bn2.mean");
    m.gen.bn2.running_var = take("gen.bn2.var");
    m.gen.bn2.initialized = true;
    m.critic.w1->value = take("critic.w1");
    m.critic.b1->value = take("critic.b1");
    m.critic.w2->value = take("critic.w2");
    m.critic.b2->value = take("critic.b2");
    m.critic.w3->value = take("critic.w3");
    m.critic.b3->value = take("critic.b3");
    return m;
}

}  // namespace idsbal::ctgan
