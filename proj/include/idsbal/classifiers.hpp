#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <json.hpp>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "idsbal/common.hpp"
#include "idsbal/dataset.hpp"
#include "idsbal/ndiff.hpp"

// The seven classifiers behind one fit/predict contract: decision tree, random
// forest, multinomial naive Bayes, linear one-vs-rest SVM, and the three
// ndiff-backed neural models (FNN, LSTM, CNN).
namespace idsbal::clf {

struct ClassifierSpec {
    std::string kind;  // dt, rf, nb, svm, fnn, lstm, cnn
    std::uint64_t seed = 0;
    // dt / rf
    int max_depth = -1;  // unlimited
    int trees = 100;
    bool bootstrap = true;
    bool feature_subsample = true;  // sqrt(D) features per split (rf only)
    // nb
    double alpha = 1.0;
    // svm
    double svm_c = 1.0;
    int svm_epochs = 50;
    double svm_lr = 1e-3;
    // neural
    int epochs = 100;
    long batch = 128;
    int patience = 10;
    double lr = 1e-3;
    int lstm_units = 100;
    int cnn_filters = 32;
    int cnn_kernel = 3;
    int cnn_pool = 2;
    int cnn_dense = 100;
    std::vector<int> fnn_hidden = {50, 30, 20};
};

inline double gini_impurity(const std::vector<std::int64_t>& counts) {
    std::int64_t n = 0;
    for (auto c : counts) {
        if (c < 0) throw DataError("negative class count");
        n += c;
    }
    if (n == 0) throw DataError("gini_impurity of all-zero counts");
    double g = 1.0;
    for (auto c : counts) {
        double p = static_cast<double>(c) / static_cast<double>(n);
        g -= p * p;
    }
    return g;
}

class Classifier {
  public:
    virtual ~Classifier() = default;
    virtual void fit(const FeatureTable& t) = 0;
    // one row of per-class scores per sample; argmax(scores) == predict
    virtual std::vector<std::vector<double>> predict_scores(const FeatureTable& t) const = 0;
    virtual std::string kind() const = 0;
    virtual nlohmann::json state_json() const = 0;
    virtual std::vector<std::pair<std::string, const nd::Tensor*>> state_tensors() const {
        return {};
    }

    std::vector<int> predict(const FeatureTable& t) const {
        auto scores = predict_scores(t);
        std::vector<int> out(scores.size());
        for (size_t i = 0; i < scores.size(); ++i) {
            const auto& row = scores[i];
            out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        }
        return out;
    }

    int n_classes = 0;
    size_t n_features = 0;

  protected:
    void check_features(const FeatureTable& t) const {
        if (t.n_cols() != n_features)
            throw ShapeError("feature count mismatch: trained on " + std::to_string(n_features) +
                             ", got " + std::to_string(t.n_cols()));
    }
};

// ---- decision tree ----

struct TreeNode {
    int feature = -1;
    double threshold = 0;
    int left = -1, right = -1;
    std::vector<double> dist;  // leaf class distribution
};

class DecisionTree : public Classifier {
  public:
    ClassifierSpec spec;
    std::vector<TreeNode> nodes;

    explicit DecisionTree(ClassifierSpec s = {}) : spec(std::move(s)) {}
    std::string kind() const override { return "dt"; }

    void fit(const FeatureTable& t) override {
        Rng rng(derive_seed(spec.seed, "dt"));
        std::vector<size_t> idx(t.n_rows());
        std::iota(idx.begin(), idx.end(), 0);
        fit_on(t, idx, rng, /*subsample_features=*/false);
    }

    void fit_on(const FeatureTable& t, const std::vector<size_t>& idx, Rng& rng,
                bool subsample_features) {
        if (idx.empty()) throw DataError("cannot fit a tree on zero rows");
        n_classes = static_cast<int>(t.classes.size());
        n_features = t.n_cols();
        nodes.clear();
        build(t, idx, 0, rng, subsample_features);
    }

    std::vector<std::vector<double>> predict_scores(const FeatureTable& t) const override {
        if (t.n_rows() == 0) return {};
        check_features(t);
        std::vector<std::vector<double>> out;
        out.reserve(t.n_rows());
        for (size_t r = 0; r < t.n_rows(); ++r) out.push_back(leaf_for(t.row(r))->dist);
        return out;
    }

    const TreeNode* leaf_for(const double* row) const {
        const TreeNode* n = &nodes[0];
        while (n->feature >= 0)
            n = &nodes[static_cast<size_t>(row[n->feature] < n->threshold ? n->left : n->right)];
        return n;
    }

    nlohmann::json state_json() const override {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& n : nodes)
            j.push_back({{"f", n.feature}, {"t", n.threshold}, {"l", n.left}, {"r", n.right},
                         {"d", n.dist}});
        return j;
    }

    void load_state(const nlohmann::json& j) {
        nodes.clear();
        for (const auto& jn : j) {
            TreeNode n;
            n.feature = jn.at("f").get<int>();
            n.threshold = jn.at("t").get<double>();
            n.left = jn.at("l").get<int>();
            n.right = jn.at("r").get<int>();
            n.dist = jn.at("d").get<std::vector<double>>();
            nodes.push_back(std::move(n));
        }
    }

  private:
    int build(const FeatureTable& t, const std::vector<size_t>& idx, int depth, Rng& rng,
              bool subsample_features) {
        std::vector<std::int64_t> counts(static_cast<size_t>(n_classes), 0);
        for (size_t r : idx) ++counts[static_cast<size_t>(t.labels[r])];
        int me = static_cast<int>(nodes.size());
        nodes.emplace_back();
        double parent_gini = gini_impurity(counts);
        bool stop = parent_gini == 0.0 || idx.size() < 2 ||
                    (spec.max_depth >= 0 && depth >= spec.max_depth);

        int best_feature = -1;
        double best_threshold = 0, best_score = parent_gini - 1e-12;
        if (!stop) {
            std::vector<int> features(t.n_cols());
            std::iota(features.begin(), features.end(), 0);
            if (subsample_features) {
                size_t k = static_cast<size_t>(
                    std::ceil(std::sqrt(static_cast<double>(t.n_cols()))));
                // partial Fisher-Yates, then sort for a deterministic scan order
                for (size_t i = 0; i < k; ++i) {
                    std::uniform_int_distribution<size_t> pick(i, features.size() - 1);
                    std::swap(features[i], features[pick(rng)]);
                }
                features.resize(k);
                std::sort(features.begin(), features.end());
            }
            std::vector<std::pair<double, int>> vals(idx.size());
            std::vector<std::int64_t> left(static_cast<size_t>(n_classes));
            for (int f : features) {
                for (size_t i = 0; i < idx.size(); ++i)
                    vals[i] = {t.at(idx[i], static_cast<size_t>(f)), t.labels[idx[i]]};
                std::sort(vals.begin(), vals.end());
                std::fill(left.begin(), left.end(), 0);
                std::int64_t nl = 0, n = static_cast<std::int64_t>(idx.size());
                for (size_t i = 0; i + 1 < vals.size(); ++i) {
                    ++left[static_cast<size_t>(vals[i].second)];
                    ++nl;
                    if (vals[i].first == vals[i + 1].first) continue;
                    double gl = 1.0, gr = 1.0;
                    for (int c = 0; c < n_classes; ++c) {
                        double pl = static_cast<double>(left[static_cast<size_t>(c)]) /
                                    static_cast<double>(nl);
                        double pr = static_cast<double>(counts[static_cast<size_t>(c)] -
                                                        left[static_cast<size_t>(c)]) /
                                    static_cast<double>(n - nl);
                        gl -= pl * pl;
                        gr -= pr * pr;
                    }
                    double score = (static_cast<double>(nl) * gl +
                                    static_cast<double>(n - nl) * gr) /
                                   static_cast<double>(n);
                    if (score < best_score) {
                        best_score = score;
                        best_feature = f;
                        best_threshold = (vals[i].first + vals[i + 1].first) / 2.0;
                    }
                }
            }
        }

        if (best_feature < 0) {
            auto& leaf = nodes[static_cast<size_t>(me)];
            leaf.dist.resize(static_cast<size_t>(n_classes));
            for (int c = 0; c < n_classes; ++c)
                leaf.dist[static_cast<size_t>(c)] = static_cast<double>(counts[static_cast<size_t>(c)]) /
                                                    static_cast<double>(idx.size());
            return me;
        }
        std::vector<size_t> li, ri;
        for (size_t r : idx)
            (t.at(r, static_cast<size_t>(best_feature)) < best_threshold ? li : ri).push_back(r);
        int l = build(t, li, depth + 1, rng, subsample_features);
        int r = build(t, ri, depth + 1, rng, subsample_features);
        auto& node = nodes[static_cast<size_t>(me)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = l;
        node.right = r;
        return me;
    }
};

// ---- random forest ----

class RandomForest : public Classifier {
  public:
    ClassifierSpec spec;
    std::vector<DecisionTree> forest;

    explicit RandomForest(ClassifierSpec s = {}) : spec(std::move(s)) {}
    std::string kind() const override { return "rf"; }

    void fit(const FeatureTable& t) override {
        if (t.n_rows() == 0) throw DataError("cannot fit a forest on zero rows");
        n_classes = static_cast<int>(t.classes.size());
        n_features = t.n_cols();
        forest.clear();
        for (int k = 0; k < spec.trees; ++k) {
            Rng rng(derive_seed(spec.seed, "rf-tree-" + std::to_string(k)));
            std::vector<size_t> idx(t.n_rows());
            if (spec.bootstrap) {
                std::uniform_int_distribution<size_t> pick(0, t.n_rows() - 1);
                for (auto& i : idx) i = pick(rng);
            } else {
                std::iota(idx.begin(), idx.end(), 0);
            }
            DecisionTree tree(spec);
            tree.fit_on(t, idx, rng, spec.feature_subsample);
            forest.push_back(std::move(tree));
        }
    }

    // vote counts per class; argmax with first-max tie break = majority vote
    // with the lowest class index winning ties
    std::vector<std::vector<double>> predict_scores(const FeatureTable& t) const override {
        if (t.n_rows() == 0) return {};
        check_features(t);
        std::vector<std::vector<double>> out(t.n_rows(),
                                             std::vector<double>(static_cast<size_t>(n_classes), 0.0));
        for (const auto& tree : forest) {
            for (size_t r = 0; r < t.n_rows(); ++r) {
                const auto* leaf = tree.leaf_for(t.row(r));
                int c = static_cast<int>(
                    std::max_element(leaf->dist.begin(), leaf->dist.end()) - leaf->dist.begin());
                out[r][static_cast<size_t>(c)] += 1.0;
            }
        }
        return out;
    }

    nlohmann::json state_json() const override {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& tree : forest) j.push_back(tree.state_json());
        return j;
    }

    void load_state(const nlohmann::json& j) {
        forest.clear();
        for (const auto& jt : j) {
            DecisionTree tree(spec);
            tree.n_classes = n_classes;
            tree.n_features = n_features;
            tree.load_state(jt);
            forest.push_back(std::move(tree));
        }
    }
};

// ---- multinomial naive Bayes ----

class MultinomialNB : public Classifier {
  public:
    ClassifierSpec spec;
    std::vector<double> log_prior;                 // per class
    std::vector<std::vector<double>> log_weight;   // per class, per feature

    explicit MultinomialNB(ClassifierSpec s = {}) : spec(std::move(s)) {}
    std::string kind() const override { return "nb"; }

    void fit(const FeatureTable& t) override {
        if (t.n_rows() == 0) throw DataError("cannot fit NB on zero rows");
        n_classes = static_cast<int>(t.classes.size());
        n_features = t.n_cols();
        std::vector<std::int64_t> class_count(static_cast<size_t>(n_classes), 0);
        std::vector<std::vector<double>> feat_sum(
            static_cast<size_t>(n_classes), std::vector<double>(n_features, 0.0));
        for (size_t r = 0; r < t.n_rows(); ++r) {
            ++class_count[static_cast<size_t>(t.labels[r])];
            for (size_t f = 0; f < n_features; ++f) {
                double v = t.at(r, f);
                if (v < 0)
                    throw DataError("negative feature at row " + std::to_string(r) + ", column " +
                                    t.columns[f].name);
                feat_sum[static_cast<size_t>(t.labels[r])][f] += v;
            }
        }
        log_prior.assign(static_cast<size_t>(n_classes), -1e30);
        log_weight.assign(static_cast<size_t>(n_classes), std::vector<double>(n_features, 0.0));
        for (int c = 0; c < n_classes; ++c) {
            if (class_count[static_cast<size_t>(c)] > 0)
                log_prior[static_cast<size_t>(c)] =
                    std::log(static_cast<double>(class_count[static_cast<size_t>(c)]) /
                             static_cast<double>(t.n_rows()));
            double total = 0;
            for (size_t f = 0; f < n_features; ++f) total += feat_sum[static_cast<size_t>(c)][f];
            double denom = total + spec.alpha * static_cast<double>(n_features);
            for (size_t f = 0; f < n_features; ++f)
                log_weight[static_cast<size_t>(c)][f] =
                    std::log((feat_sum[static_cast<size_t>(c)][f] + spec.alpha) / denom);
        }
    }

    std::vector<std::vector<double>> predict_scores(const FeatureTable& t) const override {
        if (t.n_rows() == 0) return {};
        check_features(t);
        std::vector<std::vector<double>> out(t.n_rows(),
                                             std::vector<double>(static_cast<size_t>(n_classes)));
        for (size_t r = 0; r < t.n_rows(); ++r) {
            for (int c = 0; c < n_classes; ++c) {
                double lp = log_prior[static_cast<size_t>(c)];
                for (size_t f = 0; f < n_features; ++f) {
                    double v = t.at(r, f);
                    if (v < 0)
                        throw DataError("negative feature at row " + std::to_string(r) +
                                        ", column " + t.columns[f].name);
                    lp += v * log_weight[static_cast<size_t>(c)][f];
                }
                out[r][static_cast<size_t>(c)] = lp;
            }
        }
        return out;
    }

    nlohmann::json state_json() const override {
        return {{"log_prior", log_prior}, {"log_weight", log_weight}};
    }
    void load_state(const nlohmann::json& j) {
        log_prior = j.at("log_prior").get<std::vector<double>>();
        log_weight = j.at("log_weight").get<std::vector<std::vector<double>>>();
    }
};

// ---- linear one-vs-rest SVM, hinge loss + L1 penalty, subgradient descent ----

class LinearSvm : public Classifier {
  public:
    ClassifierSpec spec;
    std::vector<std::vector<double>> weights;  // per class, per feature
    std::vector<double> biases;
    std::vector<std::int64_t> class_freq;

    explicit LinearSvm(ClassifierSpec s = {}) : spec(std::move(s)) {}
    std::string kind() const override { return "svm"; }

    void fit(const FeatureTable& t) override {
        if (t.n_rows() == 0) throw DataError("cannot fit SVM on zero rows");
        n_classes = static_cast<int>(t.classes.size());
        n_features = t.n_cols();
        weights.assign(static_cast<size_t>(n_classes), std::vector<double>(n_features, 0.0));
        biases.assign(static_cast<size_t>(n_classes), 0.0);
        class_freq.assign(static_cast<size_t>(n_classes), 0);
        for (int y : t.labels) ++class_freq[static_cast<size_t>(y)];
        Rng rng(derive_seed(spec.seed, "svm"));
        std::vector<size_t> order(t.n_rows());
        std::iota(order.begin(), order.end(), 0);
        for (int c = 0; c < n_classes; ++c) {
            auto& w = weights[static_cast<size_t>(c)];
            double& b = biases[static_cast<size_t>(c)];
            for (int epoch = 0; epoch < spec.svm_epochs; ++epoch) {
                double lr = spec.svm_lr / (1.0 + static_cast<double>(epoch));
                std::shuffle(order.begin(), order.end(), rng);
                for (size_t r : order) {
                    double y = t.labels[r] == c ? 1.0 : -1.0;
                    double margin = b;
                    for (size_t f = 0; f < n_features; ++f) margin += w[f] * t.at(r, f);
                    margin *= y;
                    if (margin < 1.0) {
                        for (size_t f = 0; f < n_features; ++f)
                            w[f] += lr * spec.svm_c * y * t.at(r, f);
                        b += lr * spec.svm_c * y;
                    }
                    // L1 soft threshold
                    for (size_t f = 0; f < n_features; ++f) {
                        double shrink = std::min(std::fabs(w[f]), lr);
                        w[f] -= w[f] > 0 ? shrink : -shrink;
                    }
                }
                for (double x : w)
                    if (!std::isfinite(x)) throw DivergenceError("SVM weights diverged");
            }
        }
    }

    std::vector<std::vector<double>> predict_scores(const FeatureTable& t) const override {
        if (t.n_rows() == 0) return {};
        check_features(t);
        std::vector<std::vector<double>> out(t.n_rows(),
                                             std::vector<double>(static_cast<size_t>(n_classes)));
        for (size_t r = 0; r < t.n_rows(); ++r) {
            for (int c = 0; c < n_classes; ++c) {
                double v = biases[static_cast<size_t>(c)];
                for (size_t f = 0; f < n_features; ++f)
                    v += weights[static_cast<size_t>(c)][f] * t.at(r, f);
                // exact ties fall back to class frequency, then class index
                out[r][static_cast<size_t>(c)] =
                    v + 1e-12 * static_cast<double>(class_freq[static_cast<size_t>(c)]);
            }
        }
        return out;
    }

    nlohmann::json state_json() const override {
        return {{"weights", weights}, {"biases", biases}, {"class_freq", class_freq}};
    }
    void load_state(const nlohmann::json& j) {
        weights = j.at("weights").get<std::vector<std::vector<double>>>();
        biases = j.at("biases").get<std::vector<double>>();
        class_freq = j.at("class_freq").get<std::vector<std::int64_t>>();
    }
};

// ---- neural classifiers on ndiff ----

class NeuralClassifier : public Classifier {
  public:
    ClassifierSpec spec;
    std::vector<nd::NodePtr> parameters;

    explicit NeuralClassifier(ClassifierSpec s) : spec(std::move(s)) {}

    virtual void init_params(Rng& rng) = 0;
    virtual nd::NodePtr logits(nd::NodePtr x) const = 0;

    void fit(const FeatureTable& t) override {
        if (t.n_rows() == 0) throw DataError("cannot fit on zero rows");
        n_classes = static_cast<int>(t.classes.size());
        n_features = t.n_cols();
        Rng rng(derive_seed(spec.seed, kind()));
        init_params(rng);

        // 10% held-out split for early stopping
        std::vector<size_t> order(t.n_rows());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        size_t n_hold = t.n_rows() / 10;
        std::vector<size_t> hold(order.begin(), order.begin() + static_cast<long>(n_hold));
        std::vector<size_t> train(order.begin() + static_cast<long>(n_hold), order.end());

        nd::Adam adam({spec.lr, 0.9, 0.999, 1e-8});
        double best_loss = 1e300;
        int since_best = 0;
        std::vector<nd::Tensor> best_params;
        const long B = std::min<long>(spec.batch, static_cast<long>(train.size()));
        for (int epoch = 0; epoch < spec.epochs; ++epoch) {
            std::shuffle(train.begin(), train.end(), rng);
            for (size_t start = 0; start + 1 < train.size() || start == 0; start += static_cast<size_t>(B)) {
                size_t end = std::min(train.size(), start + static_cast<size_t>(B));
                if (end - start < 1) break;
                auto [x, y] = batch_tensors(t, train, start, end);
                nd::NodePtr loss = nd::softmax_cross_entropy(logits(nd::constant(x)), y);
                if (!std::isfinite(loss->value.at(0)))
                    throw DivergenceError("training loss diverged at epoch " +
                                          std::to_string(epoch));
                nd::backward(loss);
                adam.step(parameters);
                if (end == train.size()) break;
            }
            if (!hold.empty()) {
                auto [hx, hy] = batch_tensors(t, hold, 0, hold.size());
                double hl = nd::softmax_cross_entropy(logits(nd::constant(hx)), hy)->value.at(0);
                if (hl < best_loss - 1e-9) {
                    best_loss = hl;
                    since_best = 0;
                    best_params.clear();
                    for (const auto& p : parameters) best_params.push_back(p->value);
                } else if (++since_best >= spec.patience) {
                    break;
                }
            }
        }
        if (!best_params.empty())
            for (size_t i = 0; i < parameters.size(); ++i) parameters[i]->value = best_params[i];
    }

    std::vector<std::vector<double>> predict_scores(const FeatureTable& t) const override {
        if (t.n_rows() == 0) return {};
        check_features(t);
        std::vector<std::vector<double>> out;
        out.reserve(t.n_rows());
        const size_t chunk = 512;
        std::vector<size_t> idx(t.n_rows());
        std::iota(idx.begin(), idx.end(), 0);
        for (size_t start = 0; start < t.n_rows(); start += chunk) {
            size_t end = std::min(t.n_rows(), start + chunk);
            auto [x, y] = batch_tensors(t, idx, start, end);
            nd::Tensor probs = nd::softmax(logits(nd::constant(x)))->value;
            for (long r = 0; r < probs.shape[0]; ++r) {
                std::vector<double> row(static_cast<size_t>(n_classes));
                for (int c = 0; c < n_classes; ++c) row[static_cast<size_t>(c)] = probs.at(r, c);
                out.push_back(std::move(row));
            }
        }
        return out;
    }

    nlohmann::json state_json() const override { return nlohmann::json::object(); }
    std::vector<std::pair<std::string, const nd::Tensor*>> state_tensors() const override {
        std::vector<std::pair<std::string, const nd::Tensor*>> out;
        for (size_t i = 0; i < parameters.size(); ++i)
            out.emplace_back("p" + std::to_string(i), &parameters[i]->value);
        return out;
    }
    void load_state_tensors(const std::map<std::string, nd::Tensor>& tensors) {
        Rng rng(derive_seed(spec.seed, kind()));
        init_params(rng);
        for (size_t i = 0; i < parameters.size(); ++i) {
            auto it = tensors.find("p" + std::to_string(i));
            if (it == tensors.end()) throw IoError("missing parameter tensor");
            parameters[i]->value = it->second;
        }
    }

  protected:
    virtual bool sequence_input() const { return false; }

    std::pair<nd::Tensor, nd::Tensor> batch_tensors(const FeatureTable& t,
                                                    const std::vector<size_t>& idx, size_t start,
                                                    size_t end) const {
        long B = static_cast<long>(end - start);
        long D = static_cast<long>(t.n_cols());
        nd::Tensor x = sequence_input() ? nd::Tensor({B, D, 1}) : nd::Tensor({B, D});
        nd::Tensor y({B, static_cast<long>(n_classes)});
        for (long b = 0; b < B; ++b) {
            size_t r = idx[start + static_cast<size_t>(b)];
            const double* src = t.row(r);
            std::copy(src, src + D, x.v.begin() + b * D);
            y.at(b, t.labels[r]) = 1.0;
        }
        return {std::move(x), std::move(y)};
    }
};

// 41 -> 50 -> 30 -> 20 -> L, relu hidden layers, softmax output.
class FnnClassifier : public NeuralClassifier {
  public:
    using NeuralClassifier::NeuralClassifier;
    std::string kind() const override { return "fnn"; }

    void init_params(Rng& rng) override {
        parameters.clear();
        long in = static_cast<long>(n_features);
        for (int h : spec.fnn_hidden) {
            parameters.push_back(nd::param(nd::glorot_uniform({in, h}, rng)));
            parameters.push_back(nd::param(nd::Tensor::zeros({h})));
            in = h;
        }
        parameters.push_back(nd::param(nd::glorot_uniform({in, n_classes}, rng)));
        parameters.push_back(nd::param(nd::Tensor::zeros({n_classes})));
    }

    nd::NodePtr logits(nd::NodePtr x) const override {
        nd::NodePtr h = x;
        size_t p = 0;
        for (size_t i = 0; i < spec.fnn_hidden.size(); ++i) {
            h = nd::relu(nd::dense_forward(h, parameters[p], parameters[p + 1]));
            p += 2;
        }
        return nd::dense_forward(h, parameters[p], parameters[p + 1]);
    }
};

// Two stacked LSTM layers over the features fed as a length-D single-channel
// sequence; the final hidden state feeds the softmax layer.
class LstmClassifier : public NeuralClassifier {
  public:
    using NeuralClassifier::NeuralClassifier;
    std::string kind() const override { return "lstm"; }

    void init_params(Rng& rng) override {
        parameters.clear();
        long units = spec.lstm_units;
        auto make_cell = [&](long in) {
            for (int g = 0; g < 4; ++g)
                parameters.push_back(nd::param(nd::glorot_uniform({in + units, units}, rng)));
            for (int g = 0; g < 4; ++g) parameters.push_back(nd::param(nd::Tensor::zeros({units})));
        };
        make_cell(1);
        make_cell(units);
        parameters.push_back(nd::param(nd::glorot_uniform({units, n_classes}, rng)));
        parameters.push_back(nd::param(nd::Tensor::zeros({n_classes})));
    }

    nd::NodePtr logits(nd::NodePtr x) const override {
        long B = x->value.shape[0], T = x->value.shape[1];
        long units = spec.lstm_units;
        auto cell = [&](size_t base) {
            nd::LstmCellParams p;
            p.w_i = parameters[base];
            p.w_f = parameters[base + 1];
            p.w_o = parameters[base + 2];
            p.w_c = parameters[base + 3];
            p.b_i = parameters[base + 4];
            p.b_f = parameters[base + 5];
            p.b_o = parameters[base + 6];
            p.b_c = parameters[base + 7];
            return p;
        };
        nd::LstmCellParams c1 = cell(0), c2 = cell(8);
        nd::NodePtr h1 = nd::constant(nd::Tensor::zeros({B, units}));
        nd::NodePtr s1 = nd::constant(nd::Tensor::zeros({B, units}));
        nd::NodePtr h2 = nd::constant(nd::Tensor::zeros({B, units}));
        nd::NodePtr s2 = nd::constant(nd::Tensor::zeros({B, units}));
        nd::NodePtr flat = nd::flatten_rows(x);  // [B, T]
        for (long t = 0; t < T; ++t) {
            nd::NodePtr xt = nd::slice_cols(flat, t, 1);
            std::tie(h1, s1) = nd::lstm_step(xt, h1, s1, c1);
            std::tie(h2, s2) = nd::lstm_step(h1, h2, s2, c2);
        }
        return nd::dense_forward(h2, parameters[16], parameters[17]);
    }

  protected:
    bool sequence_input() const override { return true; }
};

// conv1d(filters, kernel) -> relu -> maxpool -> dense(100) relu -> softmax.
class CnnClassifier : public NeuralClassifier {
  public:
    using NeuralClassifier::NeuralClassifier;
    std::string kind() const override { return "cnn"; }

    void init_params(Rng& rng) override {
        parameters.clear();
        long conv_out = (static_cast<long>(n_features) - spec.cnn_kernel + 1);
        long pooled = std::max<long>(1, conv_out / spec.cnn_pool);
        long flat = pooled * spec.cnn_filters;
        parameters.push_back(
            nd::param(nd::glorot_uniform({spec.cnn_filters, spec.cnn_kernel, 1}, rng)));
        parameters.push_back(nd::param(nd::Tensor::zeros({spec.cnn_filters})));
        parameters.push_back(nd::param(nd::glorot_uniform({flat, spec.cnn_dense}, rng)));
        parameters.push_back(nd::param(nd::Tensor::zeros({spec.cnn_dense})));
        parameters.push_back(nd::param(nd::glorot_uniform({spec.cnn_dense, n_classes}, rng)));
        parameters.push_back(nd::param(nd::Tensor::zeros({n_classes})));
    }

    nd::NodePtr logits(nd::NodePtr x) const override {
        nd::NodePtr h = nd::relu(nd::conv1d_forward(x, parameters[0], parameters[1]));
        h = nd::flatten_rows(nd::maxpool1d_forward(h, spec.cnn_pool));
        h = nd::relu(nd::dense_forward(h, parameters[2], parameters[3]));
        return nd::dense_forward(h, parameters[4], parameters[5]);
    }

  protected:
    bool sequence_input() const override { return true; }
};

inline std::unique_ptr<Classifier> make_classifier(const ClassifierSpec& spec) {
    if (spec.kind == "dt") return std::make_unique<DecisionTree>(spec);
    if (spec.kind == "rf") return std::make_unique<RandomForest>(spec);
    if (spec.kind == "nb") return std::make_unique<MultinomialNB>(spec);
    if (spec.kind == "svm") return std::make_unique<LinearSvm>(spec);
    if (spec.kind == "fnn") return std::make_unique<FnnClassifier>(spec);
    if (spec.kind == "lstm") return std::make_unique<LstmClassifier>(spec);
    if (spec.kind == "cnn") return std::make_unique<CnnClassifier>(spec);
    throw ConfigError("unknown classifier kind: " + spec.kind);
}

// ---- trained-model files: kind tag + fitted-state payload ----

inline void save_model(const Classifier& c, std::ostream& out) {
    nlohmann::json j;
    j["kind"] = c.kind();
    j["n_classes"] = c.n_classes;
    j["n_features"] = c.n_features;
    j["state"] = c.state_json();
    std::string header = j.dump();
    out.write("MDL1", 4);
    std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    nd::save_tensors(out, c.state_tensors());
}

inline std::unique_ptr<Classifier> load_model(std::istream& in, const ClassifierSpec& spec) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MDL1", 4) != 0) throw IoError("bad model file magic");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError("truncated model file");
    auto j = nlohmann::json::parse(header);
    ClassifierSpec s = spec;
    s.kind = j.at("kind").get<std::string>();
    auto model = make_classifier(s);
    model->n_classes = j.at("n_classes").get<int>();
    model->n_features = j.at("n_features").get<size_t>();
    auto tensors = nd::load_tensors(in);
    if (auto* dt = dynamic_cast<DecisionTree*>(model.get()))
        dt->load_state(j.at("state"));
    else if (auto* rf = dynamic_cast<RandomForest*>(model.get()))
        rf->load_state(j.at("state"));
    else if (auto* nb = dynamic_cast<MultinomialNB*>(model.get()))
        nb->load_state(j.at("state"));
    else if (auto* svm = dynamic_cast<LinearSvm*>(model.get()))
        svm->load_state(j.at("state"));
    else if (auto* nn = dynamic_cast<NeuralClassifier*>(model.get()))
        nn->load_state_tensors(tensors);
    return model;
}

}  // namespace idsbal::clf
