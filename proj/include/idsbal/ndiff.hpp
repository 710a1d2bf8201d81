#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "idsbal/common.hpp"

// Minimal reverse-mode compute engine: dense/conv/pool/lstm/batch-norm layers,
// softmax cross entropy, and Adam. 64-bit floats throughout.
namespace idsbal::nd {

struct Tensor {
    std::vector<long> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<long> s) : shape(std::move(s)) {
        v.assign(static_cast<size_t>(count(shape)), 0.0);
    }
    Tensor(std::vector<long> s, std::vector<double> vals) : shape(std::move(s)), v(std::move(vals)) {
        if (static_cast<long>(v.size()) != count(shape))
            throw ShapeError("tensor buffer length does not match shape");
    }

    static long count(const std::vector<long>& s) {
        long n = 1;
        for (long d : s) {
            if (d <= 0) throw ShapeError("non-positive tensor extent");
            n *= d;
        }
        return n;
    }
    static Tensor zeros(std::vector<long> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<long> s, double x) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), x);
        return t;
    }
    static Tensor scalar(double x) { return Tensor({1}, {x}); }

    long size() const { return static_cast<long>(v.size()); }
    long dim(int i) const { return shape[static_cast<size_t>(i)]; }
    double& at(long i) { return v[static_cast<size_t>(i)]; }
    double at(long i) const { return v[static_cast<size_t>(i)]; }
    // 2-D access (row-major)
    double& at(long r, long c) { return v[static_cast<size_t>(r * shape[1] + c)]; }
    double at(long r, long c) const { return v[static_cast<size_t>(r * shape[1] + c)]; }
    // 3-D access
    double& at(long i, long j, long k) {
        return v[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double at(long i, long j, long k) const {
        return v[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

using EMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CEMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline EMap as_matrix(Tensor& t, long rows, long cols) { return EMap(t.v.data(), rows, cols); }
inline CEMap as_matrix(const Tensor& t, long rows, long cols) {
    return CEMap(t.v.data(), rows, cols);
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on demand during backward
    bool requires_grad = true;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> back;  // accumulates into parents' grads

    Tensor& ensure_grad() {
        if (grad.shape != value.shape) grad = Tensor::zeros(value.shape);
        return grad;
    }
};

inline NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                         std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->back = std::move(back);
    return n;
}

inline NodePtr constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = false;
    return n;
}

inline NodePtr param(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

inline void zero_grad(const std::vector<NodePtr>& params) {
    for (const auto& p : params) {
        p->ensure_grad();
        std::fill(p->grad.v.begin(), p->grad.v.end(), 0.0);
    }
}

// Reverse accumulation from a scalar loss node.
inline void backward(const NodePtr& loss) {
    if (!loss->back && loss->parents.empty() && loss->requires_grad == false)
        throw StateError("backward called on a node without a recorded forward pass");
    if (loss->value.size() != 1) throw ShapeError("backward requires a scalar loss");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::function<void(Node*)> visit = [&](Node* n) {
        if (!seen.insert(n).second) return;
        for (const auto& p : n->parents) visit(p.get());
        order.push_back(n);
    };
    visit(loss.get());
    for (Node* n : order) {
        n->ensure_grad();
        std::fill(n->grad.v.begin(), n->grad.v.end(), 0.0);
    }
    loss->grad.v[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->back) (*it)->back(**it);
}

// ---- primitive ops ----

inline NodePtr matmul(NodePtr a, NodePtr b) {
    const Tensor &A = a->value, &B = b->value;
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
        throw ShapeError("matmul shape mismatch");
    Tensor C({A.shape[0], B.shape[1]});
    as_matrix(C, C.shape[0], C.shape[1]).noalias() =
        as_matrix(A, A.shape[0], A.shape[1]) * as_matrix(B, B.shape[0], B.shape[1]);
    return make_node(std::move(C), {a, b}, [a, b](Node& self) {
        auto dC = as_matrix(self.grad, self.value.shape[0], self.value.shape[1]);
        if (a->requires_grad) {
            auto& gA = a->ensure_grad();
            as_matrix(gA, gA.shape[0], gA.shape[1]).noalias() +=
                dC * as_matrix(b->value, b->value.shape[0], b->value.shape[1]).transpose();
        }
        if (b->requires_grad) {
            auto& gB = b->ensure_grad();
            as_matrix(gB, gB.shape[0], gB.shape[1]).noalias() +=
                as_matrix(a->value, a->value.shape[0], a->value.shape[1]).transpose() * dC;
        }
    });
}

inline NodePtr add_rowvec(NodePtr a, NodePtr bias) {
    const Tensor &A = a->value, &B = bias->value;
    if (A.shape.size() != 2 || B.size() != A.shape[1])
        throw ShapeError("add_rowvec shape mismatch");
    Tensor C = A;
    for (long r = 0; r < A.shape[0]; ++r)
        for (long c = 0; c < A.shape[1]; ++c) C.at(r, c) += B.at(c);
    return make_node(std::move(C), {a, bias}, [a, bias](Node& self) {
        long R = self.value.shape[0], Cc = self.value.shape[1];
        if (a->requires_grad) {
            auto& g = a->ensure_grad();
            for (long i = 0; i < self.grad.size(); ++i) g.at(i) += self.grad.at(i);
        }
        if (bias->requires_grad) {
            auto& g = bias->ensure_grad();
            for (long r = 0; r < R; ++r)
                for (long c = 0; c < Cc; ++c) g.at(c) += self.grad.at(r, c);
        }
    });
}

// Affine part of a dense layer; activations are separate ops.
inline NodePtr dense_forward(NodePtr x, NodePtr w, NodePtr b) {
    return add_rowvec(matmul(std::move(x), std::move(w)), std::move(b));
}

namespace detail {
inline NodePtr elementwise2(NodePtr a, NodePtr b, double (*f)(double, double),
                            void (*df)(double, double, double, double&, double&)) {
    if (!a->value.same_shape(b->value)) throw ShapeError("elementwise shape mismatch");
    Tensor C(a->value.shape);
    for (long i = 0; i < C.size(); ++i) C.at(i) = f(a->value.at(i), b->value.at(i));
    return make_node(std::move(C), {a, b}, [a, b, df](Node& self) {
        for (long i = 0; i < self.value.size(); ++i) {
            double da = 0, db = 0;
            df(a->value.at(i), b->value.at(i), self.grad.at(i), da, db);
            if (a->requires_grad) a->ensure_grad().at(i) += da;
            if (b->requires_grad) b->ensure_grad().at(i) += db;
        }
    });
}
}  // namespace detail

inline NodePtr add(NodePtr a, NodePtr b) {
    return detail::elementwise2(
        std::move(a), std::move(b), [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) { da = g; db = g; });
}
inline NodePtr sub(NodePtr a, NodePtr b) {
    return detail::elementwise2(
        std::move(a), std::move(b), [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) { da = g; db = -g; });
}
inline NodePtr mul(NodePtr a, NodePtr b) {
    return detail::elementwise2(
        std::move(a), std::move(b), [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) { da = g * y; db = g * x; });
}

inline NodePtr scale(NodePtr a, double s) {
    Tensor C = a->value;
    for (auto& x : C.v) x *= s;
    return make_node(std::move(C), {a}, [a, s](Node& self) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (long i = 0; i < self.grad.size(); ++i) g.at(i) += s * self.grad.at(i);
    });
}

enum class Activation { Relu, LeakyRelu, Sigmoid, Tanh, Softmax };

inline Activation activation_from_name(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "leaky_relu") return Activation::LeakyRelu;
    if (name == "sigmoid") return Activation::Sigmoid;
    if (name == "tanh") return Activation::Tanh;
    if (name == "softmax") return Activation::Softmax;
    throw ConfigError("unknown activation kind: " + name);
}

inline NodePtr relu(NodePtr a) {
    Tensor C = a->value;
    for (auto& x : C.v) x = x > 0 ? x : 0.0;
    return make_node(std::move(C), {a}, [a](Node& self) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (long i = 0; i < self.grad.size(); ++i)
            if (a->value.at(i) > 0) g.at(i) += self.grad.at(i);
    });
}

inline NodePtr leaky_relu(NodePtr a, double slope = 0.2) {
    Tensor C = a->value;
    for (auto& x : C.v) x = x > 0 ? x : slope * x;
    return make_node(std::move(C), {a}, [a, slope](Node& self) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (long i = 0; i < self.grad.size(); ++i)
            g.at(i) += (a->value.at(i) > 0 ? 1.0 : slope) * self.grad.at(i);
    });
}

inline NodePtr sigmoid(NodePtr a) {
    Tensor C = a->value;
    for (auto& x : C.v) x = 1.0 / (1.0 + std::exp(-x));
    NodePtr out = make_node(std::move(C), {a}, nullptr);
    Node* raw = out.get();
    out->back = [a, raw](Node&) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (long i = 0; i < raw->value.size(); ++i) {
            double y = raw->value.at(i);
            g.at(i) += y * (1.0 - y) * raw->grad.at(i);
        }
    };
    return out;
}

inline NodePtr tanh_(NodePtr a) {
    Tensor C = a->value;
    for (auto& x : C.v) x = std::tanh(x);
    NodePtr out = make_node(std::move(C), {a}, nullptr);
    Node* raw = out.get();
    out->back = [a, raw](Node&) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (long i = 0; i < raw->value.size(); ++i) {
            double y = raw->value.at(i);
            g.at(i) += (1.0 - y * y) * raw->grad.at(i);
        }
    };
    return out;
}

// Row-wise softmax.
inline NodePtr softmax(NodePtr a) {
    const Tensor& A = a->value;
    if (A.shape.size() != 2) throw ShapeError("softmax expects a 2-D tensor");
    Tensor C = A;
    for (long r = 0; r < A.shape[0]; ++r) {
        double mx = -1e300;
        for (long c = 0; c < A.shape[1]; ++c) mx = std::max(mx, A.at(r, c));
        double s = 0;
        for (long c = 0; c < A.shape[1]; ++c) {
            C.at(r, c) = std::exp(A.at(r, c) - mx);
            s += C.at(r, c);
        }
        for (long c = 0; c < A.shape[1]; ++c) C.at(r, c) /= s;
    }
    NodePtr out = make_node(std::move(C), {a}, nullptr);
    Node* raw = out.get();
    out->back = [a, raw](Node&) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        long R = raw->value.shape[0], Cc = raw->value.shape[1];
        for (long r = 0; r < R; ++r) {
            double dot = 0;
            for (long c = 0; c < Cc; ++c) dot += raw->grad.at(r, c) * raw->value.at(r, c);
            for (long c = 0; c < Cc; ++c)
                g.at(r, c) += raw->value.at(r, c) * (raw->grad.at(r, c) - dot);
        }
    };
    return out;
}

inline NodePtr activation_forward(Activation kind, NodePtr a) {
    switch (kind) {
        case Activation::Relu: return relu(std::move(a));
        case Activation::LeakyRelu: return leaky_relu(std::move(a));
        case Activation::Sigmoid: return sigmoid(std::move(a));
        case Activation::Tanh: return tanh_(std::move(a));
        case Activation::Softmax: return softmax(std::move(a));
    }
    throw ConfigError("unknown activation kind");
}

inline NodePtr slice_cols(NodePtr a, long start, long len) {
    const Tensor& A = a->value;
    if (A.shape.size() != 2 || start < 0 || start + len > A.shape[1])
        throw ShapeError("slice_cols out of range");
    Tensor C({A.shape[0], len});
    for (long r = 0; r < A.shape[0]; ++r)
        for (long c = 0; c < len; ++c) C.at(r, c) = A.at(r, start + c);
    return make_node(std::move(C), {a}, [a, start, len](Node& self) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (long r = 0; r < self.value.shape[0]; ++r)
            for (long c = 0; c < len; ++c) g.at(r, start + c) += self.grad.at(r, c);
    });
}

inline NodePtr concat_cols(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    long R = parts[0]->value.shape[0], W = 0;
    for (const auto& p : parts) {
        if (p->value.shape.size() != 2 || p->value.shape[0] != R)
            throw ShapeError("concat_cols row mismatch");
        W += p->value.shape[1];
    }
    Tensor C({R, W});
    long off = 0;
    for (const auto& p : parts) {
        long w = p->value.shape[1];
        for (long r = 0; r < R; ++r)
            for (long c = 0; c < w; ++c) C.at(r, off + c) = p->value.at(r, c);
        off += w;
    }
    return make_node(std::move(C), parts, [parts](Node& self) {
        long off2 = 0;
        for (const auto& p : parts) {
            long w = p->value.shape[1];
            if (p->requires_grad) {
                auto& g = p->ensure_grad();
                for (long r = 0; r < self.value.shape[0]; ++r)
                    for (long c = 0; c < w; ++c) g.at(r, c) += self.grad.at(r, off2 + c);
            }
            off2 += w;
        }
    });
}

inline NodePtr sum(NodePtr a) {
    double s = std::accumulate(a->value.v.begin(), a->value.v.end(), 0.0);
    return make_node(Tensor::scalar(s), {a}, [a](Node& self) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (auto& x : g.v) x += self.grad.at(0);
    });
}

inline NodePtr mean(NodePtr a) {
    long n = a->value.size();
    return scale(sum(std::move(a)), 1.0 / static_cast<double>(n));
}

// Valid (unpadded) 1-D convolution. input [N,T,Cin], kernels [F,k,Cin], bias [F].
inline NodePtr conv1d_forward(NodePtr x, NodePtr kernels, NodePtr bias) {
    const Tensor &X = x->value, &K = kernels->value, &B = bias->value;
    if (X.shape.size() != 3 || K.shape.size() != 3 || X.shape[2] != K.shape[2])
        throw ShapeError("conv1d shape mismatch");
    if (B.size() != K.shape[0]) throw ShapeError("conv1d bias size mismatch");
    long N = X.shape[0], T = X.shape[1], Cin = X.shape[2], F = K.shape[0], kw = K.shape[1];
    if (T < kw) throw ShapeError("conv1d input shorter than kernel");
    long To = T - kw + 1;
    Tensor Y({N, To, F});
    for (long n = 0; n < N; ++n)
        for (long t = 0; t < To; ++t)
            for (long f = 0; f < F; ++f) {
                double acc = B.at(f);
                for (long j = 0; j < kw; ++j)
                    for (long c = 0; c < Cin; ++c) acc += X.at(n, t + j, c) * K.at(f, j, c);
                Y.at(n, t, f) = acc;
            }
    return make_node(std::move(Y), {x, kernels, bias}, [x, kernels, bias](Node& self) {
        const Tensor &X2 = x->value, &K2 = kernels->value;
        long N = X2.shape[0], Cin = X2.shape[2], F = K2.shape[0], kw = K2.shape[1];
        long To = self.value.shape[1];
        for (long n = 0; n < N; ++n)
            for (long t = 0; t < To; ++t)
                for (long f = 0; f < F; ++f) {
                    double g = self.grad.at(n, t, f);
                    if (bias->requires_grad) bias->ensure_grad().at(f) += g;
                    for (long j = 0; j < kw; ++j)
                        for (long c = 0; c < Cin; ++c) {
                            if (kernels->requires_grad)
                                kernels->ensure_grad().at(f, j, c) += g * X2.at(n, t + j, c);
                            if (x->requires_grad)
                                x->ensure_grad().at(n, t + j, c) += g * K2.at(f, j, c);
                        }
                }
    });
}

// Non-overlapping max pooling over the time axis with floor semantics; an
// input shorter than `pool` passes through as a single short window. Ties take
// the first index.
inline NodePtr maxpool1d_forward(NodePtr x, long pool) {
    const Tensor& X = x->value;
    if (X.shape.size() != 3) throw ShapeError("maxpool1d expects [N,T,C]");
    if (pool < 1) throw ConfigError("pool size must be positive");
    long N = X.shape[0], T = X.shape[1], C = X.shape[2];
    long To = std::max<long>(1, T / pool);
    Tensor Y({N, To, C});
    auto argmax = std::make_shared<std::vector<long>>(static_cast<size_t>(N * To * C));
    for (long n = 0; n < N; ++n)
        for (long t = 0; t < To; ++t)
            for (long c = 0; c < C; ++c) {
                long lo = t * pool, hi = std::min(T, lo + pool);
                long best = lo;
                for (long j = lo + 1; j < hi; ++j)
                    if (X.at(n, j, c) > X.at(n, best, c)) best = j;
                Y.at(n, t, c) = X.at(n, best, c);
                (*argmax)[static_cast<size_t>((n * To + t) * C + c)] = best;
            }
    return make_node(std::move(Y), {x}, [x, argmax](Node& self) {
        if (!x->requires_grad) return;
        auto& g = x->ensure_grad();
        long N = self.value.shape[0], To = self.value.shape[1], C = self.value.shape[2];
        for (long n = 0; n < N; ++n)
            for (long t = 0; t < To; ++t)
                for (long c = 0; c < C; ++c)
                    g.at(n, (*argmax)[static_cast<size_t>((n * To + t) * C + c)], c) +=
                        self.grad.at(n, t, c);
    });
}

// Reshape [N, ...] to [N, cols]; gradient is the inverse reshape.
inline NodePtr flatten_rows(NodePtr a) {
    const Tensor& A = a->value;
    if (A.shape.empty()) throw ShapeError("flatten_rows on a scalar");
    long N = A.shape[0];
    long cols = A.size() / N;
    Tensor C({N, cols}, A.v);
    return make_node(std::move(C), {a}, [a](Node& self) {
        if (!a->requires_grad) return;
        auto& g = a->ensure_grad();
        for (long i = 0; i < self.grad.size(); ++i) g.at(i) += self.grad.at(i);
    });
}

struct BatchNormState {
    Tensor running_mean, running_var;
    double momentum = 0.9;
    bool initialized = false;
};

// Per-feature standardization then affine. Training mode updates running stats;
// inference mode standardizes with them.
inline NodePtr batch_norm_forward(NodePtr x, NodePtr gamma, NodePtr beta, BatchNormState* state,
                                  bool training, double eps = 1e-5) {
    const Tensor& X = x->value;
    if (X.shape.size() != 2) throw ShapeError("batch_norm expects [N,C]");
    long N = X.shape[0], C = X.shape[1];
    if (gamma->value.size() != C || beta->value.size() != C)
        throw ShapeError("batch_norm scale/shift size mismatch");
    if (training && N < 2) throw StateError("batch_norm training mode needs batch size >= 2");
    Tensor meanv({C}), varv({C});
    if (training) {
        for (long c = 0; c < C; ++c) {
            double m = 0;
            for (long n = 0; n < N; ++n) m += X.at(n, c);
            m /= static_cast<double>(N);
            double v = 0;
            for (long n = 0; n < N; ++n) v += (X.at(n, c) - m) * (X.at(n, c) - m);
            v /= static_cast<double>(N);
            meanv.at(c) = m;
            varv.at(c) = v;
        }
        if (state) {
            if (!state->initialized) {
                state->running_mean = meanv;
                state->running_var = varv;
                state->initialized = true;
            } else {
                for (long c = 0; c < C; ++c) {
                    state->running_mean.at(c) =
                        state->momentum * state->running_mean.at(c) + (1 - state->momentum) * meanv.at(c);
                    state->running_var.at(c) =
                        state->momentum * state->running_var.at(c) + (1 - state->momentum) * varv.at(c);
                }
            }
        }
    } else {
        if (!state || !state->initialized)
            throw StateError("batch_norm inference mode requires fitted running stats");
        meanv = state->running_mean;
        varv = state->running_var;
    }
    Tensor xhat({N, C});
    Tensor Y({N, C});
    for (long c = 0; c < C; ++c) {
        double inv = 1.0 / std::sqrt(varv.at(c) + eps);
        for (long n = 0; n < N; ++n) {
            xhat.at(n, c) = (X.at(n, c) - meanv.at(c)) * inv;
            Y.at(n, c) = gamma->value.at(c) * xhat.at(n, c) + beta->value.at(c);
        }
    }
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto vv = std::make_shared<Tensor>(varv);
    return make_node(std::move(Y), {x, gamma, beta},
                     [x, gamma, beta, xh, vv, training, eps](Node& self) {
        long N = self.value.shape[0], C = self.value.shape[1];
        for (long c = 0; c < C; ++c) {
            double dgamma = 0, dbeta = 0;
            for (long n = 0; n < N; ++n) {
                dgamma += self.grad.at(n, c) * xh->at(n, c);
                dbeta += self.grad.at(n, c);
            }
            if (gamma->requires_grad) gamma->ensure_grad().at(c) += dgamma;
            if (beta->requires_grad) beta->ensure_grad().at(c) += dbeta;
            if (!x->requires_grad) continue;
            double inv = 1.0 / std::sqrt(vv->at(c) + eps);
            auto& gx = x->ensure_grad();
            if (training) {
                for (long n = 0; n < N; ++n)
                    gx.at(n, c) += gamma->value.at(c) * inv / static_cast<double>(N) *
                                   (static_cast<double>(N) * self.grad.at(n, c) - dbeta -
                                    xh->at(n, c) * dgamma);
            } else {
                for (long n = 0; n < N; ++n)
                    gx.at(n, c) += gamma->value.at(c) * inv * self.grad.at(n, c);
            }
        }
    });
}

// Mean over the batch of -log softmax probability of the target class.
// Targets must be one-hot rows.
inline NodePtr softmax_cross_entropy(NodePtr logits, const Tensor& targets) {
    const Tensor& Z = logits->value;
    if (Z.shape.size() != 2 || !targets.same_shape(Z))
        throw ShapeError("softmax_cross_entropy shape mismatch");
    long N = Z.shape[0], C = Z.shape[1];
    for (long r = 0; r < N; ++r) {
        int hot = 0;
        for (long c = 0; c < C; ++c) {
            double t = targets.at(r, c);
            if (t == 1.0)
                ++hot;
            else if (t != 0.0)
                throw DataError("softmax_cross_entropy targets must be one-hot");
        }
        if (hot != 1) throw DataError("softmax_cross_entropy targets must be one-hot");
    }
    auto probs = std::make_shared<Tensor>(Z);
    double loss = 0;
    for (long r = 0; r < N; ++r) {
        double mx = -1e300;
        for (long c = 0; c < C; ++c) mx = std::max(mx, Z.at(r, c));
        double s = 0;
        for (long c = 0; c < C; ++c) {
            probs->at(r, c) = std::exp(Z.at(r, c) - mx);
            s += probs->at(r, c);
        }
        for (long c = 0; c < C; ++c) {
            probs->at(r, c) /= s;
            if (targets.at(r, c) == 1.0) loss -= std::log(std::max(probs->at(r, c), 1e-300));
        }
    }
    loss /= static_cast<double>(N);
    auto tgt = std::make_shared<Tensor>(targets);
    return make_node(Tensor::scalar(loss), {logits}, [logits, probs, tgt](Node& self) {
        if (!logits->requires_grad) return;
        auto& g = logits->ensure_grad();
        long N = probs->shape[0], C = probs->shape[1];
        double up = self.grad.at(0) / static_cast<double>(N);
        for (long r = 0; r < N; ++r)
            for (long c = 0; c < C; ++c) g.at(r, c) += up * (probs->at(r, c) - tgt->at(r, c));
    });
}

// ---- LSTM cell (sigmoid gates, tanh candidate) ----

struct LstmCellParams {
    NodePtr w_i, w_f, w_o, w_c;  // [(input+hidden), hidden]
    NodePtr b_i, b_f, b_o, b_c;  // [hidden]

    std::vector<NodePtr> all() const { return {w_i, w_f, w_o, w_c, b_i, b_f, b_o, b_c}; }
};

inline std::pair<NodePtr, NodePtr> lstm_step(NodePtr x, NodePtr h_prev, NodePtr c_prev,
                                             const LstmCellParams& p) {
    if (x->value.shape[0] != h_prev->value.shape[0] ||
        h_prev->value.shape != c_prev->value.shape)
        throw ShapeError("lstm_step shape mismatch");
    NodePtr xh = concat_cols({x, h_prev});
    NodePtr i = sigmoid(dense_forward(xh, p.w_i, p.b_i));
    NodePtr f = sigmoid(dense_forward(xh, p.w_f, p.b_f));
    NodePtr o = sigmoid(dense_forward(xh, p.w_o, p.b_o));
    NodePtr cand = tanh_(dense_forward(xh, p.w_c, p.b_c));
    NodePtr c = add(mul(f, c_prev), mul(i, cand));
    NodePtr h = mul(o, tanh_(c));
    return {h, c};
}

// ---- Adam ----

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct Adam {
    AdamConfig cfg;
    long t = 0;
    std::unordered_map<Node*, std::pair<Tensor, Tensor>> moments;

    explicit Adam(AdamConfig c = {}) : cfg(c) {}

    void step(const std::vector<NodePtr>& params) {
        ++t;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (const auto& p : params) {
            if (p->grad.shape != p->value.shape)
                throw ShapeError("adam_step: gradient missing or mis-shaped");
            auto it = moments.find(p.get());
            if (it == moments.end())
                it = moments
                         .emplace(p.get(), std::make_pair(Tensor::zeros(p->value.shape),
                                                          Tensor::zeros(p->value.shape)))
                         .first;
            Tensor& m = it->second.first;
            Tensor& v = it->second.second;
            for (long i = 0; i < p->value.size(); ++i) {
                double g = p->grad.at(i);
                m.at(i) = cfg.beta1 * m.at(i) + (1 - cfg.beta1) * g;
                v.at(i) = cfg.beta2 * v.at(i) + (1 - cfg.beta2) * g * g;
                double mhat = m.at(i) / bc1;
                double vhat = v.at(i) / bc2;
                p->value.at(i) -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        }
    }
};

// ---- parameter init ----

inline Tensor glorot_uniform(std::vector<long> shape, Rng& rng) {
    long fan_in = shape.size() >= 2 ? shape[0] : shape[0];
    long fan_out = shape.size() >= 2 ? shape[1] : shape[0];
    if (shape.size() == 3) {  // conv kernels [F,k,Cin]
        fan_in = shape[1] * shape[2];
        fan_out = shape[0];
    }
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> d(-limit, limit);
    Tensor t(std::move(shape));
    for (auto& x : t.v) x = d(rng);
    return t;
}

// ---- checkpoint container: named tensors, little-endian ----

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace detail {
template <typename T>
void write_le(std::ostream& out, T x) {
    out.write(reinterpret_cast<const char*>(&x), sizeof(T));
}
template <typename T>
T read_le(std::istream& in) {
    T x{};
    in.read(reinterpret_cast<char*>(&x), sizeof(T));
    if (!in) throw IoError("truncated checkpoint");
    return x;
}
}  // namespace detail

inline void save_tensors(std::ostream& out,
                         const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
    out.write("NDF1", 4);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t->shape.size()));
        for (long d : t->shape) detail::write_le<std::int64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t->v.data()),
                  static_cast<std::streamsize>(t->v.size() * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint write failure");
}

inline std::map<std::string, Tensor> load_tensors(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "NDF1", 4) != 0) throw IoError("bad checkpoint magic");
    auto count = detail::read_le<std::uint32_t>(in);
    std::map<std::string, Tensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        auto len = detail::read_le<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        auto ndim = detail::read_le<std::uint32_t>(in);
        std::vector<long> shape(ndim);
        for (auto& d : shape) d = static_cast<long>(detail::read_le<std::int64_t>(in));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        if (!in) throw IoError("truncated checkpoint");
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

}  // namespace idsbal::nd
