#pragma once

// Dense row-major tensors of doubles with tape-free reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a shared node. Every op allocates a fresh
// node whose value is never mutated afterwards; nodes produced from at least
// one requires_grad input remember their inputs and a backward closure, which
// is all backward() needs to walk the graph in reverse topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "maskunet/error.hpp"

namespace maskunet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty until something accumulates into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    bool is_leaf() const { return parents.empty(); }

    std::vector<double>& grad_buffer() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape_numel(shape) != values.size()) {
            throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(values.size()));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), 0.0, requires_grad);
    }

    static Tensor full(Shape shape, double v, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<double>{v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> data() const { return node_->value; }

    // In-place access is reserved for leaves (parameters, optimizer updates).
    std::span<double> mutable_data() {
        if (!node_->is_leaf()) {
            throw ContractError("tensor: only leaf tensors may be modified in place");
        }
        return node_->value;
    }

    double item() const {
        if (numel() != 1) {
            throw DimensionError("tensor: item() on shape " + shape_str(shape()));
        }
        return node_->value[0];
    }

    bool requires_grad() const { return node_ && node_->requires_grad; }

    Tensor& set_requires_grad(bool on) {
        if (!node_->is_leaf()) {
            throw ContractError("tensor: requires_grad can only be toggled on leaves");
        }
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

    // Empty span when nothing has been accumulated yet.
    std::span<const double> grad() const {
        if (!has_grad()) return {};
        return node_->grad;
    }

    void zero_grad() {
        if (node_) node_->grad.clear();
    }

    // Fresh leaf holding a copy of the value; no gradient tracking.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    // Deep copy that keeps the requires_grad flag (used for parameter cloning).
    Tensor clone() const { return Tensor(shape(), node_->value, requires_grad()); }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// Backward callback for custom_op: receives the gradient flowing into the op's
// output and one span per input. The span is empty for inputs that do not
// require gradients; otherwise gradients must be accumulated (+=) into it.
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::span<const std::span<double>> in_grads)>;

// Records a new node. This is the single place where ops join the graph, so the
// finiteness invariant is enforced here.
inline Tensor custom_op(const char* name, Shape shape, std::vector<double> value,
                        std::vector<Tensor> inputs, BackwardFn backward) {
    for (double v : value) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(name) + ": non-finite value in result");
        }
    }
    Tensor out(std::move(shape), std::move(value), false);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;

    auto& node = *out.node();
    node.requires_grad = true;
    std::vector<std::shared_ptr<detail::Node>> in_nodes;
    in_nodes.reserve(inputs.size());
    for (const auto& in : inputs) {
        in_nodes.push_back(in.node());
        if (in.requires_grad()) node.parents.push_back(in.node());
    }
    node.backward = [in_nodes = std::move(in_nodes), fn = std::move(backward)](detail::Node& self) {
        std::vector<std::span<double>> grads(in_nodes.size());
        for (std::size_t i = 0; i < in_nodes.size(); ++i) {
            if (in_nodes[i]->requires_grad) grads[i] = in_nodes[i]->grad_buffer();
        }
        fn(self.grad, grads);
    };
    return out;
}

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// loss. Leaf gradients add up across calls; interior gradients are rebuilt.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss is not on a recorded graph");
    }

    // Iterative post-order DFS; each node lands in `order` exactly once.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
    }
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Broadcast plan for binary ops: the smaller operand repeats with period
// `period` over the larger one. Allowed: equal shapes, single-element operands,
// and an operand whose shape is a trailing suffix of the other's.
struct Broadcast {
    Shape out_shape;
    std::size_t a_period;
    std::size_t b_period;
};

inline Broadcast plan_broadcast(const char* name, const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) return {sa, a.numel(), b.numel()};
    if (b.numel() == 1 || is_suffix(sb, sa)) return {sa, a.numel(), b.numel()};
    if (a.numel() == 1 || is_suffix(sa, sb)) return {sb, a.numel(), b.numel()};
    throw DimensionError(std::string(name) + ": cannot broadcast " + shape_str(sa) + " with " +
                         shape_str(sb));
}

template <class Fwd, class DA, class DB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
    const Broadcast bc = plan_broadcast(name, a, b);
    const std::size_t n = shape_numel(bc.out_shape);
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i % bc.a_period], bv[i % bc.b_period]);
    return custom_op(name, bc.out_shape, std::move(out), {a, b},
                     [an = a.node(), bn = b.node(), bc, n, da, db](std::span<const double> g,
                                                                   std::span<const std::span<double>> gi) {
                         const auto& x = an->value;
                         const auto& y = bn->value;
                         for (std::size_t i = 0; i < n; ++i) {
                             const double xa = x[i % bc.a_period];
                             const double yb = y[i % bc.b_period];
                             if (!gi[0].empty()) gi[0][i % bc.a_period] += g[i] * da(xa, yb);
                             if (!gi[1].empty()) gi[1][i % bc.b_period] += g[i] * db(xa, yb);
                         }
                     });
}

template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
    const auto av = a.data();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return custom_op(name, a.shape(), std::move(out), {a},
                     [an = a.node(), deriv](std::span<const double> g, std::span<const std::span<double>> gi) {
                         const auto& x = an->value;
                         for (std::size_t i = 0; i < x.size(); ++i) gi[0][i] += g[i] * deriv(x[i]);
                     });
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary(
        "scale", a, [s](double x) { return s * x; }, [s](double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    return detail::unary(
        "add_scalar", a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// relu'(0) is taken as 0.
inline Tensor relu(const Tensor& a) {
    return detail::unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary("sigmoid", a, detail::stable_sigmoid, [](double x) {
        const double s = detail::stable_sigmoid(x);
        return s * (1.0 - s);
    });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

inline Tensor log(const Tensor& a) {
    return detail::unary(
        "log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

inline Tensor square(const Tensor& a) {
    return detail::unary(
        "square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return custom_op("sum", Shape{}, {s}, {a},
                     [](std::span<const double> g, std::span<const std::span<double>> gi) {
                         for (double& v : gi[0]) v += g[0];
                     });
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw DimensionError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

// Sums over the trailing axis: [..., K] -> [...].
inline Tensor sum_last(const Tensor& a) {
    if (a.rank() == 0) throw DimensionError("sum_last: scalar input");
    const std::size_t k = a.shape().back();
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    const std::size_t rows = shape_numel(out_shape);
    std::vector<double> out(rows, 0.0);
    const auto av = a.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < k; ++j) out[r] += av[r * k + j];
    return custom_op("sum_last", out_shape, std::move(out), {a},
                     [rows, k](std::span<const double> g, std::span<const std::span<double>> gi) {
                         for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < k; ++j) gi[0][r * k + j] += g[r];
                     });
}

inline Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    return mean(square(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> v(a.data().begin(), a.data().end());
    return custom_op("reshape", std::move(shape), std::move(v), {a},
                     [](std::span<const double> g, std::span<const std::span<double>> gi) {
                         for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                     });
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(a.shape()));
    const std::size_t m = a.dim(0), n = a.dim(1);
    const auto av = a.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return custom_op("transpose", Shape{n, m}, std::move(out), {a},
                     [m, n](std::span<const double> g, std::span<const std::span<double>> gi) {
                         for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) gi[0][i * n + j] += g[j * m + i];
                     });
}

// Row lookup into a [K, D] table; used for class embeddings.
inline Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
    if (table.rank() != 2) throw DimensionError("gather_rows: table must be 2-D, got " + shape_str(table.shape()));
    const std::size_t k = table.dim(0), d = table.dim(1);
    std::vector<std::size_t> rows(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= k) {
            throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " outside [0, " +
                                std::to_string(k) + ")");
        }
        rows[i] = static_cast<std::size_t>(ids[i]);
    }
    const auto tv = table.data();
    std::vector<double> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(i * d));
    return custom_op("gather_rows", Shape{rows.size(), d}, std::move(out), {table},
                     [rows, d](std::span<const double> g, std::span<const std::span<double>> gi) {
                         for (std::size_t i = 0; i < rows.size(); ++i)
                             for (std::size_t j = 0; j < d; ++j) gi[0][rows[i] * d + j] += g[i * d + j];
                     });
}

// ---------------------------------------------------------------------------
// Products

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const auto av = a.data();
    const auto bv = b.data();
    // Each output element accumulates from 0.0 in ascending p, the same order
    // as the per-row dot products in bmm.
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = &out[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double a_ip = av[i * k + p];
            const double* brow = &bv[p * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += a_ip * brow[j];
        }
    }
    return custom_op("matmul", Shape{m, n}, std::move(out), {a, b},
                     [an = a.node(), bn = b.node(), m, k, n](std::span<const double> g,
                                                             std::span<const std::span<double>> gi) {
                         const auto& x = an->value;
                         const auto& y = bn->value;
                         if (!gi[0].empty())
                             for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t p = 0; p < k; ++p) {
                                     double acc = 0.0;
                                     for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
                                     gi[0][i * k + p] += acc;
                                 }
                         if (!gi[1].empty())
                             for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t p = 0; p < k; ++p) {
                                     const double x_ip = x[i * k + p];
                                     if (x_ip == 0.0) continue;
                                     double* grow = &gi[1][p * n];
                                     for (std::size_t j = 0; j < n; ++j) grow[j] += x_ip * g[i * n + j];
                                 }
                     });
}

// Batched product against per-sample weights: out[b] = h[b] * w_hat[b]^T with
// h: [B, N, C_in], w_hat: [B, C_out, C_in] -> [B, N, C_out].
inline Tensor bmm(const Tensor& h, const Tensor& w_hat) {
    if (h.rank() != 3 || w_hat.rank() != 3) {
        throw DimensionError("bmm: expected rank-3 operands, got " + shape_str(h.shape()) + " and " +
                             shape_str(w_hat.shape()));
    }
    if (h.dim(0) != w_hat.dim(0)) {
        throw DimensionError("bmm: batch mismatch " + shape_str(h.shape()) + " vs " + shape_str(w_hat.shape()));
    }
    if (h.dim(2) != w_hat.dim(2)) {
        throw DimensionError("bmm: channel mismatch " + shape_str(h.shape()) + " vs " + shape_str(w_hat.shape()));
    }
    const std::size_t nb = h.dim(0), n = h.dim(1), cin = h.dim(2), cout = w_hat.dim(1);
    const auto hv = h.data();
    const auto wv = w_hat.data();
    std::vector<double> out(nb * n * cout);
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t o = 0; o < cout; ++o) {
                const double* hr = &hv[(b * n + r) * cin];
                const double* wr = &wv[(b * cout + o) * cin];
                double acc = 0.0;
                for (std::size_t i = 0; i < cin; ++i) acc += hr[i] * wr[i];
                out[(b * n + r) * cout + o] = acc;
            }
    return custom_op("bmm", Shape{nb, n, cout}, std::move(out), {h, w_hat},
                     [hn = h.node(), wn = w_hat.node(), nb, n, cin, cout](std::span<const double> g,
                                                                         std::span<const std::span<double>> gi) {
                         const auto& hv = hn->value;
                         const auto& wv = wn->value;
                         for (std::size_t b = 0; b < nb; ++b)
                             for (std::size_t r = 0; r < n; ++r)
                                 for (std::size_t o = 0; o < cout; ++o) {
                                     const double go = g[(b * n + r) * cout + o];
                                     if (go == 0.0) continue;
                                     const std::size_t hoff = (b * n + r) * cin;
                                     const std::size_t woff = (b * cout + o) * cin;
                                     if (!gi[0].empty())
                                         for (std::size_t i = 0; i < cin; ++i) gi[0][hoff + i] += go * wv[woff + i];
                                     if (!gi[1].empty())
                                         for (std::size_t i = 0; i < cin; ++i) gi[1][woff + i] += go * hv[hoff + i];
                                 }
                     });
}

// Global average pooling: [B, C, H, W] -> [B, C]; rank-2 input passes through.
inline Tensor gap(const Tensor& z) {
    if (z.rank() == 2) return z;
    if (z.rank() != 4) throw DimensionError("gap: expected rank 2 or 4, got " + shape_str(z.shape()));
    const std::size_t nb = z.dim(0), c = z.dim(1), hw = z.dim(2) * z.dim(3);
    if (hw == 0) throw DimensionError("gap: empty spatial extent " + shape_str(z.shape()));
    const auto zv = z.data();
    std::vector<double> out(nb * c, 0.0);
    for (std::size_t i = 0; i < nb * c; ++i) {
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += zv[i * hw + p];
        out[i] = acc / static_cast<double>(hw);
    }
    return custom_op("gap", Shape{nb, c}, std::move(out), {z},
                     [nb, c, hw](std::span<const double> g, std::span<const std::span<double>> gi) {
                         const double inv = 1.0 / static_cast<double>(hw);
                         for (std::size_t i = 0; i < nb * c; ++i)
                             for (std::size_t p = 0; p < hw; ++p) gi[0][i * hw + p] += g[i] * inv;
                     });
}

// Forward value is the step function [soft >= threshold]; the gradient passes
// straight through to `soft` unchanged.
inline Tensor straight_through(const Tensor& soft, double threshold) {
    const auto sv = soft.data();
    std::vector<double> out(sv.size());
    for (std::size_t i = 0; i < sv.size(); ++i) out[i] = sv[i] >= threshold ? 1.0 : 0.0;
    return custom_op("straight_through", soft.shape(), std::move(out), {soft},
                     [](std::span<const double> g, std::span<const std::span<double>> gi) {
                         for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                     });
}

// x [N, C_in] -> x * W^T + b with W: [C_out, C_in], b: [C_out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    return add(matmul(x, transpose(weight)), bias);
}

} // namespace maskunet
