#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace nascell {

/// Dimension sizes, row-major storage order.
using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("shape dimensions must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

/// One node of the differentiation graph: the value, an optional gradient
/// buffer, and the recorded backward rule linking it to its inputs. Nodes
/// reference their parents, so the graph for a forward pass stays alive
/// exactly as long as some result tensor does.
struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until first needed; same length as data after
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward_step;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

inline thread_local bool grad_mode = true;

} // namespace detail

inline bool grad_enabled() { return detail::grad_mode; }

/// Disables graph recording for the enclosed scope (evaluation passes).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
    ~NoGradGuard() { detail::grad_mode = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Shared handle to a dense 64-bit tensor participating in a reverse-mode
/// differentiation graph. Values are conceptually immutable once a tensor has
/// been consumed by an operation; gradient buffers accumulate across backward
/// calls until zero_grad(). Parameter data may be mutated by optimizers
/// between graph builds.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size()) {
            throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape));
        }
        n_ = std::make_shared<detail::TensorNode>();
        n_->shape = std::move(shape);
        n_->data = std::move(values);
        n_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int dim(int axis) const { return n_->shape.at(static_cast<std::size_t>(axis)); }
    std::size_t numel() const { return n_->data.size(); }
    bool is_scalar() const { return defined() && numel() == 1; }

    double value() const {
        if (!is_scalar()) throw std::invalid_argument("Tensor::value: tensor is not scalar");
        return n_->data[0];
    }

    std::vector<double>& data() { return n_->data; }
    const std::vector<double>& data() const { return n_->data; }

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        n_->requires_grad = rg;
        return *this;
    }

    /// Gradient buffer, allocated (zero) on first access.
    std::vector<double>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    const std::vector<double>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }

    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
    }

    /// Value copy detached from any graph.
    Tensor detach() const { return Tensor(n_->shape, n_->data, false); }

    /// Node identity; used for graph bookkeeping and parameter audits.
    detail::TensorNode* node() const { return n_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_shared() const { return n_; }

    /// Graph wiring used by operation implementations: marks this tensor as a
    /// recorded op output with the given inputs and backward rule.
    void record(std::vector<std::shared_ptr<detail::TensorNode>> parents,
                std::function<void()> backward_step) {
        n_->requires_grad = true;
        n_->parents = std::move(parents);
        n_->backward_step = std::move(backward_step);
    }

private:
    std::shared_ptr<detail::TensorNode> n_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

} // namespace detail

/// Reverse-mode sweep from a scalar loss. Gradients of every requires_grad
/// tensor on a path to the loss are accumulated (+=); tensors off that path
/// are untouched. Repeated calls without zero_grad() keep accumulating.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar())
        throw std::invalid_argument("backward: loss must be a defined scalar tensor");
    if (!loss.requires_grad())
        throw std::invalid_argument("backward: loss does not require grad (not on a graph)");

    using detail::TensorNode;
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* child = node->parents[idx++].get();
            if (visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Grad buffers double as the propagation workspace; stale accumulated
    // values inside the reachable subgraph would be re-propagated, so they
    // are parked here and added back after the sweep. Each call therefore
    // contributes exactly one fresh analytic gradient.
    std::vector<std::pair<TensorNode*, std::vector<double>>> parked;
    for (TensorNode* n : order) {
        if (n->grad.empty()) continue;
        bool any = false;
        for (double v : n->grad) {
            if (v != 0.0) {
                any = true;
                break;
            }
        }
        if (any) {
            parked.emplace_back(n, std::move(n->grad));
            n->grad.assign(n->data.size(), 0.0);
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_step) (*it)->backward_step();
    }

    for (auto& [n, old] : parked) {
        for (std::size_t i = 0; i < old.size(); ++i) n->grad[i] += old[i];
    }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic with singleton-dimension broadcasting of the second
// operand: ranks must match and every dimension of b must equal a's or be 1.
// ---------------------------------------------------------------------------

enum class BinaryKind { Add, Sub, Mul };

namespace detail {

// Row-major strides of b relative to a's shape, 0 where b broadcasts.
inline std::vector<std::size_t> broadcast_strides(const Shape& a, const Shape& b) {
    if (a.size() != b.size()) {
        throw std::invalid_argument("elementwise shape mismatch: " + shape_str(a) + " vs " +
                                    shape_str(b) + " (ranks differ)");
    }
    std::vector<std::size_t> strides(b.size(), 0);
    std::size_t run = 1;
    for (int i = static_cast<int>(b.size()) - 1; i >= 0; --i) {
        if (b[i] == a[i]) {
            strides[i] = run;
        } else if (b[i] == 1) {
            strides[i] = 0;
        } else {
            throw std::invalid_argument("elementwise shape mismatch: " + shape_str(a) + " vs " +
                                        shape_str(b));
        }
        run *= static_cast<std::size_t>(b[i]);
    }
    return strides;
}

// Calls fn(flat_a, flat_b) for every position of shape a.
template <typename Fn>
inline void for_each_broadcast(const Shape& a, const std::vector<std::size_t>& b_strides, Fn&& fn) {
    const int nd = static_cast<int>(a.size());
    std::vector<int> idx(a.size(), 0);
    const std::size_t total = shape_numel(a);
    std::size_t ib = 0;
    for (std::size_t ia = 0; ia < total; ++ia) {
        fn(ia, ib);
        for (int d = nd - 1; d >= 0; --d) {
            ++idx[d];
            ib += b_strides[d];
            if (idx[d] < a[d]) break;
            idx[d] = 0;
            ib -= b_strides[d] * static_cast<std::size_t>(a[d]);
        }
    }
}

} // namespace detail

inline Tensor binary_elementwise(const Tensor& a, const Tensor& b, BinaryKind kind) {
    const bool same = a.shape() == b.shape();
    std::vector<std::size_t> bstr;
    if (!same) bstr = detail::broadcast_strides(a.shape(), b.shape());

    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<double> out(ad.size());
    if (same) {
        switch (kind) {
            case BinaryKind::Add:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
                break;
            case BinaryKind::Sub:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
                break;
            case BinaryKind::Mul:
                for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
                break;
        }
    } else {
        detail::for_each_broadcast(a.shape(), bstr, [&](std::size_t ia, std::size_t ib) {
            switch (kind) {
                case BinaryKind::Add: out[ia] = ad[ia] + bd[ib]; break;
                case BinaryKind::Sub: out[ia] = ad[ia] - bd[ib]; break;
                case BinaryKind::Mul: out[ia] = ad[ia] * bd[ib]; break;
            }
        });
    }

    Tensor result(a.shape(), std::move(out));
    if (grad_enabled() && detail::any_requires_grad({&a, &b})) {
        auto an = a.node_shared();
        auto bn = b.node_shared();
        auto* rn = result.node();
        result.record({an, bn}, [an, bn, rn, kind, same, bstr]() {
            const auto& g = rn->grad;
            if (an->requires_grad) {
                an->ensure_grad();
                auto& ga = an->grad;
                if (kind == BinaryKind::Mul) {
                    if (same) {
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
                    } else {
                        detail::for_each_broadcast(an->shape, bstr, [&](std::size_t ia, std::size_t ib) {
                            ga[ia] += g[ia] * bn->data[ib];
                        });
                    }
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                auto& gb = bn->grad;
                const double sign = (kind == BinaryKind::Sub) ? -1.0 : 1.0;
                if (same) {
                    if (kind == BinaryKind::Mul) {
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
                    } else {
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
                    }
                } else {
                    // broadcast-sum reduction back onto b
                    detail::for_each_broadcast(an->shape, bstr, [&](std::size_t ia, std::size_t ib) {
                        gb[ib] += (kind == BinaryKind::Mul) ? g[ia] * an->data[ia] : sign * g[ia];
                    });
                }
            }
        });
    }
    return result;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinaryKind::Add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinaryKind::Sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, BinaryKind::Mul); }

inline Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
    Tensor result(x.shape(), std::move(out));
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node_shared();
        auto* rn = result.node();
        result.record({xn}, [xn, rn, c]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.size(); ++i) xn->grad[i] += c * rn->grad[i];
        });
    }
    return result;
}

// ---------------------------------------------------------------------------
// Matrix product, ReLU, softmax, cross-entropy, reductions, reshaping.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw std::invalid_argument("matmul: expected rank-2 tensors, got " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));

    const double* A = a.data().data();
    const double* B = b.data().data();
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* brow = B + static_cast<std::size_t>(p) * n;
            double* orow = out.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }

    Tensor result(Shape{m, n}, std::move(out));
    if (grad_enabled() && detail::any_requires_grad({&a, &b})) {
        auto an = a.node_shared();
        auto bn = b.node_shared();
        auto* rn = result.node();
        result.record({an, bn}, [an, bn, rn, m, k, n]() {
            const auto& g = rn->grad;
            if (an->requires_grad) {
                an->ensure_grad();
                // dA = g . B^T
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += g[i * n + j] * bn->data[p * n + j];
                        an->grad[i * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                // dB = A^T . g
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i) acc += an->data[i * k + p] * g[i * n + j];
                        bn->grad[p * n + j] += acc;
                    }
            }
        });
    }
    return result;
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    Tensor result(x.shape(), std::move(out));
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node_shared();
        auto* rn = result.node();
        result.record({xn}, [xn, rn]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.size(); ++i)
                if (rn->data[i] > 0.0) xn->grad[i] += rn->grad[i];
        });
    }
    return result;
}

namespace detail {

// Splits a shape at `axis` into (outer, extent, inner) spans for strided
// iteration over 1-D fibers.
struct AxisSpans {
    std::size_t outer, extent, inner;
};

inline AxisSpans axis_spans(const Shape& s, int axis) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_str(s));
    AxisSpans sp{1, static_cast<std::size_t>(s[axis]), 1};
    for (int i = 0; i < axis; ++i) sp.outer *= static_cast<std::size_t>(s[i]);
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i)
        sp.inner *= static_cast<std::size_t>(s[i]);
    return sp;
}

} // namespace detail

/// Numerically stable softmax along `axis` (max subtraction).
inline Tensor softmax(const Tensor& x, int axis) {
    const auto sp = detail::axis_spans(x.shape(), axis);
    std::vector<double> out(x.data().size());
    const auto& xd = x.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.extent * sp.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t e = 0; e < sp.extent; ++e)
                mx = std::max(mx, xd[base + e * sp.inner]);
            double denom = 0.0;
            for (std::size_t e = 0; e < sp.extent; ++e) {
                const double v = std::exp(xd[base + e * sp.inner] - mx);
                out[base + e * sp.inner] = v;
                denom += v;
            }
            for (std::size_t e = 0; e < sp.extent; ++e) out[base + e * sp.inner] /= denom;
        }
    }
    Tensor result(x.shape(), std::move(out));
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node_shared();
        auto* rn = result.node();
        result.record({xn}, [xn, rn, sp]() {
            xn->ensure_grad();
            const auto& y = rn->data;
            const auto& g = rn->grad;
            for (std::size_t o = 0; o < sp.outer; ++o) {
                for (std::size_t in = 0; in < sp.inner; ++in) {
                    const std::size_t base = o * sp.extent * sp.inner + in;
                    double dot = 0.0;
                    for (std::size_t e = 0; e < sp.extent; ++e) {
                        const std::size_t i = base + e * sp.inner;
                        dot += g[i] * y[i];
                    }
                    for (std::size_t e = 0; e < sp.extent; ++e) {
                        const std::size_t i = base + e * sp.inner;
                        xn->grad[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        });
    }
    return result;
}

/// Mean over the batch of -log softmax(logits)[label]. Labels are class
/// indices in [0, classes).
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.ndim() != 2)
        throw std::invalid_argument("cross_entropy: logits must be [batch, classes], got " +
                                    shape_str(logits.shape()));
    const int batch = logits.dim(0), classes = logits.dim(1);
    if (static_cast<int>(labels.size()) != batch)
        throw std::invalid_argument("cross_entropy: label count " + std::to_string(labels.size()) +
                                    " != batch " + std::to_string(batch));
    for (int b = 0; b < batch; ++b) {
        if (labels[b] < 0 || labels[b] >= classes)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[b]) +
                                        " out of range [0, " + std::to_string(classes) + ")");
    }

    const auto& ld = logits.data();
    auto probs = std::make_shared<std::vector<double>>(ld.size());
    double loss = 0.0;
    for (int b = 0; b < batch; ++b) {
        const double* row = ld.data() + static_cast<std::size_t>(b) * classes;
        double mx = row[0];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (int c = 0; c < classes; ++c) {
            const double v = std::exp(row[c] - mx);
            (*probs)[b * classes + c] = v;
            denom += v;
        }
        for (int c = 0; c < classes; ++c) (*probs)[b * classes + c] /= denom;
        loss += std::log(denom) + mx - row[labels[b]];
    }
    loss /= batch;

    Tensor result = Tensor::scalar(loss);
    if (grad_enabled() && logits.requires_grad()) {
        auto ln = logits.node_shared();
        auto* rn = result.node();
        result.record({ln}, [ln, rn, probs, labels, batch, classes]() {
            ln->ensure_grad();
            const double g = rn->grad[0];
            for (int b = 0; b < batch; ++b) {
                for (int c = 0; c < classes; ++c) {
                    const double onehot = (c == labels[b]) ? 1.0 : 0.0;
                    ln->grad[b * classes + c] += g * ((*probs)[b * classes + c] - onehot) / batch;
                }
            }
        });
    }
    return result;
}

/// Sum of all elements, as a scalar tensor.
inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor result = Tensor::scalar(s);
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node_shared();
        auto* rn = result.node();
        result.record({xn}, [xn, rn]() {
            xn->ensure_grad();
            const double g = rn->grad[0];
            for (auto& gi : xn->grad) gi += g;
        });
    }
    return result;
}

/// Mean over the given axes (deduplicated, ascending). keepdims keeps the
/// reduced axes as size-1 dimensions.
inline Tensor mean_axes(const Tensor& x, std::vector<int> axes, bool keepdims) {
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (int a : axes)
        if (a < 0 || a >= x.ndim())
            throw std::invalid_argument("mean_axes: axis " + std::to_string(a) +
                                        " out of range for " + shape_str(x.shape()));

    Shape reduced = x.shape();
    std::size_t count = 1;
    std::vector<bool> is_reduced(x.shape().size(), false);
    for (int a : axes) {
        is_reduced[a] = true;
        count *= static_cast<std::size_t>(reduced[a]);
        reduced[a] = 1;
    }

    // Strides into the reduced (keepdims) output for each input position.
    std::vector<std::size_t> out_strides(x.ndim(), 0);
    {
        std::size_t run = 1;
        for (int i = x.ndim() - 1; i >= 0; --i) {
            out_strides[i] = is_reduced[i] ? 0 : run;
            run *= static_cast<std::size_t>(reduced[i]);
        }
    }

    std::vector<double> out(shape_numel(reduced), 0.0);
    const auto& xd = x.data();
    {
        std::vector<int> idx(x.ndim(), 0);
        std::size_t io = 0;
        for (std::size_t ix = 0; ix < xd.size(); ++ix) {
            out[io] += xd[ix];
            for (int d = x.ndim() - 1; d >= 0; --d) {
                ++idx[d];
                io += out_strides[d];
                if (idx[d] < x.shape()[d]) break;
                idx[d] = 0;
                io -= out_strides[d] * static_cast<std::size_t>(x.shape()[d]);
            }
        }
    }
    for (auto& v : out) v /= static_cast<double>(count);

    Shape final_shape;
    if (keepdims) {
        final_shape = reduced;
    } else {
        for (int i = 0; i < x.ndim(); ++i)
            if (!is_reduced[i]) final_shape.push_back(x.shape()[i]);
        if (final_shape.empty()) final_shape.push_back(1);
    }

    Tensor result(final_shape, std::move(out));
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node_shared();
        auto* rn = result.node();
        const auto xshape = x.shape();
        result.record({xn}, [xn, rn, out_strides, xshape, count]() {
            xn->ensure_grad();
            const auto& g = rn->grad;
            std::vector<int> idx(xshape.size(), 0);
            std::size_t io = 0;
            const double inv = 1.0 / static_cast<double>(count);
            for (std::size_t ix = 0; ix < xn->grad.size(); ++ix) {
                xn->grad[ix] += g[io] * inv;
                for (int d = static_cast<int>(xshape.size()) - 1; d >= 0; --d) {
                    ++idx[d];
                    io += out_strides[d];
                    if (idx[d] < xshape[d]) break;
                    idx[d] = 0;
                    io -= out_strides[d] * static_cast<std::size_t>(xshape[d]);
                }
            }
        });
    }
    return result;
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(new_shape));
    Tensor result(std::move(new_shape), x.data());
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node_shared();
        auto* rn = result.node();
        result.record({xn}, [xn, rn]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < rn->grad.size(); ++i) xn->grad[i] += rn->grad[i];
        });
    }
    return result;
}

/// Concatenation along `axis`; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no tensors given");
    const Shape& first = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(first.size()))
        throw std::invalid_argument("concat: axis out of range");
    Shape out_shape = first;
    int total = 0;
    for (const Tensor& t : parts) {
        if (t.ndim() != static_cast<int>(first.size()))
            throw std::invalid_argument("concat: rank mismatch");
        for (int d = 0; d < t.ndim(); ++d) {
            if (d != axis && t.shape()[d] != first[d])
                throw std::invalid_argument("concat: shape mismatch at axis " + std::to_string(d) +
                                            ": " + shape_str(t.shape()) + " vs " + shape_str(first));
        }
        total += t.shape()[axis];
    }
    out_shape[axis] = total;

    const auto osp = detail::axis_spans(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0; // start position along axis
    for (const Tensor& t : parts) {
        const std::size_t ext = static_cast<std::size_t>(t.shape()[axis]);
        const auto& td = t.data();
        for (std::size_t o = 0; o < osp.outer; ++o) {
            const double* src = td.data() + o * ext * osp.inner;
            double* dst = out.data() + (o * osp.extent + offset) * osp.inner;
            std::copy(src, src + ext * osp.inner, dst);
        }
        offset += ext;
    }

    Tensor result(out_shape, std::move(out));
    bool needs = false;
    for (const Tensor& t : parts) needs = needs || t.requires_grad();
    if (grad_enabled() && needs) {
        std::vector<std::shared_ptr<detail::TensorNode>> pn;
        std::vector<std::size_t> extents;
        pn.reserve(parts.size());
        for (const Tensor& t : parts) {
            pn.push_back(t.node_shared());
            extents.push_back(static_cast<std::size_t>(t.shape()[axis]));
        }
        auto* rn = result.node();
        result.record({pn.begin(), pn.end()}, [pn, extents, rn, osp]() {
            const auto& g = rn->grad;
            std::size_t offset = 0;
            for (std::size_t pi = 0; pi < pn.size(); ++pi) {
                auto& p = pn[pi];
                const std::size_t ext = extents[pi];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t o = 0; o < osp.outer; ++o) {
                        const double* src = g.data() + (o * osp.extent + offset) * osp.inner;
                        double* dst = p->grad.data() + o * ext * osp.inner;
                        for (std::size_t i = 0; i < ext * osp.inner; ++i) dst[i] += src[i];
                    }
                }
                offset += ext;
            }
        });
    }
    return result;
}

/// sum_i weights[i] * items[i]. All items share one shape; weights is a
/// vector of length items.size(). Gradients flow to items and weights.
inline Tensor weighted_sum(const std::vector<Tensor>& items, const Tensor& weights) {
    if (items.empty()) throw std::invalid_argument("weighted_sum: no items");
    if (weights.numel() != items.size())
        throw std::invalid_argument("weighted_sum: weight count " + std::to_string(weights.numel()) +
                                    " != item count " + std::to_string(items.size()));
    const Shape& shape = items[0].shape();
    for (const Tensor& t : items) {
        if (t.shape() != shape)
            throw std::invalid_argument("weighted_sum: item shape " + shape_str(t.shape()) +
                                        " != " + shape_str(shape));
    }

    const std::size_t n = items[0].numel();
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < items.size(); ++k) {
        const double w = weights.data()[k];
        const auto& id = items[k].data();
        for (std::size_t i = 0; i < n; ++i) out[i] += w * id[i];
    }

    Tensor result(shape, std::move(out));
    bool needs = weights.requires_grad();
    for (const Tensor& t : items) needs = needs || t.requires_grad();
    if (grad_enabled() && needs) {
        std::vector<std::shared_ptr<detail::TensorNode>> pn;
        for (const Tensor& t : items) pn.push_back(t.node_shared());
        auto wn = weights.node_shared();
        auto parents = pn;
        parents.push_back(wn);
        auto* rn = result.node();
        result.record(std::move(parents), [pn, wn, rn, n]() {
            const auto& g = rn->grad;
            for (std::size_t k = 0; k < pn.size(); ++k) {
                if (pn[k]->requires_grad) {
                    pn[k]->ensure_grad();
                    const double w = wn->data[k];
                    auto& gd = pn[k]->grad;
                    for (std::size_t i = 0; i < n; ++i) gd[i] += w * g[i];
                }
            }
            if (wn->requires_grad) {
                wn->ensure_grad();
                for (std::size_t k = 0; k < pn.size(); ++k) {
                    double acc = 0.0;
                    const auto& id = pn[k]->data;
                    for (std::size_t i = 0; i < n; ++i) acc += g[i] * id[i];
                    wn->grad[k] += acc;
                }
            }
        });
    }
    return result;
}

/// Shifts a [B,C,H,W] tensor by (dh, dw) source offset with zero fill:
/// out[h][w] = x[h+dh][w+dw] where in range.
inline Tensor shift2d(const Tensor& x, int dh, int dw) {
    if (x.ndim() != 4) throw std::invalid_argument("shift2d: expected [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<double> out(x.numel(), 0.0);
    const auto& xd = x.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const std::size_t plane = (static_cast<std::size_t>(b) * C + c) * H * W;
            for (int h = 0; h < H; ++h) {
                const int sh = h + dh;
                if (sh < 0 || sh >= H) continue;
                for (int w = 0; w < W; ++w) {
                    const int sw = w + dw;
                    if (sw < 0 || sw >= W) continue;
                    out[plane + h * W + w] = xd[plane + sh * W + sw];
                }
            }
        }
    Tensor result(x.shape(), std::move(out));
    if (grad_enabled() && x.requires_grad()) {
        auto xn = x.node_shared();
        auto* rn = result.node();
        result.record({xn}, [xn, rn, B, C, H, W, dh, dw]() {
            xn->ensure_grad();
            const auto& g = rn->grad;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const std::size_t plane = (static_cast<std::size_t>(b) * C + c) * H * W;
                    for (int h = 0; h < H; ++h) {
                        const int sh = h + dh;
                        if (sh < 0 || sh >= H) continue;
                        for (int w = 0; w < W; ++w) {
                            const int sw = w + dw;
                            if (sw < 0 || sw >= W) continue;
                            xn->grad[plane + sh * W + sw] += g[plane + h * W + w];
                        }
                    }
                }
        });
    }
    return result;
}

} // namespace nascell
